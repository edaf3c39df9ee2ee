//! Rule-based stand-ins for the LLM and the embedding model.
//!
//! Outputs depend only on the prompt text, so test runs are reproducible
//! without network access.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use super::{BackendError, ChatBackend, ChatRequest, Embedder, EmbeddingVector, Purpose};
use crate::indexing::tokenize;
use crate::prompts::PromptSet;
use crate::recall::Complexity;
use crate::text::{content_tokens, sentences, top_keywords};

/// First- and second-person words removed when turning dialog into narration.
const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "myself",
    "we",
    "us",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "i'm",
    "i've",
    "i'll",
    "i'd",
    "we're",
    "we've",
    "we'll",
    "we'd",
    "you're",
    "you've",
    "you'll",
    "you'd",
];

/// Sentences kept per merged memory.
const MAX_SENTENCES: usize = 12;

const EMPTY_MEMORY: &str = "Brief exchange without new facts.";

pub struct MockChat {
    prompts: PromptSet,
}

impl Default for MockChat {
    fn default() -> Self {
        Self::new(PromptSet::default())
    }
}

impl MockChat {
    /// The mock reads placeholder values back out of prompts, so it needs the
    /// same templates the engine renders with.
    pub fn new(prompts: PromptSet) -> Self {
        Self { prompts }
    }

    pub fn dispatch(&self, req: &ChatRequest) -> String {
        match req.purpose {
            Purpose::Plan => self.plan(&req.prompt),
            Purpose::Gate => self.gate(&req.prompt),
            other => {
                let level = other.consolidation_level().expect("consolidation purpose");
                self.consolidate(level, &req.prompt)
            }
        }
    }

    fn consolidate(&self, level: crate::tmt::Level, prompt: &str) -> String {
        let template = self.prompts.consolidation(level);
        let values = template.extract(prompt);
        let groups: Vec<Vec<String>> = if level == crate::tmt::Level::Segment {
            let dialogue = values
                .as_ref()
                .and_then(|v| v.get("new_dialogue").cloned())
                .unwrap_or_else(|| prompt.to_string());
            vec![dialogue.lines().map(strip_speaker).flat_map(sentences).collect()]
        } else {
            let children = values
                .as_ref()
                .and_then(|v| v.get("children").cloned())
                .unwrap_or_else(|| prompt.to_string());
            children
                .lines()
                .map(strip_numbering)
                .filter(|line| !line.is_empty())
                .map(sentences)
                .collect()
        };
        merge_narration(&groups)
    }

    fn plan(&self, prompt: &str) -> String {
        let question = self
            .prompts
            .plan
            .extract(prompt)
            .and_then(|mut v| v.remove("question"))
            .unwrap_or_else(|| prompt.to_string());
        #[derive(Serialize)]
        struct Plan {
            complexity: u8,
            keywords: Vec<String>,
        }
        let plan = Plan {
            complexity: classify_question(&question).code(),
            keywords: top_keywords(&question, 3, true),
        };
        serde_json::to_string(&plan).expect("plain struct")
    }

    fn gate(&self, prompt: &str) -> String {
        let matched = [Complexity::Simple, Complexity::Hybrid, Complexity::Complex]
            .into_iter()
            .find_map(|c| self.prompts.gate(c).extract(prompt).map(|v| (c, v)));
        let mut keep = Vec::new();
        if let Some((complexity, values)) = matched {
            let keywords = content_tokens(&values["question"]);
            let cap = gate_cap(complexity);
            for line in values["numbered_memories"].lines() {
                let Some(caps) = numbered_line().captures(line) else {
                    continue;
                };
                let overlaps = tokenize(&caps[2]).iter().any(|t| keywords.contains(t));
                if overlaps && keep.len() < cap {
                    keep.push(caps[1].parse::<usize>().expect("digits"));
                }
            }
        }
        #[derive(Serialize)]
        struct Gate {
            relevant_ids: Vec<usize>,
        }
        serde_json::to_string(&Gate { relevant_ids: keep }).expect("plain struct")
    }
}

impl ChatBackend for MockChat {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        Ok(self.dispatch(req))
    }
}

pub fn gate_cap(complexity: Complexity) -> usize {
    match complexity {
        Complexity::Simple => 8,
        Complexity::Hybrid => 15,
        Complexity::Complex => 25,
    }
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\.\s+(?:\[[^\]]*\]\s*)?(.*)$").expect("valid regex"))
}

/// Planner rule table: preference, modal and hypothetical questions are
/// complex; enumerations are hybrid; everything else is a simple fact lookup.
pub fn classify_question(question: &str) -> Complexity {
    static RULES: OnceLock<(Vec<Regex>, Vec<Regex>)> = OnceLock::new();
    let (complex, hybrid) = RULES.get_or_init(|| {
        let build = |patterns: &[&str]| {
            patterns
                .iter()
                .map(|p| Regex::new(&format!("(?i){p}")).expect("valid regex"))
                .collect::<Vec<_>>()
        };
        (
            build(&[
                r"^\s*(would|might|could|should)\b",
                r"^\s*is\s+\w+\s+(a|an|more|likely)\b",
                r"\b(enjoy|enjoys|prefer|prefers|preference|preferences|favorite|favourite|interested|personality|extroverted|introverted|suitable|likely|values|prioritize|prioritise|recommend|habits?)\b",
            ]),
            build(&[
                r"\b(activities|topics|things|places|events|hobbies|books|items|kinds|types)\b",
                r"\bhow\s+many\b",
                r"\b(list|all)\b",
                r"^\s*where\s+has\b",
                r"\bhas\s+\w+\s+(been|done|visited|tried)\b",
            ]),
        )
    });
    if complex.iter().any(|re| re.is_match(question)) {
        Complexity::Complex
    } else if hybrid.iter().any(|re| re.is_match(question)) {
        Complexity::Hybrid
    } else {
        Complexity::Simple
    }
}

fn strip_speaker(line: &str) -> &str {
    for prefix in ["user:", "assistant:"] {
        if let Some(head) = line.get(..prefix.len()) {
            if head.eq_ignore_ascii_case(prefix) {
                return line[prefix.len()..].trim_start();
            }
        }
    }
    line
}

fn strip_numbering(line: &str) -> &str {
    let trimmed = line.trim();
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && trimmed[digits..].starts_with(". ") {
        trimmed[digits + 2..].trim_start()
    } else {
        trimmed
    }
}

fn is_pronoun(word: &str) -> bool {
    let bare: String = word
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
        .to_lowercase()
        .replace('’', "'");
    PRONOUNS.contains(&bare.as_str())
}

/// Removes first/second-person words and re-capitalizes the sentence.
fn narrate(sentence: &str) -> Option<String> {
    let kept: Vec<&str> = sentence.split_whitespace().filter(|w| !is_pronoun(w)).collect();
    let joined = kept.join(" ");
    if !joined.chars().any(|c| c.is_alphanumeric()) {
        return None;
    }
    let mut chars = joined.chars();
    let first = chars.next()?;
    let mut out: String = first.to_uppercase().collect();
    out.push_str(chars.as_str());
    if !out.ends_with(['.', '!', '?']) {
        out.push('.');
    }
    Some(out)
}

/// Round-robin over the groups' sentences so every child is represented
/// before any child contributes a second sentence.
fn merge_narration(groups: &[Vec<String>]) -> String {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let depth = groups.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for round in 0..depth {
        for group in groups {
            let Some(sentence) = group.get(round) else {
                continue;
            };
            if let Some(narrated) = narrate(sentence) {
                if seen.insert(narrated.clone()) {
                    out.push(narrated);
                    if out.len() == MAX_SENTENCES {
                        break 'outer;
                    }
                }
            }
        }
    }
    if out.is_empty() {
        EMPTY_MEMORY.to_string()
    } else {
        out.join(" ")
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in bytes {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Feature-hashing embedder: token counts in `hash(token) mod dimension`
/// buckets, L2-normalized. Text without tokens maps to the first basis vector.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a_64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let mut values = vec![0.0f32; self.dimension];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            values[0] = 1.0;
        }
        for token in tokens {
            values[self.bucket(&token)] += 1.0;
        }
        EmbeddingVector::normalized(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexing::cosine_similarity;
    use crate::tmt::Level;

    fn req(purpose: Purpose, prompt: String) -> ChatRequest {
        ChatRequest {
            prompt,
            temperature: 0.0,
            max_output: 512,
            purpose,
        }
    }

    fn plan_prompt(question: &str) -> String {
        PromptSet::default().plan.render(&[("question", question)])
    }

    #[test]
    fn planner_golden_outputs() {
        let mock = MockChat::default();
        assert_eq!(
            mock.dispatch(&req(Purpose::Plan, plan_prompt("When did X go to Paris?"))),
            r#"{"complexity":0,"keywords":["paris","go"]}"#
        );
        assert_eq!(
            mock.dispatch(&req(Purpose::Plan, plan_prompt("Would she enjoy hiking?"))),
            r#"{"complexity":2,"keywords":["hiking","enjoy"]}"#
        );
        assert_eq!(
            mock.dispatch(&req(Purpose::Plan, plan_prompt("Where does X work?"))),
            r#"{"complexity":0,"keywords":["work"]}"#
        );
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify_question("Where does X work?"), Complexity::Simple);
        assert_eq!(classify_question("Which meeting did X attend?"), Complexity::Simple);
        assert_eq!(
            classify_question("What activities did X participate in?"),
            Complexity::Hybrid
        );
        assert_eq!(classify_question("Where has X been?"), Complexity::Hybrid);
        assert_eq!(
            classify_question("Would X enjoy a beach vacation?"),
            Complexity::Complex
        );
        assert_eq!(classify_question("Is X an extroverted person?"), Complexity::Complex);
        assert_eq!(
            classify_question("Might X be interested in programming?"),
            Complexity::Complex
        );
    }

    #[test]
    fn same_prompt_same_output() {
        let mock = MockChat::default();
        let r = req(Purpose::Plan, plan_prompt("What topics did we discuss?"));
        assert_eq!(mock.dispatch(&r), mock.dispatch(&r));
    }

    #[test]
    fn consolidation_merges_children_in_third_person() {
        let prompts = PromptSet::default();
        let mock = MockChat::new(prompts.clone());
        let prompt = prompts.consolidation(Level::Session).render(&[
            ("history", "(none)"),
            (
                "children",
                "1. I visited Lisbon with Maria. We loved it.\n2. You said Tokyo was next for Kenji.",
            ),
        ]);
        let text = mock.dispatch(&req(Purpose::ConsolidateL2, prompt));
        assert_eq!(
            text,
            "Visited Lisbon with Maria. Said Tokyo was next for Kenji. Loved it."
        );
        for noun in ["Lisbon", "Maria", "Tokyo", "Kenji"] {
            assert!(text.contains(noun));
        }
    }

    #[test]
    fn segment_consolidation_reads_dialogue() {
        let prompts = PromptSet::default();
        let mock = MockChat::new(prompts.clone());
        let prompt = prompts.consolidation(Level::Segment).render(&[
            ("previous_summary", "None"),
            ("new_dialogue", "user: I adopted a cat named Miso!\nassistant: okay"),
        ]);
        assert_eq!(
            mock.dispatch(&req(Purpose::ConsolidateL1, prompt)),
            "Adopted a cat named Miso! Okay."
        );
        let empty = prompts
            .consolidation(Level::Segment)
            .render(&[("previous_summary", "None"), ("new_dialogue", "user: \nassistant: ")]);
        assert_eq!(mock.dispatch(&req(Purpose::ConsolidateL1, empty)), EMPTY_MEMORY);
    }

    fn gate_prompt(complexity: Complexity, question: &str, memories: &[&str]) -> String {
        let numbered: Vec<String> = memories
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{}. [2024-01-01T00:00:00Z .. 2024-01-01T00:00:00Z] {m}", i + 1))
            .collect();
        PromptSet::default().gate(complexity).render(&[
            ("question", question),
            ("total_count", &memories.len().to_string()),
            ("numbered_memories", &numbered.join("\n")),
        ])
    }

    #[test]
    fn gate_keeps_overlapping_candidates() {
        let mock = MockChat::default();
        let none = gate_prompt(Complexity::Simple, "When did X go to Paris?", &["Ate soup.", "Slept."]);
        assert_eq!(mock.dispatch(&req(Purpose::Gate, none)), r#"{"relevant_ids":[]}"#);

        let mut memories = vec!["Talked about the weather."; 20];
        for i in [2, 5, 9, 14, 19] {
            memories[i] = "Went to Paris in spring.";
        }
        let prompt = gate_prompt(Complexity::Simple, "When did X go to Paris?", &memories);
        assert_eq!(
            mock.dispatch(&req(Purpose::Gate, prompt)),
            r#"{"relevant_ids":[3,6,10,15,20]}"#
        );
    }

    #[test]
    fn gate_caps_by_complexity() {
        let mock = MockChat::default();
        let memories = vec!["Paris trip."; 30];
        for (c, cap) in [
            (Complexity::Simple, 8),
            (Complexity::Hybrid, 15),
            (Complexity::Complex, 25),
        ] {
            let out = mock.dispatch(&req(Purpose::Gate, gate_prompt(c, "Paris?", &memories)));
            let v: serde_json::Value = serde_json::from_str(&out).unwrap();
            assert_eq!(v["relevant_ids"].as_array().unwrap().len(), cap);
        }
    }

    #[test]
    fn embedder_contracts() {
        let e = MockEmbedder::new(1024);
        let a = e.embed_text("went to Paris").unwrap();
        assert!((cosine_similarity(a.values(), a.values()).unwrap() - 1.0).abs() < 1e-6);
        let empty = e.embed_text("").unwrap();
        assert_eq!(empty.values()[0], 1.0);
        assert!(empty.values()[1..].iter().all(|v| *v == 0.0));
        for text in ["", "x", "a b c d e f", "ünïcödé words"] {
            let v = e.embed_text(text).unwrap();
            assert!((crate::tmt::l2_norm(v.values()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn disjoint_buckets_give_orthogonal_embeddings() {
        let e = MockEmbedder::new(1024);
        // Independent oracle: FNV-1a 64 reference constants for "alpha".
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        let buckets: HashSet<usize> = ["alpha", "beta", "gamma", "delta"]
            .iter()
            .map(|t| e.bucket(t))
            .collect();
        assert_eq!(buckets.len(), 4, "bucket collision among test tokens");
        let u = e.embed_text("alpha beta").unwrap();
        let v = e.embed_text("gamma delta").unwrap();
        assert_eq!(cosine_similarity(u.values(), v.values()).unwrap(), 0.0);
    }
}
