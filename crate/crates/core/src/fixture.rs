//! Seeded synthetic transcripts and questions.
//!
//! Each user's dialog mixes small talk with planted facts (trips, hobbies, a
//! pet, a job, a favourite dish). Questions are written against those facts,
//! so the turns that answer them are known exactly.

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::Question;
use crate::store::{turn_id, Speaker, TranscriptFile, TranscriptMessage, TranscriptSession};
use crate::time::from_unix;
use crate::tmt::Timestamp;

const USER_NAMES: &[&str] = &[
    "Alex", "Priya", "Mateo", "Hana", "Samir", "Lena", "Tomas", "Ines", "Kofi", "Jordan",
];
const FRIENDS: &[&str] = &["Maria", "Kenji", "Aisha", "Lucas", "Noor", "Elena", "Diego", "Yara"];
const CITIES: &[&str] = &[
    "Lisbon", "Tokyo", "Nairobi", "Montreal", "Oslo", "Seville", "Hanoi", "Lima", "Krakow", "Dublin",
];
const HOBBIES: &[&str] = &[
    "pottery",
    "climbing",
    "salsa",
    "chess",
    "kayaking",
    "watercolor",
    "baking",
    "archery",
];
const PETS: &[&str] = &["cat", "dog", "parrot", "rabbit"];
const PET_NAMES: &[&str] = &["Miso", "Biscuit", "Pepper", "Noodle", "Juniper", "Taco"];
const JOBS: &[&str] = &["nurse", "architect", "analyst", "teacher", "chef", "mechanic"];
const COMPANIES: &[&str] = &[
    "Northwind",
    "Bluefin Labs",
    "Harbor Clinic",
    "Greenleaf School",
    "Atlas Motors",
];
const FOODS: &[&str] = &["ramen", "paella", "curry", "tacos", "dumplings", "falafel"];
const WEATHER: &[&str] = &["rainy", "windy", "grey", "sunny", "freezing"];
const TOPICS: &[&str] = &["octopuses", "volcanoes", "bridges", "jazz", "glaciers", "typography"];

const SMALL_TALK: &[(&str, &str)] = &[
    (
        "The weather was {weather} today, so I mostly stayed in.",
        "Staying in can be restful.",
    ),
    (
        "I watched a documentary about {topic} last night.",
        "Documentaries are a nice way to unwind.",
    ),
    (
        "Work was busy, lots of meetings this afternoon.",
        "Busy days are draining. Take a break when you can.",
    ),
    (
        "I am thinking about reorganizing my bookshelf.",
        "A tidy shelf can feel refreshing.",
    ),
    (
        "I slept badly and feel a bit tired.",
        "Sorry to hear that. Maybe an early night helps.",
    ),
    ("Just checking in, nothing much happening.", "Thanks for checking in."),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FactKind {
    Trip,
    Hobby,
    Pet,
    Job,
    Food,
}

struct Fact {
    kind: FactKind,
    turn_id: String,
    user_text: String,
    assistant_text: String,
    question: Option<String>,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty pool")
}

fn plant<R: Rng>(rng: &mut R, kind: FactKind, name: &str, turn_id: String) -> Fact {
    let (user_text, assistant_text, question) = match kind {
        FactKind::Trip => {
            let city = pick(rng, CITIES);
            let friend = pick(rng, FRIENDS);
            (
                format!("I just got back from a trip to {city} with {friend}."),
                "That sounds like a great trip! What was the highlight?".to_string(),
                Some(format!("Where did {name} take a trip with {friend}?")),
            )
        }
        FactKind::Hobby => {
            let hobby = pick(rng, HOBBIES);
            (
                format!("I tried a new hobby this week: {hobby} classes at the community center."),
                format!("Trying {hobby} sounds fun. How did the first class go?"),
                Some(format!("When did {name} try {hobby} classes?")),
            )
        }
        FactKind::Pet => {
            let pet = pick(rng, PETS);
            let pet_name = pick(rng, PET_NAMES);
            (
                format!("We adopted a {pet} named {pet_name} from the shelter."),
                format!("Congratulations on adopting {pet_name}!"),
                Some(format!("What is the name of the {pet} {name} adopted?")),
            )
        }
        FactKind::Job => {
            let job = pick(rng, JOBS);
            let company = pick(rng, COMPANIES);
            (
                format!("I have a new job: I work as a {job} at {company} now."),
                "Congratulations on the new job!".to_string(),
                Some(format!("Where does {name} work?")),
            )
        }
        FactKind::Food => {
            let food = pick(rng, FOODS);
            (
                format!("My favorite dish lately is {food}; I cook it almost every weekend."),
                format!("Homemade {food} sounds delicious."),
                Some(format!("Would {name} enjoy a cooking class about {food}?")),
            )
        }
    };
    Fact {
        kind,
        turn_id,
        user_text,
        assistant_text,
        question,
    }
}

fn small_talk<R: Rng>(rng: &mut R) -> (String, String) {
    let (user, assistant) = SMALL_TALK.choose(rng).expect("non-empty");
    let user = user
        .replace("{weather}", pick(rng, WEATHER))
        .replace("{topic}", pick(rng, TOPICS));
    (user, assistant.to_string())
}

/// Splits `total` turns over `sessions` sessions, each getting at least one.
pub fn split_turns<R: Rng>(rng: &mut R, total: usize, sessions: usize) -> Vec<usize> {
    assert!(sessions >= 1 && total >= sessions, "need at least one turn per session");
    let mut counts = vec![1; sessions];
    for _ in 0..total - sessions {
        counts[rng.gen_range(0..sessions)] += 1;
    }
    counts
}

fn session_gap<R: Rng>(rng: &mut R) -> Duration {
    match rng.gen_range(0..10) {
        0..=3 => Duration::minutes(rng.gen_range(30..300)),
        4..=6 => Duration::hours(rng.gen_range(20..72)),
        7..=8 => Duration::days(rng.gen_range(5..12)),
        _ => Duration::days(rng.gen_range(25..40)),
    }
}

/// A generated user: transcript plus questions with known evidence.
pub struct GeneratedUser {
    pub transcript: TranscriptFile,
    pub questions: Vec<Question>,
}

/// Builds one user's dialog with the given per-session turn counts.
/// `fact_share` is the fraction of turns that plant a fact.
pub fn generate_user<R: Rng>(
    rng: &mut R,
    user_id: &str,
    name: &str,
    session_turns: &[usize],
    fact_share: f64,
) -> GeneratedUser {
    let total: usize = session_turns.iter().sum();
    let start_day = rng.gen_range(0..300);
    let start_secs = 1_704_067_200 + start_day * 86_400 + rng.gen_range(8 * 3600..21 * 3600);
    let mut clock: Timestamp = from_unix(start_secs).expect("in range");

    let n_facts = ((total as f64 * fact_share).round() as usize).min(total);
    let mut kinds = vec![
        FactKind::Trip,
        FactKind::Trip,
        FactKind::Hobby,
        FactKind::Hobby,
        FactKind::Pet,
        FactKind::Job,
        FactKind::Food,
    ];
    while kinds.len() < n_facts {
        kinds.push(
            *[FactKind::Trip, FactKind::Hobby, FactKind::Food]
                .choose(rng)
                .expect("non-empty"),
        );
    }
    kinds.truncate(n_facts);
    let mut slots: Vec<bool> = (0..total).map(|i| i < n_facts).collect();
    slots.shuffle(rng);
    kinds.shuffle(rng);
    let mut kinds = kinds.into_iter();

    let mut sessions = Vec::new();
    let mut facts = Vec::new();
    let mut global = 0;
    for (s, &count) in session_turns.iter().enumerate() {
        if s > 0 {
            clock += session_gap(rng);
        }
        let session_id = format!("{user_id}-s{:02}", s + 1);
        let start = clock;
        let mut turns = Vec::new();
        for n in 1..=count {
            if n > 1 {
                clock += Duration::seconds(rng.gen_range(60..900));
            }
            let id = turn_id(&session_id, n);
            let (user_text, assistant_text) = if slots[global] {
                let fact = plant(rng, kinds.next().expect("one kind per slot"), name, id);
                let texts = (fact.user_text.clone(), fact.assistant_text.clone());
                facts.push(fact);
                texts
            } else {
                small_talk(rng)
            };
            global += 1;
            turns.push(TranscriptMessage {
                speaker: Speaker::User,
                text: user_text,
                timestamp: clock,
            });
            clock += Duration::seconds(rng.gen_range(5..60));
            turns.push(TranscriptMessage {
                speaker: Speaker::Assistant,
                text: assistant_text,
                timestamp: clock,
            });
        }
        sessions.push(TranscriptSession {
            session_id,
            start_timestamp: start,
            turns,
        });
    }

    let asked_at = clock + Duration::hours(1);
    let mut questions: Vec<Question> = facts
        .iter()
        .filter_map(|f| {
            f.question.as_ref().map(|q| Question {
                question_id: String::new(),
                question: q.clone(),
                user_id: user_id.to_string(),
                timestamp: Some(asked_at),
                evidence_turn_ids: Some(vec![f.turn_id.clone()]),
            })
        })
        .collect();
    for (kind, text) in [
        (FactKind::Trip, format!("Which places has {name} visited on a trip?")),
        (FactKind::Hobby, format!("What hobby activities has {name} tried?")),
    ] {
        let evidence: Vec<String> = facts
            .iter()
            .filter(|f| f.kind == kind)
            .map(|f| f.turn_id.clone())
            .collect();
        if !evidence.is_empty() {
            questions.push(Question {
                question_id: String::new(),
                question: text,
                user_id: user_id.to_string(),
                timestamp: Some(asked_at),
                evidence_turn_ids: Some(evidence),
            });
        }
    }
    questions.push(Question {
        question_id: String::new(),
        question: format!("Is {name} an extroverted person?"),
        user_id: user_id.to_string(),
        timestamp: Some(asked_at),
        evidence_turn_ids: None,
    });

    GeneratedUser {
        transcript: TranscriptFile {
            user_id: user_id.to_string(),
            sessions,
        },
        questions,
    }
}

/// Transcripts and questions for several users.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub transcripts: Vec<TranscriptFile>,
    pub questions: Vec<Question>,
}

impl Fixture {
    pub fn turn_count(&self) -> usize {
        self.transcripts
            .iter()
            .map(|t| t.to_turns().map(|turns| turns.len()).unwrap_or(0))
            .sum()
    }
}

/// `users` users sharing `total_turns` evenly, 3 to 6 sessions each, and
/// `questions_per_user` questions each drawn from what was planted.
pub fn bench_fixture(seed: u64, users: usize, total_turns: usize, questions_per_user: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transcripts = Vec::new();
    let mut questions = Vec::new();
    for u in 0..users {
        let turns = total_turns / users + usize::from(u < total_turns % users);
        let sessions = rng.gen_range(3..=6).min(turns.max(1));
        let counts = split_turns(&mut rng, turns, sessions);
        let user_id = format!("user{}", u + 1);
        let name = USER_NAMES[u % USER_NAMES.len()];
        let generated = generate_user(&mut rng, &user_id, name, &counts, 0.35);
        let mut pool = generated.questions;
        // Keep the aggregate and preference questions; sample the rest.
        let (mut keep, mut rest): (Vec<Question>, Vec<Question>) = pool
            .drain(..)
            .partition(|q| q.evidence_turn_ids.as_ref().is_none_or(|e| e.len() > 1) || q.question.starts_with("Would"));
        rest.shuffle(&mut rng);
        keep.truncate(questions_per_user);
        let room = questions_per_user - keep.len();
        keep.extend(rest.into_iter().take(room));
        for (i, mut q) in keep.into_iter().enumerate() {
            q.question_id = format!("{user_id}-q{:02}", i + 1);
            questions.push(q);
        }
        transcripts.push(generated.transcript);
    }
    Fixture { transcripts, questions }
}

/// The benchmark fixture: 3 users, 120 turns, 30 questions.
pub fn standard_bench_fixture(seed: u64) -> Fixture {
    bench_fixture(seed, 3, 120, 10)
}

/// A single-user transcript with 3 to 12 sessions of 1 to 40 turns.
pub fn random_transcript(seed: u64, user_id: &str) -> TranscriptFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = rng.gen_range(3..=12);
    let counts: Vec<usize> = (0..sessions).map(|_| rng.gen_range(1..=40)).collect();
    generate_user(&mut rng, user_id, "Alex", &counts, 0.3).transcript
}

/// The checked-in ten-session fixture: 85 turns.
pub fn ten_session_transcript() -> TranscriptFile {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let counts = split_turns(&mut rng, 85, 10);
    generate_user(&mut rng, "demo", "Alex", &counts, 0.3).transcript
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts = split_turns(&mut rng, 85, 10);
        assert_eq!(counts.len(), 10);
        assert_eq!(counts.iter().sum::<usize>(), 85);
        assert!(counts.iter().all(|c| *c >= 1));
    }

    #[test]
    fn bench_fixture_shape() {
        let f = standard_bench_fixture(42);
        assert_eq!(f.transcripts.len(), 3);
        assert_eq!(f.turn_count(), 120);
        assert_eq!(f.questions.len(), 30);
        let turn_ids: std::collections::HashSet<String> = f
            .transcripts
            .iter()
            .flat_map(|t| t.to_turns().unwrap())
            .map(|t| t.turn_id)
            .collect();
        for q in &f.questions {
            for e in q.evidence_turn_ids.iter().flatten() {
                assert!(turn_ids.contains(e), "{e} missing");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(random_transcript(5, "u"), random_transcript(5, "u"));
        assert_ne!(random_transcript(5, "u"), random_transcript(6, "u"));
        assert_eq!(ten_session_transcript().to_turns().unwrap().len(), 85);
    }
}
