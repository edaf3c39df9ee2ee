//! Prompt templates with `{name}` placeholders.
//!
//! Only `{` followed by `[a-z_]+}` is a placeholder; any other brace is
//! literal text, so JSON examples inside a template need no escaping.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::recall::Complexity;
use crate::tmt::Level;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("reading prompt {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt {name} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let name_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if name_len > 0 && after[name_len..].starts_with('}') {
                literal.push_str(&rest[..open]);
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(after[..name_len].to_string()));
                rest = &after[name_len + 1..];
            } else {
                literal.push_str(&rest[..=open]);
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Self {
            source: source.to_string(),
            segments,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Unknown placeholders render empty.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.source.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) => {
                    if let Some((_, value)) = values.iter().find(|(k, _)| k == name) {
                        out.push_str(value);
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`render`](Self::render): recovers placeholder values from a
    /// rendered prompt, or `None` when the prompt was not made from this
    /// template. Values must not contain the literal text that follows them.
    pub fn extract(&self, rendered: &str) -> Option<HashMap<String, String>> {
        let mut values = HashMap::new();
        let mut pos = 0;
        let count = self.segments.len();
        let mut i = 0;
        while i < count {
            match &self.segments[i] {
                Segment::Literal(text) => {
                    if !rendered[pos..].starts_with(text.as_str()) {
                        return None;
                    }
                    pos += text.len();
                    i += 1;
                }
                Segment::Slot(name) => {
                    let value_end = match self.segments.get(i + 1) {
                        None => rendered.len(),
                        Some(Segment::Slot(_)) => return None,
                        Some(Segment::Literal(next)) => {
                            if i + 2 == count {
                                if !rendered[pos..].ends_with(next.as_str()) {
                                    return None;
                                }
                                rendered.len() - next.len()
                            } else {
                                pos + rendered[pos..].find(next.as_str())?
                            }
                        }
                    };
                    if value_end < pos {
                        return None;
                    }
                    values.insert(name.clone(), rendered[pos..value_end].to_string());
                    pos = value_end;
                    i += 1;
                }
            }
        }
        (pos == rendered.len()).then_some(values)
    }
}

/// Every prompt the engine sends, keyed by role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub consolidate: [Template; 5],
    pub plan: Template,
    pub gate_simple: Template,
    pub gate_hybrid: Template,
    pub gate_complex: Template,
}

const FILES: [(&str, &str); 9] = [
    ("consolidate_l1.txt", include_str!("../prompts/consolidate_l1.txt")),
    ("consolidate_l2.txt", include_str!("../prompts/consolidate_l2.txt")),
    ("consolidate_l3.txt", include_str!("../prompts/consolidate_l3.txt")),
    ("consolidate_l4.txt", include_str!("../prompts/consolidate_l4.txt")),
    ("consolidate_l5.txt", include_str!("../prompts/consolidate_l5.txt")),
    ("plan.txt", include_str!("../prompts/plan.txt")),
    ("gate_simple.txt", include_str!("../prompts/gate_simple.txt")),
    ("gate_hybrid.txt", include_str!("../prompts/gate_hybrid.txt")),
    ("gate_complex.txt", include_str!("../prompts/gate_complex.txt")),
];

fn required(file: &str) -> &'static [&'static str] {
    match file {
        "consolidate_l1.txt" => &["previous_summary", "new_dialogue"],
        "plan.txt" => &["question"],
        f if f.starts_with("gate_") => &["question", "total_count", "numbered_memories"],
        _ => &["history", "children"],
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_sources(FILES.map(|(_, src)| src.to_string()))
    }
}

impl PromptSet {
    fn from_sources(sources: [String; 9]) -> Self {
        let [l1, l2, l3, l4, l5, plan, simple, hybrid, complex] = sources.map(|s| Template::parse(&s));
        Self {
            consolidate: [l1, l2, l3, l4, l5],
            plan,
            gate_simple: simple,
            gate_hybrid: hybrid,
            gate_complex: complex,
        }
    }

    /// Built-in prompts, each replaced by the same-named file in `dir` when
    /// one exists.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut sources = FILES.map(|(_, src)| src.to_string());
        for (slot, (file, _)) in sources.iter_mut().zip(FILES) {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let template = Template::parse(&text);
            for placeholder in required(file) {
                if !template.placeholders().contains(placeholder) {
                    return Err(PromptError::MissingPlaceholder {
                        name: file.to_string(),
                        placeholder: placeholder.to_string(),
                    });
                }
            }
            *slot = text;
        }
        Ok(Self::from_sources(sources))
    }

    pub fn consolidation(&self, level: Level) -> &Template {
        &self.consolidate[level.value() as usize - 1]
    }

    pub fn gate(&self, complexity: Complexity) -> &Template {
        match complexity {
            Complexity::Simple => &self.gate_simple,
            Complexity::Hybrid => &self.gate_hybrid,
            Complexity::Complex => &self.gate_complex,
        }
    }
}
