//! Engine configuration: a flat key/value TOML document.
//!
//! Every tunable constant lives here with its default; nothing downstream
//! hardcodes a budget, weight or window size.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::HttpSettings;
use crate::indexing::Bm25Params;
use crate::recall::{Complexity, LevelBudget};
use crate::tmt::Level;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Weight of the semantic channel in leaf scoring.
    pub lambda: f64,
    /// Leaves activated per query.
    pub k1_budget: usize,
    /// Same-level history memories shown to each consolidation.
    pub history_window: usize,
    /// Dialog turns per level-1 segment. Only 1 is supported.
    pub segment_turns: usize,
    /// Hierarchy depth. Only 5 is supported.
    pub levels: usize,
    /// Profile consolidation period. Only "month" is supported.
    pub profile_period: String,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub embedding_dim: usize,
    pub consolidation_temperature: f64,
    pub consolidation_max_tokens: u32,
    /// Temperature for planner and gate calls.
    pub control_temperature: f64,
    pub control_max_tokens: u32,
    pub gating: bool,

    pub budget_simple_l1: usize,
    pub budget_simple_l2: usize,
    pub budget_simple_l5: usize,
    pub budget_hybrid_l1: usize,
    pub budget_hybrid_l2: usize,
    pub budget_hybrid_l3: usize,
    pub budget_hybrid_l5: usize,
    pub budget_complex_l1: usize,
    pub budget_complex_l2: usize,
    pub budget_complex_l3: usize,
    pub budget_complex_l4: usize,
    pub budget_complex_l5: usize,

    pub backend: BackendKind,
    /// Directory of prompt overrides; empty means built-in prompts only.
    pub prompt_dir: String,
    pub http_base_url: String,
    pub http_chat_path: String,
    pub http_embed_path: String,
    pub chat_model: String,
    pub embed_model: String,
    pub http_timeout_secs: u64,
    pub http_max_retries: u32,
    pub http_backoff_ms: u64,
    pub http_concurrency: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            k1_budget: 20,
            history_window: 3,
            segment_turns: 1,
            levels: 5,
            profile_period: "month".into(),
            bm25_k1: 1.2,
            bm25_b: 0.75,
            embedding_dim: 1024,
            consolidation_temperature: 0.7,
            consolidation_max_tokens: 1024,
            control_temperature: 0.0,
            control_max_tokens: 512,
            gating: true,
            budget_simple_l1: 20,
            budget_simple_l2: 4,
            budget_simple_l5: 1,
            budget_hybrid_l1: 20,
            budget_hybrid_l2: 4,
            budget_hybrid_l3: 2,
            budget_hybrid_l5: 1,
            budget_complex_l1: 20,
            budget_complex_l2: 8,
            budget_complex_l3: 4,
            budget_complex_l4: 2,
            budget_complex_l5: 1,
            backend: BackendKind::Mock,
            prompt_dir: String::new(),
            http_base_url: "http://127.0.0.1:8000".into(),
            http_chat_path: "/v1/chat/completions".into(),
            http_embed_path: "/v1/embeddings".into(),
            chat_model: String::new(),
            embed_model: String::new(),
            http_timeout_secs: 60,
            http_max_retries: 3,
            http_backoff_ms: 500,
            http_concurrency: 4,
        }
    }
}

/// The default configuration as shipped in `config/default.toml`.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return invalid(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.k1_budget == 0 {
            return invalid("k1_budget must be at least 1".into());
        }
        if self.segment_turns != 1 {
            return invalid(format!("segment_turns {} unsupported (only 1)", self.segment_turns));
        }
        if self.levels != 5 {
            return invalid(format!("levels {} unsupported (only 5)", self.levels));
        }
        if self.profile_period != "month" {
            return invalid(format!(
                "profile_period {:?} unsupported (only \"month\")",
                self.profile_period
            ));
        }
        if self.embedding_dim == 0 {
            return invalid("embedding_dim must be positive".into());
        }
        if self.consolidation_temperature < 0.0 || self.control_temperature < 0.0 {
            return invalid("temperatures must be non-negative".into());
        }
        self.bm25()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
        }
    }

    /// Per-level caps for a complexity; only the strategy's levels appear.
    pub fn budget(&self, complexity: Complexity) -> LevelBudget {
        use Level::*;
        let caps: Vec<(Level, usize)> = match complexity {
            Complexity::Simple => vec![
                (Segment, self.budget_simple_l1),
                (Session, self.budget_simple_l2),
                (Profile, self.budget_simple_l5),
            ],
            Complexity::Hybrid => vec![
                (Segment, self.budget_hybrid_l1),
                (Session, self.budget_hybrid_l2),
                (Day, self.budget_hybrid_l3),
                (Profile, self.budget_hybrid_l5),
            ],
            Complexity::Complex => vec![
                (Segment, self.budget_complex_l1),
                (Session, self.budget_complex_l2),
                (Day, self.budget_complex_l3),
                (Week, self.budget_complex_l4),
                (Profile, self.budget_complex_l5),
            ],
        };
        LevelBudget::new(caps)
    }

    pub fn prompt_dir(&self) -> Option<PathBuf> {
        (!self.prompt_dir.is_empty()).then(|| PathBuf::from(&self.prompt_dir))
    }

    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings {
            base_url: self.http_base_url.clone(),
            chat_path: self.http_chat_path.clone(),
            embed_path: self.http_embed_path.clone(),
            chat_model: self.chat_model.clone(),
            embed_model: self.embed_model.clone(),
            dimension: self.embedding_dim,
            timeout: Duration::from_secs(self.http_timeout_secs),
            max_retries: self.http_max_retries,
            backoff_base: Duration::from_millis(self.http_backoff_ms),
            max_in_flight: self.http_concurrency,
            ..HttpSettings::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_matches_code_default() {
        assert_eq!(Config::from_toml(DEFAULT_CONFIG_TOML).unwrap(), Config::default());
    }

    #[test]
    fn dump_round_trips() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("lambda = 0.5\n").unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.k1_budget, 20);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(Config::from_toml("lambda = 1.5").is_err());
        assert!(Config::from_toml("levels = 4").is_err());
        assert!(Config::from_toml("profile_period = \"week\"").is_err());
        assert!(Config::from_toml("segment_turns = 2").is_err());
        assert!(Config::from_toml("bm25_b = 2.0").is_err());
        assert!(Config::from_toml("typo_key = 1").is_err());
    }
}
