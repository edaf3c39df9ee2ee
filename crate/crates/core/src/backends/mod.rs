//! LLM and embedding providers.
//!
//! Every model call in the engine goes through [`ChatBackend`] or
//! [`Embedder`]. Requests carry a [`Purpose`] so a [`RoutedChat`] can send,
//! say, consolidation to a hosted model and planning to the mock.

mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tmt::Level;

pub use http::{HttpBackend, HttpSettings};
pub use mock::{fnv1a_64, MockChat, MockEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    ConsolidateL1,
    ConsolidateL2,
    ConsolidateL3,
    ConsolidateL4,
    ConsolidateL5,
    Plan,
    Gate,
}

impl Purpose {
    pub fn consolidate(level: Level) -> Purpose {
        match level {
            Level::Segment => Purpose::ConsolidateL1,
            Level::Session => Purpose::ConsolidateL2,
            Level::Day => Purpose::ConsolidateL3,
            Level::Week => Purpose::ConsolidateL4,
            Level::Profile => Purpose::ConsolidateL5,
        }
    }

    pub fn consolidation_level(self) -> Option<Level> {
        match self {
            Purpose::ConsolidateL1 => Some(Level::Segment),
            Purpose::ConsolidateL2 => Some(Level::Session),
            Purpose::ConsolidateL3 => Some(Level::Day),
            Purpose::ConsolidateL4 => Some(Level::Week),
            Purpose::ConsolidateL5 => Some(Level::Profile),
            Purpose::Plan | Purpose::Gate => None,
        }
    }

    pub fn parse(text: &str) -> Option<Purpose> {
        Some(match text {
            "consolidate_l1" => Purpose::ConsolidateL1,
            "consolidate_l2" => Purpose::ConsolidateL2,
            "consolidate_l3" => Purpose::ConsolidateL3,
            "consolidate_l4" => Purpose::ConsolidateL4,
            "consolidate_l5" => Purpose::ConsolidateL5,
            "plan" => Purpose::Plan,
            "gate" => Purpose::Gate,
            _ => return None,
        })
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Purpose::ConsolidateL1 => "consolidate_l1",
            Purpose::ConsolidateL2 => "consolidate_l2",
            Purpose::ConsolidateL3 => "consolidate_l3",
            Purpose::ConsolidateL4 => "consolidate_l4",
            Purpose::ConsolidateL5 => "consolidate_l5",
            Purpose::Plan => "plan",
            Purpose::Gate => "gate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output: u32,
    pub purpose: Purpose,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("provider error: {0}")]
    ProviderError(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`; an all-zero vector has no direction and is refused.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self, BackendError> {
        let norm = crate::tmt::l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(BackendError::ProviderError("embedding has no direction".into()));
        }
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

/// Dispatches each request by purpose, falling back to a default backend.
pub struct RoutedChat {
    default: Arc<dyn ChatBackend>,
    routes: HashMap<Purpose, Arc<dyn ChatBackend>>,
}

impl RoutedChat {
    pub fn new(default: Arc<dyn ChatBackend>) -> Self {
        Self {
            default,
            routes: HashMap::new(),
        }
    }

    pub fn route(mut self, purpose: Purpose, backend: Arc<dyn ChatBackend>) -> Self {
        self.routes.insert(purpose, backend);
        self
    }
}

impl ChatBackend for RoutedChat {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.routes
            .get(&req.purpose)
            .unwrap_or(&self.default)
            .chat_complete(req)
    }
}
