pub mod backends;
pub mod bench;
pub mod config;
pub mod consolidation;
pub mod engine;
pub mod fixture;
pub mod indexing;
pub mod manifold;
pub mod prompts;
pub mod recall;
pub mod store;
pub mod text;
pub mod time;
pub mod tmt;
