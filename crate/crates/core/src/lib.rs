//! Sliding-window listwise reranking with LLM backends, plus the reward,
//! GRPO and data-synthesis tooling used to train such rerankers.
//!
//! The crate is organized by concern:
//!
//! * [`ranking`] – domain types and response parsing/repair
//! * [`window`] – window planning and the per-query rerank loop
//! * [`metrics`] – NDCG, Recall, RBO and the gated multi-view reward
//! * [`training`] – SFT loss and GRPO objective over token log-probs
//! * [`synthesis`] – teacher-labelled training lists and consistency filtering
//! * [`backend`] – chat-completion clients, mocks and the retrying gateway
//! * [`harness`] – file formats and the commands behind the `listrank` binary

pub mod backend;
pub mod harness;
pub mod error;
pub mod metrics;
pub mod prompt;
pub mod ranking;
pub mod training;
pub mod synthesis;
pub mod window;

mod util;

pub use error::{Error, Result};
