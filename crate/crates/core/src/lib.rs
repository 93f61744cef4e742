//! Seamlessness scoring between a policy model and a reward model.
//!
//! The crate measures, per RL training sample, how strongly the reward model
//! over-scores responses that the policy model would plausibly produce, and
//! uses that score to filter RL data and pick augmentation targets. A small
//! synthetic RLHF laboratory ([`lab`]) exercises the whole loop end to end.
//!
//! Module map:
//! - [`corpus`]: records, tokenizer, JSONL ingestion, splits
//! - [`models`]: policy / reward / embedding backends (toy and remote)
//! - [`samplers`]: probe-set constructors (contrast, degrade, adversarial)
//! - [`seam`]: misjudgment, normalized likelihood, the score engine
//! - [`pipeline`]: filtering, augmentation targets, overlap rate
//! - [`lab`]: synthetic worlds, RL improvement, quality metrics, sweeps

pub mod corpus;
pub mod error;
pub mod lab;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod samplers;
pub mod seam;
pub mod util;

pub use error::{Result, SeamError};
