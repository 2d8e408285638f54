//! Length-controlled summarization over chat-completion backends.
//!
//! The crate is organised bottom-up:
//!
//! - [`measures`]: counting words, characters, tokens, sentences and bullet points
//! - [`prompting`]: rendering the initial, prefilled and revision prompts
//! - [`backend`]: the generation interface, an HTTP client and mock backends
//! - [`calibration`]: conversion factors and the target-adjustment cubic
//! - [`strategy`]: baseline, approximation, adjustment, filtering and revision pipelines
//! - [`metrics`]: EM, LC, LD, CR and ROUGE
//! - [`harness`]: dataset ingestion, truncation and resumable sweeps

pub mod measures;
pub mod prompting;
pub mod numeric;
pub mod backend;
pub mod calibration;
pub mod strategy;
pub mod metrics;
pub mod harness;
