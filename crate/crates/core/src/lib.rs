//! QE-guided repair of machine translation output.
//!
//! Two flows share one corpus format:
//!
//! - **select**: retranslate every segment with a set of backends, score every
//!   candidate (including the original hypothesis) with a quality-estimation
//!   scorer, and keep the best one.
//! - **correct**: blank out the error spans flagged by QE according to a
//!   severity/score policy and ask a model to fill the blanks.
//!
//! The [`metrics`] module computes the quality delta, edit rate, gain-to-edit
//! ratio, chrF++ and BLEU used to report on either flow.

pub mod backends;
pub mod cli;
pub mod corpus;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod scoring;

mod io;

pub use corpus::{Corpus, ErrorSpan, LanguagePair, LoadMode, Segment, Severity};
pub use masking::{MaskDecision, MaskPlan, MaskPolicy, MaskedHypothesis};
