//! Dense retrieval with re-ranker relevance feedback.
//!
//! A query is retrieved against an exact [`DenseIndex`], its candidates are
//! scored by a [`RerankerScorer`], and the re-ranker's score distribution is
//! distilled into the query vector by gradient descent on a KL loss before
//! a second retrieval. See [`feedback`] for the pipeline and [`eval`] for
//! the TREC-style metrics used to judge it.

pub mod error;
pub mod eval;
pub mod feedback;
pub mod index;
pub mod scorer;
pub mod synth;
pub mod vecmath;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, Metric, Qrels, Run};
pub use feedback::{
    batch_feedback, distill, run_feedback, BatchOptions, BatchOutput, DistillTimings,
    FeedbackConfig, FeedbackOutcome, FeedbackTrace, RunKind,
};
pub use index::{Candidate, CandidateSet, DenseIndex, EmbeddingRecord};
pub use scorer::{FileScorer, MissingPolicy, OracleScorer, RerankerScorer, ScoreTable};
pub use synth::{SynthDataset, SynthSpec};
pub use vecmath::ScoreDistribution;
