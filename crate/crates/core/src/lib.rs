//! Retrieval of in-context examples for aspect-based sentiment analysis.
//!
//! A dense retriever picks demonstrations for an instruction-following
//! scorer. The scorer labels which candidates help, the retriever learns from
//! those labels contrastively, and the two are trained in alternation.
//!
//! All numeric code is generic over [`Scalar`]; [`Scorer64`], [`Retriever64`]
//! and their `32` counterparts are the concrete instantiations.

pub mod alternating;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod optim;
pub mod retriever;
pub mod rng;
pub mod scalar;
pub mod scorer;
pub mod template;
pub mod vocab;

pub use alternating::{resume_schedule, run_schedule, ScheduleState, StepRecord};
pub use config::Config;
pub use corpus::{AspectLabel, Candidate, Dataset, Polarity, Sample, Split, Task};
pub use error::{Error, Result};
pub use eval::{AblationMode, Metrics, TrainedModels};
pub use retriever::{retrieve, CandidateIndex, Retriever};
pub use scalar::Scalar;
pub use scorer::{LogLikelihood, ReferenceScorer, Scorer, ScorerShape};
pub use template::InstructionTemplate;
pub use vocab::Vocabulary;

pub type Scorer64 = ReferenceScorer<f64>;
pub type Scorer32 = ReferenceScorer<f32>;
pub type Retriever64 = Retriever<f64>;
pub type Retriever32 = Retriever<f32>;
pub type Models64 = TrainedModels<f64>;
pub type Models32 = TrainedModels<f32>;
