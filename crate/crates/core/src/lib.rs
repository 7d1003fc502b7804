//! Persona-conditioned offensiveness evaluation harness.
//!
//! Pipeline: [`corpus`] → [`personas`] (prompt rendering) → [`backends`]
//! (sampling / token probabilities) → [`stats`] (estimates, Wald intervals,
//! exclusion) → [`analysis`] (label matrices, correlations, CLC/IGD) →
//! [`cli`] (runs and reports).

pub mod analysis;
pub mod backends;
pub mod cli;
pub mod corpus;
pub mod personas;
pub mod stats;

pub use backends::{BackendConfig, Mode, ProbPair, SampleSet};
pub use corpus::{Corpus, Language, TweetRecord};
pub use personas::{Condition, PersonaProfile, PoliticalGroup, PromptInstance, PromptKey};
pub use stats::{CiConfig, EstimateRecord, EstimateStatus};
