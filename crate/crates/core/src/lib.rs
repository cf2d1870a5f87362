//! Actor-critic data re-selection for fine-tuning a pre-trained translation
//! model: features, agent, environment, round driver, baselines and metrics.

pub mod agent;
pub mod baselines;
pub mod corpus;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod learner;
pub mod neural;

pub use error::{Error, Result};
