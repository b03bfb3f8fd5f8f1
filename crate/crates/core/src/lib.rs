//! Baselines and evaluation harness for knowledge access in task-oriented
//! dialogue: knowledge-seeking turn detection, knowledge selection and
//! knowledge-grounded response production.

pub mod corpus;
pub mod detection;
pub mod error;
pub mod generation;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod text;

pub use error::{Error, Result};
