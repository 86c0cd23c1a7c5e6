//! Incremental sparse Tucker tensor completion with side information.
//!
//! The model predicts tensor entries through per-mode side matrices coupled
//! to small learned factors, and is trained incrementally over a growing
//! tensor sequence: multi-aspect (all modes grow), pure streaming (one mode
//! grows) or batch. A nonnegative projected-gradient variant supports
//! interpretable clustering. See the README for the CLI.

pub mod config;
pub mod data;
pub mod driver;
pub mod error;
pub mod eval;
pub mod model;
pub mod optimizer;
pub mod reference;
pub mod streaming;
pub mod tensor;

pub use error::{Error, Result};
