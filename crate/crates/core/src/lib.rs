//! Adaptive group testing with untrusted distributional advice.

pub mod advice;
pub mod error;
pub mod gbs;
pub mod gmm;
pub mod harness;
pub mod la;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod scheme;
pub mod v2g;

pub use error::{Error, Result};
