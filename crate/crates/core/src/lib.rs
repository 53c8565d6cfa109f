//! Guided semi-supervised non-negative matrix factorization.
//!
//! Classical NMF, SSNMF (label supervision), Guided NMF (seed-word
//! supervision) and their combination GSSNMF share one objective and one
//! multiplicative-update solver in [`factorization`]. The remaining modules
//! turn raw text into a tf-idf corpus, build the supervision matrices and
//! score fitted models.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod factorization;
pub mod linalg;
pub mod supervision;
pub mod synthetic;
pub mod textpipe;

pub use error::{Error, Result};
pub use linalg::Matrix;
