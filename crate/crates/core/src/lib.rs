pub mod coxph;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod gof;
pub mod math;
pub mod nonparam;
pub mod optim;
pub mod par;
pub mod parametric;
pub mod report;
pub mod sample;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};
