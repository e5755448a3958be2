pub mod admm;
pub mod error;
pub mod intersection;
pub mod model;
pub mod oracle;
pub mod plot;
pub mod qp;
pub mod report;
pub mod sim;
pub mod tighten;

pub use error::{Error, Result};
