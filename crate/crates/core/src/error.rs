use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("problem failed validation: {}", summarize(.0))]
    Invalid(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("relaxed value {value} of binary column {col} lies outside [-eps, 1 + eps]")]
    RelaxedOutOfRange { col: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(
        "proximal ADMM gate violated: beta = {beta} must exceed rho * (N / (2 - gamma) - 1) = {bound} for N = {agents}"
    )]
    ConvergenceGate {
        beta: f64,
        bound: f64,
        agents: usize,
    },

    #[error("binary budget exceeded: {count} binaries > budget {budget}")]
    BudgetExceeded { count: usize, budget: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("nothing to plot: {0}")]
    EmptyPlot(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn summarize(violations: &[Violation]) -> String {
    let mut out = violations
        .iter()
        .take(5)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    if violations.len() > 5 {
        out.push_str(&format!("; ... ({} more)", violations.len() - 5));
    }
    out
}
