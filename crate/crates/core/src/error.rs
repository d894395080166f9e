use std::path::PathBuf;

use thiserror::Error;

use crate::dynamics::{DynamicsState, Trajectory};
use crate::mission::{MissionLog, PowerReport};
use crate::topology::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("topology: member {member} references node {node}, which does not exist")]
    DanglingNode { member: usize, node: usize },

    #[error("topology: {} violation(s): {}", .0.len(), join_violations(.0))]
    InvalidTopology(Vec<Violation>),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("statics: unstable under load (best residual {residual:.3e} N, tolerance {tolerance:.3e} N)")]
    Unstable { residual: f64, tolerance: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error("dynamics: {0}")]
    Model(String),

    #[error("dynamics: non-finite state at t = {time} s")]
    IntegrationFailure {
        time: f64,
        last_good: Box<DynamicsState>,
    },

    #[error("dynamics: simulation stopped after {} sample(s): {reason}", .partial.samples.len())]
    Simulation {
        reason: String,
        partial: Box<Trajectory>,
    },

    #[error("mission: power budget exceeded at t = {time} s ({})", .report)]
    PowerBudget {
        time: f64,
        report: PowerReport,
        partial: Box<MissionLog>,
    },

    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short tag naming the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Argument(_) => "input",
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => "io",
            Error::DanglingNode { .. } | Error::InvalidTopology(_) | Error::Geometry(_) => {
                "topology"
            }
            Error::Dimension(_) | Error::Unstable { .. } => "statics",
            Error::Config(_) => "config",
            Error::Model(_) | Error::IntegrationFailure { .. } | Error::Simulation { .. } => {
                "dynamics"
            }
            Error::PowerBudget { .. } => "mission",
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
