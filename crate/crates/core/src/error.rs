use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("battery {id}: power {power} W exceeds deliverable power {limit} W")]
    InfeasiblePower { id: String, power: f64, limit: f64 },
}

/// A scenario invariant violation, located by its field path.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Infeasible {
        step: usize,
        #[source]
        source: BatteryError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("reference {reference} W is outside the switching range [{min}, {max}] W")]
    InfeasibleReference { reference: f64, min: f64, max: f64 },
    #[error("trace has no battery named {0}")]
    UnknownBattery(String),
    #[error("trace and scenario disagree: {0}")]
    Mismatch(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}
