use thiserror::Error;

/// Errors shared across scheme certification, stage solves and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed scheme: {0}")]
    Shape(String),

    #[error("invalid rational literal '{0}'")]
    ParseRational(String),

    #[error("row {row}: zero row sum (stage equation would be degenerate)")]
    ZeroRowSum { row: usize },

    #[error("stage {stage}: degenerate stage equation, S_m = 0")]
    DegenerateStage { stage: usize },

    #[error("stage {stage}: non-coercive stage, combined weight {weight:.6e} <= 0")]
    NonCoercive { stage: usize, weight: f64 },

    #[error(
        "stage {stage}: proximal solve did not converge after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    ProxNoConvergence {
        stage: usize,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("non-finite value encountered at {context}")]
    NonFinite { context: String },

    #[error("unknown builtin scheme '{0}'")]
    UnknownScheme(String),

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("energy increased by {delta:.3e} at step {step} (tolerance {tolerance:.3e})")]
    EnergyIncrease {
        step: usize,
        delta: f64,
        tolerance: f64,
    },

    #[error("relative mass drift {drift:.3e} at step {step} exceeds tolerance")]
    MassDrift { step: usize, drift: f64 },

    #[error("no feasible starting point found after {restarts} restarts")]
    NoFeasibleStart { restarts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
