use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum MertonError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A simulated state became non-finite or left its admissible domain.
    #[error("simulation diverged at step {step}: {what}")]
    SimulationDiverged { step: usize, what: String },

    /// Wealth reached zero or below under the discrete self-financing recursion.
    #[error("bankruptcy at step {step}: wealth {wealth}")]
    Bankruptcy { step: usize, wealth: f64 },

    /// Bridge denominator too close to zero to evaluate.
    #[error("singular bridge denominator {denominator} at time {t}")]
    SingularBridge { t: f64, denominator: f64 },

    /// Learning operations require a strictly positive temperature; with
    /// lambda = 0 the policy is a point mass and its score is undefined.
    #[error("temperature lambda = 0: deterministic policies cannot be updated")]
    DegeneratePolicy,

    /// The relative TD denominator (1-gamma)V + 1 must stay positive.
    #[error("corrupted critic: relative TD denominator {denominator} is not positive")]
    CorruptedCritic { denominator: f64 },

    /// The factor-model parameters violate the well-posedness inequality, so the
    /// bridge coefficient blows up in finite time and no finite-leverage policy
    /// exists in closed form.
    #[error("ill-posed parameters: bridge blows up at time-to-horizon {pole_tau}")]
    BlowUp { pole_tau: f64 },

    #[error("ill-posed parameter estimate: plug-in policy unavailable")]
    IllPosedEstimate,

    /// Too many consecutive rejected updates; the training run is aborted.
    #[error("training aborted after {rejected} consecutive rejected updates")]
    TrainingAborted { rejected: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MertonError>;
