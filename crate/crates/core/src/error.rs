use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case parse error: {0}")]
    Parse(String),

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("case has no slack bus")]
    MissingSlack,

    #[error("bus {0} is declared more than once")]
    DuplicateBus(u32),

    #[error("case declares more than one slack bus ({0} and {1})")]
    MultipleSlack(u32, u32),

    #[error("branch graph is disconnected: bus {0} is unreachable from the slack")]
    Disconnected(u32),

    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: u32, to: u32 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "newton iteration did not converge after {iterations} iterations (mismatch {mismatch:.3e})"
    )]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error(
        "jacobian is singular at the current iterate (smallest singular value {sigma_min:.3e})"
    )]
    SingularJacobian { sigma_min: f64 },

    #[error("continuation could not leave the base point (step underflow at {step:.3e})")]
    StepUnderflow { step: f64 },

    #[error("no boundary found within the search horizon of {horizon} p.u.")]
    BoundaryNotFound { horizon: f64 },

    #[error("patch sampling failed for sample {index} after {attempts} attempts")]
    SamplingFailed { index: usize, attempts: usize },

    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },

    #[error("increment matrix is rank deficient (sigma ratio {ratio:.3e}); weakest direction {direction:?}")]
    RankDeficient { ratio: f64, direction: Vec<f64> },

    #[error("requested derivative order {requested} exceeds the maximum of {max}")]
    OrderTooHigh { requested: usize, max: usize },

    #[error("pade system is singular or ill-conditioned (condition {condition:.3e})")]
    PadeIllConditioned { condition: f64 },

    #[error("evaluation point {lambda} lies within {distance:.3e} of a real pole")]
    PoleProximity { lambda: f64, distance: f64 },

    #[error("no positive real pole found")]
    NoRealPole,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
