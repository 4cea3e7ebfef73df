use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("degenerate metric: {0}")]
    Degenerate(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("step size {dt:e} exceeds stability bound {bound:e}")]
    StepSize { dt: f64, bound: f64 },
    #[error("factor extinct {after:e} into the step")]
    Extinction { after: f64 },
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("minimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    MinimizerFailure { iterations: usize, grad_norm: f64 },
    #[error("gauge undefined: {0}")]
    GaugeUndefined(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("measure not normalized: {0}")]
    Unnormalized(String),
    #[error("slice has {0} points, exact transport is limited to 512")]
    TooLarge(usize),
    #[error("correspondence missing slices at time indices {0:?}")]
    MissingSlices(Vec<usize>),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("file format version {found} is not supported (expected {expected}); migrate the file first")]
    Version { found: u64, expected: u64 },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("stage `{stage}` failed at t = {time}: {source}")]
    Stage {
        stage: String,
        time: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors that mean the input was rejected before any compute.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::InvalidMetric(_)
            | Error::Shape(_)
            | Error::Precondition(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn at_stage(self, stage: &str, time: f64) -> Error {
        Error::Stage { stage: stage.to_string(), time, source: Box::new(self) }
    }
}
