use thiserror::Error;

pub type Result<T> = std::result::Result<T, FractureError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FractureError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("degenerate element {triangle} (signed area {area:e})")]
    DegenerateElement { triangle: usize, area: f64 },

    #[error("degradation {value:e} on triangle {triangle} is below the floor {floor:e}")]
    FloorViolation {
        triangle: usize,
        value: f64,
        floor: f64,
    },

    #[error("{solver} did not converge in {iterations} iterations (last residual {last:e})", last = .residual_history.last().copied().unwrap_or(f64::NAN))]
    SolverDiverged {
        solver: &'static str,
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("exponent p = {0} is outside [1, 2)")]
    ExponentOutOfRange(f64),

    #[error("damage decreased at vertex {vertex} in step {step}: {before:e} -> {after:e}")]
    IrreversibilityViolated {
        step: usize,
        vertex: usize,
        before: f64,
        after: f64,
    },

    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<FractureError>,
    },

    #[error("competitor {name}: {source}")]
    Competitor {
        name: String,
        #[source]
        source: Box<FractureError>,
    },
}

impl FractureError {
    pub(crate) fn in_step(self, step: usize, time: f64) -> Self {
        FractureError::Step {
            step,
            time,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through step and competitor context.
    pub fn root(&self) -> &FractureError {
        match self {
            FractureError::Step { source, .. } | FractureError::Competitor { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}
