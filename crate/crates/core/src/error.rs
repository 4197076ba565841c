use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or field failed validation. `field` names the offending
    /// input so configuration errors can be traced back to their source.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("delta must lie in [0, 1), got {0}")]
    DeltaOutOfRange(f64),

    #[error("phi(2 K1) = {0} is not finite")]
    PhiNotFinite(f64),

    #[error("local step is unbounded: both denominators vanish (phi(2 K1) = 0 and C_dKn = 0)")]
    DegenerateStep,

    #[error("singular regression at node {node} (condition number {condition:.3e})")]
    SingularRegression { node: usize, condition: f64 },

    #[error("terminal value {value} exceeds declared bound {bound} on particle {particle}")]
    TerminalBound { particle: usize, value: f64, bound: f64 },

    #[error("blow-up at node {node}: max |Y| = {max_abs:.6e} exceeds guard {guard:.6e}")]
    BlowUp { node: usize, max_abs: f64, guard: f64 },

    #[error("component {component}: {source}")]
    Component {
        component: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stitched terminal sup {sup:.6e} exceeds lambda {lambda:.6e} entering window {window}")]
    StitchBound { window: usize, sup: f64, lambda: f64 },

    #[error("window length {t_lambda:.6e} is shorter than one grid step {dt:.6e}")]
    GridTooCoarse { t_lambda: f64, dt: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerics diverging rather than by bad input.
    pub fn is_blow_up(&self) -> bool {
        match self {
            Error::BlowUp { .. } => true,
            Error::Component { source, .. } | Error::Window { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }
}
