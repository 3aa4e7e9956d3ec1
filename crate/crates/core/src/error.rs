use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time grid has no steps")]
    EmptyGrid,

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid action space: {0}")]
    InvalidActionSpace(String),

    #[error("non-finite coefficient {what} at t={t}, x={x:?}, a={a}")]
    NonFiniteCoefficient {
        what: &'static str,
        t: f64,
        x: Vec<f64>,
        a: f64,
    },

    #[error("intensity {value} outside declared bounds ({nu_min}, {nu_max}] at t={t}, current={current}, mark={mark}")]
    IntensityBounds {
        value: f64,
        nu_min: f64,
        nu_max: f64,
        t: f64,
        current: usize,
        mark: usize,
    },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("singular regression at step {step} (condition number estimate {condition:.3e})")]
    SingularRegression { step: usize, condition: f64 },

    #[error("search space of {size} policies exceeds cap {cap}; enable backward mode")]
    SearchSpaceTooLarge { size: f64, cap: usize },

    #[error("explicit scheme unstable: need at least {required_nt} time steps, got {nt}")]
    Unstable { required_nt: usize, nt: usize },

    #[error("configuration error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for configuration problems (bad fields, unknown names, malformed JSON).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Json(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: ctx(),
            source: Box::new(e),
        })
    }
}
