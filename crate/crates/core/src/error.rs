use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrlError {
    /// A configuration value violates a constraint.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A computation produced a NaN or infinity.
    #[error("numeric fault in {context} (component {index})")]
    Numeric { context: String, index: usize },

    /// An argument lies outside the domain of a function.
    #[error("domain error: component {component} {message}")]
    Domain { component: usize, message: String },

    /// The reinforcement window does not yet span a full interval.
    #[error("reinforcement buffer not warmed up")]
    NotReady,

    /// An oracle computation did not converge.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Operation not supported for the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(String),
}

impl IrlError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        IrlError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn numeric(context: impl Into<String>, index: usize) -> Self {
        IrlError::Numeric {
            context: context.into(),
            index,
        }
    }
}

impl From<std::io::Error> for IrlError {
    fn from(e: std::io::Error) -> Self {
        IrlError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, IrlError>;

/// Returns the index of the first non-finite entry, if any.
pub(crate) fn first_non_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> Option<usize> {
    values.into_iter().position(|v| !v.is_finite())
}

pub(crate) fn ensure_finite<'a>(
    values: impl IntoIterator<Item = &'a f64>,
    context: &str,
) -> Result<()> {
    match first_non_finite(values) {
        Some(i) => Err(IrlError::numeric(context, i)),
        None => Ok(()),
    }
}
