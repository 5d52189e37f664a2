use thiserror::Error;

/// Errors raised by the simulation, safety and learning layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (dimensions, bounds, monotone time).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in component {component} of {context}")]
    NonFinite { context: String, component: usize },

    /// Integration left the inflated operating box.
    #[error("state diverged: {0}")]
    Divergence(String),

    /// A controller returned a non-finite control.
    #[error("controller returned a non-finite control at step {step}")]
    NonFiniteControl { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// Weighted least squares design matrix has dependent columns.
    #[error("rank-deficient feature matrix; dependent feature indices {features:?}")]
    RankDeficient { features: Vec<usize> },

    /// Gradient descent kept ascending after repeated step halvings.
    #[error("optimization failure: {reason}")]
    Optimization { reason: String, trace: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Fails with [`Error::NonFinite`] naming the first offending component.
pub(crate) fn check_finite(v: &nalgebra::DVector<f64>, context: &str) -> Result<()> {
    match v.iter().position(|c| !c.is_finite()) {
        Some(component) => Err(Error::NonFinite {
            context: context.to_string(),
            component,
        }),
        None => Ok(()),
    }
}
