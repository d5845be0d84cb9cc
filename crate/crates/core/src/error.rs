use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (sizes, ranges, alignment).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative method did not converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The covariance kernel produced a clearly negative eigenvalue.
    #[error("kernel is not positive semidefinite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    KernelNotPsd { eigenvalue: f64, largest: f64 },

    /// A time integrator produced a non-finite value.
    #[error("solver failure at step {step}{}: non-finite value at grid index {index}", sample.map(|s| alloc::format!(" (sample {s})")).unwrap_or_default())]
    SolverFailure {
        step: usize,
        index: usize,
        sample: Option<usize>,
    },

    /// The field has no sign change, so no shock can be located.
    #[error("no shock: field has no zero crossing")]
    NoShock,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::Contract(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
