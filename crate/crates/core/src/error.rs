use thiserror::Error;

/// Every failure the library can report.
///
/// Variants split into two families: validation errors (bad parameters,
/// misuse) and numerical failures. [`Error::is_validation`] tells them apart;
/// the command-line front end maps them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample size n = {n} too small for {what}{}", min_hint(*.min_n))]
    NTooSmall {
        what: &'static str,
        n: f64,
        min_n: Option<f64>,
    },

    #[error("kernel characteristic function overflows at cutoff {cutoff} (largest admissible cutoff {max_cutoff})")]
    KernelOverflow { cutoff: f64, max_cutoff: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("integral diverges: integrand decays like u^{exponent:.3} near u = {u_max}")]
    Divergent { u_max: f64, exponent: f64 },

    #[error("pipe midpoints not strictly decreasing at frequency {u}: midpoint {index} = {value:e} does not drop below its predecessor")]
    Ordering { u: f64, index: usize, value: f64 },

    #[error("grid consistency d * u^s_hi * log u = {value:.4} exceeds 1 (d = {step}, u = {u})")]
    Consistency { value: f64, step: f64, u: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("oracle misuse: {0}")]
    OracleMisuse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn min_hint(min_n: Option<f64>) -> String {
    match min_n {
        Some(m) => format!(" (smallest admissible n is about {m:.0})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::NTooSmall { .. }
                | Error::OracleMisuse(_)
                | Error::Config(_)
                | Error::Calibration(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}
