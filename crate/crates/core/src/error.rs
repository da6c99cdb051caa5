use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} out of domain: {value} ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("truncation tail mass {tail:e} exceeds tolerance {tolerance:e} at n_max = {n_max}")]
    Truncation {
        tail: f64,
        tolerance: f64,
        n_max: usize,
    },

    #[error("Mandel Q undefined for a distribution with zero mean")]
    UndefinedQ,

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("loss matrix is singular (transmission = 0)")]
    SingularLoss,

    #[error("underdetermined system: {n_max} photon numbers from {n_bins} bins")]
    Underdetermined { n_max: usize, n_bins: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("event times were not retained by the simulation")]
    EventsNotRetained,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite_nonneg(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "finite and >= 0",
        })
    }
}

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "in [0, 1]",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "finite and > 0",
        })
    }
}
