use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("inertia matrix is numerically singular")]
    SingularInertia,
    #[error("physically inconsistent inertial parameters: {0}")]
    Inconsistent(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("time {t} outside the reference window [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("information matrix is rank deficient")]
    RankDeficient,
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("rollout diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
