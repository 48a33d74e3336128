use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("non-finite right-hand side at t={t}: state {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },
    #[error("integration failed: {0}")]
    StepFailure(String),
    #[error("no heteroclinic connection in window: {0}")]
    NoConnection(String),
    #[error("root finding failed: {0}")]
    Root(String),
    #[error("query outside center-manifold table at I={i}, N={n}")]
    OutsideTable { i: f64, n: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no return to section within t_max={0}")]
    NoReturn(f64),
    #[error("structure flag not set: {0}")]
    FlagNotSet(&'static str),
    #[error("{0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
