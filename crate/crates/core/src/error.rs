use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("no visible board placement: {0}")]
    NoPlacement(String),

    #[error("distortion map fully visited")]
    MapExhausted,

    #[error("no corners visible")]
    NothingVisible,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
