use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("overflow at iterate {index}")]
    Overflow { index: usize },
    #[error("depth reduction required: E-tower overflows before level {level}")]
    DepthReduction { level: usize },
    #[error("orbit entered the basin at iterate {index}")]
    InBasin { index: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
