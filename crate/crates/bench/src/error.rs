use std::fmt;

use crate::config::ConfigError;

#[derive(Debug)]
pub enum BenchError {
    Config(ConfigError),
    Store(proxyflow::Error),
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Config(e) => e.fmt(f),
            BenchError::Store(e) => e.fmt(f),
            BenchError::Io(e) => write!(f, "i/o error: {e}"),
            BenchError::Csv(e) => write!(f, "csv error: {e}"),
            BenchError::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for BenchError {}

macro_rules! from_error {
    ($($variant:ident($ty:ty)),+) => {
        $(impl From<$ty> for BenchError {
            fn from(e: $ty) -> Self {
                BenchError::$variant(e)
            }
        })+
    };
}

from_error!(
    Config(ConfigError),
    Store(proxyflow::Error),
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error)
);
