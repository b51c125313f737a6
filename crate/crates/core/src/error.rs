use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::key::ObjectKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote error: {0}")]
    Remote(String),

    #[error("value of {size} bytes exceeds the maximum of {max} bytes")]
    Capacity { size: u64, max: u64 },

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("invalid topic: {0}")]
    InvalidTopic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend unreachable: {0}")]
    Unreachable(String),

    #[error("serialization failed: {0}")]
    Serialization(String),

    #[error("deserialization failed: {0}")]
    Deserialization(String),

    #[error("unknown serializer: {0}")]
    UnknownSerializer(String),

    #[error("store name already registered: {0}")]
    StoreExists(String),

    #[error("dangling reference: {0} is not in the store")]
    DanglingReference(ObjectKey),

    #[error("future {key} was not set within {waited:?}")]
    FutureTimeout { key: ObjectKey, waited: Duration },

    #[error("future {0} already has a result")]
    AlreadySet(ObjectKey),

    #[error("ownership rule violated: {0}")]
    OwnershipRule(&'static str),

    #[error("owner of {0} has already ended")]
    OwnerEnded(ObjectKey),

    #[error("reference is read-only")]
    ReadOnly,

    #[error("lifetime has already ended")]
    LifetimeEnded,

    #[error("topic {0} is not mapped to a store")]
    UnmappedTopic(String),

    #[error("topic {0} is closed")]
    StreamClosed(String),

    #[error("malformed stream event: {0}")]
    MalformedEvent(String),

    #[error("timed out after {0:?}")]
    Timeout(Duration),

    #[error("task failed: {0}")]
    TaskFailed(String),
}

impl serde::ser::Error for Error {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        Error::Serialization(msg.to_string())
    }
}

impl serde::de::Error for Error {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        Error::Deserialization(msg.to_string())
    }
}
