pub mod codec;
pub mod connector;
pub mod engine;
pub mod error;
pub mod future;
pub mod key;
pub mod ownership;
pub mod relay;
pub mod store;
pub mod stream;

pub use error::{Error, Result};
pub use key::ObjectKey;
