use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use super::{Connector, ConnectorConfig, ConnectorKind};
use crate::error::Result;
use crate::key::ObjectKey;
use crate::relay::{RelayCore, StoreStats};

pub(super) const DEFAULT_SPACE: &str = "default";

fn spaces() -> &'static Mutex<HashMap<String, RelayCore>> {
    static SPACES: OnceLock<Mutex<HashMap<String, RelayCore>>> = OnceLock::new();
    SPACES.get_or_init(Default::default)
}

/// Connector over a named in-process [`RelayCore`].
///
/// Spaces are created on first use and live until [`MemoryConnector::drop_space`]
/// or process exit.
#[derive(Clone)]
pub struct MemoryConnector {
    space: String,
    core: RelayCore,
}

impl MemoryConnector {
    pub fn open(space: &str) -> Self {
        let core = spaces()
            .lock()
            .unwrap()
            .entry(space.to_owned())
            .or_default()
            .clone();
        Self {
            space: space.to_owned(),
            core,
        }
    }

    /// Opens a space with a fresh random name.
    pub fn unique() -> Self {
        Self::open(&format!("space-{}", hex::encode(rand::random::<[u8; 8]>())))
    }

    /// Forgets a space; connectors already holding it keep working.
    pub fn drop_space(space: &str) {
        spaces().lock().unwrap().remove(space);
    }

    pub fn space(&self) -> &str {
        &self.space
    }

    /// The core backing this space, also usable for publish/subscribe.
    pub fn core(&self) -> &RelayCore {
        &self.core
    }
}

impl Connector for MemoryConnector {
    fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()> {
        self.core.put(key, value)
    }

    fn get(&self, key: &ObjectKey) -> Result<Option<Vec<u8>>> {
        Ok(self.core.get(key).map(|v| v.as_ref().clone()))
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool> {
        Ok(self.core.exists(key))
    }

    fn evict(&self, key: &ObjectKey) -> Result<()> {
        self.core.evict(key);
        Ok(())
    }

    fn config(&self) -> ConnectorConfig {
        ConnectorConfig::new(ConnectorKind::Memory).with("space", self.space.as_str())
    }

    fn stats(&self) -> Result<StoreStats> {
        Ok(self.core.stats())
    }
}
