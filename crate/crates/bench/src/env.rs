//! Store and broker for one benchmark run.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proxyflow::connector::{Connector, FileConnector, MemoryConnector, RelayConnector};
use proxyflow::relay::{RelayClient, RelayConfig, RelayCore, RelayServer, RelaySubscriber, ServerHandle};
use proxyflow::store::{register_store, unregister_store, Store};
use proxyflow::stream::{Publisher, Subscriber};
use tempfile::TempDir;

use crate::config::Backend;
use crate::error::Result;
use crate::recording::RecordingConnector;

enum Broker {
    Local(RelayCore),
    Tcp(String),
}

/// A registered store wrapped in a [`RecordingConnector`], plus a pub/sub
/// broker. The file backend has no pub/sub of its own and uses an
/// in-process broker. Dropping the env unregisters the store.
pub struct Env {
    pub store: Store,
    pub recorder: Arc<RecordingConnector>,
    broker: Broker,
    _dir: Option<TempDir>,
    _server: Option<ServerHandle>,
}

fn unique_name() -> String {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    format!("bench-{}-{}", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed))
}

impl Env {
    /// With the relay backend a server is started on a loopback port unless
    /// `relay_addr` names one.
    pub fn open(backend: Backend, relay_addr: Option<&str>) -> Result<Self> {
        let mut dir = None;
        let mut server = None;
        let (connector, broker): (Arc<dyn Connector>, Broker) = match backend {
            Backend::Memory => {
                let mem = MemoryConnector::unique();
                let core = mem.core().clone();
                (Arc::new(mem), Broker::Local(core))
            }
            Backend::File => {
                let d = tempfile::tempdir()?;
                let conn = FileConnector::new(d.path())?;
                dir = Some(d);
                (Arc::new(conn), Broker::Local(RelayCore::new(RelayConfig::default())))
            }
            Backend::Relay => {
                let addr = match relay_addr {
                    Some(a) => a.to_owned(),
                    None => {
                        let handle = RelayServer::bind("127.0.0.1:0", RelayConfig::default())?.spawn()?;
                        let a = handle.addr().to_string();
                        server = Some(handle);
                        a
                    }
                };
                (Arc::new(RelayConnector::connect(&addr)?), Broker::Tcp(addr))
            }
        };
        let recorder = Arc::new(RecordingConnector::new(connector));
        let store = Store::new(&unique_name(), Arc::clone(&recorder) as Arc<dyn Connector>)?;
        register_store(&store)?;
        Ok(Self {
            store,
            recorder,
            broker,
            _dir: dir,
            _server: server,
        })
    }

    pub fn publisher(&self) -> Result<Box<dyn Publisher>> {
        Ok(match &self.broker {
            Broker::Local(core) => Box::new(core.clone()),
            Broker::Tcp(addr) => Box::new(RelayClient::connect(addr.as_str())?),
        })
    }

    pub fn subscriber(&self, topic: &str) -> Result<Box<dyn Subscriber>> {
        Ok(match &self.broker {
            Broker::Local(core) => Box::new(core.subscribe(topic)?),
            Broker::Tcp(addr) => Box::new(RelaySubscriber::connect(addr.as_str(), topic)?),
        })
    }

    pub fn active_objects(&self) -> Result<u64> {
        Ok(self.store.stats()?.object_count)
    }
}

impl Drop for Env {
    fn drop(&mut self) {
        unregister_store(self.store.name());
    }
}
