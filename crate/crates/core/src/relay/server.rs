use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::protocol::*;
use super::{Delivery, LocalSubscription, RelayConfig, RelayCore};
use crate::error::{Error, Result};
use crate::key::ObjectKey;

/// TCP front end for a [`RelayCore`]; one thread per connection.
pub struct RelayServer {
    listener: TcpListener,
    core: RelayCore,
}

impl RelayServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, config: RelayConfig) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            core: RelayCore::new(config),
        })
    }

    /// Serves an existing core, so in-process and TCP clients share state.
    pub fn with_core<A: ToSocketAddrs>(addr: A, core: RelayCore) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            core,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn core(&self) -> &RelayCore {
        &self.core
    }

    /// Accepts connections until the process exits.
    pub fn serve(self) -> Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        accept_loop(self.listener, self.core, stop, connections);
        Ok(())
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let core = self.core.clone();
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let thread = {
            let stop = Arc::clone(&stop);
            let connections = Arc::clone(&connections);
            thread::Builder::new()
                .name("relay-accept".into())
                .spawn(move || accept_loop(self.listener, self.core, stop, connections))?
        };
        Ok(ServerHandle {
            addr,
            core,
            stop,
            connections,
            thread: Some(thread),
        })
    }
}

/// Running server; dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    core: RelayCore,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn core(&self) -> &RelayCore {
        &self.core
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        for conn in self.connections.lock().unwrap().drain(..) {
            let _ = conn.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    core: RelayCore,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
) {
    if let Ok(addr) = listener.local_addr() {
        info!("relay listening on {addr}");
    }
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if let Ok(clone) = stream.try_clone() {
            let mut conns = connections.lock().unwrap();
            conns.retain(|c| c.peer_addr().is_ok());
            conns.push(clone);
        }
        let core = core.clone();
        let spawned = thread::Builder::new()
            .name("relay-conn".into())
            .spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(&core, stream) {
                    debug!("connection {peer:?} closed: {e}");
                }
            });
        if let Err(e) = spawned {
            warn!("could not spawn connection thread: {e}");
        }
    }
}

fn handle_connection(core: &RelayCore, stream: TcpStream) -> Result<()> {
    let mut reader = BufReader::with_capacity(256 * 1024, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(256 * 1024, stream);
    let mut subscriptions: HashMap<String, LocalSubscription> = HashMap::new();
    let max = core.config().max_value_bytes;

    while let Some(header) = read_request_header(&mut reader)? {
        if header.value_len > max {
            skip_value(&mut reader, header.value_len)?;
            write_response(&mut writer, STATUS_ERROR, &Response::capacity(header.value_len, max).payload)?;
            continue;
        }
        let value = read_value(&mut reader, header.value_len)?;
        match dispatch(core, &mut subscriptions, header.op, &header.key, value) {
            Ok(Reply::Owned(resp)) => write_response(&mut writer, resp.status, &resp.payload)?,
            Ok(Reply::Shared(bytes)) => write_response(&mut writer, STATUS_OK, &bytes)?,
            Err(e) => {
                let resp = match e {
                    Error::Capacity { size, max } => Response::capacity(size, max),
                    Error::InvalidKey(_) | Error::InvalidTopic(_) | Error::Protocol(_) => {
                        Response::error(ERR_BAD_REQUEST, &e.to_string())
                    }
                    other => Response::error(ERR_INTERNAL, &other.to_string()),
                };
                write_response(&mut writer, resp.status, &resp.payload)?;
            }
        }
    }
    Ok(())
}

enum Reply {
    Owned(Response),
    Shared(Arc<Vec<u8>>),
}

fn parse_key(raw: &[u8]) -> Result<ObjectKey> {
    std::str::from_utf8(raw)
        .map_err(|_| Error::InvalidKey("key is not UTF-8".into()))?
        .parse()
}

fn parse_topic(raw: &[u8]) -> Result<String> {
    let topic = std::str::from_utf8(raw)
        .map_err(|_| Error::InvalidTopic("topic is not UTF-8".into()))?;
    super::validate_topic(topic)?;
    Ok(topic.to_owned())
}

fn dispatch(
    core: &RelayCore,
    subscriptions: &mut HashMap<String, LocalSubscription>,
    op: u8,
    key: &[u8],
    value: Vec<u8>,
) -> Result<Reply> {
    let ok = || Ok(Reply::Owned(Response::ok(Vec::new())));
    match op {
        OP_PUT => {
            core.put(&parse_key(key)?, value)?;
            ok()
        }
        OP_GET => Ok(match core.get(&parse_key(key)?) {
            Some(bytes) => Reply::Shared(bytes),
            None => Reply::Owned(Response::status(STATUS_NOT_FOUND)),
        }),
        OP_EXISTS => {
            let found = core.exists(&parse_key(key)?);
            Ok(Reply::Owned(Response::ok(vec![found as u8])))
        }
        OP_EVICT => {
            core.evict(&parse_key(key)?);
            ok()
        }
        OP_PUBLISH => {
            core.publish(&parse_topic(key)?, value)?;
            ok()
        }
        OP_SUBSCRIBE => {
            let topic = parse_topic(key)?;
            let sub = core.subscribe(&topic)?;
            subscriptions.insert(topic, sub);
            ok()
        }
        OP_NEXT => {
            let topic = parse_topic(key)?;
            let timeout = match value.len() {
                0 => None,
                8 => Some(Duration::from_millis(u64::from_be_bytes(
                    value[..].try_into().unwrap(),
                ))),
                n => {
                    return Err(Error::Protocol(format!(
                        "NEXT timeout must be empty or 8 bytes, got {n}"
                    )))
                }
            };
            let sub = subscriptions.get_mut(&topic).ok_or_else(|| {
                Error::Protocol(format!("NEXT on {topic:?} without SUBSCRIBE"))
            })?;
            Ok(Reply::Owned(match sub.next(timeout) {
                Delivery::Message(m) => Response::ok(m),
                Delivery::Timeout => Response::status(STATUS_TIMEOUT),
                Delivery::EndOfStream => Response::status(STATUS_END_OF_STREAM),
            }))
        }
        OP_STATS => Ok(Reply::Owned(Response::ok(core.stats().to_bytes().to_vec()))),
        OP_CLOSE => {
            core.close_topic(&parse_topic(key)?)?;
            ok()
        }
        other => Err(Error::Protocol(format!("unknown opcode 0x{other:02x}"))),
    }
}
