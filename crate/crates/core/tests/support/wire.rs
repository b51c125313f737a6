//! Recorded relay frames, checked against both ends of the protocol.
//!
//! `data/wire_vectors.json` is produced by `data/gen_wire_vectors.py`.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use proxyflow::relay::{Delivery, RelayClient, RelayConfig, RelayServer, StoreStats};
use proxyflow::{Error, ObjectKey};
use serde::Deserialize;

pub type Check = Result<usize, String>;

#[derive(Deserialize)]
pub struct Vectors {
    pub max_value_bytes: u64,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
pub struct Step {
    pub op: String,
    pub key: String,
    pub value: String,
    pub timeout_ms: Option<u64>,
    pub request: String,
    pub response: String,
}

pub fn vectors() -> Vectors {
    let text = include_str!("../data/wire_vectors.json");
    serde_json::from_str(text).expect("wire vectors parse")
}

fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s).expect("vector fields are hex")
}

/// Distinct opcodes among the recorded requests, ascending.
pub fn opcodes(v: &Vectors) -> Vec<u8> {
    let mut ops: Vec<u8> = v.steps.iter().map(|s| unhex(&s.request)[0]).collect();
    ops.sort();
    ops.dedup();
    ops
}

fn read_response(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut head = [0u8; 9];
    stream.read_exact(&mut head)?;
    let len = u64::from_be_bytes(head[1..].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    Ok([&head[..], &payload].concat())
}

/// Replays every request against a real server and compares responses.
pub fn check_server(v: &Vectors) -> Check {
    let server = RelayServer::bind(
        "127.0.0.1:0",
        RelayConfig { max_value_bytes: v.max_value_bytes },
    )
    .and_then(|s| s.spawn())
    .map_err(|e| e.to_string())?;
    let mut stream = TcpStream::connect(server.addr()).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
    for (i, step) in v.steps.iter().enumerate() {
        stream.write_all(&unhex(&step.request)).map_err(|e| e.to_string())?;
        let got = hex::encode(read_response(&mut stream).map_err(|e| format!("step {i}: {e}"))?);
        if got != step.response {
            return Err(format!("step {i} ({}): got {got}, want {}", step.op, step.response));
        }
    }
    Ok(v.steps.len())
}

fn fake_server(
    steps: Vec<(Vec<u8>, Vec<u8>)>,
) -> (std::net::SocketAddr, thread::JoinHandle<Result<(), String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let (mut stream, _) = listener.accept().map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        for (i, (request, response)) in steps.into_iter().enumerate() {
            let mut got = vec![0u8; request.len()];
            stream.read_exact(&mut got).map_err(|e| format!("request {i}: {e}"))?;
            if got != request {
                return Err(format!(
                    "request {i}: got {}, want {}",
                    hex::encode(&got),
                    hex::encode(&request)
                ));
            }
            stream.write_all(&response).map_err(|e| e.to_string())?;
        }
        Ok(())
    });
    (addr, handle)
}

/// Turns a recorded response into what the client should report.
#[derive(Debug, PartialEq)]
enum Outcome {
    Unit,
    Bytes(Option<Vec<u8>>),
    Bool(bool),
    Delivery(Delivery),
    Stats(StoreStats),
    Capacity { size: u64, max: u64 },
    Failed(String),
}

fn expected(step: &Step) -> Outcome {
    let resp = unhex(&step.response);
    let (status, payload) = (resp[0], resp[9..].to_vec());
    if status == 0x7f {
        assert_eq!(payload[0], 0x01);
        return Outcome::Capacity {
            size: u64::from_be_bytes(payload[1..9].try_into().unwrap()),
            max: u64::from_be_bytes(payload[9..17].try_into().unwrap()),
        };
    }
    match step.op.as_str() {
        "get" => Outcome::Bytes((status == 0x00).then_some(payload)),
        "exists" => Outcome::Bool(payload == [1]),
        "next" => Outcome::Delivery(match status {
            0x00 => Delivery::Message(payload),
            0x02 => Delivery::Timeout,
            0x03 => Delivery::EndOfStream,
            s => panic!("status {s}"),
        }),
        "stats" => {
            let f: Vec<u64> = payload
                .chunks(8)
                .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
                .collect();
            Outcome::Stats(StoreStats {
                object_count: f[0],
                total_bytes: f[1],
                put_count: f[2],
                get_count: f[3],
                evict_count: f[4],
                overwrite_count: f[5],
            })
        }
        _ => Outcome::Unit,
    }
}

fn run(client: &mut RelayClient, step: &Step) -> Outcome {
    let key = || step.key.parse::<ObjectKey>().unwrap();
    let value = unhex(&step.value);
    let result = match step.op.as_str() {
        "put" => client.put(&key(), &value).map(|_| Outcome::Unit),
        "get" => client.get(&key()).map(Outcome::Bytes),
        "exists" => client.exists(&key()).map(Outcome::Bool),
        "evict" => client.evict(&key()).map(|_| Outcome::Unit),
        "publish" => client.publish(&step.key, &value).map(|_| Outcome::Unit),
        "subscribe" => client.subscribe(&step.key).map(|_| Outcome::Unit),
        "close" => client.close_topic(&step.key).map(|_| Outcome::Unit),
        "next" => client
            .next(&step.key, step.timeout_ms.map(Duration::from_millis))
            .map(Outcome::Delivery),
        "stats" => client.stats().map(Outcome::Stats),
        op => panic!("unknown op {op}"),
    };
    match result {
        Ok(o) => o,
        Err(Error::Capacity { size, max }) => Outcome::Capacity { size, max },
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

/// Drives the client against a server that checks each request frame and
/// answers with the recorded response.
pub fn check_client(v: &Vectors) -> Check {
    let frames = v
        .steps
        .iter()
        .map(|s| (unhex(&s.request), unhex(&s.response)))
        .collect();
    let (addr, server) = fake_server(frames);
    let mut client = RelayClient::connect(addr).map_err(|e| e.to_string())?;
    let mut mismatch = None;
    for (i, step) in v.steps.iter().enumerate() {
        let (got, want) = (run(&mut client, step), expected(step));
        if got != want {
            mismatch = Some(format!("step {i} ({}): got {got:?}, want {want:?}", step.op));
            break;
        }
    }
    drop(client);
    let served = server.join().map_err(|_| "fake server panicked".to_owned())?;
    match (mismatch, served) {
        (Some(m), _) => Err(m),
        (None, Err(e)) => Err(e),
        (None, Ok(())) => Ok(v.steps.len()),
    }
}
