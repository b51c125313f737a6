//! One producer feeding a dispatcher that farms 1 s tasks out to `n - 1`
//! workers at `(n - 1) / s` items per second.
//!
//! * `direct`: payloads travel through the broker and the dispatcher, and
//!   reach workers through the engine.
//! * `proxystream`: payloads go to the store; the dispatcher sees only
//!   events and forwards their proxies, which workers resolve.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use proxyflow::codec::Bytes;
use proxyflow::engine::{EngineConfig, LocalEngine};
use proxyflow::relay::Delivery;
use proxyflow::store::serialize_proxy;
use proxyflow::stream::{Metadata, ProducerConfig, StreamConsumer, StreamProducer};
use serde::Serialize;

use crate::config::{BenchConfig, StreamMode};
use crate::env::Env;
use crate::error::Result;
use crate::sim::{self, LogEntry, StreamCosts};

const TOPIC: &str = "bench-stream";

#[derive(Debug, Clone, Serialize)]
pub struct StreamRun {
    pub mode: StreamMode,
    pub data_size: usize,
    /// Completion times in seconds from the first publish, ascending.
    #[serde(skip)]
    pub completions: Vec<f64>,
    /// Steady-state tasks per second, see [`steady_throughput`].
    pub throughput: f64,
    /// `(n - 1) / s`.
    pub ceiling: f64,
    /// Bytes the dispatcher received from the broker or the store.
    pub dispatcher_bytes: u64,
    pub payload_bytes: u64,
    #[serde(skip)]
    pub log: Vec<LogEntry>,
}

impl StreamRun {
    /// Dispatcher bytes as a fraction of all payload bytes.
    pub fn dispatcher_share(&self) -> f64 {
        self.dispatcher_bytes as f64 / self.payload_bytes as f64
    }

    /// Tasks completed in each one-second bin, for plotting.
    pub fn series(&self) -> Vec<(f64, usize)> {
        let end = self.completions.last().copied().unwrap_or(0.0).ceil() as usize;
        let mut bins = vec![0usize; end.max(1)];
        for &c in &self.completions {
            let b = (c.floor() as usize).min(bins.len() - 1);
            bins[b] += 1;
        }
        bins.into_iter().enumerate().map(|(i, n)| (i as f64, n)).collect()
    }
}

/// Completion rate after the first `warmup` completions:
/// `(N - warmup - 1) / (c[N-1] - c[warmup])` over sorted completions `c`.
pub fn steady_throughput(completions: &[f64], warmup: usize) -> f64 {
    let n = completions.len();
    if n < warmup + 2 {
        return 0.0;
    }
    let span = completions[n - 1] - completions[warmup];
    (n - warmup - 1) as f64 / span
}

pub fn run_stream(cfg: &BenchConfig, mode: StreamMode) -> Result<StreamRun> {
    cfg.validate()?;
    let warmup = cfg.worker_count();
    let payload_bytes = (cfg.items * cfg.data_size) as u64;
    if cfg.simulated_clock {
        let mut run = sim::stream(cfg, StreamCosts::from_config(cfg, mode));
        run.completions.sort_by(f64::total_cmp);
        return Ok(StreamRun {
            mode,
            data_size: cfg.data_size,
            throughput: steady_throughput(&run.completions, warmup),
            completions: run.completions,
            ceiling: cfg.stream_rate(),
            dispatcher_bytes: match mode {
                StreamMode::Direct => payload_bytes,
                StreamMode::ProxyStream => 0,
            },
            payload_bytes,
            log: run.log,
        });
    }

    let env = Env::open(cfg.backend, cfg.relay_addr.as_deref())?;
    let engine = LocalEngine::new(EngineConfig {
        workers: cfg.worker_count(),
        submit_latency: cfg.submit_latency,
        bandwidth: cfg.engine_bandwidth,
    });
    let subscriber = env.subscriber(TOPIC)?;
    let publisher = env.publisher()?;
    let start = Instant::now();
    let producer = {
        let cfg = cfg.clone();
        let store = env.store.clone();
        thread::Builder::new()
            .name("stream-producer".into())
            .spawn(move || produce(&cfg, mode, publisher, &store, start))
            .expect("spawn producer")
    };

    let done = Arc::new(Mutex::new(Vec::with_capacity(cfg.items)));
    let task_time = cfg.task_duration();
    let mut tasks = Vec::with_capacity(cfg.items);
    let stamp = |fut: &proxyflow::engine::TaskFuture<proxyflow::Result<()>>| {
        let done = Arc::clone(&done);
        fut.add_done_callback(move || done.lock().unwrap().push(start.elapsed().as_secs_f64()));
    };
    let dispatcher_bytes = match mode {
        StreamMode::Direct => {
            let mut sub = subscriber;
            let mut received = 0u64;
            loop {
                match sub.next_message(None)? {
                    Delivery::Message(payload) => {
                        received += payload.len() as u64;
                        let fut = engine.submit_with_transfer(payload.len() as u64, 0, move || {
                            thread::sleep(task_time);
                            drop(payload);
                            Ok(())
                        });
                        stamp(&fut);
                        tasks.push(fut);
                    }
                    Delivery::EndOfStream => break,
                    Delivery::Timeout => unreachable!("no timeout requested"),
                }
            }
            received
        }
        StreamMode::ProxyStream => {
            let mut consumer: StreamConsumer<Bytes, _> = StreamConsumer::new(subscriber);
            while let Some(item) = consumer.next(None)? {
                let wire = serialize_proxy(&item.proxy)?.len() as u64;
                let proxy = item.proxy;
                let fut = engine.submit_with_transfer(wire, 0, move || {
                    let data = proxy.into_inner()?;
                    thread::sleep(task_time);
                    drop(data);
                    Ok(())
                });
                stamp(&fut);
                tasks.push(fut);
            }
            consumer.bytes_received()
        }
    };
    producer.join().expect("producer panicked")?;
    for t in tasks {
        t.wait()??;
    }
    let mut completions = done.lock().unwrap().clone();
    completions.sort_by(f64::total_cmp);
    Ok(StreamRun {
        mode,
        data_size: cfg.data_size,
        throughput: steady_throughput(&completions, warmup),
        completions,
        ceiling: cfg.stream_rate(),
        dispatcher_bytes,
        payload_bytes,
        log: Vec::new(),
    })
}

fn produce(
    cfg: &BenchConfig,
    mode: StreamMode,
    mut publisher: Box<dyn proxyflow::stream::Publisher>,
    store: &proxyflow::store::Store,
    start: Instant,
) -> Result<()> {
    let interval = 1.0 / cfg.stream_rate();
    let pace = |i: usize| {
        let due = start + Duration::from_secs_f64(i as f64 * interval);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    };
    match mode {
        StreamMode::Direct => {
            for i in 0..cfg.items {
                pace(i);
                publisher.publish(TOPIC, vec![(i % 251) as u8; cfg.data_size])?;
            }
            publisher.close_topic(TOPIC)?;
        }
        StreamMode::ProxyStream => {
            let mut producer = StreamProducer::new(publisher, ProducerConfig::new().topic(TOPIC, store));
            for i in 0..cfg.items {
                pace(i);
                let meta: Metadata = [("seq".to_owned(), i.to_string())].into();
                producer.send(TOPIC, &Bytes(vec![(i % 251) as u8; cfg.data_size]), meta)?;
            }
            producer.close(TOPIC)?;
        }
    }
    Ok(())
}
