//! Consecutive map-reduce rounds, tracking how many objects the store holds.
//!
//! Each round, the client stores one input per mapper; every mapper
//! resolves its input, sleeps and stores an output; one reducer reads all
//! outputs and stores a result, which the client reads.
//!
//! * `default`: nothing is evicted.
//! * `manual`: the client evicts each input once its mapper is seen done,
//!   the outputs after the reduce, and the result after reading it.
//! * `ownership`: the same objects are owned; tasks get references through
//!   the executor shim and dropping the owners evicts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use proxyflow::codec::Bytes;
use proxyflow::engine::{EngineConfig, LocalEngine};
use proxyflow::ownership::{ExecutorShim, OwnedProxy, RefProxy};
use proxyflow::store::{Proxy, Store};
use proxyflow::ObjectKey;
use serde::Serialize;

use crate::config::{BenchConfig, MemoryMode};
use crate::env::Env;
use crate::error::Result;
use crate::record::Epoch;
use crate::sim::{self, LogEntry};

#[derive(Debug, Clone, Serialize)]
pub struct MemoryRun {
    pub mode: MemoryMode,
    /// `(seconds, active objects)` sampled on a fixed interval.
    #[serde(skip)]
    pub samples: Vec<(f64, u64)>,
    pub created: u64,
    pub final_count: u64,
    /// Labels such as `r0:in3` of evicted objects, in eviction order.
    #[serde(skip)]
    pub evictions: Vec<String>,
    #[serde(skip)]
    pub log: Vec<LogEntry>,
}

impl MemoryRun {
    pub fn peak(&self) -> u64 {
        self.samples.iter().map(|s| s.1).max().unwrap_or(0).max(self.final_count)
    }
}

pub fn run_memory(cfg: &BenchConfig, mode: MemoryMode) -> Result<MemoryRun> {
    cfg.validate()?;
    if cfg.simulated_clock {
        let run = sim::memory(cfg, mode);
        return Ok(MemoryRun {
            mode,
            samples: run.samples,
            created: run.created,
            final_count: run.final_count,
            evictions: run.evictions,
            log: run.log,
        });
    }
    let env = Env::open(cfg.backend, cfg.relay_addr.as_deref())?;
    let engine = LocalEngine::new(EngineConfig {
        workers: cfg.worker_count(),
        submit_latency: cfg.submit_latency,
        bandwidth: cfg.engine_bandwidth,
    });
    let epoch = Epoch::now();
    let samples = Arc::new(Mutex::new(Vec::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let sampler = {
        let (samples, stop, store) = (Arc::clone(&samples), Arc::clone(&stop), env.store.clone());
        let interval = cfg.sample_interval;
        thread::spawn(move || {
            let mut k = 0u32;
            while !stop.load(Ordering::SeqCst) {
                if let Ok(stats) = store.stats() {
                    samples.lock().unwrap().push((epoch.secs(), stats.object_count));
                }
                k += 1;
                let due = epoch.instant() + interval * k;
                thread::sleep(due.saturating_duration_since(std::time::Instant::now()));
            }
        })
    };

    let mut labels = Labels::default();
    let outcome = match mode {
        MemoryMode::Default | MemoryMode::Manual => {
            plain(cfg, &env.store, &engine, mode == MemoryMode::Manual, &mut labels)
        }
        MemoryMode::Ownership => owned(cfg, &env.store, &engine, &mut labels),
    };
    stop.store(true, Ordering::SeqCst);
    sampler.join().expect("sampler panicked");
    outcome?;

    let final_count = env.active_objects()?;
    let mut samples = samples.lock().unwrap().clone();
    samples.push((epoch.secs(), final_count));
    let evictions = env
        .recorder
        .evictions()
        .iter()
        .map(|k| labels.get(k))
        .collect();
    Ok(MemoryRun {
        mode,
        samples,
        created: labels.0.len() as u64,
        final_count,
        evictions,
        log: Vec::new(),
    })
}

#[derive(Default)]
struct Labels(HashMap<ObjectKey, String>);

impl Labels {
    fn add(&mut self, key: &ObjectKey, label: String) {
        self.0.insert(key.clone(), label);
    }

    fn get(&self, key: &ObjectKey) -> String {
        self.0.get(key).cloned().unwrap_or_else(|| format!("unknown:{key}"))
    }
}

fn task_payload(size: usize, tag: usize) -> Bytes {
    Bytes(vec![(tag % 251) as u8; size])
}

fn plain(cfg: &BenchConfig, store: &Store, engine: &LocalEngine, manual: bool, labels: &mut Labels) -> Result<()> {
    let sleep = cfg.task_duration();
    for r in 0..cfg.rounds {
        let inputs = (0..cfg.n)
            .map(|i| {
                let p = store.proxy(&task_payload(cfg.data_size, i))?;
                labels.add(p.key(), format!("r{r}:in{i}"));
                Ok(p)
            })
            .collect::<proxyflow::Result<Vec<Proxy<Bytes>>>>()?;
        let maps: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, input)| {
                let (input, store, out) = (input.clone(), store.clone(), cfg.output_size);
                engine.submit(move || -> proxyflow::Result<Proxy<Bytes>> {
                    input.resolve()?;
                    thread::sleep(sleep);
                    store.proxy(&task_payload(out, i))
                })
            })
            .collect();
        let mut outputs = Vec::with_capacity(cfg.n);
        for (i, m) in maps.into_iter().enumerate() {
            let out = m.wait()??;
            labels.add(out.key(), format!("r{r}:out{i}"));
            if manual {
                store.evict(inputs[i].key())?;
            }
            outputs.push(out);
        }
        let reduce = {
            let (outputs, store, out) = (outputs.clone(), store.clone(), cfg.output_size);
            engine.submit(move || -> proxyflow::Result<Proxy<Bytes>> {
                for o in &outputs {
                    o.resolve()?;
                }
                thread::sleep(sleep);
                store.proxy(&task_payload(out, r))
            })
        };
        let result = reduce.wait()??;
        labels.add(result.key(), format!("r{r}:reduce"));
        if manual {
            for o in &outputs {
                store.evict(o.key())?;
            }
        }
        result.resolve()?;
        if manual {
            store.evict(result.key())?;
        }
    }
    Ok(())
}

fn owned(cfg: &BenchConfig, store: &Store, engine: &LocalEngine, labels: &mut Labels) -> Result<()> {
    let shim = ExecutorShim::new(engine);
    let sleep = cfg.task_duration();
    for r in 0..cfg.rounds {
        let inputs = (0..cfg.n)
            .map(|i| {
                let o = store.owned_proxy(&task_payload(cfg.data_size, i))?;
                labels.add(o.key(), format!("r{r}:in{i}"));
                Ok(o)
            })
            .collect::<proxyflow::Result<Vec<OwnedProxy<Bytes>>>>()?;
        let mut maps = Vec::with_capacity(cfg.n);
        for (i, input) in inputs.iter().enumerate() {
            let (store, out) = (store.clone(), cfg.output_size);
            maps.push(shim.submit(input.make_ref()?, move |input: RefProxy<Bytes>| {
                input.resolve()?;
                thread::sleep(sleep);
                store.owned_proxy(&task_payload(out, i))
            })?);
        }
        let mut outputs = Vec::with_capacity(cfg.n);
        for (m, input) in maps.into_iter().zip(inputs) {
            let out = m.wait()??;
            labels.add(out.key(), format!("r{r}:out{}", outputs.len()));
            // The task's reference was released on completion.
            drop(input);
            outputs.push(out);
        }
        let refs = outputs
            .iter()
            .map(OwnedProxy::make_ref)
            .collect::<proxyflow::Result<Vec<_>>>()?;
        let (store_c, out) = (store.clone(), cfg.output_size);
        let result = shim
            .submit(refs, move |refs: Vec<RefProxy<Bytes>>| {
                for p in &refs {
                    p.resolve()?;
                }
                thread::sleep(sleep);
                store_c.owned_proxy(&task_payload(out, r))
            })?
            .wait()??;
        labels.add(result.key(), format!("r{r}:reduce"));
        drop(outputs);
        result.resolve()?;
        drop(result);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    fn quick() -> BenchConfig {
        BenchConfig {
            n: 3,
            rounds: 2,
            task_time: 0.05,
            data_size: 10_000,
            output_size: 1_000,
            submit_latency: Duration::from_millis(5),
            sample_interval: Duration::from_millis(10),
            ..BenchConfig::memory()
        }
    }

    #[test]
    fn default_keeps_everything() {
        let run = run_memory(&quick(), MemoryMode::Default).unwrap();
        assert_eq!(run.created, 2 * 7);
        assert_eq!(run.final_count, run.created);
        assert!(run.samples.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(run.evictions.is_empty());
    }

    #[test]
    fn ownership_matches_manual() {
        let manual = run_memory(&quick(), MemoryMode::Manual).unwrap();
        let owned = run_memory(&quick(), MemoryMode::Ownership).unwrap();
        assert_eq!(manual.final_count, 0);
        assert_eq!(owned.final_count, 0);
        assert_eq!(manual.evictions, owned.evictions);
        assert_eq!(manual.evictions, sim::memory(&quick(), MemoryMode::Manual).evictions);
    }
}
