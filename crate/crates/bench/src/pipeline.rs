//! Chained tasks: each task sleeps `f s`, resolves the previous task's
//! output, sleeps `(1 - f) s` and produces `d` bytes.
//!
//! * `no_proxy`: data moves through the engine; task `i` is submitted once
//!   task `i - 1` has returned.
//! * `proxy`: as `no_proxy`, but tasks exchange proxies.
//! * `proxy_future`: all tasks are submitted at once; task `i` reads a
//!   future that task `i - 1` sets.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use proxyflow::codec::Bytes;
use proxyflow::engine::{EngineConfig, LocalEngine, TaskFuture};
use proxyflow::future::Future;
use proxyflow::store::{serialize_proxy, Proxy, ProxyOptions, Store};
use serde::Serialize;

use crate::config::{BenchConfig, PipelineMode};
use crate::env::Env;
use crate::error::Result;
use crate::record::{Epoch, Stamps, TaskRecord};
use crate::sim::{self, LogEntry, PipelineCosts};

#[derive(Debug, Clone, Serialize)]
pub struct PipelineRun {
    pub mode: PipelineMode,
    /// Seconds from the first submit until the client holds the last output.
    pub makespan: f64,
    #[serde(skip)]
    pub records: Vec<TaskRecord>,
    /// Makespan of this mode with zero transfer cost.
    pub ideal_makespan: f64,
    pub bytes_produced: u64,
    pub bytes_stored: u64,
    pub bytes_resolved: u64,
    /// Simulated-clock runs only.
    #[serde(skip)]
    pub log: Vec<LogEntry>,
}

pub fn run_pipeline(cfg: &BenchConfig, mode: PipelineMode) -> Result<PipelineRun> {
    cfg.validate()?;
    let ideal_makespan = sim::ideal_makespan(cfg, mode);
    if cfg.simulated_clock {
        let run = sim::pipeline(cfg, mode, PipelineCosts::from_config(cfg, mode));
        let produced = (cfg.data_size * (cfg.n + 1)) as u64;
        let stored = if mode == PipelineMode::NoProxy { 0 } else { produced };
        return Ok(PipelineRun {
            mode,
            makespan: run.makespan,
            records: run.records,
            ideal_makespan,
            bytes_produced: produced,
            bytes_stored: stored,
            bytes_resolved: stored,
            log: run.log,
        });
    }
    let env = Env::open(cfg.backend, cfg.relay_addr.as_deref())?;
    let engine = LocalEngine::new(EngineConfig {
        workers: cfg.worker_count(),
        submit_latency: cfg.submit_latency,
        bandwidth: cfg.engine_bandwidth,
    });
    let ctx = Ctx {
        epoch: Epoch::now(),
        overhead: Duration::from_secs_f64(cfg.overhead_frac * cfg.task_time),
        compute: Duration::from_secs_f64((1.0 - cfg.overhead_frac) * cfg.task_time),
        data_size: cfg.data_size,
        store: env.store.clone(),
    };
    let (records, makespan) = match mode {
        PipelineMode::NoProxy => no_proxy(cfg, &engine, &ctx)?,
        PipelineMode::Proxy => proxy(cfg, &engine, &ctx)?,
        PipelineMode::ProxyFuture => proxy_future(cfg, &engine, &ctx)?,
    };
    let metrics = env.store.metrics();
    Ok(PipelineRun {
        mode,
        makespan,
        records,
        ideal_makespan,
        bytes_produced: (cfg.data_size * (cfg.n + 1)) as u64,
        bytes_stored: metrics.bytes_put,
        bytes_resolved: metrics.bytes_get,
        log: Vec::new(),
    })
}

#[derive(Clone)]
struct Ctx {
    epoch: Epoch,
    overhead: Duration,
    compute: Duration,
    data_size: usize,
    store: Store,
}

impl Ctx {
    fn payload(&self, task: usize) -> Vec<u8> {
        vec![(task % 251) as u8; self.data_size]
    }

    /// Runs the task phases around `resolve`.
    fn phases<R>(&self, resolve: impl FnOnce() -> R) -> (Stamps, R) {
        let start = self.epoch.secs();
        thread::sleep(self.overhead);
        let overhead_done = self.epoch.secs();
        let input = resolve();
        let input_resolved = self.epoch.secs();
        thread::sleep(self.compute);
        let compute_done = self.epoch.secs();
        let stamps = Stamps {
            start,
            overhead_done,
            input_resolved,
            compute_done,
        };
        (stamps, input)
    }

    fn evicting_proxy(&self, data: Vec<u8>) -> proxyflow::Result<Proxy<Bytes>> {
        self.store.proxy_with(
            &Bytes(data),
            ProxyOptions {
                evict_on_resolve: true,
                lifetime: None,
            },
        )
    }
}

/// Stamps completion when the engine reports the result.
fn on_done<R>(fut: &TaskFuture<R>, epoch: Epoch) -> Arc<Mutex<f64>> {
    let slot = Arc::new(Mutex::new(0.0));
    let s = Arc::clone(&slot);
    fut.add_done_callback(move || *s.lock().unwrap() = epoch.secs());
    slot
}

fn record(i: usize, submit: f64, st: Stamps, received: f64, bytes_in: u64, bytes_out: u64) -> TaskRecord {
    TaskRecord {
        task_id: i,
        submit,
        start: st.start,
        overhead_done: st.overhead_done,
        input_resolved: st.input_resolved,
        compute_done: st.compute_done,
        result_received: received,
        bytes_in,
        bytes_out,
    }
}

fn no_proxy(cfg: &BenchConfig, engine: &LocalEngine, ctx: &Ctx) -> Result<(Vec<TaskRecord>, f64)> {
    let mut data = ctx.payload(usize::MAX);
    let mut records = Vec::with_capacity(cfg.n);
    let d = cfg.data_size as u64;
    for i in 0..cfg.n {
        let c = ctx.clone();
        let submit = ctx.epoch.secs();
        let fut = engine.submit_with_transfer(d, d, move || {
            let (stamps, input) = c.phases(move || data);
            assert_eq!(input.len(), c.data_size);
            (stamps, c.payload(i))
        });
        let received = on_done(&fut, ctx.epoch);
        let (stamps, out) = fut.wait()?;
        records.push(record(i, submit, stamps, *received.lock().unwrap(), d, d));
        data = out;
    }
    Ok((records, ctx.epoch.secs()))
}

fn proxy(cfg: &BenchConfig, engine: &LocalEngine, ctx: &Ctx) -> Result<(Vec<TaskRecord>, f64)> {
    let mut input = ctx.evicting_proxy(ctx.payload(usize::MAX))?;
    let mut records = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let c = ctx.clone();
        let bytes_in = serialize_proxy(&input)?.len() as u64;
        let submit = ctx.epoch.secs();
        let fut = engine.submit_with_transfer(bytes_in, bytes_in, move || {
            let (stamps, got) = c.phases(move || input.into_inner());
            let out = got.and_then(|_| c.evicting_proxy(c.payload(i)));
            (stamps, out)
        });
        let received = on_done(&fut, ctx.epoch);
        let (stamps, out) = fut.wait()?;
        records.push(record(i, submit, stamps, *received.lock().unwrap(), bytes_in, bytes_in));
        input = out?;
    }
    input.into_inner()?;
    Ok((records, ctx.epoch.secs()))
}

fn proxy_future(cfg: &BenchConfig, engine: &LocalEngine, ctx: &Ctx) -> Result<(Vec<TaskRecord>, f64)> {
    let futures: Vec<Future<Bytes>> = (0..cfg.n)
        .map(|_| ctx.store.future_with(None, cfg.poll_interval))
        .collect();
    let mut inputs = vec![ctx.evicting_proxy(ctx.payload(usize::MAX))?];
    inputs.extend(futures[..cfg.n - 1].iter().map(Future::proxy));

    let mut pending = Vec::with_capacity(cfg.n);
    for (i, (input, output)) in inputs.into_iter().zip(futures.iter().cloned()).enumerate() {
        let c = ctx.clone();
        let bytes = serialize_proxy(&input)?.len() as u64;
        let submit = ctx.epoch.secs();
        let fut = engine.submit_with_transfer(bytes, 0, move || -> proxyflow::Result<Stamps> {
            let key = input.key().clone();
            let (stamps, got) = c.phases(move || input.into_inner());
            got?;
            // Future slots are not evict-on-resolve; the single reader
            // removes them.
            if i > 0 {
                c.store.evict(&key)?;
            }
            output.set_result(&Bytes(c.payload(i)))?;
            Ok(stamps)
        });
        let received = on_done(&fut, ctx.epoch);
        pending.push((submit, fut, received, bytes));
    }
    let mut records = Vec::with_capacity(cfg.n);
    for (i, (submit, fut, received, bytes)) in pending.into_iter().enumerate() {
        let stamps = fut.wait()??;
        records.push(record(i, submit, stamps, *received.lock().unwrap(), bytes, 0));
    }
    let last = futures.last().expect("n >= 1");
    last.result(None)?;
    ctx.store.evict(last.key())?;
    Ok((records, ctx.epoch.secs()))
}

/// Fractional makespan reduction of `faster` relative to `baseline`.
pub fn reduction(baseline: &PipelineRun, faster: &PipelineRun) -> f64 {
    1.0 - faster.makespan / baseline.makespan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode_sim: bool) -> BenchConfig {
        BenchConfig {
            n: 4,
            task_time: 0.2,
            data_size: 10_000,
            submit_latency: Duration::from_millis(10),
            simulated_clock: mode_sim,
            ..BenchConfig::pipeline()
        }
    }

    #[test]
    fn records_are_legal_in_every_mode() {
        let cfg = small(false);
        for &mode in PipelineMode::ALL {
            let run = run_pipeline(&cfg, mode).unwrap();
            assert_eq!(run.records.len(), cfg.n);
            for r in &run.records {
                assert!(r.is_monotone(), "{mode}: {r:?}");
            }
            for w in run.records.windows(2) {
                assert!(w[1].input_resolved >= w[0].compute_done, "{mode}");
            }
            if mode != PipelineMode::NoProxy {
                assert_eq!(run.bytes_stored, run.bytes_resolved, "{mode}");
                assert_eq!(run.bytes_stored, (cfg.n as u64 + 1) * (cfg.data_size as u64 + 5));
            }
            assert!(run.makespan >= run.ideal_makespan * 0.999, "{mode}");
        }
    }

    #[test]
    fn futures_overlap_tasks() {
        let cfg = BenchConfig { overhead_frac: 0.5, ..small(false) };
        let seq = run_pipeline(&cfg, PipelineMode::Proxy).unwrap();
        let pipe = run_pipeline(&cfg, PipelineMode::ProxyFuture).unwrap();
        assert!(reduction(&seq, &pipe) > 0.2, "{} vs {}", seq.makespan, pipe.makespan);
    }

    #[test]
    fn simulated_runs_are_reproducible() {
        let cfg = BenchConfig { jitter: 0.1, seed: 11, ..small(true) };
        let a = run_pipeline(&cfg, PipelineMode::ProxyFuture).unwrap();
        let b = run_pipeline(&cfg, PipelineMode::ProxyFuture).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.records, b.records);
    }
}
