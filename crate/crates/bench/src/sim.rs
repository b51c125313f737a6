//! Discrete-event replay of the benchmark schedules on a simulated clock.
//!
//! Time is kept in integer nanoseconds and ties are broken by scheduling
//! order, so a run is fully determined by its parameters and seed. With
//! zero costs and zero jitter the pipeline replay gives the ideal makespan
//! of each mode:
//!
//! * sequential modes: `n (L + s)`
//! * `proxy_future`: `L + s + (n - 1)(1 - f) s`
//!
//! where `L` is the engine submit latency.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{BenchConfig, MemoryMode, PipelineMode, StreamMode};
use crate::record::TaskRecord;

type Nanos = u64;

fn ns(secs: f64) -> Nanos {
    (secs.max(0.0) * 1e9).round() as Nanos
}

fn secs(t: Nanos) -> f64 {
    t as f64 / 1e9
}

/// One processed event: `(time, task, phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub at: f64,
    pub task: usize,
    pub phase: &'static str,
}

struct Queue<E: Ord> {
    now: Nanos,
    seq: u64,
    heap: BinaryHeap<Reverse<(Nanos, u64, E)>>,
}

impl<E: Ord + Copy> Queue<E> {
    fn new() -> Self {
        Self {
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    fn at(&mut self, t: Nanos, e: E) {
        self.seq += 1;
        self.heap.push(Reverse((t, self.seq, e)));
    }

    fn after(&mut self, dt: Nanos, e: E) {
        self.at(self.now + dt, e);
    }

    fn pop(&mut self) -> Option<E> {
        let Reverse((t, _, e)) = self.heap.pop()?;
        self.now = t;
        Some(e)
    }
}

/// Seeded multiplicative noise on phase durations.
struct Jitter {
    rng: ChaCha8Rng,
    spread: f64,
}

impl Jitter {
    fn new(seed: u64, spread: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spread,
        }
    }

    fn apply(&mut self, secs: f64) -> Nanos {
        if self.spread == 0.0 || secs == 0.0 {
            return ns(secs);
        }
        let u: f64 = self.rng.gen_range(-1.0..=1.0);
        ns(secs * (1.0 + self.spread * u))
    }
}

/// Per-task costs beyond sleeping, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PipelineCosts {
    /// Engine transfer of the task's argument, on the worker.
    pub transfer_in: f64,
    /// Engine transfer of the task's return value.
    pub transfer_out: f64,
    /// Fetching and decoding the input once it is available.
    pub resolve: f64,
    /// Storing the output.
    pub publish: f64,
    /// Future poll cap; `None` notices a set result instantly.
    pub poll_cap: Option<f64>,
}

impl PipelineCosts {
    /// Costs implied by a config: engine transfers at the engine bandwidth,
    /// free store access, and the config's poll cap.
    pub fn from_config(cfg: &BenchConfig, mode: PipelineMode) -> Self {
        let engine = |bytes: usize| cfg.engine_bandwidth.map_or(0.0, |bw| bytes as f64 / bw);
        match mode {
            PipelineMode::NoProxy => Self {
                transfer_in: engine(cfg.data_size),
                transfer_out: engine(cfg.data_size),
                ..Self::default()
            },
            PipelineMode::Proxy => Self::default(),
            PipelineMode::ProxyFuture => Self {
                poll_cap: Some(cfg.poll_interval.as_secs_f64()),
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimPipeline {
    pub makespan: f64,
    pub records: Vec<TaskRecord>,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PEv {
    Submit(usize),
    Ready(usize),
    OverheadDone(usize),
    Poll(usize),
    Resolved(usize),
    ComputeDone(usize),
    OutputSet(usize),
    Finished(usize),
}

/// Replays a pipeline run.
pub fn pipeline(cfg: &BenchConfig, mode: PipelineMode, costs: PipelineCosts) -> SimPipeline {
    let n = cfg.n;
    let s = cfg.task_time;
    let f = cfg.overhead_frac;
    let latency = ns(cfg.submit_latency.as_secs_f64());
    let sequential = mode != PipelineMode::ProxyFuture;
    let mut jit = Jitter::new(cfg.seed, cfg.jitter);
    let mut q = Queue::new();
    let mut recs: Vec<TaskRecord> = (0..n)
        .map(|i| TaskRecord { task_id: i, ..TaskRecord::default() })
        .collect();
    let mut log = Vec::new();
    let mut free = cfg.worker_count();
    let mut waiting: VecDeque<usize> = VecDeque::new();
    // When each task's output became available.
    let mut avail: Vec<Option<Nanos>> = vec![None; n];
    let mut parked = vec![false; n];
    let mut poll_delay = vec![0u64; n];
    let poll_cap = costs.poll_cap.map(ns);

    if sequential {
        q.at(0, PEv::Submit(0));
    } else {
        for i in 0..n {
            q.at(0, PEv::Submit(i));
        }
    }

    let input_ready = |avail: &[Option<Nanos>], i: usize| i == 0 || avail[i - 1].is_some();

    while let Some(ev) = q.pop() {
        let now = q.now;
        let (task, phase) = match ev {
            PEv::Submit(i) => {
                recs[i].submit = secs(now);
                q.after(latency, PEv::Ready(i));
                (i, "submit")
            }
            PEv::Ready(i) => {
                if free > 0 {
                    free -= 1;
                    let start = now + jit.apply(costs.transfer_in);
                    recs[i].start = secs(start);
                    q.at(start + jit.apply(f * s), PEv::OverheadDone(i));
                } else {
                    waiting.push_back(i);
                }
                (i, "ready")
            }
            PEv::OverheadDone(i) => {
                recs[i].overhead_done = secs(now);
                if input_ready(&avail, i) {
                    q.after(jit.apply(costs.resolve), PEv::Resolved(i));
                } else if let Some(cap) = poll_cap {
                    poll_delay[i] = cap.min(1_000_000);
                    q.after(poll_delay[i], PEv::Poll(i));
                } else {
                    parked[i] = true;
                }
                (i, "overhead_done")
            }
            PEv::Poll(i) => {
                if input_ready(&avail, i) {
                    q.after(jit.apply(costs.resolve), PEv::Resolved(i));
                } else {
                    let cap = poll_cap.expect("polling implies a cap");
                    poll_delay[i] = (poll_delay[i] * 2).min(cap);
                    q.after(poll_delay[i], PEv::Poll(i));
                }
                (i, "poll")
            }
            PEv::Resolved(i) => {
                recs[i].input_resolved = secs(now);
                q.after(jit.apply((1.0 - f) * s), PEv::ComputeDone(i));
                (i, "input_resolved")
            }
            PEv::ComputeDone(i) => {
                recs[i].compute_done = secs(now);
                q.after(jit.apply(costs.publish), PEv::OutputSet(i));
                (i, "compute_done")
            }
            PEv::OutputSet(i) => {
                avail[i] = Some(now);
                if i + 1 < n && parked[i + 1] {
                    parked[i + 1] = false;
                    q.after(jit.apply(costs.resolve), PEv::Resolved(i + 1));
                }
                q.after(jit.apply(costs.transfer_out), PEv::Finished(i));
                (i, "output_set")
            }
            PEv::Finished(i) => {
                recs[i].result_received = secs(now);
                if let Some(next) = waiting.pop_front() {
                    let start = now + jit.apply(costs.transfer_in);
                    recs[next].start = secs(start);
                    q.at(start + jit.apply(f * s), PEv::OverheadDone(next));
                } else {
                    free += 1;
                }
                if sequential && i + 1 < n {
                    q.at(now, PEv::Submit(i + 1));
                }
                (i, "result_received")
            }
        };
        log.push(LogEntry { at: secs(now), task, phase });
    }

    let makespan = recs.iter().map(|r| r.result_received).fold(0.0, f64::max);
    SimPipeline { makespan, records: recs, log }
}

/// Makespan of `mode` with zero transfer cost and no jitter.
pub fn ideal_makespan(cfg: &BenchConfig, mode: PipelineMode) -> f64 {
    let ideal = BenchConfig { jitter: 0.0, ..cfg.clone() };
    pipeline(&ideal, mode, PipelineCosts::default()).makespan
}

/// Ideal makespan reduction of `proxy_future` over sequential `proxy`.
pub fn ideal_reduction(cfg: &BenchConfig) -> f64 {
    let seq = ideal_makespan(cfg, PipelineMode::Proxy);
    let pipe = ideal_makespan(cfg, PipelineMode::ProxyFuture);
    1.0 - pipe / seq
}

/// Per-item costs of the stream benchmark, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamCosts {
    /// Dispatcher time per item.
    pub dispatch: f64,
    /// Engine transfer of the task argument, on the shared link.
    pub transfer_in: f64,
    /// Worker fetching the payload from the store.
    pub resolve: f64,
}

impl StreamCosts {
    pub fn from_config(cfg: &BenchConfig, mode: StreamMode) -> Self {
        match mode {
            StreamMode::Direct => Self {
                transfer_in: cfg.engine_bandwidth.map_or(0.0, |bw| cfg.data_size as f64 / bw),
                ..Self::default()
            },
            StreamMode::ProxyStream => Self::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimStream {
    /// Completion time of each task, in item order.
    pub completions: Vec<f64>,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SEv {
    Publish(usize),
    Submitted(usize),
    Ready(usize),
    Done(usize),
}

pub fn stream(cfg: &BenchConfig, costs: StreamCosts) -> SimStream {
    let n_items = cfg.items;
    let rate = cfg.stream_rate();
    let latency = ns(cfg.submit_latency.as_secs_f64());
    let mut jit = Jitter::new(cfg.seed, cfg.jitter);
    let mut q = Queue::new();
    let mut log = Vec::new();
    let mut completions = vec![0.0; n_items];
    let mut free = cfg.worker_count();
    let mut waiting: VecDeque<usize> = VecDeque::new();
    let mut dispatcher_free: Nanos = 0;
    let mut link_free: Nanos = 0;

    for i in 0..n_items {
        q.at(ns(i as f64 / rate), SEv::Publish(i));
    }
    let begin = |q: &mut Queue<SEv>, jit: &mut Jitter, link_free: &mut Nanos, i: usize| {
        let in_start = q.now.max(*link_free);
        let in_end = in_start + jit.apply(costs.transfer_in);
        if in_end > in_start {
            *link_free = in_end;
        }
        let done = in_end + jit.apply(costs.resolve) + jit.apply(cfg.task_time);
        q.at(done, SEv::Done(i));
    };

    while let Some(ev) = q.pop() {
        let now = q.now;
        let (task, phase) = match ev {
            SEv::Publish(i) => {
                let t = now.max(dispatcher_free) + jit.apply(costs.dispatch);
                dispatcher_free = t;
                q.at(t, SEv::Submitted(i));
                (i, "publish")
            }
            SEv::Submitted(i) => {
                q.after(latency, SEv::Ready(i));
                (i, "submit")
            }
            SEv::Ready(i) => {
                if free > 0 {
                    free -= 1;
                    begin(&mut q, &mut jit, &mut link_free, i);
                } else {
                    waiting.push_back(i);
                }
                (i, "ready")
            }
            SEv::Done(i) => {
                completions[i] = secs(now);
                if let Some(next) = waiting.pop_front() {
                    begin(&mut q, &mut jit, &mut link_free, next);
                } else {
                    free += 1;
                }
                (i, "done")
            }
        };
        log.push(LogEntry { at: secs(now), task, phase });
    }
    SimStream { completions, log }
}

/// Events of the memory benchmark, labelled by object.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMemory {
    /// `(time, active objects)` on the sampling grid.
    pub samples: Vec<(f64, u64)>,
    pub created: u64,
    pub final_count: u64,
    pub evictions: Vec<String>,
    pub log: Vec<LogEntry>,
}

/// Replays the map-reduce rounds of the memory benchmark. The client waits
/// for mappers in order and releases each input as its mapper is observed
/// done, then releases the outputs after the reduce and the reduce result
/// after reading it.
pub fn memory(cfg: &BenchConfig, mode: MemoryMode) -> SimMemory {
    let mappers = cfg.n;
    let latency = secs(ns(cfg.submit_latency.as_secs_f64()));
    let mut jit = Jitter::new(cfg.seed, cfg.jitter);
    let frees = mode != MemoryMode::Default;
    // (time, +1 put / -1 evict, label)
    let mut changes: Vec<(f64, i64, String)> = Vec::new();
    let mut log = Vec::new();
    let mut t = 0.0;
    for r in 0..cfg.rounds {
        for i in 0..mappers {
            changes.push((t, 1, format!("r{r}:in{i}")));
        }
        let finish: Vec<f64> = (0..mappers)
            .map(|_| t + latency + secs(jit.apply(cfg.task_time)))
            .collect();
        let mut seen = t;
        for (i, &done) in finish.iter().enumerate() {
            changes.push((done, 1, format!("r{r}:out{i}")));
            log.push(LogEntry { at: done, task: i, phase: "map_done" });
            seen = seen.max(done);
            if frees {
                changes.push((seen, -1, format!("r{r}:in{i}")));
            }
        }
        let reduced = seen + latency + secs(jit.apply(cfg.task_time));
        changes.push((reduced, 1, format!("r{r}:reduce")));
        log.push(LogEntry { at: reduced, task: mappers, phase: "reduce_done" });
        if frees {
            for i in 0..mappers {
                changes.push((reduced, -1, format!("r{r}:out{i}")));
            }
            changes.push((reduced, -1, format!("r{r}:reduce")));
        }
        t = reduced;
    }
    // Stable sort keeps the client's program order among equal times.
    changes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let created = changes.iter().filter(|c| c.1 > 0).count() as u64;
    let evictions = changes
        .iter()
        .filter(|c| c.1 < 0)
        .map(|c| c.2.clone())
        .collect();
    let step = cfg.sample_interval.as_secs_f64();
    let mut samples = Vec::new();
    let mut count = 0i64;
    let mut next_change = 0;
    let mut k = 0u64;
    loop {
        let at = k as f64 * step;
        while next_change < changes.len() && changes[next_change].0 <= at {
            count += changes[next_change].1;
            next_change += 1;
        }
        samples.push((at, count as u64));
        if next_change == changes.len() {
            break;
        }
        k += 1;
    }
    SimMemory {
        samples,
        created,
        final_count: count as u64,
        evictions,
        log,
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    fn cfg(n: usize, s: f64, f: f64, latency_ms: u64) -> BenchConfig {
        BenchConfig {
            n,
            task_time: s,
            overhead_frac: f,
            submit_latency: Duration::from_millis(latency_ms),
            ..BenchConfig::pipeline()
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    // Hand-computed schedules.
    #[test]
    fn ideal_makespans() {
        let c = cfg(8, 1.0, 0.2, 0);
        assert!(close(ideal_makespan(&c, PipelineMode::Proxy), 8.0));
        assert!(close(ideal_makespan(&c, PipelineMode::ProxyFuture), 1.0 + 7.0 * 0.8));
        assert!(close(ideal_reduction(&c), 0.175));

        let c = cfg(8, 1.0, 0.2, 50);
        assert!(close(ideal_makespan(&c, PipelineMode::NoProxy), 8.4));
        assert!(close(ideal_makespan(&c, PipelineMode::ProxyFuture), 1.05 + 5.6));

        let c = cfg(8, 1.0, 0.0, 0);
        assert!(close(ideal_reduction(&c), 0.0));
        let c = cfg(4, 2.0, 0.5, 0);
        assert!(close(ideal_makespan(&c, PipelineMode::ProxyFuture), 2.0 + 3.0));
    }

    #[test]
    fn too_few_workers_serialise_the_pipeline() {
        // One worker: task 1 cannot start until task 0 has finished.
        let c = BenchConfig { workers: Some(1), ..cfg(3, 1.0, 0.5, 0) };
        assert!(close(ideal_makespan(&c, PipelineMode::ProxyFuture), 3.0));
    }

    #[test]
    fn dependencies_respected() {
        let c = BenchConfig { jitter: 0.3, seed: 9, ..cfg(8, 1.0, 0.5, 50) };
        let costs = PipelineCosts { resolve: 0.01, publish: 0.01, poll_cap: Some(0.01), ..Default::default() };
        let run = pipeline(&c, PipelineMode::ProxyFuture, costs);
        for w in run.records.windows(2) {
            assert!(w[1].input_resolved >= w[0].compute_done);
        }
        assert!(run.records.iter().all(TaskRecord::is_monotone));
    }

    #[test]
    fn polling_adds_at_most_one_cap_per_hop() {
        let c = cfg(8, 1.0, 0.2, 50);
        let ideal = ideal_makespan(&c, PipelineMode::ProxyFuture);
        let costs = PipelineCosts { poll_cap: Some(0.01), ..Default::default() };
        let polled = pipeline(&c, PipelineMode::ProxyFuture, costs).makespan;
        assert!(polled >= ideal && polled <= ideal + 7.0 * 0.01 + 1e-9, "{polled}");
    }

    #[test]
    fn same_seed_same_log() {
        let c = BenchConfig { jitter: 0.1, seed: 3, ..cfg(8, 1.0, 0.2, 50) };
        let costs = PipelineCosts::from_config(&c, PipelineMode::ProxyFuture);
        let a = pipeline(&c, PipelineMode::ProxyFuture, costs);
        let b = pipeline(&c, PipelineMode::ProxyFuture, costs);
        assert_eq!(a.log, b.log);
        let other = BenchConfig { seed: 4, ..c };
        assert_ne!(pipeline(&other, PipelineMode::ProxyFuture, costs).log, a.log);
    }

    #[test]
    fn stream_keeps_up_without_costs() {
        let c = BenchConfig { items: 70, ..BenchConfig::stream() };
        let run = stream(&c, StreamCosts::default());
        let gaps: Vec<f64> = run.completions.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| close(*g, 1.0 / 7.0)));
    }

    #[test]
    fn stream_transfer_on_worker_lowers_capacity() {
        let c = BenchConfig { items: 140, data_size: 10_000_000, ..BenchConfig::stream() };
        let run = stream(&c, StreamCosts::from_config(&c, StreamMode::Direct));
        // Whole worker cycles only: completions come in groups of 7.
        let mut c = run.completions.clone();
        c.sort_by(f64::total_cmp);
        let rate = 63.0 / (c[133] - c[70]);
        assert!((rate - 7.0 / 1.1).abs() < 0.01, "{rate}");
    }

    #[test]
    fn memory_counts() {
        let c = BenchConfig::memory();
        let d = memory(&c, MemoryMode::Default);
        assert_eq!(d.created, 4 * 17);
        assert_eq!(d.final_count, 68);
        assert!(d.samples.windows(2).all(|w| w[0].1 <= w[1].1));
        let m = memory(&c, MemoryMode::Manual);
        let o = memory(&c, MemoryMode::Ownership);
        assert_eq!(m.final_count, 0);
        assert_eq!(m.evictions, o.evictions);
        assert_eq!(m.evictions.len(), 68);
        assert_eq!(m.evictions[..2], ["r0:in0".to_owned(), "r0:in1".to_owned()]);
    }
}
