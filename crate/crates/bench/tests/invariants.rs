use std::time::Duration;

use proptest::prelude::*;
use proxyflow_bench::emit::{events_csv, pipeline_csv};
use proxyflow_bench::sim::{self, StreamCosts};
use proxyflow_bench::stream::steady_throughput;
use proxyflow_bench::{run_pipeline, BenchConfig, MemoryMode, PipelineMode, StreamMode};

fn pipeline_cfg(n: usize, s: f64, f: f64, latency_ms: u64, jitter: f64, seed: u64) -> BenchConfig {
    BenchConfig {
        n,
        task_time: s,
        overhead_frac: f,
        submit_latency: Duration::from_millis(latency_ms),
        jitter,
        seed,
        simulated_clock: true,
        ..BenchConfig::pipeline()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stream_never_beats_the_ceiling(
        n in 2usize..10,
        s in 0.05f64..2.0,
        d in 1_000usize..20_000_000,
        bw in prop::option::of(1e6f64..1e9),
        mode in prop::sample::select(StreamMode::ALL.to_vec()),
    ) {
        let cfg = BenchConfig {
            n,
            task_time: s,
            data_size: d,
            engine_bandwidth: bw,
            items: 6 * n,
            simulated_clock: true,
            ..BenchConfig::stream()
        };
        let run = sim::stream(&cfg, StreamCosts::from_config(&cfg, mode));
        let mut c = run.completions.clone();
        c.sort_by(f64::total_cmp);
        let rate = steady_throughput(&c, cfg.worker_count());
        prop_assert!(rate <= cfg.stream_rate() * (1.0 + 1e-9), "{rate} > {}", cfg.stream_rate());
    }

    #[test]
    fn schedules_respect_data_dependencies(
        n in 1usize..12,
        s in 0.05f64..2.0,
        f in 0.0f64..0.95,
        latency in 0u64..100,
        jitter in 0.0f64..0.5,
        seed in any::<u64>(),
        mode in prop::sample::select(PipelineMode::ALL.to_vec()),
    ) {
        let cfg = pipeline_cfg(n, s, f, latency, jitter, seed);
        let run = run_pipeline(&cfg, mode).unwrap();
        prop_assert_eq!(run.records.len(), n);
        for r in &run.records {
            prop_assert!(r.is_monotone(), "{r:?}");
        }
        for w in run.records.windows(2) {
            prop_assert!(w[1].input_resolved >= w[0].compute_done, "{:?} then {:?}", w[0], w[1]);
        }
        let last = run.records.last().unwrap();
        prop_assert!((run.makespan - last.result_received).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_task(n in 1usize..40, mode in prop::sample::select(PipelineMode::ALL.to_vec())) {
        let run = run_pipeline(&pipeline_cfg(n, 1.0, 0.2, 50, 0.0, 0), mode).unwrap();
        let mut buf = Vec::new();
        pipeline_csv(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        prop_assert_eq!(text.lines().count(), n + 1);
        prop_assert!(text.lines().skip(1).all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn same_seed_replays_same_events(
        n in 1usize..10,
        jitter in 0.0f64..0.5,
        seed in any::<u64>(),
        mode in prop::sample::select(PipelineMode::ALL.to_vec()),
    ) {
        let cfg = pipeline_cfg(n, 1.0, 0.3, 50, jitter, seed);
        let dump = |cfg: &BenchConfig| {
            let mut buf = Vec::new();
            events_csv(&mut buf, &run_pipeline(cfg, mode).unwrap().log).unwrap();
            buf
        };
        prop_assert_eq!(dump(&cfg), dump(&cfg));
        let a = sim::memory(&BenchConfig { jitter, seed, ..BenchConfig::memory() }, MemoryMode::Manual);
        let b = sim::memory(&BenchConfig { jitter, seed, ..BenchConfig::memory() }, MemoryMode::Manual);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn simulated_pipeline_conserves_bytes(n in 1usize..20, d in 0usize..10_000_000) {
        let cfg = BenchConfig { data_size: d, ..pipeline_cfg(n, 1.0, 0.2, 50, 0.0, 0) };
        for mode in [PipelineMode::Proxy, PipelineMode::ProxyFuture] {
            let run = run_pipeline(&cfg, mode).unwrap();
            prop_assert_eq!(run.bytes_produced, run.bytes_stored);
            prop_assert_eq!(run.bytes_stored, run.bytes_resolved);
        }
    }
}

#[test]
fn jitter_changes_the_schedule_by_seed() {
    let a = run_pipeline(&pipeline_cfg(8, 1.0, 0.2, 50, 0.2, 1), PipelineMode::ProxyFuture).unwrap();
    let b = run_pipeline(&pipeline_cfg(8, 1.0, 0.2, 50, 0.2, 2), PipelineMode::ProxyFuture).unwrap();
    assert_ne!(a.makespan, b.makespan);
}
