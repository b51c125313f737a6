use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use proxyflow_bench::config::parse_size;
use proxyflow_bench::emit::OutDir;
use proxyflow_bench::pipeline::reduction;
use proxyflow_bench::{
    peer, run_memory, run_pipeline, run_stream, sim, Backend, BenchConfig, Benchmark, MemoryMode,
    PipelineMode, Result, StreamMode,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bench", about = "Pipeline, stream and memory benchmarks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chain of n dependent tasks.
    Pipeline(Common),
    /// Producer, dispatcher and n-1 workers on a stream.
    Stream(Common),
    /// Consecutive map-reduce rounds, sampling active objects.
    Memory(Common),
    #[command(hide = true, subcommand)]
    FuturePeer(Peer),
}

#[derive(Subcommand)]
enum Peer {
    /// Prints `ready`, then a JSON line once the result arrives.
    Consume {
        future: String,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Sets the result and prints a JSON line.
    Produce { future: String, value: String },
}

#[derive(Args)]
struct Common {
    /// Mode to run; repeat or comma-separate. All modes by default.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Worker count override.
    #[arg(long)]
    workers: Option<usize>,
    /// Payload size such as 1MB or 100kB; comma-separate to sweep.
    #[arg(long, value_delimiter = ',')]
    data_size: Vec<String>,
    /// Seconds each task sleeps.
    #[arg(long)]
    task_time: Option<f64>,
    /// Fraction of the task spent before resolving its input.
    #[arg(long)]
    overhead_frac: Option<f64>,
    #[arg(long, default_value = "memory")]
    backend: Backend,
    /// Address of an existing relay server; one is spawned otherwise.
    #[arg(long)]
    relay_addr: Option<String>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay the schedule on a simulated clock instead of running it.
    #[arg(long)]
    simulated_clock: bool,
    /// Relative task-time jitter in simulated-clock runs.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    submit_latency_ms: Option<u64>,
    /// Engine transfer bandwidth in bytes per second; 0 disables the model.
    #[arg(long)]
    engine_bandwidth: Option<f64>,
    /// Poll interval cap for futures, in milliseconds.
    #[arg(long)]
    poll_ms: Option<u64>,
    /// Items published by the stream producer.
    #[arg(long)]
    items: Option<usize>,
    /// Map-reduce rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Mapper output size.
    #[arg(long)]
    output_size: Option<String>,
    #[arg(long)]
    sample_ms: Option<u64>,
}

impl Common {
    fn configs(&self, benchmark: Benchmark) -> Result<Vec<BenchConfig>> {
        let mut cfg = BenchConfig::for_benchmark(benchmark);
        macro_rules! set {
            ($($field:ident),+) => {$(if let Some(v) = self.$field { cfg.$field = v; })+};
        }
        set!(n, task_time, overhead_frac, jitter, items, rounds);
        cfg.workers = self.workers.or(cfg.workers);
        cfg.backend = self.backend;
        cfg.relay_addr = self.relay_addr.clone();
        cfg.seed = self.seed;
        cfg.simulated_clock = self.simulated_clock;
        if let Some(ms) = self.submit_latency_ms {
            cfg.submit_latency = Duration::from_millis(ms);
        }
        if let Some(bw) = self.engine_bandwidth {
            cfg.engine_bandwidth = (bw > 0.0).then_some(bw);
        }
        if let Some(ms) = self.poll_ms {
            cfg.poll_interval = Duration::from_millis(ms);
        }
        if let Some(ms) = self.sample_ms {
            cfg.sample_interval = Duration::from_millis(ms);
        }
        if let Some(s) = &self.output_size {
            cfg.output_size = parse_size(s)?;
        }
        if self.data_size.is_empty() {
            cfg.validate()?;
            return Ok(vec![cfg]);
        }
        self.data_size
            .iter()
            .map(|s| {
                let c = BenchConfig { data_size: parse_size(s)?, ..cfg.clone() };
                c.validate()?;
                Ok(c)
            })
            .collect()
    }

    fn modes<M: Copy + std::str::FromStr<Err = proxyflow_bench::config::ConfigError>>(
        &self,
        all: &[M],
    ) -> Result<Vec<M>> {
        if self.mode.is_empty() || self.mode.iter().any(|m| m == "all") {
            return Ok(all.to_vec());
        }
        Ok(self.mode.iter().map(|m| m.parse()).collect::<std::result::Result<_, _>>()?)
    }
}

fn pipeline(args: &Common) -> Result<()> {
    let out = OutDir::create(&args.out)?;
    let modes = args.modes(PipelineMode::ALL)?;
    let mut summary = Vec::new();
    for cfg in args.configs(Benchmark::Pipeline)? {
        let mut runs = Vec::new();
        for &mode in &modes {
            info!("pipeline {mode}, d = {} bytes", cfg.data_size);
            let run = run_pipeline(&cfg, mode)?;
            let path = out.pipeline(&run)?;
            println!(
                "pipeline {:<12} makespan {:>8.3} s  ideal {:>8.3} s  -> {}",
                mode.as_str(),
                run.makespan,
                run.ideal_makespan,
                path.display()
            );
            runs.push(run);
        }
        let find = |m| runs.iter().find(|r| r.mode == m);
        let mut reductions = serde_json::Map::new();
        if let (Some(a), Some(b)) = (find(PipelineMode::NoProxy), find(PipelineMode::Proxy)) {
            reductions.insert("proxy_vs_no_proxy".into(), json!(reduction(a, b)));
        }
        if let (Some(a), Some(b)) = (find(PipelineMode::Proxy), find(PipelineMode::ProxyFuture)) {
            let r = reduction(a, b);
            println!(
                "proxy_future vs proxy: {:.1}% shorter (ideal {:.1}%)",
                100.0 * r,
                100.0 * sim::ideal_reduction(&cfg)
            );
            reductions.insert("proxy_future_vs_proxy".into(), json!(r));
            reductions.insert("ideal_proxy_future_vs_proxy".into(), json!(sim::ideal_reduction(&cfg)));
        }
        summary.push(json!({ "config": cfg, "runs": runs, "reductions": reductions }));
    }
    out.summary(&json!({ "benchmark": "pipeline", "results": summary }))?;
    Ok(())
}

fn stream(args: &Common) -> Result<()> {
    let out = OutDir::create(&args.out)?;
    let modes = args.modes(StreamMode::ALL)?;
    let mut summary = Vec::new();
    for cfg in args.configs(Benchmark::Stream)? {
        for &mode in &modes {
            info!("stream {mode}, d = {} bytes", cfg.data_size);
            let run = run_stream(&cfg, mode)?;
            let path = out.stream(&run)?;
            println!(
                "stream {:<11} d {:>10}  {:>6.2} tasks/s (ceiling {:.2})  dispatcher {:.3}% of payload  -> {}",
                mode.as_str(),
                cfg.data_size,
                run.throughput,
                run.ceiling,
                100.0 * run.dispatcher_share(),
                path.display()
            );
            summary.push(json!({ "config": cfg, "run": run }));
        }
    }
    out.summary(&json!({ "benchmark": "stream", "results": summary }))?;
    Ok(())
}

fn memory(args: &Common) -> Result<()> {
    let out = OutDir::create(&args.out)?;
    let modes = args.modes(MemoryMode::ALL)?;
    let mut summary = Vec::new();
    for cfg in args.configs(Benchmark::Memory)? {
        for &mode in &modes {
            info!("memory {mode}");
            let run = run_memory(&cfg, mode)?;
            let path = out.memory(&run)?;
            println!(
                "memory {:<10} created {:>4}  peak {:>4}  final {:>4}  -> {}",
                mode.as_str(),
                run.created,
                run.peak(),
                run.final_count,
                path.display()
            );
            summary.push(json!({ "config": cfg, "run": run, "evictions": run.evictions }));
        }
    }
    out.summary(&json!({ "benchmark": "memory", "results": summary }))?;
    Ok(())
}

fn future_peer(cmd: Peer) -> Result<()> {
    let mut stdout = io::stdout().lock();
    let line = match cmd {
        Peer::Consume { future, timeout_ms } => {
            let timeout = timeout_ms.map(Duration::from_millis);
            let got = peer::consume(&future, timeout, || {
                let _ = writeln!(io::stdout(), "ready");
                let _ = io::stdout().flush();
            })?;
            serde_json::to_string(&got)?
        }
        Peer::Produce { future, value } => serde_json::to_string(&peer::produce(&future, &value)?)?,
    };
    writeln!(stdout, "{line}")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(a) => pipeline(&a),
        Command::Stream(a) => stream(&a),
        Command::Memory(a) => memory(&a),
        Command::FuturePeer(p) => future_peer(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
