use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use proxyflow::engine::DEFAULT_SUBMIT_LATENCY;
use serde::Serialize;

/// Payload throughput of the engine's own data path, in bytes per second.
pub const DEFAULT_ENGINE_BANDWIDTH: f64 = 100e6;

/// Poll cap used by benchmark futures.
pub const DEFAULT_BENCH_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ConfigError;

            fn from_str(s: &str) -> Result<Self, ConfigError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(ConfigError(format!(
                        "unknown {} {other:?}, expected one of: {}",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(Benchmark { Pipeline => "pipeline", Stream => "stream", Memory => "memory" });

named_enum!(Backend { Memory => "memory", File => "file", Relay => "relay" });

named_enum!(PipelineMode {
    NoProxy => "no_proxy",
    Proxy => "proxy",
    ProxyFuture => "proxy_future",
});

named_enum!(StreamMode { Direct => "direct", ProxyStream => "proxystream" });

named_enum!(MemoryMode { Default => "default", Manual => "manual", Ownership => "ownership" });

/// Parameters shared by all benchmarks. Constructors give desk-scale
/// defaults for each benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    /// Pipeline: tasks. Stream: workers plus the producer. Memory: mappers
    /// per round.
    pub n: usize,
    /// Engine workers; defaults to what the benchmark needs.
    pub workers: Option<usize>,
    /// Bytes per payload (memory: per mapper input).
    pub data_size: usize,
    /// Seconds each task sleeps.
    pub task_time: f64,
    /// Pipeline: fraction of the task time spent before resolving input.
    pub overhead_frac: f64,
    pub backend: Backend,
    pub seed: u64,
    pub simulated_clock: bool,
    /// Relative spread of simulated phase durations.
    pub jitter: f64,
    #[serde(serialize_with = "secs")]
    pub submit_latency: Duration,
    pub engine_bandwidth: Option<f64>,
    #[serde(serialize_with = "secs")]
    pub poll_interval: Duration,
    /// Stream: items published.
    pub items: usize,
    /// Memory: map-reduce rounds.
    pub rounds: usize,
    /// Memory: bytes produced by each mapper.
    pub output_size: usize,
    #[serde(serialize_with = "secs")]
    pub sample_interval: Duration,
    /// Relay backend: use this server instead of starting one.
    pub relay_addr: Option<String>,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl BenchConfig {
    fn base(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            n: 8,
            workers: None,
            data_size: 1_000_000,
            task_time: 1.0,
            overhead_frac: 0.2,
            backend: Backend::Memory,
            seed: 0,
            simulated_clock: false,
            jitter: 0.0,
            submit_latency: DEFAULT_SUBMIT_LATENCY,
            engine_bandwidth: Some(DEFAULT_ENGINE_BANDWIDTH),
            poll_interval: DEFAULT_BENCH_POLL,
            items: 42,
            rounds: 4,
            output_size: 100_000,
            sample_interval: Duration::from_millis(100),
            relay_addr: None,
        }
    }

    /// 8 tasks of 1 s producing 1 MB each.
    pub fn pipeline() -> Self {
        Self::base(Benchmark::Pipeline)
    }

    /// 7 workers fed at 7 items/s with 1 MB payloads.
    pub fn stream() -> Self {
        Self::base(Benchmark::Stream)
    }

    /// 4 rounds of 8 mappers, 1 MB in and 0.1 MB out, 0.5 s tasks.
    pub fn memory() -> Self {
        Self {
            task_time: 0.5,
            ..Self::base(Benchmark::Memory)
        }
    }

    pub fn for_benchmark(benchmark: Benchmark) -> Self {
        match benchmark {
            Benchmark::Pipeline => Self::pipeline(),
            Benchmark::Stream => Self::stream(),
            Benchmark::Memory => Self::memory(),
        }
    }

    pub fn task_duration(&self) -> Duration {
        Duration::from_secs_f64(self.task_time)
    }

    /// Stream producer rate, `(n - 1) / s` items per second.
    pub fn stream_rate(&self) -> f64 {
        (self.n as f64 - 1.0) / self.task_time
    }

    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or(match self.benchmark {
            Benchmark::Pipeline => self.n,
            Benchmark::Stream => self.n.saturating_sub(1),
            Benchmark::Memory => self.n,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_owned()));
        let min_n = if self.benchmark == Benchmark::Stream { 2 } else { 1 };
        if self.n < min_n {
            return Err(ConfigError(format!("n must be at least {min_n}")));
        }
        if !(self.task_time.is_finite() && self.task_time > 0.0) {
            return err("task time must be positive");
        }
        if !(0.0..1.0).contains(&self.overhead_frac) {
            return err("overhead fraction must be in [0, 1)");
        }
        if self.workers == Some(0) {
            return err("workers must be at least 1");
        }
        if let Some(bw) = self.engine_bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return err("engine bandwidth must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return err("jitter must be in [0, 1)");
        }
        if self.poll_interval.is_zero() {
            return err("poll interval must be positive");
        }
        match self.benchmark {
            Benchmark::Stream if self.items <= self.n => {
                err("stream needs more items than n to get past warm-up")
            }
            Benchmark::Memory if self.rounds == 0 => err("rounds must be at least 1"),
            Benchmark::Memory if self.sample_interval.is_zero() => {
                err("sample interval must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Parses a byte count such as `1000000`, `100kB`, `10MB` or `1MiB`.
pub fn parse_size(text: &str) -> Result<usize, ConfigError> {
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let scale: f64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1.0,
        "k" | "kb" => 1e3,
        "m" | "mb" => 1e6,
        "g" | "gb" => 1e9,
        "kib" => 1024.0,
        "mib" => 1024.0 * 1024.0,
        "gib" => 1024.0 * 1024.0 * 1024.0,
        _ => return Err(ConfigError(format!("bad size unit in {text:?}"))),
    };
    let value: f64 = num
        .parse()
        .map_err(|_| ConfigError(format!("bad size {text:?}")))?;
    Ok((value * scale).round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("100kB").unwrap(), 100_000);
        assert_eq!(parse_size("10MB").unwrap(), 10_000_000);
        assert_eq!(parse_size("1MiB").unwrap(), 1 << 20);
        assert_eq!(parse_size("0.5mb").unwrap(), 500_000);
        assert_eq!(parse_size("42").unwrap(), 42);
        assert!(parse_size("10 parsecs").is_err());
    }

    #[test]
    fn stream_rate_is_workers_per_task_time() {
        let c = BenchConfig { n: 8, task_time: 2.0, ..BenchConfig::stream() };
        assert_eq!(c.stream_rate(), 3.5);
        assert_eq!(c.worker_count(), 7);
    }

    #[test]
    fn validation() {
        assert!(BenchConfig::pipeline().validate().is_ok());
        assert!(BenchConfig { overhead_frac: 1.0, ..BenchConfig::pipeline() }.validate().is_err());
        assert!(BenchConfig { task_time: 0.0, ..BenchConfig::pipeline() }.validate().is_err());
        assert!(BenchConfig { n: 1, ..BenchConfig::stream() }.validate().is_err());
        assert!(BenchConfig { rounds: 0, ..BenchConfig::memory() }.validate().is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("proxy_future".parse::<PipelineMode>().unwrap(), PipelineMode::ProxyFuture);
        assert_eq!("proxystream".parse::<StreamMode>().unwrap(), StreamMode::ProxyStream);
        assert!("fast".parse::<MemoryMode>().is_err());
        assert_eq!(Backend::Relay.to_string(), "relay");
    }
}
