use std::time::Instant;

use serde::Serialize;

/// Column order of pipeline CSV files.
pub const PIPELINE_HEADER: [&str; 7] = [
    "task_id",
    "submit",
    "start",
    "overhead_done",
    "input_resolved",
    "compute_done",
    "result_received",
];

/// Phase timestamps of one pipeline task, in seconds from the start of the
/// run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub submit: f64,
    pub start: f64,
    pub overhead_done: f64,
    pub input_resolved: f64,
    pub compute_done: f64,
    pub result_received: f64,
    #[serde(skip)]
    pub bytes_in: u64,
    #[serde(skip)]
    pub bytes_out: u64,
}

impl TaskRecord {
    pub fn phases(&self) -> [f64; 6] {
        [
            self.submit,
            self.start,
            self.overhead_done,
            self.input_resolved,
            self.compute_done,
            self.result_received,
        ]
    }

    pub fn is_monotone(&self) -> bool {
        self.phases().windows(2).all(|w| w[0] <= w[1])
    }
}

/// Timestamps taken inside a task body.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stamps {
    pub start: f64,
    pub overhead_done: f64,
    pub input_resolved: f64,
    pub compute_done: f64,
}

/// Seconds elapsed since a fixed instant.
#[derive(Debug, Clone, Copy)]
pub struct Epoch(Instant);

impl Epoch {
    pub fn now() -> Self {
        Epoch(Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }

    pub fn instant(&self) -> Instant {
        self.0
    }
}
