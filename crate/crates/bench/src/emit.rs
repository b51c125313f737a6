//! CSV and JSON output of completed runs.
//!
//! | file | columns |
//! |---|---|
//! | `pipeline_<mode>.csv` | `task_id,submit,start,overhead_done,input_resolved,compute_done,result_received` |
//! | `stream_<mode>_<bytes>.csv` | `time,completed` (tasks per one-second bin) |
//! | `memory_<mode>.csv` | `time,active_objects` |
//! | `events_<name>.csv` | `at,task,phase` (simulated-clock runs) |
//! | `summary.json` | one object per run |
//!
//! All times are seconds from the start of the run, whitespace-free, so the
//! files load directly into gnuplot with `set datafile separator ','`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::memory::MemoryRun;
use crate::pipeline::PipelineRun;
use crate::record::PIPELINE_HEADER;
use crate::sim::LogEntry;
use crate::stream::StreamRun;

pub fn pipeline_csv<W: Write>(out: W, run: &PipelineRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PIPELINE_HEADER)?;
    for r in &run.records {
        w.serialize((
            r.task_id,
            r.submit,
            r.start,
            r.overhead_done,
            r.input_resolved,
            r.compute_done,
            r.result_received,
        ))?;
    }
    w.flush()?;
    Ok(())
}

pub fn stream_csv<W: Write>(out: W, run: &StreamRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "completed"])?;
    for row in run.series() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn memory_csv<W: Write>(out: W, run: &MemoryRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "active_objects"])?;
    for row in &run.samples {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn events_csv<W: Write>(out: W, log: &[LogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["at", "task", "phase"])?;
    for e in log {
        w.serialize((e.at, e.task, e.phase))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes files into one output directory, creating it if needed.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn pipeline(&self, run: &PipelineRun) -> Result<PathBuf> {
        let name = format!("pipeline_{}.csv", run.mode);
        pipeline_csv(self.file(&name)?, run)?;
        self.events(&format!("pipeline_{}", run.mode), &run.log)?;
        Ok(self.path(&name))
    }

    pub fn stream(&self, run: &StreamRun) -> Result<PathBuf> {
        let name = format!("stream_{}_{}.csv", run.mode, run.data_size);
        stream_csv(self.file(&name)?, run)?;
        self.events(&format!("stream_{}_{}", run.mode, run.data_size), &run.log)?;
        Ok(self.path(&name))
    }

    pub fn memory(&self, run: &MemoryRun) -> Result<PathBuf> {
        let name = format!("memory_{}.csv", run.mode);
        memory_csv(self.file(&name)?, run)?;
        self.events(&format!("memory_{}", run.mode), &run.log)?;
        Ok(self.path(&name))
    }

    fn events(&self, name: &str, log: &[LogEntry]) -> Result<()> {
        if !log.is_empty() {
            events_csv(self.file(&format!("events_{name}.csv"))?, log)?;
        }
        Ok(())
    }

    pub fn summary<T: Serialize>(&self, summary: &T) -> Result<PathBuf> {
        let path = self.path("summary.json");
        let mut f = self.file("summary.json")?;
        serde_json::to_writer_pretty(&mut f, summary)?;
        writeln!(f)?;
        f.flush()?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BenchConfig, PipelineMode};
    use crate::pipeline::run_pipeline;

    #[test]
    fn pipeline_csv_has_header_and_one_row_per_task() {
        let cfg = BenchConfig { n: 5, simulated_clock: true, ..BenchConfig::pipeline() };
        let run = run_pipeline(&cfg, PipelineMode::Proxy).unwrap();
        let mut buf = Vec::new();
        pipeline_csv(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "task_id,submit,start,overhead_done,input_resolved,compute_done,result_received"
        );
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn out_dir_writes_summary() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path().join("nested")).unwrap();
        let path = out.summary(&serde_json::json!({"runs": []})).unwrap();
        let back: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        assert_eq!(back["runs"], serde_json::json!([]));
    }
}
