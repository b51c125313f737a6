use std::fs;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn pipeline_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let status = bench()
        .args(["pipeline", "--simulated-clock", "--n", "6", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for mode in ["no_proxy", "proxy", "proxy_future"] {
        let text = fs::read_to_string(dir.path().join(format!("pipeline_{mode}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("task_id,submit,start,overhead_done,input_resolved,compute_done,result_received")
        );
        assert_eq!(lines.count(), 6);
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["benchmark"], "pipeline");
    assert_eq!(summary["results"][0]["runs"].as_array().unwrap().len(), 3);
    assert!(summary["results"][0]["reductions"]["proxy_future_vs_proxy"].as_f64().unwrap() > 0.0);
}

#[test]
fn memory_and_stream_modes_can_be_selected() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bench()
        .args(["memory", "--simulated-clock", "--mode", "ownership", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    let text = fs::read_to_string(dir.path().join("memory_ownership.csv")).unwrap();
    assert!(text.starts_with("time,active_objects\n"));
    assert!(text.trim_end().ends_with(",0"));
    assert!(!dir.path().join("memory_default.csv").exists());

    let ok = bench()
        .args(["stream", "--simulated-clock", "--mode", "proxystream", "--data-size", "100kB", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    let text = fs::read_to_string(dir.path().join("stream_proxystream_100000.csv")).unwrap();
    assert!(text.starts_with("time,completed\n"));
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["pipeline", "--mode", "fastest"],
        vec!["pipeline", "--overhead-frac", "1.5"],
        vec!["stream", "--data-size", "ten"],
        vec!["memory", "--backend", "tape"],
    ] {
        let out = bench().args(&args).arg("--out").arg(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
