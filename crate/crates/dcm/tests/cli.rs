//! Black-box checks of the `dcm-sim` binary: exit codes, output files, and
//! the on-disk formats a user would script against.

use std::fs;
use std::process::Command;

use dcm::{decode_install, encode_install, load_csv, write_csv, synthesize, Topology, TraceSpec, TwoStageFilter};

fn sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcm-sim"))
}

#[test]
fn help_exits_zero() {
    let out = sim().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["count", "single-rate", "multi-rate"] {
        assert!(text.contains(sub), "help must list the {sub} study");
    }
}

#[test]
fn unknown_flag_exits_two() {
    let out = sim().args(["count", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_topology_exits_two() {
    let out = sim().args(["count", "--topo", "ring:9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error"));
}

#[test]
fn unparseable_trace_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "not,a,trace\n1,2,3\n").unwrap();
    let out = sim()
        .args(["count", "--trace", &format!("file:{}", path.display())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn runs_are_deterministic_and_write_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str, audit: &str| {
        vec![
            "count".to_string(),
            "--topo".into(),
            "star:1x2x4".into(),
            "--trace".into(),
            "synth:800,10,zipf:1.0".into(),
            "--memory".into(),
            "65536".into(),
            "--bf-fraction".into(),
            "0.05,0.2".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            dir.path().join(out).display().to_string(),
            "--audit".into(),
            dir.path().join(audit).display().to_string(),
        ]
    };
    for (out, audit) in [("a.csv", "a.jsonl"), ("b.csv", "b.jsonl")] {
        let run = sim().args(args(out, audit)).output().unwrap();
        assert_eq!(run.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    }

    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same config and seed must reproduce the report byte for byte");
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("method,memory_bytes,param,metric,value,seed,flows,packets\n"));

    // every audit line is a standalone json object tagged with its event
    let audit = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert!(!audit.is_empty());
    for line in audit.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("event").is_some(), "untagged audit line: {line}");
    }
}

#[test]
fn dumped_filters_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("filters");
    let status = sim()
        .args([
            "count",
            "--topo",
            "star:1x2x4",
            "--trace",
            "synth:500,10,zipf:1.0",
            "--memory",
            "32768",
            "--bf-fraction",
            "0.1",
            "--method",
            "dcm",
            "--seed",
            "3",
            "--out",
        ])
        .arg(dir.path().join("report.csv"))
        .arg("--dump-filters")
        .arg(&dump)
        .status()
        .unwrap();
    assert!(status.success());

    let mut blobs = 0usize;
    for entry in fs::read_dir(fs::read_dir(&dump).unwrap().next().unwrap().unwrap().path()).unwrap() {
        let path = entry.unwrap().path();
        assert_eq!(path.extension().and_then(|e| e.to_str()), Some("tsf"));
        let bytes = fs::read(&path).unwrap();
        let (filter, used) = TwoStageFilter::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len(), "trailing bytes in {}", path.display());
        assert!(filter.memory_bytes() <= 32_768, "{} exceeds the budget", path.display());
        blobs += 1;
    }
    assert!(blobs > 0, "no filter blobs were dumped");
}

#[test]
fn trace_csv_round_trips() {
    let topo = Topology::star(1, 2, 4).unwrap();
    let spec: TraceSpec = "300,12,pareto:1.5,10".parse().unwrap();
    let flows = synthesize(&topo, &spec, 5).unwrap();
    let mut buf = Vec::new();
    write_csv(&flows, &mut buf).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    fs::write(&path, &buf).unwrap();
    assert_eq!(load_csv(&path).unwrap(), flows);
}

#[test]
fn install_message_round_trips() {
    use dcm::{ActionId, WildcardRule};
    let topo = Topology::star(1, 2, 4).unwrap();
    let spec: TraceSpec = "64,4,uniform:1,9".parse().unwrap();
    let flows = synthesize(&topo, &spec, 9).unwrap();
    let mut filter = TwoStageFilter::empty(64, 1e-3, 77).unwrap();
    filter.push_action(ActionId(4), dcm::BloomFilter::with_capacity(64, 1e-2, 78).unwrap()).unwrap();
    for f in &flows {
        filter.insert(&f.key.wire_bytes(), ActionId(4)).unwrap();
    }
    let rules = vec![
        WildcardRule::match_all(ActionId(4), 1),
        WildcardRule::ip_pair("10.0.0.1".parse().unwrap(), 32, "10.0.0.2".parse().unwrap(), 30, ActionId(4)),
    ];
    let msg = encode_install(&filter, &rules);
    let (filter2, rules2) = decode_install(&msg).unwrap();
    assert_eq!(rules2, rules);
    assert_eq!(filter2.to_bytes(), filter.to_bytes());
    for f in &flows {
        assert_eq!(filter2.classify(&f.key.wire_bytes()), filter.classify(&f.key.wire_bytes()));
    }
}
