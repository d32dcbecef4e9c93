//! Command line front end: parses study specs, runs them, emits the CSV.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! impossible budgets), 3 when an input file does not parse.

use crate::error::Error;
use crate::experiment::{self, ExperimentConfig, Method};
use crate::sampling::SampleRate;
use crate::topology::Topology;
use crate::trace::{self, FlowRecord, TraceSpec};
use crate::Result;
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dcm-sim", version, about = "Simulation studies for collaborative flow monitoring")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Counting accuracy against monitor-all and prefix aggregation
    Count(CountArgs),
    /// Sample report waste with one rate for every flow
    SingleRate(SingleRateArgs),
    /// Sample report waste with per-flow rates at given precisions
    MultiRate(MultiRateArgs),
}

#[derive(Args)]
struct Common {
    /// Topology: star:CxExH, fat-tree:K, or file:PATH (edge list)
    #[arg(long, default_value = "star:2x4x16")]
    topo: String,

    /// Trace: synth:FLOWS,EPOCHS,DIST or file:PATH (CSV)
    #[arg(long, default_value = "synth:20000,50,zipf:1.0")]
    trace: String,

    /// Method to run (dcm, monitor-all, agg-ip:S,D, agg-hash:B); repeat for
    /// several, defaults depend on the study
    #[arg(long = "method")]
    methods: Vec<String>,

    /// Per-switch memory budgets in bytes
    #[arg(long, value_delimiter = ',', default_value = "1048576")]
    memory: Vec<u64>,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Write the report CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,

    /// Controller decision log (JSON lines), truncated at startup
    #[arg(long)]
    audit: Option<PathBuf>,

    /// Dump each run's final filter blobs under this directory
    #[arg(long = "dump-filters")]
    dump_filters: Option<PathBuf>,

    /// Per-switch task thresholds
    #[arg(long, default_value = "count=5000,sample=2000")]
    rho: String,

    /// Rebuild and check periods, in epochs
    #[arg(long, default_value = "100,10")]
    period: String,

    /// Sketch rows
    #[arg(long, default_value_t = 4)]
    depth: u32,
}

#[derive(Args)]
struct CountArgs {
    #[command(flatten)]
    common: Common,

    /// Fractions of each budget spent on filters instead of the sketch
    #[arg(long = "bf-fraction", value_delimiter = ',', default_value = "0.02,0.05,0.1,0.2,0.5")]
    bf_fraction: Vec<f64>,
}

#[derive(Args)]
struct SingleRateArgs {
    #[command(flatten)]
    common: Common,

    /// Sampling rate N/M with M a power of two
    #[arg(long, default_value = "11/16")]
    rate: String,
}

#[derive(Args)]
struct MultiRateArgs {
    #[command(flatten)]
    common: Common,

    /// Rate precisions (denominator bits) to sweep
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    precision: Vec<u8>,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse { .. } => 3,
                _ => 2,
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Count(args) => {
            let cfg = build_config(&args.common)?;
            let methods = parse_methods(&args.common.methods, &[
                Method::Dcm,
                Method::MonitorAll,
                Method::AggIp { src_bits: 30, dst_bits: 30 },
            ])?;
            let report = experiment::run_flow_count(&cfg, &methods, &args.bf_fraction)?;
            emit(&args.common, &report.to_csv())
        }
        Cmd::SingleRate(args) => {
            let cfg = build_config(&args.common)?;
            let methods = parse_methods(&args.common.methods, &[
                Method::Dcm,
                Method::AggIp { src_bits: 30, dst_bits: 30 },
                Method::AggHash { bits: 16 },
            ])?;
            let rate: SampleRate = args.rate.parse()?;
            let report = experiment::run_single_rate(&cfg, &methods, rate)?;
            emit(&args.common, &report.to_csv())
        }
        Cmd::MultiRate(args) => {
            let cfg = build_config(&args.common)?;
            let methods = parse_methods(&args.common.methods, &[Method::Dcm])?;
            if methods.iter().any(|m| *m != Method::Dcm) {
                return Err(Error::Config("the multi-rate study only runs dcm".into()));
            }
            let report = experiment::run_multi_rate(&cfg, &args.precision)?;
            emit(&args.common, &report.to_csv())
        }
    }
}

fn build_config(common: &Common) -> Result<ExperimentConfig> {
    let topo = parse_topo(&common.topo)?;
    let flows = parse_trace(&common.trace, &topo, common.seed)?;
    let (count_threshold, sample_threshold) = parse_rho(&common.rho)?;
    let (rebuild_period, check_period) = parse_period(&common.period)?;
    if let Some(path) = &common.audit {
        fs::write(path, b"")?;
    }
    let mut cfg = ExperimentConfig::new(topo, flows);
    cfg.seed = common.seed;
    cfg.memories = common.memory.clone();
    cfg.count_threshold = count_threshold;
    cfg.sample_threshold = sample_threshold;
    cfg.rebuild_period = rebuild_period;
    cfg.check_period = check_period;
    cfg.sketch_depth = common.depth;
    cfg.audit_path = common.audit.clone();
    cfg.dump_dir = common.dump_filters.clone();
    Ok(cfg)
}

fn parse_methods(given: &[String], default: &[Method]) -> Result<Vec<Method>> {
    if given.is_empty() {
        return Ok(default.to_vec());
    }
    given.iter().map(|s| s.parse()).collect()
}

fn parse_topo(s: &str) -> Result<Topology> {
    let bad = || Error::Config(format!("bad topology {s:?}, want star:CxExH, fat-tree:K or file:PATH"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "star" => {
            let dims: Vec<u32> = rest
                .split('x')
                .map(|p| p.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let [cores, edges, hosts] = dims[..] else {
                return Err(bad());
            };
            Topology::star(cores, edges, hosts)
        }
        "fat-tree" => Topology::fat_tree(rest.parse().map_err(|_| bad())?),
        "file" => Topology::load(rest),
        _ => Err(bad()),
    }
}

fn parse_trace(s: &str, topo: &Topology, seed: u64) -> Result<Vec<FlowRecord>> {
    let bad = || Error::Config(format!("bad trace {s:?}, want synth:FLOWS,EPOCHS,DIST or file:PATH"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "synth" => {
            let spec: TraceSpec = rest.parse()?;
            trace::synthesize(topo, &spec, seed)
        }
        "file" => trace::load_csv(rest),
        _ => Err(bad()),
    }
}

fn parse_rho(s: &str) -> Result<(u64, u64)> {
    let bad = || Error::Config(format!("bad thresholds {s:?}, want count=N,sample=M"));
    let mut count = None;
    let mut sample = None;
    for part in s.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(bad)?;
        let value: u64 = value.parse().map_err(|_| bad())?;
        if value == 0 {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        match key {
            "count" => count = Some(value),
            "sample" => sample = Some(value),
            _ => return Err(bad()),
        }
    }
    Ok((count.ok_or_else(bad)?, sample.ok_or_else(bad)?))
}

fn parse_period(s: &str) -> Result<(u64, u64)> {
    let bad = || Error::Config(format!("bad periods {s:?}, want REBUILD,CHECK"));
    let (t, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((t.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn emit(common: &Common, csv: &str) -> Result<()> {
    match &common.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topo_specs_parse() {
        assert_eq!(parse_topo("star:2x4x8").unwrap().num_switches(), 6);
        assert_eq!(parse_topo("fat-tree:4").unwrap().num_switches(), 20);
        for bad in ["star:2x4", "star:x", "ring:5", "fat-tree:three", "plain"] {
            assert!(parse_topo(bad).is_err(), "{bad:?} parsed");
        }
    }

    #[test]
    fn rho_and_period_parse() {
        assert_eq!(parse_rho("count=5000,sample=2000").unwrap(), (5000, 2000));
        assert_eq!(parse_rho("sample=7,count=9").unwrap(), (9, 7));
        for bad in ["count=5000", "count=0,sample=1", "count=a,sample=2", "x=1,sample=2"] {
            assert!(parse_rho(bad).is_err(), "{bad:?} parsed");
        }
        assert_eq!(parse_period("100,10").unwrap(), (100, 10));
        assert!(parse_period("100").is_err());
    }

    #[test]
    fn synth_trace_builds_flows() {
        let topo = parse_topo("star:1x2x4").unwrap();
        let flows = parse_trace("synth:50,10,uniform:1,9", &topo, 1).unwrap();
        assert_eq!(flows.len(), 50);
        assert!(parse_trace("synth:50", &topo, 1).is_err());
        assert!(parse_trace("csv:foo", &topo, 1).is_err());
    }
}
