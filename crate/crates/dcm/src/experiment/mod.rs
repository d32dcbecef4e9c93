//! Whole-network simulation studies.
//!
//! Three studies share one machinery: a topology, a flow trace, and a sweep
//! over per-switch memory budgets. `run_flow_count` measures counting
//! accuracy against monitor-everything and IP-aggregation baselines,
//! `run_single_rate` measures sample report waste when every flow is sampled
//! at one rate, and `run_multi_rate` does the same with per-flow rates at a
//! given precision. Results come back as a flat metric table whose CSV form
//! is byte-stable for a fixed seed.

mod baseline;
mod sim;

use crate::error::Error;
use crate::flow::ActionId;
use crate::hash::derive_seed;
use crate::sampling::{rate_to_actions, SampleRate};
use crate::switch::{ActionSpec, RULE_BYTES, SAMPLE_RECORD_BYTES};
use crate::topology::{SwitchId, Topology};
use crate::trace::FlowRecord;
use crate::controller::FilterSizing;
use crate::Result;
use std::fmt::Display;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

pub const REPORT_HEADER: &str = "method,memory_bytes,param,metric,value,seed,flows,packets";

/// A counting action always gets id 0; interval actions use their interval
/// index, which starts at 1.
pub const COUNT_ACTION: ActionId = ActionId(0);

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topo: Topology,
    pub flows: Vec<FlowRecord>,
    pub seed: u64,
    /// Per-switch memory budgets to sweep, in bytes.
    pub memories: Vec<u64>,
    pub count_threshold: u64,
    pub sample_threshold: u64,
    pub rebuild_period: u64,
    pub check_period: u64,
    pub sketch_depth: u32,
    pub audit_path: Option<PathBuf>,
    pub dump_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(topo: Topology, flows: Vec<FlowRecord>) -> ExperimentConfig {
        ExperimentConfig {
            topo,
            flows,
            seed: 0,
            memories: vec![1 << 20],
            count_threshold: 5000,
            sample_threshold: 2000,
            rebuild_period: 100,
            check_period: 10,
            sketch_depth: 4,
            audit_path: None,
            dump_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.flows.is_empty() {
            return Err(Error::Config("the trace has no flows".into()));
        }
        if self.memories.is_empty() {
            return Err(Error::Config("need at least one memory budget".into()));
        }
        if self.sketch_depth == 0 {
            return Err(Error::Config("sketch depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dcm,
    MonitorAll,
    AggIp { src_bits: u8, dst_bits: u8 },
    AggHash { bits: u8 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dcm => "dcm",
            Method::MonitorAll => "monitor-all",
            Method::AggIp { .. } => "agg-ip",
            Method::AggHash { .. } => "agg-hash",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        let bad = |msg: &str| Error::Config(format!("method {s:?}: {msg}"));
        match s.split_once(':') {
            None => match s {
                "dcm" => Ok(Method::Dcm),
                "monitor-all" => Ok(Method::MonitorAll),
                _ => Err(bad("expected dcm, monitor-all, agg-ip:S,D or agg-hash:B")),
            },
            Some(("agg-ip", rest)) => {
                let (a, b) = rest
                    .split_once(',')
                    .ok_or_else(|| bad("agg-ip takes src,dst mask lengths"))?;
                let src_bits: u8 = a.parse().map_err(|_| bad("bad src mask length"))?;
                let dst_bits: u8 = b.parse().map_err(|_| bad("bad dst mask length"))?;
                if src_bits > 32 || dst_bits > 32 {
                    return Err(bad("mask lengths top out at 32"));
                }
                Ok(Method::AggIp { src_bits, dst_bits })
            }
            Some(("agg-hash", rest)) => {
                let bits: u8 = rest.parse().map_err(|_| bad("bad hash prefix width"))?;
                if bits == 0 || bits > 48 {
                    return Err(bad("hash prefix width must be in 1..=48"));
                }
                Ok(Method::AggHash { bits })
            }
            Some(_) => Err(bad("expected dcm, monitor-all, agg-ip:S,D or agg-hash:B")),
        }
    }
}

impl Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Method::AggIp { src_bits, dst_bits } => write!(f, "agg-ip:{src_bits},{dst_bits}"),
            Method::AggHash { bits } => write!(f, "agg-hash:{bits}"),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub method: &'static str,
    pub memory_bytes: u64,
    pub param: String,
    pub metric: &'static str,
    pub value: String,
}

/// Flat metric table for one study run.
#[derive(Debug, Clone)]
pub struct Report {
    pub seed: u64,
    pub flows: u64,
    pub packets: u64,
    pub rows: Vec<Row>,
}

impl Report {
    fn new(seed: u64, flows: u64, packets: u64) -> Report {
        Report { seed, flows, packets, rows: Vec::new() }
    }

    fn push(&mut self, method: &'static str, memory_bytes: u64, param: &str, metric: &'static str, value: impl Display) {
        let value = value.to_string();
        for field in [param, &value] {
            assert!(!field.contains(','), "report fields must stay comma-free: {field:?}");
        }
        self.rows.push(Row { method, memory_bytes, param: param.to_string(), metric, value });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method, r.memory_bytes, r.param, r.metric, r.value, self.seed, self.flows, self.packets
            )
            .unwrap();
        }
        out
    }
}

fn flow_paths(topo: &Topology, flows: &[FlowRecord]) -> Result<Vec<Vec<SwitchId>>> {
    flows.iter().map(|f| topo.route(f.src_host, f.dst_host)).collect()
}

fn total_packets(flows: &[FlowRecord]) -> u64 {
    flows.iter().map(|f| f.packets).sum()
}

fn mean_overestimate(estimates: &[Option<f64>], truth: &[u64]) -> (f64, u64) {
    let mut sum = 0.0;
    let mut covered = 0u64;
    let mut uncovered = 0u64;
    for (est, &t) in estimates.iter().zip(truth) {
        match est {
            Some(e) => {
                sum += (e - t as f64) / t as f64;
                covered += 1;
            }
            None => uncovered += 1,
        }
    }
    let mean = if covered == 0 { 0.0 } else { sum / covered as f64 };
    (mean, uncovered)
}

/// Sub-directory for one run's filter dumps, when dumping is on.
fn dump_dir_for(cfg: &ExperimentConfig, memory: u64, param: &str) -> Option<PathBuf> {
    cfg.dump_dir
        .as_ref()
        .map(|d| d.join(format!("m{memory}-{}", param.replace('=', "-"))))
}

/// All of a sampling budget goes to filter bits; errors out when it cannot
/// even hold the minimum-size filters.
fn sampling_sizing(memory: u64, actions: usize) -> Result<FilterSizing> {
    let sizing = FilterSizing::FixedBits { total_bits: memory * 8 };
    let need = sizing.max_filter_bytes(actions).expect("fixed sizing is bounded");
    if need > memory {
        return Err(Error::Config(format!(
            "{memory} bytes cannot hold filters for {actions} actions"
        )));
    }
    Ok(sizing)
}

fn dcm_sampling_rows(report: &mut Report, memory: u64, param: &str, out: &sim::DcmOutcome) {
    let missed = out.missed_samples();
    assert_eq!(missed, 0, "assigned switches must take every eligible sample");
    report.push("dcm", memory, param, "wasted_ratio", out.wasted_ratio());
    report.push("dcm", memory, param, "wasted_bytes", out.wasted_total * SAMPLE_RECORD_BYTES);
    report.push("dcm", memory, param, "kept_samples", out.kept_total);
}

/// Counting accuracy study: how close the per-flow packet estimates land to
/// the truth, per method and memory budget. For the collaborative scheme the
/// `fractions` sweep splits each budget between filters and the sketch.
pub fn run_flow_count(cfg: &ExperimentConfig, methods: &[Method], fractions: &[f64]) -> Result<Report> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    for &f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("filter fraction {f} outside (0, 1)")));
        }
    }
    let paths = flow_paths(&cfg.topo, &cfg.flows)?;
    let truth: Vec<u64> = cfg.flows.iter().map(|f| f.packets).collect();
    let mut report = Report::new(cfg.seed, cfg.flows.len() as u64, total_packets(&cfg.flows));

    for &memory in &cfg.memories {
        for method in methods {
            match *method {
                Method::Dcm => {
                    for &fraction in fractions {
                        let param = format!("bf_fraction={fraction}");
                        let (sizing, sketch_mem) = split_count_budget(memory, fraction, cfg.sketch_depth)?;
                        let catalog = vec![ActionSpec::count(COUNT_ACTION, sketch_mem, cfg.sketch_depth)
                            .with_threshold(cfg.count_threshold)];
                        let actions = vec![vec![COUNT_ACTION]; cfg.flows.len()];
                        let out = sim::run_dcm(sim::DcmRun {
                            topo: &cfg.topo,
                            flows: &cfg.flows,
                            paths: &paths,
                            actions: &actions,
                            catalog,
                            sizing,
                            budget: memory,
                            seed: cfg.seed,
                            rebuild_period: cfg.rebuild_period,
                            check_period: cfg.check_period,
                            audit_path: cfg.audit_path.as_deref(),
                            dump_dir: dump_dir_for(cfg, memory, &param),
                        })?;
                        let estimates: Vec<Option<f64>> = cfg
                            .flows
                            .iter()
                            .map(|f| out.count_estimate(&f.key, COUNT_ACTION).map(|v| v as f64))
                            .collect();
                        if !out.saturated {
                            for (est, &t) in estimates.iter().zip(&truth) {
                                let est = est.expect("every flow is assigned");
                                assert!(est >= t as f64, "sketch underestimated a flow");
                            }
                        }
                        let (ratio, _) = mean_overestimate(&estimates, &truth);
                        report.push("dcm", memory, &param, "overestimate_ratio", ratio);
                        if out.saturated {
                            report.push("dcm", memory, &param, "saturated", 1);
                        }
                    }
                }
                Method::MonitorAll => {
                    let out = baseline::run_monitor_all(
                        &cfg.topo,
                        &cfg.flows,
                        &paths,
                        memory,
                        cfg.sketch_depth,
                        cfg.seed,
                    )?;
                    let (ratio, _) = mean_overestimate(&out.estimates, &truth);
                    report.push("monitor-all", memory, "-", "overestimate_ratio", ratio);
                    if out.saturated {
                        report.push("monitor-all", memory, "-", "saturated", 1);
                    }
                }
                Method::AggIp { src_bits, dst_bits } => {
                    let param = format!("masks={src_bits}-{dst_bits}");
                    let out = baseline::run_agg_ip_count(
                        &cfg.flows,
                        &paths,
                        (src_bits, dst_bits),
                        memory,
                        cfg.sketch_depth,
                        cfg.seed,
                    )?;
                    let (ratio, uncovered) = mean_overestimate(&out.estimates, &truth);
                    report.push("agg-ip", memory, &param, "overestimate_ratio", ratio);
                    report.push("agg-ip", memory, &param, "uncovered_flows", uncovered);
                    report.push("agg-ip", memory, &param, "rules_installed", out.rules_installed);
                    if out.saturated {
                        report.push("agg-ip", memory, &param, "saturated", 1);
                    }
                }
                Method::AggHash { .. } => {
                    return Err(Error::Config("agg-hash only applies to the sampling studies".into()));
                }
            }
        }
    }
    Ok(report)
}

/// Splits a count-study budget: `fraction` of it becomes filter bits, the
/// rest holds the sketch.
fn split_count_budget(memory: u64, fraction: f64, depth: u32) -> Result<(FilterSizing, u64)> {
    let total_bits = ((memory as f64) * fraction * 8.0).floor().max(128.0) as u64;
    let sizing = FilterSizing::FixedBits { total_bits };
    let filter_bytes = sizing.max_filter_bytes(1).expect("fixed sizing is bounded");
    let sketch_mem = memory
        .checked_sub(filter_bytes)
        .filter(|&m| m >= 4 * depth as u64)
        .ok_or_else(|| {
            Error::Config(format!(
                "fraction {fraction} of {memory} bytes leaves no room for a depth-{depth} sketch"
            ))
        })?;
    Ok((sizing, sketch_mem))
}

/// One sampling rate for every flow; measures how much of the sample traffic
/// the collector throws away (duplicates and samples of the wrong flows).
pub fn run_single_rate(cfg: &ExperimentConfig, methods: &[Method], rate: SampleRate) -> Result<Report> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let paths = flow_paths(&cfg.topo, &cfg.flows)?;
    let intervals = rate_to_actions(rate);
    let catalog: Vec<ActionSpec> = intervals
        .iter()
        .map(|&i| ActionSpec::sample_interval(ActionId(i as u32), i).with_threshold(cfg.sample_threshold))
        .collect();
    let flow_actions: Vec<ActionId> = intervals.iter().map(|&i| ActionId(i as u32)).collect();
    let mut report = Report::new(cfg.seed, cfg.flows.len() as u64, total_packets(&cfg.flows));

    for &memory in &cfg.memories {
        for method in methods {
            match *method {
                Method::Dcm => {
                    let param = format!("rate={rate}");
                    let actions = vec![flow_actions.clone(); cfg.flows.len()];
                    let out = sim::run_dcm(sim::DcmRun {
                        topo: &cfg.topo,
                        flows: &cfg.flows,
                        paths: &paths,
                        actions: &actions,
                        catalog: catalog.clone(),
                        sizing: sampling_sizing(memory, catalog.len())?,
                        budget: memory,
                        seed: cfg.seed,
                        rebuild_period: cfg.rebuild_period,
                        check_period: cfg.check_period,
                        audit_path: cfg.audit_path.as_deref(),
                        dump_dir: dump_dir_for(cfg, memory, &param),
                    })?;
                    dcm_sampling_rows(&mut report, memory, &param, &out);
                }
                Method::AggIp { src_bits, dst_bits } => {
                    let param = format!("masks={src_bits}-{dst_bits}");
                    let out = baseline::run_agg_ip_sampling(
                        &cfg.flows,
                        &paths,
                        (src_bits, dst_bits),
                        rate,
                        memory,
                        cfg.seed,
                    )?;
                    baseline_sampling_rows(&mut report, "agg-ip", memory, &param, &out);
                }
                Method::AggHash { bits } => {
                    let param = format!("prefix_bits={bits}");
                    let out = baseline::run_agg_hash_sampling(
                        &cfg.flows,
                        &paths,
                        bits,
                        rate,
                        memory,
                        cfg.seed,
                    )?;
                    baseline_sampling_rows(&mut report, "agg-hash", memory, &param, &out);
                }
                Method::MonitorAll => {
                    return Err(Error::Config("monitor-all only applies to the counting study".into()));
                }
            }
        }
    }
    Ok(report)
}

fn baseline_sampling_rows(
    report: &mut Report,
    method: &'static str,
    memory: u64,
    param: &str,
    out: &baseline::SamplingOutcome,
) {
    report.push(method, memory, param, "wasted_ratio", out.wasted_ratio());
    report.push(method, memory, param, "wasted_bytes", out.wasted * SAMPLE_RECORD_BYTES);
    report.push(method, memory, param, "kept_samples", out.kept);
    report.push(method, memory, param, "uncovered_flows", out.uncovered);
}

/// Per-flow sampling rates drawn at each precision; the scheme gets one task
/// per set bit of the rate, so waste is pure false-positive overhead and has
/// to fall as filter memory grows.
pub fn run_multi_rate(cfg: &ExperimentConfig, precisions: &[u8]) -> Result<Report> {
    cfg.validate()?;
    if precisions.is_empty() {
        return Err(Error::Config("need at least one precision".into()));
    }
    let paths = flow_paths(&cfg.topo, &cfg.flows)?;
    let mut report = Report::new(cfg.seed, cfg.flows.len() as u64, total_packets(&cfg.flows));

    for &precision in precisions {
        if precision == 0 || precision > 16 {
            return Err(Error::Config(format!("precision {precision} outside 1..=16")));
        }
        let rates = flow_rates(&cfg.flows, precision, cfg.seed)?;
        let actions: Vec<Vec<ActionId>> = rates
            .iter()
            .map(|&r| rate_to_actions(r).iter().map(|&i| ActionId(i as u32)).collect())
            .collect();
        let catalog: Vec<ActionSpec> = (1..=precision)
            .map(|i| ActionSpec::sample_interval(ActionId(i as u32), i).with_threshold(cfg.sample_threshold))
            .collect();
        let param = format!("precision={precision}");

        for &memory in &cfg.memories {
            let out = sim::run_dcm(sim::DcmRun {
                topo: &cfg.topo,
                flows: &cfg.flows,
                paths: &paths,
                actions: &actions,
                catalog: catalog.clone(),
                sizing: sampling_sizing(memory, catalog.len())?,
                budget: memory,
                seed: cfg.seed,
                rebuild_period: cfg.rebuild_period,
                check_period: cfg.check_period,
                audit_path: cfg.audit_path.as_deref(),
                dump_dir: dump_dir_for(cfg, memory, &param),
            })?;
            dcm_sampling_rows(&mut report, memory, &param, &out);
        }
    }
    Ok(report)
}

/// Rates for the multi-rate study: whatever the trace pins, topped up with
/// seeded draws at `precision` bits for flows that have none.
fn flow_rates(flows: &[FlowRecord], precision: u8, seed: u64) -> Result<Vec<SampleRate>> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed,
        0x6d75_6c74_6972_6174, // study namespace
        precision as u64,
    ]));
    flows
        .iter()
        .map(|f| match f.rate {
            Some(r) => Ok(r),
            None => SampleRate::new(rng.gen_range(1..(1u32 << precision)), precision),
        })
        .collect()
}

// Budget sanity shared by the baselines: a rule table can never spend more
// than the whole budget.
pub(crate) fn rule_capacity(memory: u64, reserve: u64) -> u64 {
    memory.saturating_sub(reserve) / RULE_BYTES
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings_round_trip() {
        for (s, m) in [
            ("dcm", Method::Dcm),
            ("monitor-all", Method::MonitorAll),
            ("agg-ip:30,24", Method::AggIp { src_bits: 30, dst_bits: 24 }),
            ("agg-hash:12", Method::AggHash { bits: 12 }),
        ] {
            assert_eq!(s.parse::<Method>().unwrap(), m);
            assert_eq!(m.to_string(), s);
        }
        for bad in ["", "dcm:1", "agg-ip:33,30", "agg-ip:30", "agg-hash:0", "agg-hash:64", "x"] {
            assert!(bad.parse::<Method>().is_err(), "{bad:?} parsed");
        }
    }

    #[test]
    fn report_rows_render_in_order() {
        let mut r = Report::new(7, 3, 99);
        r.push("dcm", 1024, "bf_fraction=0.1", "overestimate_ratio", 0.25);
        r.push("agg-ip", 1024, "masks=30-30", "uncovered_flows", 2u64);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        assert_eq!(lines.next().unwrap(), "dcm,1024,bf_fraction=0.1,overestimate_ratio,0.25,7,3,99");
        assert_eq!(lines.next().unwrap(), "agg-ip,1024,masks=30-30,uncovered_flows,2,7,3,99");
        assert_eq!(lines.next(), None);
    }

    #[test]
    #[should_panic(expected = "comma-free")]
    fn report_rejects_commas_in_fields() {
        let mut r = Report::new(0, 0, 0);
        r.push("dcm", 1, "a,b", "overestimate_ratio", 0);
    }

    #[test]
    fn count_budget_split_accounts_for_every_byte() {
        let (sizing, sketch) = split_count_budget(1 << 20, 0.25, 4).unwrap();
        let filter = sizing.max_filter_bytes(1).unwrap();
        assert!(filter + sketch <= 1 << 20);
        assert!(filter >= (1 << 20) / 5, "filter share far below the fraction");
        assert!(split_count_budget(64, 0.99, 4).is_err());
    }
}
