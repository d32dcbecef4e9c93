//! Epoch-driven simulation of the collaborative scheme itself.
//!
//! One run wires a controller to per-switch data planes and replays the
//! trace: arrivals allocate tasks and push insert-only filter updates, ends
//! release load, the periodic clocks rebuild filters, and every live flow's
//! packets traverse their path. Reports are collected and deduplicated once
//! per epoch. The sim also keeps its own ground truth: which packets each
//! flow's sampling actions were eligible for, and the last sketch snapshot
//! reported per switch and action.

use crate::cms::CountMinSketch;
use crate::controller::{Controller, ControllerConfig, FilterSizing};
use crate::flow::{ActionId, Epoch, FlowKey, PacketId};
use crate::hash::derive_seed;
use crate::sampling::{packet_hash, should_sample};
use crate::switch::{ActionKind, ActionSpec, MonitorEvent, SwitchState};
use crate::topology::{SwitchId, Topology};
use crate::trace::FlowRecord;
use crate::Result;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub(crate) struct DcmRun<'a> {
    pub topo: &'a Topology,
    pub flows: &'a [FlowRecord],
    pub paths: &'a [Vec<SwitchId>],
    /// Actions assigned to each flow, parallel to `flows`.
    pub actions: &'a [Vec<ActionId>],
    pub catalog: Vec<ActionSpec>,
    pub sizing: FilterSizing,
    pub budget: u64,
    pub seed: u64,
    pub rebuild_period: u64,
    pub check_period: u64,
    pub audit_path: Option<&'a Path>,
    pub dump_dir: Option<PathBuf>,
}

/// Last sketch reported for one (switch, action), folded over resets: if an
/// action is dropped at a rebuild and later recreated, the counts reported
/// before the reset move into `retired` so estimates never lose history.
struct Snapshot {
    last: CountMinSketch,
    retired: Option<CountMinSketch>,
}

impl Snapshot {
    fn new(sketch: CountMinSketch) -> Snapshot {
        Snapshot { last: sketch, retired: None }
    }

    fn update(&mut self, sketch: CountMinSketch) {
        if sketch.total() < self.last.total() {
            match self.retired.as_mut() {
                Some(r) => r.absorb(&self.last),
                None => self.retired = Some(self.last.clone()),
            }
        }
        self.last = sketch;
    }

    fn query(&self, key: &[u8]) -> u64 {
        let retired: u64 = self.retired.as_ref().map_or(0, |r| r.query(key) as u64);
        self.last.query(key) as u64 + retired
    }

    fn saturated(&self) -> bool {
        self.last.saturated() || self.retired.as_ref().is_some_and(|r| r.saturated())
    }
}

pub(crate) struct DcmOutcome {
    pub controller: Controller,
    snapshots: BTreeMap<(SwitchId, ActionId), Snapshot>,
    /// Deduplicated sample counts per (flow, action).
    kept: BTreeMap<(FlowKey, ActionId), u64>,
    /// Packets each (flow, action) was eligible to sample, recomputed by the
    /// sim outside the data plane.
    eligible: BTreeMap<(FlowKey, ActionId), u64>,
    pub kept_total: u64,
    pub wasted_total: u64,
    pub saturated: bool,
}

impl DcmOutcome {
    /// Final packet estimate for a counting task, read at its assigned
    /// switch. None only when the flow was never assigned.
    pub fn count_estimate(&self, flow: &FlowKey, action: ActionId) -> Option<u64> {
        let switch = self.controller.assigned_switch(*flow, action)?;
        let snap = self.snapshots.get(&(switch, action))?;
        Some(snap.query(&flow.wire_bytes()))
    }

    pub fn wasted_ratio(&self) -> f64 {
        let total = self.kept_total + self.wasted_total;
        if total == 0 {
            0.0
        } else {
            self.wasted_total as f64 / total as f64
        }
    }

    /// Eligible samples the collector never kept; zero when the assigned
    /// switches saw and admitted every packet of their flows.
    pub fn missed_samples(&self) -> u64 {
        self.eligible
            .iter()
            .map(|(key, &want)| want.saturating_sub(self.kept.get(key).copied().unwrap_or(0)))
            .sum()
    }
}

fn eligible_for(kind: ActionKind, h: f64) -> bool {
    match kind {
        ActionKind::SampleThreshold { rate } => h < rate.value(),
        ActionKind::SampleInterval { interval } => should_sample(interval, h),
        ActionKind::Count { .. } => false,
    }
}

pub(crate) fn run_dcm(run: DcmRun) -> Result<DcmOutcome> {
    assert_eq!(run.flows.len(), run.paths.len());
    assert_eq!(run.flows.len(), run.actions.len());

    let mut cfg = ControllerConfig::new(run.catalog.clone());
    cfg.sizing = run.sizing;
    cfg.rebuild_period = run.rebuild_period;
    cfg.check_period = run.check_period;
    cfg.seed = derive_seed(&[run.seed, 0x6374_726c]);
    let mut ctrl = Controller::new(cfg)?;
    if let Some(path) = run.audit_path {
        let file = fs::File::options().append(true).create(true).open(path)?;
        ctrl.set_audit(Box::new(BufWriter::new(file)));
    }

    // one hash space for the whole deployment; sketches hash independently
    let sample_seed = derive_seed(&[run.seed, 0x7361_6d70]);
    let mut switches: BTreeMap<SwitchId, SwitchState> = BTreeMap::new();
    for s in run.topo.switches() {
        let sketch_seed = derive_seed(&[run.seed, 0x736b_6574, s.0 as u64]);
        switches.insert(s, SwitchState::new(s, run.budget, &run.catalog, sample_seed, sketch_seed)?);
    }

    let kinds: BTreeMap<ActionId, ActionKind> = run.catalog.iter().map(|s| (s.id, s.kind)).collect();
    let sampling_of: Vec<Vec<(ActionId, ActionKind)>> = run
        .actions
        .iter()
        .map(|acts| {
            acts.iter()
                .map(|a| (*a, kinds[a]))
                .filter(|(_, k)| k.is_sampling())
                .collect()
        })
        .collect();

    let mut arrivals: BTreeMap<Epoch, Vec<usize>> = BTreeMap::new();
    let mut ends: BTreeMap<Epoch, Vec<usize>> = BTreeMap::new();
    for (i, f) in run.flows.iter().enumerate() {
        arrivals.entry(f.start_epoch).or_default().push(i);
        ends.entry(f.end_epoch()).or_default().push(i);
    }
    let horizon = run.flows.iter().map(|f| f.end_epoch()).max().unwrap_or(0);

    let mut snapshots: BTreeMap<(SwitchId, ActionId), Snapshot> = BTreeMap::new();
    let mut kept: BTreeMap<(FlowKey, ActionId), u64> = BTreeMap::new();
    let mut eligible: BTreeMap<(FlowKey, ActionId), u64> = BTreeMap::new();
    let mut kept_total = 0u64;
    let mut wasted_total = 0u64;
    let mut total_packets = 0u64;

    for epoch in 0..=horizon {
        if let Some(ix) = arrivals.get(&epoch) {
            for &i in ix {
                for &action in &run.actions[i] {
                    let (s, op) = ctrl.on_new_flow(run.flows[i].key, action, &run.paths[i], epoch)?;
                    op.apply(switches.get_mut(&s).expect("switch exists"))?;
                }
            }
        }
        if let Some(ix) = ends.get(&epoch) {
            for &i in ix {
                ctrl.on_flow_end(run.flows[i].key, epoch)?;
            }
        }
        for (s, filter) in ctrl.periodic_maintenance(epoch) {
            switches.get_mut(&s).expect("switch exists").install_filter(filter);
        }

        let mut epoch_events: Vec<MonitorEvent> = Vec::new();
        for (i, f) in run.flows.iter().enumerate() {
            if !f.live_at(epoch) {
                continue;
            }
            let first = f.first_ordinal(epoch);
            for j in 0..f.packets_in_epoch(epoch) {
                let pid = PacketId { flow: f.key, ordinal: (first + j) as u32 };
                total_packets += 1;
                if !sampling_of[i].is_empty() {
                    let h = packet_hash(&pid, sample_seed);
                    for &(action, kind) in &sampling_of[i] {
                        if eligible_for(kind, h) {
                            *eligible.entry((f.key, action)).or_default() += 1;
                        }
                    }
                }
                for &s in &run.paths[i] {
                    switches.get_mut(&s).expect("switch exists").process_packet(&pid);
                }
            }
        }

        for (&s, sw) in switches.iter_mut() {
            let rep = sw.report();
            for (action, sketch) in rep.sketches {
                match snapshots.entry((s, action)) {
                    Entry::Occupied(mut e) => e.get_mut().update(sketch),
                    Entry::Vacant(v) => {
                        v.insert(Snapshot::new(sketch));
                    }
                }
            }
            epoch_events.extend(rep.events);
        }
        let (kept_ev, wasted_ev) = ctrl.dedupe_reports(epoch_events);
        kept_total += kept_ev.len() as u64;
        wasted_total += wasted_ev.len() as u64;
        for e in kept_ev {
            *kept.entry((e.flow, e.action)).or_default() += 1;
        }
    }

    if let Some(dir) = &run.dump_dir {
        fs::create_dir_all(dir)?;
        for (s, sw) in &switches {
            let mut f = BufWriter::new(fs::File::create(dir.join(format!("{s}.tsf")))?);
            f.write_all(&sw.filter().to_bytes())?;
        }
    }

    // per-epoch emission must conserve the trace's packet totals
    debug_assert_eq!(total_packets, run.flows.iter().map(|f| f.packets).sum::<u64>());

    let saturated = snapshots.values().any(|s| s.saturated());
    Ok(DcmOutcome {
        controller: ctrl,
        snapshots,
        kept,
        eligible,
        kept_total,
        wasted_total,
        saturated,
    })
}
