//! Central controller: task placement, filter construction, periodic
//! reconstruction, and report post-processing.
//!
//! The controller owns the authoritative copy of every switch's filters (the
//! replicas); switches only ever receive installs derived from them. Flow
//! arrival and departure are handled immediately with insert-only updates,
//! while resizing happens on two periodic clocks: a cheap analytic
//! false-positive check every `check_period` epochs and a full rebuild from
//! live flows every `rebuild_period` epochs.

use crate::bloom::{false_positive_rate, size_for, BloomFilter};
use crate::error::Error;
use crate::flow::{ActionId, Epoch, FlowKey};
use crate::hash::derive_seed;
use crate::switch::{ActionSpec, MonitorEvent, SwitchState};
use crate::topology::SwitchId;
use crate::two_stage::TwoStageFilter;
use crate::Result;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

/// How filters are sized when (re)built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSizing {
    /// Size each filter for its live flow count at the configured fp targets.
    ByFpTarget,
    /// Spend a fixed per-switch bit budget: the admission filter gets half,
    /// the rest is split evenly over the deployment's actions. Hash counts
    /// then come from the fp targets rather than the (varying) fill.
    FixedBits { total_bits: u64 },
}

impl FilterSizing {
    // byte-aligned so the per-filter ceil(m/8) cannot overshoot the budget
    pub(crate) fn fixed_adm_bits(total: u64) -> u64 {
        ((total / 2) & !7).max(64)
    }

    pub(crate) fn fixed_act_bits(total: u64, actions: usize) -> u64 {
        (((total - total / 2) / actions.max(1) as u64) & !7).max(64)
    }

    /// Largest possible installed footprint of one switch's filters, with
    /// every one of `actions` hosted. Unbounded (None) when sizing tracks
    /// the live flow count instead of a budget.
    pub fn max_filter_bytes(&self, actions: usize) -> Option<u64> {
        match *self {
            FilterSizing::ByFpTarget => None,
            FilterSizing::FixedBits { total_bits } => Some(
                Self::fixed_adm_bits(total_bits).div_ceil(8)
                    + actions as u64 * Self::fixed_act_bits(total_bits, actions).div_ceil(8),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub actions: Vec<ActionSpec>,
    pub adm_fp_target: f64,
    pub act_fp_target: f64,
    pub sizing: FilterSizing,
    /// T: full reconstruction period, in epochs.
    pub rebuild_period: u64,
    /// T': analytic fp check period, in epochs. Must divide into life before
    /// the next rebuild, i.e. be strictly smaller than `rebuild_period`.
    pub check_period: u64,
    pub seed: u64,
}

impl ControllerConfig {
    pub fn new(actions: Vec<ActionSpec>) -> ControllerConfig {
        ControllerConfig {
            actions,
            adm_fp_target: 1e-4,
            act_fp_target: 1e-2,
            sizing: FilterSizing::ByFpTarget,
            rebuild_period: 100,
            check_period: 10,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::InvalidParameter("controller needs at least one action".into()));
        }
        if self.check_period == 0 || self.check_period >= self.rebuild_period {
            return Err(Error::InvalidParameter(format!(
                "check period {} must be in 1..rebuild period {}",
                self.check_period, self.rebuild_period
            )));
        }
        for fp in [self.adm_fp_target, self.act_fp_target] {
            if !(fp > 0.0 && fp < 1.0) {
                return Err(Error::InvalidParameter(format!("fp target {fp} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One (flow, action) monitoring assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorTask {
    pub flow: FlowKey,
    pub action: ActionId,
    pub path: Vec<SwitchId>,
    pub switch: SwitchId,
    pub start_epoch: Epoch,
    pub end_epoch: Option<Epoch>,
    /// Which placement tier chose the switch (0 = placed externally).
    pub tier: u8,
}

impl MonitorTask {
    pub fn is_live(&self) -> bool {
        self.end_epoch.is_none()
    }
}

/// Update pushed to one switch after a flow arrival.
#[derive(Debug, Clone)]
pub enum InstallOp {
    /// Replace the whole filter (structure changed: new switch or new action).
    Full(TwoStageFilter),
    /// Insert one flow into the already-installed filter.
    Insert { flow: FlowKey, action: ActionId },
}

impl InstallOp {
    pub fn apply(self, sw: &mut SwitchState) -> Result<()> {
        match self {
            InstallOp::Full(filter) => sw.install_filter(filter),
            InstallOp::Insert { flow, action } => sw.insert_flow(&flow, action)?,
        }
        Ok(())
    }
}

/// Where audit records go; one JSON object per line.
pub type AuditSink = Box<dyn Write>;

#[derive(serde::Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum AuditRecord<'a> {
    Allocate {
        epoch: Epoch,
        flow: &'a FlowKey,
        action: ActionId,
        switch: SwitchId,
        tier: u8,
        load: u64,
    },
    Rebuild {
        epoch: Epoch,
        switch: SwitchId,
        reason: &'a str,
        live_flows: u64,
        filters: usize,
    },
    Dedupe {
        epoch: Epoch,
        kept: usize,
        wasted: usize,
    },
}

pub struct Controller {
    cfg: ControllerConfig,
    specs: BTreeMap<ActionId, ActionSpec>,
    tasks: BTreeMap<(FlowKey, ActionId), MonitorTask>,
    assignments: BTreeMap<(SwitchId, ActionId), BTreeSet<FlowKey>>,
    live_load: BTreeMap<(SwitchId, ActionId), u64>,
    hosted: BTreeMap<SwitchId, BTreeSet<ActionId>>,
    replicas: BTreeMap<SwitchId, TwoStageFilter>,
    generation: BTreeMap<SwitchId, u64>,
    now: Epoch,
    audit: Option<AuditSink>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Controller> {
        cfg.validate()?;
        let mut specs = BTreeMap::new();
        for spec in &cfg.actions {
            if specs.insert(spec.id, *spec).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate action {}", spec.id)));
            }
        }
        Ok(Controller {
            cfg,
            specs,
            tasks: BTreeMap::new(),
            assignments: BTreeMap::new(),
            live_load: BTreeMap::new(),
            hosted: BTreeMap::new(),
            replicas: BTreeMap::new(),
            generation: BTreeMap::new(),
            now: 0,
            audit: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn set_audit(&mut self, sink: AuditSink) {
        self.audit = Some(sink);
    }

    fn audit(&mut self, record: AuditRecord) {
        if let Some(sink) = self.audit.as_mut() {
            serde_json::to_writer(&mut *sink, &record).expect("audit serialization");
            sink.write_all(b"\n").expect("audit write");
        }
    }

    fn hosts_action(&self, s: SwitchId, action: ActionId) -> bool {
        self.hosted.get(&s).is_some_and(|set| set.contains(&action))
    }

    pub fn live_load(&self, s: SwitchId, action: ActionId) -> u64 {
        self.live_load.get(&(s, action)).copied().unwrap_or(0)
    }

    pub fn hosted_actions(&self, s: SwitchId) -> Vec<ActionId> {
        self.hosted.get(&s).map(|set| set.iter().copied().collect()).unwrap_or_default()
    }

    /// Distinct live flows assigned to the switch over all actions; the
    /// admission filter's population.
    pub fn live_flows_assigned(&self, s: SwitchId) -> u64 {
        let mut seen = BTreeSet::new();
        for action in self.hosted_actions(s) {
            if let Some(flows) = self.assignments.get(&(s, action)) {
                for f in flows {
                    if self.tasks[&(*f, action)].is_live() {
                        seen.insert(*f);
                    }
                }
            }
        }
        seen.len() as u64
    }

    pub fn task(&self, flow: FlowKey, action: ActionId) -> Option<&MonitorTask> {
        self.tasks.get(&(flow, action))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &MonitorTask> {
        self.tasks.values()
    }

    pub fn assigned_switch(&self, flow: FlowKey, action: ActionId) -> Option<SwitchId> {
        self.tasks.get(&(flow, action)).map(|t| t.switch)
    }

    pub fn replica(&self, s: SwitchId) -> Option<&TwoStageFilter> {
        self.replicas.get(&s)
    }

    pub fn replica_switches(&self) -> impl Iterator<Item = SwitchId> + '_ {
        self.replicas.keys().copied()
    }

    pub fn generation(&self, s: SwitchId) -> u64 {
        self.generation.get(&s).copied().unwrap_or(0)
    }

    /// Picks the switch that will monitor `flow` for `action`, in three
    /// tiers: (1) the least-loaded path switch already hosting the action
    /// under its threshold; (2) otherwise a path switch without the action,
    /// fewest hosted actions first, which creates the action there;
    /// (3) otherwise everything is saturated and the least-loaded switch
    /// takes the overflow. Ties always break toward the lowest switch id.
    pub fn allocate(&mut self, flow: FlowKey, action: ActionId, path: &[SwitchId]) -> Result<SwitchId> {
        if path.is_empty() {
            return Err(Error::EmptyPath);
        }
        let spec = *self.specs.get(&action).ok_or(Error::UnknownAction(action))?;
        if self.tasks.contains_key(&(flow, action)) {
            return Err(Error::InvalidParameter(format!(
                "flow {flow} already assigned for {action}"
            )));
        }

        let tier1 = path
            .iter()
            .copied()
            .filter(|&s| self.hosts_action(s, action) && self.live_load(s, action) < spec.threshold)
            .min_by_key(|&s| (self.live_load(s, action), s));
        let (switch, tier) = if let Some(s) = tier1 {
            (s, 1)
        } else if let Some(s) = path
            .iter()
            .copied()
            .filter(|&s| !self.hosts_action(s, action))
            .min_by_key(|&s| (self.hosted.get(&s).map_or(0, |set| set.len()), s))
        {
            (s, 2)
        } else {
            let s = path
                .iter()
                .copied()
                .min_by_key(|&s| (self.live_load(s, action), s))
                .unwrap();
            (s, 3)
        };

        // tier 3 can land on a switch that never hosted the action
        self.hosted.entry(switch).or_default().insert(action);
        self.record_task(flow, action, path.to_vec(), switch, tier);
        Ok(switch)
    }

    /// Records an assignment decided outside the tier policy (the rule-table
    /// baselines place by rule cover, not by load).
    pub fn register_task(
        &mut self,
        flow: FlowKey,
        action: ActionId,
        path: &[SwitchId],
        switch: SwitchId,
    ) -> Result<()> {
        if !self.specs.contains_key(&action) {
            return Err(Error::UnknownAction(action));
        }
        if !path.contains(&switch) {
            return Err(Error::InvalidParameter(format!("{switch} is not on the flow's path")));
        }
        if self.tasks.contains_key(&(flow, action)) {
            return Err(Error::InvalidParameter(format!(
                "flow {flow} already assigned for {action}"
            )));
        }
        self.hosted.entry(switch).or_default().insert(action);
        self.record_task(flow, action, path.to_vec(), switch, 0);
        Ok(())
    }

    fn record_task(&mut self, flow: FlowKey, action: ActionId, path: Vec<SwitchId>, switch: SwitchId, tier: u8) {
        self.assignments.entry((switch, action)).or_default().insert(flow);
        *self.live_load.entry((switch, action)).or_insert(0) += 1;
        let load = self.live_load[&(switch, action)];
        self.tasks.insert(
            (flow, action),
            MonitorTask {
                flow,
                action,
                path,
                switch,
                start_epoch: self.now,
                end_epoch: None,
                tier,
            },
        );
        self.audit(AuditRecord::Allocate { epoch: self.now, flow: &flow, action, switch, tier, load });
    }

    fn adm_seed(&self, s: SwitchId) -> u64 {
        derive_seed(&[self.cfg.seed, s.0 as u64, self.generation(s), 0])
    }

    fn act_seed(&self, s: SwitchId) -> u64 {
        // one seed per switch generation: all per-action filters share it
        derive_seed(&[self.cfg.seed, s.0 as u64, self.generation(s), 1])
    }

    /// Hash count for a fixed-size filter, from the fp target it is meant to
    /// operate at (the optimum `-log2(target)` when filled to design load).
    fn target_hashes(target_fp: f64) -> u32 {
        (-target_fp.log2()).round().max(1.0) as u32
    }

    fn new_adm_filter(&self, s: SwitchId, live: u64) -> BloomFilter {
        match self.cfg.sizing {
            FilterSizing::ByFpTarget => {
                BloomFilter::with_capacity(live.max(1), self.cfg.adm_fp_target, self.adm_seed(s))
            }
            FilterSizing::FixedBits { total_bits } => BloomFilter::new(
                FilterSizing::fixed_adm_bits(total_bits),
                Self::target_hashes(self.cfg.adm_fp_target),
                self.adm_seed(s),
            ),
        }
        .expect("validated sizing")
    }

    fn new_act_filter(&self, s: SwitchId, live: u64) -> BloomFilter {
        match self.cfg.sizing {
            FilterSizing::ByFpTarget => {
                BloomFilter::with_capacity(live.max(1), self.cfg.act_fp_target, self.act_seed(s))
            }
            FilterSizing::FixedBits { total_bits } => BloomFilter::new(
                FilterSizing::fixed_act_bits(total_bits, self.specs.len()),
                Self::target_hashes(self.cfg.act_fp_target),
                self.act_seed(s),
            ),
        }
        .expect("validated sizing")
    }

    fn live_members(&self, s: SwitchId, action: ActionId) -> Vec<FlowKey> {
        self.assignments
            .get(&(s, action))
            .map(|flows| {
                flows
                    .iter()
                    .copied()
                    .filter(|f| self.tasks[&(*f, action)].is_live())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Rebuilds the switch's filters from its live flows, freshly seeded and
    /// sized per the sizing policy, stores the replica, and returns a copy
    /// for installation.
    pub fn build_filters(&mut self, s: SwitchId) -> TwoStageFilter {
        *self.generation.entry(s).or_insert(0) += 1;
        let actions = self.hosted_actions(s);
        let mut members: BTreeMap<ActionId, Vec<FlowKey>> = BTreeMap::new();
        let mut all: BTreeSet<FlowKey> = BTreeSet::new();
        for &a in &actions {
            let live = self.live_members(s, a);
            all.extend(live.iter().copied());
            members.insert(a, live);
        }

        let mut adm = self.new_adm_filter(s, all.len() as u64);
        for f in &all {
            adm.insert(&f.wire_bytes());
        }
        let mut acts = Vec::with_capacity(actions.len());
        for (a, flows) in &members {
            let mut bf = self.new_act_filter(s, flows.len() as u64);
            for f in flows {
                bf.insert(&f.wire_bytes());
            }
            acts.push((*a, bf));
        }
        let filter = TwoStageFilter::from_parts(adm, acts).expect("distinct hosted actions");
        self.replicas.insert(s, filter.clone());
        filter
    }

    /// Flow arrival: place it, update the replica insert-only, and return the
    /// install for the chosen switch. A switch or action seen for the first
    /// time grows the replica's structure (a full install); otherwise the
    /// delta is a single insert. Existing filters are never resized here.
    pub fn on_new_flow(
        &mut self,
        flow: FlowKey,
        action: ActionId,
        path: &[SwitchId],
        epoch: Epoch,
    ) -> Result<(SwitchId, InstallOp)> {
        self.now = epoch;
        let s = self.allocate(flow, action, path)?;
        let spec = self.specs[&action];

        let mut structural = false;
        if !self.replicas.contains_key(&s) {
            self.generation.insert(s, 1);
            // capacity hint for the first mid-period filter: the threshold is
            // how many flows the switch is expected to take before spilling
            let adm = self.new_adm_filter(s, spec.threshold);
            self.replicas.insert(
                s,
                TwoStageFilter::from_parts(adm, Vec::new()).expect("no actions yet"),
            );
            structural = true;
        }
        if !self.replicas[&s].has_action(action) {
            let bf = self.new_act_filter(s, spec.threshold);
            let replica = self.replicas.get_mut(&s).unwrap();
            replica.push_action(action, bf).expect("action absent");
            structural = true;
        }

        let replica = self.replicas.get_mut(&s).unwrap();
        replica.insert(&flow.wire_bytes(), action).expect("action present");
        let op = if structural {
            InstallOp::Full(replica.clone())
        } else {
            InstallOp::Insert { flow, action }
        };
        Ok((s, op))
    }

    /// Flow departure: the tasks end, loads drop, filters stay as they are
    /// until the periodic clocks clean up.
    pub fn on_flow_end(&mut self, flow: FlowKey, epoch: Epoch) -> Result<()> {
        self.now = epoch;
        let keys: Vec<(FlowKey, ActionId)> = self
            .tasks
            .range((flow, ActionId(0))..=(flow, ActionId(u32::MAX)))
            .map(|(k, _)| *k)
            .collect();
        if keys.is_empty() {
            return Err(Error::UnknownFlow(flow));
        }
        for key in keys {
            let task = self.tasks.get_mut(&key).unwrap();
            if task.is_live() {
                task.end_epoch = Some(epoch);
                let load = self.live_load.get_mut(&(task.switch, key.1)).unwrap();
                *load -= 1;
            }
        }
        Ok(())
    }

    /// True if any of the switch's filters exceeds its analytic fp target at
    /// the current live population and resizing for that population would
    /// actually lower it. The second clause keeps freshly built filters
    /// quiet: rounding in the sizing can leave them a hair over target, and
    /// fixed-budget filters cannot improve by rebuilding at all.
    fn over_fp_target(&self, s: SwitchId) -> bool {
        let needs_rebuild = |n: u64, bf: &BloomFilter, target: f64| {
            let current = false_positive_rate(n, bf.num_bits(), bf.num_hashes()).unwrap();
            if current <= target {
                return false;
            }
            let (m, k) = match self.cfg.sizing {
                FilterSizing::ByFpTarget => size_for(n.max(1), target).unwrap(),
                FilterSizing::FixedBits { .. } => (bf.num_bits(), bf.num_hashes()),
            };
            false_positive_rate(n, m, k).unwrap() < current
        };
        let Some(replica) = self.replicas.get(&s) else { return false };
        if needs_rebuild(self.live_flows_assigned(s), replica.adm(), self.cfg.adm_fp_target) {
            return true;
        }
        replica
            .actions()
            .any(|(a, bf)| needs_rebuild(self.live_load(s, a), bf, self.cfg.act_fp_target))
    }

    /// Runs the periodic clocks for `epoch` and returns the filters to
    /// reinstall. Every `rebuild_period` epochs all switches are rebuilt from
    /// live flows (ended flows leave the filters and the books); otherwise,
    /// every `check_period` epochs any switch whose analytic fp exceeds its
    /// target is rebuilt immediately.
    pub fn periodic_maintenance(&mut self, epoch: Epoch) -> Vec<(SwitchId, TwoStageFilter)> {
        self.now = epoch;
        let mut out = Vec::new();
        if epoch % self.cfg.rebuild_period == 0 {
            self.prune_ended();
            for s in self.replicas.keys().copied().collect::<Vec<_>>() {
                let filter = self.build_filters(s);
                self.audit_rebuild(epoch, s, "period", &filter);
                out.push((s, filter));
            }
        } else if epoch % self.cfg.check_period == 0 {
            for s in self.replicas.keys().copied().collect::<Vec<_>>() {
                if self.over_fp_target(s) {
                    let filter = self.build_filters(s);
                    self.audit_rebuild(epoch, s, "fp_check", &filter);
                    out.push((s, filter));
                }
            }
        }
        out
    }

    fn audit_rebuild(&mut self, epoch: Epoch, s: SwitchId, reason: &str, filter: &TwoStageFilter) {
        let live = self.live_flows_assigned(s);
        let filters = 1 + filter.action_count();
        self.audit(AuditRecord::Rebuild { epoch, switch: s, reason, live_flows: live, filters });
    }

    /// Drops ended flows from the assignment books; hosted actions left with
    /// no live flows disappear (their next rebuild omits the filter).
    fn prune_ended(&mut self) {
        let tasks = &self.tasks;
        for ((_, action), flows) in self.assignments.iter_mut() {
            let action = *action;
            flows.retain(|f| tasks[&(*f, action)].is_live());
        }
        self.assignments.retain(|_, flows| !flows.is_empty());
        let assignments = &self.assignments;
        for (&s, actions) in self.hosted.iter_mut() {
            actions.retain(|a| assignments.contains_key(&(s, *a)));
        }
        self.hosted.retain(|_, actions| !actions.is_empty());
    }

    /// Which switches would wrongly believe they monitor `flow` for
    /// `action`: every path switch whose replica classifies the flow into
    /// the action, minus the assigned switch.
    pub fn detect_false_positives(&self, flow: FlowKey, action: ActionId) -> Result<BTreeSet<SwitchId>> {
        let task = self
            .tasks
            .get(&(flow, action))
            .ok_or(Error::UnknownFlow(flow))?;
        let key = flow.wire_bytes();
        Ok(task
            .path
            .iter()
            .copied()
            .filter(|&s| s != task.switch)
            .filter(|s| {
                self.replicas
                    .get(s)
                    .is_some_and(|r| r.classify(&key).contains(&action))
            })
            .collect())
    }

    /// Splits reported events into kept and wasted: an event is kept exactly
    /// when its (flow, action) task is assigned to the reporting switch, so
    /// duplicates from false-positive switches and samples of never-assigned
    /// flows all land in the wasted pile.
    pub fn dedupe_reports(&mut self, events: Vec<MonitorEvent>) -> (Vec<MonitorEvent>, Vec<MonitorEvent>) {
        let (kept, wasted): (Vec<_>, Vec<_>) = events.into_iter().partition(|e| {
            self.tasks
                .get(&(e.flow, e.action))
                .is_some_and(|t| t.switch == e.switch)
        });
        self.audit(AuditRecord::Dedupe { epoch: self.now, kept: kept.len(), wasted: wasted.len() });
        (kept, wasted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::switch::MonitorEventKind;
    use std::net::Ipv4Addr;
    use std::sync::{Arc, Mutex};

    const A: ActionId = ActionId(0);
    const B: ActionId = ActionId(1);
    const RHO: u64 = 8;

    fn flow(i: u32) -> FlowKey {
        FlowKey::new(
            Ipv4Addr::from(0x0a00_0000 | i),
            Ipv4Addr::new(10, 200, 0, 1),
            2000 + (i % 60_000) as u16,
            443,
            6,
        )
    }

    fn cfg() -> ControllerConfig {
        let mut c = ControllerConfig::new(vec![
            ActionSpec::count(A, 1 << 12, 4).with_threshold(RHO),
            ActionSpec::count(B, 1 << 12, 4).with_threshold(RHO),
        ]);
        c.rebuild_period = 100;
        c.check_period = 10;
        c
    }

    fn controller() -> Controller {
        Controller::new(cfg()).unwrap()
    }

    const S1: SwitchId = SwitchId(1);
    const S2: SwitchId = SwitchId(2);
    const S3: SwitchId = SwitchId(3);

    #[test]
    fn rejects_check_period_at_or_above_rebuild() {
        let mut c = cfg();
        c.check_period = 100;
        assert!(Controller::new(c).is_err());
        let mut c = cfg();
        c.check_period = 120;
        assert!(Controller::new(c).is_err());
    }

    #[test]
    fn loaded_host_under_threshold_beats_fresh_switch() {
        let mut c = controller();
        for i in 0..RHO as u32 - 1 {
            c.allocate(flow(i), A, &[S1]).unwrap();
        }
        // S1 sits at rho-1 and still wins over the empty S2
        let s = c.allocate(flow(100), A, &[S1, S2]).unwrap();
        assert_eq!(s, S1);
        assert_eq!(c.task(flow(100), A).unwrap().tier, 1);
    }

    #[test]
    fn threshold_spills_to_a_switch_without_the_action() {
        let mut c = controller();
        for i in 0..RHO as u32 {
            c.allocate(flow(i), A, &[S1]).unwrap();
        }
        let s = c.allocate(flow(100), A, &[S1, S2]).unwrap();
        assert_eq!(s, S2);
        assert_eq!(c.task(flow(100), A).unwrap().tier, 2);
        assert!(c.hosted_actions(S2).contains(&A));
    }

    #[test]
    fn spill_prefers_fewest_hosted_actions() {
        let mut c = controller();
        for i in 0..RHO as u32 {
            c.allocate(flow(i), A, &[S1]).unwrap();
        }
        // S2 already hosts B; S3 hosts nothing and must win the spill
        c.allocate(flow(200), B, &[S2]).unwrap();
        let s = c.allocate(flow(100), A, &[S1, S2, S3]).unwrap();
        assert_eq!(s, S3);
    }

    #[test]
    fn all_saturated_takes_least_loaded_lowest_id() {
        let mut c = controller();
        for i in 0..RHO as u32 {
            c.allocate(flow(i), A, &[S1]).unwrap();
            c.allocate(flow(1000 + i), A, &[S2]).unwrap();
        }
        let s = c.allocate(flow(100), A, &[S1, S2]).unwrap();
        assert_eq!(s, S1, "equal overload must tie-break to the lowest id");
        assert_eq!(c.task(flow(100), A).unwrap().tier, 3);
        // S1 now carries one extra; the next overflow goes to S2
        let s = c.allocate(flow(101), A, &[S1, S2]).unwrap();
        assert_eq!(s, S2);
    }

    #[test]
    fn allocate_error_cases() {
        let mut c = controller();
        assert!(matches!(c.allocate(flow(1), A, &[]), Err(Error::EmptyPath)));
        assert!(matches!(
            c.allocate(flow(1), ActionId(77), &[S1]),
            Err(Error::UnknownAction(ActionId(77)))
        ));
        c.allocate(flow(1), A, &[S1]).unwrap();
        assert!(c.allocate(flow(1), A, &[S1]).is_err(), "double assignment");
        c.allocate(flow(1), B, &[S1]).unwrap();
    }

    #[test]
    fn first_flow_full_install_then_inserts() {
        let mut c = controller();
        let (s, op) = c.on_new_flow(flow(1), A, &[S1], 0).unwrap();
        assert_eq!(s, S1);
        assert!(matches!(op, InstallOp::Full(_)));
        let (_, op) = c.on_new_flow(flow(2), A, &[S1], 0).unwrap();
        assert!(matches!(op, InstallOp::Insert { .. }));
        // a new action on the same switch grows the structure again
        let (_, op) = c.on_new_flow(flow(3), B, &[S1], 1).unwrap();
        assert!(matches!(op, InstallOp::Full(_)));
    }

    #[test]
    fn replicas_track_installed_switch_state() {
        let mut c = controller();
        let mut sw = SwitchState::new(S1, 1 << 20, &cfg().actions, 7, 8).unwrap();
        for (i, epoch) in [(1u32, 0u64), (2, 0), (3, 1), (4, 2)] {
            let (s, op) = c.on_new_flow(flow(i), A, &[S1], epoch).unwrap();
            assert_eq!(s, S1);
            op.apply(&mut sw).unwrap();
            assert_eq!(
                sw.filter().to_bytes(),
                c.replica(S1).unwrap().to_bytes(),
                "replica must stay bit-identical after every install"
            );
        }
        for (s, filter) in c.periodic_maintenance(100) {
            assert_eq!(s, S1);
            sw.install_filter(filter);
        }
        assert_eq!(sw.filter().to_bytes(), c.replica(S1).unwrap().to_bytes());
    }

    #[test]
    fn flow_end_releases_load_but_not_filters(){
        let mut c = controller();
        c.on_new_flow(flow(1), A, &[S1], 0).unwrap();
        c.on_new_flow(flow(2), A, &[S1], 0).unwrap();
        let before = c.replica(S1).unwrap().clone();
        c.on_flow_end(flow(1), 3).unwrap();
        assert_eq!(c.live_load(S1, A), 1);
        assert_eq!(c.replica(S1).unwrap(), &before, "filters untouched on flow end");
        assert_eq!(c.task(flow(1), A).unwrap().end_epoch, Some(3));
        // ending again is a no-op, unknown flows are an error
        c.on_flow_end(flow(1), 4).unwrap();
        assert_eq!(c.live_load(S1, A), 1);
        assert!(matches!(c.on_flow_end(flow(9), 4), Err(Error::UnknownFlow(_))));
    }

    #[test]
    fn flow_end_covers_every_action_of_the_flow() {
        let mut c = controller();
        c.on_new_flow(flow(1), A, &[S1], 0).unwrap();
        c.on_new_flow(flow(1), B, &[S1], 0).unwrap();
        c.on_flow_end(flow(1), 5).unwrap();
        assert_eq!(c.live_load(S1, A), 0);
        assert_eq!(c.live_load(S1, B), 0);
    }

    #[test]
    fn rebuild_resizes_to_live_flows_and_drops_the_dead() {
        let mut c = controller();
        for i in 0..200u32 {
            c.on_new_flow(flow(i), A, &[S1], 0).unwrap();
        }
        for i in 0..150u32 {
            c.on_flow_end(flow(i), 10).unwrap();
        }
        let installs = c.periodic_maintenance(100);
        assert_eq!(installs.len(), 1);
        let filter = &installs[0].1;
        let (m, k) = size_for(50, c.config().adm_fp_target).unwrap();
        assert_eq!(filter.adm().num_bits(), m);
        assert_eq!(filter.adm().num_hashes(), k);
        assert_eq!(filter.adm().inserted(), 50);
        // live flows still classify, structure intact
        for i in 150..200u32 {
            assert_eq!(filter.classify(&flow(i).wire_bytes()), vec![A]);
        }
    }

    #[test]
    fn rebuild_drops_actions_with_no_live_flows() {
        let mut c = controller();
        c.on_new_flow(flow(1), A, &[S1], 0).unwrap();
        c.on_new_flow(flow(2), B, &[S1], 0).unwrap();
        c.on_flow_end(flow(2), 1).unwrap();
        let installs = c.periodic_maintenance(100);
        let filter = &installs[0].1;
        assert!(filter.has_action(A));
        assert!(!filter.has_action(B), "empty action must disappear at rebuild");
        assert!(!c.hosted_actions(S1).contains(&B));
    }

    #[test]
    fn fp_check_rebuilds_overfull_filters() {
        let mut c = controller();
        // threshold 8 sizes the first mid-period filter tiny; 200 live flows
        // blow way past the admission fp target
        for i in 0..200u32 {
            c.on_new_flow(flow(i), A, &[S1], 1).unwrap();
        }
        let gen_before = c.generation(S1);
        assert!(c.periodic_maintenance(15).is_empty(), "not a check epoch");
        let installs = c.periodic_maintenance(20);
        assert_eq!(installs.len(), 1, "fp check must trigger a rebuild");
        assert_eq!(c.generation(S1), gen_before + 1);
        let (m, k) = size_for(200, c.config().adm_fp_target).unwrap();
        assert_eq!(installs[0].1.adm().num_bits(), m);
        assert_eq!(installs[0].1.adm().num_hashes(), k);
        // rebuilt to target: the next check is quiet
        assert!(c.periodic_maintenance(30).is_empty());
    }

    #[test]
    fn detect_false_positives_excludes_assigned_switch() {
        let mut c = controller();
        c.on_new_flow(flow(1), A, &[S1, S2], 0).unwrap();
        let hits = c.detect_false_positives(flow(1), A).unwrap();
        assert!(!hits.contains(&c.assigned_switch(flow(1), A).unwrap()));
        assert!(matches!(
            c.detect_false_positives(flow(9), A),
            Err(Error::UnknownFlow(_))
        ));
    }

    #[test]
    fn dedupe_keeps_only_the_assigned_switch() {
        let mut c = controller();
        c.register_task(flow(1), A, &[S1, S2], S1).unwrap();
        let event = |s: SwitchId| MonitorEvent {
            switch: s,
            flow: flow(1),
            action: A,
            kind: MonitorEventKind::Sampled,
            ordinal: 0,
        };
        let stray = MonitorEvent { flow: flow(5), ..event(S1) };
        let (kept, wasted) = c.dedupe_reports(vec![event(S1), event(S2), stray]);
        assert_eq!(kept, vec![event(S1)]);
        assert_eq!(wasted.len(), 2, "wrong switch and unknown flow are both wasted");
    }

    #[test]
    fn register_task_validates_path_membership() {
        let mut c = controller();
        assert!(c.register_task(flow(1), A, &[S1, S2], S3).is_err());
        c.register_task(flow(1), A, &[S1, S2], S2).unwrap();
        assert_eq!(c.assigned_switch(flow(1), A), Some(S2));
        assert_eq!(c.task(flow(1), A).unwrap().tier, 0);
    }

    #[derive(Clone, Default)]
    struct SharedBuf(Arc<Mutex<Vec<u8>>>);

    impl Write for SharedBuf {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn audit_log_is_json_lines() {
        let buf = SharedBuf::default();
        let mut c = controller();
        c.set_audit(Box::new(buf.clone()));
        for i in 0..RHO as u32 {
            c.allocate(flow(i), A, &[S1]).unwrap();
            c.allocate(flow(1000 + i), A, &[S2]).unwrap();
        }
        c.allocate(flow(100), A, &[S1, S2]).unwrap(); // tier 3 overflow
        c.on_new_flow(flow(2000), A, &[S3], 4).unwrap();
        c.periodic_maintenance(100);
        c.dedupe_reports(vec![]);

        let raw = buf.0.lock().unwrap().clone();
        let text = String::from_utf8(raw).unwrap();
        let mut events = Vec::new();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).expect("each line is JSON");
            events.push(v["event"].as_str().unwrap().to_string());
        }
        assert!(events.iter().any(|e| e == "allocate"));
        assert!(events.iter().any(|e| e == "rebuild"));
        assert_eq!(events.last().unwrap(), "dedupe");
        let tier3 = text
            .lines()
            .filter(|l| l.contains("\"tier\":3"))
            .count();
        assert_eq!(tier3, 1, "the overload decision must be on the record");
    }
}
