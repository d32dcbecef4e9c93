//! Switch data plane.
//!
//! A packet walks three steps: the wildcard rule table (highest priority
//! first; a match applies that action and skips everything else), then the
//! admission filter (a miss ends processing), then the per-action filters,
//! every match of which fires its monitor. Monitors are Count-Min sketches
//! for counting actions and sample buffers for sampling actions.

use crate::cms::CountMinSketch;
use crate::error::Error;
use crate::flow::{ActionId, FlowKey, PacketId};
use crate::sampling::{packet_hash, should_sample, SampleRate};
use crate::topology::SwitchId;
use crate::two_stage::TwoStageFilter;
use crate::Result;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;

/// TCAM cost charged per wildcard rule.
pub const RULE_BYTES: u64 = 40;
/// Report cost charged per sampled packet record.
pub const SAMPLE_RECORD_BYTES: u64 = 32;

/// What a monitoring action does with a matched packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionKind {
    /// Feed a Count-Min sketch of this size.
    Count { memory_bytes: u64, depth: u32 },
    /// Sample packets whose hash falls below the rate.
    SampleThreshold { rate: SampleRate },
    /// Sample packets whose hash falls in the dyadic interval `[2^-i, 2^-(i-1))`.
    SampleInterval { interval: u8 },
}

impl ActionKind {
    pub fn is_sampling(&self) -> bool {
        !matches!(self, ActionKind::Count { .. })
    }
}

/// Deployment-wide description of one action: what it does and how many
/// flows a single switch should carry for it before the controller spills
/// to another switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSpec {
    pub id: ActionId,
    pub kind: ActionKind,
    /// Controller load threshold (flows per switch).
    pub threshold: u64,
}

pub const DEFAULT_COUNT_THRESHOLD: u64 = 5000;
pub const DEFAULT_SAMPLE_THRESHOLD: u64 = 2000;

impl ActionSpec {
    pub fn count(id: ActionId, memory_bytes: u64, depth: u32) -> ActionSpec {
        ActionSpec {
            id,
            kind: ActionKind::Count { memory_bytes, depth },
            threshold: DEFAULT_COUNT_THRESHOLD,
        }
    }

    pub fn sample_threshold(id: ActionId, rate: SampleRate) -> ActionSpec {
        ActionSpec {
            id,
            kind: ActionKind::SampleThreshold { rate },
            threshold: DEFAULT_SAMPLE_THRESHOLD,
        }
    }

    pub fn sample_interval(id: ActionId, interval: u8) -> ActionSpec {
        ActionSpec {
            id,
            kind: ActionKind::SampleInterval { interval },
            threshold: DEFAULT_SAMPLE_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: u64) -> ActionSpec {
        self.threshold = threshold;
        self
    }
}

/// TCAM-style rule: IP prefixes plus optional exact ports and protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WildcardRule {
    pub src_prefix: Ipv4Addr,
    pub src_prefix_len: u8,
    pub dst_prefix: Ipv4Addr,
    pub dst_prefix_len: u8,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<u8>,
    pub action: ActionId,
    pub priority: i32,
}

pub(crate) fn prefix_mask(len: u8) -> u32 {
    debug_assert!(len <= 32);
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len as u32)
    }
}

impl WildcardRule {
    pub fn match_all(action: ActionId, priority: i32) -> WildcardRule {
        WildcardRule {
            src_prefix: Ipv4Addr::UNSPECIFIED,
            src_prefix_len: 0,
            dst_prefix: Ipv4Addr::UNSPECIFIED,
            dst_prefix_len: 0,
            src_port: None,
            dst_port: None,
            protocol: None,
            action,
            priority,
        }
    }

    /// Prefix rule on the IP pair, ports and protocol wildcarded.
    pub fn ip_pair(src: Ipv4Addr, src_len: u8, dst: Ipv4Addr, dst_len: u8, action: ActionId) -> WildcardRule {
        WildcardRule {
            src_prefix: src,
            src_prefix_len: src_len,
            dst_prefix: dst,
            dst_prefix_len: dst_len,
            src_port: None,
            dst_port: None,
            protocol: None,
            action,
            priority: 0,
        }
    }

    pub fn matches(&self, flow: &FlowKey) -> bool {
        let sm = prefix_mask(self.src_prefix_len);
        let dm = prefix_mask(self.dst_prefix_len);
        u32::from(flow.src_ip) & sm == u32::from(self.src_prefix) & sm
            && u32::from(flow.dst_ip) & dm == u32::from(self.dst_prefix) & dm
            && self.src_port.map_or(true, |p| p == flow.src_port)
            && self.dst_port.map_or(true, |p| p == flow.dst_port)
            && self.protocol.map_or(true, |p| p == flow.protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorEventKind {
    Counted,
    Sampled,
}

/// One monitoring observation, attributed to the emitting switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct MonitorEvent {
    pub switch: SwitchId,
    pub flow: FlowKey,
    pub action: ActionId,
    pub kind: MonitorEventKind,
    pub ordinal: u32,
}

/// Periodic upload to the controller: drained samples, sketch snapshots, and
/// the modelled transfer cost.
#[derive(Debug, Clone)]
pub struct SwitchReport {
    pub switch: SwitchId,
    pub events: Vec<MonitorEvent>,
    pub sketches: Vec<(ActionId, CountMinSketch)>,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SwitchStats {
    pub packets_seen: u64,
    pub wildcard_hits: u64,
    pub adm_hits: u64,
    /// Per-action filter probes; only counted after an admission hit.
    pub act_lookups: u64,
    pub packets_counted: u64,
    pub samples_taken: u64,
}

#[derive(Debug)]
enum MonitorBackend {
    Count(CountMinSketch),
    Sample(Vec<MonitorEvent>),
}

#[derive(Debug)]
pub struct SwitchState {
    id: SwitchId,
    memory_budget: u64,
    catalog: BTreeMap<ActionId, ActionKind>,
    /// Shared across the deployment so all switches agree on packet hashes.
    sample_seed: u64,
    sketch_seed: u64,
    rules: Vec<WildcardRule>,
    filter: TwoStageFilter,
    monitors: BTreeMap<ActionId, MonitorBackend>,
    stats: SwitchStats,
}

impl SwitchState {
    pub fn new(
        id: SwitchId,
        memory_budget: u64,
        catalog: &[ActionSpec],
        sample_seed: u64,
        sketch_seed: u64,
    ) -> Result<SwitchState> {
        let mut map = BTreeMap::new();
        for spec in catalog {
            if map.insert(spec.id, spec.kind).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate catalog action {}", spec.id)));
            }
        }
        Ok(SwitchState {
            id,
            memory_budget,
            catalog: map,
            sample_seed,
            sketch_seed,
            rules: Vec::new(),
            filter: TwoStageFilter::from_parts(crate::bloom::BloomFilter::new(8, 1, 0)?, Vec::new())?,
            monitors: BTreeMap::new(),
            stats: SwitchStats::default(),
        })
    }

    pub fn id(&self) -> SwitchId {
        self.id
    }

    pub fn stats(&self) -> SwitchStats {
        self.stats
    }

    pub fn filter(&self) -> &TwoStageFilter {
        &self.filter
    }

    pub fn rules(&self) -> &[WildcardRule] {
        &self.rules
    }

    pub fn sketch(&self, action: ActionId) -> Option<&CountMinSketch> {
        match self.monitors.get(&action) {
            Some(MonitorBackend::Count(s)) => Some(s),
            _ => None,
        }
    }

    /// Installed state footprint: filter bits, sketch bytes, rule TCAM cost.
    pub fn memory_in_use(&self) -> u64 {
        let sketches: u64 = self
            .monitors
            .values()
            .map(|b| match b {
                MonitorBackend::Count(s) => s.memory_bytes(),
                MonitorBackend::Sample(_) => 0,
            })
            .sum();
        self.filter.memory_bytes() + sketches + RULE_BYTES * self.rules.len() as u64
    }

    fn ensure_backend(&mut self, action: ActionId) {
        if self.monitors.contains_key(&action) {
            return;
        }
        let kind = self.catalog.get(&action).copied().unwrap_or_else(|| {
            panic!("{}: action {action} not in the deployment catalog", self.id)
        });
        let backend = match kind {
            ActionKind::Count { memory_bytes, depth } => MonitorBackend::Count(
                CountMinSketch::new(memory_bytes, depth, self.sketch_seed.wrapping_add(action.0 as u64))
                    .expect("catalog sketch geometry validated at install"),
            ),
            _ => MonitorBackend::Sample(Vec::new()),
        };
        self.monitors.insert(action, backend);
    }

    /// Replaces filter and rule table atomically. Monitor backends for new
    /// actions start empty; backends for actions still referenced persist
    /// (sketch contents survive reconstructions); the rest are dropped.
    /// Panics if the result would exceed the memory budget: the controller
    /// must never install past it.
    pub fn install(&mut self, filter: TwoStageFilter, rules: Vec<WildcardRule>) {
        let mut referenced: Vec<ActionId> = filter.action_ids().chain(rules.iter().map(|r| r.action)).collect();
        referenced.sort_unstable();
        referenced.dedup();
        for action in &referenced {
            assert!(
                self.catalog.contains_key(action),
                "{}: install references action {action} outside the catalog",
                self.id
            );
        }

        self.filter = filter;
        // stable sort: equal priorities keep install order
        let mut rules = rules;
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        self.rules = rules;
        self.monitors.retain(|id, _| referenced.binary_search(id).is_ok());
        for action in referenced {
            self.ensure_backend(action);
        }

        let used = self.memory_in_use();
        assert!(
            used <= self.memory_budget,
            "{}: installed state needs {used} bytes, budget is {}",
            self.id,
            self.memory_budget
        );
    }

    /// Replaces the filter only, leaving the rule table as installed.
    pub fn install_filter(&mut self, filter: TwoStageFilter) {
        let rules = std::mem::take(&mut self.rules);
        self.install(filter, rules);
    }

    /// Incremental insert-only update between reconstructions.
    pub fn insert_flow(&mut self, flow: &FlowKey, action: ActionId) -> Result<()> {
        self.filter.insert(&flow.wire_bytes(), action)?;
        self.ensure_backend(action);
        Ok(())
    }

    fn apply_action(&mut self, action: ActionId, p: &PacketId, out: &mut Vec<MonitorEvent>) {
        let kind = self.catalog[&action];
        match kind {
            ActionKind::Count { .. } => {
                match self.monitors.get_mut(&action) {
                    Some(MonitorBackend::Count(sketch)) => sketch.increment(&p.flow.wire_bytes(), 1),
                    _ => panic!("{}: no sketch installed for {action}", self.id),
                }
                self.stats.packets_counted += 1;
                out.push(MonitorEvent {
                    switch: self.id,
                    flow: p.flow,
                    action,
                    kind: MonitorEventKind::Counted,
                    ordinal: p.ordinal,
                });
            }
            ActionKind::SampleThreshold { rate } => {
                if packet_hash(p, self.sample_seed) < rate.value() {
                    self.push_sample(action, p, out);
                }
            }
            ActionKind::SampleInterval { interval } => {
                if should_sample(interval, packet_hash(p, self.sample_seed)) {
                    self.push_sample(action, p, out);
                }
            }
        }
    }

    fn push_sample(&mut self, action: ActionId, p: &PacketId, out: &mut Vec<MonitorEvent>) {
        let event = MonitorEvent {
            switch: self.id,
            flow: p.flow,
            action,
            kind: MonitorEventKind::Sampled,
            ordinal: p.ordinal,
        };
        match self.monitors.get_mut(&action) {
            Some(MonitorBackend::Sample(buf)) => buf.push(event),
            _ => panic!("{}: no sample buffer installed for {action}", self.id),
        }
        self.stats.samples_taken += 1;
        out.push(event);
    }

    /// Runs one packet through the three-step pipeline and returns whatever
    /// monitoring it triggered, in pipeline order.
    pub fn process_packet(&mut self, p: &PacketId) -> Vec<MonitorEvent> {
        self.stats.packets_seen += 1;
        let mut out = Vec::new();

        // Step 1: first wildcard match wins and suppresses the filter stages.
        if let Some(rule) = self.rules.iter().find(|r| r.matches(&p.flow)) {
            let action = rule.action;
            self.stats.wildcard_hits += 1;
            self.apply_action(action, p, &mut out);
            return out;
        }

        // Step 2: admission.
        let key = p.flow.wire_bytes();
        if !self.filter.admits(&key) {
            return out;
        }
        self.stats.adm_hits += 1;

        // Step 3: per-action filters, all matches applied.
        self.stats.act_lookups += self.filter.action_count() as u64;
        for action in self.filter.matching_actions(&key) {
            self.apply_action(action, p, &mut out);
        }
        out
    }

    /// Drains sample buffers, snapshots sketches, and charges the transfer:
    /// 32 bytes per sample record plus the installed sketch sizes.
    pub fn report(&mut self) -> SwitchReport {
        let mut events = Vec::new();
        let mut sketches = Vec::new();
        for (&action, backend) in self.monitors.iter_mut() {
            match backend {
                MonitorBackend::Sample(buf) => events.append(buf),
                MonitorBackend::Count(sketch) => sketches.push((action, sketch.clone())),
            }
        }
        events.sort_by_key(|e| (e.flow, e.action, e.ordinal));
        let bytes = SAMPLE_RECORD_BYTES * events.len() as u64
            + sketches.iter().map(|(_, s)| s.memory_bytes()).sum::<u64>();
        SwitchReport { switch: self.id, events, sketches, bytes }
    }
}

/// Wire form of a controller install message: rule count (u16), the rules at
/// 24 bytes each, then the two-stage filter blob.
pub fn encode_install(filter: &TwoStageFilter, rules: &[WildcardRule]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(rules.len() as u16).to_le_bytes());
    for r in rules {
        out.extend_from_slice(&r.src_prefix.octets());
        out.push(r.src_prefix_len);
        out.extend_from_slice(&r.dst_prefix.octets());
        out.push(r.dst_prefix_len);
        let flags = r.src_port.is_some() as u8
            | (r.dst_port.is_some() as u8) << 1
            | (r.protocol.is_some() as u8) << 2;
        out.push(flags);
        out.extend_from_slice(&r.src_port.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&r.dst_port.unwrap_or(0).to_le_bytes());
        out.push(r.protocol.unwrap_or(0));
        out.extend_from_slice(&r.action.0.to_le_bytes());
        out.extend_from_slice(&r.priority.to_le_bytes());
    }
    out.extend_from_slice(&filter.to_bytes());
    out
}

pub fn decode_install(data: &[u8]) -> Result<(TwoStageFilter, Vec<WildcardRule>)> {
    if data.len() < 2 {
        return Err(Error::Malformed("install message shorter than header".into()));
    }
    let count = u16::from_le_bytes([data[0], data[1]]) as usize;
    let mut off = 2;
    let mut rules = Vec::with_capacity(count);
    for _ in 0..count {
        if data.len() < off + 24 {
            return Err(Error::Malformed("install message truncated in rule".into()));
        }
        let b = &data[off..off + 24];
        let flags = b[10];
        rules.push(WildcardRule {
            src_prefix: Ipv4Addr::new(b[0], b[1], b[2], b[3]),
            src_prefix_len: b[4],
            dst_prefix: Ipv4Addr::new(b[5], b[6], b[7], b[8]),
            dst_prefix_len: b[9],
            src_port: (flags & 1 != 0).then(|| u16::from_le_bytes([b[11], b[12]])),
            dst_port: (flags & 2 != 0).then(|| u16::from_le_bytes([b[13], b[14]])),
            protocol: (flags & 4 != 0).then(|| b[15]),
            action: ActionId(u32::from_le_bytes(b[16..20].try_into().unwrap())),
            priority: i32::from_le_bytes(b[20..24].try_into().unwrap()),
        });
        off += 24;
    }
    let (filter, used) = TwoStageFilter::from_bytes(&data[off..])?;
    if off + used != data.len() {
        return Err(Error::Malformed("trailing bytes after install message".into()));
    }
    Ok((filter, rules))
}
