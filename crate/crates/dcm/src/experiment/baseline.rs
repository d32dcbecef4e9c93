//! Reference methods the scheme is measured against.
//!
//! Monitor-everything installs a match-all rule and a full-budget sketch on
//! every switch. The aggregation baselines group flows (by IP prefix pair or
//! by a hash prefix of the key) and place one rule per group on the switch
//! covering the most of its still-uncovered members, repeating until the
//! group is covered or every candidate switch is out of rule memory. Each
//! flow reports from the switch whose rule first covered it; anything its
//! packets trigger elsewhere is waste.

use crate::cms::CountMinSketch;
use crate::error::Error;
use crate::flow::{ActionId, FlowKey, PacketId};
use crate::hash::{derive_seed, hash128};
use crate::sampling::{packet_hash, SampleRate};
use crate::switch::{prefix_mask, ActionSpec, SwitchState, WildcardRule, RULE_BYTES};
use crate::topology::{SwitchId, Topology};
use crate::trace::FlowRecord;
use crate::two_stage::TwoStageFilter;
use crate::Result;
use std::collections::{BTreeMap, BTreeSet};

const ACTION: ActionId = ActionId(0);
/// Keyed hash namespace for agg-hash flow grouping.
const GROUP_SEED: u64 = 0x6167_6768;

fn empty_filter() -> TwoStageFilter {
    let adm = crate::bloom::BloomFilter::new(8, 1, 0).unwrap();
    TwoStageFilter::from_parts(adm, Vec::new()).unwrap()
}

pub(crate) struct CountOutcome {
    /// Per-flow packet estimates, parallel to the trace; None means no rule
    /// covered the flow.
    pub estimates: Vec<Option<f64>>,
    pub saturated: bool,
    pub rules_installed: u64,
}

/// Every switch counts everything; a flow's estimate averages the sketches
/// along its path.
pub(crate) fn run_monitor_all(
    topo: &Topology,
    flows: &[FlowRecord],
    paths: &[Vec<SwitchId>],
    memory: u64,
    depth: u32,
    seed: u64,
) -> Result<CountOutcome> {
    let overhead = RULE_BYTES + empty_filter().memory_bytes();
    let sketch_mem = memory.saturating_sub(overhead);
    if sketch_mem < 4 * depth as u64 {
        return Err(Error::Config(format!("{memory} bytes cannot hold a monitor-all switch")));
    }
    let mut switches: BTreeMap<SwitchId, SwitchState> = BTreeMap::new();
    for s in topo.switches() {
        let catalog = vec![ActionSpec::count(ACTION, sketch_mem, depth)];
        let sketch_seed = derive_seed(&[seed, 0x736b_6574, s.0 as u64]);
        let mut sw = SwitchState::new(s, memory, &catalog, 0, sketch_seed)?;
        sw.install(empty_filter(), vec![WildcardRule::match_all(ACTION, 0)]);
        switches.insert(s, sw);
    }

    pump_packets(flows, paths, &mut switches);

    let estimates = flows
        .iter()
        .zip(paths)
        .map(|(f, path)| {
            let key = f.key.wire_bytes();
            let sum: u64 = path
                .iter()
                .map(|s| switches[s].sketch(ACTION).unwrap().query(&key) as u64)
                .sum();
            Some(sum as f64 / path.len() as f64)
        })
        .collect();
    let saturated = sketches_saturated(&switches);
    Ok(CountOutcome { estimates, saturated, rules_installed: switches.len() as u64 })
}

/// Runs every packet of every flow through its path switches. Rule tables
/// are static here, so epoch order does not matter.
fn pump_packets(flows: &[FlowRecord], paths: &[Vec<SwitchId>], switches: &mut BTreeMap<SwitchId, SwitchState>) {
    for (f, path) in flows.iter().zip(paths) {
        for ordinal in 0..f.packets {
            let pid = PacketId { flow: f.key, ordinal: ordinal as u32 };
            for s in path {
                if let Some(sw) = switches.get_mut(s) {
                    sw.process_packet(&pid);
                }
            }
        }
    }
}

fn sketches_saturated(switches: &BTreeMap<SwitchId, SwitchState>) -> bool {
    switches.values().any(|sw| sw.sketch(ACTION).is_some_and(CountMinSketch::saturated))
}

/// Greedy cover of one group's members: repeatedly pick the switch on the
/// most uncovered members' paths (lowest id on ties) that still has rule
/// memory, until everyone is covered or no switch can take another rule.
/// Returns per-flow registration and the set of switches used.
struct Placement {
    /// group key -> switches carrying its rule, in placement order
    per_group: BTreeMap<u64, Vec<SwitchId>>,
    /// flow index -> reporting switch
    registered: BTreeMap<usize, SwitchId>,
    rule_count: BTreeMap<SwitchId, u64>,
}

fn greedy_place(
    groups: &BTreeMap<u64, Vec<usize>>,
    paths: &[Vec<SwitchId>],
    capacity: u64,
) -> Placement {
    let mut placement = Placement {
        per_group: BTreeMap::new(),
        registered: BTreeMap::new(),
        rule_count: BTreeMap::new(),
    };
    for (&key, members) in groups {
        let mut uncovered: Vec<usize> = members.clone();
        while !uncovered.is_empty() {
            let mut tally: BTreeMap<SwitchId, u64> = BTreeMap::new();
            for &i in &uncovered {
                for &s in &paths[i] {
                    if placement.rule_count.get(&s).copied().unwrap_or(0) < capacity {
                        *tally.entry(s).or_default() += 1;
                    }
                }
            }
            // highest cover wins; BTreeMap order breaks ties toward low ids
            let Some((&s, _)) = tally.iter().max_by_key(|&(&s, &n)| (n, std::cmp::Reverse(s))) else {
                break;
            };
            *placement.rule_count.entry(s).or_default() += 1;
            placement.per_group.entry(key).or_default().push(s);
            uncovered.retain(|&i| {
                if paths[i].contains(&s) {
                    placement.registered.insert(i, s);
                    false
                } else {
                    true
                }
            });
        }
    }
    placement
}

fn ip_group_key(f: &FlowKey, src_bits: u8, dst_bits: u8) -> u64 {
    let src = u32::from(f.src_ip) & prefix_mask(src_bits);
    let dst = u32::from(f.dst_ip) & prefix_mask(dst_bits);
    ((src as u64) << 32) | dst as u64
}

fn ip_groups(flows: &[FlowRecord], src_bits: u8, dst_bits: u8) -> BTreeMap<u64, Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        groups.entry(ip_group_key(&f.key, src_bits, dst_bits)).or_default().push(i);
    }
    groups
}

fn ip_rule(key: u64, src_bits: u8, dst_bits: u8, action: ActionId) -> WildcardRule {
    let src = ((key >> 32) as u32).into();
    let dst = ((key & 0xffff_ffff) as u32).into();
    WildcardRule::ip_pair(src, src_bits, dst, dst_bits, action)
}

/// Prefix-pair aggregation for the counting study: rules spend up to half of
/// each switch's budget, the sketch takes what remains.
pub(crate) fn run_agg_ip_count(
    flows: &[FlowRecord],
    paths: &[Vec<SwitchId>],
    masks: (u8, u8),
    memory: u64,
    depth: u32,
    seed: u64,
) -> Result<CountOutcome> {
    let (src_bits, dst_bits) = masks;
    let capacity = super::rule_capacity(memory, memory / 2 + empty_filter().memory_bytes());
    let placement = greedy_place(&ip_groups(flows, src_bits, dst_bits), paths, capacity);

    let mut switches: BTreeMap<SwitchId, SwitchState> = BTreeMap::new();
    let mut per_switch_rules: BTreeMap<SwitchId, Vec<WildcardRule>> = BTreeMap::new();
    for (&key, spots) in &placement.per_group {
        for &s in spots {
            per_switch_rules.entry(s).or_default().push(ip_rule(key, src_bits, dst_bits, ACTION));
        }
    }
    let mut rules_installed = 0u64;
    for (s, rules) in per_switch_rules {
        let sketch_mem = memory - RULE_BYTES * rules.len() as u64 - empty_filter().memory_bytes();
        let catalog = vec![ActionSpec::count(ACTION, sketch_mem, depth)];
        let sketch_seed = derive_seed(&[seed, 0x736b_6574, s.0 as u64]);
        let mut sw = SwitchState::new(s, memory, &catalog, 0, sketch_seed)?;
        rules_installed += rules.len() as u64;
        sw.install(empty_filter(), rules);
        switches.insert(s, sw);
    }

    pump_packets(flows, paths, &mut switches);

    let estimates = flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let s = placement.registered.get(&i)?;
            Some(switches[s].sketch(ACTION).unwrap().query(&f.key.wire_bytes()) as f64)
        })
        .collect();
    let saturated = sketches_saturated(&switches);
    Ok(CountOutcome { estimates, saturated, rules_installed })
}

pub(crate) struct SamplingOutcome {
    pub kept: u64,
    pub wasted: u64,
    pub uncovered: u64,
}

impl SamplingOutcome {
    pub fn wasted_ratio(&self) -> f64 {
        let total = self.kept + self.wasted;
        if total == 0 {
            0.0
        } else {
            self.wasted as f64 / total as f64
        }
    }
}

/// Prefix-pair aggregation with threshold sampling at every covering switch;
/// switches hash independently, so multiply-covered flows get sampled more
/// than once and everything off the registered switch is waste.
pub(crate) fn run_agg_ip_sampling(
    flows: &[FlowRecord],
    paths: &[Vec<SwitchId>],
    masks: (u8, u8),
    rate: SampleRate,
    memory: u64,
    seed: u64,
) -> Result<SamplingOutcome> {
    let (src_bits, dst_bits) = masks;
    let capacity = super::rule_capacity(memory, empty_filter().memory_bytes());
    let placement = greedy_place(&ip_groups(flows, src_bits, dst_bits), paths, capacity);

    let mut switches: BTreeMap<SwitchId, SwitchState> = BTreeMap::new();
    let mut per_switch_rules: BTreeMap<SwitchId, Vec<WildcardRule>> = BTreeMap::new();
    for (&key, spots) in &placement.per_group {
        for &s in spots {
            per_switch_rules.entry(s).or_default().push(ip_rule(key, src_bits, dst_bits, ACTION));
        }
    }
    let catalog = vec![ActionSpec::sample_threshold(ACTION, rate)];
    for (s, rules) in per_switch_rules {
        let sample_seed = derive_seed(&[seed, 0x6273_6d70, s.0 as u64]);
        let mut sw = SwitchState::new(s, memory, &catalog, sample_seed, 0)?;
        sw.install(empty_filter(), rules);
        switches.insert(s, sw);
    }

    pump_packets(flows, paths, &mut switches);
    Ok(tally_samples(flows, &placement.registered, &mut switches))
}

fn tally_samples(
    flows: &[FlowRecord],
    registered: &BTreeMap<usize, SwitchId>,
    switches: &mut BTreeMap<SwitchId, SwitchState>,
) -> SamplingOutcome {
    let home: BTreeMap<FlowKey, SwitchId> =
        registered.iter().map(|(&i, &s)| (flows[i].key, s)).collect();
    let mut kept = 0u64;
    let mut wasted = 0u64;
    for sw in switches.values_mut() {
        for e in sw.report().events {
            if home.get(&e.flow) == Some(&e.switch) {
                kept += 1;
            } else {
                wasted += 1;
            }
        }
    }
    let uncovered = (flows.len() - registered.len()) as u64;
    SamplingOutcome { kept, wasted, uncovered }
}

fn hash_group_key(f: &FlowKey, bits: u8) -> u64 {
    hash128(&f.wire_bytes(), GROUP_SEED).0 >> (64 - bits as u32)
}

/// Hash-prefix aggregation: switches hold plain prefix tables (one entry per
/// placed group, priced like a rule) and threshold-sample matching flows.
pub(crate) fn run_agg_hash_sampling(
    flows: &[FlowRecord],
    paths: &[Vec<SwitchId>],
    bits: u8,
    rate: SampleRate,
    memory: u64,
    seed: u64,
) -> Result<SamplingOutcome> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        groups.entry(hash_group_key(&f.key, bits)).or_default().push(i);
    }
    let capacity = memory / RULE_BYTES;
    let placement = greedy_place(&groups, paths, capacity);

    let mut tables: BTreeMap<SwitchId, BTreeSet<u64>> = BTreeMap::new();
    for (&key, spots) in &placement.per_group {
        for &s in spots {
            tables.entry(s).or_default().insert(key);
        }
    }
    let home: BTreeMap<FlowKey, SwitchId> =
        placement.registered.iter().map(|(&i, &s)| (flows[i].key, s)).collect();
    let seeds: BTreeMap<SwitchId, u64> = tables
        .keys()
        .map(|&s| (s, derive_seed(&[seed, 0x6273_6d70, s.0 as u64])))
        .collect();

    let mut kept = 0u64;
    let mut wasted = 0u64;
    for (i, f) in flows.iter().enumerate() {
        let key = hash_group_key(&f.key, bits);
        let covering: Vec<SwitchId> = paths[i]
            .iter()
            .copied()
            .filter(|s| tables.get(s).is_some_and(|t| t.contains(&key)))
            .collect();
        if covering.is_empty() {
            continue;
        }
        for ordinal in 0..f.packets {
            let pid = PacketId { flow: f.key, ordinal: ordinal as u32 };
            for &s in &covering {
                if packet_hash(&pid, seeds[&s]) < rate.value() {
                    if home.get(&f.key) == Some(&s) {
                        kept += 1;
                    } else {
                        wasted += 1;
                    }
                }
            }
        }
    }
    let uncovered = (flows.len() - placement.registered.len()) as u64;
    Ok(SamplingOutcome { kept, wasted, uncovered })
}
