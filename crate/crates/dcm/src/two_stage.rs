//! Two-stage classification: an admission filter in front of per-action
//! filters. The admission stage answers "is this flow monitored here at all"
//! and short-circuits the common case; only on a hit are the per-action
//! filters consulted. Keeping the admission filter tight (low fp target)
//! is what makes stage two cheap to get wrong individually.

use crate::bloom::BloomFilter;
use crate::error::Error;
use crate::flow::ActionId;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoStageFilter {
    adm: BloomFilter,
    /// Per-action filters, sorted by action id.
    acts: Vec<(ActionId, BloomFilter)>,
}

impl TwoStageFilter {
    /// Assembles a filter from parts. Action ids must be distinct; the list
    /// is kept sorted by id. No consistency between the bit arrays is checked,
    /// which deserialization and tests rely on.
    pub fn from_parts(adm: BloomFilter, mut acts: Vec<(ActionId, BloomFilter)>) -> Result<TwoStageFilter> {
        acts.sort_by_key(|(id, _)| *id);
        if acts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate action id in two-stage filter".into()));
        }
        Ok(TwoStageFilter { adm, acts })
    }

    /// Empty filter with no actions, admission stage sized for `n` keys.
    pub fn empty(n: u64, adm_fp: f64, seed: u64) -> Result<TwoStageFilter> {
        Ok(TwoStageFilter {
            adm: BloomFilter::with_capacity(n, adm_fp, seed)?,
            acts: Vec::new(),
        })
    }

    pub fn adm(&self) -> &BloomFilter {
        &self.adm
    }

    pub fn action_ids(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.acts.iter().map(|(id, _)| *id)
    }

    pub fn actions(&self) -> impl Iterator<Item = (ActionId, &BloomFilter)> {
        self.acts.iter().map(|(id, f)| (*id, f))
    }

    pub fn action_filter(&self, action: ActionId) -> Option<&BloomFilter> {
        self.acts
            .binary_search_by_key(&action, |(id, _)| *id)
            .ok()
            .map(|i| &self.acts[i].1)
    }

    pub fn action_count(&self) -> usize {
        self.acts.len()
    }

    pub fn has_action(&self, action: ActionId) -> bool {
        self.action_filter(action).is_some()
    }

    /// Adds a new (typically empty) per-action filter. Existing filters are
    /// untouched, so this is safe between reconstructions.
    pub fn push_action(&mut self, action: ActionId, filter: BloomFilter) -> Result<()> {
        match self.acts.binary_search_by_key(&action, |(id, _)| *id) {
            Ok(_) => Err(Error::InvalidParameter(format!(
                "two-stage filter already has action {action}"
            ))),
            Err(pos) => {
                self.acts.insert(pos, (action, filter));
                Ok(())
            }
        }
    }

    /// Inserts the key into the admission filter and the filter of `action`.
    pub fn insert(&mut self, key: &[u8], action: ActionId) -> Result<()> {
        let idx = self
            .acts
            .binary_search_by_key(&action, |(id, _)| *id)
            .map_err(|_| Error::UnknownAction(action))?;
        self.adm.insert(key);
        self.acts[idx].1.insert(key);
        Ok(())
    }

    /// Stage one only.
    pub fn admits(&self, key: &[u8]) -> bool {
        self.adm.query(key)
    }

    /// Stage two only; callers must have passed [`admits`](Self::admits).
    pub fn matching_actions(&self, key: &[u8]) -> Vec<ActionId> {
        self.acts
            .iter()
            .filter(|(_, f)| f.query(key))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Full pipeline: an admission miss yields the empty set without touching
    /// the per-action filters.
    pub fn classify(&self, key: &[u8]) -> Vec<ActionId> {
        if !self.adm.query(key) {
            return Vec::new();
        }
        self.matching_actions(key)
    }

    /// Bit-array bytes across all stages; the data-plane memory charge.
    pub fn memory_bytes(&self) -> u64 {
        let mut total = self.adm.num_bits().div_ceil(8);
        for (_, f) in &self.acts {
            total += f.num_bits().div_ceil(8);
        }
        total
    }

    /// Wire encoding: action count (u16), admission filter blob, then each
    /// action as id (u32) plus blob. Integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.acts.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.adm.to_bytes());
        for (id, f) in &self.acts {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&f.to_bytes());
        }
        out
    }

    /// Decodes one two-stage filter from the front of `data`; returns the
    /// bytes consumed.
    pub fn from_bytes(data: &[u8]) -> Result<(TwoStageFilter, usize)> {
        if data.len() < 2 {
            return Err(Error::Malformed("two-stage blob shorter than header".into()));
        }
        let count = u16::from_le_bytes([data[0], data[1]]) as usize;
        let mut off = 2;
        let (adm, used) = BloomFilter::from_bytes(&data[off..])?;
        off += used;
        let mut acts = Vec::with_capacity(count);
        for _ in 0..count {
            if data.len() < off + 4 {
                return Err(Error::Malformed("two-stage blob truncated in action id".into()));
            }
            let id = ActionId(u32::from_le_bytes(data[off..off + 4].try_into().unwrap()));
            off += 4;
            let (f, used) = BloomFilter::from_bytes(&data[off..])?;
            off += used;
            acts.push((id, f));
        }
        Ok((TwoStageFilter::from_parts(adm, acts)?, off))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::{false_positive_rate, size_for};
    use crate::flow::FlowKey;
    use rand::{Rng, SeedableRng};
    use std::net::Ipv4Addr;

    fn flow(i: u32) -> FlowKey {
        FlowKey::new(
            Ipv4Addr::from(0x0a000000 | i),
            Ipv4Addr::new(10, 1, 0, 1),
            (i % 50_000) as u16 + 1024,
            80,
            6,
        )
    }

    fn filter_with(actions: &[ActionId]) -> TwoStageFilter {
        let adm = BloomFilter::with_capacity(1000, 1e-4, 11).unwrap();
        let acts = actions
            .iter()
            .map(|&a| (a, BloomFilter::with_capacity(1000, 1e-2, 12).unwrap()))
            .collect();
        TwoStageFilter::from_parts(adm, acts).unwrap()
    }

    #[test]
    fn fresh_filter_classifies_nothing() {
        let t = filter_with(&[ActionId(1), ActionId(2)]);
        assert!(t.classify(&flow(1).wire_bytes()).is_empty());
    }

    #[test]
    fn inserted_flow_gets_its_action() {
        let mut t = filter_with(&[ActionId(1)]);
        let key = flow(7).wire_bytes();
        t.insert(&key, ActionId(1)).unwrap();
        assert_eq!(t.classify(&key), vec![ActionId(1)]);
    }

    #[test]
    fn insert_touches_admission_and_action() {
        let mut t = filter_with(&[ActionId(3)]);
        t.insert(&flow(1).wire_bytes(), ActionId(3)).unwrap();
        assert_eq!(t.adm().inserted(), 1);
        assert_eq!(t.action_filter(ActionId(3)).unwrap().inserted(), 1);
    }

    #[test]
    fn unknown_action_rejected() {
        let mut t = filter_with(&[ActionId(1)]);
        assert!(matches!(
            t.insert(&flow(1).wire_bytes(), ActionId(9)),
            Err(Error::UnknownAction(ActionId(9)))
        ));
    }

    #[test]
    fn duplicate_action_ids_rejected() {
        let adm = BloomFilter::new(64, 1, 0).unwrap();
        let a = BloomFilter::new(64, 1, 1).unwrap();
        let b = BloomFilter::new(64, 1, 2).unwrap();
        assert!(TwoStageFilter::from_parts(adm, vec![(ActionId(1), a), (ActionId(1), b)]).is_err());
    }

    #[test]
    fn admission_miss_short_circuits() {
        // Poisoned stage two: the flow sits in the action filter but was never
        // admitted, so classification must come back empty.
        let key = flow(42).wire_bytes();
        let adm = BloomFilter::with_capacity(1000, 1e-4, 5).unwrap();
        let mut act = BloomFilter::with_capacity(1000, 1e-2, 6).unwrap();
        act.insert(&key);
        let t = TwoStageFilter::from_parts(adm, vec![(ActionId(1), act)]).unwrap();
        assert!(t.action_filter(ActionId(1)).unwrap().query(&key));
        assert!(t.classify(&key).is_empty());
    }

    #[test]
    fn push_action_keeps_order_and_rejects_duplicates() {
        let mut t = filter_with(&[ActionId(5)]);
        t.push_action(ActionId(2), BloomFilter::new(64, 1, 9).unwrap()).unwrap();
        let ids: Vec<_> = t.action_ids().collect();
        assert_eq!(ids, vec![ActionId(2), ActionId(5)]);
        assert!(t.push_action(ActionId(5), BloomFilter::new(64, 1, 9).unwrap()).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let mut t = filter_with(&[ActionId(1), ActionId(4)]);
        for i in 0..500 {
            t.insert(&flow(i).wire_bytes(), ActionId(if i % 2 == 0 { 1 } else { 4 })).unwrap();
        }
        let blob = t.to_bytes();
        let (u, used) = TwoStageFilter::from_bytes(&blob).unwrap();
        assert_eq!(used, blob.len());
        assert_eq!(u, t);
    }

    #[test]
    fn classification_fp_within_analytic_bound() {
        // Non-member flows should only classify when both stages misfire.
        let n = 1000u64;
        let (m_adm, k_adm) = size_for(n, 1e-2).unwrap();
        let (m_act, k_act) = size_for(n, 0.05).unwrap();
        let adm = BloomFilter::new(m_adm, k_adm, 21).unwrap();
        let acts = vec![
            (ActionId(1), BloomFilter::new(m_act, k_act, 22).unwrap()),
            (ActionId(2), BloomFilter::new(m_act, k_act, 22).unwrap()),
        ];
        let mut t = TwoStageFilter::from_parts(adm, acts).unwrap();
        for i in 0..n as u32 {
            t.insert(&flow(i).wire_bytes(), ActionId(1 + i % 2)).unwrap();
        }

        let trials = 200_000u64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut classified = 0u64;
        for _ in 0..trials {
            let probe: [u8; 13] = rng.gen();
            if !t.classify(&probe).is_empty() {
                classified += 1;
            }
        }
        let fp_adm = false_positive_rate(n, m_adm, k_adm).unwrap();
        let fp_act_sum: f64 = t
            .actions()
            .map(|(_, f)| false_positive_rate(f.inserted(), f.num_bits(), f.num_hashes()).unwrap())
            .sum();
        let bound = fp_adm * (1.0 + fp_act_sum);
        let sigma = (bound * (1.0 - bound) / trials as f64).sqrt();
        let empirical = classified as f64 / trials as f64;
        assert!(
            empirical <= bound + 3.0 * sigma,
            "classification fp {empirical} above bound {bound} (+3 sigma {sigma})"
        );
    }
}
