//! Switch-level network topologies and shortest-path routing.

use crate::error::Error;
use crate::Result;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct SwitchId(pub u32);

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u32);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H{}", self.0)
    }
}

/// Undirected switch graph with hosts hanging off edge switches. Connected by
/// construction; [`Topology::load`] rejects disconnected inputs.
#[derive(Debug, Clone)]
pub struct Topology {
    adjacency: BTreeMap<SwitchId, BTreeSet<SwitchId>>,
    hosts: BTreeMap<HostId, SwitchId>,
}

impl Topology {
    fn from_parts(
        adjacency: BTreeMap<SwitchId, BTreeSet<SwitchId>>,
        hosts: BTreeMap<HostId, SwitchId>,
    ) -> Result<Topology> {
        let t = Topology { adjacency, hosts };
        if t.adjacency.is_empty() {
            return Err(Error::InvalidParameter("topology has no switches".into()));
        }
        for (&h, &s) in &t.hosts {
            if !t.adjacency.contains_key(&s) {
                return Err(Error::InvalidParameter(format!("host {h} attached to unknown {s}")));
            }
        }
        if !t.is_connected() {
            return Err(Error::InvalidParameter("topology is not connected".into()));
        }
        Ok(t)
    }

    /// Multi-core star: every edge switch links to every core, and each edge
    /// switch carries `hosts_per_edge` hosts. Cores get the low switch ids.
    pub fn star(cores: u32, edge_switches: u32, hosts_per_edge: u32) -> Result<Topology> {
        if cores == 0 || edge_switches == 0 || hosts_per_edge == 0 {
            return Err(Error::InvalidParameter("star needs cores, edges, hosts >= 1".into()));
        }
        let mut adjacency: BTreeMap<SwitchId, BTreeSet<SwitchId>> = BTreeMap::new();
        for c in 0..cores {
            adjacency.entry(SwitchId(c)).or_default();
        }
        let mut hosts = BTreeMap::new();
        for e in 0..edge_switches {
            let edge = SwitchId(cores + e);
            adjacency.entry(edge).or_default();
            for c in 0..cores {
                adjacency.get_mut(&edge).unwrap().insert(SwitchId(c));
                adjacency.get_mut(&SwitchId(c)).unwrap().insert(edge);
            }
            for h in 0..hosts_per_edge {
                hosts.insert(HostId(e * hosts_per_edge + h), edge);
            }
        }
        Topology::from_parts(adjacency, hosts)
    }

    /// k-ary fat tree: `(k/2)^2` cores, `k` pods of `k/2` aggregation plus
    /// `k/2` edge switches, `k^3/4` hosts. Ids run cores, then pods in order
    /// (aggregation before edge), matching the usual three-layer drawing.
    pub fn fat_tree(k: u32) -> Result<Topology> {
        if k < 2 || k % 2 != 0 {
            return Err(Error::InvalidParameter(format!("fat tree needs even k >= 2, got {k}")));
        }
        let half = k / 2;
        let cores = half * half;
        let mut adjacency: BTreeMap<SwitchId, BTreeSet<SwitchId>> = BTreeMap::new();
        let mut hosts = BTreeMap::new();
        let link = |adj: &mut BTreeMap<SwitchId, BTreeSet<SwitchId>>, a: SwitchId, b: SwitchId| {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        };
        for c in 0..cores {
            adjacency.entry(SwitchId(c)).or_default();
        }
        for p in 0..k {
            for a in 0..half {
                let agg = SwitchId(cores + p * k + a);
                // aggregation switch `a` serves core group `a`
                for g in 0..half {
                    link(&mut adjacency, agg, SwitchId(a * half + g));
                }
            }
            for e in 0..half {
                let edge = SwitchId(cores + p * k + half + e);
                for a in 0..half {
                    link(&mut adjacency, edge, SwitchId(cores + p * k + a));
                }
                for h in 0..half {
                    hosts.insert(HostId(p * half * half + e * half + h), edge);
                }
            }
        }
        Topology::from_parts(adjacency, hosts)
    }

    /// Loads an edge-list file: `switch <id>`, `host <id> <switch-id>`,
    /// `link <id> <id>`, with `#` comments and blank lines ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Topology> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(&name, 0, format!("cannot read file: {e}")))?;
        let mut adjacency: BTreeMap<SwitchId, BTreeSet<SwitchId>> = BTreeMap::new();
        let mut hosts: BTreeMap<HostId, SwitchId> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx as u64 + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_id = |s: &str| -> Result<u32> {
                s.parse()
                    .map_err(|_| Error::parse(&name, lineno, format!("bad id {s:?}")))
            };
            match fields[0] {
                "switch" if fields.len() == 2 => {
                    let id = SwitchId(parse_id(fields[1])?);
                    if adjacency.insert(id, BTreeSet::new()).is_some() {
                        return Err(Error::parse(&name, lineno, format!("duplicate {id}")));
                    }
                }
                "host" if fields.len() == 3 => {
                    let h = HostId(parse_id(fields[1])?);
                    let s = SwitchId(parse_id(fields[2])?);
                    if !adjacency.contains_key(&s) {
                        return Err(Error::parse(&name, lineno, format!("host on undeclared {s}")));
                    }
                    if hosts.insert(h, s).is_some() {
                        return Err(Error::parse(&name, lineno, format!("duplicate {h}")));
                    }
                }
                "link" if fields.len() == 3 => {
                    let a = SwitchId(parse_id(fields[1])?);
                    let b = SwitchId(parse_id(fields[2])?);
                    for end in [a, b] {
                        if !adjacency.contains_key(&end) {
                            return Err(Error::parse(&name, lineno, format!("link to undeclared {end}")));
                        }
                    }
                    if a == b {
                        return Err(Error::parse(&name, lineno, "self-link".to_string()));
                    }
                    adjacency.get_mut(&a).unwrap().insert(b);
                    adjacency.get_mut(&b).unwrap().insert(a);
                }
                other => {
                    return Err(Error::parse(&name, lineno, format!("unrecognized record {other:?}")));
                }
            }
        }
        Topology::from_parts(adjacency, hosts)
            .map_err(|e| Error::parse(&name, 0, e.to_string()))
    }

    pub fn switches(&self) -> impl Iterator<Item = SwitchId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn num_switches(&self) -> usize {
        self.adjacency.len()
    }

    pub fn hosts(&self) -> impl Iterator<Item = HostId> + '_ {
        self.hosts.keys().copied()
    }

    pub fn num_hosts(&self) -> usize {
        self.hosts.len()
    }

    pub fn attachment(&self, host: HostId) -> Result<SwitchId> {
        self.hosts
            .get(&host)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("unknown host {host}")))
    }

    fn is_connected(&self) -> bool {
        let start = *self.adjacency.keys().next().unwrap();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for &n in &self.adjacency[&s] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.len() == self.adjacency.len()
    }

    /// Switch path between two hosts, both endpoints' edge switches included.
    /// Among shortest paths the lexicographically smallest id sequence wins,
    /// so routing is deterministic. Hosts on the same switch get a one-switch
    /// path.
    pub fn route(&self, src: HostId, dst: HostId) -> Result<Vec<SwitchId>> {
        let from = self.attachment(src)?;
        let to = self.attachment(dst)?;
        if from == to {
            return Ok(vec![from]);
        }
        // distances toward `to`, then greedily walk downhill picking the
        // smallest next id; that is exactly the lexicographic minimum.
        let mut dist: BTreeMap<SwitchId, u32> = BTreeMap::from([(to, 0)]);
        let mut queue = VecDeque::from([to]);
        while let Some(s) = queue.pop_front() {
            let d = dist[&s];
            for &n in &self.adjacency[&s] {
                if !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        if !dist.contains_key(&from) {
            return Err(Error::Unreachable { src, dst });
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let d = dist[&cur];
            let next = self.adjacency[&cur]
                .iter()
                .copied()
                .find(|n| dist.get(n) == Some(&(d - 1)))
                .expect("BFS distance always has a downhill neighbor");
            path.push(next);
            cur = next;
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::io::Write;

    #[test]
    fn star_shape() {
        let t = Topology::star(2, 4, 8).unwrap();
        assert_eq!(t.num_switches(), 6);
        assert_eq!(t.num_hosts(), 32);
        assert_eq!(t.attachment(HostId(0)).unwrap(), SwitchId(2));
        assert_eq!(t.attachment(HostId(31)).unwrap(), SwitchId(5));
    }

    #[test]
    fn star_routes_via_smallest_core() {
        let t = Topology::star(2, 2, 1).unwrap();
        assert_eq!(
            t.route(HostId(0), HostId(1)).unwrap(),
            vec![SwitchId(2), SwitchId(0), SwitchId(3)]
        );
        assert_eq!(
            t.route(HostId(1), HostId(0)).unwrap(),
            vec![SwitchId(3), SwitchId(0), SwitchId(2)]
        );
    }

    #[test]
    fn same_switch_hosts_route_through_one_switch() {
        let t = Topology::star(1, 1, 2).unwrap();
        assert_eq!(t.route(HostId(0), HostId(1)).unwrap(), vec![SwitchId(1)]);
        assert_eq!(t.route(HostId(0), HostId(0)).unwrap(), vec![SwitchId(1)]);
    }

    #[test]
    fn fat_tree_k2_shape() {
        let t = Topology::fat_tree(2).unwrap();
        assert_eq!(t.num_switches(), 5);
        assert_eq!(t.num_hosts(), 2);
    }

    #[test]
    fn fat_tree_k4_shape() {
        let t = Topology::fat_tree(4).unwrap();
        assert_eq!(t.num_switches(), 20);
        assert_eq!(t.num_hosts(), 16);
    }

    #[test]
    fn fat_tree_rejects_odd_k() {
        assert!(Topology::fat_tree(3).is_err());
        assert!(Topology::fat_tree(0).is_err());
    }

    #[test]
    fn inter_pod_paths_have_five_switches() {
        let t = Topology::fat_tree(4).unwrap();
        // hosts 0..3 in pod 0, 4..7 in pod 1, ...
        for (a, b) in [(0u32, 4u32), (0, 15), (5, 12), (3, 8)] {
            let p = t.route(HostId(a), HostId(b)).unwrap();
            assert_eq!(p.len(), 5, "hosts {a}->{b} path {p:?}");
        }
        // same pod, different edge switch: edge-agg-edge
        let p = t.route(HostId(0), HostId(2)).unwrap();
        assert_eq!(p.len(), 3);
        // same edge switch
        let p = t.route(HostId(0), HostId(1)).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn routes_match_bfs_distances() {
        // Independent BFS oracle for path length over all host pairs.
        let t = Topology::fat_tree(4).unwrap();
        let hosts: Vec<HostId> = t.hosts().collect();
        let mut adj: HashMap<SwitchId, Vec<SwitchId>> = HashMap::new();
        for s in t.switches() {
            adj.insert(s, Vec::new());
        }
        for s in t.switches() {
            for n in t.adjacency[&s].iter() {
                adj.get_mut(&s).unwrap().push(*n);
            }
        }
        for &a in &hosts {
            for &b in &hosts {
                let start = t.attachment(a).unwrap();
                let goal = t.attachment(b).unwrap();
                let mut dist = HashMap::from([(start, 1usize)]);
                let mut queue = VecDeque::from([start]);
                while let Some(s) = queue.pop_front() {
                    for &n in &adj[&s] {
                        if !dist.contains_key(&n) {
                            dist.insert(n, dist[&s] + 1);
                            queue.push_back(n);
                        }
                    }
                }
                let p = t.route(a, b).unwrap();
                assert_eq!(p.len(), dist[&goal], "{a}->{b}");
                // consecutive hops are real links
                for w in p.windows(2) {
                    assert!(t.adjacency[&w[0]].contains(&w[1]));
                }
            }
        }
    }

    #[test]
    fn route_is_deterministic() {
        let t = Topology::fat_tree(6).unwrap();
        let p1 = t.route(HostId(0), HostId(50)).unwrap();
        let p2 = t.route(HostId(0), HostId(50)).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn edge_list_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# tiny triangle").unwrap();
        writeln!(f, "switch 0").unwrap();
        writeln!(f, "switch 1").unwrap();
        writeln!(f, "switch 2").unwrap();
        writeln!(f, "link 0 1").unwrap();
        writeln!(f, "link 1 2  # redundant path").unwrap();
        writeln!(f, "link 0 2").unwrap();
        writeln!(f, "host 0 0").unwrap();
        writeln!(f, "host 1 2").unwrap();
        f.flush().unwrap();
        let t = Topology::load(f.path()).unwrap();
        assert_eq!(t.num_switches(), 3);
        assert_eq!(t.route(HostId(0), HostId(1)).unwrap(), vec![SwitchId(0), SwitchId(2)]);
    }

    #[test]
    fn load_reports_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "switch 0").unwrap();
        writeln!(f, "frobnicate 1 2").unwrap();
        f.flush().unwrap();
        match Topology::load(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_disconnected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "switch 0\nswitch 1").unwrap();
        f.flush().unwrap();
        assert!(Topology::load(f.path()).is_err());
    }
}
