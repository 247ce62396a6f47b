//! Graph analytics over the network: simple-cycle enumeration for the
//! radiality constraints and connectivity/radiality checks of candidate
//! switch states.
//!
//! All source buses are merged into a single root vertex, so a path between
//! two feeder heads through a tie switch counts as a loop.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::netmodel::{FaultScenario, NetworkModel};

pub const DEFAULT_CYCLE_CAP: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("cycle enumeration exceeded the cap of {cap} cycles")]
    TooManyCycles { cap: usize },
    #[error("cycle cache `{path}`: {message}")]
    Cache { path: String, message: String },
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Simple cycle of the graph with every switch closed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cycle {
    /// Edge indices in traversal order.
    pub edges: Vec<usize>,
    /// Switchable members, ascending.
    pub switch_members: Vec<usize>,
}

impl Cycle {
    pub fn edge_ids(&self, model: &NetworkModel) -> Vec<String> {
        self.edges
            .iter()
            .map(|k| model.edge(*k).id.clone())
            .collect()
    }

    fn sort_key(&self, model: &NetworkModel) -> Vec<String> {
        let mut ids = self.edge_ids(model);
        ids.sort();
        ids
    }
}

/// Reduced graph edge: a maximal chain of original edges whose interior
/// vertices have degree two.
struct Chain {
    a: usize,
    b: usize,
    edges: Vec<usize>,
}

/// Enumerates every simple cycle of the network with all switches
/// (including virtual DG edges) closed. Output is sorted by the sorted edge
/// id list of each cycle.
pub fn enumerate_cycles(model: &NetworkModel, cap: usize) -> Result<Vec<Cycle>, TopologyError> {
    let n = model.vertex_count();
    let m = model.edges().len();
    let ends: Vec<(usize, usize)> = (0..m).map(|k| model.edge_vertices(k)).collect();

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(u, v)) in ends.iter().enumerate() {
        adj[u].push(k);
        if u != v {
            adj[v].push(k);
        }
    }

    // 2-core: strip pendant vertices; they never lie on a cycle.
    let mut alive_edge = vec![true; m];
    let mut degree: Vec<usize> = (0..n)
        .map(|v| {
            adj[v]
                .iter()
                .map(|k| if ends[*k].0 == ends[*k].1 { 2 } else { 1 })
                .sum()
        })
        .collect();
    let mut stack: Vec<usize> = (0..n).filter(|v| degree[*v] == 1).collect();
    while let Some(v) = stack.pop() {
        if degree[v] != 1 {
            continue;
        }
        let Some(&k) = adj[v].iter().find(|k| alive_edge[**k]) else {
            continue;
        };
        alive_edge[k] = false;
        degree[v] = 0;
        let w = if ends[k].0 == v { ends[k].1 } else { ends[k].0 };
        degree[w] -= 1;
        if degree[w] == 1 {
            stack.push(w);
        }
    }

    // Branch vertices: degree other than two, plus one vertex per pure ring.
    let mut branch: Vec<bool> = (0..n).map(|v| degree[v] > 0 && degree[v] != 2).collect();
    let mut chain_seen = vec![false; m];
    let mut chains: Vec<Chain> = Vec::new();
    let walk = |start: usize, first: usize, branch: &[bool], chain_seen: &mut [bool]| -> Chain {
        let mut edges = vec![first];
        chain_seen[first] = true;
        let mut prev_edge = first;
        let mut cur = if ends[first].0 == start {
            ends[first].1
        } else {
            ends[first].0
        };
        while !branch[cur] {
            let next = adj[cur]
                .iter()
                .copied()
                .find(|k| alive_edge[*k] && *k != prev_edge)
                .expect("degree-two vertex has a second edge");
            chain_seen[next] = true;
            edges.push(next);
            prev_edge = next;
            cur = if ends[next].0 == cur {
                ends[next].1
            } else {
                ends[next].0
            };
        }
        Chain {
            a: start,
            b: cur,
            edges,
        }
    };
    for v in 0..n {
        if !branch[v] {
            continue;
        }
        for &k in &adj[v] {
            if alive_edge[k] && !chain_seen[k] {
                let chain = walk(v, k, &branch, &mut chain_seen);
                chains.push(chain);
            }
        }
    }
    for v in 0..n {
        if degree[v] == 2 && !branch[v] {
            if let Some(&k) = adj[v].iter().find(|k| alive_edge[**k] && !chain_seen[**k]) {
                branch[v] = true;
                let chain = walk(v, k, &branch, &mut chain_seen);
                chains.push(chain);
            }
        }
    }

    let mut found: Vec<Vec<usize>> = Vec::new();
    let mut radj: HashMap<usize, Vec<usize>> = HashMap::new();
    for (c, chain) in chains.iter().enumerate() {
        if chain.a == chain.b {
            found.push(vec![c]);
            continue;
        }
        radj.entry(chain.a).or_default().push(c);
        radj.entry(chain.b).or_default().push(c);
    }
    let mut vertices: Vec<usize> = radj.keys().copied().collect();
    vertices.sort_unstable();

    for &s in &vertices {
        // Depth-first search over vertices above `s`; every cycle is found
        // once per direction, kept when its first chain id is smaller.
        let mut on_path: BTreeSet<usize> = BTreeSet::from([s]);
        let mut path: Vec<usize> = Vec::new();
        let mut iters: Vec<(usize, usize)> = vec![(s, 0)];
        while let Some(&(v, pos)) = iters.last() {
            let nbrs = &radj[&v];
            if pos >= nbrs.len() {
                iters.pop();
                path.pop();
                if v != s {
                    on_path.remove(&v);
                }
                continue;
            }
            iters.last_mut().expect("frame").1 += 1;
            let c = nbrs[pos];
            if path.last() == Some(&c) {
                continue;
            }
            let chain = &chains[c];
            let w = if chain.a == v { chain.b } else { chain.a };
            if w == s {
                if path.first().is_some_and(|first| *first < c) {
                    let mut cyc = path.clone();
                    cyc.push(c);
                    found.push(cyc);
                    if found.len() > cap {
                        return Err(TopologyError::TooManyCycles { cap });
                    }
                }
                continue;
            }
            if w < s || on_path.contains(&w) {
                continue;
            }
            on_path.insert(w);
            path.push(c);
            iters.push((w, 0));
        }
    }
    if found.len() > cap {
        return Err(TopologyError::TooManyCycles { cap });
    }

    let mut cycles: Vec<Cycle> = found
        .into_iter()
        .map(|chain_ids| {
            let edges: Vec<usize> = chain_ids
                .iter()
                .flat_map(|c| chains[*c].edges.iter().copied())
                .collect();
            let mut switch_members: Vec<usize> = edges
                .iter()
                .copied()
                .filter(|k| model.is_switchable(*k))
                .collect();
            switch_members.sort_unstable();
            Cycle {
                edges,
                switch_members,
            }
        })
        .collect();
    let mut keyed: Vec<(Vec<String>, Cycle)> =
        cycles.drain(..).map(|c| (c.sort_key(model), c)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(keyed.into_iter().map(|(_, c)| c).collect())
}

/// Edge ids of a cycle closed by `edge` through edges accepted by `usable`.
/// Returns just the edge itself if no such path exists.
pub(crate) fn cycle_through_edge(
    model: &NetworkModel,
    edge: usize,
    usable: impl Fn(usize) -> bool,
) -> Vec<String> {
    let (src, dst) = model.edge_vertices(edge);
    let mut ids = vec![model.edge(edge).id.clone()];
    if let Some(path) = vertex_path(model, src, dst, |k| k != edge && usable(k)) {
        ids.extend(path.into_iter().map(|k| model.edge(k).id.clone()));
    }
    ids
}

/// Shortest path between two graph vertices using only accepted edges.
fn vertex_path(
    model: &NetworkModel,
    src: usize,
    dst: usize,
    usable: impl Fn(usize) -> bool,
) -> Option<Vec<usize>> {
    if src == dst {
        return Some(Vec::new());
    }
    let n = model.vertex_count();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for k in 0..model.edges().len() {
        if usable(k) {
            let (u, v) = model.edge_vertices(k);
            adj[u].push(k);
            adj[v].push(k);
        }
    }
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[src] = true;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            break;
        }
        for &k in &adj[u] {
            let (a, b) = model.edge_vertices(k);
            let w = if a == u { b } else { a };
            if !seen[w] {
                seen[w] = true;
                via[w] = Some(k);
                queue.push_back(w);
            }
        }
    }
    if !seen[dst] {
        return None;
    }
    let mut path = Vec::new();
    let mut cur = dst;
    while cur != src {
        let k = via[cur].expect("bfs predecessor");
        path.push(k);
        let (a, b) = model.edge_vertices(k);
        cur = if a == cur { b } else { a };
    }
    path.reverse();
    Some(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CycleCacheFile {
    model_hash: String,
    cycles: Vec<Vec<String>>,
}

/// Cycles cached on disk, keyed by the model content hash.
pub fn load_or_enumerate_cycles(
    model: &NetworkModel,
    cache: Option<&Path>,
    cap: usize,
) -> Result<Vec<Cycle>, TopologyError> {
    let hash = model.content_hash();
    if let Some(path) = cache {
        if let Ok(text) = fs::read_to_string(path) {
            let file: CycleCacheFile =
                serde_json::from_str(&text).map_err(|e| TopologyError::Cache {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            if file.model_hash == hash {
                if let Some(cycles) = cycles_from_ids(model, &file.cycles) {
                    log::debug!("loaded {} cycles from {}", cycles.len(), path.display());
                    return Ok(cycles);
                }
            }
            log::info!("cycle cache {} is stale, recomputing", path.display());
        }
    }
    let cycles = enumerate_cycles(model, cap)?;
    if let Some(path) = cache {
        write_cycle_cache(model, &cycles, path)?;
    }
    Ok(cycles)
}

pub fn write_cycle_cache(
    model: &NetworkModel,
    cycles: &[Cycle],
    path: &Path,
) -> Result<(), TopologyError> {
    let file = CycleCacheFile {
        model_hash: model.content_hash(),
        cycles: cycles.iter().map(|c| c.edge_ids(model)).collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("cache serializes");
    fs::write(path, text).map_err(|e| TopologyError::Cache {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn cycles_from_ids(model: &NetworkModel, ids: &[Vec<String>]) -> Option<Vec<Cycle>> {
    ids.iter()
        .map(|cycle| {
            let edges = cycle
                .iter()
                .map(|id| model.edge_index(id))
                .collect::<Option<Vec<_>>>()?;
            let mut switch_members: Vec<usize> = edges
                .iter()
                .copied()
                .filter(|k| model.is_switchable(*k))
                .collect();
            switch_members.sort_unstable();
            Some(Cycle {
                edges,
                switch_members,
            })
        })
        .collect()
}

/// Open/closed status of every edge. Non-switch edges are closed unless
/// taken out of service by a fault.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyState {
    pub closed: Vec<bool>,
    /// Edges that must stay open (faulted or isolating); empty when unknown.
    pub forced_open: Vec<bool>,
}

impl TopologyState {
    pub fn normal(model: &NetworkModel) -> Self {
        TopologyState {
            closed: model.normal_closed(),
            forced_open: vec![false; model.edges().len()],
        }
    }

    pub fn post_fault(model: &NetworkModel, scenario: &FaultScenario) -> Self {
        TopologyState {
            closed: scenario.post_fault_closed(model),
            forced_open: scenario.forced_open(model),
        }
    }

    pub fn from_closed(closed: Vec<bool>) -> Self {
        let n = closed.len();
        TopologyState {
            closed,
            forced_open: vec![false; n],
        }
    }

    pub fn with_forced_open(mut self, forced_open: Vec<bool>) -> Self {
        self.forced_open = forced_open;
        self
    }

    pub fn closed_ids(&self, model: &NetworkModel) -> Vec<String> {
        (0..self.closed.len())
            .filter(|k| self.closed[*k])
            .map(|k| model.edge(k).id.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialityReport {
    pub radial: bool,
    /// Bus indices reachable from a source through closed edges.
    pub energized_buses: BTreeSet<usize>,
    pub violations: Vec<String>,
}

/// Radial: the closed edges form a forest (with all sources merged), so
/// every energized component holds exactly one source. Energized: reachable
/// from a source. Closing a forced-open edge is also a violation.
pub fn is_radial_connected(model: &NetworkModel, state: &TopologyState) -> RadialityReport {
    let mut violations = Vec::new();
    let mut uf = UnionFind::new(model.vertex_count());
    for k in 0..model.edges().len() {
        if !state.closed[k] {
            continue;
        }
        if state.forced_open.get(k).copied().unwrap_or(false) {
            violations.push(format!(
                "edge `{}` is faulted or isolating but closed",
                model.edge(k).id
            ));
        }
        let (u, v) = model.edge_vertices(k);
        if !uf.union(u, v) {
            let ids = cycle_through_edge(model, k, |e| e < k && state.closed[e]);
            violations.push(format!(
                "loop closed by `{}`: {}",
                model.edge(k).id,
                ids.join(" -> ")
            ));
        }
    }
    let root = uf.find(0);
    let energized_buses: BTreeSet<usize> = (0..model.buses().len())
        .filter(|i| uf.find(model.vertex_of_bus(*i)) == root)
        .collect();
    RadialityReport {
        radial: violations.is_empty(),
        energized_buses,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{synth_multifeeder, SynthSpec};

    #[test]
    fn union_find_detects_loops() {
        let mut uf = UnionFind::new(3);
        assert!(uf.union(0, 1));
        assert!(uf.union(1, 2));
        assert!(!uf.union(0, 2));
    }

    #[test]
    fn radial_feeder_has_no_cycles() {
        let model = synth_multifeeder(&SynthSpec::new(1, 8, 0, 0, 3)).unwrap();
        assert!(enumerate_cycles(&model, DEFAULT_CYCLE_CAP)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn one_tie_gives_one_cycle() {
        let model = synth_multifeeder(&SynthSpec::new(2, 5, 1, 0, 11)).unwrap();
        let cycles = enumerate_cycles(&model, DEFAULT_CYCLE_CAP).unwrap();
        assert_eq!(cycles.len(), 1);
        assert!(cycles[0]
            .switch_members
            .contains(&model.edge_index("tie1").unwrap()));
    }

    #[test]
    fn cap_is_enforced() {
        let model = synth_multifeeder(&SynthSpec::new(3, 6, 4, 2, 5)).unwrap();
        let all = enumerate_cycles(&model, DEFAULT_CYCLE_CAP).unwrap();
        assert!(all.len() > 2);
        assert!(matches!(
            enumerate_cycles(&model, 2),
            Err(TopologyError::TooManyCycles { cap: 2 })
        ));
    }

    #[test]
    fn closing_a_tie_breaks_radiality() {
        let model = synth_multifeeder(&SynthSpec::new(2, 5, 1, 0, 11)).unwrap();
        let normal = TopologyState::normal(&model);
        let report = is_radial_connected(&model, &normal);
        assert!(report.radial);
        assert_eq!(report.energized_buses.len(), model.buses().len());

        let mut looped = normal.clone();
        looped.closed[model.edge_index("tie1").unwrap()] = true;
        let report = is_radial_connected(&model, &looped);
        assert!(!report.radial);
        assert!(report.violations[0].contains("tie1"));
    }

    #[test]
    fn cache_round_trip() {
        let model = synth_multifeeder(&SynthSpec::new(2, 6, 2, 1, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.json");
        let first = load_or_enumerate_cycles(&model, Some(&path), DEFAULT_CYCLE_CAP).unwrap();
        assert!(path.exists());
        let second = load_or_enumerate_cycles(&model, Some(&path), DEFAULT_CYCLE_CAP).unwrap();
        assert_eq!(first, second);
    }
}
