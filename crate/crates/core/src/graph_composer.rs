//! Per-query skill graphs: composition from retrieved skills, coarse-to-fine
//! plan ordering, trajectory validation and the shuffled-edge ablation.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::{update_confidence, DEFAULT_PSEUDO_COUNT};
use crate::skill_model::{AtomicSkill, RelationPrior, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub stage: Stage,
    #[serde(skip)]
    pub confidence: f64,
}

/// Task-specific skill graph. Nodes keep insertion order; edges are an
/// ordered set of (from, to) pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSkillGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: BTreeSet<(String, String)>,
}

/// Serialized graph: `{"nodes":[{"id":..,"stage":..}],"edges":[["a","b"]]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("cycle detected among {0:?}")]
    Cycle(Vec<String>),
    #[error("edge {0} -> {1} references a missing node")]
    DanglingEdge(String, String),
}

impl TaskSkillGraph {
    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&(from.to_string(), to.to_string()))
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump { nodes: self.nodes.clone(), edges: self.edges.iter().cloned().collect() }
    }

    pub fn from_dump(dump: GraphDump) -> Self {
        TaskSkillGraph { nodes: dump.nodes, edges: dump.edges.into_iter().collect() }
    }

    pub fn out_degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|(a, _)| a == id).count()
    }

    /// Edges that point from a later stage to an earlier one.
    pub fn stage_violations(&self) -> Vec<(String, String)> {
        let stage: HashMap<&str, Stage> = self.nodes.iter().map(|n| (n.id.as_str(), n.stage)).collect();
        self.edges
            .iter()
            .filter(|(a, b)| matches!((stage.get(a.as_str()), stage.get(b.as_str())), (Some(sa), Some(sb)) if sa > sb))
            .cloned()
            .collect()
    }

    /// Checks endpoint closure and acyclicity.
    pub fn check_dag(&self) -> Result<(), GraphError> {
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        for (a, b) in &self.edges {
            if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                return Err(GraphError::DanglingEdge(a.clone(), b.clone()));
            }
        }
        let order = kahn(self, |_| ());
        if order.len() != self.nodes.len() {
            let placed: BTreeSet<&str> = order.iter().map(|&i| self.nodes[i].id.as_str()).collect();
            let stuck = ids.into_iter().filter(|id| !placed.contains(id)).map(String::from).collect();
            return Err(GraphError::Cycle(stuck));
        }
        Ok(())
    }
}

/// Kahn's algorithm picking the smallest ready node by `key`; returns node
/// positions. Fewer positions than nodes means a cycle.
fn kahn<K: Ord>(graph: &TaskSkillGraph, key: impl Fn(&GraphNode) -> K) -> Vec<usize> {
    let pos: HashMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; graph.nodes.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for (a, b) in &graph.edges {
        if let (Some(&ia), Some(&ib)) = (pos.get(a.as_str()), pos.get(b.as_str())) {
            succ[ia].push(ib);
            indegree[ib] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<(K, usize)>> = BinaryHeap::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        if indegree[i] == 0 {
            ready.push(Reverse((key(n), i)));
        }
    }
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse((key(&graph.nodes[j]), j)));
            }
        }
    }
    order
}

fn shares_applicability(a: &AtomicSkill, b: &AtomicSkill) -> bool {
    !a.countries.is_disjoint(&b.countries) || !a.regions.is_disjoint(&b.regions)
}

fn adjacent_stages(a: Stage, b: Stage) -> bool {
    matches!((a, b), (Stage::GlobalRegion, Stage::Country) | (Stage::Country, Stage::Local))
}

/// Composes the task graph over `skills`.
///
/// Edge (a, b) exists iff a != b, stage(a) <= stage(b), and one of:
/// a relation prior a -> b with support > failure; b is the next stage after
/// a and the pair shares a country code or region tag; stage(a) < stage(b)
/// with `a` global (no country constraint).
/// Cycles can only arise among same-stage prior edges and are broken by
/// dropping the lowest-support edge of each cycle found.
pub fn compose_graph(skills: &[&AtomicSkill], priors: &[RelationPrior]) -> TaskSkillGraph {
    let mut nodes = Vec::with_capacity(skills.len());
    let mut by_id: BTreeMap<&str, &AtomicSkill> = BTreeMap::new();
    for s in skills {
        if by_id.insert(s.id.as_str(), s).is_none() {
            nodes.push(GraphNode {
                id: s.id.clone(),
                stage: s.stage,
                confidence: update_confidence(s, DEFAULT_PSEUDO_COUNT),
            });
        }
    }

    let mut edges = BTreeSet::new();
    for a in by_id.values() {
        for b in by_id.values() {
            let feeds = (a.is_global() && a.stage < b.stage)
                || (adjacent_stages(a.stage, b.stage) && shares_applicability(a, b));
            if a.id != b.id && feeds {
                edges.insert((a.id.clone(), b.id.clone()));
            }
        }
    }

    // Prior-backed edges. Cross-stage ones cannot close a cycle; same-stage
    // ones are collected with their support for cycle breaking.
    let mut same_stage: BTreeMap<(String, String), u64> = BTreeMap::new();
    for p in priors {
        let (Some(a), Some(b)) = (by_id.get(p.from.as_str()), by_id.get(p.to.as_str())) else { continue };
        if a.id == b.id || a.stage > b.stage || p.support <= p.failure {
            continue;
        }
        if a.stage < b.stage {
            edges.insert((a.id.clone(), b.id.clone()));
        } else {
            let slot = same_stage.entry((a.id.clone(), b.id.clone())).or_insert(0);
            *slot = (*slot).max(p.support);
        }
    }
    while let Some(cycle) = find_cycle(&same_stage) {
        let weakest = cycle
            .iter()
            .min_by(|x, y| same_stage[*x].cmp(&same_stage[*y]).then_with(|| y.cmp(x)))
            .cloned()
            .expect("a cycle has at least one edge");
        same_stage.remove(&weakest);
    }
    edges.extend(same_stage.into_keys());

    TaskSkillGraph { nodes, edges }
}

/// Edges of one directed cycle, if any.
fn find_cycle(edges: &BTreeMap<(String, String), u64>) -> Option<Vec<(String, String)>> {
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges.keys() {
        succ.entry(a.as_str()).or_default().push(b.as_str());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut stack: Vec<&str> = Vec::new();

    fn dfs<'a>(
        v: &'a str,
        succ: &BTreeMap<&'a str, Vec<&'a str>>,
        state: &mut HashMap<&'a str, u8>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<(String, String)>> {
        state.insert(v, 1);
        stack.push(v);
        for &w in succ.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            match state.get(w).copied().unwrap_or(0) {
                1 => {
                    let start = stack.iter().position(|&x| x == w).expect("w is on the stack");
                    let mut cyc: Vec<(String, String)> =
                        stack[start..].windows(2).map(|p| (p[0].to_string(), p[1].to_string())).collect();
                    cyc.push((v.to_string(), w.to_string()));
                    return Some(cyc);
                }
                0 => {
                    if let Some(c) = dfs(w, succ, state, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        state.insert(v, 2);
        None
    }

    let starts: Vec<&str> = succ.keys().copied().collect();
    for v in starts {
        if state.get(v).copied().unwrap_or(0) == 0 {
            if let Some(c) = dfs(v, &succ, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Total order of ordered f64 keys used for confidence-descending sorting.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Desc(f64);

impl Eq for Desc {}

impl PartialOrd for Desc {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Desc {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Coarse-to-fine plan: a topological order that prefers lower stage, then
/// higher confidence, then smaller id among ready nodes.
pub fn order_plan(graph: &TaskSkillGraph) -> Result<Vec<String>, GraphError> {
    let order = kahn(graph, |n| (n.stage, Desc(n.confidence), n.id.clone()));
    if order.len() != graph.nodes.len() {
        graph.check_dag()?;
    }
    Ok(order.into_iter().map(|i| graph.nodes[i].id.clone()).collect())
}

/// A trajectory failure: the first step that is not a node, or the first
/// consecutive pair that is not an edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryViolation {
    pub step: usize,
    pub reason: String,
}

/// Ok iff every step is a node and every consecutive pair is an edge.
pub fn validate_trajectory(graph: &TaskSkillGraph, trajectory: &[String]) -> Result<(), TrajectoryViolation> {
    for (i, id) in trajectory.iter().enumerate() {
        if graph.node(id).is_none() {
            return Err(TrajectoryViolation { step: i, reason: format!("{id} is not a graph node") });
        }
    }
    for (i, pair) in trajectory.windows(2).enumerate() {
        if !graph.has_edge(&pair[0], &pair[1]) {
            return Err(TrajectoryViolation {
                step: i,
                reason: format!("{} -> {} is not an edge", pair[0], pair[1]),
            });
        }
    }
    Ok(())
}

/// Re-draws the same number of edges uniformly at random, ignoring stages.
///
/// Nodes are shuffled into a random order and edges are sampled among pairs
/// that respect it, so the result stays acyclic and executable.
pub fn shuffle_edges(graph: &TaskSkillGraph, seed: u64) -> TaskSkillGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..graph.nodes.len()).collect();
    order.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            pairs.push((order[i], order[j]));
        }
    }
    pairs.shuffle(&mut rng);
    let edges = pairs
        .into_iter()
        .take(graph.edges.len())
        .map(|(a, b)| (graph.nodes[a].id.clone(), graph.nodes[b].id.clone()))
        .collect();
    TaskSkillGraph { nodes: graph.nodes.clone(), edges }
}
