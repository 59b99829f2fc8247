//! Cycle detection, anomaly verdicts, classification, and cycle reduction.
//!
//! A schedule has a data anomaly exactly when its POP graph has a cycle;
//! it is consistent when the graph is acyclic. Cycles are classified two
//! ways: by primitive conflict content (RAT has a WR edge, WAT has WW but
//! no WR, IAT has neither — the committed variants do not count) and by
//! size (SDA two transactions on one object, DDA two on two, MDA
//! everything else). Any cycle can be reduced to one with at most two
//! transactions per object touched, and single-object cycles always
//! reduce to two transactions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::pop::{build_graph, extract_pops, InvalidSchedule, Pop, PopGraph, PopType};
use crate::schedule::{version_precedes, OpKind, Schedule, TxnId};

/// A simple directed cycle of POP edges: each edge's target is the next
/// edge's source and the last edge returns to the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopCycle {
    edges: Vec<Pop>,
}

impl PopCycle {
    /// Builds a cycle, normalizing rotation so the smallest transaction id
    /// comes first. Panics if the edges do not close a simple cycle.
    pub fn new(edges: Vec<Pop>) -> Self {
        assert!(!edges.is_empty(), "a cycle needs at least one edge");
        let n = edges.len();
        for i in 0..n {
            assert_eq!(
                edges[i].to,
                edges[(i + 1) % n].from,
                "edges do not chain into a cycle"
            );
        }
        let vertices: BTreeSet<TxnId> = edges.iter().map(|e| e.from).collect();
        assert_eq!(vertices.len(), n, "cycle revisits a transaction");
        let min = *vertices.iter().next().unwrap();
        let start = edges.iter().position(|e| e.from == min).unwrap();
        let mut rotated = edges;
        rotated.rotate_left(start);
        PopCycle { edges: rotated }
    }

    pub fn edges(&self) -> &[Pop] {
        &self.edges
    }

    /// Vertex list in traversal order starting from the smallest id.
    pub fn txns(&self) -> Vec<TxnId> {
        self.edges.iter().map(|e| e.from).collect()
    }

    pub fn objects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.edges.iter().map(|e| e.object.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn n_t(&self) -> usize {
        self.edges.len()
    }

    pub fn n_obj(&self) -> usize {
        self.objects().len()
    }
}

impl fmt::Display for PopCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictClass {
    Rat,
    Wat,
    Iat,
}

impl fmt::Display for ConflictClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConflictClass::Rat => "RAT",
            ConflictClass::Wat => "WAT",
            ConflictClass::Iat => "IAT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GranularityClass {
    Sda,
    Dda,
    Mda,
}

impl fmt::Display for GranularityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GranularityClass::Sda => "SDA",
            GranularityClass::Dda => "DDA",
            GranularityClass::Mda => "MDA",
        })
    }
}

/// Consistency verdict for a schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Anomaly(AnomalyReport),
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Verdict::Anomaly(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyReport {
    /// A reduced witness cycle.
    pub cycle: PopCycle,
    pub conflict: ConflictClass,
    pub granularity: GranularityClass,
    /// Ids of catalog cases whose combination the witness cycles match.
    pub catalog_matches: Vec<u8>,
}

/// Result of bounded cycle enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleEnumeration {
    pub cycles: Vec<PopCycle>,
    /// True when the cap cut the enumeration short.
    pub truncated: bool,
}

/// Enumerates up to `max` simple cycles in a stable order: each cycle is
/// discovered rooted at its smallest transaction, depth-first over edges
/// sorted by target. Parallel edges yield distinct cycles.
pub fn enumerate_cycles(g: &PopGraph, max: usize) -> CycleEnumeration {
    assert!(max >= 1, "cap must be at least 1");
    let mut cycles = Vec::new();
    let mut truncated = false;
    for &root in &g.vertices {
        if truncated {
            break;
        }
        let mut path: Vec<Pop> = Vec::new();
        let mut visited = BTreeSet::new();
        visited.insert(root);
        dfs(
            g,
            root,
            root,
            &mut visited,
            &mut path,
            &mut cycles,
            max,
            &mut truncated,
        );
    }
    CycleEnumeration { cycles, truncated }
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &PopGraph,
    root: TxnId,
    at: TxnId,
    visited: &mut BTreeSet<TxnId>,
    path: &mut Vec<Pop>,
    cycles: &mut Vec<PopCycle>,
    max: usize,
    truncated: &mut bool,
) {
    for e in g.edges_from(at) {
        if *truncated {
            return;
        }
        if e.to == root {
            if cycles.len() == max {
                *truncated = true;
                return;
            }
            let mut edges = path.clone();
            edges.push(e.clone());
            cycles.push(PopCycle::new(edges));
        } else if e.to > root && !visited.contains(&e.to) {
            visited.insert(e.to);
            path.push(e.clone());
            dfs(g, root, e.to, visited, path, cycles, max, truncated);
            path.pop();
            visited.remove(&e.to);
        }
    }
}

/// First simple cycle in the stable enumeration order, if any.
pub fn find_cycle(g: &PopGraph) -> Option<PopCycle> {
    enumerate_cycles(g, 1).cycles.into_iter().next()
}

/// Classifies a cycle by conflict content and by size.
pub fn classify(c: &PopCycle) -> (ConflictClass, GranularityClass) {
    let has = |k: PopType| c.edges().iter().any(|e| e.kind == k);
    let conflict = if has(PopType::Wr) {
        ConflictClass::Rat
    } else if has(PopType::Ww) {
        ConflictClass::Wat
    } else {
        ConflictClass::Iat
    };
    let granularity = match (c.n_t(), c.n_obj()) {
        (2, 1) => GranularityClass::Sda,
        (2, 2) => GranularityClass::Dda,
        _ => GranularityClass::Mda,
    };
    (conflict, granularity)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReduceError {
    #[error("cycle touches {0} objects; single-object reduction needs exactly one")]
    NotSingleObject(usize),
    #[error(transparent)]
    InvalidSchedule(#[from] InvalidSchedule),
}

/// Reduces a single-object cycle to a two-transaction cycle on the same
/// object, following the version-order case analysis. Two-transaction
/// inputs are returned unchanged.
pub fn reduce_single_object(c: &PopCycle, s: &Schedule) -> Result<PopCycle, ReduceError> {
    if c.n_obj() != 1 {
        return Err(ReduceError::NotSingleObject(c.n_obj()));
    }
    if c.n_t() == 2 {
        return Ok(c.clone());
    }
    let pops = extract_pops(s)?;
    Ok(reduce_to_two(c.clone(), s, &pops))
}

/// Reduces any cycle of `s` to one with at most `2 * n_obj` transactions
/// and at most two adjacent edges per object. Every edge of the result is
/// a POP of `s`; the object set never grows.
pub fn reduce_cycle(c: &PopCycle, s: &Schedule) -> Result<PopCycle, ReduceError> {
    let pops = extract_pops(s)?;
    Ok(reduce_cycle_inner(c.clone(), s, &pops))
}

fn reduce_cycle_inner(mut cycle: PopCycle, s: &Schedule, pops: &[Pop]) -> PopCycle {
    // a reverse edge closes a two-transaction cycle with its partner
    if let Some(two) = reverse_partner_two_cycle(&cycle, pops) {
        return two;
    }
    loop {
        if cycle.n_t() == 2 {
            return cycle;
        }
        if cycle.n_obj() == 1 {
            return reduce_to_two(cycle, s, pops);
        }
        match find_violating_pair(&cycle) {
            None => return cycle,
            Some((i, j)) => match simplify_pair(&cycle, i, j, s, pops) {
                Some(smaller) => cycle = smaller,
                None => match two_cycle_fallback(&cycle, pops) {
                    Some(two) => return two,
                    None => return cycle,
                },
            },
        }
    }
}

/// If the cycle uses an RA/WC/WA edge, return the two-transaction cycle it
/// forms with its mandatory forward partner.
fn reverse_partner_two_cycle(c: &PopCycle, pops: &[Pop]) -> Option<PopCycle> {
    for e in c.edges() {
        if !e.kind.is_reverse() {
            continue;
        }
        let partner = pops.iter().find(|f| {
            !f.kind.is_reverse() && f.from == e.to && f.to == e.from && f.object == e.object
        })?;
        return Some(PopCycle::new(vec![partner.clone(), e.clone()]));
    }
    None
}

/// First object whose edge multiset violates the reduced form, along with
/// the first non-cyclically-adjacent pair of its edge positions.
fn find_violating_pair(c: &PopCycle) -> Option<(usize, usize)> {
    let n = c.edges().len();
    let adjacent = |i: usize, j: usize| j == i + 1 || (i == 0 && j == n - 1);
    for object in c.objects() {
        let positions: Vec<usize> = c
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.object == object)
            .map(|(i, _)| i)
            .collect();
        if positions.len() < 2 {
            continue;
        }
        if positions.len() == 2 && adjacent(positions[0], positions[1]) {
            continue;
        }
        for a in 0..positions.len() {
            for b in a + 1..positions.len() {
                if !adjacent(positions[a], positions[b]) {
                    return Some((positions[a], positions[b]));
                }
            }
        }
    }
    None
}

/// Witness operation indices of a forward edge.
fn edge_ops(e: &Pop) -> (usize, usize) {
    (e.witness.first, e.witness.second)
}

fn precedes(s: &Schedule, a: usize, b: usize) -> bool {
    version_precedes(&s.ops()[a], &s.ops()[b])
}

fn lookup_edge(pops: &[Pop], from: TxnId, to: TxnId, object: &str) -> Option<Pop> {
    // forward kinds first; the slice is sorted, so this is deterministic
    pops.iter()
        .find(|e| e.from == from && e.to == to && e.object == object && !e.kind.is_reverse())
        .or_else(|| {
            pops.iter()
                .find(|e| e.from == from && e.to == to && e.object == object)
        })
        .cloned()
}

/// Any two-transaction cycle among the given cycle's transactions.
fn two_cycle_fallback(c: &PopCycle, pops: &[Pop]) -> Option<PopCycle> {
    let txns = c.txns();
    for &u in &txns {
        for &v in &txns {
            if u >= v {
                continue;
            }
            let fwd = pops.iter().find(|e| e.from == u && e.to == v);
            let back = pops.iter().find(|e| e.from == v && e.to == u);
            if let (Some(f), Some(b)) = (fwd, back) {
                return Some(PopCycle::new(vec![f.clone(), b.clone()]));
            }
        }
    }
    None
}

/// One simplification step on two same-object, non-adjacent edges at
/// positions `i < j`. Splits on the version order exactly as the
/// reduction proofs do, shortcutting through a POP that the transitivity
/// of `<_s` guarantees. Returns a strictly shorter cycle, or None when
/// the shortcut edge was suppressed by an abort (the caller falls back to
/// a direct two-cycle).
fn simplify_pair(
    c: &PopCycle,
    i: usize,
    j: usize,
    s: &Schedule,
    pops: &[Pop],
) -> Option<PopCycle> {
    let edges = c.edges();
    let e_i = &edges[i];
    let e_j = &edges[j];
    let object = &e_i.object;
    let (a_i, b_i) = edge_ops(e_i);
    let (a_j, b_j) = edge_ops(e_j);
    if s.ops()[a_i].kind == OpKind::Write {
        if precedes(s, a_i, a_j) {
            // a_i <_s a_j <_s b_j: shortcut source to the far edge's target
            let new = lookup_edge(pops, e_i.from, e_j.to, object)?;
            let mut out: Vec<Pop> = edges[..i].to_vec();
            out.push(new);
            out.extend_from_slice(&edges[j + 1..]);
            Some(PopCycle::new(out))
        } else {
            // a_j <_s a_i: back edge from the far source to here
            let new = lookup_edge(pops, e_j.from, e_i.from, object)?;
            let mut out: Vec<Pop> = edges[i..j].to_vec();
            // the chain a_j <_s a_i <_s b_i may admit one more shortcut
            if pair_conflicts(s, a_j, b_i) {
                if let Some(skip) = lookup_edge(pops, e_j.from, e_i.to, object) {
                    let mut shorter: Vec<Pop> = vec![skip];
                    shorter.extend_from_slice(&edges[i + 1..j]);
                    return Some(PopCycle::new(shorter));
                }
            }
            out.push(new);
            Some(PopCycle::new(out))
        }
    } else {
        // a_i is a read, so b_i is the write of the pair
        if precedes(s, b_i, a_j) {
            // b_i <_s a_j <_s b_j: shortcut from this edge's target
            let new = lookup_edge(pops, e_i.to, e_j.to, object)?;
            // chain a_i <_s b_i <_s b_j: skip e_i too when the outer pair conflicts
            if pair_conflicts(s, a_i, b_j) {
                if let Some(skip) = lookup_edge(pops, e_i.from, e_j.to, object) {
                    let mut shorter: Vec<Pop> = edges[..i].to_vec();
                    shorter.push(skip);
                    shorter.extend_from_slice(&edges[j + 1..]);
                    return Some(PopCycle::new(shorter));
                }
            }
            let mut out: Vec<Pop> = edges[..=i].to_vec();
            out.push(new);
            out.extend_from_slice(&edges[j + 1..]);
            Some(PopCycle::new(out))
        } else {
            let new = lookup_edge(pops, e_j.from, e_i.to, object)?;
            let mut out: Vec<Pop> = vec![new];
            out.extend_from_slice(&edges[i + 1..j]);
            Some(PopCycle::new(out))
        }
    }
}

fn pair_conflicts(s: &Schedule, a: usize, b: usize) -> bool {
    let (pa, pb) = (&s.ops()[a], &s.ops()[b]);
    pa.txn != pb.txn && (pa.kind == OpKind::Write || pb.kind == OpKind::Write)
}

/// Single-object reduction loop: peels one transaction per step (or jumps
/// straight to a closing two-cycle) until two transactions remain.
fn reduce_to_two(mut cycle: PopCycle, s: &Schedule, pops: &[Pop]) -> PopCycle {
    if let Some(two) = reverse_partner_two_cycle(&cycle, pops) {
        return two;
    }
    let object = cycle.objects()[0].clone();
    loop {
        let k = cycle.n_t();
        if k == 2 {
            return cycle;
        }
        match single_object_step(&cycle, &object, s, pops) {
            Some(smaller) => cycle = smaller,
            None => {
                return two_cycle_fallback(&cycle, pops).unwrap_or(cycle);
            }
        }
    }
}

fn single_object_step(c: &PopCycle, object: &str, s: &Schedule, pops: &[Pop]) -> Option<PopCycle> {
    let edges = c.edges();
    let k = edges.len();
    let (a_0, b_0) = edge_ops(&edges[0]);
    if s.ops()[a_0].kind == OpKind::Write {
        let (a_pen, _) = edge_ops(&edges[k - 2]);
        if precedes(s, a_0, a_pen) {
            // a_0 precedes the penultimate source, hence its target too:
            // close directly with the last edge
            let new = lookup_edge(pops, edges[0].from, edges[k - 1].from, object)?;
            Some(PopCycle::new(vec![new, edges[k - 1].clone()]))
        } else {
            // back edge from the penultimate source drops the last vertex
            let new = lookup_edge(pops, edges[k - 2].from, edges[0].from, object)?;
            let mut out: Vec<Pop> = edges[..k - 2].to_vec();
            out.push(new);
            Some(PopCycle::new(out))
        }
    } else if k == 3 {
        // read-headed three-cycle: compare this pair's write with the
        // closing edge's source operation
        let (a_2, _) = edge_ops(&edges[2]);
        if precedes(s, b_0, a_2) {
            let new = lookup_edge(pops, edges[0].to, edges[0].from, object)?;
            Some(PopCycle::new(vec![edges[0].clone(), new]))
        } else {
            let new = lookup_edge(pops, edges[2].from, edges[0].to, object)?;
            Some(PopCycle::new(vec![edges[1].clone(), new]))
        }
    } else {
        let (a_pen, _) = edge_ops(&edges[k - 2]);
        if precedes(s, b_0, a_pen) {
            // shortcut from the first edge's target to the last vertex
            let new = lookup_edge(pops, edges[0].to, edges[k - 1].from, object)?;
            Some(PopCycle::new(vec![
                edges[0].clone(),
                new,
                edges[k - 1].clone(),
            ]))
        } else {
            // drop both endpoints of the closing edge
            let new = lookup_edge(pops, edges[k - 2].from, edges[0].to, object)?;
            let mut out: Vec<Pop> = vec![new];
            out.extend_from_slice(&edges[1..k - 2]);
            Some(PopCycle::new(out))
        }
    }
}

/// Tests a schedule for data anomalies: consistent exactly when the POP
/// graph is acyclic, otherwise an anomaly report built from a reduced
/// witness cycle.
pub fn check_consistency(s: &Schedule) -> Result<Verdict, InvalidSchedule> {
    let g = build_graph(s)?;
    match find_cycle(&g) {
        None => Ok(Verdict::Consistent),
        Some(c) => {
            let reduced = reduce_cycle_inner(c, s, &g.edges);
            let (conflict, granularity) = classify(&reduced);
            let catalog_matches = crate::catalog::matches_for_cycle(&reduced);
            Ok(Verdict::Anomaly(AnomalyReport {
                cycle: reduced,
                conflict,
                granularity,
                catalog_matches,
            }))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no partition assigned for object `{0}`")]
pub struct MissingPlacement(pub String);

/// True when the cycle spans at least two objects stored on at least two
/// distinct partitions.
pub fn is_distributed_anomaly(
    c: &PopCycle,
    placement: &BTreeMap<String, u32>,
) -> Result<bool, MissingPlacement> {
    let objects = c.objects();
    let mut partitions = BTreeSet::new();
    for obj in &objects {
        let p = placement
            .get(obj)
            .ok_or_else(|| MissingPlacement(obj.clone()))?;
        partitions.insert(*p);
    }
    Ok(objects.len() >= 2 && partitions.len() >= 2)
}
