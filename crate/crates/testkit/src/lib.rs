//! Test-side machinery kept deliberately independent of the library's
//! own algorithms: a reference schedule writer and brute-force oracles
//! used to cross-check cycle detection, conflict extraction, and the
//! reduction bounds. Nothing here is part of the shipped artifact.

use rand::prelude::*;
use rand::rngs::StdRng;

use popcheck_core::pop::Pop;
use popcheck_core::schedule::{OpKind, Operation, Schedule, TxnId};

/// Knobs for the reference schedule writer.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_txns: u32,
    pub max_objects: usize,
    pub max_ops: usize,
    /// Chance that a read picks an older existing version instead of the
    /// latest one (models snapshot reads).
    pub stale_read_prob: f64,
    /// Chance that a transaction gets a terminal, and that the terminal
    /// is an abort.
    pub terminal_prob: f64,
    pub abort_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_txns: 4,
            max_objects: 3,
            max_ops: 10,
            stale_read_prob: 0.15,
            terminal_prob: 0.7,
            abort_prob: 0.25,
        }
    }
}

const OBJECT_NAMES: [&str; 6] = ["x", "y", "z", "u", "v", "w"];

/// Generates a random schedule that always validates: write versions are
/// sequential per object, reads reference version 0 or an existing write,
/// and terminals come last per transaction.
pub fn random_schedule(rng: &mut StdRng, cfg: &GenConfig) -> Schedule {
    let n_txns = rng.gen_range(1..=cfg.max_txns);
    let n_objects = rng.gen_range(1..=cfg.max_objects);
    let n_ops = rng.gen_range(0..=cfg.max_ops);
    let mut ops: Vec<Operation> = Vec::new();
    let mut version: Vec<u32> = vec![0; n_objects];
    let mut alive: Vec<TxnId> = (1..=n_txns).collect();
    for _ in 0..n_ops {
        if alive.is_empty() {
            break;
        }
        let txn = *alive.choose(rng).unwrap();
        let obj_idx = rng.gen_range(0..n_objects);
        let obj = OBJECT_NAMES[obj_idx];
        if rng.gen_bool(0.5) {
            version[obj_idx] += 1;
            ops.push(Operation::write(txn, obj, version[obj_idx]));
        } else {
            let latest = version[obj_idx];
            let v = if latest > 0 && rng.gen_bool(cfg.stale_read_prob) {
                rng.gen_range(0..=latest)
            } else {
                latest
            };
            ops.push(Operation::read(txn, obj, v));
        }
        // terminals close a transaction at a random point
        if rng.gen_bool(cfg.terminal_prob / cfg.max_ops as f64) {
            ops.push(if rng.gen_bool(cfg.abort_prob) {
                Operation::abort(txn)
            } else {
                Operation::commit(txn)
            });
            alive.retain(|&t| t != txn);
        }
    }
    // close out a random suffix of the remaining transactions
    let mut rest = alive.clone();
    rest.shuffle(rng);
    for txn in rest {
        if rng.gen_bool(cfg.terminal_prob) {
            ops.push(if rng.gen_bool(cfg.abort_prob) {
                Operation::abort(txn)
            } else {
                Operation::commit(txn)
            });
        }
    }
    Schedule::from_ops(ops)
}

/// Seeded generator for reproducible test corpora.
pub fn seeded_rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Brute-force cycle oracle: transitive closure over the edge relation by
/// repeated relaxation. Independent of the library's DFS enumeration.
pub fn oracle_has_cycle(edges: &[Pop]) -> bool {
    let mut verts: Vec<TxnId> = edges
        .iter()
        .flat_map(|e| [e.from, e.to])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    verts.sort_unstable();
    let idx = |t: TxnId| verts.binary_search(&t).unwrap();
    let n = verts.len();
    let mut reach = vec![vec![false; n]; n];
    for e in edges {
        reach[idx(e.from)][idx(e.to)] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).any(|i| reach[i][i])
}

/// Classical conflict dependencies: ordered pairs of transactions with
/// operations on one object, at least one a write, first operation first
/// in version order. Enumerated directly from the schedule, bypassing the
/// POP machinery.
pub fn oracle_conflict_pairs(s: &Schedule) -> std::collections::BTreeSet<(TxnId, TxnId, String)> {
    use popcheck_core::schedule::version_precedes;
    let mut out = std::collections::BTreeSet::new();
    let ops = s.ops();
    for a in ops {
        for b in ops {
            if a.txn == b.txn
                || !a.kind.is_object_oriented()
                || !b.kind.is_object_oriented()
                || a.object != b.object
            {
                continue;
            }
            if (a.kind == OpKind::Write || b.kind == OpKind::Write) && version_precedes(a, b) {
                out.insert((a.txn, b.txn, a.object.clone().unwrap()));
            }
        }
    }
    out
}

/// Exhaustive two-subset oracle: does some pair of the given transactions
/// carry edges in both directions (restricted to `object` when given)?
pub fn oracle_two_cycle_exists(edges: &[Pop], txns: &[TxnId], object: Option<&str>) -> bool {
    for &u in txns {
        for &v in txns {
            if u >= v {
                continue;
            }
            let ok = |e: &&Pop| object.is_none_or(|o| e.object == o);
            let fwd = edges.iter().filter(ok).any(|e| e.from == u && e.to == v);
            let back = edges.iter().filter(ok).any(|e| e.from == v && e.to == u);
            if fwd && back {
                return true;
            }
        }
    }
    false
}
