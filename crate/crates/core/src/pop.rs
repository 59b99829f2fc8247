//! Partial order pairs: typed, directed dependencies between transactions.
//!
//! A POP extends a classical conflict (WW/WR/RW) with the position of the
//! participating transactions' terminals. Nine types exist. The committed
//! variants WCW/WCR/RCW arise when the first transaction commits between
//! the two operations. Three placements create a second, reverse-direction
//! dependency on the same witness: a write read by another transaction and
//! then rolled back (WR plus RA), and a write overwritten before the first
//! writer commits or aborts (WW plus WC, WW plus WA). Those reverse edges
//! only ever appear alongside their forward partner, so they always close
//! a two-transaction cycle.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::schedule::{
    placement_for, terminal_kind, version_precedes, OpKind, Operation, Schedule, TerminalKind,
    TerminalPlacement, TxnId, Violation,
};

/// The nine POP types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PopType {
    Ww,
    Wr,
    Rw,
    Wcw,
    Wcr,
    Rcw,
    Ra,
    Wc,
    Wa,
}

pub const ALL_POP_TYPES: [PopType; 9] = [
    PopType::Ww,
    PopType::Wr,
    PopType::Rw,
    PopType::Wcw,
    PopType::Wcr,
    PopType::Rcw,
    PopType::Ra,
    PopType::Wc,
    PopType::Wa,
];

impl PopType {
    /// Projection onto the classical conflict kinds. The committed
    /// variants project to their base kind; the reverse edges RA/WC/WA
    /// have no classical counterpart.
    pub fn primitive(self) -> Option<PopType> {
        match self {
            PopType::Ww | PopType::Wc | PopType::Wa | PopType::Wcw => Some(PopType::Ww),
            PopType::Wr | PopType::Wcr => Some(PopType::Wr),
            PopType::Rw | PopType::Rcw => Some(PopType::Rw),
            PopType::Ra => None,
        }
    }

    pub fn is_reverse(self) -> bool {
        matches!(self, PopType::Ra | PopType::Wc | PopType::Wa)
    }
}

impl fmt::Display for PopType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PopType::Ww => "WW",
            PopType::Wr => "WR",
            PopType::Rw => "RW",
            PopType::Wcw => "WCW",
            PopType::Wcr => "WCR",
            PopType::Rcw => "RCW",
            PopType::Ra => "RA",
            PopType::Wc => "WC",
            PopType::Wa => "WA",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PopType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "WW" => PopType::Ww,
            "WR" => PopType::Wr,
            "RW" => PopType::Rw,
            "WCW" => PopType::Wcw,
            "WCR" => PopType::Wcr,
            "RCW" => PopType::Rcw,
            "RA" => PopType::Ra,
            "WC" => PopType::Wc,
            "WA" => PopType::Wa,
            _ => return Err(()),
        })
    }
}

/// Schedule op indices witnessing an edge. `first` belongs to the edge's
/// source transaction, `second` to its target; `via` is the intervening
/// commit for the committed variants. For the reverse edges RA/WC/WA,
/// `first` is the second transaction's object operation and `second` is
/// the first transaction's terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Witness {
    pub first: usize,
    pub second: usize,
    pub via: Option<usize>,
}

/// A directed dependency edge between two transactions on one object.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pop {
    pub kind: PopType,
    pub from: TxnId,
    pub to: TxnId,
    pub object: String,
    pub witness: Witness,
}

impl Pop {
    /// Dedup identity: the same logical dependency witnessed twice is one
    /// edge.
    pub fn key(&self) -> (TxnId, TxnId, PopType, &str) {
        (self.from, self.to, self.kind, self.object.as_str())
    }

    /// Line form `TYPE from to object`.
    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.kind, self.from, self.to, self.object)
    }
}

impl fmt::Display for Pop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:T{}->T{}[{}]", self.kind, self.from, self.to, self.object)
    }
}

impl PartialOrd for Pop {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pop {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key()
            .cmp(&other.key())
            .then(self.witness.cmp(&other.witness))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("operations must be object-oriented, on one object, by distinct transactions")]
    BadPair,
    #[error("at least one operation of the pair must be a write")]
    NoWrite,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("schedule is not valid: {0:?}")]
pub struct InvalidSchedule(pub Vec<Violation>);

/// Edge direction relative to the ordered pair: `Forward` runs from the
/// first operation's transaction to the second's, `Reverse` the other way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Classifies one ordered conflicting pair given where each transaction's
/// terminal sits. Implements the nine-type combination table:
///
/// - first transaction aborts between the operations: the rolled-back
///   effect never reaches the second operation, no POP;
/// - second transaction aborts: its operation is itself rolled back,
///   no POP;
/// - first transaction commits between: WCW / WCR / RCW;
/// - first transaction aborts after the pair: WW gains a reverse WA,
///   WR gains a reverse RA, RW stays RW;
/// - first transaction commits after the pair: WW gains a reverse WC;
/// - otherwise the base kind WW / WR / RW.
pub fn classify_pair(
    p: &Operation,
    q: &Operation,
    first_terminal: TerminalPlacement,
    second_terminal: TerminalKind,
) -> Result<Vec<(PopType, Direction)>, ClassifyError> {
    if !p.kind.is_object_oriented()
        || !q.kind.is_object_oriented()
        || p.txn == q.txn
        || p.object.is_none()
        || p.object != q.object
    {
        return Err(ClassifyError::BadPair);
    }
    let pair = match (p.kind, q.kind) {
        (OpKind::Write, OpKind::Write) => (PopType::Ww, PopType::Wc, PopType::Wa, PopType::Wcw),
        (OpKind::Write, OpKind::Read) => (PopType::Wr, PopType::Wr, PopType::Ra, PopType::Wcr),
        (OpKind::Read, OpKind::Write) => (PopType::Rw, PopType::Rw, PopType::Rw, PopType::Rcw),
        _ => return Err(ClassifyError::NoWrite),
    };
    let (base, committed_reverse, aborted_reverse, committed_between) = pair;
    let out = match first_terminal {
        TerminalPlacement::AbortBetween => vec![],
        _ if second_terminal == TerminalKind::Abort => vec![],
        TerminalPlacement::CommitBetween => vec![(committed_between, Direction::Forward)],
        TerminalPlacement::CommitAfter => match base {
            PopType::Ww => vec![
                (base, Direction::Forward),
                (committed_reverse, Direction::Reverse),
            ],
            _ => vec![(base, Direction::Forward)],
        },
        TerminalPlacement::AbortAfter => match base {
            PopType::Ww | PopType::Wr => vec![
                (base, Direction::Forward),
                (aborted_reverse, Direction::Reverse),
            ],
            _ => vec![(base, Direction::Forward)],
        },
        TerminalPlacement::None => vec![(base, Direction::Forward)],
    };
    Ok(out)
}

/// All POPs of a valid schedule: every ordered pair of object operations
/// on one object from distinct transactions with at least one write is
/// classified, and the result deduplicated by (type, from, to, object).
pub fn extract_pops(s: &Schedule) -> Result<Vec<Pop>, InvalidSchedule> {
    let violations = s.validate();
    if !violations.is_empty() {
        return Err(InvalidSchedule(violations));
    }
    Ok(extract_pops_unchecked(s))
}

pub(crate) fn extract_pops_unchecked(s: &Schedule) -> Vec<Pop> {
    let ops = s.ops();
    let mut edges: Vec<Pop> = Vec::new();
    let mut seen: BTreeSet<(TxnId, TxnId, PopType, String)> = BTreeSet::new();
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            if i == j {
                continue;
            }
            let (p, q) = (&ops[i], &ops[j]);
            if !p.kind.is_object_oriented()
                || !q.kind.is_object_oriented()
                || p.txn == q.txn
                || p.object.is_none()
                || p.object != q.object
                || !version_precedes(p, q)
            {
                continue;
            }
            let placement = placement_for(s, p.txn, i, j);
            let qk = terminal_kind(s, q.txn);
            let object = p.object.clone().unwrap();
            for (kind, dir) in classify_pair(p, q, placement, qk).unwrap() {
                let pop = match dir {
                    Direction::Forward => Pop {
                        kind,
                        from: p.txn,
                        to: q.txn,
                        object: object.clone(),
                        witness: Witness {
                            first: i,
                            second: j,
                            via: match placement {
                                TerminalPlacement::CommitBetween => {
                                    s.terminal_of(p.txn).map(|(t, _)| t)
                                }
                                _ => None,
                            },
                        },
                    },
                    Direction::Reverse => Pop {
                        kind,
                        from: q.txn,
                        to: p.txn,
                        object: object.clone(),
                        witness: Witness {
                            first: j,
                            second: s.terminal_of(p.txn).map(|(t, _)| t).unwrap_or(i),
                            via: None,
                        },
                    },
                };
                if seen.insert((pop.from, pop.to, pop.kind, pop.object.clone())) {
                    edges.push(pop);
                }
            }
        }
    }
    edges.sort();
    edges
}

/// The POP graph of a schedule: vertices are all transactions, edges the
/// extracted POPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopGraph {
    pub vertices: Vec<TxnId>,
    pub edges: Vec<Pop>,
}

impl PopGraph {
    pub fn edges_from(&self, txn: TxnId) -> impl Iterator<Item = &Pop> {
        self.edges.iter().filter(move |e| e.from == txn)
    }

    pub fn edge_between(&self, from: TxnId, to: TxnId) -> Option<&Pop> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Line serialization of the edge set, one `TYPE from to object` per
    /// line in deterministic order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}

/// Builds the POP graph of a valid schedule. Never fails on a schedule
/// that passes validation.
pub fn build_graph(s: &Schedule) -> Result<PopGraph, InvalidSchedule> {
    let edges = extract_pops(s)?;
    Ok(PopGraph {
        vertices: s.txns(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str = "R1[x0] R3[x0] W1[y1] R3[y1] C3 W2[x1] R1[y1] A1";

    fn edge_set(s: &str) -> Vec<String> {
        let sched = Schedule::parse(s).unwrap();
        extract_pops(&sched)
            .unwrap()
            .iter()
            .map(|p| p.to_string())
            .collect()
    }

    #[test]
    fn classify_dirty_read_pair() {
        // writer aborts after the read: WR forward plus RA reverse
        let p = Operation::write(1, "x", 1);
        let q = Operation::read(2, "x", 1);
        let got = classify_pair(&p, &q, TerminalPlacement::AbortAfter, TerminalKind::None).unwrap();
        assert_eq!(
            got,
            vec![
                (PopType::Wr, Direction::Forward),
                (PopType::Ra, Direction::Reverse)
            ]
        );
    }

    #[test]
    fn classify_plain_rw() {
        let p = Operation::read(1, "x", 0);
        let q = Operation::write(2, "x", 1);
        let got = classify_pair(&p, &q, TerminalPlacement::None, TerminalKind::None).unwrap();
        assert_eq!(got, vec![(PopType::Rw, Direction::Forward)]);
    }

    #[test]
    fn classify_abort_between_is_empty() {
        let p = Operation::write(1, "x", 1);
        let q = Operation::write(2, "x", 2);
        let got =
            classify_pair(&p, &q, TerminalPlacement::AbortBetween, TerminalKind::None).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn classify_second_abort_is_empty() {
        let p = Operation::write(1, "x", 1);
        let q = Operation::read(2, "x", 1);
        let got = classify_pair(&p, &q, TerminalPlacement::None, TerminalKind::Abort).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn classify_rejects_read_read() {
        let p = Operation::read(1, "x", 0);
        let q = Operation::read(2, "x", 0);
        assert_eq!(
            classify_pair(&p, &q, TerminalPlacement::None, TerminalKind::None),
            Err(ClassifyError::NoWrite)
        );
    }

    #[test]
    fn extract_s1_matches_known_pop_set() {
        let got = edge_set(S1);
        let want = vec![
            "RW:T1->T2[x]",
            "WR:T1->T3[y]",
            "RA:T3->T1[y]",
            "RCW:T3->T2[x]",
        ];
        let mut want: Vec<String> = want.into_iter().map(String::from).collect();
        want.sort();
        let mut got = got;
        got.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn extract_no_write_no_pop() {
        assert!(edge_set("R1[x0] R2[x0]").is_empty());
    }

    #[test]
    fn extract_s4_read_skew_committed() {
        let got = edge_set("R1[x0] W2[y1] W2[x1] C2 R1[y1]");
        assert_eq!(got, vec!["RW:T1->T2[x]", "WCR:T2->T1[y]"]);
    }

    #[test]
    fn stale_read_pair_becomes_rw() {
        // the read observed the older version, so it precedes the write
        // in version order even though it follows it in the text
        let got = edge_set("R1[x0] W2[y1] W2[x1] C2 R1[y0]");
        assert_eq!(got, vec!["RW:T1->T2[x]", "RW:T1->T2[y]"]);
    }

    #[test]
    fn graph_vertices_include_popless_txns() {
        let s = Schedule::parse("W1[x1] C1").unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.vertices, vec![1]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn graph_s1_two_cycle_edges_exist() {
        let s = Schedule::parse(S1).unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.vertices, vec![1, 2, 3]);
        assert!(g.edge_between(1, 3).is_some());
        assert!(g.edge_between(3, 1).is_some());
    }

    #[test]
    fn reverse_edges_pair_with_forward_partner() {
        for text in [
            "W1[x1] R2[x1] A1",
            "W1[x1] W2[x2] C1",
            "W1[x1] W2[x2] A1",
            S1,
        ] {
            let s = Schedule::parse(text).unwrap();
            let pops = extract_pops(&s).unwrap();
            for e in pops.iter().filter(|e| e.kind.is_reverse()) {
                assert!(
                    pops.iter().any(|f| !f.kind.is_reverse()
                        && f.from == e.to
                        && f.to == e.from
                        && f.object == e.object),
                    "unpaired reverse edge {e} in `{text}`"
                );
            }
        }
    }

    #[test]
    fn full_write_keeps_both_ww_directions() {
        let got = edge_set("W1[x1] W2[x2] W1[x3]");
        assert_eq!(got, vec!["WW:T1->T2[x]", "WW:T2->T1[x]"]);
    }

    #[test]
    fn pop_line_format() {
        let s = Schedule::parse("W1[x1] R2[x1] A1").unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.to_lines(), "WR 1 2 x\nRA 2 1 x\n");
    }
}
