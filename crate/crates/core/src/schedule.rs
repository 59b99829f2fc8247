//! Textual schedule notation and the formal schedule model.
//!
//! A schedule is an ordered interleaving of operations from several
//! transactions. Reads and writes name an object and a version; `C`/`A`
//! mark a transaction's end. Versions per object start at 0 (pre-existing
//! committed state) and every write bumps the counter by one, whether or
//! not its transaction later aborts. A read with no explicit version reads
//! the latest write preceding it in text order; an explicit version lets a
//! schedule record stale (snapshot) reads of older versions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// 1-based transaction identifier.
pub type TxnId = u32;

/// Per-object version index; 0 is the initial committed state.
pub type Version = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Read,
    Write,
    Commit,
    Abort,
}

impl OpKind {
    pub fn is_object_oriented(self) -> bool {
        matches!(self, OpKind::Read | OpKind::Write)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, OpKind::Commit | OpKind::Abort)
    }
}

/// One step of a schedule.
///
/// Reads and writes carry an object and a version; commits and aborts
/// carry neither.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Operation {
    pub kind: OpKind,
    pub txn: TxnId,
    pub object: Option<String>,
    pub version: Option<Version>,
}

impl Operation {
    pub fn read(txn: TxnId, object: &str, version: Version) -> Self {
        Operation {
            kind: OpKind::Read,
            txn,
            object: Some(object.to_string()),
            version: Some(version),
        }
    }

    pub fn write(txn: TxnId, object: &str, version: Version) -> Self {
        Operation {
            kind: OpKind::Write,
            txn,
            object: Some(object.to_string()),
            version: Some(version),
        }
    }

    pub fn commit(txn: TxnId) -> Self {
        Operation {
            kind: OpKind::Commit,
            txn,
            object: None,
            version: None,
        }
    }

    pub fn abort(txn: TxnId) -> Self {
        Operation {
            kind: OpKind::Abort,
            txn,
            object: None,
            version: None,
        }
    }

    pub fn object(&self) -> Option<&str> {
        self.object.as_deref()
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OpKind::Read => write!(
                f,
                "R{}[{}{}]",
                self.txn,
                self.object.as_deref().unwrap_or("?"),
                self.version.map(|v| v.to_string()).unwrap_or_default()
            ),
            OpKind::Write => write!(
                f,
                "W{}[{}{}]",
                self.txn,
                self.object.as_deref().unwrap_or("?"),
                self.version.map(|v| v.to_string()).unwrap_or_default()
            ),
            OpKind::Commit => write!(f, "C{}", self.txn),
            OpKind::Abort => write!(f, "A{}", self.txn),
        }
    }
}

/// Ordered operation list plus derived transaction/object views.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    ops: Vec<Operation>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("token {pos}: unrecognized token `{token}`")]
    Syntax { pos: usize, token: String },
    #[error("token {pos}: missing transaction id in `{token}`")]
    MissingTxn { pos: usize, token: String },
    #[error("token {pos}: bad object reference `{token}`")]
    BadObject { pos: usize, token: String },
    #[error("token {pos}: {violation}")]
    Invalid { pos: usize, violation: Violation },
}

/// A violated schedule-wellformedness clause. Violations are data, not
/// failures: `validate` collects them all.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("terminal of T{txn} at index {index} is not its last operation")]
    TerminalNotLast { txn: TxnId, index: usize },
    #[error("T{txn} has a second terminal at index {index}")]
    DuplicateTerminal { txn: TxnId, index: usize },
    #[error("write at index {index} has version {found}, expected {expected}")]
    WriteVersionNotSequential {
        index: usize,
        expected: Version,
        found: Version,
    },
    #[error("read at index {index} references nonexistent version {found}")]
    ReadVersionNonexistent { index: usize, found: Version },
    #[error("operation at index {index} is missing an object or version")]
    IncompleteOperation { index: usize },
}

impl Schedule {
    /// Builds a schedule from raw operations without any validity check.
    pub fn from_ops(ops: Vec<Operation>) -> Self {
        Schedule { ops }
    }

    pub fn ops(&self) -> &[Operation] {
        &self.ops
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    /// Transaction ids in ascending order.
    pub fn txns(&self) -> Vec<TxnId> {
        let set: BTreeSet<TxnId> = self.ops.iter().map(|o| o.txn).collect();
        set.into_iter().collect()
    }

    /// Object names in first-appearance order.
    pub fn objects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for op in &self.ops {
            if let Some(obj) = op.object() {
                if seen.insert(obj.to_string()) {
                    out.push(obj.to_string());
                }
            }
        }
        out
    }

    /// The terminal operation of a transaction, if any, with its index.
    pub fn terminal_of(&self, txn: TxnId) -> Option<(usize, &Operation)> {
        self.ops
            .iter()
            .enumerate()
            .find(|(_, o)| o.txn == txn && o.kind.is_terminal())
    }

    /// A transaction with no terminal is still active.
    pub fn is_active(&self, txn: TxnId) -> bool {
        self.terminal_of(txn).is_none()
    }

    /// Parses schedule notation, rejecting invalid schedules.
    pub fn parse(text: &str) -> Result<Schedule, ParseError> {
        let s = Schedule::parse_unchecked(text)?;
        if let Some((pos, v)) = s.validate().into_iter().next().map(|v| (v.index(), v)) {
            return Err(ParseError::Invalid { pos, violation: v });
        }
        Ok(s)
    }

    /// Parses notation performing version inference only; validity clauses
    /// are left to `validate`, so malformed schedules can be constructed
    /// for inspection.
    pub fn parse_unchecked(text: &str) -> Result<Schedule, ParseError> {
        let mut ops = Vec::new();
        // next version to assign per object
        let mut next_version: BTreeMap<String, Version> = BTreeMap::new();
        for (pos, token) in text.split_whitespace().enumerate() {
            let bytes = token.as_bytes();
            let head = bytes[0];
            match head {
                b'C' | b'A' => {
                    let txn: TxnId = token[1..].parse().map_err(|_| ParseError::MissingTxn {
                        pos,
                        token: token.to_string(),
                    })?;
                    if txn == 0 {
                        return Err(ParseError::MissingTxn {
                            pos,
                            token: token.to_string(),
                        });
                    }
                    ops.push(if head == b'C' {
                        Operation::commit(txn)
                    } else {
                        Operation::abort(txn)
                    });
                }
                b'R' | b'W' => {
                    let open = token.find('[').ok_or_else(|| ParseError::Syntax {
                        pos,
                        token: token.to_string(),
                    })?;
                    if !token.ends_with(']') {
                        return Err(ParseError::Syntax {
                            pos,
                            token: token.to_string(),
                        });
                    }
                    let txn: TxnId =
                        token[1..open].parse().map_err(|_| ParseError::MissingTxn {
                            pos,
                            token: token.to_string(),
                        })?;
                    if txn == 0 {
                        return Err(ParseError::MissingTxn {
                            pos,
                            token: token.to_string(),
                        });
                    }
                    let body = &token[open + 1..token.len() - 1];
                    let (object, version) = split_object_version(body).ok_or_else(|| {
                        ParseError::BadObject {
                            pos,
                            token: token.to_string(),
                        }
                    })?;
                    let counter = next_version.entry(object.to_string()).or_insert(0);
                    if head == b'W' {
                        // writes always advance the counter, aborts notwithstanding
                        *counter += 1;
                        let assigned = *counter;
                        ops.push(Operation::write(txn, object, version.unwrap_or(assigned)));
                    } else {
                        let inferred = version.unwrap_or(*counter);
                        ops.push(Operation::read(txn, object, inferred));
                    }
                }
                _ => {
                    return Err(ParseError::Syntax {
                        pos,
                        token: token.to_string(),
                    })
                }
            }
        }
        Ok(Schedule { ops })
    }

    /// Reports every violated wellformedness clause with the offending
    /// operation index. Empty means the schedule is legal.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut terminal_seen: BTreeMap<TxnId, usize> = BTreeMap::new();
        let mut not_last_flagged: BTreeSet<TxnId> = BTreeSet::new();
        let mut versions_written: BTreeMap<&str, Version> = BTreeMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            match terminal_seen.get(&op.txn) {
                Some(_) if op.kind.is_terminal() => {
                    out.push(Violation::DuplicateTerminal { txn: op.txn, index: i });
                }
                Some(&t) => {
                    // the earlier terminal was not this transaction's last step
                    if not_last_flagged.insert(op.txn) {
                        out.push(Violation::TerminalNotLast { txn: op.txn, index: t });
                    }
                }
                None if op.kind.is_terminal() => {
                    terminal_seen.insert(op.txn, i);
                }
                None => {}
            }
            match op.kind {
                OpKind::Write => match (&op.object, op.version) {
                    (Some(obj), Some(v)) => {
                        let counter = versions_written.entry(obj.as_str()).or_insert(0);
                        let expected = *counter + 1;
                        if v != expected {
                            out.push(Violation::WriteVersionNotSequential {
                                index: i,
                                expected,
                                found: v,
                            });
                        }
                        *counter = expected;
                    }
                    _ => out.push(Violation::IncompleteOperation { index: i }),
                },
                OpKind::Read => match (&op.object, op.version) {
                    (Some(obj), Some(v)) => {
                        let written = versions_written.get(obj.as_str()).copied().unwrap_or(0);
                        if v > written {
                            out.push(Violation::ReadVersionNonexistent { index: i, found: v });
                        }
                    }
                    _ => out.push(Violation::IncompleteOperation { index: i }),
                },
                OpKind::Commit | OpKind::Abort => {}
            }
        }
        out
    }

    /// Renders the schedule back to notation; round-trips through `parse`.
    pub fn format(&self) -> String {
        let mut out = String::new();
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&op.to_string());
        }
        out
    }

    /// The version-order slice for one object: its operations listed in
    /// `<_s` order along with the ordered pairs of the relation. Pairs of
    /// reads are never ordered.
    pub fn version_order(&self, object: &str) -> Result<ObjectVersionOrder, UnknownObject> {
        let indices: Vec<usize> = self
            .ops
            .iter()
            .enumerate()
            .filter(|(_, o)| o.kind.is_object_oriented() && o.object() == Some(object))
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            return Err(UnknownObject(object.to_string()));
        }
        let mut sorted = indices.clone();
        sorted.sort_by_key(|&i| version_sort_key(&self.ops[i], i));
        let mut pairs = Vec::new();
        for &a in &indices {
            for &b in &indices {
                if a != b && version_precedes(&self.ops[a], &self.ops[b]) {
                    pairs.push((a, b));
                }
            }
        }
        pairs.sort();
        Ok(ObjectVersionOrder {
            object: object.to_string(),
            ops: sorted,
            pairs,
        })
    }

    /// Schedule equivalence: same operations, same per-object version
    /// order, and the same terminal placement relative to every
    /// conflicting operation pair. Reordering unordered operations (two
    /// reads, or one transaction's steps on distinct objects) preserves
    /// equivalence.
    pub fn equivalent(&self, other: &Schedule) -> bool {
        if canonical_multiset(self) != canonical_multiset(other) {
            return false;
        }
        terminal_contexts(self) == terminal_contexts(other)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("object `{0}` does not appear in the schedule")]
pub struct UnknownObject(pub String);

/// Version order restricted to one object. Operation references are
/// indices into the source schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectVersionOrder {
    pub object: String,
    /// Ops on the object, sorted by version order (ties between reads of
    /// one version keep text order).
    pub ops: Vec<usize>,
    /// All ordered pairs `(p, q)` with `p <_s q`.
    pub pairs: Vec<(usize, usize)>,
}

impl Violation {
    pub fn index(&self) -> usize {
        match self {
            Violation::TerminalNotLast { index, .. }
            | Violation::DuplicateTerminal { index, .. }
            | Violation::WriteVersionNotSequential { index, .. }
            | Violation::ReadVersionNonexistent { index, .. }
            | Violation::IncompleteOperation { index } => *index,
        }
    }
}

/// `p <_s q` for two operations on the same object. At least one side must
/// be a write; reads are mutually unordered. A read is ordered against a
/// write by comparing the version it observed with the version the write
/// created, so a stale read sorts before the newer write even when it
/// appears later in the text.
pub fn version_precedes(p: &Operation, q: &Operation) -> bool {
    let (pv, qv) = match (p.version, q.version) {
        (Some(a), Some(b)) => (a, b),
        _ => return false,
    };
    match (p.kind, q.kind) {
        (OpKind::Write, OpKind::Write) => pv < qv,
        (OpKind::Write, OpKind::Read) => pv <= qv,
        (OpKind::Read, OpKind::Write) => pv < qv,
        _ => false,
    }
}

fn version_sort_key(op: &Operation, text_pos: usize) -> (Version, u8, usize) {
    let kind_rank = match op.kind {
        OpKind::Write => 0,
        _ => 1,
    };
    (op.version.unwrap_or(0), kind_rank, text_pos)
}

/// Splits a bracket body like `x0` into (`x`, Some(0)), or `x` into
/// (`x`, None). The version is the maximal trailing digit run; the object
/// must match `[a-z][a-z0-9_]*`.
fn split_object_version(body: &str) -> Option<(&str, Option<Version>)> {
    if body.is_empty() {
        return None;
    }
    let split_at = body
        .rfind(|c: char| !c.is_ascii_digit())
        .map(|i| i + 1)
        .unwrap_or(0);
    let (obj, digits) = body.split_at(split_at);
    if obj.is_empty() {
        return None;
    }
    let mut chars = obj.chars();
    if !chars.next().is_some_and(|c| c.is_ascii_lowercase()) {
        return None;
    }
    if !obj[1..]
        .chars()
        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        return None;
    }
    let version = if digits.is_empty() {
        None
    } else {
        Some(digits.parse().ok()?)
    };
    Some((obj, version))
}

/// Canonical op identity used for equivalence: kind, txn, object, version,
/// plus an occurrence index so duplicate reads stay distinct.
type CanonOp = (OpKind, TxnId, Option<String>, Option<Version>, usize);

fn canonical_multiset(s: &Schedule) -> BTreeSet<CanonOp> {
    let mut counts: BTreeMap<(OpKind, TxnId, Option<String>, Option<Version>), usize> =
        BTreeMap::new();
    let mut out = BTreeSet::new();
    for op in s.ops() {
        let key = (op.kind, op.txn, op.object.clone(), op.version);
        let occ = counts.entry(key.clone()).or_insert(0);
        out.insert((key.0, key.1, key.2, key.3, *occ));
        *occ += 1;
    }
    out
}

/// Where a transaction's terminal sits relative to an ordered operation
/// pair. Classification of a conflicting pair depends only on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TerminalPlacement {
    None,
    CommitBetween,
    AbortBetween,
    CommitAfter,
    AbortAfter,
}

/// The second transaction's terminal can only follow its own operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TerminalKind {
    None,
    Commit,
    Abort,
}

/// Terminal placement of `txn`'s terminal relative to text positions
/// `first_pos` and `second_pos` of an ordered pair.
pub fn placement_for(
    s: &Schedule,
    txn: TxnId,
    first_pos: usize,
    second_pos: usize,
) -> TerminalPlacement {
    match s.terminal_of(txn) {
        None => TerminalPlacement::None,
        Some((t, op)) => {
            let between = first_pos < second_pos && t > first_pos && t < second_pos;
            match (op.kind, between) {
                (OpKind::Commit, true) => TerminalPlacement::CommitBetween,
                (OpKind::Abort, true) => TerminalPlacement::AbortBetween,
                (OpKind::Commit, false) => TerminalPlacement::CommitAfter,
                (OpKind::Abort, false) => TerminalPlacement::AbortAfter,
                _ => unreachable!(),
            }
        }
    }
}

pub fn terminal_kind(s: &Schedule, txn: TxnId) -> TerminalKind {
    match s.terminal_of(txn) {
        None => TerminalKind::None,
        Some((_, op)) if op.kind == OpKind::Commit => TerminalKind::Commit,
        Some(_) => TerminalKind::Abort,
    }
}

type PairContextKey = (CanonOp, CanonOp, TerminalPlacement, TerminalKind);

/// Terminal context of every conflicting ordered pair, used by
/// equivalence. Two schedules that agree here produce identical
/// dependency structure.
fn terminal_contexts(s: &Schedule) -> BTreeSet<PairContextKey> {
    let mut canon: Vec<Option<CanonOp>> = Vec::with_capacity(s.len());
    {
        let mut counts: BTreeMap<(OpKind, TxnId, Option<String>, Option<Version>), usize> =
            BTreeMap::new();
        for op in s.ops() {
            let key = (op.kind, op.txn, op.object.clone(), op.version);
            let occ = counts.entry(key.clone()).or_insert(0);
            canon.push(Some((key.0, key.1, key.2, key.3, *occ)));
            *occ += 1;
        }
    }
    let mut out = BTreeSet::new();
    let ops = s.ops();
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            if i == j {
                continue;
            }
            let (p, q) = (&ops[i], &ops[j]);
            if !p.kind.is_object_oriented()
                || !q.kind.is_object_oriented()
                || p.txn == q.txn
                || p.object != q.object
                || !version_precedes(p, q)
            {
                continue;
            }
            out.insert((
                canon[i].clone().unwrap(),
                canon[j].clone().unwrap(),
                placement_for(s, p.txn, i, j),
                terminal_kind(s, q.txn),
            ));
        }
    }
    out
}
