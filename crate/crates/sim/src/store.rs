//! The multi-version store: version chains per key, FIFO lock queues,
//! waits-for deadlock detection, and the rule aborts the profiles demand.
//!
//! All mutation is serialized through one mutex. Blocking is expressed as
//! a ticket the caller resolves with `complete`, so a session worker can
//! observe that its step blocked, keep other sessions moving, and pick up
//! the resolution (granted, deadlock victim, or timeout) later.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use crate::profile::{
    CcProfile, DeadlockPolicy, IsolationLevel, ProfileFamily, ReadMode, SnapshotTiming,
};

pub type Key = i64;
pub type Value = i64;

/// Opaque transaction token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnHandle(u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    /// Aborted by a concurrency-control rule (first-updater-wins,
    /// consecutive read-write conflicts).
    Rule(String),
    Deadlock,
    Timeout,
    /// Explicit ROLLBACK.
    Requested,
}

impl AbortReason {
    /// Error message surfaced to the SQL layer; phrased so the dialect
    /// error-class patterns can match it.
    pub fn message(&self) -> String {
        match self {
            AbortReason::Rule(m) => format!("could not serialize access: {m}"),
            AbortReason::Deadlock => "deadlock detected".into(),
            AbortReason::Timeout => "lock timeout".into(),
            AbortReason::Requested => "transaction rolled back".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnStatus {
    Active,
    Committed,
    Aborted(AbortReason),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("store is closed")]
    Closed,
    #[error("unknown transaction")]
    UnknownTxn,
    #[error("transaction is not active")]
    NotActive,
}

/// Result of a read, write, or completion call.
#[derive(Debug)]
pub enum OpOutcome {
    /// Reads carry `Some(value)` (or `None` for a missing row); writes
    /// carry `None`.
    Ok(Option<Value>),
    /// The operation waits for a lock; resolve with [`SimDb::complete`].
    Blocked(WaitTicket),
    Aborted(AbortReason),
}

impl OpOutcome {
    pub fn is_blocked(&self) -> bool {
        matches!(self, OpOutcome::Blocked(_))
    }
}

#[derive(Debug)]
enum RetryOp {
    Read,
    Write(Value),
}

/// Handle to a blocked operation.
#[derive(Debug)]
pub struct WaitTicket {
    txn: TxnHandle,
    key: Key,
    retry: RetryOp,
    rx: Receiver<LockReply>,
}

#[derive(Debug)]
enum LockReply {
    Granted,
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LockKind {
    Read,
    Write,
}

#[derive(Debug)]
struct VersionEntry {
    value: Value,
    writer: u64,
    /// Commit stamp; `None` while uncommitted. Committed stamps strictly
    /// increase along the chain.
    commit: Option<u64>,
}

#[derive(Debug)]
struct WaitReq {
    txn: u64,
    kind: LockKind,
    notify: Sender<LockReply>,
}

#[derive(Debug, Default)]
struct KeyState {
    versions: Vec<VersionEntry>,
    write_holder: Option<u64>,
    read_holders: BTreeSet<u64>,
    queue: VecDeque<WaitReq>,
    /// Transactions that read this key and the commit stamp they saw,
    /// kept for read-write conflict tracking.
    readers: Vec<(u64, u64)>,
}

impl KeyState {
    fn newest_committed(&self) -> Option<&VersionEntry> {
        self.versions.iter().rev().find(|v| v.commit.is_some())
    }

    fn newest_committed_stamp(&self) -> u64 {
        self.newest_committed().and_then(|v| v.commit).unwrap_or(0)
    }
}

#[derive(Debug)]
struct Txn {
    profile: CcProfile,
    start: u64,
    snapshot: Option<u64>,
    status: TxnStatus,
    read_locks: BTreeSet<Key>,
    write_locks: BTreeSet<Key>,
    rw_in: BTreeSet<u64>,
    rw_out: BTreeSet<u64>,
}

#[derive(Debug)]
struct Store {
    closed: bool,
    family: ProfileFamily,
    next_stamp: u64,
    next_txn: u64,
    txns: BTreeMap<u64, Txn>,
    keys: BTreeMap<Key, KeyState>,
}

/// The embedded store. Cloning shares the underlying state; one worker
/// per session may call into it concurrently.
#[derive(Debug, Clone)]
pub struct SimDb {
    inner: Arc<Mutex<Store>>,
}

impl SimDb {
    pub fn new(family: ProfileFamily) -> SimDb {
        SimDb {
            inner: Arc::new(Mutex::new(Store {
                closed: false,
                family,
                next_stamp: 1,
                next_txn: 1,
                txns: BTreeMap::new(),
                keys: BTreeMap::new(),
            })),
        }
    }

    pub fn named(profile_name: &str) -> Option<SimDb> {
        crate::profile::profile(profile_name).map(|f| SimDb::new(*f))
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Installs a committed seed row at stamp 0 (prep/initial state).
    pub fn seed(&self, key: Key, value: Value) {
        let mut st = self.lock();
        let ks = st.keys.entry(key).or_default();
        ks.versions.clear();
        ks.readers.clear();
        ks.versions.push(VersionEntry {
            value,
            writer: 0,
            commit: Some(0),
        });
    }

    /// Drops all rows and forgets finished transactions (a fresh table).
    pub fn clear(&self) {
        let mut st = self.lock();
        st.keys.clear();
        st.txns.retain(|_, t| t.status == TxnStatus::Active);
    }

    pub fn close(&self) {
        self.lock().closed = true;
    }

    pub fn begin(&self, level: IsolationLevel) -> Result<TxnHandle, SimError> {
        let mut st = self.lock();
        if st.closed {
            return Err(SimError::Closed);
        }
        let profile = st.family.resolve(level);
        let start = bump(&mut st);
        let id = st.next_txn;
        st.next_txn += 1;
        let snapshot = match (profile.read_mode, profile.snapshot_timing) {
            (ReadMode::MvSnapshot, SnapshotTiming::FirstOperation) => Some(start),
            _ => None,
        };
        st.txns.insert(
            id,
            Txn {
                profile,
                start,
                snapshot,
                status: TxnStatus::Active,
                read_locks: BTreeSet::new(),
                write_locks: BTreeSet::new(),
                rw_in: BTreeSet::new(),
                rw_out: BTreeSet::new(),
            },
        );
        Ok(TxnHandle(id))
    }

    pub fn status(&self, h: TxnHandle) -> Result<TxnStatus, SimError> {
        let st = self.lock();
        st.txns
            .get(&h.0)
            .map(|t| t.status.clone())
            .ok_or(SimError::UnknownTxn)
    }

    /// Snapshot stamp, if one has been taken (tests).
    pub fn snapshot_of(&self, h: TxnHandle) -> Option<u64> {
        self.lock().txns.get(&h.0).and_then(|t| t.snapshot)
    }

    pub fn read(&self, h: TxnHandle, key: Key) -> OpOutcome {
        let mut st = self.lock();
        do_read(&mut st, h.0, key, false)
    }

    pub fn write(&self, h: TxnHandle, key: Key, value: Value) -> OpOutcome {
        let mut st = self.lock();
        do_write(&mut st, h.0, key, value, false)
    }

    /// Resolves a blocked operation: waits for the lock grant, turns a
    /// deadlock/rule abort into `Aborted`, and aborts the transaction
    /// with a timeout when the deadline passes first.
    pub fn complete(&self, ticket: WaitTicket, timeout: Duration) -> OpOutcome {
        match ticket.rx.recv_timeout(timeout) {
            Ok(LockReply::Granted) => {
                let mut st = self.lock();
                match ticket.retry {
                    RetryOp::Read => do_read(&mut st, ticket.txn.0, ticket.key, true),
                    RetryOp::Write(v) => do_write(&mut st, ticket.txn.0, ticket.key, v, true),
                }
            }
            Ok(LockReply::Aborted(reason)) => OpOutcome::Aborted(reason),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                let mut st = self.lock();
                // the grant may have raced the deadline
                match ticket.rx.try_recv() {
                    Ok(LockReply::Granted) => match ticket.retry {
                        RetryOp::Read => do_read(&mut st, ticket.txn.0, ticket.key, true),
                        RetryOp::Write(v) => do_write(&mut st, ticket.txn.0, ticket.key, v, true),
                    },
                    Ok(LockReply::Aborted(reason)) => OpOutcome::Aborted(reason),
                    Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => {
                        abort_txn(&mut st, ticket.txn.0, AbortReason::Timeout);
                        OpOutcome::Aborted(AbortReason::Timeout)
                    }
                }
            }
        }
    }

    /// Commits: stamps this transaction's versions and wakes waiters in
    /// queue order. Fails with a rule abort when the profile forbids the
    /// transaction's conflict pattern.
    pub fn commit(&self, h: TxnHandle) -> Result<(), AbortReason> {
        let mut st = self.lock();
        let txn = match st.txns.get(&h.0) {
            Some(t) => t,
            None => return Err(AbortReason::Rule("unknown transaction".into())),
        };
        match &txn.status {
            TxnStatus::Active => {}
            TxnStatus::Aborted(r) => return Err(r.clone()),
            TxnStatus::Committed => return Ok(()),
        }
        if txn.profile.consecutive_rw_abort {
            // neighbors that already aborted no longer endanger anything
            let live = |set: &BTreeSet<u64>| {
                set.iter().any(|n| {
                    st.txns
                        .get(n)
                        .is_some_and(|t| !matches!(t.status, TxnStatus::Aborted(_)))
                })
            };
            if live(&txn.rw_in) && live(&txn.rw_out) {
                let reason = AbortReason::Rule("consecutive read-write conflicts".into());
                abort_txn(&mut st, h.0, reason.clone());
                return Err(reason);
            }
        }
        let stamp = bump(&mut st);
        let write_locks: Vec<Key> = st.txns[&h.0].write_locks.iter().copied().collect();
        for key in write_locks {
            if let Some(ks) = st.keys.get_mut(&key) {
                for v in ks.versions.iter_mut().rev() {
                    if v.writer == h.0 && v.commit.is_none() {
                        v.commit = Some(stamp);
                        break;
                    }
                }
            }
        }
        if let Some(t) = st.txns.get_mut(&h.0) {
            t.status = TxnStatus::Committed;
        }
        release_all(&mut st, h.0);
        Ok(())
    }

    /// Explicit rollback.
    pub fn rollback(&self, h: TxnHandle) {
        let mut st = self.lock();
        if st
            .txns
            .get(&h.0)
            .is_some_and(|t| t.status == TxnStatus::Active)
        {
            abort_txn(&mut st, h.0, AbortReason::Requested);
        }
    }

    /// Runs one waits-for detection pass and returns the victims aborted.
    /// Detection also runs automatically on every block event for
    /// profiles that use it.
    pub fn detect_deadlocks(&self) -> Vec<TxnHandle> {
        let mut st = self.lock();
        detect(&mut st).into_iter().map(TxnHandle).collect()
    }

    /// Committed value visible to a fresh read-committed observer
    /// (tests and final-state checks).
    pub fn committed_value(&self, key: Key) -> Option<Value> {
        let st = self.lock();
        st.keys
            .get(&key)
            .and_then(|ks| ks.newest_committed().map(|v| v.value))
    }

    /// The commit stamps along a key's chain (tests).
    pub fn chain_stamps(&self, key: Key) -> Vec<Option<u64>> {
        let st = self.lock();
        st.keys
            .get(&key)
            .map(|ks| ks.versions.iter().map(|v| v.commit).collect())
            .unwrap_or_default()
    }
}

fn bump(st: &mut Store) -> u64 {
    let s = st.next_stamp;
    st.next_stamp += 1;
    s
}

fn active(st: &Store, txn: u64) -> Result<(), OpOutcome> {
    match st.txns.get(&txn).map(|t| &t.status) {
        Some(TxnStatus::Active) => Ok(()),
        Some(TxnStatus::Aborted(r)) => Err(OpOutcome::Aborted(r.clone())),
        _ => Err(OpOutcome::Aborted(AbortReason::Rule(
            "transaction is not active".into(),
        ))),
    }
}

fn do_read(st: &mut Store, txn: u64, key: Key, have_lock: bool) -> OpOutcome {
    if let Err(out) = active(st, txn) {
        return out;
    }
    let profile = st.txns[&txn].profile;
    if profile.read_mode == ReadMode::LockedCurrent && !have_lock {
        match acquire_or_enqueue(st, txn, key, LockKind::Read) {
            Acquire::Granted => {}
            Acquire::Wait(rx) => {
                if profile.deadlock == DeadlockPolicy::WaitForGraphDetect {
                    detect(st);
                }
                return OpOutcome::Blocked(WaitTicket {
                    txn: TxnHandle(txn),
                    key,
                    retry: RetryOp::Read,
                    rx,
                });
            }
        }
    }
    // snapshot fixed at the first read when the profile says so
    if profile.read_mode == ReadMode::MvSnapshot && st.txns[&txn].snapshot.is_none() {
        let snap = bump(st);
        st.txns.get_mut(&txn).unwrap().snapshot = Some(snap);
    }
    let snapshot = st.txns[&txn].snapshot;
    let Some(ks) = st.keys.get(&key) else {
        return OpOutcome::Ok(None);
    };
    let idx = visible_index(ks, txn, profile.read_mode, snapshot);
    let Some(idx) = idx else {
        return OpOutcome::Ok(None);
    };
    let value = ks.versions[idx].value;
    let seen_stamp = ks.versions[idx].commit.unwrap_or(u64::MAX);
    // read-write conflicts: everything newer than what we saw
    let newer_writers: Vec<u64> = ks.versions[idx + 1..]
        .iter()
        .map(|v| v.writer)
        .filter(|&w| w != txn && w != 0)
        .collect();
    let ks = st.keys.get_mut(&key).unwrap();
    ks.readers.push((txn, seen_stamp));
    for w in newer_writers {
        st.txns.get_mut(&txn).unwrap().rw_out.insert(w);
        if let Some(t) = st.txns.get_mut(&w) {
            t.rw_in.insert(txn);
        }
    }
    OpOutcome::Ok(Some(value))
}

fn visible_index(ks: &KeyState, txn: u64, mode: ReadMode, snapshot: Option<u64>) -> Option<usize> {
    // own uncommitted write wins in every mode
    if let Some((i, _)) = ks
        .versions
        .iter()
        .enumerate()
        .rev()
        .find(|(_, v)| v.commit.is_none() && v.writer == txn)
    {
        return Some(i);
    }
    match mode {
        ReadMode::UncommittedLatest => (!ks.versions.is_empty()).then(|| ks.versions.len() - 1),
        ReadMode::LockedCurrent | ReadMode::MvReadCommitted => ks
            .versions
            .iter()
            .enumerate()
            .rev()
            .find(|(_, v)| v.commit.is_some())
            .map(|(i, _)| i),
        ReadMode::MvSnapshot => {
            let snap = snapshot.unwrap_or(u64::MAX);
            ks.versions
                .iter()
                .enumerate()
                .rev()
                .find(|(_, v)| v.commit.is_some_and(|c| c <= snap))
                .map(|(i, _)| i)
        }
    }
}

fn do_write(st: &mut Store, txn: u64, key: Key, value: Value, have_lock: bool) -> OpOutcome {
    if let Err(out) = active(st, txn) {
        return out;
    }
    let profile = st.txns[&txn].profile;
    if !have_lock && st.keys.entry(key).or_default().write_holder != Some(txn) {
        match acquire_or_enqueue(st, txn, key, LockKind::Write) {
            Acquire::Granted => {}
            Acquire::Wait(rx) => {
                if profile.deadlock == DeadlockPolicy::WaitForGraphDetect {
                    detect(st);
                }
                return OpOutcome::Blocked(WaitTicket {
                    txn: TxnHandle(txn),
                    key,
                    retry: RetryOp::Write(value),
                    rx,
                });
            }
        }
    }
    // first-updater-wins: a concurrent committed write forbids ours
    if profile.first_updater_abort {
        let floor = st.txns[&txn].snapshot.unwrap_or(st.txns[&txn].start);
        let newest = st.keys.get(&key).map(|k| k.newest_committed_stamp()).unwrap_or(0);
        if newest > floor {
            let reason = AbortReason::Rule("concurrent committed write".into());
            abort_txn(st, txn, reason.clone());
            return OpOutcome::Aborted(reason);
        }
    }
    // incoming read-write conflicts from everyone who read this key
    let readers: Vec<u64> = st
        .keys
        .get(&key)
        .map(|k| k.readers.iter().map(|(r, _)| *r).filter(|&r| r != txn).collect())
        .unwrap_or_default();
    for r in readers {
        st.txns.get_mut(&txn).unwrap().rw_in.insert(r);
        if let Some(t) = st.txns.get_mut(&r) {
            t.rw_out.insert(txn);
        }
    }
    let ks = st.keys.entry(key).or_default();
    match ks.versions.last_mut() {
        Some(v) if v.commit.is_none() && v.writer == txn => v.value = value,
        _ => ks.versions.push(VersionEntry {
            value,
            writer: txn,
            commit: None,
        }),
    }
    OpOutcome::Ok(None)
}

enum Acquire {
    Granted,
    Wait(Receiver<LockReply>),
}

fn acquire_or_enqueue(st: &mut Store, txn: u64, key: Key, kind: LockKind) -> Acquire {
    let ks = st.keys.entry(key).or_default();
    let held_by_other_writer = ks.write_holder.is_some_and(|h| h != txn);
    let conflict = match kind {
        LockKind::Read => {
            ks.read_holders.contains(&txn).then_some(false).unwrap_or(
                held_by_other_writer || ks.queue.iter().any(|r| r.kind == LockKind::Write),
            )
        }
        LockKind::Write => {
            held_by_other_writer
                || ks.read_holders.iter().any(|&r| r != txn)
                || !ks.queue.is_empty()
        }
    };
    if !conflict {
        match kind {
            LockKind::Read => {
                ks.read_holders.insert(txn);
            }
            LockKind::Write => {
                ks.write_holder = Some(txn);
                st.txns.get_mut(&txn).unwrap().write_locks.insert(key);
                return Acquire::Granted;
            }
        }
        st.txns.get_mut(&txn).unwrap().read_locks.insert(key);
        return Acquire::Granted;
    }
    let (tx, rx) = channel();
    ks.queue.push_back(WaitReq { txn, kind, notify: tx });
    Acquire::Wait(rx)
}

/// Releases everything a finished transaction holds and hands the freed
/// locks to queued requests in FIFO order. A write grant whose waiter was
/// aborted meanwhile is skipped.
fn release_all(st: &mut Store, txn: u64) {
    let keys: Vec<Key> = st
        .txns
        .get(&txn)
        .map(|t| t.read_locks.union(&t.write_locks).copied().collect())
        .unwrap_or_default();
    if let Some(t) = st.txns.get_mut(&txn) {
        t.read_locks.clear();
        t.write_locks.clear();
    }
    for key in keys {
        if let Some(ks) = st.keys.get_mut(&key) {
            if ks.write_holder == Some(txn) {
                ks.write_holder = None;
            }
            ks.read_holders.remove(&txn);
        }
        grant_waiters(st, key);
    }
}

fn grant_waiters(st: &mut Store, key: Key) {
    loop {
        let Some(ks) = st.keys.get_mut(&key) else {
            return;
        };
        let Some(head) = ks.queue.front() else {
            return;
        };
        let head_txn = head.txn;
        let head_kind = head.kind;
        let can_grant = match head_kind {
            LockKind::Write => {
                ks.write_holder.is_none() && ks.read_holders.iter().all(|&r| r == head_txn)
            }
            LockKind::Read => ks.write_holder.is_none_or(|h| h == head_txn),
        };
        if !can_grant {
            return;
        }
        let req = ks.queue.pop_front().unwrap();
        match head_kind {
            LockKind::Write => {
                ks.write_holder = Some(head_txn);
                if let Some(t) = st.txns.get_mut(&head_txn) {
                    t.write_locks.insert(key);
                }
            }
            LockKind::Read => {
                ks.read_holders.insert(head_txn);
                if let Some(t) = st.txns.get_mut(&head_txn) {
                    t.read_locks.insert(key);
                }
            }
        }
        let _ = req.notify.send(LockReply::Granted);
    }
}

fn abort_txn(st: &mut Store, txn: u64, reason: AbortReason) {
    if let Some(t) = st.txns.get_mut(&txn) {
        if t.status != TxnStatus::Active {
            return;
        }
        t.status = TxnStatus::Aborted(reason.clone());
    } else {
        return;
    }
    // discard uncommitted versions written by this transaction
    let keys: Vec<Key> = st.keys.keys().copied().collect();
    for &key in &keys {
        let ks = st.keys.get_mut(&key).unwrap();
        ks.versions.retain(|v| !(v.commit.is_none() && v.writer == txn));
        // drop its queued requests, notifying the waiting worker
        let mut kept = VecDeque::new();
        while let Some(req) = ks.queue.pop_front() {
            if req.txn == txn {
                let _ = req.notify.send(LockReply::Aborted(reason.clone()));
            } else {
                kept.push_back(req);
            }
        }
        ks.queue = kept;
    }
    release_all(st, txn);
    // scrubbing the queues may have exposed grantable heads on keys the
    // victim never held
    for key in keys {
        grant_waiters(st, key);
    }
}

/// Waits-for edges: a queued request waits for conflicting holders and
/// for conflicting requests queued ahead of it.
fn waits_for(st: &Store) -> BTreeMap<u64, BTreeSet<u64>> {
    let mut out: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for ks in st.keys.values() {
        for (i, req) in ks.queue.iter().enumerate() {
            let targets = out.entry(req.txn).or_default();
            match req.kind {
                LockKind::Write => {
                    if let Some(h) = ks.write_holder {
                        if h != req.txn {
                            targets.insert(h);
                        }
                    }
                    targets.extend(ks.read_holders.iter().filter(|&&r| r != req.txn));
                    targets.extend(
                        ks.queue.iter().take(i).map(|q| q.txn).filter(|&t| t != req.txn),
                    );
                }
                LockKind::Read => {
                    if let Some(h) = ks.write_holder {
                        if h != req.txn {
                            targets.insert(h);
                        }
                    }
                    targets.extend(
                        ks.queue
                            .iter()
                            .take(i)
                            .filter(|q| q.kind == LockKind::Write && q.txn != req.txn)
                            .map(|q| q.txn),
                    );
                }
            }
        }
    }
    out
}

/// Detects waits-for cycles and aborts the youngest member of each until
/// none remain. Returns the victims.
fn detect(st: &mut Store) -> Vec<u64> {
    let mut victims = Vec::new();
    loop {
        let graph = waits_for(st);
        let Some(cycle) = find_wait_cycle(&graph) else {
            return victims;
        };
        // youngest = largest start stamp
        let victim = cycle
            .iter()
            .copied()
            .max_by_key(|t| st.txns.get(t).map(|x| x.start).unwrap_or(0))
            .expect("cycle is nonempty");
        abort_txn(st, victim, AbortReason::Deadlock);
        victims.push(victim);
    }
}

fn find_wait_cycle(graph: &BTreeMap<u64, BTreeSet<u64>>) -> Option<Vec<u64>> {
    fn visit(
        graph: &BTreeMap<u64, BTreeSet<u64>>,
        at: u64,
        stack: &mut Vec<u64>,
        done: &mut BTreeSet<u64>,
    ) -> Option<Vec<u64>> {
        if let Some(pos) = stack.iter().position(|&t| t == at) {
            return Some(stack[pos..].to_vec());
        }
        if done.contains(&at) {
            return None;
        }
        stack.push(at);
        if let Some(next) = graph.get(&at) {
            for &n in next {
                if let Some(cycle) = visit(graph, n, stack, done) {
                    return Some(cycle);
                }
            }
        }
        stack.pop();
        done.insert(at);
        None
    }
    let mut done = BTreeSet::new();
    for &start in graph.keys() {
        let mut stack = Vec::new();
        if let Some(c) = visit(graph, start, &mut stack, &mut done) {
            return Some(c);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const RC: IsolationLevel = IsolationLevel::ReadCommitted;
    const RR: IsolationLevel = IsolationLevel::RepeatableRead;
    const SER: IsolationLevel = IsolationLevel::Serializable;
    const RU: IsolationLevel = IsolationLevel::ReadUncommitted;

    fn mvcc() -> SimDb {
        let db = SimDb::named("mvcc").unwrap();
        db.seed(0, 0);
        db.seed(1, 0);
        db
    }

    fn locked() -> SimDb {
        let db = SimDb::named("strict-2pl").unwrap();
        db.seed(0, 0);
        db.seed(1, 0);
        db
    }

    fn ok_value(out: OpOutcome) -> Value {
        match out {
            OpOutcome::Ok(Some(v)) => v,
            other => panic!("expected value, got {other:?}"),
        }
    }

    #[test]
    fn begin_stamps_increase() {
        let db = mvcc();
        let a = db.begin(RC).unwrap();
        let b = db.begin(RC).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn begin_on_closed_store_fails() {
        let db = mvcc();
        db.close();
        assert_eq!(db.begin(RC).unwrap_err(), SimError::Closed);
    }

    #[test]
    fn snapshot_pending_until_first_read_in_first_read_family() {
        let db = SimDb::named("mvcc-first-read").unwrap();
        db.seed(0, 0);
        let t = db.begin(RR).unwrap();
        assert!(db.snapshot_of(t).is_none());
        let _ = db.read(t, 0);
        assert!(db.snapshot_of(t).is_some());
    }

    #[test]
    fn read_committed_skips_uncommitted_foreign_write() {
        let db = mvcc();
        let w = db.begin(RC).unwrap();
        let r = db.begin(RC).unwrap();
        assert!(matches!(db.write(w, 0, 7), OpOutcome::Ok(None)));
        // the uncommitted write is invisible: WR turns into RW
        assert_eq!(ok_value(db.read(r, 0)), 0);
        db.commit(w).unwrap();
        assert_eq!(ok_value(db.read(r, 0)), 7);
    }

    #[test]
    fn snapshot_read_ignores_later_commits() {
        let db = mvcc();
        let r = db.begin(RR).unwrap();
        let w = db.begin(RC).unwrap();
        assert!(matches!(db.write(w, 1, 9), OpOutcome::Ok(None)));
        db.commit(w).unwrap();
        assert_eq!(ok_value(db.read(r, 1)), 0);
    }

    #[test]
    fn read_own_uncommitted_write() {
        let db = mvcc();
        let t = db.begin(RC).unwrap();
        assert!(matches!(db.write(t, 0, 5), OpOutcome::Ok(None)));
        assert_eq!(ok_value(db.read(t, 0)), 5);
    }

    #[test]
    fn read_uncommitted_sees_foreign_uncommitted() {
        let db = SimDb::named("2pl").unwrap();
        db.seed(0, 0);
        let w = db.begin(RU).unwrap();
        let r = db.begin(RU).unwrap();
        assert!(matches!(db.write(w, 0, 3), OpOutcome::Ok(None)));
        assert_eq!(ok_value(db.read(r, 0)), 3);
    }

    #[test]
    fn ww_waits_and_fifo_wakeup() {
        let db = mvcc();
        let a = db.begin(RC).unwrap();
        let b = db.begin(RC).unwrap();
        assert!(matches!(db.write(a, 0, 1), OpOutcome::Ok(None)));
        let blocked = match db.write(b, 0, 2) {
            OpOutcome::Blocked(t) => t,
            other => panic!("expected block, got {other:?}"),
        };
        db.commit(a).unwrap();
        assert!(matches!(
            db.complete(blocked, Duration::from_secs(1)),
            OpOutcome::Ok(None)
        ));
        db.commit(b).unwrap();
        assert_eq!(db.committed_value(0), Some(2));
    }

    #[test]
    fn write_after_holder_abort_succeeds() {
        let db = mvcc();
        let a = db.begin(RR).unwrap();
        let b = db.begin(RR).unwrap();
        assert!(matches!(db.write(a, 0, 1), OpOutcome::Ok(None)));
        let blocked = match db.write(b, 0, 2) {
            OpOutcome::Blocked(t) => t,
            other => panic!("expected block, got {other:?}"),
        };
        db.rollback(a);
        // no committed concurrent write, so no first-updater abort
        assert!(matches!(
            db.complete(blocked, Duration::from_secs(1)),
            OpOutcome::Ok(None)
        ));
    }

    #[test]
    fn first_updater_rule_abort_after_commit() {
        // lost-update-committed shape at a snapshot level
        let db = mvcc();
        let t1 = db.begin(SER).unwrap();
        let t2 = db.begin(SER).unwrap();
        assert_eq!(ok_value(db.read(t1, 0)), 0);
        assert!(matches!(db.write(t2, 0, 1), OpOutcome::Ok(None)));
        db.commit(t2).unwrap();
        match db.write(t1, 0, 2) {
            OpOutcome::Aborted(AbortReason::Rule(m)) => {
                assert!(m.contains("concurrent committed write"));
            }
            other => panic!("expected rule abort, got {other:?}"),
        }
        assert!(matches!(
            db.status(t1).unwrap(),
            TxnStatus::Aborted(AbortReason::Rule(_))
        ));
    }

    #[test]
    fn first_updater_rule_abort_while_waiting() {
        let db = mvcc();
        let t1 = db.begin(RR).unwrap();
        let t2 = db.begin(RR).unwrap();
        assert!(matches!(db.write(t2, 0, 1), OpOutcome::Ok(None)));
        let blocked = match db.write(t1, 0, 2) {
            OpOutcome::Blocked(t) => t,
            other => panic!("expected block, got {other:?}"),
        };
        db.commit(t2).unwrap();
        assert!(matches!(
            db.complete(blocked, Duration::from_secs(1)),
            OpOutcome::Aborted(AbortReason::Rule(_))
        ));
    }

    #[test]
    fn consecutive_rw_pivot_aborts_at_commit() {
        // write-skew shape under the SSI-style rule
        let db = mvcc();
        let t1 = db.begin(SER).unwrap();
        let t2 = db.begin(SER).unwrap();
        assert_eq!(ok_value(db.read(t1, 0)), 0);
        assert_eq!(ok_value(db.read(t2, 1)), 0);
        assert!(matches!(db.write(t2, 0, 1), OpOutcome::Ok(None)));
        assert!(matches!(db.write(t1, 1, 1), OpOutcome::Ok(None)));
        let first = db.commit(t1);
        assert!(matches!(first, Err(AbortReason::Rule(_))), "got {first:?}");
        db.commit(t2).unwrap();
    }

    #[test]
    fn two_txn_write_cycle_detected() {
        // crossed write locks: a waits-for cycle must abort the youngest
        let db = locked();
        let a = db.begin(SER).unwrap();
        let b = db.begin(SER).unwrap();
        assert!(matches!(db.write(a, 0, 1), OpOutcome::Ok(None)));
        assert!(matches!(db.write(b, 1, 2), OpOutcome::Ok(None)));
        let wa = match db.write(a, 1, 3) {
            OpOutcome::Blocked(t) => t,
            other => panic!("expected block, got {other:?}"),
        };
        let out_b = db.write(b, 0, 4);
        // the block event triggers detection; b is younger and dies
        match out_b {
            OpOutcome::Blocked(t) => {
                assert!(matches!(
                    db.complete(t, Duration::from_secs(1)),
                    OpOutcome::Aborted(AbortReason::Deadlock)
                ));
            }
            OpOutcome::Aborted(AbortReason::Deadlock) => {}
            other => panic!("expected deadlock, got {other:?}"),
        }
        assert!(matches!(
            db.complete(wa, Duration::from_secs(1)),
            OpOutcome::Ok(None)
        ));
        db.commit(a).unwrap();
    }

    #[test]
    fn three_txn_write_cycle_one_victim() {
        let db = SimDb::named("mvcc").unwrap();
        for k in 0..3 {
            db.seed(k, 0);
        }
        let t1 = db.begin(RC).unwrap();
        let t2 = db.begin(RC).unwrap();
        let t3 = db.begin(RC).unwrap();
        assert!(matches!(db.write(t1, 0, 1), OpOutcome::Ok(None)));
        assert!(matches!(db.write(t2, 1, 2), OpOutcome::Ok(None)));
        assert!(matches!(db.write(t3, 2, 3), OpOutcome::Ok(None)));
        let b3 = match db.write(t3, 1, 3) {
            OpOutcome::Blocked(t) => t,
            other => panic!("{other:?}"),
        };
        let b2 = match db.write(t2, 0, 2) {
            OpOutcome::Blocked(t) => t,
            other => panic!("{other:?}"),
        };
        // closing the cycle: t1 -> t3 -> t2 -> t1; t3 is youngest
        let out1 = db.write(t1, 2, 1);
        match out1 {
            OpOutcome::Ok(None) => {}
            OpOutcome::Blocked(t) => {
                assert!(matches!(
                    db.complete(t, Duration::from_secs(1)),
                    OpOutcome::Ok(None)
                ));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            db.complete(b3, Duration::from_secs(1)),
            OpOutcome::Aborted(AbortReason::Deadlock)
        ));
        db.commit(t1).unwrap();
        assert!(matches!(
            db.complete(b2, Duration::from_secs(1)),
            OpOutcome::Ok(None)
        ));
        db.commit(t2).unwrap();
    }

    #[test]
    fn no_blocked_txns_no_victims() {
        let db = mvcc();
        let _a = db.begin(RC).unwrap();
        assert!(db.detect_deadlocks().is_empty());
    }

    #[test]
    fn wait_die_times_out_instead_of_detecting() {
        let db = SimDb::named("2pl-timeout").unwrap();
        db.seed(0, 0);
        db.seed(1, 0);
        let a = db.begin(SER).unwrap();
        let b = db.begin(SER).unwrap();
        assert!(matches!(db.write(a, 0, 1), OpOutcome::Ok(None)));
        assert!(matches!(db.write(b, 1, 2), OpOutcome::Ok(None)));
        let wa = match db.write(a, 1, 3) {
            OpOutcome::Blocked(t) => t,
            other => panic!("{other:?}"),
        };
        let wb = match db.write(b, 0, 4) {
            OpOutcome::Blocked(t) => t,
            other => panic!("{other:?}"),
        };
        // nobody detects; the deadline breaks the tie
        let out = db.complete(wa, Duration::from_millis(50));
        assert!(matches!(out, OpOutcome::Aborted(AbortReason::Timeout)));
        assert!(matches!(
            db.complete(wb, Duration::from_secs(1)),
            OpOutcome::Ok(None)
        ));
    }

    #[test]
    fn lock_upgrade_deadlock_youngest_dies() {
        // lost-update shape under strict 2PL: reader upgrades behind a
        // queued writer
        let db = locked();
        let t1 = db.begin(SER).unwrap();
        let t2 = db.begin(SER).unwrap();
        assert_eq!(ok_value(db.read(t1, 0)), 0);
        let w2 = match db.write(t2, 0, 1) {
            OpOutcome::Blocked(t) => t,
            other => panic!("{other:?}"),
        };
        let out1 = db.write(t1, 0, 2);
        match out1 {
            OpOutcome::Blocked(t) => {
                // detection ran on the block event and killed t2
                assert!(matches!(
                    db.complete(t, Duration::from_secs(1)),
                    OpOutcome::Ok(None)
                ));
            }
            OpOutcome::Ok(None) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            db.complete(w2, Duration::from_secs(1)),
            OpOutcome::Aborted(AbortReason::Deadlock)
        ));
        db.commit(t1).unwrap();
        assert_eq!(db.committed_value(0), Some(2));
    }

    #[test]
    fn committed_stamps_strictly_increase_along_chain() {
        let db = mvcc();
        for i in 0..4 {
            let t = db.begin(RC).unwrap();
            assert!(matches!(db.write(t, 0, i), OpOutcome::Ok(None)));
            db.commit(t).unwrap();
        }
        let stamps: Vec<u64> = db.chain_stamps(0).into_iter().flatten().collect();
        assert_eq!(stamps.len(), 5);
        for w in stamps.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn abort_discards_uncommitted_version() {
        let db = mvcc();
        let t = db.begin(RC).unwrap();
        assert!(matches!(db.write(t, 0, 9), OpOutcome::Ok(None)));
        db.rollback(t);
        assert_eq!(db.committed_value(0), Some(0));
        let r = db.begin(RC).unwrap();
        assert_eq!(ok_value(db.read(r, 0)), 0);
    }
}
