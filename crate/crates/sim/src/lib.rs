//! An embedded multi-version transactional key-value store with
//! pluggable concurrency-control profiles, small enough to reproduce
//! engine behaviors (lock waits, MVCC version selection, snapshot
//! timing, rule aborts, deadlock detection) deterministically at desk
//! scale.

pub mod profile;
pub mod store;

pub use profile::{
    profile, profiles, CcProfile, DeadlockPolicy, IsolationLevel, LockMode, ProfileFamily,
    ReadMode, SnapshotTiming, DEFAULT_TIMEOUT,
};
pub use store::{
    AbortReason, Key, OpOutcome, SimDb, SimError, TxnHandle, TxnStatus, Value, WaitTicket,
};
