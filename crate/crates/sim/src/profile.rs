//! Concurrency-control profiles and the isolation-level overlays that
//! resolve them.
//!
//! A profile family names an engine style (MVCC with write locks only,
//! or full two-phase locking); resolving it at an isolation level yields
//! the concrete knobs: how reads pick versions, when snapshots are taken,
//! whether a write after a concurrent committed write aborts
//! (first-updater-wins), whether a commit aborts when the transaction is
//! the pivot of two consecutive read-write conflicts, and how deadlocks
//! are broken.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IsolationLevel {
    Serializable,
    RepeatableRead,
    ReadCommitted,
    ReadUncommitted,
}

impl IsolationLevel {
    pub const ALL: [IsolationLevel; 4] = [
        IsolationLevel::Serializable,
        IsolationLevel::RepeatableRead,
        IsolationLevel::ReadCommitted,
        IsolationLevel::ReadUncommitted,
    ];

    pub fn short(&self) -> &'static str {
        match self {
            IsolationLevel::Serializable => "ser",
            IsolationLevel::RepeatableRead => "rr",
            IsolationLevel::ReadCommitted => "rc",
            IsolationLevel::ReadUncommitted => "ru",
        }
    }

    /// SQL spelling for SET TRANSACTION ISOLATION LEVEL.
    pub fn sql(&self) -> &'static str {
        match self {
            IsolationLevel::Serializable => "SERIALIZABLE",
            IsolationLevel::RepeatableRead => "REPEATABLE READ",
            IsolationLevel::ReadCommitted => "READ COMMITTED",
            IsolationLevel::ReadUncommitted => "READ UNCOMMITTED",
        }
    }
}

impl fmt::Display for IsolationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for IsolationLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ser" | "serializable" => Ok(IsolationLevel::Serializable),
            "rr" | "repeatable-read" | "repeatable_read" => Ok(IsolationLevel::RepeatableRead),
            "rc" | "read-committed" | "read_committed" => Ok(IsolationLevel::ReadCommitted),
            "ru" | "read-uncommitted" | "read_uncommitted" => Ok(IsolationLevel::ReadUncommitted),
            other => Err(format!("unknown isolation level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    TwoPhaseReadWrite,
    WriteLocksOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Acquire a read lock and return the current value.
    LockedCurrent,
    /// Newest committed version, no read lock.
    MvReadCommitted,
    /// Newest version committed at or before the transaction's snapshot.
    MvSnapshot,
    /// Newest version regardless of commit state (read-uncommitted).
    UncommittedLatest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotTiming {
    /// Snapshot fixed when the transaction begins.
    FirstOperation,
    /// Snapshot fixed at the transaction's first read.
    FirstRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeadlockPolicy {
    /// Build the waits-for graph on every block event and abort the
    /// youngest member of each cycle.
    WaitForGraphDetect,
    /// No detection; blocked requests abort when their timeout expires.
    WaitDieTimeout,
}

/// Resolved per-transaction concurrency-control configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CcProfile {
    pub lock_mode: LockMode,
    pub read_mode: ReadMode,
    pub snapshot_timing: SnapshotTiming,
    /// Abort a write that follows a concurrent committed write to the
    /// same key (forbids WCW).
    pub first_updater_abort: bool,
    /// Abort at commit when the transaction has both an incoming and an
    /// outgoing read-write conflict (simplified SSI, direct neighbors
    /// only).
    pub consecutive_rw_abort: bool,
    pub deadlock: DeadlockPolicy,
    pub timeout: Duration,
}

impl CcProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.read_mode == ReadMode::LockedCurrent && self.lock_mode != LockMode::TwoPhaseReadWrite
        {
            return Err("locked-current reads require two-phase read-write locking".into());
        }
        Ok(())
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);

/// A named engine style resolvable at each isolation level.
#[derive(Clone, Copy)]
pub struct ProfileFamily {
    pub name: &'static str,
    pub summary: &'static str,
    resolve: fn(IsolationLevel) -> CcProfile,
}

impl fmt::Debug for ProfileFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProfileFamily").field("name", &self.name).finish()
    }
}

impl ProfileFamily {
    pub fn resolve(&self, level: IsolationLevel) -> CcProfile {
        let p = (self.resolve)(level);
        debug_assert!(p.validate().is_ok());
        p
    }
}

fn base(read_mode: ReadMode, lock_mode: LockMode) -> CcProfile {
    CcProfile {
        lock_mode,
        read_mode,
        snapshot_timing: SnapshotTiming::FirstOperation,
        first_updater_abort: false,
        consecutive_rw_abort: false,
        deadlock: DeadlockPolicy::WaitForGraphDetect,
        timeout: DEFAULT_TIMEOUT,
    }
}

fn mvcc_at(level: IsolationLevel, timing: SnapshotTiming) -> CcProfile {
    let mut p = match level {
        IsolationLevel::Serializable => CcProfile {
            first_updater_abort: true,
            consecutive_rw_abort: true,
            ..base(ReadMode::MvSnapshot, LockMode::WriteLocksOnly)
        },
        IsolationLevel::RepeatableRead => CcProfile {
            first_updater_abort: true,
            ..base(ReadMode::MvSnapshot, LockMode::WriteLocksOnly)
        },
        // read-uncommitted behaves as read-committed in this family
        IsolationLevel::ReadCommitted | IsolationLevel::ReadUncommitted => {
            base(ReadMode::MvReadCommitted, LockMode::WriteLocksOnly)
        }
    };
    p.snapshot_timing = timing;
    p
}

fn two_phase_at(level: IsolationLevel) -> CcProfile {
    match level {
        IsolationLevel::Serializable | IsolationLevel::RepeatableRead => {
            base(ReadMode::LockedCurrent, LockMode::TwoPhaseReadWrite)
        }
        IsolationLevel::ReadCommitted => {
            base(ReadMode::MvReadCommitted, LockMode::TwoPhaseReadWrite)
        }
        IsolationLevel::ReadUncommitted => {
            base(ReadMode::UncommittedLatest, LockMode::TwoPhaseReadWrite)
        }
    }
}

const PROFILES: [ProfileFamily; 5] = [
    ProfileFamily {
        name: "mvcc",
        summary: "write locks only; snapshot reads at SER/RR (snapshot at begin), \
                  committed reads at RC/RU; first-updater-wins at SER/RR; \
                  consecutive-RW commit abort at SER; wait-for deadlock detection",
        resolve: |l| mvcc_at(l, SnapshotTiming::FirstOperation),
    },
    ProfileFamily {
        name: "mvcc-first-read",
        summary: "the mvcc family with snapshots taken at the first read instead of begin",
        resolve: |l| mvcc_at(l, SnapshotTiming::FirstRead),
    },
    ProfileFamily {
        name: "2pl",
        summary: "read and write locks at SER/RR, committed reads at RC, \
                  uncommitted reads at RU; wait-for deadlock detection",
        resolve: two_phase_at,
    },
    ProfileFamily {
        name: "strict-2pl",
        summary: "read and write locks held to transaction end at every level",
        resolve: |_| base(ReadMode::LockedCurrent, LockMode::TwoPhaseReadWrite),
    },
    ProfileFamily {
        name: "2pl-timeout",
        summary: "the 2pl family with wait-die timeouts instead of deadlock detection",
        resolve: |l| CcProfile {
            deadlock: DeadlockPolicy::WaitDieTimeout,
            ..two_phase_at(l)
        },
    },
];

pub fn profiles() -> &'static [ProfileFamily] {
    &PROFILES
}

pub fn profile(name: &str) -> Option<&'static ProfileFamily> {
    PROFILES.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_profiles_resolve_validly_at_all_levels() {
        for family in profiles() {
            for level in IsolationLevel::ALL {
                family.resolve(level).validate().unwrap();
            }
        }
    }

    #[test]
    fn mvcc_rc_reads_committed() {
        let p = profile("mvcc").unwrap().resolve(IsolationLevel::ReadCommitted);
        assert_eq!(p.read_mode, ReadMode::MvReadCommitted);
        assert!(!p.first_updater_abort);
    }

    #[test]
    fn mvcc_ser_has_ssi_and_first_updater() {
        let p = profile("mvcc").unwrap().resolve(IsolationLevel::Serializable);
        assert!(p.first_updater_abort);
        assert!(p.consecutive_rw_abort);
        assert_eq!(p.read_mode, ReadMode::MvSnapshot);
    }

    #[test]
    fn strict_2pl_locks_reads_at_every_level() {
        for level in IsolationLevel::ALL {
            let p = profile("strict-2pl").unwrap().resolve(level);
            assert_eq!(p.read_mode, ReadMode::LockedCurrent);
        }
    }

    #[test]
    fn level_parsing() {
        assert_eq!("rc".parse::<IsolationLevel>().unwrap(), IsolationLevel::ReadCommitted);
        assert_eq!(
            "SERIALIZABLE".parse::<IsolationLevel>().unwrap(),
            IsolationLevel::Serializable
        );
        assert!("weird".parse::<IsolationLevel>().is_err());
    }
}
