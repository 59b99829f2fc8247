//! Turns catalog templates into executable multi-session step scripts.
//!
//! Planning assigns each transaction to one session and reorders each
//! transaction's consecutive operations so that steps not conflicting
//! with earlier foreign operations are issued first; otherwise an early
//! blocked step would keep the later conflicts from ever forming. The
//! reordering stays within schedule equivalence: operations of one
//! transaction on one object never swap, and terminals keep their slot.
//! Transactions the template leaves open get a cleanup commit appended
//! after the schedule, which is not part of the intended interleaving.

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use popcheck_core::catalog::AnomalyCase;
use popcheck_core::cycle::GranularityClass;
use popcheck_core::schedule::{OpKind, Operation, Schedule, TxnId};
use popcheck_sim::IsolationLevel;

use crate::dialect::{dialect_or_ansi, SqlDialect};
use crate::step::encode_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub step_delay: Duration,
    pub timeout: Duration,
    /// A step not finished this long after issue counts as blocked.
    pub block_threshold: Duration,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            step_delay: Duration::from_millis(100),
            timeout: Duration::from_secs(20),
            block_threshold: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// One range-partitioned table, one key per partition.
    Range,
    /// One table per object, each holding a single key.
    TablePerObject,
}

#[derive(Debug, Clone)]
pub struct PlanOptions {
    pub isolation: IsolationLevel,
    pub dialect: &'static str,
    pub timing: Timing,
    pub partitions: Option<(u32, PartitionMode)>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            isolation: IsolationLevel::ReadCommitted,
            dialect: "ansi",
            timing: Timing::default(),
            partitions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRole {
    /// BEGIN / SET TRANSACTION.
    Setup,
    /// An operation of the intended schedule (reads, writes, templated
    /// terminals).
    Op,
    /// Commit appended after the schedule for transactions the template
    /// leaves open.
    Cleanup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlStep {
    pub sql: String,
    pub role: StepRole,
    /// The schedule operation this step realizes; only `Op` steps carry
    /// one.
    pub intended: Option<Operation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPlan {
    pub txn: TxnId,
    pub steps: Vec<SqlStep>,
}

/// One slot of the global interleaving: (session index, step index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalStep {
    pub session: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectBinding {
    pub name: String,
    pub key: i64,
    pub table: String,
    pub partition: u32,
}

/// An executable plan: per-session SQL, the global issue order, object
/// placement, and prep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepScript {
    pub case_id: Option<u8>,
    pub name: String,
    pub dialect: String,
    pub isolation: IsolationLevel,
    pub objects: Vec<ObjectBinding>,
    pub prep: Vec<String>,
    pub sessions: Vec<SessionPlan>,
    pub global_order: Vec<GlobalStep>,
    pub timing: Timing,
}

impl StepScript {
    pub fn step(&self, g: GlobalStep) -> &SqlStep {
        &self.sessions[g.session].steps[g.step]
    }

    pub fn placement(&self) -> BTreeMap<String, u32> {
        self.objects
            .iter()
            .map(|o| (o.name.clone(), o.partition))
            .collect()
    }

    /// The schedule that materializes when every step executes as issued,
    /// without blocking or rejection: the intended operations in global
    /// order. Equivalent to the source template.
    pub fn expected_trace(&self) -> Schedule {
        let ops = self
            .global_order
            .iter()
            .filter_map(|&g| self.step(g).intended.clone())
            .collect();
        Schedule::from_ops(ops)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("single-object cases are not distributed ones; cannot partition case {0}")]
    SdaNotDistributed(u8),
    #[error("need at least 2 partitions, got {0}")]
    TooFewPartitions(u32),
    #[error("the {0} dialect has no partitioning syntax; use table-per-object mode")]
    NoPartitionSyntax(&'static str),
}

/// Plans a catalog case.
pub fn plan_case(case: &AnomalyCase, opts: &PlanOptions) -> Result<StepScript, PlanError> {
    plan_schedule(case.name, Some(case.id), &case.template, opts)
}

/// Plans a distributed variant: objects spread over at least two
/// partitions. Single-object cases are rejected.
pub fn distributed_plan(
    case: &AnomalyCase,
    n_partitions: u32,
    mode: PartitionMode,
) -> Result<StepScript, PlanError> {
    if n_partitions < 2 {
        return Err(PlanError::TooFewPartitions(n_partitions));
    }
    if case.granularity == GranularityClass::Sda {
        return Err(PlanError::SdaNotDistributed(case.id));
    }
    let opts = PlanOptions {
        partitions: Some((n_partitions, mode)),
        ..PlanOptions::default()
    };
    plan_case(case, &opts)
}

/// Plans an arbitrary template schedule (micro-scenarios and ad-hoc runs
/// use this directly).
pub fn plan_schedule(
    name: &str,
    case_id: Option<u8>,
    template: &Schedule,
    opts: &PlanOptions,
) -> Result<StepScript, PlanError> {
    let dialect = dialect_or_ansi(opts.dialect);
    let objects = bind_objects(template, opts, dialect)?;
    let table_of: BTreeMap<&str, &str> = objects
        .iter()
        .map(|o| (o.name.as_str(), o.table.as_str()))
        .collect();
    let key_of: BTreeMap<&str, i64> = objects.iter().map(|o| (o.name.as_str(), o.key)).collect();

    let ordered = reorder_for_conflicts(template);
    let txns = template.txns();
    let session_of: BTreeMap<TxnId, usize> =
        txns.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut sessions: Vec<SessionPlan> = txns
        .iter()
        .map(|&txn| SessionPlan { txn, steps: Vec::new() })
        .collect();
    let mut global_order: Vec<GlobalStep> = Vec::new();
    let mut begun: Vec<bool> = vec![false; txns.len()];

    let mut push = |sessions: &mut Vec<SessionPlan>,
                    global_order: &mut Vec<GlobalStep>,
                    session: usize,
                    step: SqlStep| {
        sessions[session].steps.push(step);
        global_order.push(GlobalStep {
            session,
            step: sessions[session].steps.len() - 1,
        });
    };

    for op in &ordered {
        let session = session_of[&op.txn];
        if !begun[session] {
            begun[session] = true;
            let setup = |sql: String| SqlStep {
                sql,
                role: StepRole::Setup,
                intended: None,
            };
            if dialect.isolation_before_begin {
                push(&mut sessions, &mut global_order, session,
                     setup(dialect.render_set_isolation(opts.isolation)));
                push(&mut sessions, &mut global_order, session,
                     setup(dialect.begin.to_string()));
            } else {
                push(&mut sessions, &mut global_order, session,
                     setup(dialect.begin.to_string()));
                push(&mut sessions, &mut global_order, session,
                     setup(dialect.render_set_isolation(opts.isolation)));
            }
        }
        // the value encodes (txn, global sequence number); sequence
        // numbers are 1-based positions in the final order
        let seq = global_order.len() + 1;
        let sql = match op.kind {
            OpKind::Read => {
                let obj = op.object().unwrap();
                dialect.render_select(table_of[obj], key_of[obj])
            }
            OpKind::Write => {
                let obj = op.object().unwrap();
                dialect.render_update(table_of[obj], key_of[obj], encode_value(op.txn, seq))
            }
            OpKind::Commit => dialect.commit.to_string(),
            OpKind::Abort => dialect.rollback.to_string(),
        };
        push(&mut sessions, &mut global_order, session, SqlStep {
            sql,
            role: StepRole::Op,
            intended: Some(op.clone()),
        });
    }

    // close transactions the template leaves open, in transaction order,
    // after the intended schedule
    for (&txn, &session) in &session_of {
        if template.terminal_of(txn).is_none() && begun[session] {
            push(&mut sessions, &mut global_order, session, SqlStep {
                sql: dialect.commit.to_string(),
                role: StepRole::Cleanup,
                intended: None,
            });
        }
    }

    let prep = render_prep(&objects, opts, dialect);
    let script = StepScript {
        case_id,
        name: name.to_string(),
        dialect: dialect.name.to_string(),
        isolation: opts.isolation,
        objects,
        prep,
        sessions,
        global_order,
        timing: opts.timing,
    };
    debug_assert!(script.expected_trace().equivalent(template));
    Ok(script)
}

/// Objects in first-appearance order, bound to keys (their index),
/// tables, and partitions.
fn bind_objects(
    template: &Schedule,
    opts: &PlanOptions,
    dialect: &SqlDialect,
) -> Result<Vec<ObjectBinding>, PlanError> {
    let names = template.objects();
    let mut out = Vec::with_capacity(names.len());
    for (i, name) in names.into_iter().enumerate() {
        let (table, partition) = match opts.partitions {
            None => ("t1".to_string(), 0),
            Some((n, PartitionMode::Range)) => {
                if dialect.create_partitioned_table.is_none() {
                    return Err(PlanError::NoPartitionSyntax(dialect.name));
                }
                ("t1".to_string(), i as u32 % n)
            }
            Some((n, PartitionMode::TablePerObject)) => {
                (format!("t{}", i + 1), i as u32 % n)
            }
        };
        out.push(ObjectBinding {
            name,
            key: i as i64,
            table,
            partition,
        });
    }
    Ok(out)
}

fn render_prep(
    objects: &[ObjectBinding],
    opts: &PlanOptions,
    dialect: &SqlDialect,
) -> Vec<String> {
    let mut prep = Vec::new();
    match opts.partitions {
        Some((_, PartitionMode::Range)) => {
            prep.push(dialect.render_drop("t1"));
            prep.push(
                dialect
                    .create_partitioned_table
                    .expect("checked at binding")
                    .replace("{table}", "t1"),
            );
            for o in objects {
                let part = dialect
                    .create_partition
                    .expect("partitioned dialects define this")
                    .replace("{table}", &o.table)
                    .replace("{partition}", &o.partition.to_string())
                    .replace("{from}", &o.key.to_string())
                    .replace("{to}", &(o.key + 1).to_string());
                prep.push(part);
            }
        }
        Some((_, PartitionMode::TablePerObject)) => {
            for o in objects {
                prep.push(dialect.render_drop(&o.table));
                prep.push(dialect.render_create(&o.table));
            }
        }
        None => {
            prep.push(dialect.render_drop("t1"));
            prep.push(dialect.render_create("t1"));
        }
    }
    for o in objects {
        prep.push(dialect.render_insert(&o.table, o.key, 0));
    }
    prep
}

/// The conflict-aware reordering: within each maximal run of one
/// transaction's consecutive operations, object groups that do not
/// conflict with anything already emitted move to the front. Group order
/// inside stays; terminals keep the run's tail.
fn reorder_for_conflicts(template: &Schedule) -> Vec<Operation> {
    let mut out: Vec<Operation> = Vec::new();
    let ops = template.ops();
    let mut i = 0;
    while i < ops.len() {
        let txn = ops[i].txn;
        let mut j = i;
        while j < ops.len() && ops[j].txn == txn {
            j += 1;
        }
        let run = &ops[i..j];
        let object_ops: Vec<&Operation> =
            run.iter().filter(|o| o.kind.is_object_oriented()).collect();
        let terminals: Vec<&Operation> =
            run.iter().filter(|o| o.kind.is_terminal()).collect();
        // group by object, preserving order of first appearance
        let mut groups: Vec<(&str, Vec<&Operation>)> = Vec::new();
        for op in object_ops {
            let obj = op.object().unwrap();
            match groups.iter_mut().find(|(o, _)| *o == obj) {
                Some((_, g)) => g.push(op),
                None => groups.push((obj, vec![op])),
            }
        }
        let conflicts_with_emitted = |group: &[&Operation]| {
            group.iter().any(|op| {
                out.iter().any(|e| {
                    e.txn != op.txn
                        && e.object() == op.object()
                        && (e.kind == OpKind::Write || op.kind == OpKind::Write)
                })
            })
        };
        let (clear, contended): (Vec<_>, Vec<_>) = groups
            .into_iter()
            .partition(|(_, g)| !conflicts_with_emitted(g));
        for (_, g) in clear.into_iter().chain(contended) {
            out.extend(g.into_iter().cloned());
        }
        out.extend(terminals.into_iter().cloned());
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use popcheck_core::catalog::lookup;

    fn plan(id: u8) -> StepScript {
        plan_case(lookup(id).unwrap(), &PlanOptions::default()).unwrap()
    }

    fn intended_text(script: &StepScript) -> String {
        script.expected_trace().format()
    }

    #[test]
    fn read_skew_plans_to_reordered_form() {
        // the non-conflicting write on the second object starts first
        let script = plan(11);
        assert_eq!(intended_text(&script), "R1[x0] W2[y1] W2[x1] R1[y1]");
    }

    #[test]
    fn dirty_read_template_already_conflict_safe() {
        let script = plan(1);
        assert_eq!(script.sessions.len(), 2);
        assert_eq!(intended_text(&script), "W1[x1] R2[x1] A1");
    }

    #[test]
    fn read_skew_committed_keeps_commit_before_final_read() {
        let script = plan(29);
        assert_eq!(intended_text(&script), "R1[x0] W2[y1] W2[x1] C2 R1[y1]");
    }

    #[test]
    fn all_cases_plan_equivalently_in_both_modes() {
        for case in popcheck_core::catalog() {
            let plain = plan_case(case, &PlanOptions::default()).unwrap();
            assert!(
                plain.expected_trace().equivalent(&case.template),
                "case {} plain plan diverged",
                case.id
            );
            if case.granularity != GranularityClass::Sda {
                let dist = distributed_plan(case, 2, PartitionMode::TablePerObject).unwrap();
                assert!(
                    dist.expected_trace().equivalent(&case.template),
                    "case {} distributed plan diverged",
                    case.id
                );
            }
        }
    }

    #[test]
    fn prep_matches_expected_statement_block() {
        let script = plan(11);
        assert_eq!(
            script.prep,
            vec![
                "DROP TABLE IF EXISTS t1",
                "CREATE TABLE t1 (k INT PRIMARY KEY, v INT)",
                "INSERT INTO t1 VALUES (0, 0)",
                "INSERT INTO t1 VALUES (1, 0)",
            ]
        );
    }

    #[test]
    fn emitted_sql_encodes_writer_and_step() {
        let script = plan(11);
        let updates: Vec<&str> = script
            .global_order
            .iter()
            .map(|&g| script.step(g).sql.as_str())
            .filter(|s| s.starts_with("UPDATE"))
            .collect();
        assert_eq!(updates.len(), 2);
        for sql in updates {
            let v: i64 = sql
                .split("v=")
                .nth(1)
                .unwrap()
                .split_whitespace()
                .next()
                .unwrap()
                .parse()
                .unwrap();
            assert_eq!(v / 1000, 2, "writer id encoded in {sql}");
        }
    }

    #[test]
    fn sessions_begin_once_and_set_isolation() {
        let script = plan(31);
        for session in &script.sessions {
            assert_eq!(session.steps[0].sql, "BEGIN");
            assert!(session.steps[1].sql.starts_with("SET TRANSACTION ISOLATION LEVEL"));
            assert_eq!(session.steps[0].role, StepRole::Setup);
        }
    }

    #[test]
    fn open_transactions_get_cleanup_commits_in_txn_order() {
        let script = plan(31); // write skew: no templated terminals
        let tail: Vec<(usize, StepRole)> = script
            .global_order
            .iter()
            .rev()
            .take(2)
            .map(|&g| (g.session, script.step(g).role))
            .collect();
        assert_eq!(tail, vec![(1, StepRole::Cleanup), (0, StepRole::Cleanup)]);
    }

    #[test]
    fn distributed_rejects_sda() {
        let err = distributed_plan(lookup(1).unwrap(), 2, PartitionMode::Range).unwrap_err();
        assert!(matches!(err, PlanError::SdaNotDistributed(1)));
    }

    #[test]
    fn distributed_write_skew_places_objects_apart() {
        let script = distributed_plan(lookup(31).unwrap(), 2, PartitionMode::Range).unwrap();
        let placement = script.placement();
        assert_eq!(placement["x"], 0);
        assert_eq!(placement["y"], 1);
        assert!(script.prep.iter().any(|s| s.contains("PARTITION BY RANGE")));
    }

    #[test]
    fn table_per_object_step_wat() {
        let script = distributed_plan(lookup(26).unwrap(), 3, PartitionMode::TablePerObject).unwrap();
        let tables: Vec<&str> = script.objects.iter().map(|o| o.table.as_str()).collect();
        assert_eq!(tables, vec!["t1", "t2", "t3"]);
        let parts: Vec<u32> = script.objects.iter().map(|o| o.partition).collect();
        assert_eq!(parts, vec![0, 1, 2]);
        assert_eq!(script.prep.len(), 9); // drop+create per table, one insert each
    }

    #[test]
    fn expected_trace_equivalent_property() {
        for case in popcheck_core::catalog() {
            let script = plan_case(case, &PlanOptions::default()).unwrap();
            assert!(script.expected_trace().equivalent(&case.template));
        }
    }
}
