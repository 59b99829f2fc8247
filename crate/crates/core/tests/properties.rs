//! Cross-checks of the model against independent brute-force oracles and
//! the formal invariants: notation round-trips, the nine-type POP
//! exhaustiveness enumeration, conflict-graph agreement, checker
//! soundness/completeness, and the reduction bounds.

use std::collections::BTreeSet;

use proptest::prelude::*;

use popcheck_core::catalog::matches_for_cycle;
use popcheck_core::cycle::{
    check_consistency, classify, enumerate_cycles, find_cycle, reduce_cycle, reduce_single_object,
    Verdict,
};
use popcheck_core::pop::{build_graph, extract_pops, PopType, ALL_POP_TYPES};
use popcheck_core::schedule::{OpKind, Operation, Schedule};
use popcheck_testkit::{
    oracle_conflict_pairs, oracle_has_cycle, random_schedule, seeded_rng, GenConfig,
};

#[test]
fn random_schedules_always_validate() {
    let mut rng = seeded_rng(11);
    let cfg = GenConfig::default();
    for _ in 0..2000 {
        let s = random_schedule(&mut rng, &cfg);
        assert!(s.validate().is_empty(), "generator emitted invalid: {s}");
    }
}

proptest! {
    #[test]
    fn parse_format_round_trip(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let s = random_schedule(&mut rng, &GenConfig::default());
        let text = s.format();
        let back = Schedule::parse(&text).unwrap();
        prop_assert_eq!(s, back);
    }

    #[test]
    fn equivalence_is_an_equivalence_relation(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let cfg = GenConfig { max_txns: 4, max_objects: 3, max_ops: 10, ..GenConfig::default() };
        let a = random_schedule(&mut rng, &cfg);
        let b = random_schedule(&mut rng, &cfg);
        let c = random_schedule(&mut rng, &cfg);
        prop_assert!(a.equivalent(&a));
        prop_assert_eq!(a.equivalent(&b), b.equivalent(&a));
        if a.equivalent(&b) && b.equivalent(&c) {
            prop_assert!(a.equivalent(&c));
        }
    }
}

/// Version monotonicity: per object, write versions run 1, 2, 3, ...
#[test]
fn write_versions_sequential_in_random_schedules() {
    let mut rng = seeded_rng(17);
    for _ in 0..500 {
        let s = random_schedule(&mut rng, &GenConfig::default());
        for obj in s.objects() {
            let versions: Vec<u32> = s
                .ops()
                .iter()
                .filter(|o| o.kind == OpKind::Write && o.object() == Some(obj.as_str()))
                .map(|o| o.version.unwrap())
                .collect();
            let expect: Vec<u32> = (1..=versions.len() as u32).collect();
            assert_eq!(versions, expect);
        }
    }
}

/// Every legal placement of one operation pair and two terminals, fed
/// through the extractor. The union of produced types must be exactly the
/// nine, and the five live single-terminal combinations must map as the
/// grouping prescribes.
#[test]
fn nine_pop_types_exhaustive() {
    let mut produced: BTreeSet<PopType> = BTreeSet::new();
    for schedule in two_txn_single_object_schedules() {
        let s = Schedule::from_ops(schedule);
        assert!(s.validate().is_empty(), "enumeration produced invalid: {s}");
        for pop in extract_pops(&s).unwrap() {
            produced.insert(pop.kind);
        }
    }
    let all: BTreeSet<PopType> = ALL_POP_TYPES.into_iter().collect();
    assert_eq!(produced, all);

    // the fifteen live combinations
    let expect = |text: &str, kinds: &[PopType]| {
        let s = Schedule::parse(text).unwrap();
        let mut got: Vec<PopType> = extract_pops(&s).unwrap().iter().map(|p| p.kind).collect();
        got.sort();
        let mut want = kinds.to_vec();
        want.sort();
        assert_eq!(got, want, "combination `{text}`");
    };
    // both active
    expect("W1[x1] W2[x2]", &[PopType::Ww]);
    expect("W1[x1] R2[x1]", &[PopType::Wr]);
    expect("R1[x0] W2[x1]", &[PopType::Rw]);
    // first commits between
    expect("W1[x1] C1 W2[x2]", &[PopType::Wcw]);
    expect("W1[x1] C1 R2[x1]", &[PopType::Wcr]);
    expect("R1[x0] C1 W2[x1]", &[PopType::Rcw]);
    // first commits after the pair
    expect("W1[x1] W2[x2] C1", &[PopType::Ww, PopType::Wc]);
    expect("W1[x1] R2[x1] C1", &[PopType::Wr]);
    expect("R1[x0] W2[x1] C1", &[PopType::Rw]);
    // first aborts after the pair
    expect("W1[x1] W2[x2] A1", &[PopType::Ww, PopType::Wa]);
    expect("W1[x1] R2[x1] A1", &[PopType::Wr, PopType::Ra]);
    expect("R1[x0] W2[x1] A1", &[PopType::Rw]);
    // second commits
    expect("W1[x1] W2[x2] C2", &[PopType::Ww]);
    expect("W1[x1] R2[x1] C2", &[PopType::Wr]);
    expect("R1[x0] W2[x1] C2", &[PopType::Rw]);
    // and the two excluded placements produce nothing
    expect("W1[x1] A1 W2[x2]", &[]);
    expect("W1[x1] R2[x1] A2", &[]);
}

/// All two-transaction single-object schedules with one object operation
/// each and every legal terminal placement: the first transaction's
/// terminal between the pair or after it, the second's only after, and
/// both relative orders when both terminate.
fn two_txn_single_object_schedules() -> Vec<Vec<Operation>> {
    let mut out = Vec::new();
    let pairs: [(Operation, Operation); 3] = [
        (Operation::write(1, "x", 1), Operation::write(2, "x", 2)),
        (Operation::write(1, "x", 1), Operation::read(2, "x", 1)),
        (Operation::read(1, "x", 0), Operation::write(2, "x", 1)),
    ];
    let terminals = |t| [None, Some(Operation::commit(t)), Some(Operation::abort(t))];
    for (p, q) in pairs {
        for t1 in terminals(1) {
            for t2 in terminals(2) {
                let mut layouts: Vec<Vec<Operation>> = Vec::new();
                match (&t1, &t2) {
                    (None, None) => layouts.push(vec![p.clone(), q.clone()]),
                    (Some(a), None) => {
                        layouts.push(vec![p.clone(), a.clone(), q.clone()]);
                        layouts.push(vec![p.clone(), q.clone(), a.clone()]);
                    }
                    (None, Some(b)) => layouts.push(vec![p.clone(), q.clone(), b.clone()]),
                    (Some(a), Some(b)) => {
                        layouts.push(vec![p.clone(), a.clone(), q.clone(), b.clone()]);
                        layouts.push(vec![p.clone(), q.clone(), a.clone(), b.clone()]);
                        layouts.push(vec![p.clone(), q.clone(), b.clone(), a.clone()]);
                    }
                }
                out.extend(layouts);
            }
        }
    }
    out
}

/// POP edges projected onto primitive kinds equal the classical conflict
/// relation for schedules whose transactions all commit at the end.
#[test]
fn conflict_graph_projection_agrees() {
    let mut rng = seeded_rng(23);
    let cfg = GenConfig {
        terminal_prob: 0.0,
        ..GenConfig::default()
    };
    let mut checked = 0;
    for _ in 0..800 {
        let mut s = random_schedule(&mut rng, &cfg);
        // commit everything at the end, in transaction order
        let mut ops = s.ops().to_vec();
        for t in s.txns() {
            ops.push(Operation::commit(t));
        }
        s = Schedule::from_ops(ops);
        let pops = extract_pops(&s).unwrap();
        let projected: BTreeSet<(u32, u32, String)> = pops
            .iter()
            .filter(|p| !p.kind.is_reverse())
            .map(|p| (p.from, p.to, p.object.clone()))
            .collect();
        let classical = oracle_conflict_pairs(&s);
        assert_eq!(projected, classical, "schedule: {s}");
        checked += 1;
    }
    assert_eq!(checked, 800);
}

/// Checker soundness/completeness at graph level: agreement with the
/// transitive-closure oracle on randomized schedules.
#[test]
fn checker_agrees_with_brute_force_oracle() {
    let mut rng = seeded_rng(31);
    let cfg = GenConfig {
        max_txns: 5,
        max_objects: 3,
        max_ops: 14,
        ..GenConfig::default()
    };
    for _ in 0..3000 {
        let s = random_schedule(&mut rng, &cfg);
        let pops = extract_pops(&s).unwrap();
        let oracle = oracle_has_cycle(&pops);
        let verdict = check_consistency(&s).unwrap();
        assert_eq!(
            verdict.is_anomaly(),
            oracle,
            "disagreement on {s}: checker={verdict:?} oracle={oracle}"
        );
    }
}

/// Representability: building a graph never fails on a valid schedule,
/// and every reverse edge has its forward partner.
#[test]
fn graphs_build_and_reverse_edges_pair() {
    let mut rng = seeded_rng(37);
    for _ in 0..1500 {
        let s = random_schedule(&mut rng, &GenConfig::default());
        let g = build_graph(&s).expect("valid schedules are representable");
        for e in g.edges.iter().filter(|e| e.kind.is_reverse()) {
            assert!(
                g.edges.iter().any(|f| !f.kind.is_reverse()
                    && f.from == e.to
                    && f.to == e.from
                    && f.object == e.object),
                "unpaired {e} in {s}"
            );
        }
    }
}

/// Reduction bounds on randomized cyclic schedules, cross-checked against
/// extraction membership.
#[test]
fn reduction_bounds_hold() {
    let mut rng = seeded_rng(41);
    let cfg = GenConfig {
        max_txns: 7,
        max_objects: 3,
        max_ops: 16,
        ..GenConfig::default()
    };
    let mut cyclic_seen = 0;
    let mut single_object_seen = 0;
    while cyclic_seen < 1200 {
        let s = random_schedule(&mut rng, &cfg);
        let g = build_graph(&s).unwrap();
        let Some(cycle) = find_cycle(&g) else {
            continue;
        };
        cyclic_seen += 1;
        let reduced = reduce_cycle(&cycle, &s).unwrap();
        assert!(
            reduced.n_t() <= 2 * cycle.n_obj(),
            "bound violated on {s}: {} txns for {} objects",
            reduced.n_t(),
            cycle.n_obj()
        );
        assert_per_object_form(&reduced);
        for e in reduced.edges() {
            assert!(g.edges.contains(e), "invented edge {e} reducing {s}");
        }
        // single-object inputs also go through the dedicated reduction
        if cycle.n_obj() == 1 {
            single_object_seen += 1;
            let two = reduce_single_object(&cycle, &s).unwrap();
            assert_eq!(two.n_t(), 2, "single-object reduction on {s}");
            assert_eq!(two.n_obj(), 1);
            for e in two.edges() {
                assert!(g.edges.contains(e));
            }
        }
    }
    assert!(single_object_seen > 50, "workload never hit single-object cycles");
}

fn assert_per_object_form(c: &popcheck_core::PopCycle) {
    let n = c.edges().len();
    for obj in c.objects() {
        let positions: Vec<usize> = c
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.object == obj)
            .map(|(i, _)| i)
            .collect();
        assert!(
            positions.len() <= 2,
            "object {obj} has {} edges in reduced cycle {c}",
            positions.len()
        );
        if positions.len() == 2 {
            let (a, b) = (positions[0], positions[1]);
            let adjacent = b == a + 1 || (a == 0 && b == n - 1) || n == 2;
            assert!(adjacent, "object {obj} edges not connected in {c}");
        }
    }
}

/// Classification totality and the consistency corollary.
#[test]
fn classification_total_and_corollary_holds() {
    let mut rng = seeded_rng(43);
    let cfg = GenConfig {
        max_txns: 5,
        max_objects: 3,
        max_ops: 12,
        ..GenConfig::default()
    };
    for _ in 0..1500 {
        let s = random_schedule(&mut rng, &cfg);
        match check_consistency(&s).unwrap() {
            Verdict::Consistent => {
                // a consistent schedule matches no catalog case
                assert!(popcheck_core::match_anomaly(&s).unwrap().is_empty());
            }
            Verdict::Anomaly(report) => {
                // every cycle classifies exactly once
                let g = build_graph(&s).unwrap();
                for c in enumerate_cycles(&g, 64).cycles {
                    let (_conflict, _granularity) = classify(&c);
                    let _ = matches_for_cycle(&c);
                }
                let (conflict, granularity) = classify(&report.cycle);
                assert_eq!((conflict, granularity), (report.conflict, report.granularity));
            }
        }
    }
}
