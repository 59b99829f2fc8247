//! The anomaly catalog: 33 executable cases, each a template schedule
//! with its POP combination and classification.
//!
//! The single- and double-object entries are one-to-one: a cycle matches
//! when its combination equals the stored one. A combination is the
//! cyclic sequence of (POP type, object role) pairs anchored at the edge
//! whose witness starts earliest in the schedule; object roles are
//! numbered by first appearance along that traversal. The anchoring is
//! what tells Non-repeatable Read (read first) from Intermediate Read
//! (write first), which share the same edge multiset.
//!
//! The three Step entries stand for unbounded families and match by
//! pattern instead: at least three transactions, at least two objects,
//! and the presence/absence conditions on primitive WR/WW/RW edges.

use std::fmt;
use std::sync::OnceLock;

use crate::cycle::{
    classify, enumerate_cycles, find_cycle, reduce_cycle, ConflictClass, GranularityClass,
    PopCycle,
};
use crate::pop::{build_graph, extract_pops, InvalidSchedule, PopType};
use crate::schedule::Schedule;

/// Cycle cap used when scanning a schedule for catalog matches.
pub const MATCH_CYCLE_CAP: usize = 1024;

/// One catalog entry.
#[derive(Debug, Clone)]
pub struct AnomalyCase {
    pub id: u8,
    pub name: &'static str,
    pub conflict: ConflictClass,
    pub granularity: GranularityClass,
    /// Canonical template schedule.
    pub template: Schedule,
    /// Alternate template (Dirty Write ships both the abort and the
    /// commit variant, which databases treat differently).
    pub alt_template: Option<Schedule>,
    /// Anchored (type, object role) combination of the template's cycle.
    pub pop_combo: Vec<(PopType, u8)>,
    /// Combination of the alternate template, when present.
    pub alt_combo: Option<Vec<(PopType, u8)>>,
    pub n_sessions: u8,
    pub notes: &'static str,
}

impl AnomalyCase {
    pub fn combo_display(&self) -> String {
        combo_string(&self.pop_combo)
    }
}

pub fn combo_string(combo: &[(PopType, u8)]) -> String {
    let role = |r: u8| ["x", "y", "z", "u", "v", "w"][r as usize % 6];
    combo
        .iter()
        .map(|(k, r)| format!("{}[{}]", k, role(*r)))
        .collect::<Vec<_>>()
        .join("-")
}

/// A catalog case matched by a concrete cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogMatch {
    pub case_id: u8,
    pub witness: PopCycle,
}

struct Row {
    id: u8,
    name: &'static str,
    conflict: ConflictClass,
    granularity: GranularityClass,
    template: &'static str,
    alt_template: Option<&'static str>,
    combo: &'static [(PopType, u8)],
    alt_combo: Option<&'static [(PopType, u8)]>,
    notes: &'static str,
}

use ConflictClass::{Iat, Rat, Wat};
use GranularityClass::{Dda, Mda, Sda};
use PopType::{Ra, Rcw, Rw, Wa, Wc, Wcr, Wcw, Wr, Ww};

#[rustfmt::skip]
const ROWS: [Row; 33] = [
    Row { id: 1,  name: "Dirty Read",                    conflict: Rat, granularity: Sda,
          template: "W1[x1] R2[x1] A1", alt_template: None,
          combo: &[(Wr, 0), (Ra, 0)], alt_combo: None,
          notes: "read of a write that is later rolled back" },
    Row { id: 2,  name: "Non-repeatable Read",           conflict: Rat, granularity: Sda,
          template: "R1[x0] W2[x1] R1[x1]", alt_template: None,
          combo: &[(Rw, 0), (Wr, 0)], alt_combo: None,
          notes: "two reads of one object straddle a foreign write" },
    Row { id: 3,  name: "Intermediate Read",             conflict: Rat, granularity: Sda,
          template: "W1[x1] R2[x1] W1[x2]", alt_template: None,
          combo: &[(Wr, 0), (Rw, 0)], alt_combo: None,
          notes: "a foreign read lands between two writes of one transaction" },
    Row { id: 4,  name: "Intermediate Read Committed",   conflict: Rat, granularity: Sda,
          template: "W1[x1] R2[x1] C2 W1[x2]", alt_template: None,
          combo: &[(Wr, 0), (Rcw, 0)], alt_combo: None,
          notes: "the intermediate reader commits before the second write" },
    Row { id: 5,  name: "Lost Self Update",              conflict: Rat, granularity: Sda,
          template: "W1[x1] W2[x2] R1[x2]", alt_template: None,
          combo: &[(Ww, 0), (Wr, 0)], alt_combo: None,
          notes: "a transaction reads back a foreign overwrite of its own write" },
    Row { id: 6,  name: "Write-read Skew",               conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] W2[y1] R1[y1]", alt_template: None,
          combo: &[(Wr, 0), (Wr, 1)], alt_combo: None,
          notes: "" },
    Row { id: 7,  name: "Write-read Skew Committed",     conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] W2[y1] C2 R1[y1]", alt_template: None,
          combo: &[(Wr, 0), (Wcr, 1)], alt_combo: None,
          notes: "" },
    Row { id: 8,  name: "Double-write Skew 1",           conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] W2[y1] W1[y2]", alt_template: None,
          combo: &[(Wr, 0), (Ww, 1)], alt_combo: None,
          notes: "" },
    Row { id: 9,  name: "Double-write Skew 1 Committed", conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] W2[y1] C2 W1[y2]", alt_template: None,
          combo: &[(Wr, 0), (Wcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 10, name: "Double-write Skew 2",           conflict: Rat, granularity: Dda,
          template: "W1[x1] W2[x2] W2[y1] R1[y1]", alt_template: None,
          combo: &[(Ww, 0), (Wr, 1)], alt_combo: None,
          notes: "" },
    Row { id: 11, name: "Read Skew",                     conflict: Rat, granularity: Dda,
          template: "R1[x0] W2[x1] W2[y1] R1[y1]", alt_template: None,
          combo: &[(Rw, 0), (Wr, 1)], alt_combo: None,
          notes: "" },
    Row { id: 12, name: "Read Skew 2",                   conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] R2[y0] W1[y1]", alt_template: None,
          combo: &[(Wr, 0), (Rw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 13, name: "Read Skew 2 Committed",         conflict: Rat, granularity: Dda,
          template: "W1[x1] R2[x1] R2[y0] C2 W1[y1]", alt_template: None,
          combo: &[(Wr, 0), (Rcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 14, name: "Step RAT",                      conflict: Rat, granularity: Mda,
          template: "W1[x1] W2[y1] W3[z1] R3[y1] R2[x1] R1[z1]", alt_template: None,
          combo: &[(Wr, 0), (Wr, 1), (Wr, 2)], alt_combo: None,
          notes: "family: any cycle with a WR edge, >=3 transactions, >=2 objects" },
    Row { id: 15, name: "Dirty Write",                   conflict: Wat, granularity: Sda,
          template: "W1[x1] W2[x2] A1", alt_template: Some("W1[x1] W2[x2] C1"),
          combo: &[(Ww, 0), (Wa, 0)], alt_combo: Some(&[(Ww, 0), (Wc, 0)]),
          notes: "abort variant canonical; commit variant behaves differently" },
    Row { id: 16, name: "Full Write",                    conflict: Wat, granularity: Sda,
          template: "W1[x1] W2[x2] W1[x3]", alt_template: None,
          combo: &[(Ww, 0), (Ww, 0)], alt_combo: None,
          notes: "" },
    Row { id: 17, name: "Full Write Committed",          conflict: Wat, granularity: Sda,
          template: "W1[x1] W2[x2] C2 W1[x3]", alt_template: None,
          combo: &[(Ww, 0), (Wcw, 0)], alt_combo: None,
          notes: "" },
    Row { id: 18, name: "Lost Update",                   conflict: Wat, granularity: Sda,
          template: "R1[x0] W2[x1] W1[x2]", alt_template: None,
          combo: &[(Rw, 0), (Ww, 0)], alt_combo: None,
          notes: "" },
    Row { id: 19, name: "Lost Self Update Committed",    conflict: Wat, granularity: Sda,
          template: "W1[x1] W2[x2] C2 R1[x2]", alt_template: None,
          combo: &[(Ww, 0), (Wcr, 0)], alt_combo: None,
          notes: "" },
    Row { id: 20, name: "Double-write Skew 2 Committed", conflict: Wat, granularity: Dda,
          template: "W1[x1] W2[x2] W2[y1] C2 R1[y1]", alt_template: None,
          combo: &[(Ww, 0), (Wcr, 1)], alt_combo: None,
          notes: "" },
    Row { id: 21, name: "Full-write Skew",               conflict: Wat, granularity: Dda,
          template: "W1[x1] W2[x2] W2[y1] W1[y2]", alt_template: None,
          combo: &[(Ww, 0), (Ww, 1)], alt_combo: None,
          notes: "" },
    Row { id: 22, name: "Full-write Skew Committed",     conflict: Wat, granularity: Dda,
          template: "W1[x1] W2[x2] W2[y1] C2 W1[y2]", alt_template: None,
          combo: &[(Ww, 0), (Wcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 23, name: "Read-write Skew 1",             conflict: Wat, granularity: Dda,
          template: "R1[x0] W2[x1] W2[y1] W1[y2]", alt_template: None,
          combo: &[(Rw, 0), (Ww, 1)], alt_combo: None,
          notes: "" },
    Row { id: 24, name: "Read-write Skew 2",             conflict: Wat, granularity: Dda,
          template: "W1[x1] W2[x2] R2[y0] W1[y1]", alt_template: None,
          combo: &[(Ww, 0), (Rw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 25, name: "Read-write Skew 2 Committed",   conflict: Wat, granularity: Dda,
          template: "W1[x1] W2[x2] R2[y0] C2 W1[y1]", alt_template: None,
          combo: &[(Ww, 0), (Rcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 26, name: "Step WAT",                      conflict: Wat, granularity: Mda,
          template: "W1[x1] W2[y1] W3[z1] W3[y2] W2[x2] W1[z2]", alt_template: None,
          combo: &[(Ww, 0), (Ww, 1), (Ww, 2)], alt_combo: None,
          notes: "family: WW edges, no WR, >=3 transactions, >=2 objects" },
    Row { id: 27, name: "Non-repeatable Read Committed", conflict: Iat, granularity: Sda,
          template: "R1[x0] W2[x1] C2 R1[x1]", alt_template: None,
          combo: &[(Rw, 0), (Wcr, 0)], alt_combo: None,
          notes: "" },
    Row { id: 28, name: "Lost Update Committed",         conflict: Iat, granularity: Sda,
          template: "R1[x0] W2[x1] C2 W1[x2]", alt_template: None,
          combo: &[(Rw, 0), (Wcw, 0)], alt_combo: None,
          notes: "" },
    Row { id: 29, name: "Read Skew Committed",           conflict: Iat, granularity: Dda,
          template: "R1[x0] W2[x1] W2[y1] C2 R1[y1]", alt_template: None,
          combo: &[(Rw, 0), (Wcr, 1)], alt_combo: None,
          notes: "same conflict-graph shape as Read Skew, different class" },
    Row { id: 30, name: "Read-write Skew 1 Committed",   conflict: Iat, granularity: Dda,
          template: "R1[x0] W2[x1] W2[y1] C2 W1[y2]", alt_template: None,
          combo: &[(Rw, 0), (Wcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 31, name: "Write Skew",                    conflict: Iat, granularity: Dda,
          template: "R1[x0] W2[x1] R2[y0] W1[y1]", alt_template: None,
          combo: &[(Rw, 0), (Rw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 32, name: "Write Skew Committed",          conflict: Iat, granularity: Dda,
          template: "R1[x0] W2[x1] R2[y0] C2 W1[y1]", alt_template: None,
          combo: &[(Rw, 0), (Rcw, 1)], alt_combo: None,
          notes: "" },
    Row { id: 33, name: "Step IAT",                      conflict: Iat, granularity: Mda,
          template: "R1[x0] R2[y0] R3[z0] W3[y1] W2[x1] W1[z1]", alt_template: None,
          combo: &[(Rw, 0), (Rw, 1), (Rw, 2)], alt_combo: None,
          notes: "family: RW edges, no WR, no WW, >=3 transactions, >=2 objects" },
];

static CATALOG: OnceLock<Vec<AnomalyCase>> = OnceLock::new();

/// The full 33-entry catalog.
pub fn catalog() -> &'static [AnomalyCase] {
    CATALOG.get_or_init(|| {
        ROWS.iter()
            .map(|r| {
                let template = Schedule::parse(r.template)
                    .unwrap_or_else(|e| panic!("case {} template: {e}", r.id));
                let n_sessions = template.txns().len() as u8;
                AnomalyCase {
                    id: r.id,
                    name: r.name,
                    conflict: r.conflict,
                    granularity: r.granularity,
                    template,
                    alt_template: r
                        .alt_template
                        .map(|t| Schedule::parse(t).expect("alternate template")),
                    pop_combo: r.combo.to_vec(),
                    alt_combo: r.alt_combo.map(|c| c.to_vec()),
                    n_sessions,
                    notes: r.notes,
                }
            })
            .collect()
    })
}

pub fn lookup(id: u8) -> Option<&'static AnomalyCase> {
    catalog().iter().find(|c| c.id == id)
}

/// The anchored combination of a cycle: rotate so the edge whose witness
/// operation appears earliest in the schedule comes first, then list
/// (type, object role) along the traversal with roles numbered by first
/// appearance.
pub fn cycle_signature(c: &PopCycle) -> Vec<(PopType, u8)> {
    let edges = c.edges();
    let anchor = edges
        .iter()
        .enumerate()
        .min_by_key(|(_, e)| e.witness.first)
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut roles: Vec<&str> = Vec::new();
    let mut out = Vec::with_capacity(edges.len());
    for k in 0..edges.len() {
        let e = &edges[(anchor + k) % edges.len()];
        let role = match roles.iter().position(|o| *o == e.object.as_str()) {
            Some(i) => i,
            None => {
                roles.push(e.object.as_str());
                roles.len() - 1
            }
        };
        out.push((e.kind, role as u8));
    }
    out
}

fn has_kind(c: &PopCycle, k: PopType) -> bool {
    c.edges().iter().any(|e| e.kind == k)
}

/// Catalog cases matched by one cycle. Two-transaction cycles match by
/// exact combination; larger cycles fall through to the Step patterns.
pub fn matches_for_cycle(c: &PopCycle) -> Vec<u8> {
    let mut out = Vec::new();
    if c.n_t() == 2 {
        let sig = cycle_signature(c);
        for case in catalog() {
            if case.granularity == GranularityClass::Mda {
                continue;
            }
            if case.pop_combo == sig || case.alt_combo.as_deref() == Some(sig.as_slice()) {
                out.push(case.id);
            }
        }
        return out;
    }
    if c.n_t() >= 3 && c.n_obj() >= 2 {
        if has_kind(c, PopType::Wr) {
            out.push(14);
        } else if has_kind(c, PopType::Ww) {
            out.push(26);
        } else if has_kind(c, PopType::Rw) {
            out.push(33);
        }
    }
    out
}

/// Scans a schedule for catalog matches: every simple cycle is matched
/// and the hits are reported once per case id, in id order.
pub fn match_anomaly(s: &Schedule) -> Result<Vec<CatalogMatch>, InvalidSchedule> {
    let g = build_graph(s)?;
    let mut out: Vec<CatalogMatch> = Vec::new();
    for cycle in enumerate_cycles(&g, MATCH_CYCLE_CAP).cycles {
        for id in matches_for_cycle(&cycle) {
            if !out.iter().any(|m| m.case_id == id) {
                out.push(CatalogMatch {
                    case_id: id,
                    witness: cycle.clone(),
                });
            }
        }
    }
    out.sort_by_key(|m| m.case_id);
    Ok(out)
}

/// Result of checking one catalog entry against the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseCheck {
    pub id: u8,
    pub passed: bool,
    pub issues: Vec<String>,
}

impl fmt::Display for CaseCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            write!(f, "case {:2}: ok", self.id)
        } else {
            write!(f, "case {:2}: FAIL ({})", self.id, self.issues.join("; "))
        }
    }
}

/// Checks every case of the given catalog: the template must validate, be
/// cyclic, carry exactly the stored combination, and classify to the
/// stored labels.
pub fn verify_cases(cases: &[AnomalyCase]) -> Vec<CaseCheck> {
    cases.iter().map(verify_case).collect()
}

/// Self-test of the shipped catalog transcription.
pub fn verify_catalog() -> Vec<CaseCheck> {
    verify_cases(catalog())
}

pub fn verify_case(case: &AnomalyCase) -> CaseCheck {
    let mut issues = Vec::new();
    check_template(case, &case.template, &case.pop_combo, &mut issues);
    if let (Some(alt), Some(alt_combo)) = (&case.alt_template, &case.alt_combo) {
        check_template(case, alt, alt_combo, &mut issues);
    }
    if case.n_sessions != case.template.txns().len() as u8 {
        issues.push(format!(
            "n_sessions {} != template transactions {}",
            case.n_sessions,
            case.template.txns().len()
        ));
    }
    CaseCheck {
        id: case.id,
        passed: issues.is_empty(),
        issues,
    }
}

fn check_template(
    case: &AnomalyCase,
    template: &Schedule,
    combo: &[(PopType, u8)],
    issues: &mut Vec<String>,
) {
    let violations = template.validate();
    if !violations.is_empty() {
        issues.push(format!("template invalid: {violations:?}"));
        return;
    }
    let pops = extract_pops(template).expect("validated above");
    let g = build_graph(template).expect("validated above");
    let cycle = match find_cycle(&g) {
        Some(c) => c,
        None => {
            issues.push("template graph is acyclic".into());
            return;
        }
    };
    if pops.len() != combo.len() {
        issues.push(format!(
            "template extracts {} POPs, combination lists {}",
            pops.len(),
            combo.len()
        ));
    }
    let sig = cycle_signature(&cycle);
    if sig != combo {
        issues.push(format!(
            "combination mismatch: extracted {}, stored {}",
            combo_string(&sig),
            combo_string(combo)
        ));
    }
    match case.granularity {
        GranularityClass::Mda => {
            let (conflict, granularity) = classify(&cycle);
            if conflict != case.conflict {
                issues.push(format!("conflict class {} != {}", conflict, case.conflict));
            }
            if granularity != GranularityClass::Mda {
                issues.push(format!("granularity {granularity} is not MDA"));
            }
            if cycle.n_t() < 3 || cycle.n_obj() < 2 {
                issues.push("side condition N_T >= 3, N_obj >= 2 violated".into());
            }
        }
        _ => {
            let reduced = reduce_cycle(&cycle, template).expect("template is valid");
            let (conflict, granularity) = classify(&reduced);
            if (conflict, granularity) != (case.conflict, case.granularity) {
                issues.push(format!(
                    "classified {}/{}, stored {}/{}",
                    conflict, granularity, case.conflict, case.granularity
                ));
            }
        }
    }
}
