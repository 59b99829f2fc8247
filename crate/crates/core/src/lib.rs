//! Formal model for black-box transactional consistency checking.
//!
//! The model rests on partial order pairs (POPs): directed dependencies
//! between transactions that extend classical conflicts with commit and
//! abort placement. A schedule is consistent exactly when its POP graph
//! is acyclic; every cycle is a data anomaly, classifiable by conflict
//! content and size, and catalogued as one of 33 executable cases.

pub mod catalog;
pub mod cycle;
pub mod pop;
pub mod schedule;

pub use catalog::{catalog, lookup, match_anomaly, verify_catalog, AnomalyCase, CatalogMatch};
pub use cycle::{
    check_consistency, classify, enumerate_cycles, find_cycle, is_distributed_anomaly,
    reduce_cycle, reduce_single_object, AnomalyReport, ConflictClass, GranularityClass, PopCycle,
    Verdict,
};
pub use pop::{build_graph, classify_pair, extract_pops, Pop, PopGraph, PopType};
pub use schedule::{OpKind, Operation, ParseError, Schedule, TxnId, Version, Violation};
