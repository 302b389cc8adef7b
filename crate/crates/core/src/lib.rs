#![cfg_attr(not(test), no_std)]

//! Reasoning core for existential rules.
//!
//! The crate covers four chase variants (oblivious, semi-oblivious,
//! restricted, equivalent), a compiler from three-counter machines to a
//! fixed family of rule sets whose chase simulates the machine, a terminating
//! Boolean conjunctive query procedure for that family, and analyzers that
//! check the structural shape of chase output.
//!
//! Everything here is `no_std` + `alloc`. Text formats, machine files and the
//! command-line driver live in the companion `exrules` crate.

extern crate alloc;

pub mod analyzer;
pub mod chase;
pub mod compiler;
pub mod entailment;
pub mod homomorphism;
pub mod instance;
pub mod minsky;
pub mod model;

pub use analyzer::{
    chain_decomposition, clique_witness, compare_critical, find_clique, flood_report, verify_arithmetic, Chain,
    ChainDecomposition, StructureReport,
};
pub use chase::{
    datalog_saturate, enumerate_triggers, is_applicable, run_chase, step, BudgetExceeded, Chase, ChaseConfig,
    ChaseOutcome, ChaseStatus, Derivation, DerivationStep, NullFactory, TraceMode, Trigger, TriggerOrder,
    UnknownVariant, Variant,
};
pub use compiler::{
    compile, compile_ratio_table, critical_instance, end_instance, CompileError, CompiledRuleSet, Schema,
};
pub use entailment::{
    chase_to_depth, decide_bcq, decide_bcq_bounded, decide_bcq_class_c, query_depth, witness_holds, Answer,
    EntailmentVerdict,
};
pub use homomorphism::{
    enumerate_homomorphisms, evaluate_bcq, exists_retraction, find_homomorphism, is_isomorphic, Binding,
};
pub use instance::Instance;
pub use minsky::{Configuration, GError, MachineError, Orbit, PrimeBasis, Ratio, RunOutcome, ThreeCM, Transition};
pub use model::{
    active_domain, atoms_by_predicate, validate_rule, Atom, KnowledgeBase, ModelError, NullId, Pred, Rule,
    RuleViolation, Sym, Term, TermKind, Vocabulary,
};
