//! Boolean conjunctive query entailment.
//!
//! For compiled rule sets the semi-oblivious chase up to depth `2|q| + 1`
//! decides entailment. For anything else the chase only semi-decides it, so
//! [`decide_bcq_bounded`] may answer [`Answer::BoundReached`].

use core::fmt;

use crate::chase::{Chase, ChaseConfig, TraceMode, Variant};
use crate::compiler::CompiledRuleSet;
use crate::homomorphism::{find_homomorphism, Binding};
use crate::instance::Instance;
use crate::model::{Atom, KnowledgeBase, Rule, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Entailed,
    NotEntailed,
    BoundReached,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Entailed => "entailed",
            Answer::NotEntailed => "not_entailed",
            Answer::BoundReached => "bound_reached",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntailmentVerdict {
    pub answer: Answer,
    /// Number of non-Datalog rounds the chase ran.
    pub depth_used: usize,
    /// A homomorphism from the query into the chased instance.
    pub witness: Option<Binding>,
    /// Set when a class-C decision was requested for rules that are not a
    /// compiled rule set, so only bounded semantics apply.
    pub downgraded: bool,
}

/// Datalog saturation followed by at most `n` rounds.
pub fn chase_to_depth(instance: &Instance, rules: &[Rule], variant: Variant, n: usize) -> Instance {
    let mut config = ChaseConfig::new(variant, n);
    config.trace = TraceMode::Off;
    let mut chase = Chase::new(rules, instance.clone(), config);
    chase.drive();
    chase.instance().clone()
}

/// The depth `2|q| + 1`, with `|q|` the number of atoms.
pub fn query_depth(query: &[Atom]) -> usize {
    2 * query.len() + 1
}

/// Decides `(instance, rs) |= query` by chasing to depth `2|q| + 1`.
pub fn decide_bcq_class_c(instance: &Instance, rs: &CompiledRuleSet, query: &[Atom]) -> EntailmentVerdict {
    let depth = query_depth(query);
    let chased = chase_to_depth(instance, &rs.rules, Variant::SemiOblivious, depth);
    let witness = find_homomorphism(query, &chased, &Binding::new());
    let answer = if witness.is_some() { Answer::Entailed } else { Answer::NotEntailed };
    EntailmentVerdict { answer, depth_used: depth, witness, downgraded: false }
}

/// Sound semi-decision: the query is checked after every round.
///
/// `not_entailed` is only reported when the chase terminated.
pub fn decide_bcq_bounded(
    kb: &KnowledgeBase,
    query: &[Atom],
    variant: Variant,
    max_rounds: usize,
) -> EntailmentVerdict {
    bounded(&kb.rules, &kb.instance, query, variant, max_rounds)
}

fn bounded(
    rules: &[Rule],
    instance: &Instance,
    query: &[Atom],
    variant: Variant,
    max_rounds: usize,
) -> EntailmentVerdict {
    let mut config = ChaseConfig::new(variant, max_rounds);
    config.trace = TraceMode::Off;
    let mut chase = Chase::new(rules, instance.clone(), config);
    let verdict = |answer, depth_used, witness| EntailmentVerdict { answer, depth_used, witness, downgraded: false };
    chase.saturate().expect("no atom budget is set");
    loop {
        if let Some(w) = find_homomorphism(query, chase.instance(), &Binding::new()) {
            return verdict(Answer::Entailed, chase.rounds(), Some(w));
        }
        if chase.rounds() >= max_rounds {
            let answer = if chase.any_applicable() { Answer::BoundReached } else { Answer::NotEntailed };
            return verdict(answer, chase.rounds(), None);
        }
        if chase.round().expect("no atom budget is set") == 0 {
            return verdict(Answer::NotEntailed, chase.rounds(), None);
        }
    }
}

/// Class-C decision when `rules` are recognized as a compiled rule set,
/// bounded semantics with `downgraded` set otherwise.
///
/// `vocab` must be the vocabulary `instance` and `query` are written over.
pub fn decide_bcq(
    vocab: &Vocabulary,
    rules: &[Rule],
    instance: &Instance,
    query: &[Atom],
    fallback: Variant,
    max_rounds: usize,
) -> EntailmentVerdict {
    match CompiledRuleSet::recognize(vocab, rules) {
        Some(rs) => decide_bcq_class_c(instance, &rs, query),
        None => EntailmentVerdict { downgraded: true, ..bounded(rules, instance, query, fallback, max_rounds) },
    }
}

/// Witness check used by callers that receive a verdict from elsewhere.
pub fn witness_holds(query: &[Atom], instance: &Instance, witness: &Binding) -> bool {
    query.iter().all(|a| instance.contains_atom(&witness.apply_atom(a)))
}
