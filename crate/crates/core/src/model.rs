//! Terms, atoms, rules and knowledge bases.
//!
//! Terms are packed into a single `u32`: the two top bits carry the kind
//! (constant, variable, labelled null) and the rest an index into the
//! [`Vocabulary`] symbol table or the null table of a derivation. Atom
//! equality is therefore a comparison of small integer keys.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use hashbrown::HashMap;
use thiserror::Error;

use crate::instance::Instance;

const KIND_SHIFT: u32 = 30;
const INDEX_MASK: u32 = (1 << KIND_SHIFT) - 1;
const KIND_CONST: u32 = 0;
const KIND_VAR: u32 = 1;
const KIND_NULL: u32 = 2;

/// Interned identifier used by constants and variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(pub(crate) u32);

impl Sym {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Identifier of a labelled null, dense within one derivation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NullId(pub u32);

/// Predicate handle issued by a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pred(pub(crate) u32);

impl Pred {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A constant, a variable or a labelled null.
///
/// Ordering is by packed key: constants sort before variables, variables
/// before nulls, and within a kind by interning order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    Constant(Sym),
    Variable(Sym),
    Null(NullId),
}

impl Term {
    pub const fn constant(sym: Sym) -> Term {
        Term::pack(KIND_CONST, sym.0)
    }

    pub const fn variable(sym: Sym) -> Term {
        Term::pack(KIND_VAR, sym.0)
    }

    pub const fn null(id: NullId) -> Term {
        Term::pack(KIND_NULL, id.0)
    }

    const fn pack(kind: u32, index: u32) -> Term {
        assert!(index <= INDEX_MASK, "term index overflow");
        Term((kind << KIND_SHIFT) | index)
    }

    pub fn kind(self) -> TermKind {
        let index = self.0 & INDEX_MASK;
        match self.0 >> KIND_SHIFT {
            KIND_CONST => TermKind::Constant(Sym(index)),
            KIND_VAR => TermKind::Variable(Sym(index)),
            _ => TermKind::Null(NullId(index)),
        }
    }

    pub fn is_constant(self) -> bool {
        self.0 >> KIND_SHIFT == KIND_CONST
    }

    pub fn is_variable(self) -> bool {
        self.0 >> KIND_SHIFT == KIND_VAR
    }

    pub fn is_null(self) -> bool {
        self.0 >> KIND_SHIFT == KIND_NULL
    }

    /// Variables and nulls can be moved by a homomorphism; constants cannot.
    pub fn is_mappable(self) -> bool {
        !self.is_constant()
    }

    pub(crate) fn raw(self) -> u32 {
        self.0
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            TermKind::Constant(s) => write!(f, "c{}", s.0),
            TermKind::Variable(s) => write!(f, "v{}", s.0),
            TermKind::Null(n) => write!(f, "_n{}", n.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arity: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("predicate `{name}` used with arity {found}, declared with arity {declared}")]
    ArityConflict { name: String, declared: usize, found: usize },
    #[error("atom over `{name}` has {found} arguments, expected {expected}")]
    WrongArgumentCount { name: String, expected: usize, found: usize },
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("instance term {0:?} is a variable")]
    VariableInInstance(Term),
}

/// Predicate registry plus the symbol table for constant and variable names.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    preds: Vec<PredicateDecl>,
    pred_lookup: HashMap<String, Pred>,
    symbols: Vec<String>,
    sym_lookup: HashMap<String, Sym>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares `name` with `arity`, or returns the existing handle when the
    /// arity matches. A second arity for the same name is rejected.
    pub fn declare(&mut self, name: &str, arity: usize) -> Result<Pred, ModelError> {
        if let Some(&p) = self.pred_lookup.get(name) {
            let declared = self.preds[p.index()].arity;
            if declared != arity {
                return Err(ModelError::ArityConflict { name: name.to_string(), declared, found: arity });
            }
            return Ok(p);
        }
        let p = Pred(self.preds.len() as u32);
        self.preds.push(PredicateDecl { name: name.to_string(), arity });
        self.pred_lookup.insert(name.to_string(), p);
        Ok(p)
    }

    pub fn predicate(&self, name: &str) -> Option<Pred> {
        self.pred_lookup.get(name).copied()
    }

    pub fn arity(&self, p: Pred) -> usize {
        self.preds[p.index()].arity
    }

    pub fn pred_name(&self, p: Pred) -> &str {
        &self.preds[p.index()].name
    }

    pub fn predicates(&self) -> impl Iterator<Item = (Pred, &PredicateDecl)> {
        self.preds.iter().enumerate().map(|(i, d)| (Pred(i as u32), d))
    }

    pub fn num_predicates(&self) -> usize {
        self.preds.len()
    }

    pub fn symbol(&mut self, name: &str) -> Sym {
        if let Some(&s) = self.sym_lookup.get(name) {
            return s;
        }
        let s = Sym(self.symbols.len() as u32);
        self.symbols.push(name.to_string());
        self.sym_lookup.insert(name.to_string(), s);
        s
    }

    pub fn lookup_symbol(&self, name: &str) -> Option<Sym> {
        self.sym_lookup.get(name).copied()
    }

    pub fn sym_name(&self, s: Sym) -> &str {
        &self.symbols[s.index()]
    }

    pub fn constant(&mut self, name: &str) -> Term {
        Term::constant(self.symbol(name))
    }

    pub fn variable(&mut self, name: &str) -> Term {
        Term::variable(self.symbol(name))
    }

    /// Builds an atom, checking the argument count against the registry.
    pub fn atom(&self, p: Pred, args: Vec<Term>) -> Result<Atom, ModelError> {
        let decl = &self.preds[p.index()];
        if decl.arity != args.len() {
            return Err(ModelError::WrongArgumentCount {
                name: decl.name.clone(),
                expected: decl.arity,
                found: args.len(),
            });
        }
        Ok(Atom { pred: p, args })
    }

    pub fn display_term(&self, t: Term) -> TermDisplay<'_> {
        TermDisplay { vocab: self, term: t }
    }

    pub fn display_atom<'a>(&'a self, a: &'a Atom) -> AtomDisplay<'a> {
        AtomDisplay { vocab: self, pred: a.pred, args: &a.args }
    }

    pub fn display_row<'a>(&'a self, pred: Pred, args: &'a [Term]) -> AtomDisplay<'a> {
        AtomDisplay { vocab: self, pred, args }
    }
}

pub struct TermDisplay<'a> {
    vocab: &'a Vocabulary,
    term: Term,
}

impl fmt::Display for TermDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.term.kind() {
            TermKind::Constant(s) | TermKind::Variable(s) => f.write_str(self.vocab.sym_name(s)),
            TermKind::Null(n) => write!(f, "_n{}", n.0),
        }
    }
}

pub struct AtomDisplay<'a> {
    vocab: &'a Vocabulary,
    pred: Pred,
    args: &'a [Term],
}

impl fmt::Display for AtomDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.vocab.pred_name(self.pred))?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", self.vocab.display_term(*t))?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: Pred,
    pub args: Vec<Term>,
}

impl Atom {
    /// Builds an atom without consulting a registry.
    pub fn new(pred: Pred, args: Vec<Term>) -> Self {
        Atom { pred, args }
    }

    pub fn terms(&self) -> impl Iterator<Item = Term> + '_ {
        self.args.iter().copied()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleViolation {
    #[error("rule `{0}` has an empty body")]
    EmptyBody(String),
    #[error("rule `{0}` has an empty head")]
    EmptyHead(String),
    #[error("rule `{rule}`: constant in body atom {atom}")]
    ConstantInBody { rule: String, atom: usize },
    #[error("rule `{rule}`: constant in head atom {atom}")]
    ConstantInHead { rule: String, atom: usize },
    #[error("rule `{rule}`: labelled null in rule atom")]
    NullInRule { rule: String },
}

/// An existential rule `body -> exists existentials. head`.
///
/// `frontier` lists the body variables that reach the head, in order of first
/// occurrence in the body; `existentials` the head-only variables, in order of
/// first occurrence in the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub body: Vec<Atom>,
    pub head: Vec<Atom>,
    frontier: Vec<Term>,
    existentials: Vec<Term>,
}

fn ordered_vars(atoms: &[Atom]) -> Vec<Term> {
    let mut out = Vec::new();
    for a in atoms {
        for t in a.terms() {
            if t.is_variable() && !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

impl Rule {
    /// Builds and validates a rule.
    pub fn new(id: impl Into<String>, body: Vec<Atom>, head: Vec<Atom>) -> Result<Self, RuleViolation> {
        let rule = Rule::unchecked(id, body, head);
        validate_rule(&rule)?;
        Ok(rule)
    }

    /// Builds a rule and derives its variable groups without validation.
    pub fn unchecked(id: impl Into<String>, body: Vec<Atom>, head: Vec<Atom>) -> Self {
        let body_vars = ordered_vars(&body);
        let head_vars = ordered_vars(&head);
        let frontier = body_vars.iter().copied().filter(|v| head_vars.contains(v)).collect();
        let existentials = head_vars.iter().copied().filter(|v| !body_vars.contains(v)).collect();
        Rule { id: id.into(), body, head, frontier, existentials }
    }

    pub fn frontier(&self) -> &[Term] {
        &self.frontier
    }

    pub fn existentials(&self) -> &[Term] {
        &self.existentials
    }

    pub fn is_datalog(&self) -> bool {
        self.existentials.is_empty()
    }

    /// Body variables in order of first occurrence.
    pub fn body_variables(&self) -> Vec<Term> {
        ordered_vars(&self.body)
    }
}

/// Checks the rule invariants and reports the first violation.
pub fn validate_rule(rule: &Rule) -> Result<(), RuleViolation> {
    if rule.body.is_empty() {
        return Err(RuleViolation::EmptyBody(rule.id.clone()));
    }
    if rule.head.is_empty() {
        return Err(RuleViolation::EmptyHead(rule.id.clone()));
    }
    for (i, a) in rule.body.iter().enumerate() {
        if a.terms().any(Term::is_null) {
            return Err(RuleViolation::NullInRule { rule: rule.id.clone() });
        }
        if a.terms().any(Term::is_constant) {
            return Err(RuleViolation::ConstantInBody { rule: rule.id.clone(), atom: i });
        }
    }
    for (i, a) in rule.head.iter().enumerate() {
        if a.terms().any(Term::is_null) {
            return Err(RuleViolation::NullInRule { rule: rule.id.clone() });
        }
        if a.terms().any(Term::is_constant) {
            return Err(RuleViolation::ConstantInHead { rule: rule.id.clone(), atom: i });
        }
    }
    Ok(())
}

/// A rule set together with an instance over a shared vocabulary.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    pub vocab: Vocabulary,
    pub rules: Vec<Rule>,
    pub instance: Instance,
}

impl KnowledgeBase {
    pub fn new(vocab: Vocabulary, rules: Vec<Rule>, instance: Instance) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.id.as_str()) {
                return Err(ModelError::DuplicateRuleId(r.id.clone()));
            }
        }
        Ok(KnowledgeBase { vocab, rules, instance })
    }
}

/// Terms occurring in `instance`, in term-key order.
pub fn active_domain(instance: &Instance) -> Vec<Term> {
    instance.active_domain()
}

/// All `pred`-atoms of `instance`; empty when the predicate is absent.
pub fn atoms_by_predicate(instance: &Instance, pred: Pred) -> Vec<Atom> {
    instance.rows(pred).map(|args| Atom::new(pred, args.to_vec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn prelim(v: &mut Vocabulary) -> Rule {
        let p = v.declare("P", 2).unwrap();
        let (x, y, z) = (v.variable("X"), v.variable("Y"), v.variable("Z"));
        Rule::new("r1", vec![Atom::new(p, vec![x, y])], vec![Atom::new(p, vec![y, z]), Atom::new(p, vec![z, z])])
            .unwrap()
    }

    #[test]
    fn term_kinds_are_disjoint() {
        let s = Sym(7);
        let c = Term::constant(s);
        let v = Term::variable(s);
        let n = Term::null(NullId(7));
        assert_ne!(c, v);
        assert_ne!(v, n);
        assert_ne!(c, n);
        assert_eq!(c.kind(), TermKind::Constant(s));
        assert_eq!(v.kind(), TermKind::Variable(s));
        assert_eq!(n.kind(), TermKind::Null(NullId(7)));
        assert!(c < v && v < n);
    }

    #[test]
    fn example_rule_groups() {
        let mut v = Vocabulary::new();
        let r = prelim(&mut v);
        let y = v.variable("Y");
        let z = v.variable("Z");
        assert_eq!(r.frontier(), &[y]);
        assert_eq!(r.existentials(), &[z]);
        assert!(!r.is_datalog());
    }

    #[test]
    fn constant_in_body_is_rejected() {
        let mut v = Vocabulary::new();
        let p = v.declare("P", 2).unwrap();
        let q = v.declare("Q", 1).unwrap();
        let a = v.constant("a");
        let y = v.variable("Y");
        let err = Rule::new("bad", vec![Atom::new(p, vec![a, y])], vec![Atom::new(q, vec![y])]).unwrap_err();
        assert!(matches!(err, RuleViolation::ConstantInBody { atom: 0, .. }));
    }

    #[test]
    fn empty_head_is_rejected() {
        let mut v = Vocabulary::new();
        let p = v.declare("P", 1).unwrap();
        let x = v.variable("X");
        let err = Rule::new("bad", vec![Atom::new(p, vec![x])], vec![]).unwrap_err();
        assert_eq!(err, RuleViolation::EmptyHead("bad".into()));
        let err = Rule::new("bad", vec![], vec![Atom::new(p, vec![x])]).unwrap_err();
        assert_eq!(err, RuleViolation::EmptyBody("bad".into()));
    }

    #[test]
    fn arity_conflicts_are_rejected() {
        let mut v = Vocabulary::new();
        v.declare("P", 2).unwrap();
        assert!(v.declare("P", 2).is_ok());
        assert!(matches!(v.declare("P", 3), Err(ModelError::ArityConflict { declared: 2, found: 3, .. })));
    }

    #[test]
    fn duplicate_rule_ids_are_rejected() {
        let mut v = Vocabulary::new();
        let r = prelim(&mut v);
        let err = KnowledgeBase::new(v, vec![r.clone(), r], Instance::new()).unwrap_err();
        assert_eq!(err, ModelError::DuplicateRuleId("r1".into()));
    }

    #[test]
    fn active_domain_examples() {
        let mut v = Vocabulary::new();
        let p = v.declare("P", 2).unwrap();
        let q = v.declare("Q", 2).unwrap();
        let (a, b, c) = (v.constant("a"), v.constant("b"), v.constant("c"));
        let mut i = Instance::new();
        assert!(active_domain(&i).is_empty());
        i.insert(p, &[a, a]);
        assert_eq!(active_domain(&i), vec![a]);
        let mut j = Instance::new();
        j.insert(p, &[a, b]);
        j.insert(q, &[b, c]);
        assert_eq!(active_domain(&j), vec![a, b, c]);
        assert_eq!(atoms_by_predicate(&j, p), vec![Atom::new(p, vec![a, b])]);
        let end = v.declare("End", 1).unwrap();
        let s = v.declare("S", 2).unwrap();
        let w = v.constant("w");
        let mut k = Instance::new();
        k.insert(end, &[w]);
        assert!(atoms_by_predicate(&k, s).is_empty());
    }
}
