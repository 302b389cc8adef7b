//! The chase: trigger enumeration, applicability and round-based saturation.
//!
//! A chase run alternates two phases. Datalog rules are closed to a fixpoint
//! with semi-naive evaluation. Then one round of non-Datalog triggers fires:
//! every trigger found on the instance at the start of the round is queued in
//! a fixed order, re-checked against the growing instance, and fired if it
//! is still applicable. Breadth-first rounds keep the derivation fair.
//!
//! Nulls are keyed. Under the semi-oblivious variant the key is the image of
//! the frontier (Skolem naming), so two triggers that agree on the frontier
//! produce the same output and applicability reduces to a membership test.
//! The other variants key nulls by the whole body image, which gives each
//! trigger its own nulls.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::ops::ControlFlow;
use core::str::FromStr;

use hashbrown::HashMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::homomorphism::{folds_into, projected_solutions, Binding, Matcher, Pattern};
use crate::instance::Instance;
use crate::model::{Atom, NullId, Pred, Rule, Term, TermKind, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Oblivious,
    SemiOblivious,
    Restricted,
    Equivalent,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Oblivious, Variant::SemiOblivious, Variant::Restricted, Variant::Equivalent];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Oblivious => "o",
            Variant::SemiOblivious => "so",
            Variant::Restricted => "r",
            Variant::Equivalent => "e",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Oblivious => "O",
            Variant::SemiOblivious => "SO",
            Variant::Restricted => "R",
            Variant::Equivalent => "E",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown chase variant `{0}` (expected o, so, r or e)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "o" | "oblivious" => Ok(Variant::Oblivious),
            "so" | "semi-oblivious" | "skolem" => Ok(Variant::SemiOblivious),
            "r" | "restricted" => Ok(Variant::Restricted),
            "e" | "equivalent" => Ok(Variant::Equivalent),
            _ => Err(UnknownVariant(s.into())),
        }
    }
}

/// Order in which the triggers of one round are fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerOrder {
    /// Rules in declaration order, bindings in term-key order.
    #[default]
    Canonical,
    /// The canonical queue shuffled with a seeded generator.
    Shuffled(u64),
}

/// Which firings the derivation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    Off,
    /// Only non-Datalog firings.
    #[default]
    ExistentialOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaseConfig {
    pub variant: Variant,
    /// Bound on non-Datalog rounds.
    pub max_rounds: usize,
    pub order: TriggerOrder,
    pub trace: TraceMode,
    /// Give up once the instance holds more atoms than this.
    pub atom_budget: Option<usize>,
}

impl ChaseConfig {
    pub fn new(variant: Variant, max_rounds: usize) -> Self {
        ChaseConfig {
            variant,
            max_rounds,
            order: TriggerOrder::Canonical,
            trace: TraceMode::ExistentialOnly,
            atom_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("atom budget of {budget} exceeded after {rounds} rounds")]
pub struct BudgetExceeded {
    pub budget: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChaseStatus {
    /// A full round fired nothing. `rounds` counts the productive rounds.
    Terminated { rounds: usize },
    /// `max_rounds` productive rounds ran and a trigger is still applicable.
    BoundReached { rounds: usize },
    /// The atom budget ran out.
    BudgetExhausted { rounds: usize },
}

impl ChaseStatus {
    pub fn rounds(self) -> usize {
        match self {
            ChaseStatus::Terminated { rounds }
            | ChaseStatus::BoundReached { rounds }
            | ChaseStatus::BudgetExhausted { rounds } => rounds,
        }
    }

    pub fn is_terminated(self) -> bool {
        matches!(self, ChaseStatus::Terminated { .. })
    }
}

impl fmt::Display for ChaseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChaseStatus::Terminated { rounds } => write!(f, "terminated({rounds})"),
            ChaseStatus::BoundReached { rounds } => write!(f, "bound_reached({rounds})"),
            ChaseStatus::BudgetExhausted { rounds } => write!(f, "budget_exhausted({rounds})"),
        }
    }
}

/// Allocates nulls keyed by rule, existential variable and key terms.
#[derive(Debug, Clone, Default)]
pub struct NullFactory {
    first: u32,
    keyed: HashMap<(u32, u32, Vec<Term>), NullId>,
    origin: Vec<(u32, u32)>,
}

impl NullFactory {
    pub fn new() -> Self {
        Self::default()
    }

    /// A factory whose ids do not clash with nulls already in `instance`.
    pub fn after(instance: &Instance) -> Self {
        let first = instance
            .active_domain()
            .iter()
            .filter_map(|t| match t.kind() {
                TermKind::Null(n) => Some(n.0 + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        NullFactory { first, ..Self::default() }
    }

    pub fn lookup(&self, rule: usize, existential: usize, key: &[Term]) -> Option<NullId> {
        self.keyed.get(&(rule as u32, existential as u32, key.to_vec())).copied()
    }

    pub fn get_or_create(&mut self, rule: usize, existential: usize, key: &[Term]) -> NullId {
        let next = NullId(self.first + self.origin.len() as u32);
        let id = *self.keyed.entry((rule as u32, existential as u32, key.to_vec())).or_insert(next);
        if id == next {
            self.origin.push((rule as u32, existential as u32));
        }
        id
    }

    /// The id the `k`-th next allocation would get.
    fn peek(&self, k: usize) -> NullId {
        NullId(self.first + (self.origin.len() + k) as u32)
    }

    /// Rule index and existential position that created `id`.
    pub fn provenance(&self, id: NullId) -> Option<(usize, usize)> {
        let idx = id.0.checked_sub(self.first)? as usize;
        self.origin.get(idx).map(|&(r, z)| (r as usize, z as usize))
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }
}

/// A rule together with a match of its body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    /// Index of the rule in the rule list it was enumerated from.
    pub rule: usize,
    pub binding: Binding,
    pub supp: Vec<Atom>,
    pub out: Vec<Atom>,
}

/// One recorded firing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationStep {
    pub round: usize,
    pub rule: usize,
    pub binding: Binding,
    pub new_atoms: usize,
    /// Instance size after this firing; the snapshot is that log prefix.
    pub end: usize,
}

/// The history of a chase run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub variant: Variant,
    /// Size of the input instance.
    pub initial: usize,
    pub steps: Vec<DerivationStep>,
    /// Instance size after the Datalog closure of each round; entry 0 is the
    /// closure of the input.
    pub round_ends: Vec<usize>,
}

impl Derivation {
    fn new(variant: Variant, initial: usize) -> Self {
        Derivation { variant, initial, steps: Vec::new(), round_ends: Vec::new() }
    }

    /// The instance after round `n`, cut from the final result.
    pub fn snapshot(&self, result: &Instance, n: usize) -> Option<Instance> {
        self.round_ends.get(n).map(|&end| result.prefix(end))
    }

    /// One line per firing:
    /// `round <n> rule <id> binding <var=term,...> new <k> atoms`.
    pub fn render_trace(&self, vocab: &Vocabulary, rules: &[Rule]) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = write!(out, "round {} rule {} binding ", s.round, rules[s.rule].id);
            for (i, (k, v)) in s.binding.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}={}", vocab.display_term(k), vocab.display_term(v));
            }
            let _ = writeln!(out, " new {} atoms", s.new_atoms);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ChaseOutcome {
    pub status: ChaseStatus,
    pub result: Instance,
    pub derivation: Derivation,
    pub nulls: NullFactory,
}

#[derive(Debug, Clone, Copy)]
enum HeadArg {
    Body(u32),
    Exist(u32),
}

/// A rule prepared for matching.
#[derive(Debug, Clone)]
struct Plan {
    body: Pattern,
    head: Vec<(Pred, Vec<HeadArg>)>,
    frontier: Vec<u32>,
    existentials: usize,
    /// Body slots that occur in the head.
    in_head: Vec<bool>,
}

impl Plan {
    fn new(rule: &Rule) -> Plan {
        let body = Pattern::from_atoms(&rule.body);
        let ex = rule.existentials();
        let head: Vec<(Pred, Vec<HeadArg>)> = rule
            .head
            .iter()
            .map(|a| {
                let args =
                    a.args
                        .iter()
                        .map(|&t| match body.slot(t) {
                            Some(s) => HeadArg::Body(s),
                            None => HeadArg::Exist(
                                ex.iter().position(|&z| z == t).expect("head variable is existential") as u32,
                            ),
                        })
                        .collect();
                (a.pred, args)
            })
            .collect();
        let frontier = rule.frontier().iter().map(|&t| body.slot(t).unwrap()).collect();
        let mut in_head = vec![false; body.num_vars()];
        for (_, args) in head.iter() {
            for a in args {
                if let HeadArg::Body(s) = *a {
                    in_head[s as usize] = true;
                }
            }
        }
        Plan { body, head, frontier, existentials: ex.len(), in_head }
    }

    fn null_key(&self, variant: Variant, sol: &[Term]) -> Vec<Term> {
        match variant {
            Variant::SemiOblivious => self.frontier.iter().map(|&s| sol[s as usize]).collect(),
            _ => sol.to_vec(),
        }
    }

    fn out(&self, sol: &[Term], nulls: &[Term]) -> Vec<Atom> {
        self.head
            .iter()
            .map(|(p, args)| {
                Atom::new(
                    *p,
                    args.iter()
                        .map(|a| match *a {
                            HeadArg::Body(s) => sol[s as usize],
                            HeadArg::Exist(z) => nulls[z as usize],
                        })
                        .collect(),
                )
            })
            .collect()
    }

    fn binding(&self, sol: &[Term]) -> Binding {
        self.body.vars.iter().copied().zip(sol.iter().copied()).collect()
    }

    /// All body matches, restricted per atom when `ranges` is given.
    fn matches(&self, inst: &Instance, ranges: Option<&[(u32, u32)]>) -> Vec<Vec<Term>> {
        let mut found = Vec::new();
        let mut m = Matcher::new(&self.body, inst);
        if let Some(r) = ranges {
            m = m.with_ranges(r);
        }
        let _ = m.run(&mut |s: &[Option<Term>]| {
            found.push(s.iter().map(|t| t.unwrap()).collect());
            ControlFlow::Continue(())
        });
        found
    }

    /// Matches worth firing. A Datalog firing is determined by its head
    /// image, so one match per image is enough.
    fn firing_matches(&self, inst: &Instance, ranges: Option<&[(u32, u32)]>) -> Vec<Vec<Term>> {
        if self.existentials == 0 {
            projected_solutions(&self.body, inst, ranges, &self.in_head)
        } else {
            self.matches(inst, ranges)
        }
    }

    /// Matches that use at least one atom at or past `old`, each found once.
    fn delta_matches(&self, inst: &Instance, old: &[u32], cur: &[u32]) -> Vec<Vec<Term>> {
        let mark = |v: &[u32], p: Pred| v.get(p.index()).copied().unwrap_or(0);
        let atoms = &self.body.atoms;
        let mut found = Vec::new();
        for j in 0..atoms.len() {
            let pj = atoms[j].pred;
            if mark(cur, pj) <= mark(old, pj) {
                continue;
            }
            let ranges: Vec<(u32, u32)> = atoms
                .iter()
                .enumerate()
                .map(|(k, a)| match k.cmp(&j) {
                    core::cmp::Ordering::Less => (0, mark(old, a.pred)),
                    core::cmp::Ordering::Equal => (mark(old, a.pred), mark(cur, a.pred)),
                    core::cmp::Ordering::Greater => (0, mark(cur, a.pred)),
                })
                .collect();
            found.extend(self.firing_matches(inst, Some(&ranges)));
        }
        found
    }
}

/// Checks one trigger of `plan` against `inst`.
fn applicable(plan: &Plan, rule: usize, sol: &[Term], inst: &Instance, nulls: &NullFactory, variant: Variant) -> bool {
    let key = plan.null_key(variant, sol);
    let mut fresh = 0;
    let images: Vec<Term> = (0..plan.existentials)
        .map(|z| match nulls.lookup(rule, z, &key) {
            Some(id) => Term::null(id),
            None => {
                fresh += 1;
                Term::null(nulls.peek(fresh - 1))
            }
        })
        .collect();
    let out = plan.out(sol, &images);
    if out.iter().all(|a| inst.contains_atom(a)) {
        return false;
    }
    match variant {
        Variant::Oblivious | Variant::SemiOblivious => true,
        Variant::Restricted => !retracts(&out, inst),
        Variant::Equivalent => !retracts(&out, inst) && !folds_into(&out, inst),
    }
}

/// Whether `out` maps into `inst` moving only terms outside `adom(inst)`.
fn retracts(out: &[Atom], inst: &Instance) -> bool {
    let pat =
        Pattern::new(out.iter().map(|a| (a.pred, a.args.as_slice())), |t| t.is_mappable() && !inst.contains_term(t));
    Matcher::new(&pat, inst).first().is_some()
}

/// A chase run in progress.
pub struct Chase<'r> {
    rules: &'r [Rule],
    plans: Vec<Plan>,
    datalog: Vec<usize>,
    existential: Vec<usize>,
    config: ChaseConfig,
    inst: Instance,
    nulls: NullFactory,
    dl_mark: Vec<u32>,
    nd_mark: Vec<u32>,
    rounds: usize,
    saturated: bool,
    derivation: Derivation,
}

impl<'r> Chase<'r> {
    pub fn new(rules: &'r [Rule], instance: Instance, config: ChaseConfig) -> Self {
        let nulls = NullFactory::after(&instance);
        Self::with_nulls(rules, instance, config, nulls)
    }

    pub fn with_nulls(rules: &'r [Rule], instance: Instance, config: ChaseConfig, nulls: NullFactory) -> Self {
        let plans: Vec<Plan> = rules.iter().map(Plan::new).collect();
        let (datalog, existential) = (0..rules.len()).partition(|&i| rules[i].is_datalog());
        let derivation = Derivation::new(config.variant, instance.len());
        Chase {
            rules,
            plans,
            datalog,
            existential,
            config,
            inst: instance,
            nulls,
            dl_mark: Vec::new(),
            nd_mark: Vec::new(),
            rounds: 0,
            saturated: false,
            derivation,
        }
    }

    pub fn instance(&self) -> &Instance {
        &self.inst
    }

    pub fn rules(&self) -> &'r [Rule] {
        self.rules
    }

    pub fn nulls(&self) -> &NullFactory {
        &self.nulls
    }

    pub fn derivation(&self) -> &Derivation {
        &self.derivation
    }

    /// Productive non-Datalog rounds so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    fn over_budget(&self) -> Result<(), BudgetExceeded> {
        match self.config.atom_budget {
            Some(budget) if self.inst.len() > budget => Err(BudgetExceeded { budget, rounds: self.rounds }),
            _ => Ok(()),
        }
    }

    fn record(&mut self, rule: usize, sol: &[Term], new_atoms: usize) {
        let wanted = match self.config.trace {
            TraceMode::Off => false,
            TraceMode::ExistentialOnly => !self.rules[rule].is_datalog(),
            TraceMode::Full => true,
        };
        if wanted {
            self.derivation.steps.push(DerivationStep {
                round: self.rounds,
                rule,
                binding: self.plans[rule].binding(sol),
                new_atoms,
                end: self.inst.len(),
            });
        }
    }

    fn insert_all(&mut self, out: &[Atom]) -> usize {
        out.iter().filter(|a| self.inst.insert_atom(a)).count()
    }

    /// Closes the instance under the Datalog rules.
    pub fn saturate(&mut self) -> Result<(), BudgetExceeded> {
        loop {
            let cur = self.inst.watermark();
            let mut derived: Vec<(usize, Vec<Term>)> = Vec::new();
            for &r in &self.datalog {
                for sol in self.plans[r].delta_matches(&self.inst, &self.dl_mark, &cur) {
                    derived.push((r, sol));
                }
            }
            self.dl_mark = cur;
            if derived.is_empty() {
                break;
            }
            for (r, sol) in derived {
                let out = self.plans[r].out(&sol, &[]);
                let new = self.insert_all(&out);
                if new > 0 {
                    self.record(r, &sol, new);
                }
            }
            self.over_budget()?;
        }
        if !self.saturated {
            self.saturated = true;
            self.derivation.round_ends.push(self.inst.len());
        } else if let Some(last) = self.derivation.round_ends.last_mut() {
            *last = self.inst.len();
        }
        Ok(())
    }

    fn ensure_saturated(&mut self) -> Result<(), BudgetExceeded> {
        if self.saturated {
            Ok(())
        } else {
            self.saturate()
        }
    }

    /// Triggers of rule `r` worth examining this round, in firing order.
    fn candidates(&self, r: usize, cur: &[u32]) -> Vec<Vec<Term>> {
        let mut sols = if self.config.variant == Variant::Equivalent {
            // Equivalent-applicability is not monotone, so every match is
            // re-examined each round.
            self.plans[r].matches(&self.inst, None)
        } else {
            self.plans[r].delta_matches(&self.inst, &self.nd_mark, cur)
        };
        sols.sort_unstable();
        sols.dedup();
        sols
    }

    /// One round of non-Datalog triggers followed by the Datalog closure.
    /// Returns the number of triggers fired.
    pub fn round(&mut self) -> Result<usize, BudgetExceeded> {
        self.ensure_saturated()?;
        let cur = self.inst.watermark();
        let mut queue: Vec<(usize, Vec<Term>)> = Vec::new();
        for &r in &self.existential {
            queue.extend(self.candidates(r, &cur).into_iter().map(|s| (r, s)));
        }
        self.nd_mark = cur;
        if let TriggerOrder::Shuffled(seed) = self.config.order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.rounds as u64).rotate_left(32));
            queue.shuffle(&mut rng);
        }
        let variant = self.config.variant;
        let mut fired = 0;
        for (r, sol) in queue {
            let plan = &self.plans[r];
            if !applicable(plan, r, &sol, &self.inst, &self.nulls, variant) {
                continue;
            }
            let key = plan.null_key(variant, &sol);
            let images: Vec<Term> =
                (0..plan.existentials).map(|z| Term::null(self.nulls.get_or_create(r, z, &key))).collect();
            let out = plan.out(&sol, &images);
            if fired == 0 {
                self.rounds += 1;
            }
            fired += 1;
            let new = self.insert_all(&out);
            self.record(r, &sol, new);
            self.over_budget()?;
        }
        if fired > 0 {
            self.saturated = false;
            self.saturate()?;
        }
        Ok(fired)
    }

    /// Whether any trigger of rule `r` is `variant`-applicable right now.
    pub fn rule_applicable(&self, r: usize, variant: Variant) -> bool {
        self.plans[r]
            .firing_matches(&self.inst, None)
            .iter()
            .any(|sol| applicable(&self.plans[r], r, sol, &self.inst, &self.nulls, variant))
    }

    /// Whether any non-Datalog trigger is applicable under the run's variant.
    pub fn any_applicable(&self) -> bool {
        self.existential.iter().any(|&r| self.rule_applicable(r, self.config.variant))
    }

    /// Runs rounds until a fixpoint, the round bound or the atom budget.
    pub fn drive(&mut self) -> ChaseStatus {
        let budget = |e: BudgetExceeded| ChaseStatus::BudgetExhausted { rounds: e.rounds };
        if let Err(e) = self.ensure_saturated() {
            return budget(e);
        }
        loop {
            if self.rounds >= self.config.max_rounds {
                return if self.any_applicable() {
                    ChaseStatus::BoundReached { rounds: self.rounds }
                } else {
                    ChaseStatus::Terminated { rounds: self.rounds }
                };
            }
            match self.round() {
                Err(e) => return budget(e),
                Ok(0) => return ChaseStatus::Terminated { rounds: self.rounds },
                Ok(_) => {}
            }
        }
    }

    pub fn run(mut self) -> ChaseOutcome {
        let status = self.drive();
        self.finish(status)
    }

    pub fn finish(self, status: ChaseStatus) -> ChaseOutcome {
        ChaseOutcome { status, result: self.inst, derivation: self.derivation, nulls: self.nulls }
    }
}

/// Every trigger of `rules[index]` on `instance`, in term-key order of the
/// body image. Nulls in `out` are named as `variant` names them.
pub fn enumerate_triggers(
    rules: &[Rule],
    index: usize,
    instance: &Instance,
    nulls: &mut NullFactory,
    variant: Variant,
) -> Vec<Trigger> {
    let plan = Plan::new(&rules[index]);
    let mut sols = plan.matches(instance, None);
    sols.sort_unstable();
    sols.into_iter()
        .map(|sol| {
            let key = plan.null_key(variant, &sol);
            let images: Vec<Term> =
                (0..plan.existentials).map(|z| Term::null(nulls.get_or_create(index, z, &key))).collect();
            let binding = plan.binding(&sol);
            Trigger { rule: index, supp: binding.apply(&rules[index].body), out: plan.out(&sol, &images), binding }
        })
        .collect()
}

/// Applicability of `trigger` on `instance`.
///
/// For the semi-oblivious variant the trigger must carry Skolem-named nulls,
/// as produced by [`enumerate_triggers`] with that variant.
pub fn is_applicable(trigger: &Trigger, instance: &Instance, variant: Variant) -> bool {
    if trigger.out.iter().all(|a| instance.contains_atom(a)) {
        return false;
    }
    match variant {
        Variant::Oblivious | Variant::SemiOblivious => true,
        Variant::Restricted => !retracts(&trigger.out, instance),
        Variant::Equivalent => !retracts(&trigger.out, instance) && !folds_into(&trigger.out, instance),
    }
}

/// Least Datalog fixpoint of `instance` under `rules`.
///
/// # Panics
///
/// When a rule has existential variables.
pub fn datalog_saturate(instance: &Instance, rules: &[Rule]) -> Instance {
    assert!(rules.iter().all(Rule::is_datalog), "datalog_saturate called with an existential rule");
    let mut config = ChaseConfig::new(Variant::Oblivious, 0);
    config.trace = TraceMode::Off;
    let mut chase = Chase::new(rules, instance.clone(), config);
    chase.saturate().expect("no budget set");
    chase.inst
}

/// One round of `variant`-applicable non-Datalog triggers on `instance`,
/// then the Datalog closure. Null names continue after those in `instance`;
/// earlier firings are not known, so this is only meaningful for the
/// oblivious variants when `instance` holds no rule-created nulls.
pub fn step(instance: &Instance, rules: &[Rule], variant: Variant) -> Instance {
    let mut config = ChaseConfig::new(variant, 1);
    config.trace = TraceMode::Off;
    let mut chase = Chase::new(rules, instance.clone(), config);
    chase.round().expect("no budget set");
    chase.inst
}

/// Runs the chase of `rules` on `instance` for at most `max_rounds` rounds.
pub fn run_chase(rules: &[Rule], instance: &Instance, variant: Variant, max_rounds: usize) -> ChaseOutcome {
    Chase::new(rules, instance.clone(), ChaseConfig::new(variant, max_rounds)).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homomorphism::{enumerate_homomorphisms, evaluate_bcq};
    use alloc::format;
    use proptest::prelude::*;

    struct Example {
        vocab: Vocabulary,
        p: Pred,
        a: Term,
        rules: Vec<Rule>,
        inst: Instance,
    }

    fn example() -> Example {
        let mut vocab = Vocabulary::new();
        let p = vocab.declare("P", 2).unwrap();
        let a = vocab.constant("a");
        let (x, y, z) = (vocab.variable("X"), vocab.variable("Y"), vocab.variable("Z"));
        let rule =
            Rule::new("r", vec![Atom::new(p, vec![x, y])], vec![Atom::new(p, vec![y, z]), Atom::new(p, vec![z, z])])
                .unwrap();
        let inst = Instance::from_atoms(&[Atom::new(p, vec![a, a])]);
        Example { vocab, p, a, rules: vec![rule], inst }
    }

    #[test]
    fn example_trigger_and_matrix() {
        let ex = example();
        let mut nulls = NullFactory::new();
        let ts = enumerate_triggers(&ex.rules, 0, &ex.inst, &mut nulls, Variant::Oblivious);
        assert_eq!(ts.len(), 1);
        let z = Term::null(NullId(0));
        assert_eq!(ts[0].out, vec![Atom::new(ex.p, vec![ex.a, z]), Atom::new(ex.p, vec![z, z])]);
        let matrix: Vec<bool> = Variant::ALL.iter().map(|&v| is_applicable(&ts[0], &ex.inst, v)).collect();
        assert_eq!(matrix, [true, true, false, false]);
        assert_eq!(nulls.provenance(NullId(0)), Some((0, 0)));
    }

    #[test]
    fn example_runs() {
        let ex = example();
        for v in [Variant::Restricted, Variant::Equivalent] {
            let out = run_chase(&ex.rules, &ex.inst, v, 10);
            assert_eq!(out.status, ChaseStatus::Terminated { rounds: 0 });
            assert_eq!(out.result, ex.inst);
        }
        for v in [Variant::Oblivious, Variant::SemiOblivious] {
            let out = run_chase(&ex.rules, &ex.inst, v, 3);
            assert_eq!(out.status, ChaseStatus::BoundReached { rounds: 3 });
            let sizes: Vec<usize> = out.derivation.round_ends.clone();
            assert!(sizes.windows(2).all(|w| w[0] < w[1]), "{sizes:?}");
            assert_eq!(sizes.len(), 4);
        }
    }

    #[test]
    fn trace_lines() {
        let ex = example();
        let out = run_chase(&ex.rules, &ex.inst, Variant::Oblivious, 1);
        let text = out.derivation.render_trace(&ex.vocab, &ex.rules);
        assert_eq!(text, "round 1 rule r binding X=a,Y=a new 2 atoms\n");
    }

    #[test]
    fn empty_and_datalog() {
        let mut v = Vocabulary::new();
        let p = v.declare("P", 1).unwrap();
        let q = v.declare("Q", 1).unwrap();
        let x = v.variable("X");
        let r = Rule::new("pq", vec![Atom::new(p, vec![x])], vec![Atom::new(q, vec![x])]).unwrap();
        let mut nulls = NullFactory::new();
        assert!(enumerate_triggers(std::slice::from_ref(&r), 0, &Instance::new(), &mut nulls, Variant::Oblivious)
            .is_empty());
        assert!(datalog_saturate(&Instance::new(), &[r]).is_empty());

        let e = v.declare("E", 2).unwrap();
        let (a, b, y) = (v.constant("a"), v.constant("b"), v.variable("Y"));
        let sym = Rule::new("sym", vec![Atom::new(e, vec![x, y])], vec![Atom::new(e, vec![y, x])]).unwrap();
        let got = datalog_saturate(&Instance::from_atoms(&[Atom::new(e, vec![a, b])]), &[sym]);
        assert_eq!(got, Instance::from_atoms(&[Atom::new(e, vec![a, b]), Atom::new(e, vec![b, a])]));
    }

    #[test]
    fn transitive_closure_matches_naive() {
        let mut v = Vocabulary::new();
        let e = v.declare("E", 2).unwrap();
        let (x, y, z) = (v.variable("X"), v.variable("Y"), v.variable("Z"));
        let tc =
            Rule::new("tc", vec![Atom::new(e, vec![x, y]), Atom::new(e, vec![y, z])], vec![Atom::new(e, vec![x, z])])
                .unwrap();
        let nodes: Vec<Term> = (0..12).map(|i| v.constant(&format!("n{i}"))).collect();
        let chain: Vec<Atom> = nodes.windows(2).map(|w| Atom::new(e, vec![w[0], w[1]])).collect();
        let got = datalog_saturate(&Instance::from_atoms(&chain), &[tc]);
        assert_eq!(got.len(), 12 * 11 / 2);
    }

    #[test]
    #[should_panic(expected = "existential rule")]
    fn datalog_saturate_rejects_existentials() {
        let ex = example();
        datalog_saturate(&ex.inst, &ex.rules);
    }

    #[test]
    fn step_is_identity_at_fixpoint() {
        let ex = example();
        assert_eq!(step(&ex.inst, &ex.rules, Variant::Restricted), ex.inst);
        let grown = step(&ex.inst, &ex.rules, Variant::Oblivious);
        assert_eq!(grown.len(), 3);
    }

    #[test]
    fn skolem_nulls_are_shared() {
        // Two body matches with the same frontier image share their null.
        let mut v = Vocabulary::new();
        let e = v.declare("E", 2).unwrap();
        let f = v.declare("F", 2).unwrap();
        let (x, y, z) = (v.variable("X"), v.variable("Y"), v.variable("Z"));
        let (a, b, c) = (v.constant("a"), v.constant("b"), v.constant("c"));
        let r = Rule::new("r", vec![Atom::new(e, vec![x, y])], vec![Atom::new(f, vec![y, z])]).unwrap();
        let inst = Instance::from_atoms(&[Atom::new(e, vec![a, c]), Atom::new(e, vec![b, c])]);
        let mut nulls = NullFactory::new();
        let ts = enumerate_triggers(std::slice::from_ref(&r), 0, &inst, &mut nulls, Variant::SemiOblivious);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].out, ts[1].out);
        let so = run_chase(std::slice::from_ref(&r), &inst, Variant::SemiOblivious, 5);
        assert_eq!(so.result.len(), 3);
        let o = run_chase(&[r], &inst, Variant::Oblivious, 5);
        assert_eq!(o.result.len(), 4);
        assert_eq!(o.status, ChaseStatus::Terminated { rounds: 1 });
    }

    #[test]
    fn equivalent_folds_whole_instance() {
        // R(a, n) with n a null already present; the trigger adds R(a, m) for a
        // fresh m, which retracts onto R(a, n).
        let mut v = Vocabulary::new();
        let p = v.declare("P", 1).unwrap();
        let r = v.declare("R", 2).unwrap();
        let (x, z) = (v.variable("X"), v.variable("Z"));
        let a = v.constant("a");
        let rule = Rule::new("r", vec![Atom::new(p, vec![x])], vec![Atom::new(r, vec![x, z])]).unwrap();
        let n = Term::null(NullId(0));
        let inst = Instance::from_atoms(&[Atom::new(p, vec![a]), Atom::new(r, vec![a, n])]);
        let mut nulls = NullFactory::after(&inst);
        let t = &enumerate_triggers(&[rule], 0, &inst, &mut nulls, Variant::Oblivious)[0];
        assert_eq!(t.out[0].args[1], Term::null(NullId(1)));
        assert!(is_applicable(t, &inst, Variant::Oblivious));
        assert!(!is_applicable(t, &inst, Variant::Restricted));
        assert!(!is_applicable(t, &inst, Variant::Equivalent));
    }

    #[test]
    fn equivalent_stricter_than_restricted() {
        // The frontier maps to a null n. A retraction must fix n and finds no
        // R(n, _); a homomorphism of the whole instance may send n to a.
        let mut v = Vocabulary::new();
        let p = v.declare("P", 1).unwrap();
        let r = v.declare("R", 2).unwrap();
        let (x, z) = (v.variable("X"), v.variable("Z"));
        let (a, b) = (v.constant("a"), v.constant("b"));
        let rule = Rule::new("r", vec![Atom::new(p, vec![x])], vec![Atom::new(r, vec![x, z])]).unwrap();
        let n = Term::null(NullId(0));
        let inst = Instance::from_atoms(&[Atom::new(p, vec![n]), Atom::new(p, vec![a]), Atom::new(r, vec![a, b])]);
        let mut nulls = NullFactory::after(&inst);
        let ts = enumerate_triggers(&[rule], 0, &inst, &mut nulls, Variant::Oblivious);
        let t = ts.iter().find(|t| t.binding.get(x) == Some(n)).unwrap();
        assert!(is_applicable(t, &inst, Variant::Restricted));
        assert!(!is_applicable(t, &inst, Variant::Equivalent));
    }

    #[test]
    fn shuffled_order_is_reproducible() {
        let ex = example();
        let mut cfg = ChaseConfig::new(Variant::Oblivious, 3);
        cfg.order = TriggerOrder::Shuffled(7);
        let a = Chase::new(&ex.rules, ex.inst.clone(), cfg.clone()).run();
        let b = Chase::new(&ex.rules, ex.inst.clone(), cfg).run();
        assert_eq!(a.result.sorted_atoms(), b.result.sorted_atoms());
    }

    #[test]
    fn budget_stops_growth() {
        let ex = example();
        let mut cfg = ChaseConfig::new(Variant::Oblivious, 100);
        cfg.atom_budget = Some(10);
        let out = Chase::new(&ex.rules, ex.inst.clone(), cfg).run();
        assert!(matches!(out.status, ChaseStatus::BudgetExhausted { .. }));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("SO".parse::<Variant>().unwrap(), Variant::SemiOblivious);
        assert_eq!("e".parse::<Variant>().unwrap(), Variant::Equivalent);
        assert!("x".parse::<Variant>().is_err());
    }

    type RawAtom = (u8, u8, u8);
    type RawKb = (Vec<(Vec<RawAtom>, Vec<RawAtom>)>, Vec<RawAtom>);

    // Random small rule sets over binary predicates.
    fn arb_kb() -> impl Strategy<Value = RawKb> {
        let atom = (0u8..3, 0u8..4, 0u8..4);
        let rule = (proptest::collection::vec(atom.clone(), 1..3), proptest::collection::vec(atom.clone(), 1..3));
        (proptest::collection::vec(rule, 1..4), proptest::collection::vec((0u8..3, 0u8..3, 0u8..3), 0..5))
    }

    fn build(raw: &RawKb) -> (Vocabulary, Vec<Rule>, Instance) {
        let mut v = Vocabulary::new();
        let preds = [v.declare("A", 2).unwrap(), v.declare("B", 2).unwrap(), v.declare("C", 2).unwrap()];
        let vars: Vec<Term> = (0..4).map(|i| v.variable(&format!("V{i}"))).collect();
        let consts: Vec<Term> = (0..3).map(|i| v.constant(&format!("c{i}"))).collect();
        let mk =
            |&(p, x, y): &(u8, u8, u8), ts: &[Term]| Atom::new(preds[p as usize], vec![ts[x as usize], ts[y as usize]]);
        let rules = raw
            .0
            .iter()
            .enumerate()
            .map(|(i, (b, h))| {
                Rule::new(
                    format!("r{i}"),
                    b.iter().map(|a| mk(a, &vars)).collect(),
                    h.iter().map(|a| mk(a, &vars)).collect(),
                )
                .unwrap()
            })
            .collect();
        let inst = Instance::from_atoms(&raw.1.iter().map(|a| mk(a, &consts)).collect::<Vec<_>>());
        (v, rules, inst)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn derivations_are_monotone_and_grounded(raw in arb_kb(), vi in 0usize..4) {
            let (_, rules, inst) = build(&raw);
            let mut cfg = ChaseConfig::new(Variant::ALL[vi], 4);
            cfg.trace = TraceMode::Full;
            cfg.atom_budget = Some(5_000);
            let out = Chase::new(&rules, inst.clone(), cfg).run();
            prop_assert!(inst.is_subset(&out.result));
            let ends = &out.derivation.round_ends;
            prop_assert!(ends.windows(2).all(|w| w[0] <= w[1]));
            let mut prev = out.derivation.initial;
            for s in &out.derivation.steps {
                prop_assert!(s.new_atoms > 0);
                prop_assert!(s.end > prev || s.new_atoms == 0);
                prev = s.end;
                // The body image was present before the firing.
                let before = out.result.prefix(s.end - s.new_atoms);
                for a in s.binding.apply(&rules[s.rule].body) {
                    prop_assert!(before.contains_atom(&a));
                }
            }
        }

        #[test]
        fn applicability_chain(raw in arb_kb()) {
            let (_, rules, inst) = build(&raw);
            let inst = datalog_saturate(&inst, &rules.iter().filter(|r| r.is_datalog()).cloned().collect::<Vec<_>>());
            for i in 0..rules.len() {
                let mut nulls = NullFactory::after(&inst);
                for t in enumerate_triggers(&rules, i, &inst, &mut nulls, Variant::SemiOblivious) {
                    let m: Vec<bool> = Variant::ALL.iter().map(|&v| is_applicable(&t, &inst, v)).collect();
                    prop_assert!(!m[3] || m[2]);
                    prop_assert!(!m[2] || m[1]);
                    prop_assert!(!m[1] || m[0]);
                }
            }
        }

        #[test]
        fn trigger_per_homomorphism(raw in arb_kb()) {
            let (_, rules, inst) = build(&raw);
            for i in 0..rules.len() {
                let mut nulls = NullFactory::new();
                let ts = enumerate_triggers(&rules, i, &inst, &mut nulls, Variant::Oblivious);
                let hs = enumerate_homomorphisms(&rules[i].body, &inst, 100_000);
                prop_assert_eq!(ts.len(), hs.len());
                for t in &ts {
                    prop_assert!(hs.contains(&t.binding));
                }
            }
        }

        #[test]
        fn terminating_variants_agree(raw in arb_kb(), q in proptest::collection::vec((0u8..3, 0u8..4, 0u8..4), 1..3)) {
            let (mut v, rules, inst) = build(&raw);
            let o = run_chase(&rules, &inst, Variant::Oblivious, 4);
            prop_assume!(o.status.is_terminated());
            let preds = [v.predicate("A").unwrap(), v.predicate("B").unwrap(), v.predicate("C").unwrap()];
            let vars: Vec<Term> = (0..4).map(|i| v.variable(&format!("Q{i}"))).collect();
            let query: Vec<Atom> = q.iter().map(|&(p, x, y)| Atom::new(preds[p as usize], vec![vars[x as usize], vars[y as usize]])).collect();
            let expected = evaluate_bcq(&query, &o.result);
            for variant in [Variant::SemiOblivious, Variant::Restricted, Variant::Equivalent] {
                let r = run_chase(&rules, &inst, variant, 4);
                prop_assert!(r.status.is_terminated(), "{variant} did not terminate");
                prop_assert_eq!(evaluate_bcq(&query, &r.result), expected);
            }
        }
    }
}
