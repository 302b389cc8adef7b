//! Homomorphism search between atom sets.
//!
//! [`Matcher`] is the workhorse behind trigger enumeration, query evaluation
//! and the applicability tests of the restricted and equivalent chase. It is
//! a backtracking search that binds one variable at a time, always picking
//! the unbound variable with the fewest candidate images under the current
//! partial binding. Candidate counts come from the per-position indexes of
//! [`Instance`], so an atom with no matching row prunes the branch before any
//! value is tried.
//!
//! [`enumerate_homomorphisms`] is deliberately naive: it walks every
//! assignment of source variables to target terms. Tests use it as an
//! oracle for the indexed search.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use hashbrown::{HashMap, HashSet};

use crate::instance::{Instance, Lookup};
use crate::model::{Atom, Pred, Sym, Term};

const MAX_ARITY: usize = 32;
// Pads scratch buffers; never read back.
const PLACEHOLDER: Term = Term::constant(Sym(0));

/// A partial map from variables and nulls to terms.
///
/// Constants are not stored and always map to themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Binding {
    map: BTreeMap<Term, Term>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity on the mappable terms of `terms`.
    pub fn identity_on(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut b = Binding::new();
        for t in terms {
            b.insert(t, t);
        }
        b
    }

    /// Records `from -> to`. Constants are ignored.
    pub fn insert(&mut self, from: Term, to: Term) {
        if from.is_mappable() {
            self.map.insert(from, to);
        }
    }

    pub fn get(&self, t: Term) -> Option<Term> {
        if t.is_constant() {
            Some(t)
        } else {
            self.map.get(&t).copied()
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Term, Term)> + '_ {
        self.map.iter().map(|(&k, &v)| (k, v))
    }

    /// Image of `t`; unmapped terms are left unchanged.
    pub fn image(&self, t: Term) -> Term {
        self.get(t).unwrap_or(t)
    }

    pub fn apply_atom(&self, a: &Atom) -> Atom {
        Atom::new(a.pred, a.args.iter().map(|&t| self.image(t)).collect())
    }

    pub fn apply(&self, atoms: &[Atom]) -> Vec<Atom> {
        atoms.iter().map(|a| self.apply_atom(a)).collect()
    }

    /// `other ∘ self`: first apply `self`, then `other`.
    pub fn then(&self, other: &Binding) -> Binding {
        let mut out = Binding::new();
        for (k, v) in self.iter() {
            out.insert(k, other.image(v));
        }
        out
    }
}

impl FromIterator<(Term, Term)> for Binding {
    fn from_iter<I: IntoIterator<Item = (Term, Term)>>(iter: I) -> Self {
        let mut b = Binding::new();
        for (k, v) in iter {
            b.insert(k, v);
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    Var(u32),
    Fixed(Term),
}

#[derive(Clone, Debug)]
pub(crate) struct PatternAtom {
    pub pred: Pred,
    pub args: Vec<Slot>,
}

/// Source side of a homomorphism problem with variables numbered densely.
#[derive(Clone, Debug)]
pub(crate) struct Pattern {
    pub atoms: Vec<PatternAtom>,
    /// Slot number to source term.
    pub vars: Vec<Term>,
    slots: HashMap<Term, u32>,
    var_atoms: Vec<Vec<u32>>,
}

impl Pattern {
    /// Builds a pattern; terms for which `mappable` holds become variables,
    /// the rest are fixed.
    pub fn new<'a>(atoms: impl IntoIterator<Item = (Pred, &'a [Term])>, mappable: impl Fn(Term) -> bool) -> Pattern {
        let mut pat = Pattern { atoms: Vec::new(), vars: Vec::new(), slots: HashMap::new(), var_atoms: Vec::new() };
        for (pred, args) in atoms {
            let idx = pat.atoms.len() as u32;
            let mut slots = Vec::with_capacity(args.len());
            for &t in args {
                if mappable(t) {
                    let next = pat.vars.len() as u32;
                    let s = *pat.slots.entry(t).or_insert(next);
                    if s == next {
                        pat.vars.push(t);
                        pat.var_atoms.push(Vec::new());
                    }
                    let list = &mut pat.var_atoms[s as usize];
                    if list.last() != Some(&idx) {
                        list.push(idx);
                    }
                    slots.push(Slot::Var(s));
                } else {
                    slots.push(Slot::Fixed(t));
                }
            }
            pat.atoms.push(PatternAtom { pred, args: slots });
        }
        pat
    }

    pub fn from_atoms(atoms: &[Atom]) -> Pattern {
        Pattern::new(atoms.iter().map(|a| (a.pred, a.args.as_slice())), Term::is_mappable)
    }

    pub fn slot(&self, t: Term) -> Option<u32> {
        self.slots.get(&t).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Collects a solution into a [`Binding`] keyed by source terms.
    #[cfg(test)]
    pub fn binding(&self, solution: &[Option<Term>]) -> Binding {
        self.vars.iter().zip(solution).map(|(&v, s)| (v, s.expect("complete solution"))).collect()
    }
}

/// Backtracking homomorphism search from a [`Pattern`] into an [`Instance`].
pub(crate) struct Matcher<'a> {
    pat: &'a Pattern,
    dst: &'a Instance,
    ranges: Option<&'a [(u32, u32)]>,
    injective: bool,
    used: HashSet<Term>,
    bind: Vec<Option<Term>>,
    unbound: Vec<u32>,
}

impl<'a> Matcher<'a> {
    pub fn new(pat: &'a Pattern, dst: &'a Instance) -> Self {
        let unbound = pat
            .atoms
            .iter()
            .map(|a| {
                let mut seen: Vec<u32> = a
                    .args
                    .iter()
                    .filter_map(|s| match s {
                        Slot::Var(v) => Some(*v),
                        Slot::Fixed(_) => None,
                    })
                    .collect();
                seen.sort_unstable();
                seen.dedup();
                seen.len() as u32
            })
            .collect();
        Matcher {
            pat,
            dst,
            ranges: None,
            injective: false,
            used: HashSet::new(),
            bind: vec![None; pat.num_vars()],
            unbound,
        }
    }

    /// Restricts pattern atom `i` to target rows `ranges[i].0 .. ranges[i].1`.
    pub fn with_ranges(mut self, ranges: &'a [(u32, u32)]) -> Self {
        debug_assert_eq!(ranges.len(), self.pat.atoms.len());
        self.ranges = Some(ranges);
        self
    }

    /// Only accept maps that are injective on terms, fixed terms included.
    pub fn injective(mut self) -> Self {
        self.injective = true;
        for a in &self.pat.atoms {
            for s in &a.args {
                if let Slot::Fixed(t) = s {
                    self.used.insert(*t);
                }
            }
        }
        self
    }

    /// Binds `slot` before the search starts. Returns false when the
    /// preset already violates injectivity.
    pub fn preset(&mut self, slot: u32, value: Term) -> bool {
        if self.injective && !self.used.insert(value) {
            return false;
        }
        self.bind[slot as usize] = Some(value);
        for &a in &self.pat.var_atoms[slot as usize] {
            self.unbound[a as usize] -= 1;
        }
        true
    }

    fn range(&self, atom: usize) -> (u32, u32) {
        self.ranges.map_or((0, u32::MAX), |r| r[atom])
    }

    fn resolve(&self, s: Slot) -> Option<Term> {
        match s {
            Slot::Fixed(t) => Some(t),
            Slot::Var(v) => self.bind[v as usize],
        }
    }

    fn bound_positions(&self, atom: &PatternAtom, buf: &mut [(usize, Term); MAX_ARITY]) -> usize {
        let mut n = 0;
        for (p, &s) in atom.args.iter().enumerate() {
            if let Some(t) = self.resolve(s) {
                buf[n] = (p, t);
                n += 1;
            }
        }
        n
    }

    fn ground_holds(&self, atom_idx: usize) -> bool {
        let atom = &self.pat.atoms[atom_idx];
        let mut row = [PLACEHOLDER; MAX_ARITY];
        for (p, &s) in atom.args.iter().enumerate() {
            row[p] = self.resolve(s).expect("ground atom");
        }
        let (lo, hi) = self.range(atom_idx);
        self.dst.row_id(atom.pred, &row[..atom.args.len()]).is_some_and(|r| r >= lo && r < hi)
    }

    fn estimate(&self, atom_idx: usize) -> u64 {
        let atom = &self.pat.atoms[atom_idx];
        let mut buf = [(0, PLACEHOLDER); MAX_ARITY];
        let n = self.bound_positions(atom, &mut buf);
        let (lo, hi) = self.range(atom_idx);
        match self.dst.lookup(atom.pred, &buf[..n]) {
            Lookup::Empty => 0,
            Lookup::All(len) => hi.min(len).saturating_sub(lo) as u64,
            Lookup::Rows { rows, .. } => clip(rows, lo, hi).len() as u64,
            Lookup::Single(r) => r.is_some_and(|r| r >= lo && r < hi) as u64,
        }
    }

    /// Distinct images for `var` read off the candidate rows of `atom_idx`.
    fn candidates(&self, var: u32, atom_idx: usize) -> Vec<Term> {
        let atom = &self.pat.atoms[atom_idx];
        let mut buf = [(0, PLACEHOLDER); MAX_ARITY];
        let n = self.bound_positions(atom, &mut buf);
        let bound = &buf[..n];
        let (lo, hi) = self.range(atom_idx);
        let first = atom.args.iter().position(|&s| s == Slot::Var(var)).expect("variable occurs in atom");
        let mut out = Vec::new();
        let mut consider = |row: &[Term], check_bound: bool| {
            if check_bound && bound.iter().any(|&(p, t)| row[p] != t) {
                return;
            }
            // Repeated unbound variables must agree within the row.
            for (p, &s) in atom.args.iter().enumerate() {
                if let Slot::Var(u) = s {
                    if self.bind[u as usize].is_none() {
                        let q = atom.args.iter().position(|&x| x == s).unwrap();
                        if q != p && row[q] != row[p] {
                            return;
                        }
                    }
                }
            }
            out.push(row[first]);
        };
        match self.dst.lookup(atom.pred, bound) {
            Lookup::Empty | Lookup::Single(_) => {}
            Lookup::All(len) => {
                for r in lo..hi.min(len) {
                    consider(self.dst.row(atom.pred, r), false);
                }
            }
            Lookup::Rows { rows, exact } => {
                for &r in clip(rows, lo, hi) {
                    consider(self.dst.row(atom.pred, r), !exact);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn assign(&mut self, var: u32, value: Term) -> bool {
        self.bind[var as usize] = Some(value);
        if self.injective {
            self.used.insert(value);
        }
        let mut ok = true;
        for &a in &self.pat.var_atoms[var as usize] {
            self.unbound[a as usize] -= 1;
        }
        for &a in &self.pat.var_atoms[var as usize] {
            if self.unbound[a as usize] == 0 && !self.ground_holds(a as usize) {
                ok = false;
                break;
            }
        }
        ok
    }

    fn unassign(&mut self, var: u32) {
        if let Some(value) = self.bind[var as usize].take() {
            if self.injective {
                self.used.remove(&value);
            }
        }
        for &a in &self.pat.var_atoms[var as usize] {
            self.unbound[a as usize] += 1;
        }
    }

    /// Runs the search, calling `visit` with each complete solution (indexed
    /// by slot) until it breaks.
    pub fn run<F>(&mut self, visit: &mut F) -> ControlFlow<()>
    where
        F: FnMut(&[Option<Term>]) -> ControlFlow<()>,
    {
        for a in 0..self.pat.atoms.len() {
            if self.unbound[a] == 0 && !self.ground_holds(a) {
                return ControlFlow::Continue(());
            }
        }
        let remaining = self.bind.iter().filter(|b| b.is_none()).count();
        self.solve(remaining, visit)
    }

    fn solve<F>(&mut self, remaining: usize, visit: &mut F) -> ControlFlow<()>
    where
        F: FnMut(&[Option<Term>]) -> ControlFlow<()>,
    {
        if remaining == 0 {
            return visit(&self.bind);
        }
        let mut best: Option<(u64, u32, usize)> = None;
        for v in 0..self.bind.len() {
            if self.bind[v].is_some() {
                continue;
            }
            let mut local: Option<(u64, usize)> = None;
            for &a in &self.pat.var_atoms[v] {
                let est = self.estimate(a as usize);
                if est == 0 {
                    return ControlFlow::Continue(());
                }
                if local.is_none_or(|(e, _)| est < e) {
                    local = Some((est, a as usize));
                }
            }
            let (est, atom) = local.expect("variable without atoms");
            if best.is_none_or(|(e, _, _)| est < e) {
                best = Some((est, v as u32, atom));
            }
        }
        let (_, var, atom) = best.expect("an unbound variable");
        for value in self.candidates(var, atom) {
            if self.injective && self.used.contains(&value) {
                continue;
            }
            if self.assign(var, value) {
                let flow = self.solve(remaining - 1, visit);
                self.unassign(var);
                flow?;
            } else {
                self.unassign(var);
            }
        }
        ControlFlow::Continue(())
    }

    /// First solution, if any.
    pub fn first(&mut self) -> Option<Vec<Term>> {
        let mut found = None;
        let _ = self.run(&mut |s: &[Option<Term>]| {
            found = Some(s.iter().map(|t| t.unwrap()).collect());
            ControlFlow::Break(())
        });
        found
    }
}

/// Solutions of `pat` in `dst`, one for each distinct assignment to the slots
/// marked in `keep`, each completed by some witness for the other slots.
///
/// Joins one atom at a time and forgets variables that no later atom and no
/// kept slot needs. Long paths through a branching relation then cost
/// polynomial time instead of one branch per walk.
pub(crate) fn projected_solutions(
    pat: &Pattern,
    dst: &Instance,
    ranges: Option<&[(u32, u32)]>,
    keep: &[bool],
) -> Vec<Vec<Term>> {
    let n = pat.atoms.len();
    let nv = pat.num_vars();
    let range = |a: usize| ranges.map_or((0, u32::MAX), |r| r[a]);
    let size = |a: usize| {
        let (lo, hi) = range(a);
        hi.min(dst.relation_len(pat.atoms[a].pred) as u32).saturating_sub(lo)
    };
    if (0..n).any(|a| size(a) == 0) {
        return Vec::new();
    }

    // Connected atoms first, then the most bound positions, then the smallest.
    let mut order = Vec::with_capacity(n);
    let mut bound = vec![false; nv];
    let mut left: Vec<usize> = (0..n).collect();
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .min_by_key(|&(_, &a)| {
                let nb = pat.atoms[a]
                    .args
                    .iter()
                    .filter(|s| match s {
                        Slot::Var(v) => bound[*v as usize],
                        Slot::Fixed(_) => true,
                    })
                    .count();
                (nb == 0 && !order.is_empty(), core::cmp::Reverse(nb), size(a))
            })
            .unwrap();
        let a = left.swap_remove(i);
        for s in &pat.atoms[a].args {
            if let Slot::Var(v) = s {
                bound[*v as usize] = true;
            }
        }
        order.push(a);
    }

    let mut needed = keep.to_vec();
    let mut live_after = vec![Vec::new(); n];
    for k in (0..n).rev() {
        live_after[k] = needed.clone();
        for s in &pat.atoms[order[k]].args {
            if let Slot::Var(v) = s {
                needed[*v as usize] = true;
            }
        }
    }

    let mut partial: Vec<Vec<Option<Term>>> = vec![vec![None; nv]];
    for (k, &a) in order.iter().enumerate() {
        let atom = &pat.atoms[a];
        let (lo, hi) = range(a);
        let live = &live_after[k];
        let mut seen: HashSet<Vec<Term>> = HashSet::new();
        let mut next = Vec::new();
        for sol in &partial {
            let mut buf = [(0, PLACEHOLDER); MAX_ARITY];
            let mut nb = 0;
            for (p, &s) in atom.args.iter().enumerate() {
                let t = match s {
                    Slot::Fixed(t) => Some(t),
                    Slot::Var(v) => sol[v as usize],
                };
                if let Some(t) = t {
                    buf[nb] = (p, t);
                    nb += 1;
                }
            }
            let bound = &buf[..nb];
            let mut extend = |row: &[Term], check: bool| {
                if check && bound.iter().any(|&(p, t)| row[p] != t) {
                    return;
                }
                let mut ext = sol.clone();
                for (p, &s) in atom.args.iter().enumerate() {
                    if let Slot::Var(v) = s {
                        match ext[v as usize] {
                            Some(t) if t != row[p] => return,
                            Some(_) => {}
                            None => ext[v as usize] = Some(row[p]),
                        }
                    }
                }
                let key: Vec<Term> = (0..nv).filter(|&v| live[v]).filter_map(|v| ext[v]).collect();
                if seen.insert(key) {
                    next.push(ext);
                }
            };
            match dst.lookup(atom.pred, bound) {
                Lookup::Empty => {}
                Lookup::Single(r) => {
                    if let Some(r) = r.filter(|&r| r >= lo && r < hi) {
                        extend(dst.row(atom.pred, r), false);
                    }
                }
                Lookup::All(len) => {
                    for r in lo..hi.min(len) {
                        extend(dst.row(atom.pred, r), false);
                    }
                }
                Lookup::Rows { rows, exact } => {
                    for &r in clip(rows, lo, hi) {
                        extend(dst.row(atom.pred, r), !exact);
                    }
                }
            }
        }
        partial = next;
        if partial.is_empty() {
            break;
        }
    }
    partial.into_iter().map(|s| s.into_iter().map(|t| t.expect("every slot occurs in an atom")).collect()).collect()
}

fn clip(rows: &[u32], lo: u32, hi: u32) -> &[u32] {
    let start = rows.partition_point(|&r| r < lo);
    let end = rows.partition_point(|&r| r < hi);
    &rows[start..end.max(start)]
}

fn preset_from(matcher: &mut Matcher<'_>, pat: &Pattern, dst: &Instance, fixed: &Binding) -> bool {
    for (k, v) in fixed.iter() {
        if let Some(slot) = pat.slot(k) {
            if !dst.contains_term(v) || !matcher.preset(slot, v) {
                return false;
            }
        }
    }
    true
}

/// A homomorphism from `src` into `dst` extending `fixed`, if one exists.
///
/// Variables and nulls of `src` are mappable, constants map to themselves.
pub fn find_homomorphism(src: &[Atom], dst: &Instance, fixed: &Binding) -> Option<Binding> {
    let pat = Pattern::from_atoms(src);
    let mut m = Matcher::new(&pat, dst);
    if !preset_from(&mut m, &pat, dst, fixed) {
        return None;
    }
    let sol = m.first()?;
    let mut out: Binding = pat.vars.iter().copied().zip(sol).collect();
    for (k, v) in fixed.iter() {
        if pat.slot(k).is_none() {
            out.insert(k, v);
        }
    }
    Some(out)
}

/// Whether some homomorphism from `big` to `small` is the identity on the
/// terms the two instances share.
pub fn exists_retraction(big: &Instance, small: &Instance) -> bool {
    let pat = Pattern::new(big.iter(), |t| t.is_mappable() && !small.contains_term(t));
    Matcher::new(&pat, small).first().is_some()
}

/// Whether `query` maps into `instance`.
pub fn evaluate_bcq(query: &[Atom], instance: &Instance) -> bool {
    find_homomorphism(query, instance, &Binding::new()).is_some()
}

/// Every homomorphism from `src` into `dst` by exhaustive enumeration, in
/// lexicographic order of images (variables in term-key order), truncated
/// at `cap`.
pub fn enumerate_homomorphisms(src: &[Atom], dst: &Instance, cap: usize) -> Vec<Binding> {
    let mut out = Vec::new();
    if cap == 0 {
        return out;
    }
    let mut vars: Vec<Term> = src.iter().flat_map(|a| a.terms()).filter(|t| t.is_mappable()).collect();
    vars.sort_unstable();
    vars.dedup();
    let domain = dst.active_domain();
    let image_ok = |assign: &[usize]| {
        src.iter().all(|a| {
            let args: Vec<Term> = a
                .args
                .iter()
                .map(|t| match vars.binary_search(t) {
                    Ok(i) => domain[assign[i]],
                    Err(_) => *t,
                })
                .collect();
            dst.contains(a.pred, &args)
        })
    };
    if vars.is_empty() {
        if image_ok(&[]) {
            out.push(Binding::new());
        }
        return out;
    }
    if domain.is_empty() {
        return out;
    }
    let mut assign = vec![0usize; vars.len()];
    loop {
        if image_ok(&assign) {
            out.push(vars.iter().zip(&assign).map(|(&v, &i)| (v, domain[i])).collect());
            if out.len() == cap {
                return out;
            }
        }
        // Odometer increment, last variable fastest.
        let mut k = vars.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            assign[k] += 1;
            if assign[k] < domain.len() {
                break;
            }
            assign[k] = 0;
        }
    }
}

/// Isomorphism up to renaming of nulls and variables, constants fixed.
///
/// An injective homomorphism between instances of equal size is onto, so
/// its inverse is a homomorphism as well.
pub fn is_isomorphic(a: &Instance, b: &Instance) -> bool {
    if a.len() != b.len() || a.domain_size() != b.domain_size() {
        return false;
    }
    let pat = Pattern::new(a.iter(), Term::is_mappable);
    Matcher::new(&pat, b).injective().first().is_some()
}

/// Whether `instance ∪ extra` maps homomorphically into `instance`, with
/// every null (of either side) mappable.
pub(crate) fn folds_into(extra: &[Atom], instance: &Instance) -> bool {
    let src = instance
        .iter()
        .filter(|(_, args)| args.iter().any(|t| t.is_mappable()))
        .chain(extra.iter().map(|a| (a.pred, a.args.as_slice())));
    let pat = Pattern::new(src, Term::is_mappable);
    Matcher::new(&pat, instance).first().is_some()
}
