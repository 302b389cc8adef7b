//! Finite atom sets with per-predicate storage and join indexes.
//!
//! Each predicate owns an append-only relation: a flat row buffer, a hash
//! table over row contents for set semantics, and posting lists keyed on
//! bound argument positions. Rows are never removed, so row numbers double
//! as insertion timestamps and posting lists stay sorted. The semi-naive
//! evaluator relies on that to restrict matches to row ranges.

use alloc::vec::Vec;
use core::hash::BuildHasher;

use hashbrown::hash_table::Entry;
use hashbrown::{DefaultHashBuilder, HashMap, HashSet, HashTable};

use crate::model::{Atom, Pred, Term};

/// Relations up to this arity index every proper subset of positions;
/// wider relations index single positions only.
const FULL_MASK_ARITY: usize = 4;

#[derive(Clone, Debug)]
struct MaskIndex {
    positions: Vec<usize>,
    map: HashMap<u128, Vec<u32>>,
}

impl MaskIndex {
    fn key(&self, row: &[Term]) -> u128 {
        self.positions.iter().fold(0u128, |acc, &p| (acc << 32) | row[p].raw() as u128)
    }
}

#[derive(Clone, Debug)]
struct Relation {
    arity: usize,
    len: u32,
    data: Vec<Term>,
    table: HashTable<u32>,
    hasher: DefaultHashBuilder,
    /// Indexed by position bit mask.
    masks: Vec<Option<MaskIndex>>,
}

fn hash_row(hasher: &DefaultHashBuilder, row: &[Term]) -> u64 {
    hasher.hash_one(row)
}

impl Relation {
    fn new(arity: usize) -> Self {
        assert!(arity < 32, "arity above 31 is not supported");
        let index = |positions: Vec<usize>| Some(MaskIndex { positions, map: HashMap::new() });
        let masks = if arity <= FULL_MASK_ARITY {
            (0..1usize << arity)
                .map(|m| {
                    if m == 0 || m == (1 << arity) - 1 {
                        None
                    } else {
                        index((0..arity).filter(|p| m & (1 << p) != 0).collect())
                    }
                })
                .collect()
        } else {
            (0..arity).map(|p| index(alloc::vec![p])).collect()
        };
        Relation {
            arity,
            len: 0,
            data: Vec::new(),
            table: HashTable::new(),
            hasher: DefaultHashBuilder::default(),
            masks,
        }
    }

    fn row(&self, r: u32) -> &[Term] {
        let start = r as usize * self.arity;
        &self.data[start..start + self.arity]
    }

    fn find(&self, row: &[Term]) -> Option<u32> {
        if self.arity == 0 {
            return if self.len > 0 { Some(0) } else { None };
        }
        let h = hash_row(&self.hasher, row);
        self.table.find(h, |&r| self.row(r) == row).copied()
    }

    fn insert(&mut self, row: &[Term]) -> Option<u32> {
        debug_assert_eq!(row.len(), self.arity);
        if self.arity == 0 {
            if self.len > 0 {
                return None;
            }
            self.len = 1;
            return Some(0);
        }
        let h = hash_row(&self.hasher, row);
        let Relation { table, data, arity, hasher, .. } = self;
        let arity = *arity;
        let id = (data.len() / arity) as u32;
        match table.entry(
            h,
            |&r| &data[r as usize * arity..(r as usize + 1) * arity] == row,
            |&r| hash_row(hasher, &data[r as usize * arity..(r as usize + 1) * arity]),
        ) {
            Entry::Occupied(_) => return None,
            Entry::Vacant(v) => {
                v.insert(id);
            }
        }
        self.data.extend_from_slice(row);
        self.len += 1;
        for m in self.masks.iter_mut().flatten() {
            let key = m.key(row);
            m.map.entry(key).or_default().push(id);
        }
        Some(id)
    }

    fn mask_index(&self, mask: usize) -> Option<&MaskIndex> {
        if self.arity <= FULL_MASK_ARITY {
            self.masks.get(mask).and_then(Option::as_ref)
        } else if mask.count_ones() == 1 {
            self.masks[mask.trailing_zeros() as usize].as_ref()
        } else {
            None
        }
    }
}

/// Candidate rows for a partially bound atom.
#[derive(Debug)]
pub(crate) enum Lookup<'a> {
    /// No rows can match.
    Empty,
    /// Every row of the relation is a candidate.
    All(u32),
    /// Sorted candidate rows; `exact` when every listed row matches all
    /// bound positions.
    Rows { rows: &'a [u32], exact: bool },
    /// Every position is bound; the row number if present.
    Single(Option<u32>),
}

/// A finite set of atoms.
#[derive(Clone, Debug, Default)]
pub struct Instance {
    relations: Vec<Option<Relation>>,
    log: Vec<(Pred, u32)>,
    adom: HashSet<Term>,
}

impl Instance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> Self {
        let mut i = Instance::new();
        for a in atoms {
            i.insert_atom(a);
        }
        i
    }

    fn relation(&self, pred: Pred) -> Option<&Relation> {
        self.relations.get(pred.index()).and_then(Option::as_ref)
    }

    /// Inserts an atom; returns whether it was new.
    ///
    /// Panics when the predicate was already used with another arity.
    pub fn insert(&mut self, pred: Pred, args: &[Term]) -> bool {
        let idx = pred.index();
        if self.relations.len() <= idx {
            self.relations.resize_with(idx + 1, || None);
        }
        let rel = self.relations[idx].get_or_insert_with(|| Relation::new(args.len()));
        assert_eq!(rel.arity, args.len(), "arity mismatch for predicate {pred:?}");
        match rel.insert(args) {
            Some(row) => {
                self.log.push((pred, row));
                for &t in args {
                    self.adom.insert(t);
                }
                true
            }
            None => false,
        }
    }

    pub fn insert_atom(&mut self, atom: &Atom) -> bool {
        self.insert(atom.pred, &atom.args)
    }

    pub fn extend<'a>(&mut self, atoms: impl IntoIterator<Item = &'a Atom>) -> usize {
        atoms.into_iter().filter(|a| self.insert_atom(a)).count()
    }

    pub fn contains(&self, pred: Pred, args: &[Term]) -> bool {
        self.relation(pred).is_some_and(|r| r.arity == args.len() && r.find(args).is_some())
    }

    pub fn contains_atom(&self, atom: &Atom) -> bool {
        self.contains(atom.pred, &atom.args)
    }

    pub(crate) fn row_id(&self, pred: Pred, args: &[Term]) -> Option<u32> {
        self.relation(pred).filter(|r| r.arity == args.len()).and_then(|r| r.find(args))
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    /// Number of `pred`-atoms.
    pub fn relation_len(&self, pred: Pred) -> usize {
        self.relation(pred).map_or(0, |r| r.len as usize)
    }

    /// Per-predicate sizes, indexed by predicate number.
    pub(crate) fn watermark(&self) -> Vec<u32> {
        self.relations.iter().map(|r| r.as_ref().map_or(0, |r| r.len)).collect()
    }

    pub fn predicates(&self) -> impl Iterator<Item = Pred> + '_ {
        self.relations
            .iter()
            .enumerate()
            .filter(|(_, r)| r.as_ref().is_some_and(|r| r.len > 0))
            .map(|(i, _)| Pred(i as u32))
    }

    /// Argument rows of `pred` in insertion order.
    pub fn rows(&self, pred: Pred) -> impl Iterator<Item = &[Term]> + '_ {
        let rel = self.relation(pred);
        let n = rel.map_or(0, |r| r.len);
        (0..n).map(move |r| rel.unwrap().row(r))
    }

    pub(crate) fn row(&self, pred: Pred, r: u32) -> &[Term] {
        self.relation(pred).expect("row of absent predicate").row(r)
    }

    /// All atoms as `(predicate, arguments)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (Pred, &[Term])> + '_ {
        self.log.iter().map(move |&(p, r)| (p, self.relation(p).unwrap().row(r)))
    }

    pub fn atoms(&self) -> impl Iterator<Item = Atom> + '_ {
        self.iter().map(|(p, args)| Atom::new(p, args.to_vec()))
    }

    /// Atoms in predicate then argument order.
    pub fn sorted_atoms(&self) -> Vec<Atom> {
        let mut v: Vec<Atom> = self.atoms().collect();
        v.sort();
        v
    }

    /// The first `k` inserted atoms.
    pub fn prefix(&self, k: usize) -> Instance {
        let mut out = Instance::new();
        for (p, args) in self.iter().take(k) {
            out.insert(p, args);
        }
        out
    }

    /// Terms occurring in some atom, in term-key order.
    pub fn active_domain(&self) -> Vec<Term> {
        let mut v: Vec<Term> = self.adom.iter().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn contains_term(&self, t: Term) -> bool {
        self.adom.contains(&t)
    }

    pub fn domain_size(&self) -> usize {
        self.adom.len()
    }

    /// Whether every atom of `self` is in `other`.
    pub fn is_subset(&self, other: &Instance) -> bool {
        self.iter().all(|(p, args)| other.contains(p, args))
    }

    /// Candidate rows for an atom over `pred` with the given bound positions.
    pub(crate) fn lookup(&self, pred: Pred, bound: &[(usize, Term)]) -> Lookup<'_> {
        let Some(rel) = self.relation(pred) else {
            return Lookup::Empty;
        };
        if rel.len == 0 {
            return Lookup::Empty;
        }
        if bound.is_empty() {
            return Lookup::All(rel.len);
        }
        if bound.len() == rel.arity {
            let mut row = [Term::constant(crate::model::Sym(0)); 32];
            for &(p, t) in bound {
                row[p] = t;
            }
            return Lookup::Single(rel.find(&row[..rel.arity]));
        }
        let mask = bound.iter().fold(0usize, |m, &(p, _)| m | (1 << p));
        if let Some(ix) = rel.mask_index(mask) {
            let key = bound.iter().fold(0u128, |acc, &(_, t)| (acc << 32) | t.raw() as u128);
            // `bound` is ordered by position, matching the index key layout.
            return match ix.map.get(&key) {
                Some(rows) => Lookup::Rows { rows, exact: true },
                None => Lookup::Empty,
            };
        }
        // Wide relation: the shortest single-position posting list.
        let mut best: Option<&[u32]> = None;
        for &(p, t) in bound {
            let ix = rel.mask_index(1 << p).expect("single-position index");
            match ix.map.get(&(t.raw() as u128)) {
                None => return Lookup::Empty,
                Some(rows) => {
                    if best.is_none_or(|b| rows.len() < b.len()) {
                        best = Some(rows);
                    }
                }
            }
        }
        Lookup::Rows { rows: best.unwrap(), exact: false }
    }
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.is_subset(other)
    }
}

impl Eq for Instance {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocabulary;
    use proptest::prelude::*;

    #[test]
    fn duplicate_insert_is_noop() {
        let mut v = Vocabulary::new();
        let p = v.declare("P", 2).unwrap();
        let a = v.constant("a");
        let mut i = Instance::new();
        assert!(i.insert(p, &[a, a]));
        assert!(!i.insert(p, &[a, a]));
        assert_eq!(i.len(), 1);
    }

    #[test]
    fn lookup_uses_bound_positions() {
        let mut v = Vocabulary::new();
        let t = v.declare("T", 3).unwrap();
        let (a, b, c) = (v.constant("a"), v.constant("b"), v.constant("c"));
        let mut i = Instance::new();
        i.insert(t, &[a, b, c]);
        i.insert(t, &[a, c, c]);
        i.insert(t, &[b, b, c]);
        match i.lookup(t, &[(0, a), (2, c)]) {
            Lookup::Rows { rows, exact } => {
                assert!(exact);
                assert_eq!(rows, &[0, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(i.lookup(t, &[(1, a)]), Lookup::Empty));
        assert!(matches!(i.lookup(t, &[(0, b), (1, b), (2, c)]), Lookup::Single(Some(2))));
    }

    #[test]
    fn wide_relations_fall_back_to_single_positions() {
        let mut v = Vocabulary::new();
        let w = v.declare("W", 5).unwrap();
        let (a, b) = (v.constant("a"), v.constant("b"));
        let mut i = Instance::new();
        i.insert(w, &[a, a, a, a, b]);
        i.insert(w, &[a, b, a, a, b]);
        match i.lookup(w, &[(0, a), (1, b)]) {
            Lookup::Rows { rows, exact } => {
                assert!(!exact);
                assert!(rows.contains(&1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(i.contains(w, &[a, b, a, a, b]));
    }

    #[test]
    fn zero_arity_relation() {
        let mut v = Vocabulary::new();
        let z = v.declare("Z", 0).unwrap();
        let mut i = Instance::new();
        assert!(!i.contains(z, &[]));
        assert!(i.insert(z, &[]));
        assert!(!i.insert(z, &[]));
        assert!(i.contains(z, &[]));
        assert!(i.active_domain().is_empty());
    }

    proptest! {
        #[test]
        fn cached_domain_matches_recomputation(rows in proptest::collection::vec((0u8..3, 0u8..5, 0u8..5), 0..40)) {
            let mut v = Vocabulary::new();
            let preds = [v.declare("A", 2).unwrap(), v.declare("B", 2).unwrap(), v.declare("C", 2).unwrap()];
            let consts: Vec<Term> = (0..5).map(|k| v.constant(&alloc::format!("c{k}"))).collect();
            let mut i = Instance::new();
            for (p, x, y) in rows {
                let args = [consts[x as usize], consts[y as usize]];
                let before = i.len();
                let fresh = i.insert(preds[p as usize], &args);
                prop_assert_eq!(fresh, i.len() == before + 1);
                prop_assert!(!i.insert(preds[p as usize], &args));
            }
            let mut recomputed: Vec<Term> = i.iter().flat_map(|(_, a)| a.to_vec()).collect();
            recomputed.sort_unstable();
            recomputed.dedup();
            prop_assert_eq!(i.active_domain(), recomputed);
        }
    }
}
