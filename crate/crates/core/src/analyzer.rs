//! Structural checks on chase results of compiled rule sets.
//!
//! Each check either passes or fails with the atoms that witness the
//! failure. The arithmetic oracles here are independent of the compiler and
//! of the machine simulator: they only read the ratio table.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::ToPrimitive;

use crate::chase::Variant;
use crate::compiler::{critical_instance, end_instance, CompiledRuleSet, Schema};
use crate::entailment::chase_to_depth;
use crate::homomorphism::{find_homomorphism, is_isomorphic, Binding};
use crate::instance::Instance;
use crate::model::{Atom, Pred, Term, Vocabulary};

/// Iterations of `g` explored by the orbit oracle.
pub const ORBIT_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureReport {
    pub check: String,
    pub passed: bool,
    /// Nonempty whenever the check failed.
    pub counterexample: Vec<Atom>,
    pub detail: String,
}

impl StructureReport {
    fn pass(check: &str, detail: String) -> Self {
        StructureReport { check: check.into(), passed: true, counterexample: Vec::new(), detail }
    }

    fn fail(check: &str, counterexample: Vec<Atom>, detail: String) -> Self {
        debug_assert!(!counterexample.is_empty(), "failed reports carry a counterexample");
        StructureReport { check: check.into(), passed: false, counterexample, detail }
    }

    /// One line: `<check> pass|fail: <detail>` followed by the atoms.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let mut out = format!("{} {}", self.check, if self.passed { "pass" } else { "fail" });
        if !self.detail.is_empty() {
            out.push_str(": ");
            out.push_str(&self.detail);
        }
        for a in &self.counterexample {
            out.push_str(&format!(" {}", vocab.display_atom(a)));
        }
        out
    }
}

/// The fresh terms hanging below one input term: `a_1, ..., a_m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub anchor: Term,
    pub terms: Vec<Term>,
}

impl Chain {
    /// `m_a`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `a_i`, where `a_0` is the anchor.
    pub fn term(&self, i: usize) -> Option<Term> {
        match i {
            0 => Some(self.anchor),
            _ => self.terms.get(i - 1).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDecomposition {
    /// One chain per input term, in term order.
    pub chains: Vec<Chain>,
}

impl ChainDecomposition {
    pub fn chain(&self, anchor: Term) -> Option<&Chain> {
        self.chains.iter().find(|c| c.anchor == anchor)
    }

    pub fn longest(&self) -> usize {
        self.chains.iter().map(Chain::len).max().unwrap_or(0)
    }

    /// Anchor and index of `t`.
    pub fn position(&self, t: Term) -> Option<(Term, usize)> {
        self.chains.iter().find_map(|c| (0..=c.len()).find(|&i| c.term(i) == Some(t)).map(|i| (c.anchor, i)))
    }
}

fn atom(pred: Pred, args: &[Term]) -> Atom {
    Atom::new(pred, args.to_vec())
}

/// Some atom of `inst` mentioning `t`.
fn mentioning(inst: &Instance, t: Term) -> Atom {
    inst.atoms().find(|a| a.args.contains(&t)).expect("term comes from the active domain")
}

/// Splits the terms of `chased` into chains below the terms of `input` and
/// checks that the S0, S and End atoms are exactly the ones the chains
/// account for.
pub fn chain_decomposition(
    input: &Instance,
    chased: &Instance,
    schema: &Schema,
) -> Result<ChainDecomposition, StructureReport> {
    const CHECK: &str = "chain";
    let fail = |atoms: Vec<Atom>, why: &str| Err(StructureReport::fail(CHECK, atoms, why.into()));
    if let Some(a) = input.atoms().find(|a| !chased.contains_atom(a)) {
        return fail(vec![a], "input fact missing from the chase result");
    }
    let anchors: BTreeSet<Term> = input.active_domain().into_iter().collect();
    // a_i -> a_{i+1} along fresh S0 edges, and the reverse.
    let mut below: BTreeMap<Term, Term> = BTreeMap::new();
    let mut above: BTreeMap<Term, Term> = BTreeMap::new();
    for row in chased.rows(schema.s0) {
        if input.contains(schema.s0, row) {
            continue;
        }
        let (fresh, target) = (row[0], row[1]);
        if anchors.contains(&fresh) {
            return fail(vec![atom(schema.s0, row)], "derived S0 edge leaves an input term");
        }
        if above.insert(fresh, target).is_some() {
            return fail(vec![atom(schema.s0, row)], "fresh term with two S0 successors");
        }
        if below.insert(target, fresh).is_some() {
            return fail(vec![atom(schema.s0, row)], "term with two fresh S0 predecessors");
        }
    }
    let mut placed = BTreeSet::new();
    let mut chains = Vec::with_capacity(anchors.len());
    for &a in &anchors {
        let mut terms = Vec::new();
        let mut cur = a;
        while let Some(&next) = below.get(&cur) {
            placed.insert(next);
            terms.push(next);
            cur = next;
        }
        chains.push(Chain { anchor: a, terms });
    }
    if let Some(t) = chased.active_domain().into_iter().find(|t| !anchors.contains(t) && !placed.contains(t)) {
        return fail(vec![mentioning(chased, t)], "term on no chain");
    }
    if let Some(row) = chased.rows(schema.end).find(|r| !input.contains(schema.end, r)) {
        return fail(vec![atom(schema.end, row)], "derived End atom");
    }

    let mut expected: BTreeSet<Vec<Term>> = BTreeSet::new();
    expected.extend(input.rows(schema.s).map(<[Term]>::to_vec));
    expected.extend(input.rows(schema.s0).map(<[Term]>::to_vec));
    expected.extend(input.rows(schema.end).map(|r| vec![r[0], r[0]]));
    for c in &chains {
        for i in 0..c.len() {
            expected.insert(vec![c.term(i + 1).unwrap(), c.term(i).unwrap()]);
        }
    }
    for row in chased.rows(schema.s) {
        if !expected.remove(row) {
            return fail(vec![atom(schema.s, row)], "S atom not accounted for by the chains");
        }
    }
    if let Some(row) = expected.first() {
        return fail(vec![atom(schema.s, row)], "expected S atom is missing");
    }
    Ok(ChainDecomposition { chains })
}

/// Checks that Flood holds on exactly the input Flood/End terms, the targets
/// of input S/S0 edges and every chain term but the youngest.
pub fn flood_report(input: &Instance, chased: &Instance, schema: &Schema) -> StructureReport {
    const CHECK: &str = "flood";
    let dec = match chain_decomposition(input, chased, schema) {
        Ok(d) => d,
        Err(r) => {
            return StructureReport::fail(CHECK, r.counterexample, format!("chain structure broken: {}", r.detail))
        }
    };
    let mut expected: BTreeSet<Term> = BTreeSet::new();
    expected.extend(input.rows(schema.flood).map(|r| r[0]));
    expected.extend(input.rows(schema.end).map(|r| r[0]));
    expected.extend(input.rows(schema.s).map(|r| r[1]));
    expected.extend(input.rows(schema.s0).map(|r| r[1]));
    for c in &dec.chains {
        expected.extend((0..c.len()).map(|i| c.term(i).unwrap()));
    }
    let total = expected.len();
    for row in chased.rows(schema.flood) {
        if !expected.remove(&row[0]) {
            return StructureReport::fail(CHECK, vec![atom(schema.flood, row)], "unexpected Flood atom".into());
        }
    }
    if let Some(&t) = expected.first() {
        return StructureReport::fail(CHECK, vec![atom(schema.flood, &[t])], "expected Flood atom is missing".into());
    }
    StructureReport::pass(CHECK, format!("{total} flooded terms"))
}

/// `n * num / den` for the ratio of `n mod p`, or `None` when not integral.
fn g_step(rs: &CompiledRuleSet, n: &BigUint) -> Option<BigUint> {
    let residue = (n % rs.basis.p).to_usize().expect("residue below p");
    let r = rs.ratios[residue];
    let (quot, rem) = (n * r.num).div_rem(&BigUint::from(r.den));
    rem.to_u64().filter(|&x| x == 0).map(|_| quot)
}

/// Checks the R, T and G atoms whose first argument is `t0` against modular
/// arithmetic, multiples of the ratio table and the orbit of 2.
///
/// `t0` must be the youngest term of a single chain ending in `w`; indices
/// past the end of the chain denote `w`.
pub fn verify_arithmetic(chased: &Instance, rs: &CompiledRuleSet, t0: Term) -> StructureReport {
    const CHECK: &str = "arith";
    let sc = &rs.schema;
    let fail = |atoms: Vec<Atom>, why: String| StructureReport::fail(CHECK, atoms, why);

    let mut chain = vec![t0];
    while *chain.last().unwrap() != rs.w {
        let cur = *chain.last().unwrap();
        let next: Vec<Term> = chased.rows(sc.s0).filter(|r| r[0] == cur).map(|r| r[1]).collect();
        match next.as_slice() {
            [t] if !chain.contains(t) => chain.push(*t),
            [] => return fail(vec![mentioning(chased, cur)], "the S0 chain stops before w".into()),
            _ => {
                let atoms = next.iter().map(|&t| atom(sc.s0, &[cur, t])).collect();
                return fail(atoms, "the S0 chain branches or loops".into());
            }
        }
    }
    let n = chain.len() - 1;
    let term_at = |k: u64| if k < n as u64 { chain[k as usize] } else { rs.w };
    let index: BTreeMap<Term, usize> = chain.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let from_t0 = |pred: Pred| chased.rows(pred).filter(move |r| r[0] == t0);
    let off_chain = |pred: Pred, row: &[Term]| row[1..].iter().any(|t| !index.contains_key(t)).then(|| atom(pred, row));

    // (i) R_i(t0, t_k) iff k = i mod p.
    let p = rs.p as u64;
    for (i, &pred) in sc.r.iter().enumerate() {
        let mut expected: BTreeSet<Term> = (0..n as u64).filter(|k| k % p == i as u64).map(term_at).collect();
        expected.insert(rs.w);
        for row in from_t0(pred) {
            if let Some(a) = off_chain(pred, row) {
                return fail(vec![a], "R atom leaves the chain".into());
            }
            if !expected.remove(&row[1]) {
                return fail(vec![atom(pred, row)], format!("R_{i} atom at an index not congruent to {i}"));
            }
        }
        if let Some(&t) = expected.first() {
            return fail(vec![atom(pred, &[t0, t])], format!("missing R_{i} atom"));
        }
    }

    // (ii) T_i(t0, t_k, t_l) iff k = m r_i and l = m q_i for some m.
    for (i, &pred) in sc.t.iter().enumerate() {
        let ratio = rs.ratios[i];
        let mut expected: BTreeSet<(Term, Term)> =
            (0..=n as u64).map(|m| (term_at(m * ratio.den), term_at(m * ratio.num))).collect();
        for row in from_t0(pred) {
            if let Some(a) = off_chain(pred, row) {
                return fail(vec![a], "T atom leaves the chain".into());
            }
            if !expected.remove(&(row[1], row[2])) {
                return fail(
                    vec![atom(pred, row)],
                    format!("T_{i} atom is not a multiple of {}/{}", ratio.den, ratio.num),
                );
            }
        }
        if let Some(&(k, l)) = expected.first() {
            return fail(vec![atom(pred, &[t0, k, l])], format!("missing T_{i} atom"));
        }
    }

    // (iii) G(t0, t_{g^k(2)}) for every k.
    let mut orbit: Vec<BigUint> = Vec::new();
    let mut cur = BigUint::from(2u32);
    let mut bounded = false;
    for _ in 0..ORBIT_LIMIT {
        let at = cur.to_u64().map_or(rs.w, term_at);
        if !chased.contains(sc.g, &[t0, at]) {
            return fail(vec![atom(sc.g, &[t0, at])], format!("missing G atom for orbit value {cur}"));
        }
        let Some(next) = g_step(rs, &cur) else {
            return fail(vec![atom(sc.g, &[t0, at])], format!("ratio table is not integral at {cur}"));
        };
        let fixed = next == cur;
        orbit.push(cur);
        if fixed {
            bounded = true;
            break;
        }
        cur = next;
    }

    // (iv) only when the orbit is bounded by n - 1.
    let limit = BigUint::from(n.saturating_sub(1));
    let check_iv = bounded && n > 0 && orbit.iter().all(|v| *v <= limit);
    if check_iv {
        let allowed: BTreeSet<Term> = orbit.iter().map(|v| term_at(v.to_u64().unwrap())).collect();
        if let Some(row) = from_t0(sc.g).find(|r| !allowed.contains(&r[1])) {
            return fail(vec![atom(sc.g, row)], "G atom outside the orbit of 2".into());
        }
    }
    let items = if check_iv { "i-iv" } else { "i-iii" };
    StructureReport::pass(CHECK, format!("chain length {n}, items {items}, orbit prefix {}", orbit.len()))
}

/// `k` distinct nodes pairwise joined by `pred` in both directions, each
/// carrying a `pred` self-loop.
pub fn find_clique(chased: &Instance, pred: Pred, k: usize) -> Option<Vec<Term>> {
    if k == 0 {
        return Some(Vec::new());
    }
    let edges: BTreeSet<(Term, Term)> = chased.rows(pred).filter(|r| r.len() == 2).map(|r| (r[0], r[1])).collect();
    let mut nodes: BTreeSet<Term> = edges.iter().filter(|(a, b)| a == b).map(|e| e.0).collect();
    let adjacent = |a: Term, b: Term| edges.contains(&(a, b)) && edges.contains(&(b, a));
    // Peel nodes that cannot reach k - 1 neighbours.
    loop {
        let weak: Vec<Term> = nodes
            .iter()
            .copied()
            .filter(|&a| nodes.iter().filter(|&&b| b != a && adjacent(a, b)).count() + 1 < k)
            .collect();
        if weak.is_empty() {
            break;
        }
        for t in weak {
            nodes.remove(&t);
        }
    }
    let nodes: Vec<Term> = nodes.into_iter().collect();
    let mut picked = Vec::with_capacity(k);
    extend_clique(&nodes, &adjacent, k, &mut picked).then_some(picked)
}

fn extend_clique(cands: &[Term], adjacent: &impl Fn(Term, Term) -> bool, k: usize, picked: &mut Vec<Term>) -> bool {
    if picked.len() == k {
        return true;
    }
    for (i, &c) in cands.iter().enumerate() {
        if picked.len() + (cands.len() - i) < k {
            return false;
        }
        let rest: Vec<Term> = cands[i + 1..].iter().copied().filter(|&d| adjacent(c, d)).collect();
        picked.push(c);
        if extend_clique(&rest, adjacent, k, picked) {
            return true;
        }
        picked.pop();
    }
    false
}

/// Whether the `pred`-graph of `chased` has a clique of `k` nodes.
pub fn clique_witness(chased: &Instance, pred: Pred, k: usize) -> bool {
    let Some(found) = find_clique(chased, pred, k) else {
        return false;
    };
    // Re-verify the witness directly.
    found.iter().all(|&a| found.iter().all(|&b| chased.contains(pred, &[a, b])))
}

/// Compares `n` oblivious rounds from the critical instance with `n` rounds
/// from `{End(w)}` extended by `S0(w,w)`.
pub fn compare_critical(rs: &CompiledRuleSet, n: usize) -> StructureReport {
    const CHECK: &str = "critical";
    let crit = chase_to_depth(&critical_instance(rs), &rs.rules, Variant::Oblivious, n);
    let mut end = chase_to_depth(&end_instance(rs), &rs.rules, Variant::Oblivious, n);
    end.insert(rs.schema.s0, &[rs.w, rs.w]);
    if is_isomorphic(&crit, &end) {
        return StructureReport::pass(CHECK, format!("n = {n}, {} atoms on both sides", crit.len()));
    }
    for pred in rs.schema.all() {
        let (a, b) = (crit.relation_len(pred), end.relation_len(pred));
        if a != b {
            let bigger = if a > b { &crit } else { &end };
            let side = if a > b { "critical" } else { "end" };
            let row = bigger.rows(pred).last().expect("nonempty relation");
            let why = format!(
                "{} has {a} atoms on the critical side and {b} on the end side; extra on the {side} side",
                rs.vocab.pred_name(pred)
            );
            return StructureReport::fail(CHECK, vec![atom(pred, row)], why);
        }
    }
    // Same counts: find the first critical atom that breaks a homomorphism.
    let atoms = crit.sorted_atoms();
    for k in 1..=atoms.len() {
        if find_homomorphism(&atoms[..k], &end, &Binding::new()).is_none() {
            return StructureReport::fail(CHECK, vec![atoms[k - 1].clone()], "no isomorphism maps this atom".into());
        }
    }
    let first = atoms.first().cloned().into_iter().collect();
    StructureReport::fail(CHECK, first, "homomorphic both ways but not isomorphic".into())
}
