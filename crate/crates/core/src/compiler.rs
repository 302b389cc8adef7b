//! Compilation of a three-counter machine into its rule set.
//!
//! The rule families, for every residue `i < p`:
//!
//! ```text
//! R_S            S0(x,y) -> S(x,y)
//! R_R_i          R_i(x,y), S(y,z) -> R_{i+1 mod p}(x,z)
//! R_T_i          T_i(x,y,z), S^{r_i}(y,y'), S^{q_i}(z,z') -> T_i(x,y',z')
//! R_flood_prop   S(x,y) -> Flood(y)
//! R_S_End        End(x) -> S(x,x)
//! R_G_init       S^2(x,y) -> G(x,y)
//! R_G_step_i     G(x,y), R_i(x,y), T_i(x,y,z) -> G(x,z)
//! R_flood_gen    Flood(x), Flood(y), Flood(z) -> G(x,y), R_j(x,y), T_j(x,y,z) for all j < p
//! R_exists       G(y,z), End(z) -> exists x. S0(x,y), R_0(x,x), T_j(x,x,x) for all j < p
//! ```
//!
//! `S^n(a,b)` is an S-path of length `n` through fresh body variables, and
//! `q_i / r_i` is the multiplier for residue `i`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::instance::Instance;
use crate::minsky::{PrimeBasis, Ratio, ThreeCM};
use crate::model::{Atom, Pred, Rule, Term, Vocabulary};

/// Predicates of a compiled rule set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub s0: Pred,
    pub s: Pred,
    pub end: Pred,
    pub flood: Pred,
    pub g: Pred,
    pub r: Vec<Pred>,
    pub t: Vec<Pred>,
}

impl Schema {
    fn declare(vocab: &mut Vocabulary, p: usize) -> Schema {
        let mut d = |name: &str, arity| vocab.declare(name, arity).expect("fresh vocabulary");
        let (s0, s, end, flood, g) = (d("S0", 2), d("S", 2), d("End", 1), d("Flood", 1), d("G", 2));
        let r = (0..p).map(|i| d(&format!("R_{i}"), 2)).collect();
        let t = (0..p).map(|i| d(&format!("T_{i}"), 3)).collect();
        Schema { s0, s, end, flood, g, r, t }
    }

    fn lookup(vocab: &Vocabulary, p: usize) -> Option<Schema> {
        let d = |name: &str| vocab.predicate(name);
        Some(Schema {
            s0: d("S0")?,
            s: d("S")?,
            end: d("End")?,
            flood: d("Flood")?,
            g: d("G")?,
            r: (0..p).map(|i| d(&format!("R_{i}"))).collect::<Option<_>>()?,
            t: (0..p).map(|i| d(&format!("T_{i}"))).collect::<Option<_>>()?,
        })
    }

    /// Every predicate, fixed ones first.
    pub fn all(&self) -> impl Iterator<Item = Pred> + '_ {
        [self.s0, self.s, self.end, self.flood, self.g]
            .into_iter()
            .chain(self.r.iter().copied())
            .chain(self.t.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct CompiledRuleSet {
    pub vocab: Vocabulary,
    pub rules: Vec<Rule>,
    pub basis: PrimeBasis,
    pub p: usize,
    /// Multiplier per residue.
    pub ratios: Vec<Ratio>,
    pub schema: Schema,
    /// The constant `w`.
    pub w: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("ratio table has {got} entries but p = {p}")]
    TableSize { p: u64, got: usize },
    #[error("p = {0} is too large to compile")]
    TooLarge(u64),
}

/// The rule set of `machine`.
pub fn compile(machine: &ThreeCM) -> CompiledRuleSet {
    compile_ratio_table(machine.basis().clone(), machine.ratios()).expect("machine tables always match their basis")
}

/// The rule set for an explicit ratio table, one entry per residue.
pub fn compile_ratio_table(basis: PrimeBasis, ratios: Vec<Ratio>) -> Result<CompiledRuleSet, CompileError> {
    if ratios.len() as u64 != basis.p {
        return Err(CompileError::TableSize { p: basis.p, got: ratios.len() });
    }
    let p = usize::try_from(basis.p).ok().filter(|&p| p <= 1 << 20).ok_or(CompileError::TooLarge(basis.p))?;
    let mut vocab = Vocabulary::new();
    let schema = Schema::declare(&mut vocab, p);
    let w = vocab.constant("w");
    let mut b = Builder { vocab: &mut vocab, rules: Vec::new() };
    b.emit(&schema, &ratios);
    let rules = b.rules;
    Ok(CompiledRuleSet { vocab, rules, basis, p, ratios, schema, w })
}

struct Builder<'v> {
    vocab: &'v mut Vocabulary,
    rules: Vec<Rule>,
}

impl Builder<'_> {
    fn var(&mut self, name: &str) -> Term {
        self.vocab.variable(name)
    }

    /// `S^n(from, to)` through `U<k>` variables starting at `*next`.
    fn path(&mut self, s: Pred, from: Term, to: Term, n: u64, next: &mut usize) -> Vec<Atom> {
        assert!(n >= 1, "S-paths have length at least one");
        let mut atoms = Vec::new();
        let mut cur = from;
        for step in 0..n {
            let dst = if step + 1 == n {
                to
            } else {
                *next += 1;
                let name = format!("U{}", *next);
                self.var(&name)
            };
            atoms.push(Atom::new(s, vec![cur, dst]));
            cur = dst;
        }
        atoms
    }

    fn push(&mut self, id: String, body: Vec<Atom>, head: Vec<Atom>) {
        self.rules.push(Rule::new(id, body, head).expect("compiled rules are well formed"));
    }

    fn emit(&mut self, sc: &Schema, ratios: &[Ratio]) {
        let p = sc.r.len();
        let (x, y, z) = (self.var("X"), self.var("Y"), self.var("Z"));
        let (y1, z1) = (self.var("Yp"), self.var("Zp"));
        let a = |pred: Pred, args: &[Term]| Atom::new(pred, args.to_vec());

        self.push("R_S".into(), vec![a(sc.s0, &[x, y])], vec![a(sc.s, &[x, y])]);
        for i in 0..p {
            self.push(
                format!("R_R_{i}"),
                vec![a(sc.r[i], &[x, y]), a(sc.s, &[y, z])],
                vec![a(sc.r[(i + 1) % p], &[x, z])],
            );
        }
        for (i, ratio) in ratios.iter().enumerate() {
            let mut next = 0;
            let mut body = vec![a(sc.t[i], &[x, y, z])];
            body.extend(self.path(sc.s, y, y1, ratio.den, &mut next));
            body.extend(self.path(sc.s, z, z1, ratio.num, &mut next));
            self.push(format!("R_T_{i}"), body, vec![a(sc.t[i], &[x, y1, z1])]);
        }
        self.push("R_flood_prop".into(), vec![a(sc.s, &[x, y])], vec![a(sc.flood, &[y])]);
        self.push("R_S_End".into(), vec![a(sc.end, &[x])], vec![a(sc.s, &[x, x])]);
        let mut next = 0;
        let g_init = self.path(sc.s, x, y, 2, &mut next);
        self.push("R_G_init".into(), g_init, vec![a(sc.g, &[x, y])]);
        for i in 0..p {
            self.push(
                format!("R_G_step_{i}"),
                vec![a(sc.g, &[x, y]), a(sc.r[i], &[x, y]), a(sc.t[i], &[x, y, z])],
                vec![a(sc.g, &[x, z])],
            );
        }
        let mut gen = vec![a(sc.g, &[x, y])];
        for j in 0..p {
            gen.push(a(sc.r[j], &[x, y]));
            gen.push(a(sc.t[j], &[x, y, z]));
        }
        self.push("R_flood_gen".into(), vec![a(sc.flood, &[x]), a(sc.flood, &[y]), a(sc.flood, &[z])], gen);
        let mut head = vec![a(sc.s0, &[x, y]), a(sc.r[0], &[x, x])];
        head.extend((0..p).map(|j| a(sc.t[j], &[x, x, x])));
        self.push("R_exists".into(), vec![a(sc.g, &[y, z]), a(sc.end, &[z])], head);
    }
}

impl CompiledRuleSet {
    /// Index of the single existential rule.
    pub fn exists_rule(&self) -> usize {
        self.rules.iter().position(|r| !r.is_datalog()).expect("compiled sets have an existential rule")
    }

    pub fn rule_index(&self, id: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    /// Recognizes rules of the compiled shape written over `vocab`.
    ///
    /// The residue count and the ratio table are read off the rules, the
    /// rule set is regenerated, and the two are compared up to variable
    /// names. On success the returned set keeps the caller's vocabulary
    /// and rules, so instances and queries over `vocab` stay valid for it.
    pub fn recognize(vocab: &Vocabulary, rules: &[Rule]) -> Option<CompiledRuleSet> {
        let p = (0..).take_while(|i| vocab.predicate(&format!("R_{i}")).is_some()).count();
        if p == 0 || rules.len() != 3 * p + 6 {
            return None;
        }
        let basis = (1..=8).filter_map(|m| PrimeBasis::first(m + 3)).find(|b| b.p == p as u64)?;
        let s = vocab.predicate("S")?;
        let mut ratios = Vec::with_capacity(p);
        for i in 0..p {
            let rule = rules.iter().find(|r| r.id == format!("R_T_{i}"))?;
            let t = rule.body.first()?;
            let (y, z) = (*t.args.get(1)?, *t.args.get(2)?);
            let den = path_length(&rule.body[1..], s, y)?;
            let num = path_length(&rule.body[1..], s, z)?;
            if num == 0 || den == 0 {
                return None;
            }
            ratios.push(Ratio { num, den });
        }
        let regenerated = compile_ratio_table(basis.clone(), ratios.clone()).ok()?;
        let mut ours: Vec<String> = regenerated.rules.iter().map(|r| canonical(&regenerated.vocab, r)).collect();
        let mut theirs: Vec<String> = rules.iter().map(|r| canonical(vocab, r)).collect();
        ours.sort_unstable();
        theirs.sort_unstable();
        if ours != theirs {
            return None;
        }
        let schema = Schema::lookup(vocab, p)?;
        let mut vocab = vocab.clone();
        let w = vocab.constant("w");
        Some(CompiledRuleSet { vocab, rules: rules.to_vec(), basis, p, ratios, schema, w })
    }
}

/// Length of the S-path starting at `from` among `atoms`.
fn path_length(atoms: &[Atom], s: Pred, from: Term) -> Option<u64> {
    let mut cur = from;
    let mut len = 0;
    while let Some(a) = atoms.iter().find(|a| a.pred == s && a.args[0] == cur) {
        cur = a.args[1];
        len += 1;
        if len > atoms.len() as u64 {
            return None;
        }
    }
    Some(len)
}

/// Rule text with variables renamed by first occurrence and the id dropped.
fn canonical(vocab: &Vocabulary, rule: &Rule) -> String {
    let mut names: Vec<Term> = Vec::new();
    let mut out = String::new();
    for (side, atoms) in [("B", &rule.body), ("H", &rule.head)] {
        out.push_str(side);
        for a in atoms {
            let _ = write!(out, " {}(", vocab.pred_name(a.pred));
            for t in &a.args {
                let k = names.iter().position(|n| n == t).unwrap_or_else(|| {
                    names.push(*t);
                    names.len() - 1
                });
                let _ = write!(out, "{k},");
            }
            out.push(')');
        }
        out.push(' ');
    }
    out
}

/// One fact per predicate with every position holding `w`.
pub fn critical_instance(rs: &CompiledRuleSet) -> Instance {
    let mut inst = Instance::new();
    for pred in rs.schema.all() {
        inst.insert(pred, &vec![rs.w; rs.vocab.arity(pred)]);
    }
    inst
}

/// `{End(w)}`.
pub fn end_instance(rs: &CompiledRuleSet) -> Instance {
    Instance::from_atoms(&[Atom::new(rs.schema.end, vec![rs.w])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chase::datalog_saturate;
    use crate::model::validate_rule;

    fn m1() -> ThreeCM {
        let mut m = ThreeCM::new(["q1"]).unwrap();
        for b1 in 0..2 {
            for b2 in 0..2 {
                m.define("q1", b1, b2, "q1", 1, 0).unwrap();
            }
        }
        m
    }

    #[test]
    fn rule_count_and_split() {
        let rs = compile(&m1());
        assert_eq!(rs.p, 210);
        assert_eq!(rs.rules.len(), 3 * 210 + 6);
        let nd: Vec<&Rule> = rs.rules.iter().filter(|r| !r.is_datalog()).collect();
        assert_eq!(nd.len(), 1);
        assert_eq!(nd[0].id, "R_exists");
        assert_eq!(rs.exists_rule(), rs.rules.len() - 1);
        for r in &rs.rules {
            validate_rule(r).unwrap();
        }
        let ex = &rs.rules[rs.exists_rule()];
        assert_eq!(ex.frontier().len(), 1);
        assert_eq!(ex.existentials().len(), 1);
        assert_eq!(ex.head.len(), 2 + 210);
    }

    #[test]
    fn two_thirds_body() {
        let h = ThreeCM::new(["q1"]).unwrap();
        let mut table = h.ratios();
        table[5] = Ratio::new(3, 2);
        let rs = compile_ratio_table(h.basis().clone(), table).unwrap();
        let r = &rs.rules[rs.rule_index("R_T_5").unwrap()];
        let v = &rs.vocab;
        let text: Vec<String> = r.body.iter().map(|a| format!("{}", v.display_atom(a))).collect();
        assert_eq!(text, ["T_5(X,Y,Z)", "S(Y,U1)", "S(U1,Yp)", "S(Z,U2)", "S(U2,U3)", "S(U3,Zp)"]);
        assert_eq!(format!("{}", v.display_atom(&r.head[0])), "T_5(X,Yp,Zp)");
    }

    #[test]
    fn table_size_is_checked() {
        let h = ThreeCM::new(["q1"]).unwrap();
        assert!(matches!(
            compile_ratio_table(h.basis().clone(), vec![Ratio::ONE; 3]),
            Err(CompileError::TableSize { .. })
        ));
    }

    #[test]
    fn critical_and_end() {
        let rs = compile(&m1());
        let crit = critical_instance(&rs);
        assert_eq!(crit.len(), 5 + 420);
        assert!(crit.contains(rs.schema.s0, &[rs.w, rs.w]));
        assert!(crit.contains(rs.schema.t[0], &[rs.w, rs.w, rs.w]));
        let end = end_instance(&rs);
        assert_eq!(end.len(), 1);
        assert_eq!(end.active_domain(), vec![rs.w]);
    }

    #[test]
    fn step_zero_closure() {
        let rs = compile(&m1());
        let dat: Vec<Rule> = rs.rules.iter().filter(|r| r.is_datalog()).cloned().collect();
        let got = datalog_saturate(&end_instance(&rs), &dat);
        let w = rs.w;
        let mut expected = Instance::new();
        expected.insert(rs.schema.end, &[w]);
        expected.insert(rs.schema.s, &[w, w]);
        expected.insert(rs.schema.flood, &[w]);
        expected.insert(rs.schema.g, &[w, w]);
        for i in 0..rs.p {
            expected.insert(rs.schema.r[i], &[w, w]);
            expected.insert(rs.schema.t[i], &[w, w, w]);
        }
        assert_eq!(got, expected);
        assert_eq!(got.len(), 424);
    }

    #[test]
    fn recognizer_round_trip() {
        let rs = compile(&m1());
        let back = CompiledRuleSet::recognize(&rs.vocab, &rs.rules).unwrap();
        assert_eq!(back.ratios, rs.ratios);
        let mut tampered = rs.rules.clone();
        tampered.swap_remove(3);
        assert!(CompiledRuleSet::recognize(&rs.vocab, &tampered).is_none());
        // Changing one head breaks the match.
        let mut changed = rs.rules.clone();
        let last = changed.len() - 1;
        changed[last].head.pop();
        assert!(CompiledRuleSet::recognize(&rs.vocab, &changed).is_none());
    }
}
