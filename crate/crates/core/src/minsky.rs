//! Three-counter machines and their prime-power encoding.
//!
//! A configuration `(q_i, v1, v2, t)` of a machine with `m` states is
//! encoded as `p_i * p_{m+1}^v1 * p_{m+2}^v2 * p_{m+3}^t` over the first
//! `m + 3` primes. Because the product `p` of those primes is squarefree,
//! `enc(C) mod p` tells which basis primes divide `enc(C)`, and that is
//! enough to recover the state and both zero-flags. Each residue therefore
//! determines a single multiplier taking `enc(C)` to `enc(next(C))`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MachineError {
    #[error("a machine needs at least one state")]
    NoStates,
    #[error("state `{0}` is declared twice")]
    DuplicateState(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("transition for ({state}, {b1}, {b2}) is defined twice")]
    DuplicateTransition { state: String, b1: u8, b2: u8 },
    #[error("counter delta {0} is outside -1..=1")]
    BadDelta(i8),
    #[error("flag {0} is not 0 or 1")]
    BadFlag(u8),
    #[error("the prime basis for {0} states does not fit in 64 bits")]
    BasisTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GError {
    #[error("g is only defined on positive integers")]
    Zero,
    #[error("g({n}) = {num}*{n}/{den} is not an integer")]
    NonIntegral { n: BigUint, num: u64, den: u64 },
}

/// Image of a defined transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub to: usize,
    pub d1: i8,
    pub d2: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub state: usize,
    pub v1: u64,
    pub v2: u64,
    pub t: u64,
}

impl Configuration {
    pub const INITIAL: Configuration = Configuration { state: 0, v1: 0, v2: 0, t: 0 };
}

/// Irreducible multiplier `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    /// Builds the reduced form of `num / den`.
    pub fn new(num: u64, den: u64) -> Ratio {
        assert!(num > 0 && den > 0, "ratio components must be positive");
        let g = num.gcd(&den);
        Ratio { num: num / g, den: den / g }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeBasis {
    pub primes: Vec<u64>,
    pub p: u64,
}

impl PrimeBasis {
    /// The first `count` primes and their product.
    pub fn first(count: usize) -> Option<PrimeBasis> {
        let mut primes = Vec::with_capacity(count);
        let mut candidate = 2u64;
        while primes.len() < count {
            if primes.iter().take_while(|&&q| q * q <= candidate).all(|&q| !candidate.is_multiple_of(q)) {
                primes.push(candidate);
            }
            candidate += 1;
        }
        let p = primes.iter().try_fold(1u64, |acc, &q| acc.checked_mul(q))?;
        Some(PrimeBasis { primes, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Halted { after: u64 },
    Running,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Orbit {
    /// `2, g(2), g(g(2)), ...` up to the fixpoint or the iteration limit.
    pub values: Vec<BigUint>,
    /// Whether a fixpoint was reached within the limit.
    pub bounded: bool,
    /// Largest orbit element when bounded.
    pub bound: Option<BigUint>,
}

/// A deterministic machine with two counters and a time counter.
///
/// State 0 is initial. Transitions missing from the table are undefined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreeCM {
    states: Vec<String>,
    delta: BTreeMap<(usize, bool, bool), Transition>,
    basis: PrimeBasis,
}

impl ThreeCM {
    pub fn new<S: Into<String>>(states: impl IntoIterator<Item = S>) -> Result<Self, MachineError> {
        let states: Vec<String> = states.into_iter().map(Into::into).collect();
        if states.is_empty() {
            return Err(MachineError::NoStates);
        }
        for (i, s) in states.iter().enumerate() {
            if states[..i].contains(s) {
                return Err(MachineError::DuplicateState(s.clone()));
            }
        }
        let basis = PrimeBasis::first(states.len() + 3).ok_or(MachineError::BasisTooLarge(states.len()))?;
        Ok(ThreeCM { states, delta: BTreeMap::new(), basis })
    }

    pub fn define(&mut self, from: &str, b1: u8, b2: u8, to: &str, d1: i8, d2: i8) -> Result<(), MachineError> {
        let from_idx = self.state_index(from).ok_or_else(|| MachineError::UnknownState(from.into()))?;
        let to_idx = self.state_index(to).ok_or_else(|| MachineError::UnknownState(to.into()))?;
        for b in [b1, b2] {
            if b > 1 {
                return Err(MachineError::BadFlag(b));
            }
        }
        for d in [d1, d2] {
            if !(-1..=1).contains(&d) {
                return Err(MachineError::BadDelta(d));
            }
        }
        let key = (from_idx, b1 == 1, b2 == 1);
        if self.delta.contains_key(&key) {
            return Err(MachineError::DuplicateTransition { state: from.into(), b1, b2 });
        }
        self.delta.insert(key, Transition { to: to_idx, d1, d2 });
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn transition(&self, state: usize, b1: bool, b2: bool) -> Option<Transition> {
        self.delta.get(&(state, b1, b2)).copied()
    }

    /// Defined transitions in `(state, b1, b2)` order.
    pub fn transitions(&self) -> impl Iterator<Item = ((usize, bool, bool), Transition)> + '_ {
        self.delta.iter().map(|(&k, &v)| (k, v))
    }

    pub fn basis(&self) -> &PrimeBasis {
        &self.basis
    }

    pub fn next_configuration(&self, c: Configuration) -> Option<Configuration> {
        let tr = self.transition(c.state, c.v1 > 0, c.v2 > 0)?;
        let apply = |v: u64, d: i8| match d {
            1 => v + 1,
            -1 => v.saturating_sub(1),
            _ => v,
        };
        Some(Configuration { state: tr.to, v1: apply(c.v1, tr.d1), v2: apply(c.v2, tr.d2), t: c.t + 1 })
    }

    pub fn run_machine(&self, max_steps: u64) -> RunOutcome {
        let mut c = Configuration::INITIAL;
        for step in 0..=max_steps {
            match self.next_configuration(c) {
                None => return RunOutcome::Halted { after: step },
                Some(next) if step < max_steps => c = next,
                Some(_) => break,
            }
        }
        RunOutcome::Running
    }

    /// Up to `limit` configurations reachable from the initial one.
    pub fn trace(&self, limit: usize) -> Vec<Configuration> {
        let mut out = Vec::new();
        let mut c = Some(Configuration::INITIAL);
        while let Some(cur) = c {
            if out.len() == limit {
                break;
            }
            out.push(cur);
            c = self.next_configuration(cur);
        }
        out
    }

    pub fn enc(&self, c: &Configuration) -> BigUint {
        let m = self.num_states();
        assert!(c.state < m, "state index out of range");
        let pr = &self.basis.primes;
        let pow = |q: u64, e: u64| BigUint::from(q).pow(u32::try_from(e).expect("exponent fits in u32"));
        BigUint::from(pr[c.state]) * pow(pr[m], c.v1) * pow(pr[m + 1], c.v2) * pow(pr[m + 2], c.t)
    }

    /// The multiplier applied to numbers congruent to `i` modulo `p`.
    pub fn ratio_for_residue(&self, i: u64) -> Ratio {
        assert!(i < self.basis.p, "residue {i} is not below p = {}", self.basis.p);
        let m = self.num_states();
        let pr = &self.basis.primes;
        let divides = |j: usize| i.is_multiple_of(pr[j]);
        let mut states = (0..m).filter(|&j| divides(j));
        let (Some(state), None) = (states.next(), states.next()) else {
            return Ratio::ONE;
        };
        let (b1, b2) = (divides(m), divides(m + 1));
        let Some(tr) = self.transition(state, b1, b2) else {
            return Ratio::ONE;
        };
        let mut num = pr[tr.to] * pr[m + 2];
        let mut den = pr[state];
        for (d, flag, q) in [(tr.d1, b1, pr[m]), (tr.d2, b2, pr[m + 1])] {
            match d {
                1 => num *= q,
                -1 if flag => den *= q,
                _ => {}
            }
        }
        Ratio::new(num, den)
    }

    /// The multiplier table indexed by residue.
    pub fn ratios(&self) -> Vec<Ratio> {
        (0..self.basis.p).map(|i| self.ratio_for_residue(i)).collect()
    }

    /// `n * num / den` for the ratio of `n mod p`.
    ///
    /// With a table from [`ratio_for_residue`](Self::ratio_for_residue) the
    /// division is always exact; [`GError::NonIntegral`] can only come from
    /// [`g_with`](Self::g_with) and a hand-made table.
    pub fn g(&self, n: &BigUint) -> Result<BigUint, GError> {
        if n.is_zero() {
            return Err(GError::Zero);
        }
        let residue = (n % self.basis.p).to_u64().expect("residue below p");
        apply_ratio(n, self.ratio_for_residue(residue))
    }

    /// `g` driven by an explicit ratio table indexed by residue.
    pub fn g_with(&self, table: &[Ratio], n: &BigUint) -> Result<BigUint, GError> {
        assert_eq!(table.len() as u64, self.basis.p, "ratio table must cover every residue");
        if n.is_zero() {
            return Err(GError::Zero);
        }
        let residue = (n % self.basis.p).to_u64().expect("residue below p");
        apply_ratio(n, table[residue as usize])
    }

    /// Iterates `g` from 2 at most `limit` times.
    pub fn g_orbit(&self, limit: usize) -> Result<Orbit, GError> {
        let mut values = Vec::new();
        let mut cur = BigUint::from(2u32);
        for _ in 0..limit {
            let next = self.g(&cur)?;
            let fixed = next == cur;
            values.push(cur);
            if fixed {
                let bound = values.iter().max().cloned();
                return Ok(Orbit { values, bounded: true, bound });
            }
            cur = next;
        }
        Ok(Orbit { values, bounded: false, bound: None })
    }
}

fn apply_ratio(n: &BigUint, r: Ratio) -> Result<BigUint, GError> {
    let (quot, rem) = (n * r.num).div_rem(&BigUint::from(r.den));
    if rem.is_zero() {
        Ok(quot)
    } else {
        Err(GError::NonIntegral { n: n.clone(), num: r.num, den: r.den })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn m1() -> ThreeCM {
        let mut m = ThreeCM::new(["q1"]).unwrap();
        for b1 in 0..2 {
            for b2 in 0..2 {
                m.define("q1", b1, b2, "q1", 1, 0).unwrap();
            }
        }
        m
    }

    fn halting_after_3() -> ThreeCM {
        // Flags walk (0,0) -> (0,1) -> (1,1) -> (1,0), which is undefined.
        let mut m = ThreeCM::new(["q1"]).unwrap();
        m.define("q1", 0, 0, "q1", 0, 1).unwrap();
        m.define("q1", 0, 1, "q1", 1, 0).unwrap();
        m.define("q1", 1, 1, "q1", 0, -1).unwrap();
        m
    }

    fn brute_ratio(m: &ThreeCM, c: Configuration) -> Option<(BigUint, BigUint)> {
        let next = m.next_configuration(c)?;
        Some((m.enc(&next), m.enc(&c)))
    }

    #[test]
    fn primes() {
        let b = PrimeBasis::first(4).unwrap();
        assert_eq!(b.primes, [2, 3, 5, 7]);
        assert_eq!(b.p, 210);
        assert!(PrimeBasis::first(20).is_none());
    }

    #[test]
    fn next_examples() {
        let m = m1();
        let c = Configuration::INITIAL;
        assert_eq!(m.next_configuration(c), Some(Configuration { state: 0, v1: 1, v2: 0, t: 1 }));
        let h = ThreeCM::new(["q1"]).unwrap();
        assert_eq!(h.next_configuration(c), None);
        let mut clamp = ThreeCM::new(["q1"]).unwrap();
        clamp.define("q1", 0, 0, "q1", -1, 0).unwrap();
        assert_eq!(clamp.next_configuration(c).unwrap().v1, 0);
    }

    #[test]
    fn encoding_examples() {
        let m = m1();
        assert_eq!(m.enc(&Configuration::INITIAL), BigUint::from(2u32));
        assert_eq!(m.enc(&Configuration { state: 0, v1: 1, v2: 0, t: 1 }), BigUint::from(42u32));
        assert_eq!(m.enc(&Configuration { state: 0, v1: 0, v2: 0, t: 1 }), BigUint::from(14u32));
    }

    #[test]
    fn ratio_examples() {
        let m = m1();
        assert_eq!(m.ratio_for_residue(2), Ratio::new(21, 1));
        // 6 = 2*3: one state prime; 1 = no state prime.
        assert_eq!(m.ratio_for_residue(1), Ratio::ONE);
        let two_states = ThreeCM::new(["a", "b"]).unwrap();
        // Divisible by both 2 and 3, the two state primes.
        assert_eq!(two_states.ratio_for_residue(6), Ratio::ONE);
        let h = ThreeCM::new(["q1"]).unwrap();
        assert_eq!(h.ratio_for_residue(2), Ratio::ONE);
    }

    #[test]
    fn g_examples() {
        let m = m1();
        let two = BigUint::from(2u32);
        assert_eq!(m.g(&two).unwrap(), BigUint::from(42u32));
        let c = Configuration { state: 0, v1: 1, v2: 0, t: 1 };
        assert_eq!(m.g(&BigUint::from(42u32)).unwrap(), m.enc(&m.next_configuration(c).unwrap()));
        let h = ThreeCM::new(["q1"]).unwrap();
        assert_eq!(h.g(&two).unwrap(), two);
        assert_eq!(h.g(&BigUint::zero()), Err(GError::Zero));
    }

    #[test]
    fn g_is_integral_everywhere() {
        // Denominator primes are read off the residue, so they divide n.
        let mut two = ThreeCM::new(["a", "b"]).unwrap();
        two.define("a", 1, 0, "b", -1, 0).unwrap();
        two.define("b", 1, 1, "a", -1, -1).unwrap();
        assert_eq!(two.g(&BigUint::from(10u32)).unwrap(), BigUint::from(33u32));
        for n in 1u32..5000 {
            assert!(two.g(&BigUint::from(n)).is_ok(), "g({n})");
        }
        // A hand-made table can break that.
        let mut table = two.ratios();
        table[1] = Ratio::new(3, 2);
        assert!(matches!(two.g_with(&table, &BigUint::from(1u32)), Err(GError::NonIntegral { .. })));
    }

    #[test]
    fn orbits() {
        let h = ThreeCM::new(["q1"]).unwrap();
        let o = h.g_orbit(10).unwrap();
        assert_eq!(o.values, [BigUint::from(2u32)]);
        assert!(o.bounded);
        assert_eq!(o.bound, Some(BigUint::from(2u32)));
        let o = m1().g_orbit(5).unwrap();
        assert_eq!(o.values.len(), 5);
        assert!(o.values.windows(2).all(|w| w[0] < w[1]));
        assert!(!o.bounded);
    }

    #[test]
    fn run_examples() {
        assert_eq!(ThreeCM::new(["q1"]).unwrap().run_machine(10), RunOutcome::Halted { after: 0 });
        assert_eq!(m1().run_machine(100), RunOutcome::Running);
        let mut m = halting_after_3();
        assert!(m.define("q1", 1, 0, "q9", 0, 0).is_err());
        assert_eq!(m.run_machine(100), RunOutcome::Halted { after: 3 });
        // Largest encoding is the last configuration (q1, 1, 0, 3).
        let orbit = m.g_orbit(10).unwrap();
        assert_eq!(orbit.values.len(), 4);
        assert_eq!(orbit.bound, Some(BigUint::from(2u32 * 3 * 7 * 7 * 7)));
        assert_eq!(m.run_machine(2), RunOutcome::Running);
        assert_eq!(m.run_machine(3), RunOutcome::Halted { after: 3 });
    }

    #[test]
    fn machine_errors() {
        assert_eq!(ThreeCM::new(Vec::<String>::new()), Err(MachineError::NoStates));
        assert!(matches!(ThreeCM::new(["a", "a"]), Err(MachineError::DuplicateState(_))));
        let mut m = m1();
        assert_eq!(m.define("q1", 2, 0, "q1", 0, 0), Err(MachineError::BadFlag(2)));
        assert_eq!(m.define("q1", 0, 0, "q1", 2, 0), Err(MachineError::BadDelta(2)));
        assert!(matches!(m.define("q1", 0, 0, "q1", 0, 0), Err(MachineError::DuplicateTransition { .. })));
        assert!(matches!(m.define("zz", 0, 0, "q1", 0, 0), Err(MachineError::UnknownState(_))));
    }

    #[test]
    fn ratios_are_reduced() {
        for m in [m1(), halting_after_3()] {
            for r in m.ratios() {
                assert_eq!(r.num.gcd(&r.den), 1);
            }
        }
    }

    fn arb_machine() -> impl Strategy<Value = ThreeCM> {
        (1usize..3).prop_flat_map(|m| {
            proptest::collection::vec(proptest::option::of((0..m, -1i8..=1, -1i8..=1)), m * 4).prop_map(move |cells| {
                let names: Vec<String> = (0..m).map(|i| alloc::format!("q{}", i + 1)).collect();
                let mut machine = ThreeCM::new(names.clone()).unwrap();
                for (k, cell) in cells.into_iter().enumerate() {
                    if let Some((to, d1, d2)) = cell {
                        let (state, b1, b2) = (k / 4, (k / 2 % 2) as u8, (k % 2) as u8);
                        machine.define(&names[state], b1, b2, &names[to], d1, d2).unwrap();
                    }
                }
                machine
            })
        })
    }

    proptest! {
        #[test]
        fn ratio_moves_encodings(machine in arb_machine()) {
            for c in machine.trace(50) {
                let enc = machine.enc(&c);
                let i = (&enc % machine.basis().p).to_u64().unwrap();
                let r = machine.ratio_for_residue(i);
                match brute_ratio(&machine, c) {
                    Some((next, cur)) => prop_assert_eq!(next * r.den, cur * r.num),
                    None => prop_assert_eq!(r, Ratio::ONE),
                }
            }
        }

        #[test]
        fn halting_matches_orbit(machine in arb_machine()) {
            let run = machine.run_machine(40);
            let orbit = machine.g_orbit(42).unwrap();
            match run {
                RunOutcome::Halted { after } => {
                    prop_assert!(orbit.bounded);
                    prop_assert_eq!(orbit.values.len() as u64, after + 1);
                }
                RunOutcome::Running => prop_assert!(!orbit.bounded || orbit.values.len() > 41),
            }
        }

        #[test]
        fn enc_is_injective(a in (0usize..2, 0u64..6, 0u64..6, 0u64..6), b in (0usize..2, 0u64..6, 0u64..6, 0u64..6)) {
            let m = ThreeCM::new(["x", "y"]).unwrap();
            let ca = Configuration { state: a.0, v1: a.1, v2: a.2, t: a.3 };
            let cb = Configuration { state: b.0, v1: b.1, v2: b.2, t: b.3 };
            prop_assert_eq!(ca == cb, m.enc(&ca) == m.enc(&cb));
        }
    }
}
