//! Decision procedure for the path-constraint theory: boolean structure by
//! case splitting, equality over address/bytes by union-find, and linear
//! uint constraints by difference-bound closure, interval propagation and
//! bisection over the finite uint256 domain.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use super::sym::{sort_max, u256_to_bigint, Concrete, Model, SymValue};
use crate::minisol::{BinOp, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SatResult {
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl SatResult {
    pub fn unsat() -> Self {
        SatResult { verdict: Verdict::Unsat, model: None, reason: None }
    }

    pub fn unknown(reason: impl Into<String>) -> Self {
        SatResult { verdict: Verdict::Unknown, model: None, reason: Some(reason.into()) }
    }

    fn sat(model: Model) -> Self {
        SatResult { verdict: Verdict::Sat, model: Some(model), reason: None }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Disjunctive cases explored before giving up.
    pub cases: usize,
    /// Search nodes per case for the arithmetic part.
    pub nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { cases: 4096, nodes: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    Atom(String),
    Const(BigInt),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rel {
    Le,
    Eq,
    Ne,
}

/// `sum(coeffs * vars) + k`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Linear {
    coeffs: BTreeMap<String, BigInt>,
    k: BigInt,
}

impl Linear {
    fn scale(mut self, c: &BigInt) -> Linear {
        self.coeffs.values_mut().for_each(|v| *v *= c);
        self.coeffs.retain(|_, v| !v.is_zero());
        self.k *= c;
        self
    }

    fn add(mut self, other: Linear) -> Linear {
        for (n, c) in other.coeffs {
            *self.coeffs.entry(n).or_default() += c;
        }
        self.coeffs.retain(|_, v| !v.is_zero());
        self.k += other.k;
        self
    }

    fn sub(self, other: Linear) -> Linear {
        self.add(other.scale(&-BigInt::one()))
    }

    fn plus(mut self, k: i64) -> Linear {
        self.k += k;
        self
    }
}

#[derive(Debug, Clone)]
enum Literal {
    Bool(String, bool),
    Arith(Linear, Rel),
    Same { sort: Type, a: Term, b: Term, equal: bool },
}

#[derive(Debug, Clone)]
enum Form {
    True,
    False,
    Lit(Literal),
    And(Vec<Form>),
    Or(Vec<Form>),
}

fn linear(v: &SymValue) -> Result<Linear, String> {
    match v {
        SymValue::Atom(a) if a.ty == Type::Uint256 => {
            Ok(Linear { coeffs: BTreeMap::from([(a.name.clone(), BigInt::one())]), k: BigInt::zero() })
        }
        SymValue::Lit { value, ty: Type::Uint256 } => {
            Ok(Linear { coeffs: BTreeMap::new(), k: u256_to_bigint(*value) })
        }
        SymValue::Bin { op: BinOp::Add, lhs, rhs } => Ok(linear(lhs)?.add(linear(rhs)?)),
        SymValue::Bin { op: BinOp::Sub, lhs, rhs } => Ok(linear(lhs)?.sub(linear(rhs)?)),
        SymValue::Bin { op: BinOp::Mul, lhs, rhs } => {
            let (l, r) = (linear(lhs)?, linear(rhs)?);
            if l.coeffs.is_empty() {
                Ok(r.scale(&l.k))
            } else if r.coeffs.is_empty() {
                Ok(l.scale(&r.k))
            } else {
                Err(format!("non-linear term {v}"))
            }
        }
        _ => Err(format!("{v} is not a uint256 term")),
    }
}

fn term(v: &SymValue) -> Result<Term, String> {
    match v {
        SymValue::Atom(a) => Ok(Term::Atom(a.name.clone())),
        SymValue::Lit { value, .. } => Ok(Term::Const(u256_to_bigint(*value))),
        _ => Err(format!("{v} is not an atom or literal")),
    }
}

/// Negation-normal form with literals at the leaves.
fn form(v: &SymValue, positive: bool) -> Result<Form, String> {
    Ok(match v {
        SymValue::Lit { value, ty: Type::Bool } => {
            if value.is_zero() != positive {
                Form::True
            } else {
                Form::False
            }
        }
        SymValue::Atom(a) if a.ty == Type::Bool => Form::Lit(Literal::Bool(a.name.clone(), positive)),
        SymValue::Not(x) => form(x, !positive)?,
        SymValue::Bin { op, lhs, rhs } => match op {
            BinOp::And | BinOp::Or => {
                let parts = vec![form(lhs, positive)?, form(rhs, positive)?];
                if (*op == BinOp::And) == positive {
                    Form::And(parts)
                } else {
                    Form::Or(parts)
                }
            }
            BinOp::Eq | BinOp::Ne => {
                let equal = (*op == BinOp::Eq) == positive;
                match lhs.ty() {
                    Type::Bool => {
                        let (a, na) = (form(lhs, true)?, form(lhs, false)?);
                        let (b, nb) = (form(rhs, true)?, form(rhs, false)?);
                        if equal {
                            Form::Or(vec![Form::And(vec![a, b]), Form::And(vec![na, nb])])
                        } else {
                            Form::Or(vec![Form::And(vec![a, nb]), Form::And(vec![na, b])])
                        }
                    }
                    Type::Uint256 => Form::Lit(Literal::Arith(
                        linear(lhs)?.sub(linear(rhs)?),
                        if equal { Rel::Eq } else { Rel::Ne },
                    )),
                    sort => Form::Lit(Literal::Same { sort, a: term(lhs)?, b: term(rhs)?, equal }),
                }
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let (l, r) = (linear(lhs)?, linear(rhs)?);
                // Negation flips the relation: !(l < r) is r <= l.
                let lin = match (op, positive) {
                    (BinOp::Lt, true) | (BinOp::Ge, false) => l.sub(r).plus(1),
                    (BinOp::Le, true) | (BinOp::Gt, false) => l.sub(r),
                    (BinOp::Gt, true) | (BinOp::Le, false) => r.sub(l).plus(1),
                    _ => r.sub(l),
                };
                Form::Lit(Literal::Arith(lin, Rel::Le))
            }
            _ => return Err(format!("{v} is not a condition")),
        },
        _ => return Err(format!("{v} is not a condition")),
    })
}

enum Outcome {
    Sat(Model),
    Unsat,
    Unknown(String),
}

/// Decide a conjunction. SAT answers carry a model that has been checked
/// against every conjunct; a failed check downgrades to UNKNOWN.
pub fn solve(conjuncts: &[SymValue]) -> SatResult {
    solve_with(conjuncts, Limits::default())
}

pub fn solve_with(conjuncts: &[SymValue], limits: Limits) -> SatResult {
    let mut sorts: BTreeMap<String, Type> = BTreeMap::new();
    for c in conjuncts {
        if c.ty() != Type::Bool {
            return SatResult::unknown(format!("{c} is not a condition"));
        }
        for a in c.atoms() {
            if let Some(prev) = sorts.insert(a.name.clone(), a.ty) {
                if prev != a.ty {
                    return SatResult::unknown(format!("`{}` used at two sorts", a.name));
                }
            }
        }
    }
    let roots = match conjuncts.iter().map(|c| form(c, true)).collect::<Result<Vec<_>, _>>() {
        Ok(r) => r,
        Err(e) => return SatResult::unknown(e),
    };
    let mut unknown: Option<String> = None;
    let mut explored = 0usize;
    let mut stack: Vec<(Vec<Form>, Vec<Literal>)> = vec![(roots.into_iter().rev().collect(), Vec::new())];
    while let Some((mut pending, mut lits)) = stack.pop() {
        let mut dead = false;
        while let Some(f) = pending.pop() {
            match f {
                Form::True => {}
                Form::False => {
                    dead = true;
                    break;
                }
                Form::Lit(l) => lits.push(l),
                Form::And(parts) => pending.extend(parts.into_iter().rev()),
                Form::Or(alts) => {
                    for alt in alts.into_iter().rev() {
                        let mut p = pending.clone();
                        p.push(alt);
                        stack.push((p, lits.clone()));
                    }
                    dead = true;
                    break;
                }
            }
        }
        if dead {
            continue;
        }
        explored += 1;
        if explored > limits.cases {
            return SatResult::unknown("too many disjunctive cases");
        }
        match solve_case(&lits, &sorts, limits) {
            Outcome::Sat(model) => {
                if model.satisfies(conjuncts) {
                    return SatResult::sat(model);
                }
                unknown.get_or_insert_with(|| "model check failed".to_string());
            }
            Outcome::Unsat => {}
            Outcome::Unknown(why) => {
                unknown.get_or_insert(why);
            }
        }
    }
    match unknown {
        Some(why) => SatResult::unknown(why),
        None => SatResult::unsat(),
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.parent[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.parent[x] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Keep the smaller index as root so models are deterministic.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
    }
}

fn solve_case(lits: &[Literal], sorts: &BTreeMap<String, Type>, limits: Limits) -> Outcome {
    let mut model = Model::default();
    // Booleans.
    let mut bools: BTreeMap<&str, bool> = BTreeMap::new();
    for l in lits {
        if let Literal::Bool(n, v) = l {
            if bools.insert(n, *v).is_some_and(|old| old != *v) {
                return Outcome::Unsat;
            }
        }
    }
    // Equality sorts.
    let mut nodes: Vec<Term> = Vec::new();
    let mut sort_of: Vec<Type> = Vec::new();
    let index = |t: &Term, sort: Type, nodes: &mut Vec<Term>, sort_of: &mut Vec<Type>| -> usize {
        match nodes.iter().zip(sort_of.iter()).position(|(n, s)| n == t && *s == sort) {
            Some(i) => i,
            None => {
                nodes.push(t.clone());
                sort_of.push(sort);
                nodes.len() - 1
            }
        }
    };
    let mut eqs = Vec::new();
    let mut nes = Vec::new();
    for l in lits {
        if let Literal::Same { sort, a, b, equal } = l {
            let (ia, ib) = (index(a, *sort, &mut nodes, &mut sort_of), index(b, *sort, &mut nodes, &mut sort_of));
            if *equal {
                eqs.push((ia, ib));
            } else {
                nes.push((ia, ib));
            }
        }
    }
    let mut uf = UnionFind { parent: (0..nodes.len()).collect() };
    for (a, b) in eqs {
        uf.union(a, b);
    }
    let mut class_value: BTreeMap<usize, BigInt> = BTreeMap::new();
    for i in 0..nodes.len() {
        if let Term::Const(c) = &nodes[i] {
            let r = uf.find(i);
            if class_value.insert(r, c.clone()).is_some_and(|old| old != *c) {
                return Outcome::Unsat;
            }
        }
    }
    for (a, b) in nes {
        if uf.find(a) == uf.find(b) {
            return Outcome::Unsat;
        }
    }
    // Fresh values for classes without a constant, distinct from all constants.
    let used: Vec<BigInt> = class_value.values().cloned().collect();
    let mut next = BigInt::one();
    for i in 0..nodes.len() {
        let r = uf.find(i);
        if let std::collections::btree_map::Entry::Vacant(e) = class_value.entry(r) {
            while used.contains(&next) {
                next += 1;
            }
            e.insert(next.clone());
            next += 1;
        }
        if let Term::Atom(name) = &nodes[i] {
            model.values.insert(name.clone(), (sort_of[i], Concrete::Int(class_value[&r].clone())));
        }
    }
    // Arithmetic.
    let arith: Vec<(Linear, Rel)> = lits
        .iter()
        .filter_map(|l| match l {
            Literal::Arith(lin, rel) => Some((lin.clone(), *rel)),
            _ => None,
        })
        .collect();
    match solve_arith(&arith, limits.nodes) {
        Outcome::Sat(m) => model.values.extend(m.values),
        other => return other,
    }
    for (n, v) in bools {
        model.values.insert(n.to_string(), (Type::Bool, Concrete::Bool(v)));
    }
    // Atoms this case left unconstrained.
    for (n, ty) in sorts {
        model.values.entry(n.clone()).or_insert_with(|| {
            let v = match ty {
                Type::Bool => Concrete::Bool(false),
                Type::Uint256 => Concrete::Int(BigInt::zero()),
                // Distinct from every other address/bytes value in the model.
                _ => {
                    let v = next.clone();
                    next += 1;
                    Concrete::Int(v)
                }
            };
            (*ty, v)
        });
    }
    Outcome::Sat(model)
}

/// Integer constraint `sum + k REL 0` over dense variable indices.
#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, BigInt)>,
    k: BigInt,
}

impl Row {
    fn value(&self, x: &[BigInt]) -> BigInt {
        self.coeffs.iter().fold(self.k.clone(), |acc, (i, c)| acc + c * &x[*i])
    }
}

fn floor_div(a: &BigInt, b: &BigInt) -> BigInt {
    let q = a / b;
    if !(a % b).is_zero() && (a.is_negative() != b.is_negative()) {
        q - 1
    } else {
        q
    }
}

fn ceil_div(a: &BigInt, b: &BigInt) -> BigInt {
    -floor_div(&-a, b)
}

fn gcd(a: &BigInt, b: &BigInt) -> BigInt {
    let (mut a, mut b) = (a.abs(), b.abs());
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

struct Arith {
    les: Vec<Row>,
    nes: Vec<Row>,
}

fn solve_arith(cons: &[(Linear, Rel)], budget: usize) -> Outcome {
    let mut names: Vec<String> = Vec::new();
    for (lin, _) in cons {
        for n in lin.coeffs.keys() {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names.sort();
    let idx = |n: &str| names.binary_search_by(|x| x.as_str().cmp(n)).unwrap();
    let mut problem = Arith { les: Vec::new(), nes: Vec::new() };
    for (lin, rel) in cons {
        if lin.coeffs.is_empty() {
            let holds = match rel {
                Rel::Le => lin.k <= BigInt::zero(),
                Rel::Eq => lin.k.is_zero(),
                Rel::Ne => !lin.k.is_zero(),
            };
            if !holds {
                return Outcome::Unsat;
            }
            continue;
        }
        let g = lin.coeffs.values().fold(BigInt::zero(), |g, c| gcd(&g, c));
        let coeffs: Vec<(usize, BigInt)> = lin.coeffs.iter().map(|(n, c)| (idx(n), c / &g)).collect();
        match rel {
            Rel::Le => problem.les.push(Row { coeffs, k: ceil_div(&lin.k, &g) }),
            Rel::Eq | Rel::Ne if !(&lin.k % &g).is_zero() => {
                if *rel == Rel::Eq {
                    return Outcome::Unsat;
                }
            }
            Rel::Eq => {
                let k = &lin.k / &g;
                let neg: Vec<(usize, BigInt)> = coeffs.iter().map(|(i, c)| (*i, -c)).collect();
                problem.les.push(Row { coeffs, k: k.clone() });
                problem.les.push(Row { coeffs: neg, k: -k });
            }
            Rel::Ne => problem.nes.push(Row { coeffs, k: &lin.k / &g }),
        }
    }
    let n = names.len();
    let max = sort_max(Type::Uint256);
    let mut stack = vec![(vec![BigInt::zero(); n], vec![max; n])];
    let mut nodes = 0usize;
    while let Some((mut lo, mut hi)) = stack.pop() {
        nodes += 1;
        if nodes > budget {
            return Outcome::Unknown("arithmetic search budget exhausted".into());
        }
        if !problem.propagate(&mut lo, &mut hi) {
            continue;
        }
        let fm = problem.eliminate(&lo, &hi);
        if matches!(fm, Elimination::Infeasible) {
            continue;
        }
        let guess = match &fm {
            Elimination::Feasible(stages) => problem.back_substitute(stages),
            _ => None,
        };
        for cand in guess.iter().chain([&lo, &hi]) {
            if problem.holds(cand) {
                let mut m = Model::default();
                for (i, name) in names.iter().enumerate() {
                    m.values.insert(name.clone(), (Type::Uint256, Concrete::Int(cand[i].clone())));
                }
                return Outcome::Sat(m);
            }
        }
        // Split the widest variable of the first constraint violated at `lo`.
        let violated = problem
            .les
            .iter()
            .find(|r| r.value(&lo) > BigInt::zero())
            .or_else(|| problem.nes.iter().find(|r| r.value(&lo).is_zero()));
        let Some(row) = violated else { continue };
        let pick = row
            .coeffs
            .iter()
            .map(|(i, _)| *i)
            .filter(|i| lo[*i] < hi[*i])
            .max_by(|a, b| (&hi[*a] - &lo[*a]).cmp(&(&hi[*b] - &lo[*b])).then(b.cmp(a)));
        let Some(v) = pick else { continue };
        let mid = (&lo[v] + &hi[v]) >> 1;
        let (mut lo2, mut hi1) = (lo.clone(), hi.clone());
        lo2[v] = &mid + 1;
        hi1[v] = mid;
        stack.push((lo2, hi));
        stack.push((lo, hi1));
    }
    Outcome::Unsat
}

/// Result of Fourier-Motzkin elimination with integer tightening.
enum Elimination {
    Infeasible,
    /// `stages[v]` mentions only variables `v..n`.
    Feasible(Vec<Vec<Row>>),
    /// Row count blew past the cap; no conclusion.
    TooLarge,
}

const FM_ROW_CAP: usize = 2000;

/// Divide by the coefficient gcd, rounding the constant up. Integer points
/// of the row are unchanged.
fn tighten(coeffs: Vec<(usize, BigInt)>, k: BigInt) -> Row {
    let g = coeffs.iter().fold(BigInt::zero(), |g, (_, c)| gcd(&g, c));
    if g.is_zero() || g.is_one() {
        return Row { coeffs, k };
    }
    Row { coeffs: coeffs.into_iter().map(|(i, c)| (i, c / &g)).collect(), k: ceil_div(&k, &g) }
}

impl Arith {
    /// Eliminate variables in index order. Infeasibility here is a proof
    /// that no integer point exists within the bounds.
    fn eliminate(&self, lo: &[BigInt], hi: &[BigInt]) -> Elimination {
        let n = lo.len();
        let mut rows: Vec<Row> = self.les.clone();
        for i in 0..n {
            rows.push(Row { coeffs: vec![(i, -BigInt::one())], k: lo[i].clone() });
            rows.push(Row { coeffs: vec![(i, BigInt::one())], k: -&hi[i] });
        }
        let mut stages = Vec::with_capacity(n);
        for v in 0..n {
            let coeff = |r: &Row| r.coeffs.iter().find(|(i, _)| *i == v).map(|(_, c)| c.clone());
            let mut next: BTreeMap<Vec<(usize, BigInt)>, BigInt> = BTreeMap::new();
            let keep = |r: Row, next: &mut BTreeMap<Vec<(usize, BigInt)>, BigInt>| -> bool {
                if r.coeffs.is_empty() {
                    return !r.k.is_positive();
                }
                let e = next.entry(r.coeffs).or_insert_with(|| r.k.clone());
                if r.k > *e {
                    *e = r.k;
                }
                true
            };
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for r in &rows {
                match coeff(r) {
                    Some(c) if c.is_positive() => pos.push((c, r)),
                    Some(c) => neg.push((-c, r)),
                    None => {
                        if !keep(r.clone(), &mut next) {
                            return Elimination::Infeasible;
                        }
                    }
                }
            }
            if pos.len() * neg.len() + next.len() > FM_ROW_CAP {
                return Elimination::TooLarge;
            }
            for (cp, p) in &pos {
                for (cn, q) in &neg {
                    // cn * p + cp * q cancels v.
                    let mut acc: BTreeMap<usize, BigInt> = BTreeMap::new();
                    for (i, c) in &p.coeffs {
                        *acc.entry(*i).or_default() += c * cn;
                    }
                    for (i, c) in &q.coeffs {
                        *acc.entry(*i).or_default() += c * cp;
                    }
                    let coeffs: Vec<(usize, BigInt)> = acc.into_iter().filter(|(_, c)| !c.is_zero()).collect();
                    let row = tighten(coeffs, &p.k * cn + &q.k * cp);
                    if !keep(row, &mut next) {
                        return Elimination::Infeasible;
                    }
                }
            }
            stages.push(std::mem::replace(
                &mut rows,
                next.into_iter().map(|(coeffs, k)| Row { coeffs, k }).collect(),
            ));
        }
        Elimination::Feasible(stages)
    }

    /// Pick values from the last variable back to the first, each at the
    /// smallest admissible value avoiding fully assigned disequalities.
    fn back_substitute(&self, stages: &[Vec<Row>]) -> Option<Vec<BigInt>> {
        let n = stages.len();
        let mut x: Vec<Option<BigInt>> = vec![None; n];
        for v in (0..n).rev() {
            let (mut low, mut high): (Option<BigInt>, Option<BigInt>) = (None, None);
            for r in &stages[v] {
                let Some((_, c)) = r.coeffs.iter().find(|(i, _)| *i == v) else { continue };
                let rest = r
                    .coeffs
                    .iter()
                    .filter(|(i, _)| *i != v)
                    .try_fold(r.k.clone(), |acc, (i, c)| x[*i].as_ref().map(|xi| acc + c * xi))?;
                if c.is_positive() {
                    let b = floor_div(&-&rest, c);
                    high = Some(high.map_or(b.clone(), |h| h.min(b)));
                } else {
                    let b = ceil_div(&-&rest, c);
                    low = Some(low.map_or(b.clone(), |l| l.max(b)));
                }
            }
            let mut val = low.unwrap_or_else(BigInt::zero);
            for _ in 0..=self.nes.len() {
                let clash = self.nes.iter().any(|r| {
                    r.coeffs.iter().any(|(i, _)| *i == v)
                        && r.coeffs.iter().all(|(i, _)| *i == v || x[*i].is_some())
                        && r.coeffs.iter().fold(r.k.clone(), |acc, (i, c)| {
                            acc + c * if *i == v { &val } else { x[*i].as_ref().unwrap() }
                        })
                        .is_zero()
                });
                if !clash {
                    break;
                }
                val += 1;
            }
            if high.as_ref().is_some_and(|h| val > *h) {
                return None;
            }
            x[v] = Some(val);
        }
        x.into_iter().collect()
    }

    fn holds(&self, x: &[BigInt]) -> bool {
        self.les.iter().all(|r| r.value(x) <= BigInt::zero()) && self.nes.iter().all(|r| !r.value(x).is_zero())
    }

    /// Tighten bounds; false on conflict.
    fn propagate(&self, lo: &mut [BigInt], hi: &mut [BigInt]) -> bool {
        if !self.difference_closure(lo, hi) {
            return false;
        }
        for _ in 0..16 {
            let mut changed = false;
            for r in &self.les {
                let min_of = |i: usize, c: &BigInt, lo: &[BigInt], hi: &[BigInt]| {
                    if c.is_positive() {
                        c * &lo[i]
                    } else {
                        c * &hi[i]
                    }
                };
                let total = r.coeffs.iter().fold(r.k.clone(), |acc, (i, c)| acc + min_of(*i, c, lo, hi));
                if total.is_positive() {
                    return false;
                }
                for (i, c) in &r.coeffs {
                    // c * x_i <= -(total - min(c * x_i))
                    let rest = -(&total - min_of(*i, c, lo, hi));
                    if c.is_positive() {
                        let b = floor_div(&rest, c);
                        if b < hi[*i] {
                            hi[*i] = b;
                            changed = true;
                        }
                    } else {
                        let b = ceil_div(&rest, c);
                        if b > lo[*i] {
                            lo[*i] = b;
                            changed = true;
                        }
                    }
                    if lo[*i] > hi[*i] {
                        return false;
                    }
                }
            }
            for r in &self.nes {
                let free: Vec<&(usize, BigInt)> = r.coeffs.iter().filter(|(i, _)| lo[*i] < hi[*i]).collect();
                match free.as_slice() {
                    [] => {
                        if r.value(lo).is_zero() {
                            return false;
                        }
                    }
                    [(j, c)] => {
                        let rest = r
                            .coeffs
                            .iter()
                            .filter(|(i, _)| i != j)
                            .fold(r.k.clone(), |acc, (i, c)| acc + c * &lo[*i]);
                        if (&rest % c).is_zero() {
                            let t = -(&rest / c);
                            if t == lo[*j] {
                                lo[*j] += 1;
                                changed = true;
                            } else if t == hi[*j] {
                                hi[*j] -= 1;
                                changed = true;
                            }
                        }
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
        }
        true
    }

    /// Shortest-path closure over the constraints of the form
    /// `x - y + k <= 0` together with the bounds. Detects infeasible cycles
    /// that interval propagation would only approach one step at a time.
    fn difference_closure(&self, lo: &mut [BigInt], hi: &mut [BigInt]) -> bool {
        let n = lo.len();
        let z = n;
        let mut edges: Vec<(usize, usize, BigInt)> = Vec::new();
        for r in &self.les {
            if let [(a, ca), (b, cb)] = r.coeffs.as_slice() {
                let one = BigInt::one();
                // x_p - x_m <= -k  is an edge m -> p of weight -k.
                if *ca == one && *cb == -&one {
                    edges.push((*b, *a, -&r.k));
                } else if *ca == -&one && *cb == one {
                    edges.push((*a, *b, -&r.k));
                }
            }
        }
        if edges.is_empty() {
            return true;
        }
        for i in 0..n {
            edges.push((z, i, hi[i].clone()));
            edges.push((i, z, -&lo[i]));
        }
        let shortest = |edges: &[(usize, usize, BigInt)], reverse: bool| -> Option<Vec<Option<BigInt>>> {
            let mut dist: Vec<Option<BigInt>> = vec![None; n + 1];
            dist[z] = Some(BigInt::zero());
            for round in 0..=n + 1 {
                let mut changed = false;
                for (u, v, w) in edges {
                    let (u, v) = if reverse { (v, u) } else { (u, v) };
                    if let Some(du) = dist[*u].clone() {
                        let cand = du + w;
                        if dist[*v].as_ref().is_none_or(|dv| cand < *dv) {
                            dist[*v] = Some(cand);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    return Some(dist);
                }
                if round == n + 1 {
                    return None;
                }
            }
            Some(dist)
        };
        let Some(up) = shortest(&edges, false) else { return false };
        let Some(down) = shortest(&edges, true) else { return false };
        for i in 0..n {
            if let Some(d) = &up[i] {
                if *d < hi[i] {
                    hi[i] = d.clone();
                }
            }
            if let Some(d) = &down[i] {
                if -d > lo[i] {
                    lo[i] = -d;
                }
            }
            if lo[i] > hi[i] {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexec::sym::AtomKind;

    fn u(n: &str) -> SymValue {
        SymValue::atom(AtomKind::FreeVar, n, Type::Uint256)
    }

    fn a(n: &str) -> SymValue {
        SymValue::atom(AtomKind::FreeVar, n, Type::Address)
    }

    fn b(op: BinOp, l: SymValue, r: SymValue) -> SymValue {
        SymValue::bin(op, l, r)
    }

    #[test]
    fn contradictory_interval() {
        let r = solve(&[b(BinOp::Gt, u("x"), SymValue::uint(0)), b(BinOp::Eq, u("x"), SymValue::uint(0))]);
        assert_eq!(r.verdict, Verdict::Unsat);
    }

    #[test]
    fn address_equality_contradiction() {
        let r = solve(&[b(BinOp::Eq, a("a"), a("b")), b(BinOp::Ne, a("b"), a("a"))]);
        assert_eq!(r.verdict, Verdict::Unsat);
        let r = solve(&[b(BinOp::Eq, a("a"), a("b")), b(BinOp::Ne, a("b"), a("c"))]);
        assert_eq!(r.verdict, Verdict::Sat);
    }

    #[test]
    fn empty_is_sat() {
        assert_eq!(solve(&[]).verdict, Verdict::Sat);
    }

    #[test]
    fn difference_cycle_is_unsat_quickly() {
        // x < y, y < x: interval propagation alone would need 2^256 steps.
        let r = solve(&[b(BinOp::Lt, u("x"), u("y")), b(BinOp::Lt, u("y"), u("x"))]);
        assert_eq!(r.verdict, Verdict::Unsat);
    }

    #[test]
    fn upper_bound_of_uint256() {
        let max = SymValue::Lit { value: ruint::aliases::U256::MAX, ty: Type::Uint256 };
        let r = solve(&[b(BinOp::Gt, u("x"), max.clone())]);
        assert_eq!(r.verdict, Verdict::Unsat);
        let r = solve(&[b(BinOp::Ge, u("x"), max)]);
        assert_eq!(r.verdict, Verdict::Sat);
    }

    #[test]
    fn disjunction_and_booleans() {
        let ok = SymValue::atom(AtomKind::CallSuccessSym, "ok", Type::Bool);
        let r = solve(&[
            b(BinOp::Or, ok.clone(), b(BinOp::Gt, u("x"), SymValue::uint(5))),
            ok.clone().not(),
        ]);
        assert_eq!(r.verdict, Verdict::Sat);
        let m = r.model.unwrap();
        assert_eq!(m.bool("ok"), Some(false));
        assert!(m.int("x").unwrap() > &BigInt::from(5));
    }

    #[test]
    fn linear_with_coefficients() {
        // 2x + 3y == 7, x != 2  has x=... 2*2+3*1=7 excluded; 2x=7-3y -> y odd: y=1 -> x=2 only.
        let two_x = b(BinOp::Mul, SymValue::uint(2), u("x"));
        let three_y = b(BinOp::Mul, SymValue::uint(3), u("y"));
        let sum = b(BinOp::Add, two_x, three_y);
        let r = solve(&[b(BinOp::Eq, sum.clone(), SymValue::uint(7)), b(BinOp::Ne, u("x"), SymValue::uint(2))]);
        assert_eq!(r.verdict, Verdict::Unsat);
        let r = solve(&[b(BinOp::Eq, sum, SymValue::uint(7))]);
        assert_eq!(r.verdict, Verdict::Sat);
    }

    #[test]
    fn nonlinear_is_unknown() {
        let r = solve(&[b(BinOp::Eq, b(BinOp::Mul, u("x"), u("y")), SymValue::uint(6))]);
        assert_eq!(r.verdict, Verdict::Unknown);
    }

    #[test]
    fn bool_equality_splits() {
        let p = SymValue::atom(AtomKind::FreeVar, "p", Type::Bool);
        let r = solve(&[b(BinOp::Eq, p.clone(), SymValue::bool(true)), p.clone().not()]);
        assert_eq!(r.verdict, Verdict::Unsat);
    }
}
