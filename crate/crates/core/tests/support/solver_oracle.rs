//! Random linear conjunctions over three variables and a brute-force
//! evaluator that shares nothing with the solver.

use phantomscan_core::minisol::{BinOp, Type};
use phantomscan_core::symexec::{AtomKind, Model, SymValue};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum T {
    Var(usize),
    Lit(i64),
    Add(Box<T>, Box<T>),
    Sub(Box<T>, Box<T>),
    Scale(i64, Box<T>),
}

#[derive(Debug, Clone)]
pub enum F {
    Cmp(BinOp, T, T),
    Not(Box<F>),
    And(Box<F>, Box<F>),
    Or(Box<F>, Box<F>),
}

pub fn term_val(t: &T, x: &[i64; 3]) -> i64 {
    match t {
        T::Var(i) => x[*i],
        T::Lit(k) => *k,
        T::Add(a, b) => term_val(a, x) + term_val(b, x),
        T::Sub(a, b) => term_val(a, x) - term_val(b, x),
        T::Scale(k, a) => k * term_val(a, x),
    }
}

pub fn holds(f: &F, x: &[i64; 3]) -> bool {
    match f {
        F::Cmp(op, a, b) => {
            let (a, b) = (term_val(a, x), term_val(b, x));
            match op {
                BinOp::Eq => a == b,
                BinOp::Ne => a != b,
                BinOp::Lt => a < b,
                BinOp::Le => a <= b,
                BinOp::Gt => a > b,
                _ => a >= b,
            }
        }
        F::Not(g) => !holds(g, x),
        F::And(g, h) => holds(g, x) && holds(h, x),
        F::Or(g, h) => holds(g, x) || holds(h, x),
    }
}

pub const NAMES: [&str; 3] = ["x", "y", "z"];

pub fn term_sym(t: &T) -> SymValue {
    match t {
        T::Var(i) => SymValue::atom(AtomKind::FreeVar, NAMES[*i], Type::Uint256),
        T::Lit(k) => SymValue::uint(*k as u64),
        T::Add(a, b) => SymValue::bin(BinOp::Add, term_sym(a), term_sym(b)),
        T::Sub(a, b) => SymValue::bin(BinOp::Sub, term_sym(a), term_sym(b)),
        T::Scale(k, a) => SymValue::bin(BinOp::Mul, SymValue::uint(*k as u64), term_sym(a)),
    }
}

pub fn form_sym(f: &F) -> SymValue {
    match f {
        F::Cmp(op, a, b) => SymValue::bin(*op, term_sym(a), term_sym(b)),
        F::Not(g) => SymValue::Not(Box::new(form_sym(g))),
        F::And(g, h) => SymValue::bin(BinOp::And, form_sym(g), form_sym(h)),
        F::Or(g, h) => SymValue::bin(BinOp::Or, form_sym(g), form_sym(h)),
    }
}

pub fn term_strategy() -> impl Strategy<Value = T> {
    let leaf = prop_oneof![(0usize..3).prop_map(T::Var), (0i64..10).prop_map(T::Lit)];
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Sub(Box::new(a), Box::new(b))),
            (1i64..4, inner).prop_map(|(k, a)| T::Scale(k, Box::new(a))),
        ]
    })
}

pub fn form_strategy() -> impl Strategy<Value = F> {
    let op = prop::sample::select(vec![BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge]);
    let atom = (op, term_strategy(), term_strategy()).prop_map(|(o, a, b)| F::Cmp(o, a, b));
    atom.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            3 => inner.clone(),
            1 => inner.clone().prop_map(|g| F::Not(Box::new(g))),
            1 => (inner.clone(), inner.clone()).prop_map(|(g, h)| F::Or(Box::new(g), Box::new(h))),
            1 => (inner.clone(), inner).prop_map(|(g, h)| F::And(Box::new(g), Box::new(h))),
        ]
    })
}

pub fn bounded(fs: &[F]) -> (Vec<F>, Vec<SymValue>) {
    let mut all: Vec<F> = (0..3).map(|i| F::Cmp(BinOp::Le, T::Var(i), T::Lit(7))).collect();
    all.extend(fs.iter().cloned());
    let syms = all.iter().map(form_sym).collect();
    (all, syms)
}

pub fn brute(fs: &[F]) -> bool {
    (0..512).any(|n| {
        let x = [n & 7, (n >> 3) & 7, n >> 6];
        fs.iter().all(|f| holds(f, &x))
    })
}

pub fn model_point(m: &Model) -> [i64; 3] {
    let g = |n: &str| m.int(n).map_or(0, |v| i64::try_from(v.clone()).unwrap());
    [g("x"), g("y"), g("z")]
}

