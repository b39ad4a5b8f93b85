//! Sum-product evaluation of factored tables by greedy vertex elimination.
//!
//! Both exact pattern counting (u128 weights) and real-valued homomorphism
//! densities (f64 weights) run through this engine. Elimination order is
//! greedy by smallest projected table, with ties broken by variable index, so
//! runs are deterministic.

use crate::error::{Error, Result};
use crate::par;

/// Weight semiring. `u128` gives exact counts, `f64` real expectations.
pub trait Weight: Copy + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(self, other: Self) -> Self;
    fn mul(self, other: Self) -> Self;
    fn from_count(c: u64) -> Self;
}

impl Weight for u128 {
    fn zero() -> Self {
        0
    }
    fn one() -> Self {
        1
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn mul(self, other: Self) -> Self {
        self * other
    }
    fn from_count(c: u64) -> Self {
        c as u128
    }
}

impl Weight for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn mul(self, other: Self) -> Self {
        self * other
    }
    fn from_count(c: u64) -> Self {
        c as f64
    }
}

/// A table over a sorted scope of variables, mixed-radix indexed (first
/// scope variable most significant).
#[derive(Debug, Clone)]
pub struct Factor<T> {
    pub vars: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Weight> Factor<T> {
    pub fn new(vars: Vec<usize>, values: Vec<T>) -> Self {
        Factor { vars, values }
    }
}

/// Sum over all assignments of the product of factors. Variables in
/// `0..domains.len()`; a variable appearing in no factor contributes a
/// multiplicative `|domain|`.
pub fn sum_product<T: Weight>(
    domains: &[usize],
    mut factors: Vec<Factor<T>>,
    table_budget: usize,
) -> Result<T> {
    for f in &factors {
        let expect: usize = f.vars.iter().map(|&v| domains[v]).product();
        assert_eq!(f.values.len(), expect, "factor table size mismatch");
    }
    let mut active: Vec<bool> = vec![false; domains.len()];
    for f in &factors {
        for &v in &f.vars {
            active[v] = true;
        }
    }

    // Eliminate active variables one by one.
    let mut remaining: Vec<usize> = (0..domains.len()).filter(|&v| active[v]).collect();
    while !remaining.is_empty() {
        // Pick the variable whose elimination produces the smallest table.
        let mut best: Option<(usize, usize)> = None; // (projected size, var)
        for &v in &remaining {
            let mut scope: Vec<usize> = Vec::new();
            for f in &factors {
                if f.vars.contains(&v) {
                    for &w in &f.vars {
                        if w != v && !scope.contains(&w) {
                            scope.push(w);
                        }
                    }
                }
            }
            let size: usize = scope
                .iter()
                .map(|&w| domains[w])
                .try_fold(1usize, |acc, s| acc.checked_mul(s))
                .unwrap_or(usize::MAX);
            if best.map_or(true, |(bs, bv)| size < bs || (size == bs && v < bv)) {
                best = Some((size, v));
            }
        }
        let (new_size, v) = best.unwrap();
        if new_size == usize::MAX || new_size > table_budget {
            return Err(Error::Resource(format!(
                "elimination table for variable {v} needs {new_size} entries (budget {table_budget})"
            )));
        }
        let (touching, rest): (Vec<Factor<T>>, Vec<Factor<T>>) =
            factors.into_iter().partition(|f| f.vars.contains(&v));
        factors = rest;
        factors.push(eliminate_var(domains, v, &touching, new_size));
        remaining.retain(|&w| w != v);
    }

    // All remaining factors are scalars.
    let mut total = T::one();
    for f in factors {
        debug_assert!(f.vars.is_empty());
        total = total.mul(f.values[0]);
    }
    let inactive: u64 = domains
        .iter()
        .enumerate()
        .filter(|&(v, _)| !active[v])
        .map(|(_, &s)| s as u64)
        .product();
    Ok(total.mul(T::from_count(inactive)))
}

fn eliminate_var<T: Weight>(
    domains: &[usize],
    v: usize,
    touching: &[Factor<T>],
    new_size: usize,
) -> Factor<T> {
    let mut scope: Vec<usize> = Vec::new();
    for f in touching {
        for &w in &f.vars {
            if w != v && !scope.contains(&w) {
                scope.push(w);
            }
        }
    }
    scope.sort_unstable();
    let sizes: Vec<usize> = scope.iter().map(|&w| domains[w]).collect();
    let vd = domains[v];

    // For each touching factor, precompute the stride of each scope variable
    // (0 when the factor does not depend on it) and the stride of v.
    struct Access {
        scope_strides: Vec<usize>,
        v_stride: usize,
    }
    let access: Vec<Access> = touching
        .iter()
        .map(|f| {
            let mut strides = vec![0usize; f.vars.len()];
            let mut s = 1usize;
            for (k, &w) in f.vars.iter().enumerate().rev() {
                strides[k] = s;
                s *= domains[w];
            }
            let mut scope_strides = vec![0usize; scope.len()];
            let mut v_stride = 0usize;
            for (k, &w) in f.vars.iter().enumerate() {
                if w == v {
                    v_stride = strides[k];
                } else {
                    let pos = scope.iter().position(|&u| u == w).unwrap();
                    scope_strides[pos] = strides[k];
                }
            }
            Access {
                scope_strides,
                v_stride,
            }
        })
        .collect();

    let values: Vec<T> = par::map_collect(new_size.max(1), |flat| {
        // Decode the scope assignment from the flat index.
        let mut idx = flat;
        let mut assign = vec![0usize; scope.len()];
        for k in (0..scope.len()).rev() {
            assign[k] = idx % sizes[k];
            idx /= sizes[k];
        }
        let bases: Vec<usize> = access
            .iter()
            .map(|a| {
                a.scope_strides
                    .iter()
                    .zip(&assign)
                    .map(|(&st, &c)| st * c)
                    .sum()
            })
            .collect();
        let mut acc = T::zero();
        for c in 0..vd {
            let mut prod = T::one();
            for (k, f) in touching.iter().enumerate() {
                prod = prod.mul(f.values[bases[k] + access[k].v_stride * c]);
            }
            acc = acc.add(prod);
        }
        acc
    });
    Factor {
        vars: scope,
        values,
    }
}

/// Brute-force oracle: enumerate every assignment.
pub fn brute_force_sum<T: Weight>(domains: &[usize], factors: &[Factor<T>]) -> T {
    let total: usize = domains.iter().product();
    let mut acc = T::zero();
    for flat in 0..total {
        let mut idx = flat;
        let mut assign = vec![0usize; domains.len()];
        for v in (0..domains.len()).rev() {
            assign[v] = idx % domains[v];
            idx /= domains[v];
        }
        let mut prod = T::one();
        for f in factors {
            let mut pos = 0usize;
            for &w in &f.vars {
                pos = pos * domains[w] + assign[w];
            }
            prod = prod.mul(f.values[pos]);
        }
        acc = acc.add(prod);
    }
    acc
}
