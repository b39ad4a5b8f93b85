//! Fourier transform, convolution, and cross-correlation on finite abelian
//! groups.
//!
//! Normalization follows the expectation convention with the `+2 pi i` sign:
//! `fhat(chi) = (1/|G|) sum_x f(x) chi(x)`. Under it, Parseval reads
//! `sum_chi |fhat(chi)|^2 = E_x |f(x)|^2` and the trivial coefficient is the
//! mean. The direct `O(|G|^2)` summation is the reference; `transform` runs a
//! per-factor decimation pass with the same normalization and must agree with
//! the reference to 1e-9 (checked in tests).

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupFunction};
use crate::par;
use num_complex::Complex64;

/// Complex table indexed by characters (or elements).
#[derive(Debug, Clone)]
pub struct ComplexTable {
    pub group: GroupDescriptor,
    pub values: Vec<Complex64>,
}

impl ComplexTable {
    pub fn from_real(f: &GroupFunction) -> Self {
        ComplexTable {
            group: f.group.clone(),
            values: f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn check_cap(group: &GroupDescriptor, cap: usize) -> Result<()> {
    if group.len() > cap {
        return Err(Error::Resource(format!(
            "group order {} exceeds transform cap {}",
            group.order(),
            cap
        )));
    }
    Ok(())
}

/// Reference transform by direct summation.
pub fn transform_reference(f: &ComplexTable, cap: usize) -> Result<ComplexTable> {
    check_cap(&f.group, cap)?;
    let g = &f.group;
    let n = g.len();
    let values = par::map_collect(n, |chi| {
        let mut acc = Complex64::new(0.0, 0.0);
        for x in 0..n {
            acc += f.values[x] * g.char_eval(chi, x);
        }
        acc / n as f64
    });
    Ok(ComplexTable {
        group: g.clone(),
        values,
    })
}

/// Per-factor decimation: transform along each coordinate axis in turn.
pub fn transform(f: &ComplexTable, cap: usize) -> Result<ComplexTable> {
    check_cap(&f.group, cap)?;
    let g = &f.group;
    let n = g.len();
    let mut data = f.values.clone();
    // Strides for mixed-radix lexicographic index (first factor most
    // significant): stride of axis j is the product of later factor sizes.
    let factors = g.factors();
    let mut strides = vec![1usize; factors.len()];
    for j in (0..factors.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * factors[j + 1] as usize;
    }
    for (j, &fj) in factors.iter().enumerate() {
        let fj = fj as usize;
        let stride = strides[j];
        // Twiddle row: e(+2 pi i a b / fj).
        let mut tw = vec![Complex64::new(0.0, 0.0); fj * fj];
        for a in 0..fj {
            for b in 0..fj {
                let theta = 2.0 * std::f64::consts::PI * ((a * b) % fj) as f64 / fj as f64;
                tw[a * fj + b] = Complex64::new(theta.cos(), theta.sin());
            }
        }
        let lines = n / fj;
        let out: Vec<Complex64> = par::map_collect(n, |idx| {
            // Position of idx along axis j and the base offset of its line.
            let a = (idx / stride) % fj;
            let base = idx - a * stride;
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..fj {
                acc += data[base + b * stride] * tw[a * fj + b];
            }
            acc
        });
        debug_assert_eq!(out.len(), lines * fj);
        data = out;
    }
    for v in &mut data {
        *v /= n as f64;
    }
    Ok(ComplexTable {
        group: g.clone(),
        values: data,
    })
}

/// Inverse transform: `f(x) = sum_chi fhat(chi) chi(-x)`.
pub fn inverse_transform(fhat: &ComplexTable, cap: usize) -> Result<ComplexTable> {
    check_cap(&fhat.group, cap)?;
    let g = &fhat.group;
    let n = g.len();
    let values = par::map_collect(n, |x| {
        let nx = g.neg(x);
        let mut acc = Complex64::new(0.0, 0.0);
        for chi in 0..n {
            acc += fhat.values[chi] * g.char_eval(chi, nx);
        }
        acc
    });
    Ok(ComplexTable {
        group: g.clone(),
        values,
    })
}

/// Transform of a real function.
pub fn transform_real(f: &GroupFunction, cap: usize) -> Result<ComplexTable> {
    transform(&ComplexTable::from_real(f), cap)
}

/// `f*g(x) = E_y f(y) g(x-y)`.
pub fn convolution(f: &GroupFunction, g: &GroupFunction) -> Result<GroupFunction> {
    same_group(f, g)?;
    let grp = &f.group;
    let n = grp.len();
    let values = par::map_collect(n, |x| {
        let mut acc = 0.0;
        for y in 0..n {
            acc += f.values[y] * g.values[grp.sub(x, y)];
        }
        acc / n as f64
    });
    GroupFunction::new(grp.clone(), values)
}

/// `f star g(x) = E_y f(y) g(x+y)`.
pub fn cross_correlation(f: &GroupFunction, g: &GroupFunction) -> Result<GroupFunction> {
    same_group(f, g)?;
    let grp = &f.group;
    let n = grp.len();
    let values = par::map_collect(n, |x| {
        let mut acc = 0.0;
        for y in 0..n {
            acc += f.values[y] * g.values[grp.add(x, y)];
        }
        acc / n as f64
    });
    GroupFunction::new(grp.clone(), values)
}

/// `<f, g> = E_x f(x) g(x)`.
pub fn inner_product(f: &GroupFunction, g: &GroupFunction) -> Result<f64> {
    same_group(f, g)?;
    let n = f.group.len();
    Ok(par::sum_f64(n, |x| f.values[x] * g.values[x]) / n as f64)
}

fn same_group(f: &GroupFunction, g: &GroupFunction) -> Result<()> {
    if f.group != g.group {
        return Err(Error::Structural(format!(
            "functions live on different groups ({} vs {})",
            f.group, g.group
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupDescriptor;

    const CAP: usize = 1 << 20;

    fn rand_values(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64) / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn constant_function_transform() {
        let g = GroupDescriptor::parse("Z6xZ5").unwrap();
        let f = GroupFunction::constant(g.clone(), 1.0);
        let fhat = transform_real(&f, CAP).unwrap();
        assert!((fhat.values[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        for chi in 1..g.len() {
            assert!(fhat.values[chi].norm() < 1e-12);
        }
    }

    #[test]
    fn delta_transform_is_flat() {
        let g = GroupDescriptor::parse("Z8").unwrap();
        let mut values = vec![0.0; g.len()];
        values[0] = g.len() as f64;
        let f = GroupFunction::new(g.clone(), values).unwrap();
        let fhat = transform_real(&f, CAP).unwrap();
        for chi in 0..g.len() {
            assert!((fhat.values[chi] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_agrees_with_reference_and_inverts() {
        for spec in ["Z8", "Z3xZ4", "F5^2"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            let f = GroupFunction::new(g.clone(), rand_values(g.len(), 7)).unwrap();
            let table = ComplexTable::from_real(&f);
            let fast = transform(&table, CAP).unwrap();
            let slow = transform_reference(&table, CAP).unwrap();
            for chi in 0..g.len() {
                assert!((fast.values[chi] - slow.values[chi]).norm() < 1e-9);
            }
            let back = inverse_transform(&fast, CAP).unwrap();
            for x in 0..g.len() {
                assert!((back.values[x] - table.values[x]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval() {
        let g = GroupDescriptor::parse("Z7xZ3").unwrap();
        let f = GroupFunction::new(g.clone(), rand_values(g.len(), 99)).unwrap();
        let fhat = transform_real(&f, CAP).unwrap();
        let lhs: f64 = fhat.values.iter().map(|v| v.norm_sqr()).sum();
        let rhs: f64 = f.values.iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn convolution_identities() {
        let g = GroupDescriptor::parse("Z5").unwrap();
        // indicator{1} * indicator{2} = (1/5) indicator{3}
        let mut a = vec![0.0; 5];
        a[1] = 1.0;
        let mut b = vec![0.0; 5];
        b[2] = 1.0;
        let fa = GroupFunction::new(g.clone(), a).unwrap();
        let fb = GroupFunction::new(g.clone(), b).unwrap();
        let conv = convolution(&fa, &fb).unwrap();
        for x in 0..5 {
            let expect = if x == 3 { 0.2 } else { 0.0 };
            assert!((conv.values[x] - expect).abs() < 1e-12);
        }
        // f * (|G| delta_0) = f exactly
        let f = GroupFunction::new(g.clone(), rand_values(5, 3)).unwrap();
        let mut delta = vec![0.0; 5];
        delta[0] = 5.0;
        let d = GroupFunction::new(g.clone(), delta).unwrap();
        let conv = convolution(&f, &d).unwrap();
        assert_eq!(conv.values, f.values);
    }

    #[test]
    fn adjoint_identity() {
        let g = GroupDescriptor::parse("Z7").unwrap();
        let f = GroupFunction::new(g.clone(), rand_values(7, 1)).unwrap();
        let h = GroupFunction::new(g.clone(), rand_values(7, 2)).unwrap();
        let k = GroupFunction::new(g.clone(), rand_values(7, 3)).unwrap();
        let lhs = inner_product(&convolution(&f, &h).unwrap(), &k).unwrap();
        let rhs = inner_product(&f, &cross_correlation(&h, &k).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transform_diagonalizes_convolution() {
        let g = GroupDescriptor::parse("Z4xZ3").unwrap();
        let f = GroupFunction::new(g.clone(), rand_values(g.len(), 11)).unwrap();
        let h = GroupFunction::new(g.clone(), rand_values(g.len(), 12)).unwrap();
        let conv_hat = transform_real(&convolution(&f, &h).unwrap(), CAP).unwrap();
        let fhat = transform_real(&f, CAP).unwrap();
        let hhat = transform_real(&h, CAP).unwrap();
        for chi in 0..g.len() {
            let prod = fhat.values[chi] * hhat.values[chi];
            assert!((conv_hat.values[chi] - prod).norm() < 1e-9);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let g = GroupDescriptor::parse("Z64").unwrap();
        let f = GroupFunction::constant(g, 1.0);
        assert!(matches!(
            transform_real(&f, 32),
            Err(Error::Resource(_))
        ));
    }
}
