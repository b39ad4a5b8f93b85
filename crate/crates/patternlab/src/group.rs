//! Finite abelian groups as products of cyclic factors, their elements,
//! characters, and the element/set/function file formats.
//!
//! Elements are enumerated in mixed-radix lexicographic order over the
//! factors (first factor most significant), so every table in the crate and
//! every file we emit is reproducible bit-for-bit.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// A finite abelian group `Z_{N_1} x ... x Z_{N_r}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupDescriptor {
    factors: Vec<u64>,
    order: u64,
    label: String,
}

/// An element as a coordinate vector, one entry per factor, each reduced
/// modulo its factor. Inner loops work with flat indices instead; see
/// [`GroupDescriptor::index_of`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub coords: Vec<u64>,
}

/// An index into the dual group; same coordinate shape as an element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharacterIndex {
    pub coords: Vec<u64>,
}

impl GroupDescriptor {
    pub fn new(factors: Vec<u64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Domain("group needs at least one factor".into()));
        }
        let mut order: u64 = 1;
        for &f in &factors {
            if f < 2 {
                return Err(Error::Domain(format!("factor {f} < 2")));
            }
            order = order
                .checked_mul(f)
                .ok_or_else(|| Error::Domain("group order overflows u64".into()))?;
        }
        let label = factors
            .iter()
            .map(|f| format!("Z{f}"))
            .collect::<Vec<_>>()
            .join("x");
        Ok(GroupDescriptor {
            factors,
            order,
            label,
        })
    }

    /// Parse a descriptor string: `"Z13"`, `"F5^3"`, `"Z4xZ9"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut factors = Vec::new();
        for token in spec.split(['x', 'X']) {
            let token = token.trim();
            if let Some(rest) = token.strip_prefix(['Z', 'z']) {
                let n: u64 = rest
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad group token {token:?}")))?;
                factors.push(n);
            } else if let Some(rest) = token.strip_prefix(['F', 'f']) {
                let (q, k) = match rest.split_once('^') {
                    Some((q, k)) => (
                        q.parse::<u64>()
                            .map_err(|_| Error::Domain(format!("bad group token {token:?}")))?,
                        k.parse::<u32>()
                            .map_err(|_| Error::Domain(format!("bad group token {token:?}")))?,
                    ),
                    None => (
                        rest.parse::<u64>()
                            .map_err(|_| Error::Domain(format!("bad group token {token:?}")))?,
                        1,
                    ),
                };
                factors.extend(std::iter::repeat(q).take(k as usize));
            } else {
                return Err(Error::Domain(format!("bad group token {token:?}")));
            }
        }
        GroupDescriptor::new(factors)
    }

    pub fn factors(&self) -> &[u64] {
        &self.factors
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    /// Group order as a usize table length.
    pub fn len(&self) -> usize {
        self.order as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn zero(&self) -> usize {
        0
    }

    /// Flat index of a coordinate vector (mixed-radix, first factor most
    /// significant).
    pub fn index_of(&self, coords: &[u64]) -> usize {
        debug_assert_eq!(coords.len(), self.factors.len());
        let mut idx: u64 = 0;
        for (c, f) in coords.iter().zip(&self.factors) {
            idx = idx * f + (c % f);
        }
        idx as usize
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<u64> {
        let mut coords = vec![0u64; self.factors.len()];
        for (slot, &f) in coords.iter_mut().zip(&self.factors).rev() {
            *slot = (idx as u64) % f;
            idx /= f as usize;
        }
        coords
    }

    pub fn element(&self, idx: usize) -> GroupElement {
        GroupElement {
            coords: self.coords_of(idx),
        }
    }

    /// Reduce a signed coordinate vector into the canonical range.
    pub fn reduce(&self, coords: &[i64]) -> Result<GroupElement> {
        if coords.len() != self.factors.len() {
            return Err(Error::Structural(format!(
                "expected {} coordinates, got {}",
                self.factors.len(),
                coords.len()
            )));
        }
        let coords = coords
            .iter()
            .zip(&self.factors)
            .map(|(&c, &f)| c.rem_euclid(f as i64) as u64)
            .collect();
        Ok(GroupElement { coords })
    }

    /// `x + y` on flat indices.
    pub fn add(&self, x: usize, y: usize) -> usize {
        if self.factors.len() == 1 {
            let n = self.factors[0] as usize;
            return (x + y) % n;
        }
        let (mut x, mut y) = (x as u64, y as u64);
        let mut idx: u64 = 0;
        let mut stride: u64 = 1;
        for &f in self.factors.iter().rev() {
            let (cx, cy) = (x % f, y % f);
            idx += ((cx + cy) % f) * stride;
            stride *= f;
            x /= f;
            y /= f;
        }
        idx as usize
    }

    /// `-x` on flat indices.
    pub fn neg(&self, x: usize) -> usize {
        if self.factors.len() == 1 {
            let n = self.factors[0] as usize;
            return (n - x) % n;
        }
        let mut x = x as u64;
        let mut idx: u64 = 0;
        let mut stride: u64 = 1;
        for &f in self.factors.iter().rev() {
            let c = x % f;
            idx += ((f - c) % f) * stride;
            stride *= f;
            x /= f;
        }
        idx as usize
    }

    pub fn sub(&self, x: usize, y: usize) -> usize {
        self.add(x, self.neg(y))
    }

    /// `k.x` on flat indices, any integer `k` (negative via `(-k)x = -kx`).
    pub fn scalar_mul(&self, k: i64, x: usize) -> usize {
        let mut x = x as u64;
        let mut idx: u64 = 0;
        let mut stride: u64 = 1;
        for &f in self.factors.iter().rev() {
            let c = x % f;
            let kc = (k.rem_euclid(f as i64) as u64 * c) % f;
            idx += kc * stride;
            stride *= f;
            x /= f;
        }
        idx as usize
    }

    /// Lookup table for `x -> k.x`, used by counting kernels.
    pub fn scalar_mul_table(&self, k: i64) -> Vec<u32> {
        let n = self.len();
        let mut table = vec![0u32; n];
        crate::par::fill_indexed(&mut table, |x| self.scalar_mul(k, x) as u32);
        table
    }

    /// Positive `lambda^{-1} < |G|` with `lambda^{-1} * lambda = 1 mod |G|`.
    pub fn inverse_scalar(&self, lambda: i64) -> Result<u64> {
        let n = self.order as i128;
        let l = (lambda as i128).rem_euclid(n);
        let (g, inv) = ext_gcd(l, n);
        if g != 1 {
            return Err(Error::Coprimality {
                lambda,
                order: self.order,
                gcd: g as u64,
            });
        }
        Ok(inv.rem_euclid(n) as u64)
    }

    /// Phase of `chi(x)` as a fraction of a full turn, in `[0, 1)`.
    pub fn char_phase(&self, chi: usize, x: usize) -> f64 {
        let (mut chi, mut x) = (chi as u64, x as u64);
        let mut phase = 0.0f64;
        for &f in self.factors.iter().rev() {
            let (cc, cx) = (chi % f, x % f);
            phase += ((cc * cx) % f) as f64 / f as f64;
            chi /= f;
            x /= f;
        }
        phase.fract()
    }

    /// `chi(x) = exp(2 pi i sum_j chi_j x_j / N_j)`.
    pub fn char_eval(&self, chi: usize, x: usize) -> Complex64 {
        let theta = 2.0 * PI * self.char_phase(chi, x);
        Complex64::new(theta.cos(), theta.sin())
    }

    /// `|chi(x) - 1| = 2 |sin(pi theta)|`, the Bohr-set scaling quantity.
    pub fn char_dist_to_one(&self, chi: usize, x: usize) -> f64 {
        let theta = self.char_phase(chi, x);
        2.0 * (PI * theta).sin().abs()
    }

    /// One generator per factor (the unit coordinate vectors).
    pub fn generators(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.factors.len());
        for i in 0..self.factors.len() {
            let mut coords = vec![0u64; self.factors.len()];
            coords[i] = 1;
            out.push(self.index_of(&coords));
        }
        out
    }
}

impl fmt::Display for GroupDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128) {
    // returns (gcd, x) with a*x = gcd (mod b)
    let (mut r0, mut r1) = (a, b);
    let (mut s0, mut s1) = (1i128, 0i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    (r0.abs(), if r0 < 0 { -s0 } else { s0 })
}

/// A real-valued table indexed by enumerated group elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFunction {
    pub group: GroupDescriptor,
    pub values: Vec<f64>,
}

impl GroupFunction {
    pub fn new(group: GroupDescriptor, values: Vec<f64>) -> Result<Self> {
        if values.len() != group.len() {
            return Err(Error::Structural(format!(
                "table length {} != group order {}",
                values.len(),
                group.order()
            )));
        }
        Ok(GroupFunction { group, values })
    }

    pub fn constant(group: GroupDescriptor, c: f64) -> Self {
        let values = vec![c; group.len()];
        GroupFunction { group, values }
    }

    pub fn mean(&self) -> f64 {
        crate::par::sum_f64(self.values.len(), |i| self.values[i]) / self.values.len() as f64
    }
}

/// A subset of a group as an indicator vector plus its member list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSet {
    pub group: GroupDescriptor,
    pub members: Vec<usize>,
    indicator: Vec<bool>,
}

impl GroupSet {
    pub fn from_members(group: GroupDescriptor, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        let mut indicator = vec![false; group.len()];
        for &m in &members {
            indicator[m] = true;
        }
        GroupSet {
            group,
            members,
            indicator,
        }
    }

    pub fn from_indicator(group: GroupDescriptor, indicator: Vec<bool>) -> Self {
        let members = indicator
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        GroupSet {
            group,
            members,
            indicator,
        }
    }

    pub fn full(group: GroupDescriptor) -> Self {
        let indicator = vec![true; group.len()];
        Self::from_indicator(group, indicator)
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.indicator[idx]
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.members.len() as f64 / self.group.len() as f64
    }

    pub fn indicator_function(&self) -> GroupFunction {
        let values = self.indicator.iter().map(|&b| f64::from(b as u8)).collect();
        GroupFunction {
            group: self.group.clone(),
            values,
        }
    }

    /// `A + x` as a new set.
    pub fn shift(&self, x: usize) -> GroupSet {
        let members = self.members.iter().map(|&m| self.group.add(m, x)).collect();
        GroupSet::from_members(self.group.clone(), members)
    }
}

// ---------------------------------------------------------------------------
// File formats: one line per element, coordinates comma-separated; functions
// carry one extra real value per line, sets list member elements only.
// ---------------------------------------------------------------------------

pub fn parse_set(group: &GroupDescriptor, text: &str, file: &str) -> Result<GroupSet> {
    let mut members = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let coords = parse_coords(group, line, file, lineno + 1)?;
        if coords.len() != group.rank() {
            return Err(Error::Parse {
                file: file.into(),
                line: lineno + 1,
                msg: format!("expected {} coordinates", group.rank()),
            });
        }
        members.push(group.index_of(&coords));
    }
    Ok(GroupSet::from_members(group.clone(), members))
}

pub fn parse_function(group: &GroupDescriptor, text: &str, file: &str) -> Result<GroupFunction> {
    let mut values = vec![0.0f64; group.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != group.rank() + 1 {
            return Err(Error::Parse {
                file: file.into(),
                line: lineno + 1,
                msg: format!("expected {} coordinates and a value", group.rank()),
            });
        }
        let value: f64 = parts.pop().unwrap().parse().map_err(|_| Error::Parse {
            file: file.into(),
            line: lineno + 1,
            msg: "bad value".into(),
        })?;
        let coords = parse_coords(group, &parts.join(","), file, lineno + 1)?;
        values[group.index_of(&coords)] = value;
    }
    GroupFunction::new(group.clone(), values)
}

fn parse_coords(group: &GroupDescriptor, line: &str, file: &str, lineno: usize) -> Result<Vec<u64>> {
    line.split(',')
        .map(|t| {
            let c: i64 = t.trim().parse().map_err(|_| Error::Parse {
                file: file.into(),
                line: lineno,
                msg: format!("bad coordinate {t:?}"),
            })?;
            Ok(c)
        })
        .collect::<Result<Vec<i64>>>()
        .and_then(|signed| Ok(group.reduce(&signed)?.coords))
}

pub fn format_set(set: &GroupSet) -> String {
    let mut out = String::new();
    for &m in &set.members {
        let coords = set.group.coords_of(m);
        let line = coords
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_group_specs() {
        assert_eq!(GroupDescriptor::parse("Z13").unwrap().factors(), &[13]);
        assert_eq!(GroupDescriptor::parse("F5^3").unwrap().factors(), &[5, 5, 5]);
        assert_eq!(GroupDescriptor::parse("Z4xZ9").unwrap().factors(), &[4, 9]);
        assert!(GroupDescriptor::parse("Q8").is_err());
        assert!(GroupDescriptor::parse("Z1").is_err());
    }

    #[test]
    fn add_mod_factors() {
        let g = GroupDescriptor::parse("Z5").unwrap();
        assert_eq!(g.add(3, 4), 2);
        let g = GroupDescriptor::parse("Z2xZ3").unwrap();
        let x = g.index_of(&[1, 2]);
        let y = g.index_of(&[1, 1]);
        assert_eq!(g.add(x, y), g.index_of(&[0, 0]));
        // identity
        for x in 0..g.len() {
            assert_eq!(g.add(x, 0), x);
            assert_eq!(g.add(x, g.neg(x)), 0);
        }
    }

    #[test]
    fn scalar_mul_examples() {
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        assert_eq!(z5.scalar_mul(3, 2), 1);
        assert_eq!(z5.scalar_mul(0, 3), 0);
        let z7 = GroupDescriptor::parse("Z7").unwrap();
        assert_eq!(z7.scalar_mul(-2, 3), 1); // -6 = 1 mod 7
    }

    #[test]
    fn inverse_scalar_examples() {
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        assert_eq!(z5.inverse_scalar(2).unwrap(), 3);
        let z7 = GroupDescriptor::parse("Z7").unwrap();
        assert_eq!(z7.inverse_scalar(3).unwrap(), 5);
        let z4 = GroupDescriptor::parse("Z4").unwrap();
        assert!(matches!(
            z4.inverse_scalar(2),
            Err(Error::Coprimality { .. })
        ));
    }

    #[test]
    fn inverse_scalar_round_trips() {
        for spec in ["Z9", "Z15", "Z4xZ25"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            for lambda in [1i64, 2, 3, 7, -3, 11] {
                let Ok(inv) = g.inverse_scalar(lambda) else {
                    continue;
                };
                for x in 0..g.len() {
                    assert_eq!(g.scalar_mul(inv as i64, g.scalar_mul(lambda, x)), x);
                }
            }
        }
    }

    #[test]
    fn char_eval_examples() {
        let z4 = GroupDescriptor::parse("Z4").unwrap();
        let i = z4.char_eval(1, 1);
        assert!((i - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        // trivial character
        let g = GroupDescriptor::parse("Z6xZ5").unwrap();
        for x in 0..g.len() {
            assert!((g.char_eval(0, x) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn char_multiplicative_and_scalar_power() {
        let g = GroupDescriptor::parse("Z6xZ5").unwrap();
        let mut seed = 12345usize;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 16) % g.len()
        };
        for _ in 0..100 {
            let (chi, x, y) = (next(), next(), next());
            let lhs = g.char_eval(chi, g.add(x, y));
            let rhs = g.char_eval(chi, x) * g.char_eval(chi, y);
            assert!((lhs - rhs).norm() < 1e-12);
            assert!((g.char_eval(chi, x).norm() - 1.0).abs() < 1e-12);
            // chi(3x) = chi(x)^3
            let lhs = g.char_eval(chi, g.scalar_mul(3, x));
            let rhs = g.char_eval(chi, x).powu(3);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn set_file_round_trip() {
        let g = GroupDescriptor::parse("Z2xZ3").unwrap();
        let set = GroupSet::from_members(g.clone(), vec![0, 2, 5]);
        let text = format_set(&set);
        let back = parse_set(&g, &text, "mem").unwrap();
        assert_eq!(back.members, set.members);
    }

    #[test]
    fn function_file_parses() {
        let g = GroupDescriptor::parse("Z3").unwrap();
        let f = parse_function(&g, "0,0.5\n1,0.25\n2,1\n", "mem").unwrap();
        assert_eq!(f.values, vec![0.5, 0.25, 1.0]);
    }
}
