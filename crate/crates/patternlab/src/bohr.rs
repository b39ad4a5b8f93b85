//! Bohr sets with exact regularity analysis.
//!
//! A Bohr set is the triple (frequency set, width, member set); equality
//! follows the triple, not the member set. Membership is derived from the
//! per-element scaling profile `s(x) = max_{chi in Gamma} |chi(x) - 1|`,
//! shared read-only across dilates, with boundary ties resolved as members
//! inside a 1e-12 guard band. `|B_rho|` is a step function of `rho` with
//! breakpoints exactly at the profile values, which makes the regularity
//! check exact: both defining inequalities are evaluated at every breakpoint
//! in range instead of on a grid.

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupSet};
use crate::linear::ExactDensity;
use crate::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Boundary guard for membership and breakpoint comparisons.
const GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BohrSet {
    group: GroupDescriptor,
    frequencies: Vec<usize>,
    width: f64,
    members: Vec<usize>,
    indicator: Vec<bool>,
    /// `s(x)` for every `x` in enumeration order.
    scaling: Arc<Vec<f64>>,
    /// The same values sorted ascending.
    sorted_scaling: Arc<Vec<f64>>,
}

impl BohrSet {
    /// Build from a frequency set (character indices) and a width in [0, 2].
    pub fn build(group: &GroupDescriptor, frequencies: Vec<usize>, width: f64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::Domain("frequency set must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&width) {
            return Err(Error::Domain(format!("width {width} outside [0, 2]")));
        }
        let n = group.len();
        let freqs = frequencies.clone();
        let grp = group.clone();
        let scaling: Vec<f64> = par::map_collect(n, move |x| {
            freqs
                .iter()
                .map(|&chi| grp.char_dist_to_one(chi, x))
                .fold(0.0, f64::max)
        });
        let mut sorted = scaling.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self::from_profile(
            group.clone(),
            frequencies,
            width,
            Arc::new(scaling),
            Arc::new(sorted),
        ))
    }

    fn from_profile(
        group: GroupDescriptor,
        frequencies: Vec<usize>,
        width: f64,
        scaling: Arc<Vec<f64>>,
        sorted_scaling: Arc<Vec<f64>>,
    ) -> Self {
        let members: Vec<usize> = (0..group.len())
            .filter(|&x| scaling[x] <= width + GUARD)
            .collect();
        let mut indicator = vec![false; group.len()];
        for &m in &members {
            indicator[m] = true;
        }
        BohrSet {
            group,
            frequencies,
            width,
            members,
            indicator,
            scaling,
            sorted_scaling,
        }
    }

    /// The whole group as the Bohr set of the trivial character.
    pub fn whole_group(group: &GroupDescriptor) -> Self {
        BohrSet::build(group, vec![0], 2.0).unwrap()
    }

    pub fn group(&self) -> &GroupDescriptor {
        &self.group
    }

    pub fn frequencies(&self) -> &[usize] {
        &self.frequencies
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn rank(&self) -> usize {
        self.frequencies.len()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn contains(&self, x: usize) -> bool {
        self.indicator[x]
    }

    pub fn as_set(&self) -> GroupSet {
        GroupSet::from_members(self.group.clone(), self.members.clone())
    }

    /// Count of elements with `s(x) <= w` (plus the guard band).
    fn count_within(&self, w: f64) -> usize {
        self.sorted_scaling.partition_point(|&s| s <= w + GUARD)
    }

    /// `B_rho`: same frequencies, width `rho * tau`, shared profile.
    pub fn dilate(&self, rho: f64) -> BohrSet {
        assert!(rho >= 0.0, "dilation parameter must be non-negative");
        Self::from_profile(
            self.group.clone(),
            self.frequencies.clone(),
            rho * self.width,
            Arc::clone(&self.scaling),
            Arc::clone(&self.sorted_scaling),
        )
    }

    /// `lambda . B = {lambda b : b in B}` as a Bohr set. For invertible
    /// `lambda` this is exactly `Bohr(lambda^{-1} . Gamma, tau)`: an element
    /// `x = lambda b` satisfies `|chi(lambda^{-1} x) - 1| <= tau`, and
    /// `chi o (lambda^{-1} .)` is the character at index `lambda^{-1} chi`.
    /// Returns the set and whether `lambda` was invertible; otherwise the
    /// returned triple uses the `lambda`-mapped frequencies and is only an
    /// approximation of the image set.
    pub fn scalar_dilate(&self, lambda: i64) -> Result<(BohrSet, bool)> {
        let mapper: i64 = match self.group.inverse_scalar(lambda) {
            Ok(inv) => inv as i64,
            Err(_) => lambda,
        };
        let coprime = self.group.inverse_scalar(lambda).is_ok();
        let mut freqs: Vec<usize> = self
            .frequencies
            .iter()
            .map(|&chi| self.group.scalar_mul(mapper, chi))
            .collect();
        freqs.sort_unstable();
        freqs.dedup();
        let b = BohrSet::build(&self.group, freqs, self.width)?;
        Ok((b, coprime))
    }

    /// Exact regularity check via the breakpoint method.
    pub fn is_regular(&self) -> bool {
        let d = self.rank();
        let size = self.members.len() as f64;
        if self.width <= GUARD {
            // every dilate coincides with the kernel of the frequency set
            return true;
        }
        let kappa_max = 1.0 / (100.0 * d as f64);
        let w = self.width;
        let (w_lo, w_hi) = ((1.0 - kappa_max) * w, (1.0 + kappa_max) * w);
        let mut distinct: Vec<f64> = Vec::new();
        for &s in self.sorted_scaling.iter() {
            if s < w_lo - GUARD || s > w_hi + GUARD {
                continue;
            }
            if distinct.last().map_or(true, |&last| s > last + GUARD) {
                distinct.push(s);
            }
        }
        for &s in &distinct {
            let kappa = s / w - 1.0;
            if kappa > GUARD {
                // upward jump: the count just after it must obey the upper
                // inequality at kappa
                let count = self.count_within(s) as f64;
                if count > (1.0 + 100.0 * d as f64 * kappa) * size + 1e-9 {
                    return false;
                }
            } else {
                // downward step just below kappa <= 0: the strict count must
                // obey the lower inequality approaching kappa from below
                let strict = self.sorted_scaling.partition_point(|&v| v < s - GUARD) as f64;
                let mag = (-kappa).max(0.0);
                if strict < (1.0 - 100.0 * d as f64 * mag) * size - 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    /// Regularity by scanning a fine kappa grid; unsound near breakpoints,
    /// kept as a cross-check for tests.
    pub fn is_regular_grid_scan(&self, points: usize) -> bool {
        let d = self.rank();
        let size = self.members.len() as f64;
        if self.width <= GUARD {
            return true;
        }
        let kappa_max = 1.0 / (100.0 * d as f64);
        for i in 0..=points {
            let kappa = -kappa_max + 2.0 * kappa_max * i as f64 / points as f64;
            let count = self.count_within((1.0 + kappa) * self.width) as f64;
            let band = 100.0 * d as f64 * kappa.abs();
            if count < (1.0 - band) * size - 1e-9 || count > (1.0 + band) * size + 1e-9 {
                return false;
            }
        }
        true
    }

    /// Candidate dilation parameters in `[lo, hi]`: midpoints between
    /// consecutive profile breakpoints (avoiding boundary ties), plus a
    /// uniform fallback grid.
    fn candidate_rhos(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = vec![hi];
        if self.width > GUARD {
            let mut prev: Option<f64> = None;
            for &s in self.sorted_scaling.iter() {
                if let Some(p) = prev {
                    if s > p + GUARD {
                        let rho = (p + s) / 2.0 / self.width;
                        if rho >= lo && rho <= hi {
                            out.push(rho);
                        }
                    }
                }
                prev = Some(s);
            }
        }
        for i in 0..=512 {
            out.push(lo + (hi - lo) * i as f64 / 512.0);
        }
        out.sort_by(|a, b| b.partial_cmp(a).unwrap());
        out.dedup();
        out
    }

    /// Largest `rho` in `[1/2, 1]` whose dilate passes the exact regularity
    /// check. The flag is false only when no candidate passed and the
    /// least-violating one was returned instead.
    pub fn find_regular_dilate(&self) -> (f64, BohrSet, bool) {
        self.find_regular_dilate_in(0.5, 1.0)
    }

    /// Same search over an arbitrary window.
    pub fn find_regular_dilate_in(&self, lo: f64, hi: f64) -> (f64, BohrSet, bool) {
        let mut best_violation: Option<(f64, f64)> = None; // (violation, rho)
        for rho in self.candidate_rhos(lo, hi) {
            let b = self.dilate(rho);
            if b.is_regular() {
                return (rho, b, true);
            }
            let v = b.regularity_violation();
            if best_violation.map_or(true, |(bv, _)| v < bv) {
                best_violation = Some((v, rho));
            }
        }
        let (_, rho) = best_violation.unwrap_or((0.0, hi));
        (rho, self.dilate(rho), false)
    }

    /// Worst-case normalized violation of the two regularity inequalities.
    fn regularity_violation(&self) -> f64 {
        let d = self.rank();
        let size = self.members.len() as f64;
        if self.width <= GUARD || size == 0.0 {
            return 0.0;
        }
        let kappa_max = 1.0 / (100.0 * d as f64);
        let mut worst = 0.0f64;
        for i in 0..=2000 {
            let kappa = -kappa_max + 2.0 * kappa_max * i as f64 / 2000.0;
            let count = self.count_within((1.0 + kappa) * self.width) as f64;
            let band = 100.0 * d as f64 * kappa.abs();
            worst = worst.max((1.0 - band) * size - count);
            worst = worst.max(count - (1.0 + band) * size);
        }
        worst / size
    }

    /// Exact relative density `|A intersect B| / |B|`.
    pub fn mu_density(&self, set: &GroupSet) -> Result<ExactDensity> {
        if set.group != self.group {
            return Err(Error::Structural("set lives on a different group".into()));
        }
        let count = self.members.iter().filter(|&&m| set.contains(m)).count();
        Ok(ExactDensity::new(count as u128, self.members.len() as u128))
    }

    /// `mu_B(A + shift)` as an exact count.
    pub fn mu_density_shifted(&self, set: &GroupSet, shift: usize) -> ExactDensity {
        // b is in A + shift iff b - shift is in A
        let count = self
            .members
            .iter()
            .filter(|&&b| set.contains(self.group.sub(b, shift)))
            .count();
        ExactDensity::new(count as u128, self.members.len() as u128)
    }

    /// `phi_B = (|G|/|B|) 1_B`, with unit L1 mass.
    pub fn normalized_indicator(&self) -> crate::group::GroupFunction {
        let scale = self.group.len() as f64 / self.members.len() as f64;
        let values = self
            .indicator
            .iter()
            .map(|&b| if b { scale } else { 0.0 })
            .collect();
        crate::group::GroupFunction {
            group: self.group.clone(),
            values,
        }
    }

    /// Exact `|B symdiff (B + x)| / |B| = ||phi_B - phi_{B+x}||_1`.
    pub fn shift_l1_distance(&self, x: usize) -> f64 {
        let moved = self
            .members
            .iter()
            .filter(|&&b| !self.indicator[self.group.add(b, x)])
            .count();
        // |B \ (B+x)| = |(B+x) \ B| since the shift is a bijection
        2.0 * moved as f64 / self.members.len() as f64
    }
}

/// Set inclusion via indicators.
pub fn is_subset(inner: &BohrSet, outer: &BohrSet) -> bool {
    inner.members().iter().all(|&m| outer.contains(m))
}

/// Serializable summary (the triple plus derived stats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BohrSummary {
    pub group: String,
    pub frequencies: Vec<usize>,
    pub width: f64,
    pub rank: usize,
    pub size: usize,
    pub regular: bool,
}

impl BohrSummary {
    pub fn of(b: &BohrSet) -> Self {
        BohrSummary {
            group: b.group().label().to_string(),
            frequencies: b.frequencies().to_vec(),
            width: b.width(),
            rank: b.rank(),
            size: b.len(),
            regular: b.is_regular(),
        }
    }
}

// ---------------------------------------------------------------------------
// Shift selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ShiftOutcome {
    /// Every member of the family sees the shifted set at density within
    /// `gamma alpha` of `alpha`.
    Uniform { shift: usize, densities: Vec<f64> },
    /// Some family member sees a significantly denser shifted set.
    DenserMember {
        shift: usize,
        family_index: usize,
        density: f64,
        threshold: f64,
    },
}

/// Search a shift of `A` that is uniform across a family of small Bohr sets,
/// or exhibit a family member carrying a density increment. `rho` is the
/// dilation with every family member inside `B_rho`; in strict mode it must
/// obey `rho <= c gamma alpha / (d |family|)`.
pub fn uniform_shift_select(
    b: &BohrSet,
    set: &GroupSet,
    family: &[BohrSet],
    gamma: f64,
    rho: f64,
    c: f64,
    strict_rho: bool,
) -> Result<ShiftOutcome> {
    if family.is_empty() {
        return Err(Error::Precondition("empty Bohr family".into()));
    }
    let alpha = b.mu_density(set)?.to_f64();
    if alpha <= 0.0 {
        return Err(Error::Precondition("A has density zero in B".into()));
    }
    let b_rho = b.dilate(rho);
    for (i, member) in family.iter().enumerate() {
        if !is_subset(member, &b_rho) {
            return Err(Error::Precondition(format!(
                "family member {i} is not contained in B_rho"
            )));
        }
    }
    let bound = c * gamma * alpha / (b.rank() as f64 * family.len() as f64);
    if strict_rho && rho > bound + GUARD {
        return Err(Error::Precondition(format!(
            "rho = {rho} exceeds c gamma alpha / (d |family|) = {bound}"
        )));
    }
    let n = family.len() as f64;
    let avg_floor = (1.0 - gamma / (2.0 * n)) * alpha;
    // First member of B (in element order) whose averaged relative density
    // over the family clears the floor. mu_{B'}(A - x) = mu_{B'}(A + (-x)).
    let found = b.members().iter().copied().find(|&x| {
        let avg: f64 = family
            .iter()
            .map(|f| f.mu_density_shifted(set, b.group().neg(x)).to_f64())
            .sum::<f64>()
            / n;
        avg >= avg_floor - GUARD
    });
    let Some(x) = found else {
        return Err(Error::InternalCheck(
            "no shift satisfies the averaged density inequality; the selection lemma guarantees one under its preconditions".into(),
        ));
    };
    let shift = b.group().neg(x);
    let densities: Vec<f64> = family
        .iter()
        .map(|f| f.mu_density_shifted(set, shift).to_f64())
        .collect();
    let threshold = (1.0 + gamma / (2.0 * n)) * alpha;
    if let Some(i) = densities.iter().position(|&d| d >= threshold) {
        return Ok(ShiftOutcome::DenserMember {
            shift,
            family_index: i,
            density: densities[i],
            threshold,
        });
    }
    if densities
        .iter()
        .all(|&d| (d - alpha).abs() <= gamma * alpha + GUARD)
    {
        return Ok(ShiftOutcome::Uniform { shift, densities });
    }
    Err(Error::InternalCheck(
        "averaged inequality held but the densities fall in neither case".into(),
    ))
}

// ---------------------------------------------------------------------------
// Algebraic spreadness search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SpreadVerdict {
    /// No violating (Bohr set, shift) found. `exhaustive` records whether
    /// the candidate space was fully enumerated; a sampled search can only
    /// report "no violation found", not spreadness proper.
    Spread {
        exhaustive: bool,
        candidates_tried: usize,
    },
    /// A regular Bohr set and shift where the relative density of the
    /// shifted set exceeds `(1 + delta) alpha`.
    Violation {
        frequencies: Vec<usize>,
        width: f64,
        shift: usize,
        density: f64,
        threshold: f64,
    },
}

/// Search for a `(delta, d', r)` spreadness violation of `A` inside `B`: a
/// regular Bohr set of rank at most `rank(B) + d'` and size at least
/// `2^{-r} |B|`, plus a shift, where `A` looks denser than `(1+delta) alpha`.
/// Rank-one frequency sets are enumerated exhaustively when they fit the
/// budget; the rest are sampled from the stated seed.
pub fn is_algebraically_spread(
    b: &BohrSet,
    set: &GroupSet,
    delta: f64,
    d_prime: usize,
    r: u32,
    search_budget: usize,
    seed: u64,
) -> Result<SpreadVerdict> {
    for m in &set.members {
        if !b.contains(*m) {
            return Err(Error::Precondition("A must be a subset of B".into()));
        }
    }
    let alpha = b.mu_density(set)?.to_f64();
    let threshold = (1.0 + delta) * alpha;
    let size_floor = ((b.len() as f64) * (2.0f64).powi(-(r as i32))).ceil() as usize;
    let group = b.group().clone();
    let n = group.len();
    let max_rank = b.rank() + d_prime;

    let mut freq_sets: Vec<Vec<usize>> = Vec::new();
    let rank1_exhaustive = n - 1 <= search_budget;
    if rank1_exhaustive {
        for chi in 1..n {
            freq_sets.push(vec![chi]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while freq_sets.len() < search_budget {
        let size = 1 + rng.gen_range(0..max_rank.max(1));
        let mut f: Vec<usize> = (0..size).map(|_| 1 + rng.gen_range(0..n - 1)).collect();
        f.sort_unstable();
        f.dedup();
        freq_sets.push(f);
    }
    freq_sets.truncate(search_budget);
    let exhaustive = rank1_exhaustive && max_rank == 1;

    let candidates_tried = freq_sets.len();
    for freqs in freq_sets {
        if freqs.len() > max_rank {
            continue;
        }
        let base = BohrSet::build(&group, freqs, 2.0)?;
        // Walk width candidates upward from the size floor at geometric size
        // steps; midpoints between breakpoints avoid boundary ties.
        let sorted = Arc::clone(&base.sorted_scaling);
        let mut target = size_floor.max(1);
        while target <= n {
            let idx = (target - 1).min(n - 1);
            let s_here = sorted[idx];
            let s_next = sorted[(idx + 1).min(n - 1)];
            let width = if s_next > s_here + GUARD {
                ((s_here + s_next) / 2.0).min(2.0)
            } else {
                (s_here + GUARD).min(2.0)
            };
            let candidate = BohrSet::from_profile(
                group.clone(),
                base.frequencies.clone(),
                width,
                Arc::clone(&base.scaling),
                Arc::clone(&base.sorted_scaling),
            );
            if candidate.len() >= size_floor
                && candidate.len() < b.len()
                && candidate.is_regular()
            {
                let densities = par::map_collect(n, |x| {
                    candidate.mu_density_shifted(set, x).to_f64()
                });
                if let Some(x) = (0..n).find(|&x| densities[x] > threshold + GUARD) {
                    return Ok(SpreadVerdict::Violation {
                        frequencies: candidate.frequencies.clone(),
                        width: candidate.width,
                        shift: x,
                        density: densities[x],
                        threshold,
                    });
                }
            }
            target = target.saturating_mul(2);
        }
    }
    Ok(SpreadVerdict::Spread {
        exhaustive,
        candidates_tried,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupDescriptor;

    #[test]
    fn trivial_and_wide_bohr_sets_are_whole_group() {
        let g = GroupDescriptor::parse("Z12").unwrap();
        let b = BohrSet::build(&g, vec![0], 0.5).unwrap();
        assert_eq!(b.len(), 12);
        let b = BohrSet::build(&g, vec![3, 5], 2.0).unwrap();
        assert_eq!(b.len(), 12);
    }

    #[test]
    fn z12_narrow_interval() {
        // width just above |e^{2 pi i/12} - 1| keeps exactly {0, 1, 11}
        let g = GroupDescriptor::parse("Z12").unwrap();
        let tau = 2.0 * (std::f64::consts::PI / 12.0).sin() + 1e-9;
        let b = BohrSet::build(&g, vec![1], tau).unwrap();
        assert_eq!(b.members(), &[0, 1, 11]);
    }

    #[test]
    fn zero_always_member_and_symmetric() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        for (freqs, tau) in [(vec![3], 0.2), (vec![5, 17], 0.7), (vec![1, 2, 3], 1.1)] {
            let b = BohrSet::build(&g, freqs, tau).unwrap();
            assert!(b.contains(0));
            for &m in b.members() {
                assert!(b.contains(g.neg(m)), "B != -B at {m}");
            }
        }
    }

    #[test]
    fn intersection_law() {
        for spec in ["Z60", "Z7xZ11", "Z128"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            for tau in [0.3, 0.9, 1.5] {
                let b1 = BohrSet::build(&g, vec![1, 5], tau).unwrap();
                let b2 = BohrSet::build(&g, vec![2], tau).unwrap();
                let both = BohrSet::build(&g, vec![1, 5, 2], tau).unwrap();
                let inter: Vec<usize> = b1
                    .members()
                    .iter()
                    .copied()
                    .filter(|&m| b2.contains(m))
                    .collect();
                assert_eq!(both.members(), &inter[..]);
            }
        }
    }

    #[test]
    fn sumset_inclusion_in_width_sum() {
        let g = GroupDescriptor::parse("Z61").unwrap();
        let b = BohrSet::build(&g, vec![7], 0.4).unwrap();
        let wider = BohrSet::build(&g, vec![7], 0.8).unwrap();
        for &x in b.members() {
            for &y in b.members() {
                assert!(wider.contains(g.add(x, y)));
            }
        }
    }

    #[test]
    fn dilate_identity_and_monotone_sizes() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::build(&g, vec![3, 11], 0.9).unwrap();
        assert_eq!(b.dilate(1.0).members(), b.members());
        let mut last = 0;
        for i in 0..20 {
            let rho = i as f64 / 10.0;
            let size = b.dilate(rho).len();
            assert!(size >= last);
            last = size;
        }
    }

    #[test]
    fn scalar_dilate_preserves_size_when_coprime() {
        let g = GroupDescriptor::parse("Z13").unwrap();
        let b = BohrSet::build(&g, vec![2], 0.8).unwrap();
        let (two_b, coprime) = b.scalar_dilate(2).unwrap();
        assert!(coprime);
        assert_eq!(two_b.len(), b.len());
        assert_eq!(b.is_regular(), two_b.is_regular());
        let doubled: Vec<usize> = {
            let mut v: Vec<usize> = b.members().iter().map(|&m| g.scalar_mul(2, m)).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(two_b.members(), &doubled[..]);
    }

    #[test]
    fn regularity_exact_vs_grid_scan() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        // An interval of 11 elements: tau between the 11th and 12th profile
        // values.
        let base = BohrSet::build(&g, vec![1], 2.0).unwrap();
        let sorted = Arc::clone(&base.sorted_scaling);
        let tau = (sorted[10] + sorted[11]) / 2.0;
        let b = BohrSet::build(&g, vec![1], tau).unwrap();
        assert_eq!(b.len(), 11);
        assert_eq!(b.is_regular(), b.is_regular_grid_scan(10_000));
        // a width hitting a breakpoint exactly is irregular: the dilate
        // count drops discontinuously just below kappa = 0
        let tied = BohrSet::build(&g, vec![1], sorted[10]).unwrap();
        assert!(!tied.is_regular());
    }

    #[test]
    fn find_regular_dilate_on_random_instances() {
        let g = GroupDescriptor::parse("Z1009").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let rank = 1 + rng.gen_range(0..3usize);
            let freqs: Vec<usize> = (0..rank).map(|_| 1 + rng.gen_range(0..1008)).collect();
            let tau = 0.05 + rng.gen_range(0.0..1.5);
            let b = BohrSet::build(&g, freqs, tau).unwrap();
            let (rho, dilate, ok) = b.find_regular_dilate();
            assert!(ok, "no regular dilate found");
            assert!((0.5..=1.0).contains(&rho));
            assert!(dilate.is_regular());
            let floor = (rho / 4.0).powi(b.rank() as i32) * b.len() as f64;
            assert!(dilate.len() as f64 >= floor - 1e-9);
        }
    }

    #[test]
    fn mu_density_and_phi() {
        let g = GroupDescriptor::parse("Z30").unwrap();
        let b = BohrSet::build(&g, vec![1], 0.5).unwrap();
        let a = b.as_set();
        assert_eq!(b.mu_density(&a).unwrap(), ExactDensity::new(1, 1));
        let empty = GroupSet::from_members(g.clone(), vec![]);
        assert_eq!(b.mu_density(&empty).unwrap(), ExactDensity::new(0, 1));
        let phi = b.normalized_indicator();
        let l1: f64 = phi.values.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
        assert!((l1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_distance_bound_for_regular_sets() {
        let g = GroupDescriptor::parse("Z401").unwrap();
        let base = BohrSet::build(&g, vec![1], 0.9).unwrap();
        let (_, b, ok) = base.find_regular_dilate();
        assert!(ok);
        assert_eq!(b.shift_l1_distance(0), 0.0);
        let d = b.rank() as f64;
        let rho = 1.0 / (200.0 * d);
        let small = b.dilate(rho);
        for &x in small.members() {
            let dist = b.shift_l1_distance(x);
            assert!(dist <= 200.0 * rho * d + 1e-9, "x = {x}, dist = {dist}");
        }
    }

    #[test]
    fn uniform_shift_trivial_family() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::whole_group(&g);
        let a = b.as_set();
        let family = vec![b.dilate(0.001)];
        let out = uniform_shift_select(&b, &a, &family, 0.1, 0.001, 1.0 / 400.0, false).unwrap();
        match out {
            ShiftOutcome::Uniform { densities, .. } => {
                for d in densities {
                    assert!((d - 1.0).abs() < 1e-12);
                }
            }
            other => panic!("expected Uniform, got {other:?}"),
        }
    }

    #[test]
    fn uniform_shift_detects_concentration() {
        // A is exactly a small sub-Bohr set: that member reports density 1.
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::whole_group(&g);
        let inner = BohrSet::build(&g, vec![1], 0.2).unwrap();
        let a = inner.as_set();
        let family = vec![inner.clone()];
        let out = uniform_shift_select(&b, &a, &family, 0.5, 1.0, 1.0 / 400.0, false).unwrap();
        match out {
            ShiftOutcome::DenserMember {
                density, threshold, ..
            } => {
                assert!(density >= threshold);
            }
            other => panic!("expected DenserMember, got {other:?}"),
        }
    }

    #[test]
    fn strict_rho_precondition() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::whole_group(&g);
        let a = b.as_set();
        let family = vec![b.dilate(1.0)];
        assert!(matches!(
            uniform_shift_select(&b, &a, &family, 0.1, 1.0, 1.0 / 400.0, true),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn spreadness_full_set_is_spread() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::whole_group(&g);
        let a = b.as_set();
        let v = is_algebraically_spread(&b, &a, 0.5, 1, 3, 150, 1).unwrap();
        assert!(matches!(v, SpreadVerdict::Spread { .. }));
    }

    #[test]
    fn spreadness_finds_planted_subbohr_concentration() {
        let g = GroupDescriptor::parse("Z101").unwrap();
        let b = BohrSet::whole_group(&g);
        let inner = BohrSet::build(&g, vec![5], 0.4).unwrap();
        let a = inner.as_set();
        let v = is_algebraically_spread(&b, &a, 0.5, 1, 4, 150, 1).unwrap();
        match v {
            SpreadVerdict::Violation {
                density, threshold, ..
            } => {
                assert!(density > threshold);
            }
            other => panic!("expected Violation, got {other:?}"),
        }
    }

    #[test]
    fn empty_frequency_set_rejected() {
        let g = GroupDescriptor::parse("Z7").unwrap();
        assert!(matches!(
            BohrSet::build(&g, vec![], 0.5),
            Err(Error::Domain(_))
        ));
    }
}
