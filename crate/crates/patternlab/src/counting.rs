//! Homomorphism densities, grid semi-norms, and the constructive counting
//! procedures: soft rectangle extraction, low-discrepancy location, the
//! grid-norm/row-deviation branch, and the dense-rectangle-or-low-degree
//! diagnosis.

use crate::adjacency::{AdjacencyFunction, Rectangle, RectangleMixture};
use crate::config::Budget;
use crate::elim::{self, Factor};
use crate::error::{Error, Result};
use crate::linear::OrientedGraph;
use crate::par;
use serde::{Deserialize, Serialize};

/// An unconstrained real table on `X x Y`, for norms and centered functions.
#[derive(Debug, Clone)]
pub struct RealTable {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl RealTable {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        RealTable { rows, cols, values }
    }

    pub fn from_adjacency(a: &AdjacencyFunction) -> Self {
        RealTable {
            rows: a.left_size,
            cols: a.right_size,
            values: a.values().to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.cols + y]
    }

    pub fn scale(&self, c: f64) -> RealTable {
        RealTable {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn rect_mean(&self, s: &[usize], t: &[usize]) -> f64 {
        let total = par::sum_f64(s.len(), |i| {
            let x = s[i];
            t.iter().map(|&y| self.at(x, y)).sum::<f64>()
        });
        total / (s.len() * t.len()) as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_means(&self) -> Vec<f64> {
        par::map_collect(self.rows, |x| {
            self.values[x * self.cols..(x + 1) * self.cols]
                .iter()
                .sum::<f64>()
                / self.cols as f64
        })
    }
}

/// `(E |v|^p)^(1/p)` over a slice.
pub fn p_norm(values: &[f64], p: u32) -> f64 {
    let mean = par::sum_f64(values.len(), |i| values[i].abs().powi(p as i32))
        / values.len() as f64;
    mean.powf(1.0 / p as f64)
}

// ---------------------------------------------------------------------------
// Multipartite instances and homomorphism densities
// ---------------------------------------------------------------------------

/// An oriented graph together with one adjacency table per edge, on parts
/// `X_1, ..., X_k`.
#[derive(Debug, Clone)]
pub struct MultipartiteInstance {
    pub graph: OrientedGraph,
    pub part_sizes: Vec<usize>,
    /// Aligned with `graph.edges`.
    pub tables: Vec<AdjacencyFunction>,
}

impl MultipartiteInstance {
    pub fn new(
        graph: OrientedGraph,
        part_sizes: Vec<usize>,
        tables: Vec<AdjacencyFunction>,
    ) -> Result<Self> {
        if part_sizes.len() != graph.vertex_count {
            return Err(Error::Structural(format!(
                "{} parts for {} vertices",
                part_sizes.len(),
                graph.vertex_count
            )));
        }
        if tables.len() != graph.edges.len() {
            return Err(Error::Structural(format!(
                "{} tables for {} edges",
                tables.len(),
                graph.edges.len()
            )));
        }
        for (e, t) in graph.edges.iter().zip(&tables) {
            if t.left_size != part_sizes[e.0] || t.right_size != part_sizes[e.1] {
                return Err(Error::Structural(format!(
                    "table on edge {e:?} is {}x{}, parts are {}x{}",
                    t.left_size, t.right_size, part_sizes[e.0], part_sizes[e.1]
                )));
            }
        }
        Ok(MultipartiteInstance {
            graph,
            part_sizes,
            tables,
        })
    }

    /// One table reused on every edge of `H`.
    pub fn uniform(graph: OrientedGraph, table: &AdjacencyFunction) -> Result<Self> {
        let mut part_sizes = vec![0usize; graph.vertex_count];
        for &(u, v) in &graph.edges {
            part_sizes[u] = table.left_size;
            part_sizes[v] = table.right_size;
        }
        for s in &mut part_sizes {
            if *s == 0 {
                *s = 1;
            }
        }
        let tables = vec![table.clone(); graph.edges.len()];
        MultipartiteInstance::new(graph, part_sizes, tables)
    }

    pub fn edge_densities(&self) -> Vec<f64> {
        self.tables.iter().map(AdjacencyFunction::density).collect()
    }

    /// Exact expectation `E prod_e A_e(x_u, x_v)` by vertex elimination.
    pub fn hom_density(&self, budget: &Budget) -> Result<f64> {
        let all: Vec<usize> = (0..self.graph.edges.len()).collect();
        self.hom_density_edges(&all, budget)
    }

    /// Same, restricted to a subset of edges (vertices keep averaging out).
    pub fn hom_density_edges(&self, edge_idx: &[usize], budget: &Budget) -> Result<f64> {
        let factors: Vec<Factor<f64>> = edge_idx
            .iter()
            .map(|&i| {
                let (u, v) = self.graph.edges[i];
                Factor::new(vec![u, v], self.tables[i].values().to_vec())
            })
            .collect();
        let total: f64 = self.part_sizes.iter().map(|&s| s as f64).product();
        Ok(elim::sum_product(&self.part_sizes, factors, budget.table)? / total)
    }

    /// Nested-loop oracle used by tests.
    pub fn hom_density_brute(&self) -> f64 {
        let total: usize = self.part_sizes.iter().product();
        let sum = par::sum_f64(total, |flat| {
            let mut idx = flat;
            let mut assign = vec![0usize; self.part_sizes.len()];
            for v in (0..self.part_sizes.len()).rev() {
                assign[v] = idx % self.part_sizes[v];
                idx /= self.part_sizes[v];
            }
            self.graph
                .edges
                .iter()
                .zip(&self.tables)
                .map(|(&(u, v), t)| t.at(assign[u], assign[v]))
                .product()
        });
        sum / total as f64
    }

    fn require_boolean(&self) -> Result<()> {
        if let Some(i) = (0..self.tables.len()).find(|&i| !self.tables[i].is_boolean()) {
            return Err(Error::Domain(format!(
                "edge {:?} carries a non 0/1 table; this procedure is for sets",
                self.graph.edges[i]
            )));
        }
        Ok(())
    }

    fn require_positive_densities(&self) -> Result<()> {
        for (e, t) in self.graph.edges.iter().zip(&self.tables) {
            if t.density() <= 0.0 {
                return Err(Error::Precondition(format!(
                    "edge {e:?} has density zero"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Grid semi-norms
// ---------------------------------------------------------------------------

/// `U_{k,p}(f) = E_{x_1..x_k, y_1..y_p} prod f(x_i, y_j)`, evaluated as
/// `E_{y-tuple} (E_x prod_j f(x, y_j))^k`.
pub fn grid_u(table: &RealTable, k: u32, p: u32, absolute: bool, budget: &Budget) -> Result<f64> {
    if k == 0 || p == 0 {
        return Err(Error::Domain("grid norm needs k, p >= 1".into()));
    }
    if p > 16 {
        return Err(Error::Resource(format!(
            "grid norm p = {p} is beyond the supported tuple width 16"
        )));
    }
    let (nx, ny) = (table.rows as u128, table.cols as u128);
    let tuples = ny
        .checked_pow(p)
        .ok_or_else(|| Error::Resource("y-tuple count overflows".into()))?;
    let cost = tuples
        .checked_mul(nx * p as u128)
        .ok_or_else(|| Error::Resource("grid cost overflows".into()))?;
    if cost > budget.grid {
        return Err(Error::Resource(format!(
            "grid norm cost {cost} exceeds budget {}",
            budget.grid
        )));
    }
    let ny = table.cols;
    let nx = table.rows;
    let tuples = tuples as usize;
    let sum = par::sum_f64(tuples, |flat| {
        let mut idx = flat;
        let mut ys = [0usize; 16];
        for j in (0..p as usize).rev() {
            ys[j] = idx % ny;
            idx /= ny;
        }
        let mut inner = 0.0;
        for x in 0..nx {
            let mut prod = 1.0;
            for &y in &ys[..p as usize] {
                let v = table.at(x, y);
                prod *= if absolute { v.abs() } else { v };
            }
            inner += prod;
        }
        (inner / nx as f64).powi(k as i32)
    });
    Ok(sum / tuples as f64)
}

/// `||f||_{U(k,p)} = |U_{k,p}(f)|^{1/(pk)}`.
pub fn grid_norm(table: &RealTable, k: u32, p: u32, budget: &Budget) -> Result<f64> {
    Ok(grid_u(table, k, p, false, budget)?
        .abs()
        .powf(1.0 / (k * p) as f64))
}

/// `||f||_{|U(k,p)|} = U_{k,p}(|f|)^{1/(pk)}`.
pub fn grid_norm_abs(table: &RealTable, k: u32, p: u32, budget: &Budget) -> Result<f64> {
    Ok(grid_u(table, k, p, true, budget)?.powf(1.0 / (k * p) as f64))
}

/// `(g o g)(x1, x2) = E_y g(x1, y) g(x2, y)`; symmetric and PSD.
pub fn g_circ_g(g: &RealTable) -> RealTable {
    let n = g.rows;
    let values = par::map_collect(n * n, |flat| {
        let (x1, x2) = (flat / n, flat % n);
        let mut acc = 0.0;
        for y in 0..g.cols {
            acc += g.at(x1, y) * g.at(x2, y);
        }
        acc / g.cols as f64
    });
    RealTable::new(n, n, values)
}

/// Left side of the Gowers--Cauchy--Schwarz inequality for a `k x p` grid of
/// tables `f_ij` on `X_i x Y_j`.
pub fn gcs_lhs(tables: &[Vec<RealTable>]) -> f64 {
    let k = tables.len();
    let p = tables[0].len();
    let x_sizes: Vec<usize> = tables.iter().map(|row| row[0].rows).collect();
    let y_sizes: Vec<usize> = tables[0].iter().map(|t| t.cols).collect();
    let tuples: usize = y_sizes.iter().product();
    let sum = par::sum_f64(tuples, |flat| {
        let mut idx = flat;
        let mut ys = vec![0usize; p];
        for j in (0..p).rev() {
            ys[j] = idx % y_sizes[j];
            idx /= y_sizes[j];
        }
        let mut prod = 1.0;
        for i in 0..k {
            let mut inner = 0.0;
            for x in 0..x_sizes[i] {
                let mut q = 1.0;
                for j in 0..p {
                    q *= tables[i][j].at(x, ys[j]);
                }
                inner += q;
            }
            prod *= inner / x_sizes[i] as f64;
        }
        prod
    });
    sum / tuples as f64
}

// ---------------------------------------------------------------------------
// Soft rectangle extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Above,
    Below,
}

/// Result of extracting one rectangle from a mixture.
#[derive(Debug, Clone)]
pub struct SoftRect {
    /// Index into the mixture's entry list.
    pub index: usize,
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    /// `|S||T| / (|X||Y|)`, guaranteed at least `epsilon gamma / (4 Delta)`.
    pub measure: f64,
    /// Mean of `D` over the rectangle.
    pub d_mean: f64,
    /// The measure threshold `tau` that was enforced.
    pub tau: f64,
}

/// Constructive core of the rectangle lemma: drop light rectangles, return a
/// surviving one whose `D`-mean deviates by at least `epsilon/2` in the
/// requested direction. Tie-break: maximal deviation, then lowest index.
pub fn soft_rect_extract(
    d: &RealTable,
    mixture: &RectangleMixture,
    epsilon: f64,
    delta_cap: f64,
    gamma: f64,
    direction: Direction,
) -> Result<SoftRect> {
    const SLACK: f64 = 1e-12;
    if !(0.0 < epsilon && epsilon <= 1.0) || gamma <= 0.0 || delta_cap < 1.0 {
        return Err(Error::Precondition(format!(
            "need epsilon in (0,1], gamma > 0, Delta >= 1; got epsilon={epsilon}, gamma={gamma}, Delta={delta_cap}"
        )));
    }
    if d.values.iter().any(|&v| v < -SLACK) {
        return Err(Error::Precondition("D must be non-negative".into()));
    }
    let sup = d.max_abs();
    if sup > delta_cap + SLACK {
        return Err(Error::Precondition(format!(
            "||D||_inf = {sup} exceeds Delta = {delta_cap}"
        )));
    }
    let l1 = mixture.l1_norm();
    if l1 < gamma - SLACK {
        return Err(Error::Precondition(format!(
            "||F||_1 = {l1} is below gamma = {gamma}"
        )));
    }
    let ratio = mixture.inner_product(|x, y| d.at(x, y)) / l1;
    match direction {
        Direction::Above if ratio < 1.0 + epsilon - SLACK => {
            return Err(Error::Precondition(format!(
                "<F/||F||_1, D> = {ratio} is below 1 + epsilon = {}",
                1.0 + epsilon
            )));
        }
        Direction::Below if ratio > 1.0 - epsilon + SLACK => {
            return Err(Error::Precondition(format!(
                "<F/||F||_1, D> = {ratio} is above 1 - epsilon = {}",
                1.0 - epsilon
            )));
        }
        _ => {}
    }

    let tau = epsilon * gamma / (4.0 * delta_cap);
    let cells = (mixture.left_size * mixture.right_size) as f64;
    let stats: Vec<Option<(f64, f64)>> = par::map_collect(mixture.entries.len(), |i| {
        let (c, s, t) = &mixture.entries[i];
        if *c == 0.0 {
            return None;
        }
        let measure = (s.len() * t.len()) as f64 / cells;
        if measure < tau {
            return None;
        }
        Some((measure, d.rect_mean(s, t)))
    });
    let mut best: Option<(usize, f64, f64)> = None; // (index, measure, mean)
    for (i, stat) in stats.iter().enumerate() {
        let Some((measure, mean)) = *stat else {
            continue;
        };
        let qualifies = match direction {
            Direction::Above => mean >= 1.0 + epsilon / 2.0,
            Direction::Below => mean <= 1.0 - epsilon / 2.0,
        };
        if !qualifies {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, _, best_mean)) => match direction {
                Direction::Above => mean > best_mean,
                Direction::Below => mean < best_mean,
            },
        };
        if better {
            best = Some((i, measure, mean));
        }
    }
    let (index, measure, d_mean) = best.ok_or_else(|| {
        Error::InternalCheck(
            "no surviving rectangle carries the deviation; the lemma guarantees one under the verified preconditions".into(),
        )
    })?;
    let (_, s, t) = &mixture.entries[index];
    Ok(SoftRect {
        index,
        s: s.clone(),
        t: t.clone(),
        measure,
        d_mean,
        tau,
    })
}

// ---------------------------------------------------------------------------
// Low-discrepancy location (the peel-and-extract induction)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum LowDiscOutcome {
    /// `t` lies inside `[(1-eps)^m, (1+eps)^m] * prod alpha`.
    WithinBand { t: f64, lo: f64, hi: f64 },
    /// A rectangle on one edge carrying the deviation.
    Deviating {
        edge: usize,
        direction: Direction,
        rect: Rectangle,
        /// The `tau` enforced when it was extracted.
        measure_floor: f64,
    },
}

/// Build the conditional mixture `F(x, y)` for peeling `edge` out of the
/// listed active edges: one rectangle per assignment of the other variables.
fn build_peel_mixture(
    inst: &MultipartiteInstance,
    active: &[usize],
    peeled: usize,
    budget: &Budget,
) -> Result<RectangleMixture> {
    let (u0, v0) = inst.graph.edges[peeled];
    // Conditioning variables: everything the active edges touch except the
    // peeled pair.
    let mut cond: Vec<usize> = Vec::new();
    for &i in active {
        let (u, v) = inst.graph.edges[i];
        for w in [u, v] {
            if w != u0 && w != v0 && !cond.contains(&w) {
                cond.push(w);
            }
        }
    }
    cond.sort_unstable();
    let assignments: usize = cond
        .iter()
        .map(|&v| inst.part_sizes[v])
        .try_fold(1usize, |a, s| a.checked_mul(s))
        .ok_or_else(|| Error::Resource("mixture assignment count overflows".into()))?;
    if assignments > budget.mixture {
        return Err(Error::Resource(format!(
            "mixture needs {assignments} rectangles (budget {})",
            budget.mixture
        )));
    }
    let nx = inst.part_sizes[u0];
    let ny = inst.part_sizes[v0];
    let entries: Vec<Option<(f64, Vec<usize>, Vec<usize>)>> =
        par::map_collect(assignments, |flat| {
            let mut idx = flat;
            let mut w = vec![0usize; cond.len()];
            for j in (0..cond.len()).rev() {
                w[j] = idx % inst.part_sizes[cond[j]];
                idx /= inst.part_sizes[cond[j]];
            }
            let pos = |vertex: usize| cond.iter().position(|&c| c == vertex).map(|j| w[j]);
            let mut s: Vec<bool> = vec![true; nx];
            let mut t: Vec<bool> = vec![true; ny];
            for &i in active {
                let (u, v) = inst.graph.edges[i];
                let tab = &inst.tables[i];
                if u == u0 {
                    let yv = pos(v).expect("active edge endpoint must be conditioned");
                    for (x, alive) in s.iter_mut().enumerate() {
                        *alive = *alive && tab.at(x, yv) == 1.0;
                    }
                } else if v == v0 && u != u0 {
                    let xu = pos(u).expect("active edge endpoint must be conditioned");
                    for (y, alive) in t.iter_mut().enumerate() {
                        *alive = *alive && tab.at(xu, y) == 1.0;
                    }
                } else if u == v0 {
                    // v0 as source: factor depends on y.
                    let yv = pos(v).expect("active edge endpoint must be conditioned");
                    for (y, alive) in t.iter_mut().enumerate() {
                        *alive = *alive && tab.at(y, yv) == 1.0;
                    }
                } else if v == u0 {
                    // u0 as target: factor depends on x.
                    let xu = pos(u).expect("active edge endpoint must be conditioned");
                    for (x, alive) in s.iter_mut().enumerate() {
                        *alive = *alive && tab.at(xu, x) == 1.0;
                    }
                } else {
                    // Constant factor for this assignment.
                    let xu = pos(u).unwrap();
                    let yv = pos(v).unwrap();
                    if tab.at(xu, yv) != 1.0 {
                        return None;
                    }
                }
            }
            let s: Vec<usize> = s
                .iter()
                .enumerate()
                .filter_map(|(x, &b)| b.then_some(x))
                .collect();
            let t: Vec<usize> = t
                .iter()
                .enumerate()
                .filter_map(|(y, &b)| b.then_some(y))
                .collect();
            Some((1.0 / assignments as f64, s, t))
        });
    let mut kept = Vec::new();
    let mut residual = 0.0;
    for e in entries {
        match e {
            Some((c, s, t)) if !s.is_empty() && !t.is_empty() => kept.push((c, s, t)),
            _ => residual += 1.0 / assignments as f64,
        }
    }
    RectangleMixture::new(nx, ny, kept, residual)
}

/// The peel-and-extract procedure: returns `WithinBand` iff the product of
/// edge tables stays inside the `(1 +- epsilon)^m` band, otherwise locates an
/// edge and a rectangle realizing the deviation, re-verified from the raw
/// table.
pub fn low_disc_locate(
    inst: &MultipartiteInstance,
    epsilon: f64,
    budget: &Budget,
) -> Result<LowDiscOutcome> {
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(Error::Precondition("epsilon must lie in (0,1)".into()));
    }
    inst.require_boolean()?;
    inst.require_positive_densities()?;
    let alphas = inst.edge_densities();
    let m = inst.graph.edges.len();
    let prod: f64 = alphas.iter().product();
    let t = inst.hom_density(budget)?;
    let lo = (1.0 - epsilon).powi(m as i32) * prod;
    let hi = (1.0 + epsilon).powi(m as i32) * prod;
    if t >= lo && t <= hi {
        return Ok(LowDiscOutcome::WithinBand { t, lo, hi });
    }
    let direction = if t > hi {
        Direction::Above
    } else {
        Direction::Below
    };

    // Peel edges in index order; recurse while the remaining subgraph still
    // violates its own band, extract at the first level where it does not.
    let mut active: Vec<usize> = (0..m).collect();
    let mut t_cur = t;
    loop {
        let peeled = active[0];
        let rest: Vec<usize> = active[1..].to_vec();
        let prod_rest: f64 = rest.iter().map(|&i| alphas[i]).product();
        let f_l1 = inst.hom_density_edges(&rest, budget)?;
        let threshold = match direction {
            Direction::Above => (1.0 + epsilon).powi(rest.len() as i32) * prod_rest,
            Direction::Below => (1.0 - epsilon).powi(rest.len() as i32) * prod_rest,
        };
        let recurse = match direction {
            Direction::Above => f_l1 > threshold,
            Direction::Below => f_l1 < threshold,
        };
        if recurse {
            active = rest;
            t_cur = f_l1;
            continue;
        }
        // Extract on `peeled`. D = A / alpha, F = conditional mixture.
        let alpha_e = alphas[peeled];
        let d = RealTable::from_adjacency(&inst.tables[peeled]).scale(1.0 / alpha_e);
        let mixture = build_peel_mixture(inst, &rest, peeled, budget)?;
        debug_assert!((mixture.l1_norm() - f_l1).abs() < 1e-9);
        let delta_cap = 1.0 / alpha_e;
        let gamma = f_l1.max(f64::MIN_POSITIVE);
        let sr = soft_rect_extract(&d, &mixture, epsilon, delta_cap, gamma, direction)?;
        let rect = Rectangle::new(sr.s, sr.t, &inst.tables[peeled])?;
        // Re-verify the theorem's conclusion on the raw table.
        let need = match direction {
            Direction::Above => rect.density >= (1.0 + epsilon / 2.0) * alpha_e - 1e-9,
            Direction::Below => rect.density <= (1.0 - epsilon / 2.0) * alpha_e + 1e-9,
        };
        if !need || rect.measure < sr.tau - 1e-12 {
            return Err(Error::InternalCheck(format!(
                "extracted rectangle fails re-verification: density {}, measure {}",
                rect.density, rect.measure
            )));
        }
        let _ = t_cur;
        return Ok(LowDiscOutcome::Deviating {
            edge: peeled,
            direction,
            rect,
            measure_floor: sr.tau,
        });
    }
}

// ---------------------------------------------------------------------------
// Centered-norm split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitCase {
    /// `S+ = {x : f(x) > alpha (1 + eps/4)}` with density >= eps^p alpha^p / 4.
    Upper { set: Vec<usize>, density: f64 },
    /// `S- = {x : f(x) < alpha (1 - eps/4)}` with density >= eps^p / 4.
    Lower { set: Vec<usize>, density: f64 },
}

/// Split a `[0,1]`-valued vector with a large centered `p`-norm into a
/// heavy upper or lower level set. The upper set is preferred when its
/// density clears the bound.
pub fn centered_norm_split(f: &[f64], p: u32, epsilon: f64) -> Result<SplitCase> {
    let n = f.len();
    let alpha = f.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = f.iter().map(|&v| v - alpha).collect();
    let norm = p_norm(&centered, p);
    if norm < epsilon * alpha - 1e-12 {
        return Err(Error::Precondition(format!(
            "||f - alpha||_p = {norm} is below epsilon alpha = {}",
            epsilon * alpha
        )));
    }
    let (upper, lower) = level_sets(f, alpha, epsilon);
    let upper_density = upper.len() as f64 / n as f64;
    let lower_density = lower.len() as f64 / n as f64;
    let upper_bound = (epsilon * alpha).powi(p as i32) / 4.0;
    let lower_bound = epsilon.powi(p as i32) / 4.0;
    if upper_density >= upper_bound {
        Ok(SplitCase::Upper {
            set: upper,
            density: upper_density,
        })
    } else if lower_density >= lower_bound {
        Ok(SplitCase::Lower {
            set: lower,
            density: lower_density,
        })
    } else {
        Err(Error::InternalCheck(
            "neither level set clears its density bound; the split lemma guarantees one".into(),
        ))
    }
}

fn level_sets(f: &[f64], alpha: f64, epsilon: f64) -> (Vec<usize>, Vec<usize>) {
    let hi = alpha * (1.0 + epsilon / 4.0);
    let lo = alpha * (1.0 - epsilon / 4.0);
    let upper = f
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v > hi).then_some(i))
        .collect();
    let lower = f
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v < lo).then_some(i))
        .collect();
    (upper, lower)
}

// ---------------------------------------------------------------------------
// Main technical branch and the full diagnosis
// ---------------------------------------------------------------------------

/// Per-edge quantities at the working exponent `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeBranchReport {
    pub edge: (usize, usize),
    pub alpha: f64,
    /// `||f||_{U(k_idx, p)}`, absent when the evaluation blew the budget.
    pub grid_norm: Option<f64>,
    /// `||E_y f(., y) - alpha||_p`.
    pub row_deviation: f64,
    pub grid_case_fires: Option<bool>,
    pub row_case_fires: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TechnicalReport {
    pub p: u32,
    pub delta: f64,
    /// Grid-norm index `2(d-1)` clamped to at least 2.
    pub k_index: u32,
    pub edges: Vec<EdgeBranchReport>,
    /// True when every edge was fully evaluated; false means some grid norm
    /// was skipped for budget and the verdict is not conclusive.
    pub exhaustive: bool,
}

impl TechnicalReport {
    pub fn any_fired(&self) -> bool {
        self.edges
            .iter()
            .any(|e| e.grid_case_fires == Some(true) || e.row_case_fires)
    }
}

/// Working exponent: `min(p_cap, 2m ceil(log2(2/alpha)))`.
fn working_p(m: usize, alpha_min: f64, p_cap: u32) -> u32 {
    let formula = 2 * m as u32 * (2.0 / alpha_min).log2().ceil().max(1.0) as u32;
    formula.min(p_cap).max(1)
}

/// `delta(epsilon, H) = epsilon^2 2^(-4m-10)`.
pub fn technical_delta(epsilon: f64, m: usize) -> f64 {
    epsilon * epsilon * (2.0f64).powi(-(4 * m as i32 + 10))
}

/// Evaluate the grid-norm and row-deviation quantities for every edge and
/// report which case of the deviation dichotomy fires where.
pub fn technical_branch(
    inst: &MultipartiteInstance,
    epsilon: f64,
    p_cap: u32,
    budget: &Budget,
) -> Result<TechnicalReport> {
    inst.require_positive_densities()?;
    let alphas = inst.edge_densities();
    let m = inst.graph.edges.len();
    let prod: f64 = alphas.iter().product();
    let t = inst.hom_density(budget)?;
    if (t - prod).abs() < epsilon * prod {
        return Err(Error::Precondition(format!(
            "|t - prod alpha| = {} is below epsilon prod alpha = {}",
            (t - prod).abs(),
            epsilon * prod
        )));
    }
    let alpha_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let p = working_p(m, alpha_min, p_cap);
    let delta = technical_delta(epsilon, m);
    let k_index = (2 * inst.graph.max_indegree.saturating_sub(1)).max(2) as u32;
    let mut edges = Vec::new();
    let mut exhaustive = true;
    for (i, &(u, v)) in inst.graph.edges.iter().enumerate() {
        let table = RealTable::from_adjacency(&inst.tables[i]);
        let alpha = alphas[i];
        let centered: Vec<f64> = table.row_means().iter().map(|r| r - alpha).collect();
        let row_deviation = p_norm(&centered, p);
        let row_case_fires = row_deviation >= delta * alpha;
        let (grid, fires) = match grid_norm(&table, k_index, p, budget) {
            Ok(nrm) => (Some(nrm), Some(nrm >= (1.0 + delta) * alpha)),
            Err(Error::Resource(_)) => {
                exhaustive = false;
                (None, None)
            }
            Err(e) => return Err(e),
        };
        edges.push(EdgeBranchReport {
            edge: (u, v),
            alpha,
            grid_norm: grid,
            row_deviation,
            grid_case_fires: fires,
            row_case_fires,
        });
    }
    Ok(TechnicalReport {
        p,
        delta,
        k_index,
        edges,
        exhaustive,
    })
}

/// The diagnosis outcome with every constant it used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnosis {
    pub variant: DiagnosisVariant,
    pub t: f64,
    pub expected: f64,
    pub epsilon: f64,
    pub p: u32,
    pub delta: f64,
    pub alphas: Vec<f64>,
    /// Which route produced the witness.
    pub route: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DiagnosisVariant {
    WithinBand,
    DenseRectangle {
        edge: (usize, usize),
        rect: Rectangle,
        density_bound: f64,
    },
    LowDegreeSet {
        edge: (usize, usize),
        rows: Vec<usize>,
        row_density_bound: f64,
    },
}

/// Dense-rectangle-or-low-degree diagnosis for a deviating instance.
///
/// When the row-deviation case fires, the level-set matching the deviation
/// direction is preferred: an undercount is witnessed by light rows, an
/// overcount by heavy rows. When only the grid-norm case fires, the
/// rectangle is extracted by running the peel procedure on the bipartite
/// clique `K_{k_index, p}` built from that edge's table.
pub fn main_count_diagnose(
    inst: &MultipartiteInstance,
    epsilon: f64,
    p_cap: u32,
    budget: &Budget,
) -> Result<Diagnosis> {
    inst.require_boolean()?;
    inst.require_positive_densities()?;
    let alphas = inst.edge_densities();
    let m = inst.graph.edges.len();
    let prod: f64 = alphas.iter().product();
    let t = inst.hom_density(budget)?;
    let alpha_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let p = working_p(m, alpha_min, p_cap);
    let delta = technical_delta(epsilon, m);
    let base = |variant, route: &str| Diagnosis {
        variant,
        t,
        expected: prod,
        epsilon,
        p,
        delta,
        alphas: alphas.clone(),
        route: route.to_string(),
    };
    if (t - prod).abs() < epsilon * prod {
        return Ok(base(DiagnosisVariant::WithinBand, "band"));
    }
    let undercount = t < prod;
    let k_index = (2 * inst.graph.max_indegree.saturating_sub(1)).max(2) as u32;
    let mut budget_blocked = false;

    for (i, &(u, v)) in inst.graph.edges.iter().enumerate() {
        let alpha = alphas[i];
        let table = RealTable::from_adjacency(&inst.tables[i]);
        let row_means = table.row_means();
        let centered: Vec<f64> = row_means.iter().map(|r| r - alpha).collect();
        let row_dev = p_norm(&centered, p);
        if row_dev >= delta * alpha {
            // Level sets at delta/4; direction-matched preference.
            let (upper, lower) = level_sets(&row_means, alpha, delta);
            let n = row_means.len() as f64;
            let upper_ok = upper.len() as f64 / n >= (delta * alpha).powi(p as i32) / 4.0;
            let lower_ok = lower.len() as f64 / n >= delta.powi(p as i32) / 4.0;
            let pick_lower = if undercount { lower_ok } else { lower_ok && !upper_ok };
            if pick_lower {
                let bound = (1.0 - delta / 4.0) * alpha;
                debug_assert!(lower.iter().all(|&z| row_means[z] <= bound));
                return Ok(base(
                    DiagnosisVariant::LowDegreeSet {
                        edge: (u, v),
                        rows: lower,
                        row_density_bound: bound,
                    },
                    "row-deviation/lower",
                ));
            }
            if upper_ok {
                let full_t: Vec<usize> = (0..inst.tables[i].right_size).collect();
                let rect = Rectangle::new(upper, full_t, &inst.tables[i])?;
                let bound = (1.0 + delta / 4.0) * alpha;
                if rect.density < bound - 1e-12 {
                    return Err(Error::InternalCheck(
                        "upper level-set rectangle fails its density bound".into(),
                    ));
                }
                return Ok(base(
                    DiagnosisVariant::DenseRectangle {
                        edge: (u, v),
                        rect,
                        density_bound: bound,
                    },
                    "row-deviation/upper",
                ));
            }
            return Err(Error::InternalCheck(
                "row deviation fired but neither level set clears its bound".into(),
            ));
        }
        // Grid-norm case: check the norm, then extract through the
        // bipartite clique.
        match grid_norm(&table, k_index, p, budget) {
            Ok(nrm) if nrm >= (1.0 + delta) * alpha => {
                let clique = OrientedGraph::complete_bipartite(k_index as usize, p as usize);
                let kinst = MultipartiteInstance::uniform(clique, &inst.tables[i])?;
                match low_disc_locate(&kinst, delta, budget) {
                    Ok(LowDiscOutcome::Deviating {
                        direction: Direction::Above,
                        rect,
                        ..
                    }) => {
                        let bound = (1.0 + delta / 2.0) * alpha;
                        if rect.density < bound - 1e-12 {
                            return Err(Error::InternalCheck(
                                "clique-extracted rectangle fails its density bound".into(),
                            ));
                        }
                        return Ok(base(
                            DiagnosisVariant::DenseRectangle {
                                edge: (u, v),
                                rect,
                                density_bound: bound,
                            },
                            "grid-norm/bipartite-clique",
                        ));
                    }
                    Ok(_) => {
                        return Err(Error::InternalCheck(
                            "grid norm fired but the clique instance shows no upward deviation"
                                .into(),
                        ))
                    }
                    Err(Error::Resource(_)) => {
                        budget_blocked = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(_) => {}
            Err(Error::Resource(_)) => {
                budget_blocked = true;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Resource(if budget_blocked {
        format!("diagnosis inconclusive: grid-norm evaluation at p = {p} exceeded the budget")
    } else {
        format!("diagnosis inconclusive at capped p = {p}; no edge fired either case")
    }))
}

// ---------------------------------------------------------------------------
// PSD uplift and odd-moment uplift checks
// ---------------------------------------------------------------------------

/// Evaluates the norm uplift `||1+g||_{U(2,p')} >= 1 + eps/5` for a table
/// with zero row-means and `||g||^2_{U(2,p)} >= eps`, at `p' = 2 ceil(p/eps)`.
pub fn psd_uplift_check(g: &RealTable, p: u32, epsilon: f64) -> Result<(f64, f64, bool)> {
    if p % 2 != 0 {
        return Err(Error::Precondition("p must be even".into()));
    }
    if !(0.0 < epsilon && epsilon <= 0.5) {
        return Err(Error::Precondition("epsilon must lie in (0, 1/2]".into()));
    }
    for (x, mean) in g.row_means().iter().enumerate() {
        if mean.abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "row {x} has mean {mean}, expected 0"
            )));
        }
    }
    // ||g||^2_{U(2,p)} = ||g o g||_p, and with zero row-means
    // (1+g) o (1+g) = g o g + 1.
    let circ = g_circ_g(g);
    let norm_sq = p_norm(&circ.values, p);
    if norm_sq < epsilon - 1e-12 {
        return Err(Error::Precondition(format!(
            "||g||^2_U(2,{p}) = {norm_sq} is below epsilon = {epsilon}"
        )));
    }
    let p_prime = 2 * (p as f64 / epsilon).ceil() as u32;
    let shifted: Vec<f64> = circ.values.iter().map(|v| v + 1.0).collect();
    let lhs = p_norm(&shifted, p_prime).sqrt();
    let rhs = 1.0 + epsilon / 5.0;
    Ok((lhs, rhs, lhs >= rhs - 1e-12))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OddMomentVerdict {
    pub pass: bool,
    pub k_prime: u32,
    pub norm: f64,
    pub required: f64,
}

/// Tests the odd moments of `f - 1` up to `odd_cap`, then evaluates the
/// uplift `||f||_{k'} >= 1 + eps/2` at `k' = ceil(2 k0 / eps)`.
pub fn odd_moment_uplift_check(
    f: &[f64],
    k0: u32,
    epsilon: f64,
    odd_cap: u32,
) -> Result<OddMomentVerdict> {
    if k0 % 2 != 0 || k0 < 2 {
        return Err(Error::Precondition("k0 must be even and >= 2".into()));
    }
    if !(0.0 < epsilon && epsilon <= 0.5) {
        return Err(Error::Precondition("epsilon must lie in (0, 1/2]".into()));
    }
    let centered: Vec<f64> = f.iter().map(|&v| v - 1.0).collect();
    let mut k = 1u32;
    while k <= odd_cap {
        let moment = par::sum_f64(centered.len(), |i| centered[i].powi(k as i32))
            / centered.len() as f64;
        if moment < -1e-12 {
            return Err(Error::Precondition(format!(
                "odd moment E (f-1)^{k} = {moment} is negative"
            )));
        }
        k += 2;
    }
    let base = p_norm(&centered, k0);
    if base < epsilon - 1e-12 {
        return Err(Error::Precondition(format!(
            "||f - 1||_{k0} = {base} is below epsilon = {epsilon}"
        )));
    }
    let k_prime = (2.0 * k0 as f64 / epsilon).ceil() as u32;
    let norm = p_norm(f, k_prime);
    let required = 1.0 + epsilon / 2.0;
    Ok(OddMomentVerdict {
        pass: norm >= required - 1e-12,
        k_prime,
        norm,
        required,
    })
}
