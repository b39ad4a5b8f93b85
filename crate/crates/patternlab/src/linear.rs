//! Systems of integer linear forms over finite abelian groups: binary
//! classification, underlying oriented graphs, translation invariance,
//! complexity measures, and exact pattern-density evaluation.

use crate::elim::{self, Factor};
use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupSet};
use crate::par;
use serde::{Deserialize, Serialize};

/// `L = (lambda_1, ..., lambda_d)`, acting on `G^d` by `x -> sum lambda_i x_i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinearForm {
    pub coeffs: Vec<i64>,
}

impl LinearForm {
    pub fn new(coeffs: Vec<i64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().all(|&c| c == 0) {
            return Err(Error::Domain("linear form must be a nonzero vector".into()));
        }
        Ok(LinearForm { coeffs })
    }

    pub fn arity(&self) -> usize {
        self.coeffs.len()
    }

    /// Indices of nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c != 0).then_some(i))
            .collect()
    }

    /// Evaluate on flat element indices.
    pub fn eval(&self, group: &GroupDescriptor, point: &[usize]) -> usize {
        let mut acc = group.zero();
        for (&c, &x) in self.coeffs.iter().zip(point) {
            if c != 0 {
                acc = group.add(acc, group.scalar_mul(c, x));
            }
        }
        acc
    }

    /// `k`-th tensor power over `d^k` coordinates: entry at multi-index
    /// `(i_1,...,i_k)` is `prod_j lambda_{i_j}` (first index most significant).
    pub fn tensor_power(&self, k: u32, coeff_budget: usize) -> Result<LinearForm> {
        if k == 0 {
            return Err(Error::Domain("tensor power needs k >= 1".into()));
        }
        let d = self.coeffs.len();
        let len = d
            .checked_pow(k)
            .filter(|&l| l <= coeff_budget)
            .ok_or_else(|| {
                Error::Resource(format!("tensor power table d^k = {d}^{k} exceeds budget"))
            })?;
        let mut coeffs = Vec::with_capacity(len);
        for flat in 0..len {
            let mut idx = flat;
            let mut prod: i128 = 1;
            for _ in 0..k {
                prod *= self.coeffs[idx % d] as i128;
                idx /= d;
            }
            let c = i64::try_from(prod)
                .map_err(|_| Error::Resource("tensor power coefficient overflow".into()))?;
            coeffs.push(c);
        }
        Ok(LinearForm { coeffs })
    }
}

/// A tuple of `m` linear forms sharing arity `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub forms: Vec<LinearForm>,
    pub labels: Option<Vec<String>>,
}

/// The oriented acyclic graph underlying a binary system, with the stats the
/// counting lemmas consume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientedGraph {
    pub vertex_count: usize,
    /// Ordered pairs `(u, v)` with `u < v`; no repeats.
    pub edges: Vec<(usize, usize)>,
    pub edge_count: usize,
    pub max_indegree: usize,
    /// Number of vertices of total degree one.
    pub degree_one_count: usize,
    /// `kappa = 2|E| - d_1`.
    pub kappa: i64,
}

impl OrientedGraph {
    pub fn new(vertex_count: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Domain(format!("repeated edge {:?}", w[0])));
            }
        }
        for &(u, v) in &edges {
            if u >= v || v >= vertex_count {
                return Err(Error::Domain(format!(
                    "edge ({u},{v}) violates u < v < {vertex_count}"
                )));
            }
        }
        let mut indeg = vec![0usize; vertex_count];
        let mut deg = vec![0usize; vertex_count];
        for &(u, v) in &edges {
            indeg[v] += 1;
            deg[u] += 1;
            deg[v] += 1;
        }
        let edge_count = edges.len();
        let max_indegree = indeg.iter().copied().max().unwrap_or(0);
        let degree_one_count = deg.iter().filter(|&&d| d == 1).count();
        let kappa = 2 * edge_count as i64 - degree_one_count as i64;
        Ok(OrientedGraph {
            vertex_count,
            edges,
            edge_count,
            max_indegree,
            degree_one_count,
            kappa,
        })
    }

    pub fn triangle() -> Self {
        OrientedGraph::new(3, vec![(0, 1), (0, 2), (1, 2)]).unwrap()
    }

    pub fn path(len_edges: usize) -> Self {
        let edges = (0..len_edges).map(|i| (i, i + 1)).collect();
        OrientedGraph::new(len_edges + 1, edges).unwrap()
    }

    pub fn complete(k: usize) -> Self {
        let mut edges = Vec::new();
        for u in 0..k {
            for v in (u + 1)..k {
                edges.push((u, v));
            }
        }
        OrientedGraph::new(k, edges).unwrap()
    }

    pub fn complete_bipartite(left: usize, right: usize) -> Self {
        let mut edges = Vec::new();
        for u in 0..left {
            for v in 0..right {
                edges.push((u, left + v));
            }
        }
        OrientedGraph::new(left + right, edges).unwrap()
    }

    /// Greedy minimum-degree peeling. Returns an ordering where every vertex
    /// has at most `k` earlier neighbours, or `None` if the graph is not
    /// `k`-degenerate.
    pub fn degeneracy_ordering(&self, k: usize) -> Option<Vec<usize>> {
        let n = self.vertex_count;
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut removed = vec![false; n];
        let mut deg: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut removal = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&v| !removed[v])
                .min_by_key(|&v| (deg[v], v))?;
            if deg[v] > k {
                return None;
            }
            removed[v] = true;
            removal.push(v);
            for &w in &adj[v] {
                if !removed[w] {
                    deg[w] -= 1;
                }
            }
        }
        removal.reverse();
        Some(removal)
    }
}

impl LinearSystem {
    pub fn new(forms: Vec<LinearForm>) -> Result<Self> {
        if forms.is_empty() {
            return Err(Error::Domain("system needs at least one form".into()));
        }
        let d = forms[0].arity();
        for f in &forms {
            if f.arity() != d {
                return Err(Error::Domain("forms must share the variable count".into()));
            }
        }
        for i in 0..forms.len() {
            for j in (i + 1)..forms.len() {
                if forms[i] == forms[j] {
                    return Err(Error::Domain(format!(
                        "forms {i} and {j} have identical coefficients"
                    )));
                }
            }
        }
        Ok(LinearSystem {
            forms,
            labels: None,
        })
    }

    pub fn from_rows(rows: &[&[i64]]) -> Result<Self> {
        let forms = rows
            .iter()
            .map(|r| LinearForm::new(r.to_vec()))
            .collect::<Result<_>>()?;
        LinearSystem::new(forms)
    }

    /// Variable count `d`.
    pub fn arity(&self) -> usize {
        self.forms[0].arity()
    }

    /// Form count `m`.
    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The 3-progression pattern as a binary system.
    pub fn three_ap_binary() -> Self {
        LinearSystem::from_rows(&[&[2, -2, 0], &[1, 0, -1], &[0, 2, -2]]).unwrap()
    }

    /// `(x, x+y, ..., x+(k-1)y)`.
    pub fn k_ap(k: usize) -> Self {
        let forms = (0..k)
            .map(|i| LinearForm::new(vec![1, i as i64]).unwrap())
            .collect();
        LinearSystem::new(forms).unwrap()
    }

    /// `{x_i + x_j : i < j <= r}`, the `r`-clique pattern.
    pub fn clique(r: usize) -> Self {
        let mut forms = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                let mut coeffs = vec![0i64; r];
                coeffs[i] = 1;
                coeffs[j] = 1;
                forms.push(LinearForm::new(coeffs).unwrap());
            }
        }
        LinearSystem::new(forms).unwrap()
    }

    /// Every form supported on exactly two variables, no two forms on the
    /// same pair.
    pub fn is_binary(&self) -> bool {
        let mut pairs = Vec::new();
        for f in &self.forms {
            let sup = f.support();
            if sup.len() != 2 {
                return false;
            }
            let pair = (sup[0], sup[1]);
            if pairs.contains(&pair) {
                return false;
            }
            pairs.push(pair);
        }
        true
    }

    /// One edge `(a_i, b_i)` per form `lambda_i x_{a_i} + eta_i x_{b_i}`.
    pub fn underlying_graph(&self) -> Result<OrientedGraph> {
        if !self.is_binary() {
            return Err(Error::Domain("underlying graph needs a binary system".into()));
        }
        let edges = self
            .forms
            .iter()
            .map(|f| {
                let sup = f.support();
                (sup[0], sup[1])
            })
            .collect();
        OrientedGraph::new(self.arity(), edges)
    }

    /// Coefficients `(lambda_i, eta_i)` of each binary form, aligned with
    /// [`Self::underlying_graph`]'s edges after its sort.
    pub fn binary_edge_coeffs(&self) -> Result<Vec<(usize, usize, i64, i64)>> {
        if !self.is_binary() {
            return Err(Error::Domain("not a binary system".into()));
        }
        let mut out: Vec<(usize, usize, i64, i64)> = self
            .forms
            .iter()
            .map(|f| {
                let sup = f.support();
                (sup[0], sup[1], f.coeffs[sup[0]], f.coeffs[sup[1]])
            })
            .collect();
        out.sort_unstable_by_key(|&(u, v, _, _)| (u, v));
        Ok(out)
    }

    /// Append one fresh variable with coefficient 1 to every form; the result
    /// is translation-invariant over every group.
    pub fn translation_closure(&self) -> LinearSystem {
        let forms = self
            .forms
            .iter()
            .map(|f| {
                let mut coeffs = f.coeffs.clone();
                coeffs.push(1);
                LinearForm { coeffs }
            })
            .collect();
        LinearSystem {
            forms,
            labels: self.labels.clone(),
        }
    }

    /// Product of `|lambda_i| |eta_i|` over the binary forms (the cascade
    /// constant `K`).
    pub fn coefficient_product(&self) -> Result<u64> {
        let mut k: u64 = 1;
        for f in &self.forms {
            for &c in &f.coeffs {
                if c != 0 {
                    k = k
                        .checked_mul(c.unsigned_abs())
                        .ok_or_else(|| Error::Resource("coefficient product overflow".into()))?;
                }
            }
        }
        Ok(k)
    }

    /// Do all coefficients have inverses modulo `|G|`?
    pub fn coprime_with(&self, group: &GroupDescriptor) -> bool {
        self.forms.iter().all(|f| {
            f.coeffs
                .iter()
                .filter(|&&c| c != 0)
                .all(|&c| group.inverse_scalar(c).is_ok())
        })
    }
}

// ---------------------------------------------------------------------------
// Exact densities
// ---------------------------------------------------------------------------

/// An exact rational density `num/den`, kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDensity {
    pub num: u128,
    pub den: u128,
}

impl ExactDensity {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0, "zero denominator");
        let g = gcd_u128(num, den);
        ExactDensity {
            num: num / g,
            den: den / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Outcome of a pattern count: exact satisfying-assignment count over
/// `|G|^d` total assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    pub count: u128,
    pub total: u128,
}

impl PatternCount {
    pub fn density(&self) -> ExactDensity {
        ExactDensity::new(self.count, self.total)
    }
}

fn total_assignments(group: &GroupDescriptor, d: usize) -> Result<u128> {
    (group.order() as u128)
        .checked_pow(d as u32)
        .ok_or_else(|| Error::Resource("|G|^d overflows".into()))
}

/// Brute-force `t_L(A)`: enumerate `G^d` in lexicographic order.
pub fn pattern_count_brute(
    sys: &LinearSystem,
    set: &GroupSet,
    enum_budget: u128,
) -> Result<PatternCount> {
    let group = &set.group;
    let d = sys.arity();
    let total = total_assignments(group, d)?;
    if total > enum_budget {
        return Err(Error::Resource(format!(
            "|G|^d = {total} exceeds enumeration budget {enum_budget}"
        )));
    }
    let n = group.len();
    // Per (form, variable) scalar-multiplication tables.
    let tables: Vec<Vec<Vec<u32>>> = sys
        .forms
        .iter()
        .map(|f| {
            f.coeffs
                .iter()
                .map(|&c| {
                    if c == 0 {
                        Vec::new()
                    } else {
                        group.scalar_mul_table(c)
                    }
                })
                .collect()
        })
        .collect();
    let total_usize = total as usize;
    let count = par::sum_u128(total_usize, |flat| {
        let mut idx = flat;
        let mut point = vec![0usize; d];
        for v in (0..d).rev() {
            point[v] = idx % n;
            idx /= n;
        }
        let ok = sys.forms.iter().zip(&tables).all(|(f, tabs)| {
            let mut acc = 0usize;
            for (j, &c) in f.coeffs.iter().enumerate() {
                if c != 0 {
                    acc = group.add(acc, tabs[j][point[j]] as usize);
                }
            }
            set.contains(acc)
        });
        ok as u128
    });
    Ok(PatternCount { count, total })
}

/// Factored `t_L(A)` for binary systems: one `|G| x |G|` table per form,
/// summed out by vertex elimination. Exact.
pub fn pattern_count_binary(
    sys: &LinearSystem,
    set: &GroupSet,
    table_budget: usize,
) -> Result<PatternCount> {
    if !sys.is_binary() {
        return Err(Error::Domain("factored counting needs a binary system".into()));
    }
    let group = &set.group;
    let n = group.len();
    let d = sys.arity();
    let total = total_assignments(group, d)?;
    if n.checked_mul(n).map_or(true, |sq| sq > table_budget) {
        return Err(Error::Resource(format!(
            "edge table |G|^2 = {} exceeds table budget {table_budget}",
            n * n
        )));
    }
    let factors: Vec<Factor<u128>> = sys
        .binary_edge_coeffs()?
        .into_iter()
        .map(|(u, v, lam, eta)| {
            let lam_t = group.scalar_mul_table(lam);
            let eta_t = group.scalar_mul_table(eta);
            let values = par::map_collect(n * n, |flat| {
                let (x, y) = (flat / n, flat % n);
                let z = group.add(lam_t[x] as usize, eta_t[y] as usize);
                set.contains(z) as u128
            });
            Factor::new(vec![u, v], values)
        })
        .collect();
    let count = elim::sum_product(&vec![n; d], factors, table_budget)?;
    Ok(PatternCount { count, total })
}

/// `t_L(A)` by the cheapest exact route available.
pub fn pattern_count(
    sys: &LinearSystem,
    set: &GroupSet,
    enum_budget: u128,
    table_budget: usize,
) -> Result<PatternCount> {
    if sys.is_binary() {
        pattern_count_binary(sys, set, table_budget)
    } else {
        pattern_count_brute(sys, set, enum_budget)
    }
}

/// First non-degenerate witness in lexicographic enumeration order, plus the
/// exact count of degenerate instances landing in `A^m`.
pub fn nondegenerate_search(
    sys: &LinearSystem,
    set: &GroupSet,
    enum_budget: u128,
) -> Result<(Option<Vec<usize>>, u128)> {
    let group = &set.group;
    let d = sys.arity();
    let total = total_assignments(group, d)?;
    if total > enum_budget {
        return Err(Error::Resource(format!(
            "|G|^d = {total} exceeds enumeration budget {enum_budget}"
        )));
    }
    let n = group.len();
    let decode = |flat: usize| {
        let mut idx = flat;
        let mut point = vec![0usize; d];
        for v in (0..d).rev() {
            point[v] = idx % n;
            idx /= n;
        }
        point
    };
    let eval = |point: &[usize]| -> (bool, bool) {
        // (all values in A, all values distinct)
        let values: Vec<usize> = sys.forms.iter().map(|f| f.eval(group, point)).collect();
        let in_a = values.iter().all(|&v| set.contains(v));
        let mut distinct = true;
        'outer: for i in 0..values.len() {
            for j in (i + 1)..values.len() {
                if values[i] == values[j] {
                    distinct = false;
                    break 'outer;
                }
            }
        }
        (in_a, distinct)
    };
    let total_usize = total as usize;
    let witness = par::find_first(total_usize, |flat| {
        let (in_a, distinct) = eval(&decode(flat));
        in_a && distinct
    })
    .map(decode);
    let degenerate = par::sum_u128(total_usize, |flat| {
        let (in_a, distinct) = eval(&decode(flat));
        (in_a && !distinct) as u128
    });
    Ok((witness, degenerate))
}

// ---------------------------------------------------------------------------
// Translation invariance
// ---------------------------------------------------------------------------

/// Translation invariance of the instance set over `G`.
///
/// The instance set is the image subgroup `{L(x) : x in G^d}`, so the system
/// is translation-invariant iff `(c,...,c)` lies in the image for every
/// generator `c`. Over a product group this splits into one linear
/// congruence system per cyclic factor, solved exactly through the Smith
/// normal form of the coefficient matrix.
pub fn is_translation_invariant(sys: &LinearSystem, group: &GroupDescriptor) -> bool {
    let matrix: Vec<Vec<i128>> = sys
        .forms
        .iter()
        .map(|f| f.coeffs.iter().map(|&c| c as i128).collect())
        .collect();
    let snf = smith_normal_form(&matrix);
    group
        .factors()
        .iter()
        .all(|&n| all_ones_solvable_mod(&snf, n))
}

/// Brute-force oracle for the same predicate: enumerate the image of
/// `G^d -> G^m` and test membership of the all-ones shifts directly.
pub fn is_translation_invariant_brute(
    sys: &LinearSystem,
    group: &GroupDescriptor,
    enum_budget: u128,
) -> Result<bool> {
    let d = sys.arity();
    let total = total_assignments(group, d)?;
    if total > enum_budget {
        return Err(Error::Resource(format!(
            "image enumeration |G|^d = {total} exceeds budget {enum_budget}"
        )));
    }
    let n = group.len();
    let m = sys.len();
    let mut image = std::collections::HashSet::new();
    let mut point = vec![0usize; d];
    for flat in 0..total as usize {
        let mut idx = flat;
        for v in (0..d).rev() {
            point[v] = idx % n;
            idx /= n;
        }
        let tuple: Vec<usize> = sys.forms.iter().map(|f| f.eval(group, &point)).collect();
        image.insert(tuple);
    }
    for c in group.generators() {
        let shift: Vec<usize> = vec![c; m];
        if !image.contains(&shift) {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Snf {
    /// Diagonal entries of `S` (including zeros), length `min(m, d)` padded
    /// conceptually with zero rows up to `m`.
    diag: Vec<i128>,
    /// Row transform `U` with `U M V = S`; we need `U * b`.
    u: Vec<Vec<i128>>,
    rows: usize,
}

/// Smith normal form of a small integer matrix, tracking row operations.
fn smith_normal_form(matrix: &[Vec<i128>]) -> Snf {
    let rows = matrix.len();
    let cols = matrix[0].len();
    let mut a: Vec<Vec<i128>> = matrix.to_vec();
    let mut u: Vec<Vec<i128>> = (0..rows)
        .map(|i| (0..rows).map(|j| i128::from(i == j)).collect())
        .collect();
    let k = rows.min(cols);
    let mut t = 0usize;
    while t < k {
        // Find a pivot: smallest nonzero |entry| in the active submatrix.
        let mut pivot: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                if a[i][j] != 0
                    && pivot.map_or(true, |(pi, pj)| a[i][j].abs() < a[pi][pj].abs())
                {
                    pivot = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pivot else { break };
        a.swap(t, pi);
        u.swap(t, pi);
        for row in &mut a {
            row.swap(t, pj);
        }
        // Reduce column t and row t against the pivot.
        let mut clean = true;
        for i in (t + 1)..rows {
            let q = a[i][t] / a[t][t];
            if q != 0 {
                for j in 0..cols {
                    a[i][j] -= q * a[t][j];
                }
                for j in 0..rows {
                    u[i][j] -= q * u[t][j];
                }
            }
            if a[i][t] != 0 {
                clean = false;
            }
        }
        for j in (t + 1)..cols {
            let q = a[t][j] / a[t][t];
            if q != 0 {
                for i in 0..rows {
                    a[i][j] -= q * a[i][t];
                }
            }
            if a[t][j] != 0 {
                clean = false;
            }
        }
        if clean {
            t += 1;
        }
    }
    let diag = (0..k).map(|i| a[i][i].abs()).collect();
    Snf { diag, u, rows }
}

/// Is `S y = U * 1 (mod n)` solvable? (`1` is the all-ones vector.)
fn all_ones_solvable_mod(snf: &Snf, n: u64) -> bool {
    let n = n as i128;
    for i in 0..snf.rows {
        let b: i128 = snf.u[i].iter().sum::<i128>().rem_euclid(n);
        let s = if i < snf.diag.len() { snf.diag[i] } else { 0 };
        let g = gcd_i128(s.rem_euclid(n).max(0), n);
        // s*y = b (mod n) is solvable iff gcd(s, n) divides b; s = 0 makes
        // the gcd equal to n.
        let g = if s % n == 0 { n } else { g };
        if b % g != 0 {
            return false;
        }
    }
    true
}

fn gcd_i128(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs().max(1)
}

// ---------------------------------------------------------------------------
// Complexity measures
// ---------------------------------------------------------------------------

/// Rank of a rational matrix, fraction-free (Bareiss) over i128.
fn rational_rank(rows: &[Vec<i128>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let mut a: Vec<Vec<i128>> = rows.to_vec();
    let (m, d) = (a.len(), a[0].len());
    let mut rank = 0usize;
    let mut col = 0usize;
    while rank < m && col < d {
        let Some(pivot) = (rank..m).find(|&i| a[i][col] != 0) else {
            col += 1;
            continue;
        };
        a.swap(rank, pivot);
        for i in (rank + 1)..m {
            if a[i][col] != 0 {
                let (p, q) = (a[rank][col], a[i][col]);
                let g = gcd_i128(p, q);
                let (p, q) = (p / g, q / g);
                for j in 0..d {
                    a[i][j] = a[i][j] * p - a[rank][j] * q;
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

fn in_rational_span(target: &[i128], basis: &[Vec<i128>]) -> bool {
    if basis.is_empty() {
        return target.iter().all(|&c| c == 0);
    }
    let r = rational_rank(basis);
    let mut extended = basis.to_vec();
    extended.push(target.to_vec());
    rational_rank(&extended) == r
}

/// Minimal `k` such that for every `i`, the other forms split into `k+1`
/// classes with `L_i` outside the rational span of each class.
pub fn cs_complexity(sys: &LinearSystem) -> Result<usize> {
    if sys.len() > 8 {
        return Err(Error::Resource(format!(
            "cs_complexity partition search caps at m = 8 forms, got {}",
            sys.len()
        )));
    }
    let as_vec = |f: &LinearForm| -> Vec<i128> { f.coeffs.iter().map(|&c| c as i128).collect() };
    let mut worst = 0usize;
    for i in 0..sys.len() {
        let target = as_vec(&sys.forms[i]);
        let others: Vec<Vec<i128>> = sys
            .forms
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, f)| as_vec(f))
            .collect();
        // A form parallel to the target poisons every class containing it.
        if others
            .iter()
            .any(|o| in_rational_span(&target, std::slice::from_ref(o)))
        {
            return Err(Error::Domain(format!(
                "form {i} lies in the span of a single other form; CS-complexity is unbounded"
            )));
        }
        let mut classes = others.len().max(1);
        for c in 1..=others.len().max(1) {
            if partition_avoiding_span(&others, &target, c, &mut Vec::new(), 0) {
                classes = c;
                break;
            }
        }
        worst = worst.max(classes - 1);
    }
    Ok(worst)
}

/// Can `others[next..]` be placed into at most `c` classes (extending the
/// partial assignment) so that no class's span captures `target`?
fn partition_avoiding_span(
    others: &[Vec<i128>],
    target: &[i128],
    c: usize,
    classes: &mut Vec<Vec<Vec<i128>>>,
    next: usize,
) -> bool {
    if next == others.len() {
        return true;
    }
    let form = &others[next];
    for k in 0..classes.len().min(c) {
        classes[k].push(form.clone());
        if !in_rational_span(target, &classes[k])
            && partition_avoiding_span(others, target, c, classes, next + 1)
        {
            classes[k].pop();
            return true;
        }
        classes[k].pop();
    }
    if classes.len() < c {
        classes.push(vec![form.clone()]);
        if !in_rational_span(target, classes.last().unwrap())
            && partition_avoiding_span(others, target, c, classes, next + 1)
        {
            classes.pop();
            return true;
        }
        classes.pop();
    }
    false
}

fn rank_mod_q(rows: &[Vec<u64>], q: u64) -> usize {
    let mut a: Vec<Vec<u64>> = rows.to_vec();
    if a.is_empty() {
        return 0;
    }
    let d = a[0].len();
    let (mut rank, mut col) = (0usize, 0usize);
    while rank < a.len() && col < d {
        let Some(p) = (rank..a.len()).find(|&i| a[i][col] % q != 0) else {
            col += 1;
            continue;
        };
        a.swap(rank, p);
        let inv = mod_inverse(a[rank][col] % q, q);
        for i in (rank + 1)..a.len() {
            let factor = (a[i][col] % q) * inv % q;
            if factor != 0 {
                for j in 0..d {
                    a[i][j] = (a[i][j] + (q - factor) * (a[rank][j] % q)) % q;
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

fn mod_inverse(a: u64, q: u64) -> u64 {
    // q prime, a != 0 mod q
    let mut result = 1u64;
    let mut base = a % q;
    let mut exp = q - 2;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * base % q;
        }
        base = base * base % q;
        exp >>= 1;
    }
    result
}

/// The least `k >= 1` with `{L_i^{k+1} mod q}` linearly independent over
/// `F_q`, searched up to the CS-complexity. Requires CS-complexity <= q.
pub fn true_complexity(sys: &LinearSystem, q: u64) -> Result<usize> {
    let cs = cs_complexity(sys)?;
    if cs as u64 > q {
        return Err(Error::Domain(format!(
            "true complexity needs CS-complexity ({cs}) at most the field size ({q})"
        )));
    }
    let coeff_budget = 1 << 24;
    for k in 1..=cs.max(1) {
        let rows: Vec<Vec<u64>> = sys
            .forms
            .iter()
            .map(|f| {
                f.tensor_power(k as u32 + 1, coeff_budget).map(|t| {
                    t.coeffs
                        .iter()
                        .map(|&c| c.rem_euclid(q as i64) as u64)
                        .collect()
                })
            })
            .collect::<Result<_>>()?;
        if rank_mod_q(&rows, q) == sys.len() {
            return Ok(k);
        }
    }
    Err(Error::InternalCheck(format!(
        "no k <= CS-complexity {cs} gives independent tensor powers; \
         the Gowers--Wolf characterization should forbid this"
    )))
}

// ---------------------------------------------------------------------------
// File format: header "d=<int>", one form per line, space-separated.
// ---------------------------------------------------------------------------

pub fn parse_system(text: &str, file: &str) -> Result<LinearSystem> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line: 1,
            msg: "empty system file".into(),
        })?;
    let d: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line: lineno + 1,
            msg: "expected header d=<int>".into(),
        })?;
    let mut forms = Vec::new();
    for (lineno, line) in lines {
        let coeffs: Vec<i64> = line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Parse {
                    file: file.into(),
                    line: lineno + 1,
                    msg: format!("bad coefficient {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if coeffs.len() != d {
            return Err(Error::Parse {
                file: file.into(),
                line: lineno + 1,
                msg: format!("expected {d} coefficients, got {}", coeffs.len()),
            });
        }
        forms.push(LinearForm::new(coeffs)?);
    }
    LinearSystem::new(forms)
}

pub fn format_system(sys: &LinearSystem) -> String {
    let mut out = format!("d={}\n", sys.arity());
    for f in &sys.forms {
        let row = f
            .coeffs
            .iter()
            .map(i64::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&row);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupDescriptor;

    const ENUM_BUDGET: u128 = 100_000_000;
    const TABLE_BUDGET: usize = 1 << 26;

    fn set_of(group: &GroupDescriptor, members: &[usize]) -> GroupSet {
        GroupSet::from_members(group.clone(), members.to_vec())
    }

    #[test]
    fn binary_classification() {
        assert!(LinearSystem::three_ap_binary().is_binary());
        assert!(!LinearSystem::from_rows(&[&[1, 1, 1]]).unwrap().is_binary());
        assert!(!LinearSystem::from_rows(&[&[1, 1], &[1, -1]])
            .unwrap()
            .is_binary());
    }

    #[test]
    fn underlying_graph_examples() {
        let g = LinearSystem::three_ap_binary().underlying_graph().unwrap();
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.kappa, 2 * 3 - 0);

        let k4 = LinearSystem::clique(4).underlying_graph().unwrap();
        assert_eq!(k4.vertex_count, 4);
        assert_eq!(k4.edge_count, 6);

        let single = LinearSystem::from_rows(&[&[1, 1]]).unwrap();
        let g = single.underlying_graph().unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.degree_one_count, 2);
        assert_eq!(g.kappa, 0);
    }

    #[test]
    fn degeneracy_orderings() {
        let tri = OrientedGraph::triangle();
        let ord = tri.degeneracy_ordering(2).unwrap();
        // every vertex has at most 2 earlier neighbours
        for (pos, &v) in ord.iter().enumerate() {
            let earlier = &ord[..pos];
            let count = tri
                .edges
                .iter()
                .filter(|&&(a, b)| (a == v && earlier.contains(&b)) || (b == v && earlier.contains(&a)))
                .count();
            assert!(count <= 2);
        }
        assert!(OrientedGraph::complete(4).degeneracy_ordering(2).is_none());
        let edgeless = OrientedGraph::new(4, vec![]).unwrap();
        assert_eq!(edgeless.degeneracy_ordering(0).unwrap().len(), 4);
    }

    #[test]
    fn translation_invariance_examples() {
        let kap = LinearSystem::k_ap(3); // (x, x+y, x+2y)
        let z7 = GroupDescriptor::parse("Z7").unwrap();
        assert!(is_translation_invariant(&kap, &z7));

        let sys = LinearSystem::from_rows(&[&[1, -1, 0], &[0, 1, -1], &[2, 0, -2]]).unwrap();
        let z3 = GroupDescriptor::parse("Z3").unwrap();
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        assert!(is_translation_invariant(&sys, &z3));
        assert!(!is_translation_invariant(&sys, &z5));

        let clique = LinearSystem::clique(3);
        assert!(is_translation_invariant(&clique, &z5));
    }

    #[test]
    fn translation_invariance_matches_brute_force() {
        let systems = vec![
            LinearSystem::k_ap(3),
            LinearSystem::three_ap_binary(),
            LinearSystem::clique(3),
            LinearSystem::from_rows(&[&[1, -1, 0], &[0, 1, -1], &[2, 0, -2]]).unwrap(),
            LinearSystem::from_rows(&[&[2, 0], &[0, 3]]).unwrap(),
        ];
        for spec in ["Z3", "Z5", "Z6", "Z2xZ3", "Z4"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            for sys in &systems {
                let brute = is_translation_invariant_brute(sys, &g, ENUM_BUDGET).unwrap();
                assert_eq!(
                    is_translation_invariant(sys, &g),
                    brute,
                    "system {sys:?} over {spec}"
                );
            }
        }
    }

    #[test]
    fn closure_is_translation_invariant() {
        let sys = LinearSystem::from_rows(&[&[2, -2]]).unwrap();
        let closed = sys.translation_closure();
        assert_eq!(closed.forms[0].coeffs, vec![2, -2, 1]);
        for spec in ["Z5", "Z6", "Z7"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            assert!(is_translation_invariant(&closed, &g));
        }
        let tap = LinearSystem::three_ap_binary().translation_closure();
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        assert!(is_translation_invariant(&tap, &z5));
    }

    #[test]
    fn pattern_density_trivial_sets() {
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        let sys = LinearSystem::k_ap(3);
        let full = GroupSet::full(z5.clone());
        let c = pattern_count_brute(&sys, &full, ENUM_BUDGET).unwrap();
        assert_eq!(c.density(), ExactDensity::new(1, 1));
        let empty = set_of(&z5, &[]);
        let c = pattern_count_brute(&sys, &empty, ENUM_BUDGET).unwrap();
        assert_eq!(c.count, 0);
    }

    #[test]
    fn three_ap_small_example() {
        // A = {0,1} in Z_5: count (x,y) with x, x+y, x+2y all in A.
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        let a = set_of(&z5, &[0, 1]);
        let sys = LinearSystem::k_ap(3);
        let mut expected = 0u128;
        for x in 0..5usize {
            for y in 0..5usize {
                let (p, q, r) = (x, (x + y) % 5, (x + 2 * y) % 5);
                if a.contains(p) && a.contains(q) && a.contains(r) {
                    expected += 1;
                }
            }
        }
        let c = pattern_count_brute(&sys, &a, ENUM_BUDGET).unwrap();
        assert_eq!(c.count, expected);
        assert_eq!(c.total, 25);
    }

    #[test]
    fn odd_set_has_no_triangle_patterns() {
        let g = GroupDescriptor::parse("Z10").unwrap();
        let odds = set_of(&g, &[1, 3, 5, 7, 9]);
        let c = pattern_count_binary(&LinearSystem::clique(3), &odds, TABLE_BUDGET).unwrap();
        assert_eq!(c.count, 0);
    }

    #[test]
    fn factored_equals_brute_on_random_instances() {
        let mut seed = 0xfeedu64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(7);
            seed >> 16
        };
        let systems = vec![
            LinearSystem::three_ap_binary(),
            LinearSystem::clique(3),
            LinearSystem::from_rows(&[&[1, 2, 0], &[0, 1, 3]]).unwrap(),
        ];
        for spec in ["Z7", "Z3xZ4", "Z11"] {
            let g = GroupDescriptor::parse(spec).unwrap();
            for sys in &systems {
                let members: Vec<usize> =
                    (0..g.len()).filter(|_| next() % 2 == 0).collect();
                let a = set_of(&g, &members);
                let fast = pattern_count_binary(sys, &a, TABLE_BUDGET).unwrap();
                let slow = pattern_count_brute(sys, &a, ENUM_BUDGET).unwrap();
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn nondegenerate_search_examples() {
        let z5 = GroupDescriptor::parse("Z5").unwrap();
        let sys = LinearSystem::k_ap(3);
        // A = {0}: only the degenerate all-zero instance.
        let (w, degenerate) = nondegenerate_search(&sys, &set_of(&z5, &[0]), ENUM_BUDGET).unwrap();
        assert!(w.is_none());
        assert_eq!(degenerate, 1);
        // A = Z_5: witness exists.
        let (w, _) = nondegenerate_search(&sys, &GroupSet::full(z5), ENUM_BUDGET).unwrap();
        assert!(w.is_some());
        // A = {0,1,2} in Z_7: the first witness is the instance (0,1,2).
        let z7 = GroupDescriptor::parse("Z7").unwrap();
        let (w, _) = nondegenerate_search(&sys, &set_of(&z7, &[0, 1, 2]), ENUM_BUDGET).unwrap();
        let w = w.unwrap();
        assert_eq!(w, vec![0, 1]); // x=0, y=1 maps to (0,1,2)
    }

    #[test]
    fn cs_complexity_examples() {
        assert_eq!(cs_complexity(&LinearSystem::three_ap_binary()).unwrap(), 1);
        assert_eq!(cs_complexity(&LinearSystem::clique(4)).unwrap(), 1);
        assert_eq!(cs_complexity(&LinearSystem::k_ap(4)).unwrap(), 2);
        assert_eq!(cs_complexity(&LinearSystem::k_ap(5)).unwrap(), 3);
        let single = LinearSystem::from_rows(&[&[1, 1]]).unwrap();
        assert_eq!(cs_complexity(&single).unwrap(), 0);
        // The 3-clique forms are jointly invertible as a map G^3 -> G^3 over
        // odd-order groups (t is exactly alpha^3 there), and indeed no class
        // of the other two forms can span a clique form: complexity 0.
        assert_eq!(cs_complexity(&LinearSystem::clique(3)).unwrap(), 0);
    }

    #[test]
    fn tensor_power_examples() {
        let l = LinearForm::new(vec![1, 2]).unwrap();
        assert_eq!(l.tensor_power(2, 1 << 20).unwrap().coeffs, vec![1, 2, 2, 4]);
        assert_eq!(l.tensor_power(1, 1 << 20).unwrap().coeffs, vec![1, 2]);
        let l = LinearForm::new(vec![1, 1]).unwrap();
        assert_eq!(l.tensor_power(2, 1 << 20).unwrap().coeffs, vec![1, 1, 1, 1]);
    }

    #[test]
    fn true_complexity_examples() {
        assert_eq!(true_complexity(&LinearSystem::k_ap(4), 5).unwrap(), 2);
        assert_eq!(true_complexity(&LinearSystem::k_ap(3), 5).unwrap(), 1);
        // squares of the 4-AP forms are dependent: (1,t,t^2) for t=0..3 in
        // a 3-dimensional space
        let rows: Vec<Vec<u64>> = LinearSystem::k_ap(4)
            .forms
            .iter()
            .map(|f| {
                f.tensor_power(2, 1 << 20)
                    .unwrap()
                    .coeffs
                    .iter()
                    .map(|&c| c.rem_euclid(5) as u64)
                    .collect()
            })
            .collect();
        assert!(rank_mod_q(&rows, 5) < 4);
    }

    #[test]
    fn true_complexity_at_most_cs() {
        for sys in [
            LinearSystem::k_ap(3),
            LinearSystem::k_ap(4),
            LinearSystem::three_ap_binary(),
            LinearSystem::clique(3),
        ] {
            let cs = cs_complexity(&sys).unwrap();
            let tc = true_complexity(&sys, 7).unwrap();
            assert!(tc <= cs.max(1));
        }
    }

    #[test]
    fn translation_invariant_density_is_shift_stable() {
        let g = GroupDescriptor::parse("Z9").unwrap();
        let sys = LinearSystem::k_ap(3);
        let a = set_of(&g, &[0, 1, 4, 6]);
        let base = pattern_count_brute(&sys, &a, ENUM_BUDGET).unwrap();
        for c in 0..g.len() {
            let shifted = a.shift(c);
            let d = pattern_count_brute(&sys, &shifted, ENUM_BUDGET).unwrap();
            assert_eq!(base, d);
        }
    }

    #[test]
    fn system_file_round_trip() {
        let sys = LinearSystem::three_ap_binary();
        let text = format_system(&sys);
        let back = parse_system(&text, "mem").unwrap();
        assert_eq!(back, sys);
        assert!(parse_system("garbage", "mem").is_err());
    }
}
