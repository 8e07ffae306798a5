//! Pseudometrics on finite alphabets, the product pseudometric `Δ₂`, and
//! covering/packing numbers.
//!
//! Conventions are strict on both sides: a set is ε-separated when distinct
//! members are at distance `> ε`, and ε-dense when every point is at distance
//! `< ε` from the net. `N_ε` is the maximum size of an ε-separated subset and
//! `S_ε` the minimum size of an ε-dense subset, so that
//! `N_{2ε} ≤ S_ε ≤ N_ε` away from distance ties.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::logspace::{log_sum_exp, LnFactorial};
use crate::microstates::MicrostateField;

/// Labeled points with real-vector payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    labels: Vec<String>,
    coords: Vec<Vec<f64>>,
}

impl Alphabet {
    pub fn new(labels: Vec<String>, coords: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return invalid("alphabet must be nonempty");
        }
        if labels.len() != coords.len() {
            return invalid("one coordinate vector per symbol is required");
        }
        Ok(Alphabet { labels, coords })
    }

    /// Symbols `0..k` with one-dimensional coordinates equal to the index.
    pub fn indexed(k: usize) -> Self {
        Alphabet {
            labels: (0..k).map(|i| i.to_string()).collect(),
            coords: (0..k).map(|i| vec![i as f64]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn coords(&self, a: usize) -> &[f64] {
        &self.coords[a]
    }
}

/// A pseudometric on `{0, .., k-1}` given by its full table.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePseudometric {
    k: usize,
    table: Vec<f64>,
    bound: f64,
}

const AXIOM_TOL: f64 = 1e-12;

impl BasePseudometric {
    /// Validates symmetry, zero diagonal and the triangle inequality exhaustively.
    /// The bound defaults to the diameter.
    pub fn from_table(rows: Vec<Vec<f64>>, bound: Option<f64>) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return invalid("distance table must be square and nonempty");
        }
        let table: Vec<f64> = rows.into_iter().flatten().collect();
        let at = |i: usize, j: usize| table[i * k + j];
        for i in 0..k {
            if at(i, i) != 0.0 {
                return invalid(format!("distance from symbol {i} to itself is not zero"));
            }
            for j in 0..k {
                let x = at(i, j);
                if !x.is_finite() || x < 0.0 {
                    return invalid(format!("distance ({i},{j}) must be finite and nonnegative"));
                }
                if (x - at(j, i)).abs() > AXIOM_TOL {
                    return invalid(format!("distance table is not symmetric at ({i},{j})"));
                }
                for l in 0..k {
                    if at(i, l) > at(i, j) + at(j, l) + AXIOM_TOL {
                        return invalid(format!("triangle inequality fails for ({i},{j},{l})"));
                    }
                }
            }
        }
        let diameter = table.iter().copied().fold(0.0, f64::max);
        let bound = bound.unwrap_or(diameter);
        if bound + AXIOM_TOL < diameter {
            return invalid(format!("declared bound {bound} is below the diameter {diameter}"));
        }
        Ok(BasePseudometric { k, table, bound })
    }

    /// Distance 1 between distinct symbols.
    pub fn discrete(k: usize) -> Self {
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        Self::from_table(rows, None).expect("discrete metric is valid")
    }

    /// Euclidean distance between symbol coordinates.
    pub fn euclidean(alphabet: &Alphabet) -> Result<Self> {
        let k = alphabet.len();
        let rows = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        alphabet
                            .coords(i)
                            .iter()
                            .zip(alphabet.coords(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        Self::from_table(rows, None)
    }

    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.table[a * self.k + b]
    }

    /// Declared bound `M ≥ diameter`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn diameter(&self) -> f64 {
        self.table.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest positive distance, `None` if all distances vanish.
    pub fn min_positive(&self) -> Option<f64> {
        self.table.iter().copied().filter(|&x| x > 0.0).reduce(f64::min)
    }

    /// Classes of symbols at mutual distance zero.
    pub fn zero_classes(&self) -> Vec<Vec<usize>> {
        let mut class_of = vec![usize::MAX; self.k];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for a in 0..self.k {
            if class_of[a] != usize::MAX {
                continue;
            }
            let members: Vec<usize> = (0..self.k).filter(|&b| self.dist(a, b) == 0.0).collect();
            for &b in &members {
                class_of[b] = classes.len();
            }
            classes.push(members);
        }
        classes
    }

    pub fn is_metric(&self) -> bool {
        (0..self.k).all(|a| (0..self.k).all(|b| a == b || self.dist(a, b) > 0.0))
    }
}

/// `Δ₂(z, w) = ((1/n) Σⱼ Δ(z(j), w(j))²)^{1/2}`.
pub fn delta2(z: &[u32], w: &[u32], metric: &BasePseudometric) -> Result<f64> {
    if z.len() != w.len() {
        return invalid(format!("fields have lengths {} and {}", z.len(), w.len()));
    }
    if z.is_empty() {
        return Ok(0.0);
    }
    let k = metric.size() as u32;
    if z.iter().chain(w).any(|&a| a >= k) {
        return invalid("symbol index outside the alphabet");
    }
    Ok(delta2_unchecked(z, w, metric))
}

#[inline]
pub(crate) fn delta2_unchecked(z: &[u32], w: &[u32], metric: &BasePseudometric) -> f64 {
    let s: f64 = z
        .iter()
        .zip(w)
        .map(|(&a, &b)| {
            let x = metric.dist(a as usize, b as usize);
            x * x
        })
        .sum();
    (s / z.len() as f64).sqrt()
}

/// Explicit finite metric space.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Requires a symmetric, nonnegative table with zero diagonal.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return invalid(format!("expected {} entries, got {}", n * n, data.len()));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return invalid("distance matrix diagonal must be zero");
            }
            for j in 0..n {
                let x = data[i * n + j];
                if !x.is_finite() || x < 0.0 || x != data[j * n + i] {
                    return invalid(format!("distance matrix entry ({i},{j}) is invalid"));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn satisfies_triangle(&self, tol: f64) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..n).all(|j| (0..n).all(|k| self.get(i, k) <= self.get(i, j) + self.get(j, k) + tol)))
    }

    /// `n` as little-endian u64, then `n²` little-endian f64.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for x in &self.data {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        if n > 1 << 16 {
            return invalid(format!("distance matrix of size {n} is too large"));
        }
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Self::new(n, data)
    }
}

/// A finite subset of a pseudometric space.
#[derive(Clone, Debug)]
pub enum PointCloud {
    Fields {
        fields: Vec<MicrostateField>,
        metric: BasePseudometric,
    },
    Matrix(DistanceMatrix),
}

impl PointCloud {
    /// Fields sorted lexicographically so greedy scans do not depend on input order.
    pub fn fields(mut fields: Vec<MicrostateField>, metric: BasePseudometric) -> Result<Self> {
        if let Some(first) = fields.first() {
            let d = first.len();
            if fields.iter().any(|f| f.len() != d) {
                return invalid("all fields in a point cloud must have the same length");
            }
            let k = metric.size() as u32;
            if fields.iter().any(|f| f.symbols().iter().any(|&a| a >= k)) {
                return invalid("symbol index outside the alphabet");
            }
        }
        fields.sort();
        Ok(PointCloud::Fields { fields, metric })
    }

    pub fn len(&self) -> usize {
        match self {
            PointCloud::Fields { fields, .. } => fields.len(),
            PointCloud::Matrix(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            PointCloud::Fields { fields, metric } => delta2_unchecked(fields[i].symbols(), fields[j].symbols(), metric),
            PointCloud::Matrix(m) => m.get(i, j),
        }
    }

    /// Parses one field per line, comma-separated symbol indices.
    pub fn parse_fields_csv(text: &str) -> Result<Vec<MicrostateField>> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(row, line)| {
                line.split(',')
                    .map(|t| t.trim().parse::<u32>())
                    .collect::<std::result::Result<Vec<u32>, _>>()
                    .map(MicrostateField::new)
                    .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))
            })
            .collect()
    }

    pub fn fields_to_csv(fields: &[MicrostateField]) -> String {
        let mut out = String::new();
        for f in fields {
            let row: Vec<String> = f.symbols().iter().map(|a| a.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Rows of a bit-packed relation `rel(i, j)` computed in parallel.
    fn relation(&self, rel: impl Fn(f64) -> bool + Sync) -> Vec<Vec<u64>> {
        let n = self.len();
        let words = n.div_ceil(64);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0u64; words];
                for j in 0..n {
                    if rel(self.distance(i, j)) {
                        row[j / 64] |= 1 << (j % 64);
                    }
                }
                row
            })
            .collect()
    }
}

/// Whether a reported count is exact or a one-sided bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    Exact,
    Lower,
    Upper,
}

impl BoundDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundDirection::Exact => "exact",
            BoundDirection::Lower => "lower",
            BoundDirection::Upper => "upper",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    /// Exhaustive search, at most [`EXACT_LIMIT`] points.
    Exact,
    Greedy,
}

/// Largest point cloud accepted by exact searches.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundedCount {
    pub value: usize,
    pub direction: BoundDirection,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return invalid(format!("epsilon must be positive, got {eps}"));
    }
    Ok(())
}

fn check_exact(n: usize) -> Result<()> {
    if n > EXACT_LIMIT {
        return Err(Error::Infeasible(format!(
            "exact search needs at most {EXACT_LIMIT} points, got {n}; use greedy mode"
        )));
    }
    Ok(())
}

fn small_masks(cloud: &PointCloud, rel: impl Fn(f64) -> bool) -> Vec<u32> {
    let n = cloud.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| rel(cloud.distance(i, j)))
                .fold(0u32, |m, j| m | 1 << j)
        })
        .collect()
}

/// `N_ε`: maximum size of a subset with pairwise distances `> ε`.
///
/// Greedy mode keeps each point (in cloud order) that is `> ε` from every point
/// kept so far; the result is maximal, hence a lower bound.
pub fn max_separated_count(cloud: &PointCloud, eps: f64, mode: CountMode) -> Result<BoundedCount> {
    check_eps(eps)?;
    let n = cloud.len();
    if n == 0 {
        return Ok(BoundedCount {
            value: 0,
            direction: BoundDirection::Exact,
        });
    }
    match mode {
        CountMode::Exact => {
            check_exact(n)?;
            let sep = small_masks(cloud, |x| x > eps);
            let mut best = 0;
            max_clique(&sep, (1u32 << n) - 1, 0, &mut best);
            Ok(BoundedCount {
                value: best,
                direction: BoundDirection::Exact,
            })
        }
        CountMode::Greedy => {
            let mut kept: Vec<usize> = Vec::new();
            for i in 0..n {
                let close = if kept.len() > 256 {
                    kept.par_iter().any(|&j| cloud.distance(i, j) <= eps)
                } else {
                    kept.iter().any(|&j| cloud.distance(i, j) <= eps)
                };
                if !close {
                    kept.push(i);
                }
            }
            Ok(BoundedCount {
                value: kept.len(),
                direction: if n == 1 {
                    BoundDirection::Exact
                } else {
                    BoundDirection::Lower
                },
            })
        }
    }
}

fn max_clique(adj: &[u32], cand: u32, size: usize, best: &mut usize) {
    if cand == 0 {
        *best = (*best).max(size);
        return;
    }
    if size + cand.count_ones() as usize <= *best {
        return;
    }
    let v = cand.trailing_zeros() as usize;
    max_clique(adj, cand & adj[v], size + 1, best);
    max_clique(adj, cand & !(1 << v), size, best);
}

/// `S_ε`: minimum size of a subset within distance `< ε` of every point.
///
/// Greedy mode repeatedly picks the point covering the most uncovered points,
/// giving an upper bound.
pub fn min_covering_count(cloud: &PointCloud, eps: f64, mode: CountMode) -> Result<BoundedCount> {
    check_eps(eps)?;
    let n = cloud.len();
    if n == 0 {
        return Ok(BoundedCount {
            value: 0,
            direction: BoundDirection::Exact,
        });
    }
    match mode {
        CountMode::Exact => {
            check_exact(n)?;
            let cover = small_masks(cloud, |x| x < eps);
            let all = (1u32 << n) - 1;
            let value = (1..=n)
                .find(|&k| cover_search(&cover, all, k))
                .expect("the whole set always covers itself");
            Ok(BoundedCount {
                value,
                direction: BoundDirection::Exact,
            })
        }
        CountMode::Greedy => {
            let cover = cloud.relation(|x| x < eps);
            let words = n.div_ceil(64);
            let mut uncovered = vec![u64::MAX; words];
            if !n.is_multiple_of(64) {
                uncovered[words - 1] = (1u64 << (n % 64)) - 1;
            }
            let mut chosen = 0;
            while uncovered.iter().any(|&w| w != 0) {
                let (best, _) = cover
                    .par_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let gain: u32 = row.iter().zip(&uncovered).map(|(a, b)| (a & b).count_ones()).sum();
                        (i, gain)
                    })
                    .reduce(
                        || (usize::MAX, 0),
                        |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
                    );
                for (u, c) in uncovered.iter_mut().zip(&cover[best]) {
                    *u &= !c;
                }
                chosen += 1;
            }
            Ok(BoundedCount {
                value: chosen,
                direction: if n == 1 {
                    BoundDirection::Exact
                } else {
                    BoundDirection::Upper
                },
            })
        }
    }
}

fn cover_search(cover: &[u32], uncovered: u32, budget: usize) -> bool {
    if uncovered == 0 {
        return true;
    }
    if budget == 0 {
        return false;
    }
    let p = uncovered.trailing_zeros();
    cover
        .iter()
        .filter(|&&c| c & (1 << p) != 0)
        .any(|&c| cover_search(cover, uncovered & !c, budget - 1))
}

/// `ln` of the volume bound for an ε-separated subset of `M·p·Ball(ℓ²(n, u_n))`:
/// `2·tr(p)·n·ln((3M+ε)/ε)`.
pub fn packing_bound(m: f64, eps: f64, trace_p: f64, n: usize) -> Result<f64> {
    if !(m > 0.0) || !(eps > 0.0) {
        return invalid("M and epsilon must be positive");
    }
    if !(0.0..=1.0).contains(&trace_p) {
        return invalid(format!("trace of a projection must lie in [0,1], got {trace_p}"));
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    Ok(2.0 * trace_p * n as f64 * ((3.0 * m + eps) / eps).ln())
}

/// Upper bound on `ln |{w ∈ Aᵈ : Δ₂(z, w) ≤ ε}|`, uniform over centres `z`.
///
/// Each coordinate that leaves the centre's zero-distance class costs at least
/// `m²/d` in `Δ₂²`, `m` the smallest positive distance.
pub fn log_ball_volume_bound(metric: &BasePseudometric, d: usize, eps: f64, lnf: &LnFactorial) -> f64 {
    let classes = metric.zero_classes();
    let class_max = classes.iter().map(Vec::len).max().unwrap_or(1) as f64;
    let base = d as f64 * class_max.ln();
    let Some(m) = metric.min_positive() else {
        return base;
    };
    let others = (classes.len() - 1) as f64;
    let t = ((eps * eps * d as f64) / (m * m) + 1e-9).floor().min(d as f64) as usize;
    let terms: Vec<f64> = (0..=t)
        .map(|i| lnf.ln_binomial(d, i) + i as f64 * others.ln())
        .collect();
    base + log_sum_exp(&terms)
}

/// True when distinct fields of length `d` are always more than `ε` apart.
pub fn fields_are_separated(metric: &BasePseudometric, d: usize, eps: f64) -> bool {
    match metric.min_positive() {
        Some(m) => metric.is_metric() && eps < m / (d as f64).sqrt(),
        None => metric.size() == 1,
    }
}
