//! Finite quasi-metric measure spaces.
//!
//! A [`MetricMeasureSpace`] stores a dense symmetric distance table together
//! with positive point masses. On construction every point's neighbours are
//! sorted by distance so that open balls `B(x, r) = {y : d(x, y) < r}` are
//! prefixes of that order and their masses are prefix sums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{fmax, ls_fit, Scalar};

/// Largest point count for which the quasi-triangle constant is certified by
/// enumerating every triple.
pub const EXHAUSTIVE_TRIPLE_CAP: usize = 512;

/// Number of random triples examined above [`EXHAUSTIVE_TRIPLE_CAP`].
pub const SAMPLED_TRIPLES: usize = 10_000_000;

/// Certified quasi-triangle constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiTriangle {
    /// `max d(i,k) / (d(i,j) + d(j,k))`, clamped below at 1.
    pub a0: f64,
    /// The maximizing triple as `(i, k, j)`; `None` when no triple exceeds 1.
    pub witness: Option<(usize, usize, usize)>,
    /// True when the maximum was taken over a random sample of triples.
    pub sampled: bool,
}

/// A finite quasi-metric space carrying a purely atomic measure.
#[derive(Debug, Clone)]
pub struct MetricMeasureSpace<T: Scalar> {
    n: usize,
    dist: Vec<T>,
    weight: Vec<T>,
    points: Option<Vec<Vec<T>>>,
    cert: QuasiTriangle,
    label: String,
    // neighbour order of every point, nearest first, ties by index
    order: Vec<u32>,
    sorted: Vec<T>,
    cum_mass: Vec<T>,
    diam: T,
    min_gap: T,
}

impl<T: Scalar> MetricMeasureSpace<T> {
    /// Builds a space from a row-major `n x n` distance table.
    ///
    /// The quasi-triangle constant is always certified. When `declared_a0` is
    /// given it must dominate the certified value, otherwise a
    /// [`Error::Certification`] naming the worst triple is returned.
    pub fn from_table(
        dist: Vec<T>,
        weight: Vec<T>,
        label: impl Into<String>,
        declared_a0: Option<f64>,
    ) -> Result<Self> {
        let n = weight.len();
        if n == 0 {
            return Err(Error::Parameter("space must contain at least one point".into()));
        }
        if dist.len() != n * n {
            return Err(Error::Format(format!(
                "distance table has {} entries, expected {}",
                dist.len(),
                n * n
            )));
        }
        for (i, &w) in weight.iter().enumerate() {
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::Format(format!("weight of point {i} is {w}, must be positive")));
            }
        }
        for i in 0..n {
            if dist[i * n + i] != T::zero() {
                return Err(Error::Format(format!("d({i},{i}) = {} is not zero", dist[i * n + i])));
            }
            for j in (i + 1)..n {
                let a = dist[i * n + j];
                let b = dist[j * n + i];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::Format(format!("d({i},{j}) is not finite")));
                }
                if a != b {
                    return Err(Error::Format(format!(
                        "distance table is not symmetric: d({i},{j}) = {a}, d({j},{i}) = {b}"
                    )));
                }
                if !(a > T::zero()) {
                    return Err(Error::Format(format!("d({i},{j}) = {a} must be positive")));
                }
            }
        }
        let cert = certify_quasi_triangle(&dist, n);
        if let Some(declared) = declared_a0 {
            if cert.a0 > declared * (1.0 + 1e-12) {
                let (i, k, j) = cert.witness.unwrap_or((0, 0, 0));
                return Err(Error::Certification {
                    i,
                    k,
                    j,
                    ratio: cert.a0,
                    declared,
                });
            }
        }
        Ok(Self::assemble(n, dist, weight, cert, label.into()))
    }

    fn assemble(n: usize, dist: Vec<T>, weight: Vec<T>, cert: QuasiTriangle, label: String) -> Self {
        let rows: Vec<(Vec<u32>, Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|x| {
                let row = &dist[x * n..(x + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    row[a as usize]
                        .partial_cmp(&row[b as usize])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let sorted: Vec<T> = idx.iter().map(|&y| row[y as usize]).collect();
                let mut acc = T::zero();
                let cum: Vec<T> = idx
                    .iter()
                    .map(|&y| {
                        acc = acc + weight[y as usize];
                        acc
                    })
                    .collect();
                (idx, sorted, cum)
            })
            .collect();
        let mut order = Vec::with_capacity(n * n);
        let mut sorted = Vec::with_capacity(n * n);
        let mut cum_mass = Vec::with_capacity(n * n);
        let mut diam = T::zero();
        let mut min_gap = T::infinity();
        for (o, s, c) in rows {
            diam = fmax(diam, s[n - 1]);
            if n > 1 && s[1] < min_gap {
                min_gap = s[1];
            }
            order.extend(o);
            sorted.extend(s);
            cum_mass.extend(c);
        }
        if n == 1 {
            min_gap = T::zero();
        }
        Self {
            n,
            dist,
            weight,
            points: None,
            cert,
            label,
            order,
            sorted,
            cum_mass,
            diam,
            min_gap,
        }
    }

    /// Builds a Euclidean space from coordinates.
    pub fn from_points(points: Vec<Vec<T>>, weight: Vec<T>, label: impl Into<String>) -> Result<Self> {
        let n = points.len();
        let mut dist = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclid(&points[i], &points[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let mut s = Self::from_table(dist, weight, label, None)?;
        s.points = Some(points);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn d(&self, x: usize, y: usize) -> T {
        self.dist[x * self.n + y]
    }

    pub fn dist_row(&self, x: usize) -> &[T] {
        &self.dist[x * self.n..(x + 1) * self.n]
    }

    #[inline]
    pub fn weight(&self, x: usize) -> T {
        self.weight[x]
    }

    pub fn weights(&self) -> &[T] {
        &self.weight
    }

    pub fn total_mass(&self) -> T {
        self.weight.iter().copied().sum()
    }

    pub fn a0(&self) -> f64 {
        self.cert.a0
    }

    pub fn certificate(&self) -> QuasiTriangle {
        self.cert
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> Option<&[Vec<T>]> {
        self.points.as_deref()
    }

    pub fn diam(&self) -> T {
        self.diam
    }

    /// Smallest distance between two distinct points (0 for a single point).
    pub fn min_gap(&self) -> T {
        self.min_gap
    }

    /// Neighbours of `x` sorted by distance (`x` itself first).
    pub fn neighbors(&self, x: usize) -> (&[u32], &[T]) {
        let r = x * self.n..(x + 1) * self.n;
        (&self.order[r.clone()], &self.sorted[r])
    }

    /// Number of points in the open ball `B(x, r)`.
    #[inline]
    pub fn ball_len(&self, x: usize, r: T) -> usize {
        let s = &self.sorted[x * self.n..(x + 1) * self.n];
        s.partition_point(|&d| d < r)
    }

    /// Points of the open ball `B(x, r)`, nearest first.
    pub fn ball(&self, x: usize, r: T) -> &[u32] {
        let len = self.ball_len(x, r);
        &self.order[x * self.n..x * self.n + len]
    }

    /// `mu(B(x, r))` for the open ball.
    #[inline]
    pub fn ball_mass(&self, x: usize, r: T) -> T {
        let len = self.ball_len(x, r);
        if len == 0 {
            T::zero()
        } else {
            self.cum_mass[x * self.n + len - 1]
        }
    }

    /// Mass of the first `len` neighbours of `x`.
    #[inline]
    pub fn prefix_mass(&self, x: usize, len: usize) -> T {
        if len == 0 {
            T::zero()
        } else {
            self.cum_mass[x * self.n + len - 1]
        }
    }

    /// `V(x, y) = mu(B(x, d(x, y)))`; zero when `x == y`.
    #[inline]
    pub fn v(&self, x: usize, y: usize) -> T {
        self.ball_mass(x, self.d(x, y))
    }

    /// Replaces every distance by `d^a`. For `a > 1` the result is a genuine
    /// quasi-metric; the constant is re-certified.
    pub fn snowflake(&self, a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::Parameter(format!("snowflake exponent {a} must be positive")));
        }
        let e = T::lit(a);
        let dist = self.dist.iter().map(|&d| d.powf(e)).collect();
        Self::from_table(dist, self.weight.clone(), format!("{}^{a}", self.label), None)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Mean of `f` with respect to `mu`.
    pub fn mean(&self, f: &[T]) -> T {
        let s: T = f.iter().zip(&self.weight).map(|(&v, &w)| v * w).sum();
        s / self.total_mass()
    }

    /// `<f, g>_mu`.
    pub fn inner(&self, f: &[T], g: &[T]) -> T {
        f.iter()
            .zip(g)
            .zip(&self.weight)
            .map(|((&a, &b), &w)| a * b * w)
            .sum()
    }

    /// Distance table as `f64`, row-major.
    pub fn dist_table_f64(&self) -> Vec<f64> {
        self.dist.iter().map(|d| d.as_f64()).collect()
    }
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (p - q) * (p - q))
        .sum::<T>()
        .sqrt()
}

/// Certifies the quasi-triangle constant of a row-major distance table:
/// exhaustively for `n <= EXHAUSTIVE_TRIPLE_CAP`, otherwise over a fixed-seed
/// sample of [`SAMPLED_TRIPLES`] triples.
pub fn certify_quasi_triangle<T: Scalar>(dist: &[T], n: usize) -> QuasiTriangle {
    type Best = (f64, Option<(usize, usize, usize)>);
    fn better(a: Best, b: Best) -> Best {
        match (a.1, b.1) {
            (_, None) => a,
            (None, _) => b,
            (Some(ta), Some(tb)) => {
                if b.0 > a.0 || (b.0 == a.0 && tb < ta) {
                    b
                } else {
                    a
                }
            }
        }
    }
    let ratio = |i: usize, j: usize, k: usize| -> f64 {
        let num = dist[i * n + k].as_f64();
        let den = dist[i * n + j].as_f64() + dist[j * n + k].as_f64();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    if n <= EXHAUSTIVE_TRIPLE_CAP {
        let best = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best: Best = (1.0, None);
                for k in (i + 1)..n {
                    for j in 0..n {
                        if j == i || j == k {
                            continue;
                        }
                        let r = ratio(i, j, k);
                        if r > best.0 {
                            best = (r, Some((i, k, j)));
                        }
                    }
                }
                best
            })
            .reduce(|| (1.0, None), better);
        QuasiTriangle {
            a0: best.0,
            witness: best.1,
            sampled: false,
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x005e_eda0);
        let mut best: Best = (1.0, None);
        for _ in 0..SAMPLED_TRIPLES {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            let (i, k) = if i < k { (i, k) } else { (k, i) };
            let r = ratio(i, j, k);
            if r > 1.0 {
                best = better(best, (r, Some((i, k, j))));
            }
        }
        QuasiTriangle {
            a0: best.0,
            witness: best.1,
            sampled: true,
        }
    }
}

/// Test-space families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// `n` equispaced points on `[0, 1]`.
    Grid1d { n: usize },
    /// `side x side` lattice on `[0, 1]^2`.
    Grid2d { side: usize },
    /// `n` equispaced points on a circle of circumference 1 with arc-length distance.
    Circle { n: usize },
    /// Ring lattice where each node links to its `ring` nearest neighbours on
    /// each side, plus `chords` random long-range edges; shortest-path metric.
    Graph {
        n: usize,
        ring: usize,
        chords: usize,
        seed: u64,
    },
    /// Vertices of the level-`level` Sierpinski gasket with the Euclidean metric.
    SierpinskiLevel { level: u32 },
    /// `n` equispaced points on `[0, 1]` with distance `|x - y|^exponent`.
    SnowflakePower { n: usize, exponent: f64 },
}

/// Measure placed on a generated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Measure {
    #[default]
    Uniform,
    /// Relative point masses, normalized to total mass 1.
    Custom { weights: Vec<f64> },
}

/// Generates one of the standard test spaces. Total mass is normalized to 1.
pub fn generate_space<T: Scalar>(gen: &Generator, measure: &Measure) -> Result<MetricMeasureSpace<T>> {
    let space = match *gen {
        Generator::Grid1d { n } => {
            check_size(n)?;
            MetricMeasureSpace::from_points(line_points(n), uniform(n), format!("grid1d-{n}"))?
        }
        Generator::Grid2d { side } => {
            check_size(side)?;
            let h = if side > 1 { 1.0 / (side - 1) as f64 } else { 0.0 };
            let pts = (0..side)
                .flat_map(|i| (0..side).map(move |j| vec![T::lit(j as f64 * h), T::lit(i as f64 * h)]))
                .collect::<Vec<_>>();
            MetricMeasureSpace::from_points(pts, uniform(side * side), format!("grid2d-{side}x{side}"))?
        }
        Generator::Circle { n } => {
            check_size(n)?;
            let mut dist = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    let m = i.abs_diff(j).min(n - i.abs_diff(j));
                    dist[i * n + j] = T::lit(m as f64 / n as f64);
                }
            }
            MetricMeasureSpace::from_table(dist, uniform(n), format!("circle-{n}"), None)?
        }
        Generator::Graph { n, ring, chords, seed } => {
            check_size(n)?;
            graph_space(n, ring, chords, seed)?
        }
        Generator::SierpinskiLevel { level } => {
            let pts = sierpinski_points::<T>(level);
            let n = pts.len();
            MetricMeasureSpace::from_points(pts, uniform(n), format!("sierpinski-{level}"))?
        }
        Generator::SnowflakePower { n, exponent } => {
            check_size(n)?;
            if !(exponent > 0.0) {
                return Err(Error::Parameter(format!("snowflake exponent {exponent} must be positive")));
            }
            let base = MetricMeasureSpace::<T>::from_points(line_points(n), uniform(n), "grid1d")?;
            base.snowflake(exponent)?.with_label(format!("snowflake-{n}-a{exponent}"))
        }
    };
    apply_measure(space, measure)
}

fn apply_measure<T: Scalar>(mut space: MetricMeasureSpace<T>, measure: &Measure) -> Result<MetricMeasureSpace<T>> {
    match measure {
        Measure::Uniform => Ok(space),
        Measure::Custom { weights } => {
            if weights.len() != space.n {
                return Err(Error::Parameter(format!(
                    "custom measure has {} weights for {} points",
                    weights.len(),
                    space.n
                )));
            }
            if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::Parameter("custom weights must be positive and finite".into()));
            }
            let total: f64 = weights.iter().sum();
            let w: Vec<T> = weights.iter().map(|&w| T::lit(w / total)).collect();
            let points = space.points.take();
            let mut s = MetricMeasureSpace::assemble(space.n, space.dist, w, space.cert, space.label);
            s.points = points;
            Ok(s)
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Parameter("size must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn uniform<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_usize(n); n]
}

fn line_points<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    (0..n)
        .map(|i| {
            let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            vec![T::lit(x)]
        })
        .collect()
}

fn graph_space<T: Scalar>(n: usize, ring: usize, chords: usize, seed: u64) -> Result<MetricMeasureSpace<T>> {
    let mut adj = vec![Vec::new(); n];
    let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    };
    if n > 1 {
        for i in 0..n {
            for s in 1..=ring.max(1) {
                link(i, (i + s) % n, &mut adj);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n > 2 {
        for _ in 0..chords {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            link(a, b, &mut adj);
        }
    }
    let mut dist = vec![T::zero(); n * n];
    let mut queue = std::collections::VecDeque::new();
    for src in 0..n {
        let mut hop = vec![usize::MAX; n];
        hop[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if hop[v] == usize::MAX {
                    hop[v] = hop[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (dst, &h) in hop.iter().enumerate() {
            dist[src * n + dst] = T::from_usize(h);
        }
    }
    MetricMeasureSpace::from_table(dist, uniform(n), format!("graph-{n}"), None)
}

/// Gasket vertices on the integer lattice of side `2^level`, converted to the
/// unit equilateral triangle.
fn sierpinski_points<T: Scalar>(level: u32) -> Vec<Vec<T>> {
    use std::collections::BTreeSet;
    fn rec(a: (u64, u64), b: (u64, u64), c: (u64, u64), depth: u32, out: &mut BTreeSet<(u64, u64)>) {
        if depth == 0 {
            out.insert(a);
            out.insert(b);
            out.insert(c);
            return;
        }
        let mid = |p: (u64, u64), q: (u64, u64)| ((p.0 + q.0) / 2, (p.1 + q.1) / 2);
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        rec(a, ab, ca, depth - 1, out);
        rec(ab, b, bc, depth - 1, out);
        rec(ca, bc, c, depth - 1, out);
    }
    let side = 1u64 << level;
    let mut set = BTreeSet::new();
    rec((0, 0), (side, 0), (0, side), level, &mut set);
    let s = side as f64;
    let h = 3f64.sqrt() / 2.0;
    set.into_iter()
        .map(|(i, j)| {
            let (i, j) = (i as f64, j as f64);
            vec![T::lit((i + j / 2.0) / s), T::lit(j * h / s)]
        })
        .collect()
}

/// Summary of the doubling geometry measured on a radius grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// `max mu(B(x,2r)) / mu(B(x,r))` over centers and radii.
    pub c_mu: f64,
    /// `log2 c_mu`.
    pub omega: f64,
    /// Global lower-bound fit `mu(B(x,r)) >= C r^Q` over the whole grid.
    pub q_global: Option<LowerBoundFit>,
    /// Same fit restricted to radii `r <= 1`.
    pub q_local: Option<LowerBoundFit>,
    /// Reverse-doubling exponent (log2 of the smallest doubling ratio for `2r < diam`).
    pub kappa: Option<f64>,
    pub diam: f64,
    /// `max V(x,y) / V(y,x)` over pairs of distinct points.
    pub volume_symmetry: f64,
    /// Tolerance used when comparing the global exponent with `omega`.
    pub fit_tolerance: f64,
    /// True when `q_global <= omega + fit_tolerance` (or no fit was possible).
    pub lower_bound_consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundFit {
    pub exponent: f64,
    /// Worst-case constant `min mu(B(x,r)) / r^Q`.
    pub constant: f64,
}

/// Measures doubling, lower-bound and reverse-doubling constants.
pub fn geometry_report<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    radius_grid: &[f64],
    with_kappa: bool,
) -> Result<GeometryReport> {
    if radius_grid.is_empty() {
        return Err(Error::Parameter("radius grid must be nonempty".into()));
    }
    if radius_grid.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Parameter("radii must be positive and finite".into()));
    }
    if radius_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("radius grid must be sorted".into()));
    }
    let n = space.len();
    let c_mu = (0..n)
        .into_par_iter()
        .map(|x| {
            radius_grid
                .iter()
                .map(|&r| {
                    let r = T::lit(r);
                    (space.ball_mass(x, r + r) / space.ball_mass(x, r)).as_f64()
                })
                .fold(1.0f64, f64::max)
        })
        .reduce(|| 1.0, f64::max);
    let omega = c_mu.log2();

    let fit = |pred: &dyn Fn(f64) -> bool| -> Option<LowerBoundFit> {
        let radii: Vec<f64> = radius_grid.iter().copied().filter(|&r| pred(r)).collect();
        if radii.len() < 2 {
            return None;
        }
        let mut xs = Vec::with_capacity(n * radii.len());
        let mut ys = Vec::with_capacity(n * radii.len());
        for x in 0..n {
            for &r in &radii {
                xs.push(r.ln());
                ys.push(space.ball_mass(x, T::lit(r)).as_f64().ln());
            }
        }
        let (slope, _) = ls_fit(&xs, &ys)?;
        let constant = xs
            .iter()
            .zip(&ys)
            .map(|(&lr, &lv)| (lv - slope * lr).exp())
            .fold(f64::INFINITY, f64::min);
        Some(LowerBoundFit {
            exponent: slope,
            constant,
        })
    };
    let q_global = fit(&|_| true);
    let q_local = fit(&|r| r <= 1.0);

    let diam = space.diam().as_f64();
    let kappa = if with_kappa {
        let mut best = f64::INFINITY;
        for x in 0..n {
            for &r in radius_grid.iter().filter(|&&r| 2.0 * r < diam) {
                let r = T::lit(r);
                let q = (space.ball_mass(x, r + r) / space.ball_mass(x, r)).as_f64();
                best = best.min(q);
            }
        }
        best.is_finite().then(|| best.log2().max(0.0))
    } else {
        None
    };

    let volume_symmetry = (0..n)
        .into_par_iter()
        .map(|x| {
            (0..n)
                .filter(|&y| y != x)
                .map(|y| (space.v(x, y) / space.v(y, x)).as_f64())
                .fold(1.0f64, f64::max)
        })
        .reduce(|| 1.0, f64::max);

    let fit_tolerance = 1e-9;
    let lower_bound_consistent = q_global.is_none_or(|q| q.exponent <= omega + fit_tolerance);
    Ok(GeometryReport {
        c_mu,
        omega,
        q_global,
        q_local,
        kappa,
        diam,
        volume_symmetry,
        fit_tolerance,
        lower_bound_consistent,
    })
}

/// Dyadic radii `2^-j` covering `[lo, hi]`.
pub fn dyadic_radii(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(lo > 0.0) || !(hi >= lo) {
        return out;
    }
    let mut j = hi.log2().floor() as i32;
    loop {
        let r = 2f64.powi(j);
        if r < lo * (1.0 - 1e-12) {
            break;
        }
        if r <= hi * (1.0 + 1e-12) {
            out.push(r);
        }
        j -= 1;
    }
    out.reverse();
    out
}

/// Radius grid at resolved scales: dyadic radii from twice the minimal gap to the diameter.
pub fn resolved_radii<T: Scalar>(space: &MetricMeasureSpace<T>) -> Vec<f64> {
    let gap = space.min_gap().as_f64();
    let diam = space.diam().as_f64();
    if space.len() < 2 {
        return vec![1.0];
    }
    dyadic_radii(2.0 * gap, diam)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> MetricMeasureSpace<f64> {
        generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap()
    }

    #[test]
    fn euclidean_three_points_is_metric() {
        let s = grid(3);
        assert_eq!(s.a0(), 1.0);
        assert!(!s.certificate().sampled);
    }

    #[test]
    fn squared_distance_has_constant_two() {
        let s = generate_space::<f64>(&Generator::SnowflakePower { n: 3, exponent: 2.0 }, &Measure::Uniform).unwrap();
        assert_eq!(s.a0(), 2.0);
        assert_eq!(s.certificate().witness, Some((0, 2, 1)));
    }

    #[test]
    fn single_point_circle() {
        let s = generate_space::<f64>(&Generator::Circle { n: 1 }, &Measure::Uniform).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.a0(), 1.0);
        assert_eq!(s.diam(), 0.0);
        assert_eq!(s.total_mass(), 1.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(
            generate_space::<f64>(&Generator::Grid1d { n: 0 }, &Measure::Uniform),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_space::<f64>(&Generator::SnowflakePower { n: 4, exponent: 0.0 }, &Measure::Uniform),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_space::<f64>(&Generator::Grid1d { n: 3 }, &Measure::Custom { weights: vec![1.0, 0.0, 1.0] }),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn open_balls_exclude_ties() {
        let s = grid(5);
        assert_eq!(s.ball_len(2, 0.25), 1);
        assert_eq!(s.ball_len(2, 0.25 + 1e-12), 3);
        assert!((s.ball_mass(2, 0.5 + 1e-12) - 1.0).abs() < 1e-15);
        assert_eq!(s.v(2, 2), 0.0);
        assert!((s.v(0, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn circle_geodesic() {
        let s = generate_space::<f64>(&Generator::Circle { n: 8 }, &Measure::Uniform).unwrap();
        assert_eq!(s.d(0, 7), 0.125);
        assert_eq!(s.d(0, 4), 0.5);
        assert_eq!(s.diam(), 0.5);
    }

    #[test]
    fn sierpinski_vertex_count() {
        for level in 0..=5u32 {
            let pts = sierpinski_points::<f64>(level);
            assert_eq!(pts.len(), (3usize.pow(level + 1) + 3) / 2);
        }
    }

    #[test]
    fn graph_is_connected_metric() {
        let s = generate_space::<f64>(
            &Generator::Graph { n: 40, ring: 1, chords: 5, seed: 3 },
            &Measure::Uniform,
        )
        .unwrap();
        assert!(s.diam() < 40.0);
        assert!(s.a0() >= 1.0 && s.a0() <= 1.0 + 1e-12);
    }

    #[test]
    fn custom_measure_is_normalized() {
        let s = generate_space::<f64>(&Generator::Grid1d { n: 3 }, &Measure::Custom { weights: vec![1.0, 2.0, 1.0] })
            .unwrap();
        assert!((s.weight(1) - 0.5).abs() < 1e-15);
        assert!(s.points().is_some());
    }

    #[test]
    fn declared_constant_is_verified() {
        let dist = vec![0.0, 0.25, 1.0, 0.25, 0.0, 0.25, 1.0, 0.25, 0.0];
        let err = MetricMeasureSpace::<f64>::from_table(dist.clone(), vec![1.0; 3], "", Some(1.0)).unwrap_err();
        match err {
            Error::Certification { i, k, j, ratio, .. } => {
                assert_eq!((i, k, j), (0, 2, 1));
                assert_eq!(ratio, 2.0);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(MetricMeasureSpace::<f64>::from_table(dist, vec![1.0; 3], "", Some(2.0)).is_ok());
    }

    #[test]
    fn single_point_geometry() {
        let s = grid(1);
        let g = geometry_report(&s, &[0.5, 1.0], true).unwrap();
        assert_eq!(g.c_mu, 1.0);
        assert_eq!(g.omega, 0.0);
    }

    #[test]
    fn geometry_rejects_bad_grids() {
        let s = grid(4);
        assert!(geometry_report(&s, &[], false).is_err());
        assert!(geometry_report(&s, &[0.5, 0.25], false).is_err());
        assert!(geometry_report(&s, &[-1.0], false).is_err());
    }

    /// Brute-force doubling ratio: counts points directly, no sorted prefix sums.
    fn brute_c_mu(s: &MetricMeasureSpace<f64>, radii: &[f64]) -> f64 {
        let n = s.len();
        let mass = |x: usize, r: f64| -> f64 { (0..n).filter(|&y| s.d(x, y) < r).map(|y| s.weight(y)).sum() };
        let mut best = 1.0f64;
        for x in 0..n {
            for &r in radii {
                best = best.max(mass(x, 2.0 * r) / mass(x, r));
            }
        }
        best
    }

    #[test]
    fn grid1d_doubling_matches_enumeration() {
        let s = grid(257);
        let radii = dyadic_radii(2f64.powi(-8), 0.5);
        assert_eq!(radii.len(), 8);
        let g = geometry_report(&s, &radii, false).unwrap();
        let brute = brute_c_mu(&s, &radii);
        assert!((g.c_mu - brute).abs() < 1e-12);
        // at r equal to the lattice spacing the open ball is {x} and B(x,2r) has 3 points
        assert!((g.omega - 3f64.log2()).abs() < 1e-12);
        // resolved scales only
        let g = geometry_report(&s, &radii[1..], false).unwrap();
        assert!((g.c_mu - brute_c_mu(&s, &radii[1..])).abs() < 1e-12);
        assert!(g.omega >= 1.0 && g.omega <= 1.25, "omega {}", g.omega);
        let q = g.q_global.unwrap();
        assert!(q.exponent <= g.omega + g.fit_tolerance);
        assert!((q.exponent - 1.0).abs() < 0.15);
    }

    #[test]
    fn grid2d_doubling_matches_enumeration() {
        let s = generate_space::<f64>(&Generator::Grid2d { side: 33 }, &Measure::Uniform).unwrap();
        let radii = dyadic_radii(2f64.powi(-5), 0.5);
        let g = geometry_report(&s, &radii, false).unwrap();
        assert!((g.c_mu - brute_c_mu(&s, &radii)).abs() < 1e-12);
        let g = geometry_report(&s, &radii[1..], false).unwrap();
        assert!((g.c_mu - brute_c_mu(&s, &radii[1..])).abs() < 1e-12);
        assert!(g.omega >= 2.0 && g.omega <= 2.4, "omega {}", g.omega);
    }

    #[test]
    fn large_spaces_are_sampled() {
        let s = grid(600);
        assert!(s.certificate().sampled);
        assert!(s.a0() >= 1.0 && s.a0() <= 1.0 + 1e-12);
    }

    #[test]
    fn f32_space() {
        let s = generate_space::<f32>(&Generator::Grid1d { n: 9 }, &Measure::Uniform).unwrap();
        assert_eq!(s.len(), 9);
        assert!((s.total_mass() - 1.0).abs() < 1e-6);
    }
}
