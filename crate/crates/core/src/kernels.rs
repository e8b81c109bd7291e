//! Surrogate exp-ATI / exp-IATI kernel stacks built from symmetric
//! Sinkhorn-scaled semigroups, and their validation against the size,
//! regularity, second-difference and cancellation conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::CubeSystem;
use crate::error::{Error, Result};
use crate::scalar::{ls_fit, Scalar};
use crate::space::MetricMeasureSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    #[default]
    Homogeneous,
    Inhomogeneous,
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::Homogeneous => "homogeneous",
            Flavor::Inhomogeneous => "inhomogeneous",
        })
    }
}

/// Outcome of one symmetric scaling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub scale: f64,
    pub sweeps: usize,
    pub residual: f64,
}

pub const MAX_SWEEPS: usize = 10_000;

/// Symmetric, `mu`-stochastic table `P_t(x, y) = d_x exp(-(d(x,y)/t)^a) d_y`
/// with `sum_y P_t(x, y) mu_y = 1` for every `x`. Row-major `n * n`.
pub fn build_semigroup<T: Scalar>(space: &MetricMeasureSpace<T>, t: f64, a: f64) -> Result<(Vec<T>, ScalingInfo)> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("semigroup scale {t} must be positive")));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Parameter(format!("decay exponent a = {a} must lie in (0, 1]")));
    }
    let n = space.len();
    let (tt, aa) = (T::lit(t), T::lit(a));
    let mut k = vec![T::zero(); n * n];
    k.par_chunks_mut(n).enumerate().for_each(|(x, row)| {
        for (y, v) in row.iter_mut().enumerate() {
            *v = (-(space.d(x, y) / tt).powf(aa)).exp();
        }
    });
    let w = space.weights();
    let tol = T::scaling_tol();
    let mut d: Vec<T> = w.iter().map(|&m| T::one() / (m * space.total_mass()).sqrt()).collect();
    let mut sweeps = 0;
    let mut residual;
    loop {
        let dm: Vec<T> = d.iter().zip(w).map(|(&a, &b)| a * b).collect();
        let rows: Vec<T> = k
            .par_chunks(n)
            .zip(d.par_iter())
            .map(|(row, &dx)| dx * row.iter().zip(&dm).map(|(&kv, &v)| kv * v).sum::<T>())
            .collect();
        residual = rows.iter().fold(T::zero(), |m, &r| m.max((r - T::one()).abs()));
        if residual <= tol {
            break;
        }
        if sweeps >= MAX_SWEEPS || residual.is_nan() {
            return Err(Error::Convergence {
                sweeps,
                residual: residual.as_f64(),
            });
        }
        for (dx, r) in d.iter_mut().zip(&rows) {
            *dx = *dx / r.sqrt();
        }
        sweeps += 1;
    }
    let mut p = k;
    for x in 0..n {
        p[x * n + x] = d[x] * p[x * n + x] * d[x];
        for y in x + 1..n {
            let v = d[x] * p[x * n + y] * d[y];
            p[x * n + y] = v;
            p[y * n + x] = v;
        }
    }
    Ok((
        p,
        ScalingInfo {
            scale: t,
            sweeps,
            residual: residual.as_f64(),
        },
    ))
}

/// Construction parameters of a kernel stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    /// Decay exponent of the seed kernel.
    pub a: f64,
    /// Scale multiplier of the averaging piece `Q_0` (inhomogeneous only).
    pub sigma: f64,
    /// Coarse levels `0..=n_low` handled by cell averages (inhomogeneous only).
    pub n_low: usize,
    /// Finest level; defaults to one below saturation, capped by the cubes.
    pub k_max: Option<i32>,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            a: 1.0,
            sigma: 1.0,
            n_low: 1,
            k_max: None,
        }
    }
}

/// Dense per-level kernels `Q_k`, `k_min..=k_max`.
///
/// `(Q_k f)(x) = sum_y Q_k(x, y) f(y) mu_y`. The finest level closes the
/// telescoping sum with the identity kernel `delta_xy / mu_x`, and the
/// homogeneous coarsest level subtracts the mean projection, so that
/// `sum_k Q_k` is exactly `I - Pi` (homogeneous) or `I` (inhomogeneous).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStack<T: Scalar> {
    pub flavor: Flavor,
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    pub a: f64,
    pub sigma: f64,
    pub n_low: usize,
    pub n: usize,
    q: Vec<Vec<T>>,
    pub scaling: Vec<ScalingInfo>,
    pub report: Option<AtiValidationReport>,
}

impl<T: Scalar> KernelStack<T> {
    pub fn levels(&self) -> impl Iterator<Item = i32> + Clone {
        self.k_min..=self.k_max
    }

    pub fn num_levels(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    pub fn contains(&self, k: i32) -> bool {
        k >= self.k_min && k <= self.k_max
    }

    /// Row-major table of `Q_k`.
    pub fn q(&self, k: i32) -> Result<&[T]> {
        if !self.contains(k) {
            return Err(Error::Range(format!(
                "level {k} outside stack range {}..={}",
                self.k_min, self.k_max
            )));
        }
        Ok(&self.q[(k - self.k_min) as usize])
    }

    #[inline]
    pub fn entry(&self, k: i32, x: usize, y: usize) -> T {
        self.q[(k - self.k_min) as usize][x * self.n + y]
    }

    /// Does level `k` carry the cancellation condition?
    pub fn cancels(&self, k: i32) -> bool {
        !(self.flavor == Flavor::Inhomogeneous && k == 0)
    }

    /// `Q_k f` with weights `w`.
    pub fn apply(&self, k: i32, f: &[T], w: &[T]) -> Result<Vec<T>> {
        let q = self.q(k)?;
        if f.len() != self.n || w.len() != self.n {
            return Err(Error::Parameter(format!(
                "field of length {} on a {}-point stack",
                f.len(),
                self.n
            )));
        }
        let fw: Vec<T> = f.iter().zip(w).map(|(&a, &b)| a * b).collect();
        Ok(q.par_chunks(self.n)
            .map(|row| row.iter().zip(&fw).map(|(&a, &b)| a * b).sum())
            .collect())
    }
}

fn plan_levels<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    params: &KernelParams,
    k_min: i32,
) -> Result<i32> {
    if !(params.a > 0.0 && params.a <= 1.0) {
        return Err(Error::Parameter(format!("decay exponent a = {} must lie in (0, 1]", params.a)));
    }
    let sat = cubes.nets.saturation.unwrap_or(cubes.k_max() + 1);
    let default = (sat - 1).min(cubes.k_max() - 1).max(k_min);
    let k_max = params.k_max.unwrap_or(default);
    if k_max < k_min {
        return Err(Error::Range(format!("stack levels {k_min}..={k_max} are empty")));
    }
    if k_max > cubes.k_max() {
        return Err(Error::Range(format!(
            "stack level {k_max} beyond the finest cube level {}",
            cubes.k_max()
        )));
    }
    if cubes.n != space.len() {
        return Err(Error::Parameter("cube system built on a different space".into()));
    }
    Ok(k_max)
}

/// Homogeneous stack over the cube levels `cubes.k_min()..=k_max`.
pub fn build_exp_ati<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    params: &KernelParams,
) -> Result<KernelStack<T>> {
    let k_min = cubes.k_min();
    let k_max = plan_levels(space, cubes, params, k_min)?;
    build_stack(space, cubes.delta(), Flavor::Homogeneous, k_min, k_max, params)
}

/// Inhomogeneous stack over `0..=k_max`; needs cube level 0.
pub fn build_exp_iati<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    params: &KernelParams,
) -> Result<KernelStack<T>> {
    if cubes.k_min() > 0 {
        return Err(Error::Range(format!(
            "inhomogeneous stacks start at level 0, cubes start at {}",
            cubes.k_min()
        )));
    }
    if !(params.sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma = {} must be positive", params.sigma)));
    }
    let k_max = plan_levels(space, cubes, params, 0)?;
    build_stack(space, cubes.delta(), Flavor::Inhomogeneous, 0, k_max, params)
}

pub fn build_stack<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    delta: f64,
    flavor: Flavor,
    k_min: i32,
    k_max: i32,
    params: &KernelParams,
) -> Result<KernelStack<T>> {
    let n = space.len();
    let w = space.weights();
    let identity = || -> Vec<T> {
        let mut m = vec![T::zero(); n * n];
        for x in 0..n {
            m[x * n + x] = T::one() / w[x];
        }
        m
    };
    // A_k with Q_k = A_k - A_{k-1}
    let scale = |k: i32| -> f64 {
        if flavor == Flavor::Inhomogeneous && k == 0 {
            params.sigma
        } else {
            delta.powi(k)
        }
    };
    let mut scaling = Vec::new();
    let mut prev: Vec<T> = match flavor {
        Flavor::Homogeneous => vec![T::one() / space.total_mass(); n * n],
        Flavor::Inhomogeneous => vec![T::zero(); n * n],
    };
    let mut q = Vec::with_capacity((k_max - k_min + 1) as usize);
    for k in k_min..=k_max {
        let cur = if k == k_max {
            identity()
        } else {
            let (p, info) = build_semigroup(space, scale(k), params.a)?;
            scaling.push(info);
            p
        };
        let mut qk: Vec<T> = cur.iter().zip(&prev).map(|(&a, &b)| a - b).collect();
        symmetrize(&mut qk, n);
        q.push(qk);
        prev = cur;
    }
    Ok(KernelStack {
        flavor,
        delta,
        k_min,
        k_max,
        a: params.a,
        sigma: params.sigma,
        n_low: params.n_low,
        n,
        q,
        scaling,
        report: None,
    })
}

fn symmetrize<T: Scalar>(m: &mut [T], n: usize) {
    for x in 0..n {
        for y in x + 1..n {
            m[y * n + x] = m[x * n + y];
        }
    }
}

/// Knobs for [`validate_ati`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationParams {
    /// Exponents `Gamma` for the `R_Gamma` domination constant.
    pub gammas: Vec<f64>,
    /// Candidate decay rates; the largest whose size constant stays within
    /// `inflation` times the constant at the first candidate is kept.
    pub nu_grid: Vec<f64>,
    pub inflation: f64,
    /// Maximum `(x, x', y)` triples examined per level for regularity.
    pub regularity_budget: usize,
    /// Maximum `(x, x', y, y')` quadruples per level for the second difference.
    pub second_difference_budget: usize,
    /// Number of probe fields for the identity residual.
    pub probes: usize,
    pub seed: u64,
}

impl Default for ValidationParams {
    fn default() -> Self {
        ValidationParams {
            gammas: Vec::new(),
            nu_grid: (1..=80).map(|j| j as f64 / 20.0).collect(),
            inflation: 4.0,
            regularity_budget: 20_000_000,
            second_difference_budget: 200_000,
            probes: 4,
            seed: 7,
        }
    }
}

/// Measured constants of the kernel conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtiValidationReport {
    pub flavor: Flavor,
    pub k_min: i32,
    pub k_max: i32,
    pub nu: f64,
    pub a: f64,
    /// Size constant with the `h_k` factor (levels with cancellation).
    pub size_const: f64,
    pub size_const_without_h: f64,
    pub eta: f64,
    pub reg_const: f64,
    pub regularity_sampled: bool,
    pub second_diff_const: f64,
    pub second_difference_sampled: bool,
    /// Max `|sum_y Q_k(x,y) mu_y|` over cancelling levels, rows and columns.
    pub cancel_resid: f64,
    /// Max `|sum_y Q_0(x,y) mu_y - 1|` (inhomogeneous only).
    pub unit_resid: Option<f64>,
    pub identity_resid: f64,
    pub rgamma: Vec<RGammaConst>,
    /// Largest `|Q_k(x,y) - Q_k(y,x)|`.
    pub symmetry_resid: f64,
    /// Cancelling levels whose `Y^k` is empty; `h_k` is omitted there.
    pub levels_without_refpoints: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RGammaConst {
    pub gamma: f64,
    pub constant: f64,
}

struct LevelGeom {
    h: f64,
    vol: Vec<f64>,
    /// `d(x, Y^k) / delta^k`, `None` when the `h_k` factor is dropped.
    dy: Option<Vec<f64>>,
}

fn level_geometry<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    k: i32,
) -> Result<LevelGeom> {
    let h = stack.delta.powi(k);
    let ht = T::lit(h);
    let vol = (0..space.len()).map(|x| space.ball_mass(x, ht).as_f64()).collect();
    let dy = if stack.cancels(k) {
        let d = cubes.refpoint_distance(space, k).ok_or_else(|| {
            Error::Range(format!("reference points Y^{k} need cube level {}", k + 1))
        })?;
        if cubes.refpoints(k).is_some_and(|ys| ys.is_empty()) {
            // no new centers at k + 1: the factor degenerates to 0, so drop it
            None
        } else {
            Some(d.into_iter().map(|v| v.as_f64() / h).collect())
        }
    } else {
        None
    };
    Ok(LevelGeom { h, vol, dy })
}

impl LevelGeom {
    /// Exponent `E` with bound `= (V V)^{-1/2} exp(-nu E)`.
    #[inline]
    fn decay(&self, a: f64, d: f64, x: usize, y: usize, with_h: bool) -> f64 {
        let mut e = (d / self.h).powf(a);
        if with_h {
            if let Some(dy) = &self.dy {
                e += dy[x].max(dy[y]).powf(a);
            }
        }
        e
    }

    #[inline]
    fn vol_factor(&self, x: usize, y: usize) -> f64 {
        (self.vol[x] * self.vol[y]).sqrt()
    }
}

/// Validates a stack against the exp-ATI conditions. Constants are exhaustive
/// maxima except where a budget forces sampling (flagged in the report).
pub fn validate_ati<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    params: &ValidationParams,
) -> Result<AtiValidationReport> {
    if params.nu_grid.is_empty() || params.nu_grid.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Parameter("nu grid must be nonempty and positive".into()));
    }
    let n = space.len();
    let geoms: Vec<LevelGeom> = stack
        .levels()
        .map(|k| level_geometry(stack, space, cubes, k))
        .collect::<Result<_>>()?;
    let a = stack.a;
    let grid = &params.nu_grid;
    let levels_without_refpoints = stack
        .levels()
        .zip(&geoms)
        .filter(|(k, g)| stack.cancels(*k) && g.dy.is_none())
        .map(|(k, _)| k)
        .collect();

    // ln C(nu) = max over entries of ln|Q| + ln sqrt(VV) + nu E
    let log_size = |with_h: bool| -> Vec<f64> {
        stack
            .levels()
            .zip(&geoms)
            .map(|(k, g)| {
                (0..n)
                    .into_par_iter()
                    .map(|x| {
                        let mut best = vec![f64::NEG_INFINITY; grid.len()];
                        for y in 0..n {
                            let q = stack.entry(k, x, y).as_f64().abs();
                            if q == 0.0 {
                                continue;
                            }
                            let l = q.ln() + g.vol_factor(x, y).ln();
                            let e = g.decay(a, space.d(x, y).as_f64(), x, y, with_h);
                            for (b, &nu) in best.iter_mut().zip(grid) {
                                *b = b.max(l + nu * e);
                            }
                        }
                        best
                    })
                    .reduce(|| vec![f64::NEG_INFINITY; grid.len()], max_vec)
            })
            .fold(vec![f64::NEG_INFINITY; grid.len()], max_vec)
    };
    let with_h = log_size(true);
    let without_h = log_size(false);
    let cap = with_h[0] + params.inflation.ln();
    let mut nu_idx = 0;
    for (i, &v) in with_h.iter().enumerate() {
        if v <= cap + 1e-12 {
            nu_idx = i;
        }
    }
    let nu = grid[nu_idx];
    let size_const = with_h[nu_idx].exp();
    let size_const_without_h = without_h[nu_idx].exp();

    let (eta, reg_const, regularity_sampled) = regularity(stack, space, &geoms, nu, params);
    let (second_diff_const, second_difference_sampled) =
        second_difference(stack, space, &geoms, nu, eta, params);

    let w = space.weights();
    let mut cancel_resid = 0.0f64;
    let mut unit_resid: Option<f64> = None;
    let mut symmetry_resid = 0.0f64;
    for k in stack.levels() {
        let q = stack.q(k)?;
        let target = if stack.cancels(k) { 0.0 } else { 1.0 };
        let (row, col, sym) = (0..n)
            .into_par_iter()
            .map(|x| {
                let mut rs = T::zero();
                let mut cs = T::zero();
                let mut sym = 0.0f64;
                for y in 0..n {
                    rs = rs + q[x * n + y] * w[y];
                    cs = cs + q[y * n + x] * w[y];
                    sym = sym.max((q[x * n + y] - q[y * n + x]).abs().as_f64());
                }
                (
                    (rs.as_f64() - target).abs(),
                    (cs.as_f64() - target).abs(),
                    sym,
                )
            })
            .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
        symmetry_resid = symmetry_resid.max(sym);
        if stack.cancels(k) {
            cancel_resid = cancel_resid.max(row).max(col);
        } else {
            unit_resid = Some(unit_resid.unwrap_or(0.0).max(row).max(col));
        }
    }

    let probes = default_probes(stack, space, params.probes, params.seed)?;
    let identity_resid = identity_residual(stack, space, &probes)?;

    let rgamma = params
        .gammas
        .iter()
        .map(|&gamma| RGammaConst {
            gamma,
            constant: rgamma_const(stack, space, &geoms, gamma),
        })
        .collect();

    Ok(AtiValidationReport {
        flavor: stack.flavor,
        k_min: stack.k_min,
        k_max: stack.k_max,
        nu,
        a,
        size_const,
        size_const_without_h,
        eta,
        reg_const,
        regularity_sampled,
        second_diff_const,
        second_difference_sampled,
        cancel_resid,
        unit_resid,
        identity_resid,
        rgamma,
        symmetry_resid,
        levels_without_refpoints,
    })
}

fn max_vec(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x = x.max(y);
    }
    a
}

/// `(x, x')` pairs with `0 < d(x, x') <= r`.
fn close_pairs<T: Scalar>(space: &MetricMeasureSpace<T>, r: T) -> Vec<(usize, usize)> {
    (0..space.len())
        .flat_map(|x| {
            let (order, dist) = space.neighbors(x);
            let len = dist.partition_point(|&d| d <= r);
            order[1..len.max(1)]
                .iter()
                .map(move |&y| (x, y as usize))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn sample_pairs(pairs: Vec<(usize, usize)>, keep: usize, rng: &mut ChaCha8Rng) -> (Vec<(usize, usize)>, bool) {
    if pairs.len() <= keep {
        return (pairs, false);
    }
    let picked = (0..keep).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();
    (picked, true)
}

/// Fits `eta` from log-binned maxima of the regularity ratio and returns
/// `(eta, constant, sampled)`.
fn regularity<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    geoms: &[LevelGeom],
    nu: f64,
    params: &ValidationParams,
) -> (f64, f64, bool) {
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7e9);
    let mut sampled = false;
    // (t, ratio) samples from all levels
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (k, g) in stack.levels().zip(geoms) {
        let pairs = close_pairs(space, T::lit(g.h));
        let keep = (params.regularity_budget / n.max(1)).max(1);
        let (pairs, s) = sample_pairs(pairs, keep, &mut rng);
        sampled |= s;
        let level: Vec<(f64, f64)> = pairs
            .par_iter()
            .map(|&(x, xp)| {
                let t = space.d(x, xp).as_f64() / g.h;
                let mut best = 0.0f64;
                for y in 0..n {
                    let diff = (stack.entry(k, x, y) - stack.entry(k, xp, y)).abs()
                        + (stack.entry(k, y, x) - stack.entry(k, y, xp)).abs();
                    let diff = diff.as_f64();
                    if diff == 0.0 {
                        continue;
                    }
                    // log space: the decay factor underflows far from the diagonal
                    let l = diff.ln() + g.vol_factor(x, y).ln()
                        + nu * g.decay(stack.a, space.d(x, y).as_f64(), x, y, true);
                    best = best.max(l.exp());
                }
                (t, best)
            })
            .collect();
        points.extend(level);
    }
    if points.is_empty() {
        return (0.0, 0.0, sampled);
    }
    // bins of width 1/4 in log2 t
    let mut bins: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for &(t, r) in &points {
        if r <= 0.0 || !r.is_finite() {
            continue;
        }
        let b = (4.0 * t.log2()).floor() as i64;
        let e = bins.entry(b).or_insert((t, r));
        if r > e.1 {
            *e = (t, r);
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = bins.values().map(|&(t, r)| (t.ln(), r.ln())).unzip();
    let eta = ls_fit(&xs, &ys).map_or(0.0, |(m, _)| m).clamp(0.0, 0.999);
    let c = points
        .iter()
        .map(|&(t, r)| r / t.powf(eta))
        .fold(0.0f64, f64::max);
    (eta, c, sampled)
}

fn second_difference<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    geoms: &[LevelGeom],
    nu: f64,
    eta: f64,
    params: &ValidationParams,
) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5d1f);
    let mut sampled = false;
    let mut best = 0.0f64;
    for (k, g) in stack.levels().zip(geoms) {
        let pairs = close_pairs(space, T::lit(g.h));
        if pairs.is_empty() {
            continue;
        }
        let total = pairs.len().saturating_mul(pairs.len());
        let quads: Vec<((usize, usize), (usize, usize))> = if total <= params.second_difference_budget {
            pairs
                .iter()
                .flat_map(|&p| pairs.iter().map(move |&q| (p, q)))
                .collect()
        } else {
            sampled = true;
            (0..params.second_difference_budget)
                .map(|_| {
                    (
                        pairs[rng.random_range(0..pairs.len())],
                        pairs[rng.random_range(0..pairs.len())],
                    )
                })
                .collect()
        };
        let level = quads
            .par_iter()
            .map(|&((x, xp), (y, yp))| {
                let e = |u: usize, v: usize| stack.entry(k, u, v);
                let diff = ((e(x, y) - e(xp, y)) - (e(x, yp) - e(xp, yp))).abs().as_f64();
                if diff == 0.0 {
                    return 0.0;
                }
                let tx = space.d(x, xp).as_f64() / g.h;
                let ty = space.d(y, yp).as_f64() / g.h;
                let l = diff.ln() - eta * (tx * ty).ln()
                    + g.vol_factor(x, y).ln()
                    + nu * g.decay(stack.a, space.d(x, y).as_f64(), x, y, true);
                l.exp()
            })
            .reduce(|| 0.0, f64::max);
        best = best.max(level);
    }
    (best, sampled)
}

fn rgamma_const<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    geoms: &[LevelGeom],
    gamma: f64,
) -> f64 {
    let n = space.len();
    stack
        .levels()
        .zip(geoms)
        .map(|(k, g)| {
            (0..n)
                .into_par_iter()
                .map(|x| {
                    let mut best = 0.0f64;
                    for y in 0..n {
                        let q = stack.entry(k, x, y).as_f64().abs();
                        if q == 0.0 {
                            continue;
                        }
                        let d = space.d(x, y).as_f64();
                        let r = (g.h / (g.h + d)).powf(gamma) / (g.vol[x] + space.v(x, y).as_f64());
                        best = best.max(q / r);
                    }
                    best
                })
                .reduce(|| 0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Probe fields for the identity residual: band-limited `Q_j g` at interior
/// levels for homogeneous stacks, plain random fields otherwise.
pub fn default_probes<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.len();
    let interior: Vec<i32> = stack
        .levels()
        .filter(|&k| k > stack.k_min + 1 && k < stack.k_max - 1)
        .collect();
    (0..count)
        .map(|i| {
            let g: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
            match stack.flavor {
                Flavor::Homogeneous if !interior.is_empty() => {
                    stack.apply(interior[i % interior.len()], &g, space.weights())
                }
                Flavor::Homogeneous => {
                    let m = space.mean(&g);
                    Ok(g.into_iter().map(|v| v - m).collect())
                }
                Flavor::Inhomogeneous => Ok(g),
            }
        })
        .collect()
}

/// Largest `||f - sum_k Q_k f||_2 / ||f||_2` over the probes, with `f`
/// mean-centred first for homogeneous stacks.
pub fn identity_residual<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    probes: &[Vec<T>],
) -> Result<f64> {
    let w = space.weights();
    let mut worst = 0.0f64;
    for f in probes {
        let f: Vec<T> = match stack.flavor {
            Flavor::Homogeneous => {
                let m = space.mean(f);
                f.iter().map(|&v| v - m).collect()
            }
            Flavor::Inhomogeneous => f.clone(),
        };
        let mut sum = vec![T::zero(); f.len()];
        for k in stack.levels() {
            for (s, v) in sum.iter_mut().zip(stack.apply(k, &f, w)?) {
                *s = *s + v;
            }
        }
        let diff: Vec<T> = f.iter().zip(&sum).map(|(&a, &b)| a - b).collect();
        let den = space.inner(&f, &f).sqrt().as_f64();
        if den > 0.0 {
            worst = worst.max(space.inner(&diff, &diff).sqrt().as_f64() / den);
        }
    }
    Ok(worst)
}

impl<T: Scalar> KernelStack<T> {
    /// Runs [`validate_ati`] and attaches the report.
    pub fn validated(
        mut self,
        space: &MetricMeasureSpace<T>,
        cubes: &CubeSystem,
        params: &ValidationParams,
    ) -> Result<Self> {
        self.report = Some(validate_ati(&self, space, cubes, params)?);
        Ok(self)
    }

    /// Per-level dense dump (`levels[k - k_min]` is row-major `Q_k`).
    pub fn to_dump(&self) -> KernelDump {
        KernelDump {
            flavor: self.flavor,
            delta: self.delta,
            k_min: self.k_min,
            k_max: self.k_max,
            a: self.a,
            sigma: self.sigma,
            n_low: self.n_low,
            n: self.n,
            levels: self
                .q
                .iter()
                .map(|q| q.iter().map(|v| v.as_f64()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDump {
    pub flavor: Flavor,
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    pub a: f64,
    pub sigma: f64,
    pub n_low: usize,
    pub n: usize,
    pub levels: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{build_cubes, build_nets, coarsest_level};
    use crate::space::{generate_space, Generator, Measure};

    fn grid(n: usize) -> MetricMeasureSpace<f64> {
        generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap()
    }

    fn cubes_for(s: &MetricMeasureSpace<f64>, k_min: i32, k_max: i32) -> CubeSystem {
        build_cubes(&build_nets(s, 0.5, k_min, k_max, false).unwrap(), s).unwrap()
    }

    #[test]
    fn two_point_wide_scale_is_constant() {
        let s = grid(2);
        let (p, _) = build_semigroup(&s, 1e6, 1.0).unwrap();
        for v in &p {
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
        for x in 0..2 {
            let r: f64 = (0..2).map(|y| p[x * 2 + y] * 0.5).sum();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_scale_tends_to_identity() {
        let s = grid(5);
        let (p, _) = build_semigroup(&s, 1e-4, 1.0).unwrap();
        for x in 0..5 {
            assert!((p[x * 5 + x] - 5.0).abs() < 1e-9);
            for y in 0..5 {
                if x != y {
                    assert!(p[x * 5 + y].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid65_rows_and_symmetry() {
        let s = grid(65);
        let (p, info) = build_semigroup(&s, 0.125, 1.0).unwrap();
        assert!(info.residual <= 1e-12);
        let w = s.weights();
        for x in 0..65 {
            let r: f64 = (0..65).map(|y| p[x * 65 + y] * w[y]).sum();
            assert!((r - 1.0).abs() <= 1e-12);
            for y in 0..65 {
                assert!((p[x * 65 + y] - p[y * 65 + x]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = grid(4);
        assert!(matches!(build_semigroup(&s, 0.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(build_semigroup(&s, 1.0, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn homogeneous_stack_cancels_and_closes() {
        let s = grid(65);
        let cubes = cubes_for(&s, coarsest_level(1.0, 0.5), 8);
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        assert_eq!((stack.k_min, stack.k_max), (0, 5));
        let ones = vec![1.0; 65];
        for k in stack.levels() {
            let z = stack.apply(k, &ones, s.weights()).unwrap();
            assert!(z.iter().all(|v| v.abs() < 1e-10));
        }
        assert!(stack.apply(6, &ones, s.weights()).is_err());
        let probes = default_probes(&stack, &s, 3, 1).unwrap();
        assert!(identity_residual(&stack, &s, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn inhomogeneous_unit_integral() {
        let s = grid(65);
        let cubes = cubes_for(&s, 0, 8);
        let stack = build_exp_iati(&s, &cubes, &KernelParams::default()).unwrap();
        let c = vec![3.0; 65];
        let q0 = stack.apply(0, &c, s.weights()).unwrap();
        assert!(q0.iter().all(|v| (v - 3.0).abs() < 1e-11));
        for k in 1..=stack.k_max {
            let z = stack.apply(k, &c, s.weights()).unwrap();
            assert!(z.iter().all(|v| v.abs() < 1e-10));
        }
        let probes = default_probes(&stack, &s, 3, 1).unwrap();
        assert!(identity_residual(&stack, &s, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn validation_on_small_grid() {
        let s = grid(65);
        let cubes = cubes_for(&s, 0, 8);
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        let params = ValidationParams {
            gammas: vec![2.0],
            ..Default::default()
        };
        let r = validate_ati(&stack, &s, &cubes, &params).unwrap();
        assert!(r.cancel_resid <= 1e-10);
        assert!(r.size_const.is_finite() && r.size_const > 0.0);
        assert!(r.size_const >= r.size_const_without_h);
        assert!(r.rgamma[0].constant.is_finite());
        assert!(r.symmetry_resid == 0.0);
        assert!(r.unit_resid.is_none());
        assert!(r.eta > 0.0 && r.eta < 1.0);
    }

    #[test]
    fn size_constant_matches_brute_force() {
        // oracle: direct max of |Q| / bound at the reported nu
        let s = grid(33);
        let cubes = cubes_for(&s, 0, 7);
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        let r = validate_ati(&stack, &s, &cubes, &ValidationParams::default()).unwrap();
        let mut best = 0.0f64;
        for k in stack.levels() {
            let h = 0.5f64.powi(k);
            let ys = cubes.refpoints(k).unwrap();
            let dy = |x: usize| ys.iter().map(|&y| s.d(x, y)).fold(f64::INFINITY, f64::min);
            for x in 0..33 {
                for y in 0..33 {
                    let vx: f64 = (0..33).filter(|&z| s.d(x, z) < h).map(|z| s.weight(z)).sum();
                    let vy: f64 = (0..33).filter(|&z| s.d(y, z) < h).map(|z| s.weight(z)).sum();
                    let hk = (-r.nu * dy(x).max(dy(y)) / h).exp();
                    let bound = (-r.nu * s.d(x, y) / h).exp() * hk / (vx * vy).sqrt();
                    best = best.max(stack.entry(k, x, y).abs() / bound);
                }
            }
        }
        assert!((best - r.size_const).abs() <= 1e-9 * best, "{best} vs {}", r.size_const);
    }

    #[test]
    fn one_point_stack_is_zero() {
        let s = grid(1);
        let cubes = cubes_for(&s, 0, 2);
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        assert_eq!(stack.num_levels(), 1);
        assert_eq!(stack.q(0).unwrap(), &[0.0]);
    }

    #[test]
    fn f32_stack_builds() {
        let s = generate_space::<f32>(&Generator::Grid1d { n: 17 }, &Measure::Uniform).unwrap();
        let cubes = build_cubes(&build_nets(&s, 0.5, 0, 6, false).unwrap(), &s).unwrap();
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        let z = stack.apply(1, &[1.0f32; 17], s.weights()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-4));
    }
}
