//! Level application, the Hardy–Littlewood maximal operator, and the sampled
//! Calderón formula as a frame (analysis, frame operator, CG reconstruction).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{CubeSystem, Refinement};
use crate::error::{Error, Result};
use crate::kernels::{Flavor, KernelStack};
use crate::scalar::Scalar;
use crate::space::MetricMeasureSpace;

/// A real function on the points of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T: Scalar>(Vec<T>);

impl<T: Scalar> Field<T> {
    /// Checks length and finiteness.
    pub fn new(space: &MetricMeasureSpace<T>, values: Vec<T>) -> Result<Self> {
        check_field(space, &values)?;
        Ok(Field(values))
    }

    pub fn constant(space: &MetricMeasureSpace<T>, c: T) -> Self {
        Field(vec![c; space.len()])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T: Scalar> std::ops::Deref for Field<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

pub fn check_field<T: Scalar>(space: &MetricMeasureSpace<T>, f: &[T]) -> Result<()> {
    if f.len() != space.len() {
        return Err(Error::Parameter(format!(
            "field has {} values, space has {} points",
            f.len(),
            space.len()
        )));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("field value at point {i} is not finite")));
    }
    Ok(())
}

/// `(Q_k f)(x) = sum_y Q_k(x, y) f(y) mu_y`.
pub fn apply_level<T: Scalar>(
    stack: &KernelStack<T>,
    space: &MetricMeasureSpace<T>,
    k: i32,
    f: &[T],
) -> Result<Vec<T>> {
    check_field(space, f)?;
    stack.apply(k, f, space.weights())
}

/// Centred maximal function. The supremum over radii is attained on balls
/// that just include each distance shell, so it is enumerated exactly.
pub fn hl_maximal<T: Scalar>(space: &MetricMeasureSpace<T>, f: &[T]) -> Vec<T> {
    let n = space.len();
    let w = space.weights();
    (0..n)
        .into_par_iter()
        .map(|x| {
            let (order, dist) = space.neighbors(x);
            // the singleton ball gives |f(x)| exactly; every average is
            // clamped to the range of |f| on its ball so constants stay exact
            let mut best = f[x].abs();
            let mut num = T::zero();
            let mut den = T::zero();
            let (mut lo, mut hi) = (T::infinity(), T::zero());
            for j in 0..n {
                let y = order[j] as usize;
                let v = f[y].abs();
                num = num + v * w[y];
                den = den + w[y];
                lo = lo.min(v);
                hi = hi.max(v);
                if j > 0 && (j + 1 == n || dist[j + 1] > dist[j]) {
                    best = best.max((num / den).max(lo).min(hi));
                }
            }
            best
        })
        .collect()
}

/// One sampled coefficient `Q_k f(y_alpha^{k,m})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub k: i32,
    pub alpha: usize,
    pub m: usize,
    /// Sample point `y_alpha^{k,m}`.
    pub y: usize,
    pub value: f64,
    /// `mu(Q_alpha^{k,m})`.
    pub weight: f64,
    /// Cell average of `Q_k f` over the subcube (inhomogeneous `k <= N`).
    pub average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGrid {
    pub flavor: Flavor,
    pub j0: u32,
    pub n_low: usize,
    pub coefficients: Vec<Coefficient>,
}

fn refinement_for<'a, T: Scalar>(stack: &KernelStack<T>, cubes: &'a CubeSystem) -> Result<&'a Refinement> {
    let r = cubes
        .refinement
        .as_ref()
        .ok_or_else(|| Error::Parameter("cube system has no subcube refinement".into()))?;
    if r.k_min > stack.k_min || r.k_max() < stack.k_max {
        return Err(Error::Range(format!(
            "refinement covers levels {}..={}, stack needs {}..={}",
            r.k_min,
            r.k_max(),
            stack.k_min,
            stack.k_max
        )));
    }
    if cubes.n != stack.n {
        return Err(Error::Parameter("cube system and stack sizes differ".into()));
    }
    Ok(r)
}

fn averaged<T: Scalar>(stack: &KernelStack<T>, k: i32) -> bool {
    stack.flavor == Flavor::Inhomogeneous && k >= 0 && (k as usize) <= stack.n_low
}

/// Sampled (and, for inhomogeneous `k <= N`, averaged) coefficients of `f`.
pub fn analyze<T: Scalar>(
    stack: &KernelStack<T>,
    cubes: &CubeSystem,
    space: &MetricMeasureSpace<T>,
    f: &[T],
) -> Result<CoefficientGrid> {
    check_field(space, f)?;
    let r = refinement_for(stack, cubes)?;
    let mut coefficients = Vec::new();
    for k in stack.levels() {
        let qf = stack.apply(k, f, space.weights())?;
        let fine = cubes.level(k + r.j0 as i32).expect("refinement level");
        for (alpha, subs) in r.level(k).expect("refinement level").iter().enumerate() {
            for (m, sub) in subs.iter().enumerate() {
                let members = &fine.cubes[sub.cube].members;
                let mass: T = members.iter().map(|&u| space.weight(u)).sum();
                let average = averaged(stack, k).then(|| {
                    let s: T = members.iter().map(|&u| qf[u] * space.weight(u)).sum();
                    (s / mass).as_f64()
                });
                coefficients.push(Coefficient {
                    k,
                    alpha,
                    m,
                    y: sub.sample,
                    value: qf[sub.sample].as_f64(),
                    weight: mass.as_f64(),
                    average,
                });
            }
        }
    }
    Ok(CoefficientGrid {
        flavor: stack.flavor,
        j0: r.j0,
        n_low: stack.n_low,
        coefficients,
    })
}

/// The sampled Calderón frame of a stack over a refined cube system.
///
/// `S f = sum_{k,alpha,m} mu(Q) Q_k(., y) Q_k f(y)`, with cell averages
/// replacing point samples at inhomogeneous levels `k <= N`. `S` is
/// self-adjoint and positive semidefinite in the `mu` inner product.
pub struct Frame<'a, T: Scalar> {
    stack: &'a KernelStack<T>,
    space: &'a MetricMeasureSpace<T>,
    /// Per level: for each subcube its sample point, members and mass.
    cells: Vec<Vec<(usize, &'a [usize], T)>>,
}

impl<'a, T: Scalar> Frame<'a, T> {
    pub fn new(stack: &'a KernelStack<T>, cubes: &'a CubeSystem, space: &'a MetricMeasureSpace<T>) -> Result<Self> {
        let r = refinement_for(stack, cubes)?;
        let cells = stack
            .levels()
            .map(|k| {
                let fine = cubes.level(k + r.j0 as i32).expect("refinement level");
                r.level(k)
                    .expect("refinement level")
                    .iter()
                    .flatten()
                    .map(|sub| {
                        let members = fine.cubes[sub.cube].members.as_slice();
                        let mass = members.iter().map(|&u| space.weight(u)).sum();
                        (sub.sample, members, mass)
                    })
                    .collect()
            })
            .collect();
        Ok(Frame { stack, space, cells })
    }

    /// `S f`.
    pub fn apply(&self, f: &[T]) -> Result<Vec<T>> {
        check_field(self.space, f)?;
        let w = self.space.weights();
        let n = f.len();
        let mut out = vec![T::zero(); n];
        for (i, k) in self.stack.levels().enumerate() {
            let qf = self.stack.apply(k, f, w)?;
            // g with Q_k g = sum mu(Q) Q_k(., y) c_Q
            let mut g = vec![T::zero(); n];
            if averaged(self.stack, k) {
                for &(_, members, mass) in &self.cells[i] {
                    let c = members.iter().map(|&u| qf[u] * w[u]).sum::<T>() / mass;
                    for &u in members {
                        g[u] = c;
                    }
                }
            } else {
                for &(y, _, mass) in &self.cells[i] {
                    g[y] = g[y] + mass * qf[y] / w[y];
                }
            }
            for (o, v) in out.iter_mut().zip(self.stack.apply(k, &g, w)?) {
                *o = *o + v;
            }
        }
        Ok(out)
    }
}

/// `S f` for a one-off application.
pub fn frame_operator<T: Scalar>(
    stack: &KernelStack<T>,
    cubes: &CubeSystem,
    space: &MetricMeasureSpace<T>,
    f: &[T],
) -> Result<Vec<T>> {
    Frame::new(stack, cubes, space)?.apply(f)
}

/// Solver knobs for [`reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub iterations: usize,
    /// `||f - S g|| / ||f||` in `L^2(mu)` on the working subspace.
    pub residual: f64,
    /// Extreme Ritz values of `S` from the Lanczos process behind CG.
    pub lower_frame_bound: f64,
    pub upper_frame_bound: f64,
}

/// Solves `S g = f` by conjugate gradients in the `mu` inner product and
/// returns `R f = S g` (homogeneous: `f` taken modulo constants).
pub fn reconstruct<T: Scalar>(
    stack: &KernelStack<T>,
    cubes: &CubeSystem,
    space: &MetricMeasureSpace<T>,
    f: &[T],
    params: &SolverParams,
) -> Result<(Vec<T>, ReconstructionReport)> {
    let frame = Frame::new(stack, cubes, space)?;
    check_field(space, f)?;
    let project = |v: &mut Vec<T>| {
        if stack.flavor == Flavor::Homogeneous {
            let m = space.mean(v);
            for x in v.iter_mut() {
                *x = *x - m;
            }
        }
    };
    let mut b = f.to_vec();
    project(&mut b);
    let norm = |v: &[T]| space.inner(v, v).as_f64().sqrt();
    let bnorm = norm(&b);
    let n = f.len();
    if bnorm == 0.0 {
        return Ok((
            vec![T::zero(); n],
            ReconstructionReport {
                iterations: 0,
                residual: 0.0,
                lower_frame_bound: f64::NAN,
                upper_frame_bound: f64::NAN,
            },
        ));
    }
    let mut g = vec![T::zero(); n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = space.inner(&r, &r).as_f64();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < params.max_iter {
        let mut sp = frame.apply(&p)?;
        project(&mut sp);
        let psp = space.inner(&p, &sp).as_f64();
        if !(psp > 0.0) {
            break;
        }
        let alpha = rr / psp;
        let at = T::lit(alpha);
        for i in 0..n {
            g[i] = g[i] + at * p[i];
            r[i] = r[i] - at * sp[i];
        }
        iterations += 1;
        alphas.push(alpha);
        let rr_new = space.inner(&r, &r).as_f64();
        residual = rr_new.sqrt() / bnorm;
        if residual <= params.tol {
            break;
        }
        let beta = rr_new / rr;
        betas.push(beta);
        let bt = T::lit(beta);
        for i in 0..n {
            p[i] = r[i] + bt * p[i];
        }
        rr = rr_new;
    }
    // recompute the true residual of S g
    let mut rf = frame.apply(&g)?;
    project(&mut rf);
    let diff: Vec<T> = b.iter().zip(&rf).map(|(&a, &c)| a - c).collect();
    let true_residual = norm(&diff) / bnorm;
    let (lo, hi) = ritz_extremes(&alphas, &betas);
    if true_residual > params.tol.max(residual) * 10.0 || residual > params.tol {
        return Err(Error::IllConditionedFrame {
            iterations,
            residual: true_residual.max(residual),
            lower_bound: lo,
        });
    }
    Ok((
        rf,
        ReconstructionReport {
            iterations,
            residual: true_residual,
            lower_frame_bound: lo,
            upper_frame_bound: hi,
        },
    ))
}

/// Smallest and largest eigenvalues of the CG Lanczos tridiagonal.
fn ritz_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let m = alphas.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    for j in 0..m {
        diag[j] = 1.0 / alphas[j] + if j > 0 { betas[j - 1] / alphas[j - 1] } else { 0.0 };
        if j + 1 < m {
            off[j] = betas[j].sqrt() / alphas[j];
        }
    }
    // Gershgorin bracket, then Sturm-count bisection
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..m {
        let r = if j > 0 { off[j - 1].abs() } else { 0.0 } + if j + 1 < m { off[j].abs() } else { 0.0 };
        lo = lo.min(diag[j] - r);
        hi = hi.max(diag[j] + r);
    }
    let count_below = |x: f64| -> usize {
        let mut c = 0;
        let mut q = 1.0;
        for j in 0..m {
            let o2 = if j > 0 { off[j - 1] * off[j - 1] } else { 0.0 };
            q = diag[j] - x - if j > 0 { o2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (diag[j].abs() + 1.0);
            }
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let kth = |idx: usize| -> f64 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if count_below(mid) > idx {
                b = mid;
            } else {
                a = mid;
            }
            if b - a <= 1e-15 * (a.abs() + b.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    };
    (kth(0), kth(m - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{build_cubes, build_nets, Sampler};
    use crate::kernels::{build_exp_ati, build_exp_iati, KernelParams};
    use crate::space::{generate_space, Generator, Measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> MetricMeasureSpace<f64> {
        generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap()
    }

    fn setup(n: usize, flavor: Flavor, j0: u32) -> (MetricMeasureSpace<f64>, CubeSystem, KernelStack<f64>) {
        let s = grid(n);
        let sat = crate::dyadic::saturation_level(s.min_gap(), 0.5);
        let nets = build_nets(&s, 0.5, 0, sat + j0 as i32, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap().refine_subcubes(j0, Sampler::Center).unwrap();
        let p = KernelParams::default();
        let stack = match flavor {
            Flavor::Homogeneous => build_exp_ati(&s, &cubes, &p),
            Flavor::Inhomogeneous => build_exp_iati(&s, &cubes, &p),
        }
        .unwrap();
        (s, cubes, stack)
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn field_checks() {
        let s = grid(3);
        assert!(Field::new(&s, vec![1.0, 2.0]).is_err());
        assert!(Field::new(&s, vec![1.0, f64::NAN, 0.0]).is_err());
        assert_eq!(Field::constant(&s, 2.0).len(), 3);
    }

    #[test]
    fn apply_level_matches_double_loop() {
        let (s, _, stack) = setup(65, Flavor::Homogeneous, 0);
        let f = random(65, 3);
        for k in stack.levels() {
            let got = apply_level(&stack, &s, k, &f).unwrap();
            for x in 0..65 {
                let mut acc = 0.0;
                for y in 0..65 {
                    acc += stack.entry(k, x, y) * f[y] * s.weight(y);
                }
                assert!((acc - got[x]).abs() <= 1e-13, "{acc} {}", got[x]);
            }
        }
        let ones = vec![1.0; 65];
        assert!(apply_level(&stack, &s, 2, &ones).unwrap().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn maximal_basic_properties() {
        let s = grid(33);
        let c = vec![-2.5; 33];
        assert!(hl_maximal(&s, &c).iter().all(|&v| v == 2.5));
        let f = random(33, 1);
        let mf = hl_maximal(&s, &f);
        for x in 0..33 {
            assert!(mf[x] >= f[x].abs());
        }
    }

    #[test]
    fn maximal_indicator_at_endpoint() {
        let n = 1025;
        let s = grid(n);
        let f: Vec<f64> = (0..n).map(|i| if 2 * i <= n - 1 { 1.0 } else { 0.0 }).collect();
        let mf = hl_maximal(&s, &f);
        assert!((mf[n - 1] - 0.5).abs() <= 2.0 / n as f64, "{}", mf[n - 1]);
    }

    #[test]
    fn analysis_at_j0_zero_is_center_evaluation() {
        let (s, cubes, stack) = setup(65, Flavor::Homogeneous, 0);
        let f = random(65, 5);
        let grid_ = analyze(&stack, &cubes, &s, &f).unwrap();
        for c in &grid_.coefficients {
            let qf = apply_level(&stack, &s, c.k, &f).unwrap();
            assert_eq!(c.y, cubes.level(c.k).unwrap().cubes[c.alpha].center);
            assert!((qf[c.y] - c.value).abs() <= 1e-13);
        }
        let ones = vec![1.0; 65];
        let z = analyze(&stack, &cubes, &s, &ones).unwrap();
        assert!(z.coefficients.iter().all(|c| c.value.abs() < 1e-10));
    }

    #[test]
    fn analysis_requires_refinement() {
        let s = grid(17);
        let nets = build_nets(&s, 0.5, 0, 6, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap();
        let stack = build_exp_ati(&s, &cubes, &KernelParams::default()).unwrap();
        assert!(analyze(&stack, &cubes, &s, &[0.0; 17]).is_err());
    }

    #[test]
    fn frame_is_symmetric_and_kills_constants() {
        for flavor in [Flavor::Homogeneous, Flavor::Inhomogeneous] {
            let (s, cubes, stack) = setup(65, flavor, 2);
            let f = random(65, 1);
            let g = random(65, 2);
            let sf = frame_operator(&stack, &cubes, &s, &f).unwrap();
            let sg = frame_operator(&stack, &cubes, &s, &g).unwrap();
            assert!((s.inner(&sf, &g) - s.inner(&f, &sg)).abs() < 1e-10);
            if flavor == Flavor::Homogeneous {
                let z = frame_operator(&stack, &cubes, &s, &[1.0; 65]).unwrap();
                assert!(z.iter().all(|v| v.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn reconstruct_band_limited() {
        let (s, cubes, stack) = setup(257, Flavor::Homogeneous, 2);
        let g = random(257, 9);
        let f = apply_level(&stack, &s, 4, &g).unwrap();
        let (rf, rep) = reconstruct(&stack, &cubes, &s, &f, &SolverParams { tol: 1e-8, max_iter: 200 }).unwrap();
        assert!(rep.residual <= 1e-6, "{rep:?}");
        assert!(rep.iterations <= 200);
        assert!(rep.lower_frame_bound > 0.0 && rep.lower_frame_bound <= rep.upper_frame_bound);
        let err: f64 = f.iter().zip(&rf).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nf: f64 = f.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / nf <= 1e-6);
    }

    #[test]
    fn reconstruct_constant_is_zero() {
        let (s, cubes, stack) = setup(33, Flavor::Homogeneous, 1);
        let (rf, rep) = reconstruct(&stack, &cubes, &s, &[4.0; 33], &SolverParams::default()).unwrap();
        assert!(rf.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn reconstruct_inhomogeneous_random() {
        let (s, cubes, stack) = setup(65, Flavor::Inhomogeneous, 2);
        let f = random(65, 4);
        let (rf, rep) = reconstruct(&stack, &cubes, &s, &f, &SolverParams::default()).unwrap();
        assert!(rep.residual <= 1e-8);
        assert!(f.iter().zip(&rf).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn ritz_of_diagonal_system() {
        // CG on diag(1, 4) from b = (1, 1) in two steps: oracle eigenvalues 1 and 4
        let (d1, d2) = (1.0f64, 4.0f64);
        let mut x = [0.0, 0.0];
        let mut r = [1.0, 1.0];
        let mut p = r;
        let mut rr = r[0] * r[0] + r[1] * r[1];
        let (mut al, mut be) = (vec![], vec![]);
        for _ in 0..2 {
            let ap = [d1 * p[0], d2 * p[1]];
            let a = rr / (p[0] * ap[0] + p[1] * ap[1]);
            x = [x[0] + a * p[0], x[1] + a * p[1]];
            r = [r[0] - a * ap[0], r[1] - a * ap[1]];
            al.push(a);
            let rn = r[0] * r[0] + r[1] * r[1];
            be.push(rn / rr);
            p = [r[0] + rn / rr * p[0], r[1] + rn / rr * p[1]];
            rr = rn;
        }
        let (lo, hi) = ritz_extremes(&al, &be[..1]);
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 4.0).abs() < 1e-10, "{lo} {hi}");
    }
}
