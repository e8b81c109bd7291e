//! Lemma suite: the auxiliary estimates behind the characterisations,
//! instantiated exhaustively (or on seeded random draws) at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hts_core::operators::hl_maximal;
use hts_core::space::resolved_radii;
use hts_core::{Result, Space};

use crate::setup::Setup;
use crate::stats::{SuiteReport, SuiteRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParams {
    pub seed: u64,
    /// Random sequences for the `theta`-power inequality.
    pub theta_trials: usize,
    /// Decay exponents of the geometric integrals.
    pub beta: f64,
    pub gamma: f64,
    /// Exponents of the discrete-sum bound, `p in (omega/(omega+gamma), 1]`.
    pub discrete_p: f64,
    pub discrete_gamma: f64,
    /// Exponent `r` of the maximal domination bound.
    pub domination_r: f64,
    pub domination_trials: usize,
    /// `(p, q)` pairs for the vector-valued maximal inequality.
    pub fs_pairs: Vec<(f64, f64)>,
    pub fs_trials: usize,
    /// Functions per vector-valued trial.
    pub fs_width: usize,
    /// Cap on max/min of the `(ii)` integral across radii.
    pub geometric_cap: f64,
    /// Cap on upper/lower constants of the discrete-sum bound.
    pub discrete_cap: f64,
    /// Cap on the remaining measured constants.
    pub band_cap: f64,
    pub tolerance: f64,
}

impl Default for LemmaParams {
    fn default() -> Self {
        LemmaParams {
            seed: 11,
            theta_trials: 10_000,
            beta: 0.5,
            gamma: 0.5,
            discrete_p: 0.8,
            discrete_gamma: 0.9,
            domination_r: 0.8,
            domination_trials: 3,
            fs_pairs: vec![(1.5, 2.0), (2.0, 2.0), (4.0, 4.0)],
            fs_trials: 12,
            fs_width: 6,
            geometric_cap: 4.0,
            discrete_cap: 50.0,
            band_cap: 100.0,
            tolerance: 1e-12,
        }
    }
}

/// `V(x, y) = mu(B(x, d(x, y)))`, row-major.
fn volume_table(space: &Space) -> Vec<f64> {
    let n = space.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|x| (0..n).map(move |y| space.v(x, y)))
        .collect()
}

fn pick(n: usize, u: f64) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

fn theta_power(params: &LemmaParams) -> SuiteRow {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut viol, mut lo, mut hi) = (0, f64::INFINITY, 0.0f64);
    for _ in 0..params.theta_trials {
        let len = rng.random_range(1..=64);
        let theta: f64 = 1.0 - rng.random_range(0.0..1.0); // (0, 1]
        let a: Vec<f64> = (0..len).map(|_| rng.random_range(0.0f64..1.0).powi(3) * 10f64.powi(rng.random_range(-6..=6))).collect();
        let lhs = a.iter().sum::<f64>().powf(theta);
        let rhs: f64 = a.iter().map(|v| v.powf(theta)).sum();
        if lhs > rhs * (1.0 + params.tolerance) {
            viol += 1;
        }
        if rhs > 0.0 {
            lo = lo.min(lhs / rhs);
            hi = hi.max(lhs / rhs);
        }
    }
    SuiteRow::exact(
        "theta_power",
        params.theta_trials,
        viol,
        lo,
        hi,
        "(sum a_j)^theta <= sum a_j^theta; min/max of lhs/rhs",
    )
}

pub fn lemma_suite(setup: &Setup, params: &LemmaParams) -> Result<SuiteReport> {
    let space = &setup.space;
    let n = space.len();
    let w: Vec<f64> = space.weights().to_vec();
    let vt = volume_table(space);
    let radii = resolved_radii(space);
    let mut rows = vec![theta_power(params)];

    rows.push(SuiteRow::band(
        "volume_symmetry",
        &[setup.geometry.volume_symmetry],
        setup.geometry.volume_symmetry,
        params.band_cap,
        "max V(x,y)/V(y,x)",
    ));

    // (ii): sup over x1 of the integral, per radius
    let gamma = params.gamma;
    let per_r: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            (0..n)
                .map(|x1| {
                    let vr = space.ball_mass(x1, r);
                    (0..n)
                        .map(|y| w[y] / (vr + vt[x1 * n + y]) * (r / (r + space.d(x1, y))).powf(gamma))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let mx = per_r.iter().cloned().fold(0.0, f64::max);
    let mn = per_r.iter().cloned().fold(f64::INFINITY, f64::min);
    rows.push(SuiteRow::band(
        "geometric_integral_ii",
        &per_r,
        mx / mn,
        params.geometric_cap,
        "per-radius max over x1; statistic = max/min across radii",
    ));

    // (iii): both halves, sup over x and R
    let beta = params.beta;
    let inner: Vec<f64> = radii
        .par_iter()
        .map(|&big_r| {
            (0..n)
                .map(|x| {
                    let (mut a, mut b) = (0.0, 0.0);
                    for y in 0..n {
                        let d = space.d(x, y);
                        if y == x {
                            continue;
                        }
                        if d <= big_r {
                            a += w[y] / vt[x * n + y] * (d / big_r).powf(beta);
                        }
                        if d >= big_r {
                            b += w[y] / vt[x * n + y] * (big_r / d).powf(beta);
                        }
                    }
                    a.max(b)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let m = inner.iter().cloned().fold(0.0, f64::max);
    rows.push(SuiteRow::band(
        "geometric_integral_iii",
        &inner,
        m,
        params.band_cap,
        "max over x, R of both truncated integrals",
    ));

    // (iv): tail integral over (r/(r+R))^gamma
    let tail: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            let mut best = 0.0f64;
            for &big_r in &radii {
                for x1 in 0..n {
                    let vr = space.ball_mass(x1, r);
                    let s: f64 = (0..n)
                        .filter(|&x| space.d(x1, x) >= big_r)
                        .map(|x| w[x] / (vr + vt[x1 * n + x]) * (r / (r + space.d(x1, x))).powf(gamma))
                        .sum();
                    best = best.max(s / (r / (r + big_r)).powf(gamma));
                }
            }
            best
        })
        .collect();
    let m = tail.iter().cloned().fold(0.0, f64::max);
    rows.push(SuiteRow::band(
        "geometric_integral_iv",
        &tail,
        m,
        params.band_cap,
        "max over x1, r, R of integral / (r/(r+R))^gamma",
    ));

    rows.push(discrete_sum(setup, params, &vt)?);
    rows.push(maximal_domination(setup, params, &vt)?);
    rows.extend(fefferman_stein(space, setup, params));

    Ok(SuiteReport {
        suite: "lemmas".into(),
        n,
        rows,
    })
}

/// Subcubes of level `k` as `(sample, mass)`.
fn cells(setup: &Setup, k: i32) -> Vec<(usize, f64)> {
    let r = setup.cubes.refinement.as_ref().expect("refined cubes");
    r.level(k)
        .map(|lv| {
            lv.iter()
                .flatten()
                .map(|sub| (sub.sample, setup.cubes.subcube_mass(&setup.space, k, sub)))
                .collect()
        })
        .unwrap_or_default()
}

fn discrete_sum(setup: &Setup, params: &LemmaParams, vt: &[f64]) -> Result<SuiteRow> {
    let space = &setup.space;
    let n = space.len();
    let (p, g) = (params.discrete_p, params.discrete_gamma);
    let delta = setup.stack.delta;
    let levels: Vec<i32> = setup.stack.levels().collect();
    // k ^ k' only takes values m <= k
    let pairs: Vec<(i32, i32)> = levels
        .iter()
        .flat_map(|&k| levels.iter().filter(move |&&m| m <= k).map(move |&m| (k, m)))
        .collect();
    let res: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(k, m)| {
            let cs = cells(setup, k);
            let t = delta.powi(m);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for x in 0..n {
                let vx = space.ball_mass(x, t);
                let s: f64 = cs
                    .iter()
                    .map(|&(y, mass)| {
                        mass * (1.0 / (vx + vt[x * n + y])).powf(p) * (t / (t + space.d(x, y))).powf(g * p)
                    })
                    .sum();
                let r = s / vx.powf(1.0 - p);
                lo = lo.min(r);
                hi = hi.max(r);
            }
            (lo, hi)
        })
        .collect();
    let lo = res.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = res.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut row = SuiteRow::band(
        "discrete_sum",
        &[lo, hi],
        hi / lo,
        params.discrete_cap,
        format!("sum / V^(1-p) over (k, k^k', x), p = {p}, gamma = {g}; statistic = upper/lower"),
    );
    row.checked = pairs.len() * n;
    Ok(row)
}

fn maximal_domination(setup: &Setup, params: &LemmaParams, vt: &[f64]) -> Result<SuiteRow> {
    let space = &setup.space;
    let n = space.len();
    let (r, g) = (params.domination_r, params.discrete_gamma);
    let omega = setup.omega();
    let delta = setup.stack.delta;
    let refinement = setup.cubes.refinement.as_ref().expect("refined cubes");
    let fine = |k: i32| setup.cubes.level(k + refinement.j0 as i32).expect("refined level");
    let levels: Vec<i32> = setup.stack.levels().collect();
    let jobs: Vec<(i32, usize)> = levels
        .iter()
        .flat_map(|&k| (0..params.domination_trials).map(move |t| (k, t)))
        .collect();
    let consts: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, trial)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(((k - levels[0]) as u64) << 16 | trial as u64);
            let subs: Vec<_> = refinement.level(k).unwrap().iter().flatten().collect();
            let a: Vec<f64> = subs.iter().map(|_| rng.random_range(0.0f64..1.0).powi(2)).collect();
            // sum |a|^r 1_Q and its maximal function
            let mut ind = vec![0.0f64; n];
            for (sub, &av) in subs.iter().zip(&a) {
                for &u in &fine(k).cubes[sub.cube].members {
                    ind[u] = av.powf(r);
                }
            }
            let m = hl_maximal(space, &ind);
            let mut best = 0.0f64;
            for &mm in levels.iter().filter(|&&mm| mm <= k) {
                let t = delta.powi(mm);
                let factor = delta.powf((k - mm) as f64 * omega * (1.0 - 1.0 / r));
                for x in 0..n {
                    let vx = space.ball_mass(x, t);
                    let lhs: f64 = subs
                        .iter()
                        .zip(&a)
                        .map(|(sub, &av)| {
                            let y = sub.sample;
                            let mass = setup.cubes.subcube_mass(space, k, sub);
                            mass / (vx + vt[x * n + y]) * (t / (t + space.d(x, y))).powf(g) * av
                        })
                        .sum();
                    let rhs = factor * m[x].powf(1.0 / r);
                    if rhs > 0.0 {
                        best = best.max(lhs / rhs);
                    }
                }
            }
            best
        })
        .collect();
    let m = consts.iter().cloned().fold(0.0, f64::max);
    let mut row = SuiteRow::band(
        "maximal_domination",
        &consts,
        m,
        params.band_cap,
        format!("max lhs / rhs over (k, k^k', x), r = {r}, gamma = {g}"),
    );
    row.checked = jobs.len();
    Ok(row)
}

/// Empirical constant of the vector-valued maximal inequality for each
/// `(p, q)`, over seeded families of weighted ball indicators.
fn fefferman_stein(space: &Space, setup: &Setup, params: &LemmaParams) -> Vec<SuiteRow> {
    let n = space.len();
    let w = space.weights();
    let diam = space.diam();
    let delta = setup.stack.delta;
    // (fields, their maximal functions) per trial
    type Family = (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let families: Vec<Family> = (0..params.fs_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
            rng.set_stream(t as u64);
            let fs: Vec<Vec<f64>> = (0..params.fs_width)
                .map(|_| {
                    let c = pick(n, rng.random_range(0.0..1.0));
                    let rad = diam * delta.powi(rng.random_range(1..=6));
                    let amp = rng.random_range(0.5..1.5);
                    (0..n).map(|x| if space.d(c, x) < rad { amp } else { 0.0 }).collect()
                })
                .collect();
            let ms = fs.iter().map(|f| hl_maximal(space, f)).collect();
            (fs, ms)
        })
        .collect();
    let mixed = |vs: &[Vec<f64>], p: f64, q: f64| -> f64 {
        (0..n)
            .map(|x| {
                let a = if q.is_infinite() {
                    vs.iter().fold(0.0f64, |m, v| m.max(v[x]))
                } else {
                    vs.iter().map(|v| v[x].powf(q)).sum::<f64>().powf(1.0 / q)
                };
                a.powf(p) * w[x]
            })
            .sum::<f64>()
            .powf(1.0 / p)
    };
    params
        .fs_pairs
        .iter()
        .map(|&(p, q)| {
            let c: Vec<f64> = families.iter().map(|(fs, ms)| mixed(ms, p, q) / mixed(fs, p, q)).collect();
            let m = c.iter().cloned().fold(0.0, f64::max);
            SuiteRow::band(
                &format!("fefferman_stein_p{p}_q{q}"),
                &c,
                m,
                params.band_cap,
                "max over trials of ||(sum (M f_j)^q)^(1/q)||_p / ||(sum |f_j|^q)^(1/q)||_p",
            )
        })
        .collect()
}
