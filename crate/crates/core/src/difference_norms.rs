//! Lipschitz-type norms built from ball-averaged differences.
//!
//! Radii are `r_k = c_tilde * delta^k`. Only finitely many levels carry
//! information: from the last level whose ball is the whole space (`k_lo`) to
//! the first level whose ball is `{x}` (`k_hi`). Finer levels vanish, and
//! every coarser level repeats the `k_lo` profile, so its contribution is a
//! geometric series summed in closed form.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{lebesgue_norm, NormSpec};
use crate::operators::check_field;
use crate::scalar::Scalar;
use crate::space::MetricMeasureSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzVariant {
    Ldot,
    L,
    LbDot,
    Lb,
    LtDot,
    Lt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatedVariant {
    LTilde,
    LbTilde,
}

/// `values[k - k_lo][x] = J(f; x, c_tilde delta^k)` with inner exponent `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceProfile {
    pub c_tilde: f64,
    pub delta: f64,
    pub u: f64,
    pub k_lo: i32,
    pub k_hi: i32,
    pub values: Vec<Vec<f64>>,
}

impl DifferenceProfile {
    pub fn radius(&self, k: i32) -> f64 {
        self.c_tilde * self.delta.powi(k)
    }

    /// `J` at any level, using the saturation on both ends.
    pub fn at(&self, k: i32, x: usize) -> f64 {
        if self.values.is_empty() || k > self.k_hi {
            0.0
        } else {
            self.values[(k.max(self.k_lo) - self.k_lo) as usize][x]
        }
    }
}

/// Levels `(k_lo, k_hi)`: `k_lo` is the finest level whose open ball is the
/// whole space, `k_hi` the coarsest whose ball is a singleton.
pub fn informative_levels<T: Scalar>(space: &MetricMeasureSpace<T>, c_tilde: f64, delta: f64) -> (i32, i32) {
    let diam = space.diam().as_f64();
    let gap = space.min_gap().as_f64();
    if diam == 0.0 {
        return (0, 0);
    }
    let r = |k: i32| c_tilde * delta.powi(k);
    let mut lo = ((diam / c_tilde).ln() / delta.ln()).floor() as i32;
    while r(lo) <= diam {
        lo -= 1;
    }
    while r(lo + 1) > diam {
        lo += 1;
    }
    let mut hi = ((gap / c_tilde).ln() / delta.ln()).ceil() as i32;
    while r(hi) > gap {
        hi += 1;
    }
    while r(hi - 1) <= gap {
        hi -= 1;
    }
    (lo, hi)
}

fn check_common(c_tilde: f64, delta: f64, u: f64) -> Result<()> {
    if !(c_tilde > 0.0 && c_tilde.is_finite()) {
        return Err(Error::Parameter(format!("c_tilde = {c_tilde} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(u > 0.0) {
        return Err(Error::Parameter(format!("inner exponent u = {u} must be positive")));
    }
    Ok(())
}

/// Ball-averaged differences over `k_range` (default: the informative levels).
pub fn difference_profile<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    c_tilde: f64,
    delta: f64,
    k_range: Option<(i32, i32)>,
    u: f64,
) -> Result<DifferenceProfile> {
    check_field(space, f)?;
    check_common(c_tilde, delta, u)?;
    let (k_lo, k_hi) = match k_range {
        Some((a, b)) if a > b => return Err(Error::Range(format!("empty level range {a}..={b}"))),
        Some(r) => r,
        None => informative_levels(space, c_tilde, delta),
    };
    let n = space.len();
    let fv: Vec<f64> = f.iter().map(|v| v.as_f64()).collect();
    let radii: Vec<T> = (k_lo..=k_hi).map(|k| T::lit(c_tilde * delta.powi(k))).collect();
    let by_point: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let (order, _) = space.neighbors(x);
            // prefix sums along the distance order
            let mut acc = Vec::with_capacity(order.len() + 1);
            let mut mass = Vec::with_capacity(order.len() + 1);
            acc.push(0.0f64);
            mass.push(0.0f64);
            for &y in order {
                let y = y as usize;
                let diff = (fv[x] - fv[y]).abs();
                let w = space.weight(y).as_f64();
                let last = acc[acc.len() - 1];
                acc.push(if u.is_infinite() { last.max(diff) } else { last + diff.powf(u) * w });
                mass.push(mass[mass.len() - 1] + w);
            }
            radii
                .iter()
                .map(|&r| {
                    let len = space.ball_len(x, r);
                    if u.is_infinite() {
                        acc[len]
                    } else {
                        (acc[len] / mass[len]).powf(1.0 / u)
                    }
                })
                .collect()
        })
        .collect();
    let values = (0..radii.len())
        .map(|i| by_point.iter().map(|row| row[i]).collect())
        .collect();
    Ok(DifferenceProfile {
        c_tilde,
        delta,
        u,
        k_lo,
        k_hi,
        values,
    })
}

/// `sum_{k=a}^{b} rho^k` for `rho > 1`; `a = None` means `-inf`.
fn geometric(rho: f64, a: Option<i32>, b: i32) -> f64 {
    match a {
        Some(a) if a > b => 0.0,
        Some(a) => (a..=b).map(|k| rho.powi(k)).sum(),
        None => rho.powi(b) * rho / (rho - 1.0),
    }
}

/// `l^q` aggregate of `delta^{-ks} a(k)` over `k >= start` (all `k` when
/// `start` is `None`), where `a` is constant below `k_lo` and zero above `k_hi`.
fn scale_sum(s: f64, q: f64, delta: f64, k_lo: i32, k_hi: i32, start: Option<i32>, a: impl Fn(i32) -> f64) -> f64 {
    let first = start.map_or(k_lo, |st| st.max(k_lo));
    let explicit = (first..=k_hi).map(|k| delta.powf(-(k as f64) * s) * a(k));
    let below = start.is_none_or(|st| st < k_lo);
    if q.is_infinite() {
        let mut m = explicit.fold(0.0, f64::max);
        if below {
            m = m.max(delta.powf(-((k_lo - 1) as f64) * s) * a(k_lo));
        }
        m
    } else {
        let mut sum: f64 = explicit.map(|t| t.powf(q)).sum();
        if below {
            let rho = delta.powf(-s * q);
            sum += a(k_lo).powf(q) * geometric(rho, start, k_lo - 1);
        }
        sum.powf(1.0 / q)
    }
}

fn lp_of(space_w: &[f64], vals: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        vals.fold(0.0, f64::max)
    } else {
        vals.zip(space_w)
            .map(|(v, w)| v.powf(p) * w)
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

#[derive(Clone, Copy)]
enum Shape {
    /// inner exponent `p`, level-wise `L^p`
    Full,
    /// inner `L^1` average, level-wise `L^p`
    Averaged,
    /// pointwise scale aggregate with inner exponent `u`
    Pointwise(f64),
}

fn dotted<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    spec: &NormSpec,
    shape: Shape,
    start: Option<i32>,
) -> Result<f64> {
    let inner = match shape {
        Shape::Full => spec.p,
        Shape::Averaged => 1.0,
        Shape::Pointwise(u) => u,
    };
    let prof = difference_profile(space, f, spec.c_tilde, spec.delta, None, inner)?;
    if prof.values.is_empty() || space.len() == 1 {
        return Ok(0.0);
    }
    let w: Vec<f64> = space.weights().iter().map(|v| v.as_f64()).collect();
    let (lo, hi) = (prof.k_lo, prof.k_hi);
    Ok(match shape {
        Shape::Full | Shape::Averaged => {
            let levels: Vec<f64> = prof.values.iter().map(|row| lp_of(&w, row.iter().copied(), spec.p)).collect();
            scale_sum(spec.s, spec.q, spec.delta, lo, hi, start, |k| levels[(k.max(lo) - lo) as usize])
        }
        Shape::Pointwise(_) => {
            let g = (0..space.len()).map(|x| scale_sum(spec.s, spec.q, spec.delta, lo, hi, start, |k| prof.at(k, x)));
            lp_of(&w, g, spec.p)
        }
    })
}

fn check_spec(spec: &NormSpec, wants_u: bool) -> Result<()> {
    spec.check_exponents()?;
    if !(spec.s > 0.0) {
        return Err(Error::Incompatible(format!(
            "difference norms need s > 0, got s = {}",
            spec.s
        )));
    }
    if spec.u.is_some() && !wants_u {
        return Err(Error::Incompatible("the inner exponent u only applies to the L_t variants".into()));
    }
    Ok(())
}

pub fn lipschitz_norm<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    spec: &NormSpec,
    variant: LipschitzVariant,
) -> Result<f64> {
    use LipschitzVariant::*;
    check_spec(spec, matches!(variant, Lt | LtDot))?;
    let u = spec.u.unwrap_or(1.0);
    if matches!(variant, Lt | LtDot) && !(u.is_finite() && u > 0.0) {
        return Err(Error::Incompatible(format!("u = {u} must lie in (0, inf)")));
    }
    let base = || lebesgue_norm(space, f, spec.p);
    Ok(match variant {
        Ldot => dotted(space, f, spec, Shape::Full, None)?,
        L => base() + dotted(space, f, spec, Shape::Full, None)?,
        LbDot => dotted(space, f, spec, Shape::Averaged, None)?,
        Lb => base() + dotted(space, f, spec, Shape::Averaged, None)?,
        LtDot => dotted(space, f, spec, Shape::Pointwise(u), None)?,
        Lt => base() + dotted(space, f, spec, Shape::Pointwise(u), Some(0))?,
    })
}

/// The dotted expression restricted to `k >= 0`.
pub fn truncated_norm<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    spec: &NormSpec,
    variant: TruncatedVariant,
) -> Result<f64> {
    check_spec(spec, false)?;
    let shape = match variant {
        TruncatedVariant::LTilde => Shape::Full,
        TruncatedVariant::LbTilde => Shape::Averaged,
    };
    dotted(space, f, spec, shape, Some(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{generate_space, Generator, Measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> MetricMeasureSpace<f64> {
        generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn informative_levels_bracket_the_geometry() {
        let s = grid(257);
        let (lo, hi) = informative_levels(&s, 1.0, 0.5);
        // diam 1: radius 2 > 1 >= radius 1; gap 1/256: radius 2^-8 <= gap < 2^-7
        assert_eq!((lo, hi), (-1, 8));
        let (lo, hi) = informative_levels(&s, 3.0, 0.5);
        assert_eq!((lo, hi), (1, 10));
    }

    #[test]
    fn profile_basics() {
        let s = grid(65);
        let p = difference_profile(&s, &[3.0; 65], 1.0, 0.5, None, 2.0).unwrap();
        assert!(p.values.iter().flatten().all(|&v| v == 0.0));
        let f = random(65, 3);
        let p = difference_profile(&s, &f, 1.0, 0.5, None, 1.5).unwrap();
        assert!(p.values.iter().flatten().all(|&v| v >= 0.0));
        // finest level: ball = {x}
        assert!(p.values.last().unwrap().iter().all(|&v| v == 0.0));
        // coarsest level: ball = X
        let x = 10;
        let full: f64 = (0..65).map(|y| (f[x] - f[y]).abs().powf(1.5) / 65.0).sum::<f64>().powf(1.0 / 1.5);
        assert!((p.values[0][x] - full).abs() < 1e-14);
    }

    #[test]
    fn linear_profile_value() {
        let n = 1025;
        let s = grid(n);
        let f: Vec<f64> = (0..n).map(|x| s.d(x, 0)).collect();
        let p = difference_profile(&s, &f, 1.0, 0.5, Some((2, 2)), 1.0).unwrap();
        assert!((p.values[0][512] - 0.125).abs() <= 2.0 / n as f64);
    }

    #[test]
    fn constants_and_undotted() {
        let s = grid(33);
        let c = vec![0.7; 33];
        let spec = NormSpec::default();
        for v in [LipschitzVariant::Ldot, LipschitzVariant::LbDot, LipschitzVariant::LtDot] {
            assert_eq!(lipschitz_norm(&s, &c, &spec, v).unwrap(), 0.0);
        }
        for v in [LipschitzVariant::L, LipschitzVariant::Lb, LipschitzVariant::Lt] {
            assert!((lipschitz_norm(&s, &c, &spec, v).unwrap() - 0.7).abs() < 1e-14);
        }
        assert_eq!(truncated_norm(&s, &c, &spec, TruncatedVariant::LTilde).unwrap(), 0.0);
    }

    #[test]
    fn incompatible_requests() {
        let s = grid(9);
        let f = random(9, 1);
        let with_u = NormSpec {
            u: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            lipschitz_norm(&s, &f, &with_u, LipschitzVariant::Ldot),
            Err(Error::Incompatible(_))
        ));
        assert!(lipschitz_norm(&s, &f, &with_u, LipschitzVariant::LtDot).is_ok());
        let neg = NormSpec {
            s: -0.2,
            ..Default::default()
        };
        assert!(matches!(
            lipschitz_norm(&s, &f, &neg, LipschitzVariant::Lb),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn fubini_identity_and_orderings() {
        let s = grid(129);
        for seed in 0..5 {
            let f = random(129, seed);
            for p in [1.0, 2.0, 3.5] {
                let spec = NormSpec {
                    p,
                    q: p,
                    ..Default::default()
                };
                let lb = lipschitz_norm(&s, &f, &spec, LipschitzVariant::LbDot).unwrap();
                let lt = lipschitz_norm(&s, &f, &NormSpec { u: Some(1.0), ..spec.clone() }, LipschitzVariant::LtDot).unwrap();
                assert!((lb - lt).abs() <= 1e-12 * lb);
                let l = lipschitz_norm(&s, &f, &spec, LipschitzVariant::Ldot).unwrap();
                assert!(lb <= l * (1.0 + 1e-12));
                let tr = truncated_norm(&s, &f, &spec, TruncatedVariant::LTilde).unwrap();
                assert!(tr <= l * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn q_monotone_all_variants() {
        let s = grid(65);
        let f = random(65, 9);
        let qs = [0.5, 1.0, 2.0, 5.0, f64::INFINITY];
        for v in [
            LipschitzVariant::Ldot,
            LipschitzVariant::L,
            LipschitzVariant::LbDot,
            LipschitzVariant::Lb,
            LipschitzVariant::LtDot,
            LipschitzVariant::Lt,
        ] {
            let vals: Vec<f64> = qs
                .iter()
                .map(|&q| lipschitz_norm(&s, &f, &NormSpec { q, ..Default::default() }, v).unwrap())
                .collect();
            for w in vals.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{v:?}: {vals:?}");
            }
        }
    }

    #[test]
    fn ldot_matches_triple_loop_oracle() {
        let n = 513;
        let s = grid(n);
        let f: Vec<f64> = (0..n).map(|x| s.d(x, 0).powf(0.7)).collect();
        let spec = NormSpec::default();
        let got = lipschitz_norm(&s, &f, &spec, LipschitzVariant::Ldot).unwrap();
        // explicit levels -40..=12; coarser ones repeat level -40 with negligible weight
        let mut total = 0.0;
        for k in -40..=12 {
            let r = 0.5f64.powi(k);
            let mut lev = 0.0;
            for x in 0..n {
                let (mut num, mut den) = (0.0, 0.0);
                for y in 0..n {
                    if s.d(x, y) < r {
                        num += (f[x] - f[y]).powi(2) * s.weight(y);
                        den += s.weight(y);
                    }
                }
                lev += num / den * s.weight(x);
            }
            total += 0.5f64.powi(-k) * lev;
        }
        assert!((got - total.sqrt()).abs() <= 1e-12 * got, "{got} vs {}", total.sqrt());
    }

    #[test]
    fn truncated_termwise_shift() {
        let s = grid(65);
        let f = random(65, 4);
        let a = truncated_norm(&s, &f, &NormSpec::default(), TruncatedVariant::LbTilde).unwrap();
        let b = truncated_norm(&s, &f, &NormSpec { s: 0.7, ..Default::default() }, TruncatedVariant::LbTilde).unwrap();
        assert!(a <= b);
    }
}
