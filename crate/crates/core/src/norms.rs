//! Besov, Triebel–Lizorkin, Lebesgue and test-function norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::CubeSystem;
use crate::error::{Error, Result};
use crate::kernels::{Flavor, KernelStack};
use crate::operators::check_field;
use crate::scalar::Scalar;
use crate::space::MetricMeasureSpace;

/// Serde helpers that write `+inf` as the string `"inf"`.
pub mod exponent {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    fn parse(raw: Raw) -> Result<f64, String> {
        match raw {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                other => other.parse().map_err(|_| format!("not an exponent: {t:?}")),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(Raw::deserialize(d)?).map_err(de::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            struct One(f64);
            impl serde::Serialize for One {
                fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    super::serialize(&self.0, s)
                }
            }
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for &x in v {
                seq.serialize_element(&One(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Raw>::deserialize(d)?
                .into_iter()
                .map(parse)
                .collect::<Result<_, _>>()
                .map_err(de::Error::custom)
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Raw>::deserialize(d)?
                .map(parse)
                .transpose()
                .map_err(de::Error::custom)
        }
    }
}

/// Parameters selecting a norm. Exponents may be `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSpec {
    pub s: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    /// Inner exponent of the `L_t` difference norms.
    #[serde(with = "exponent::option", skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub c_tilde: f64,
    pub flavor: Flavor,
    /// Must match the stack's `N` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_low: Option<usize>,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec {
            s: 0.5,
            p: 2.0,
            q: 2.0,
            u: None,
            beta: 0.9,
            gamma: 0.9,
            delta: 0.5,
            c_tilde: 1.0,
            flavor: Flavor::Homogeneous,
            n_low: None,
        }
    }
}

impl NormSpec {
    pub(crate) fn check_exponents(&self) -> Result<()> {
        if !(self.p > 0.0) || !(self.q > 0.0) {
            return Err(Error::Parameter(format!(
                "exponents p = {}, q = {} must be positive",
                self.p, self.q
            )));
        }
        if !self.s.is_finite() {
            return Err(Error::Parameter("smoothness s must be finite".into()));
        }
        Ok(())
    }
}

/// `(sum_x |f(x)|^p mu_x)^{1/p}`, or `max |f|` at `p = inf`.
pub fn lebesgue_norm<T: Scalar>(space: &MetricMeasureSpace<T>, f: &[T], p: f64) -> f64 {
    let w = space.weights();
    if p.is_infinite() {
        return f.iter().fold(0.0f64, |m, v| m.max(v.abs().as_f64()));
    }
    let s: f64 = f
        .iter()
        .zip(w)
        .map(|(v, m)| v.abs().as_f64().powf(p) * m.as_f64())
        .sum();
    s.powf(1.0 / p)
}

/// `l^q` aggregate of nonnegative terms.
pub(crate) fn lq(terms: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn check_stack<T: Scalar>(spec: &NormSpec, stack: &KernelStack<T>) -> Result<()> {
    spec.check_exponents()?;
    if spec.flavor != stack.flavor {
        return Err(Error::Flavor(format!(
            "norm requested as {} but the stack is {}",
            spec.flavor, stack.flavor
        )));
    }
    if (spec.delta - stack.delta).abs() > 1e-15 {
        return Err(Error::Incompatible(format!(
            "norm delta {} differs from the stack's {}",
            spec.delta, stack.delta
        )));
    }
    if let Some(n) = spec.n_low {
        if n != stack.n_low {
            return Err(Error::Incompatible(format!(
                "norm N = {n} differs from the stack's N = {}",
                stack.n_low
            )));
        }
    }
    Ok(())
}

/// All `Q_k f`, coarsest first, as `f64`. Homogeneous stacks see `f - f(0)`
/// (they annihilate constants), so constant fields give exact zeros.
fn level_values<T: Scalar>(stack: &KernelStack<T>, space: &MetricMeasureSpace<T>, f: &[T]) -> Result<Vec<Vec<f64>>> {
    check_field(space, f)?;
    let shifted: Vec<T>;
    let f = match (stack.flavor, f.first()) {
        (Flavor::Homogeneous, Some(&c)) => {
            shifted = f.iter().map(|&v| v - c).collect();
            &shifted[..]
        }
        _ => f,
    };
    stack
        .levels()
        .map(|k| Ok(stack.apply(k, f, space.weights())?.into_iter().map(|v| v.as_f64()).collect()))
        .collect()
}

/// Levels treated by the inhomogeneous averaging block.
#[allow(clippy::reversed_empty_ranges)]
fn block_levels<T: Scalar>(stack: &KernelStack<T>) -> std::ops::RangeInclusive<i32> {
    match stack.flavor {
        Flavor::Homogeneous => 1..=0,
        Flavor::Inhomogeneous => stack.k_min..=(stack.n_low as i32).min(stack.k_max),
    }
}

/// Subcube averages `m_Q(|Q_k f|)` with masses, over the level-`k + j0` cubes.
fn cell_averages<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    k: i32,
    qf: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let j0 = cubes.refinement.as_ref().map_or(0, |r| r.j0) as i32;
    let lvl = cubes
        .level(k + j0)
        .ok_or_else(|| Error::Range(format!("cube level {} not built", k + j0)))?;
    Ok(lvl
        .cubes
        .iter()
        .map(|c| {
            let mass: f64 = c.members.iter().map(|&u| space.weight(u).as_f64()).sum();
            let s: f64 = c
                .members
                .iter()
                .map(|&u| qf[u].abs() * space.weight(u).as_f64())
                .sum();
            (s / mass, mass)
        })
        .collect())
}

fn block<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    cubes: &CubeSystem,
    stack: &KernelStack<T>,
    vals: &[Vec<f64>],
    p: f64,
) -> Result<f64> {
    let mut acc = 0.0f64;
    for k in block_levels(stack) {
        for (avg, mass) in cell_averages(space, cubes, k, &vals[(k - stack.k_min) as usize])? {
            if p.is_infinite() {
                acc = acc.max(avg);
            } else {
                acc += mass * avg.powf(p);
            }
        }
    }
    Ok(if p.is_infinite() { acc } else { acc.powf(1.0 / p) })
}

/// Besov norm: `[sum_k delta^{-ksq} ||Q_k f||_p^q]^{1/q}`, plus the averaged
/// block over `k <= N` for inhomogeneous stacks.
pub fn besov_norm<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    spec: &NormSpec,
    stack: &KernelStack<T>,
    cubes: &CubeSystem,
) -> Result<f64> {
    check_stack(spec, stack)?;
    let vals = level_values(stack, space, f)?;
    let skip = block_levels(stack);
    let w: Vec<f64> = space.weights().iter().map(|v| v.as_f64()).collect();
    let terms = stack.levels().zip(&vals).filter(|(k, _)| !skip.contains(k)).map(|(k, v)| {
        let lp = if spec.p.is_infinite() {
            v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        } else {
            v.iter()
                .zip(&w)
                .map(|(x, m)| x.abs().powf(spec.p) * m)
                .sum::<f64>()
                .powf(1.0 / spec.p)
        };
        spec.delta.powf(-(k as f64) * spec.s) * lp
    });
    let tail = lq(terms, spec.q);
    let head = if skip.is_empty() {
        0.0
    } else {
        block(space, cubes, stack, &vals, spec.p)?
    };
    Ok(head + tail)
}

/// Triebel–Lizorkin norm. For `p < inf` this is the `L^p` norm of the
/// pointwise `l^q` scale aggregate; at `p = inf` it is the Carleson-type
/// supremum over dyadic cubes.
pub fn triebel_lizorkin_norm<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    spec: &NormSpec,
    stack: &KernelStack<T>,
    cubes: &CubeSystem,
) -> Result<f64> {
    check_stack(spec, stack)?;
    let vals = level_values(stack, space, f)?;
    let skip = block_levels(stack);
    let n = space.len();
    let w: Vec<f64> = space.weights().iter().map(|v| v.as_f64()).collect();
    let first = if skip.is_empty() { stack.k_min } else { *skip.end() + 1 };
    // scaled |Q_k f(x)| for k >= first
    let scaled: Vec<Vec<f64>> = (first..=stack.k_max)
        .map(|k| {
            let c = spec.delta.powf(-(k as f64) * spec.s);
            vals[(k - stack.k_min) as usize].iter().map(|v| c * v.abs()).collect()
        })
        .collect();
    let q = spec.q;
    if spec.p.is_finite() {
        let agg: Vec<f64> = (0..n)
            .map(|x| lq(scaled.iter().map(|lv| lv[x]), q))
            .collect();
        let tail = agg
            .iter()
            .zip(&w)
            .map(|(a, m)| a.powf(spec.p) * m)
            .sum::<f64>()
            .powf(1.0 / spec.p);
        let head = if skip.is_empty() {
            0.0
        } else {
            block(space, cubes, stack, &vals, spec.p)?
        };
        return Ok(head + tail);
    }
    // suffix sums over k >= l of the q-th powers (or maxima at q = inf)
    let mut suffix = vec![vec![0.0f64; n]; scaled.len() + 1];
    for i in (0..scaled.len()).rev() {
        for x in 0..n {
            let t = scaled[i][x];
            suffix[i][x] = if q.is_infinite() {
                suffix[i + 1][x].max(t)
            } else {
                suffix[i + 1][x] + t.powf(q)
            };
        }
    }
    let mut best = 0.0f64;
    for (i, l) in (first..=stack.k_max).enumerate() {
        let lvl = cubes
            .level(l)
            .ok_or_else(|| Error::Range(format!("cube level {l} not built")))?;
        let level_best = lvl
            .cubes
            .par_iter()
            .map(|c| {
                if q.is_infinite() {
                    c.members.iter().fold(0.0f64, |m, &x| m.max(suffix[i][x]))
                } else {
                    let mass: f64 = c.members.iter().map(|&x| w[x]).sum();
                    let s: f64 = c.members.iter().map(|&x| suffix[i][x] * w[x]).sum();
                    (s / mass).powf(1.0 / q)
                }
            })
            .reduce(|| 0.0, f64::max);
        best = best.max(level_best);
    }
    if !skip.is_empty() {
        best = best.max(block(space, cubes, stack, &vals, f64::INFINITY)?);
    }
    Ok(best)
}

/// Smallest constant in the size and regularity conditions of a test
/// function of type `(x1, r, beta, gamma)`.
pub fn test_function_norm<T: Scalar>(
    space: &MetricMeasureSpace<T>,
    f: &[T],
    x1: usize,
    r: f64,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    check_field(space, f)?;
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius {r} must be positive")));
    }
    if !(beta > 0.0 && beta <= 1.0) || !(gamma > 0.0) {
        return Err(Error::Parameter(format!("beta = {beta} must lie in (0, 1], gamma = {gamma} > 0")));
    }
    if x1 >= space.len() {
        return Err(Error::Range(format!("point {x1} outside the space")));
    }
    let n = space.len();
    let vr = space.ball_mass(x1, T::lit(r)).as_f64();
    let d1: Vec<f64> = (0..n).map(|x| space.d(x1, x).as_f64()).collect();
    let size_rhs: Vec<f64> = (0..n)
        .map(|x| (r / (r + d1[x])).powf(gamma) / (vr + space.v(x1, x).as_f64()))
        .collect();
    let fv: Vec<f64> = f.iter().map(|v| v.as_f64()).collect();
    let size = (0..n).map(|x| fv[x].abs() / size_rhs[x]).fold(0.0, f64::max);
    let a0 = space.a0();
    let reg = (0..n)
        .into_par_iter()
        .map(|x| {
            let scale = r + d1[x];
            let lim = scale / (2.0 * a0);
            let (order, dist) = space.neighbors(x);
            let mut best = 0.0f64;
            for (&y, &dxy) in order.iter().zip(dist).skip(1) {
                let dxy = dxy.as_f64();
                if dxy > lim {
                    break;
                }
                let diff = (fv[x] - fv[y as usize]).abs();
                best = best.max(diff / ((dxy / scale).powf(beta) * size_rhs[x]));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(size.max(reg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Besov,
    TriebelLizorkin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    /// `p(s, beta ^ gamma)`.
    pub p_threshold: f64,
    pub admissible: bool,
    pub violations: Vec<String>,
}

/// `max{omega/(omega + b), omega/(omega + b + s)}` with `b = beta ^ gamma`.
pub fn p_threshold(s: f64, beta: f64, gamma: f64, omega: f64) -> f64 {
    let b = beta.min(gamma);
    (omega / (omega + b)).max(omega / (omega + b + s))
}

/// Checks `(s, p, q, beta, gamma)` against the parameter window of the
/// Besov or Triebel–Lizorkin definition for the spec's flavor.
pub fn admissible_range(spec: &NormSpec, kind: NormKind, omega: f64, eta: f64) -> Admissibility {
    let (s, p, q, beta, gamma) = (spec.s, spec.p, spec.q, spec.beta, spec.gamma);
    let b = beta.min(gamma);
    let thr = p_threshold(s, beta, gamma, omega);
    let excess = if p.is_infinite() { 0.0 } else { (omega * (1.0 / p - 1.0)).max(0.0) };
    let mut v = Vec::new();
    if !(beta > 0.0 && beta < eta) {
        v.push(format!("beta = {beta} not in (0, eta = {eta})"));
    }
    if !(gamma > 0.0 && gamma < eta) {
        v.push(format!("gamma = {gamma} not in (0, eta = {eta})"));
    }
    if !(s > -b && s < b) {
        v.push(format!("s = {s} not in (-(beta^gamma), beta^gamma) = ({}, {b})", -b));
    }
    let beta_lo = (-s + excess).max(0.0);
    if !(beta > beta_lo) {
        v.push(format!("beta = {beta} must exceed max{{0, -s + omega(1/p - 1)_+}} = {beta_lo}"));
    }
    let gamma_lo = match spec.flavor {
        Flavor::Homogeneous => s.max(excess),
        Flavor::Inhomogeneous => excess,
    };
    if !(gamma > gamma_lo) {
        v.push(format!("gamma = {gamma} must exceed {gamma_lo}"));
    }
    if !(p > thr) {
        v.push(format!("p = {p} must exceed p(s, beta^gamma) = {thr}"));
    }
    if kind == NormKind::TriebelLizorkin && !(q > thr) {
        v.push(format!("q = {q} must exceed p(s, beta^gamma) = {thr}"));
    }
    Admissibility {
        p_threshold: thr,
        admissible: v.is_empty(),
        violations: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{build_cubes, build_nets, saturation_level, Sampler};
    use crate::kernels::{build_exp_ati, build_exp_iati, KernelParams};
    use crate::space::{generate_space, Generator, Measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, flavor: Flavor) -> (MetricMeasureSpace<f64>, CubeSystem, KernelStack<f64>) {
        let s = generate_space(&Generator::Grid1d { n }, &Measure::Uniform).unwrap();
        let sat = saturation_level(s.min_gap(), 0.5);
        let nets = build_nets(&s, 0.5, 0, sat + 2, false).unwrap();
        let cubes = build_cubes(&nets, &s).unwrap().refine_subcubes(2, Sampler::Center).unwrap();
        let stack = match flavor {
            Flavor::Homogeneous => build_exp_ati(&s, &cubes, &KernelParams::default()),
            Flavor::Inhomogeneous => build_exp_iati(&s, &cubes, &KernelParams::default()),
        }
        .unwrap();
        (s, cubes, stack)
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lebesgue_basics() {
        let s = generate_space::<f64>(&Generator::Grid1d { n: 9 }, &Measure::Uniform).unwrap();
        for p in [0.5, 1.0, 2.0, 7.0, f64::INFINITY] {
            assert!((lebesgue_norm(&s, &[1.0; 9], p) - 1.0).abs() < 1e-14);
        }
        let f = random(9, 1);
        let g: Vec<f64> = f.iter().map(|v| -3.0 * v).collect();
        assert!((lebesgue_norm(&s, &g, 1.5) - 3.0 * lebesgue_norm(&s, &f, 1.5)).abs() < 1e-13);
        let mut acc = 0.0;
        for v in &f {
            acc += v * v / 9.0;
        }
        assert!((lebesgue_norm(&s, &f, 2.0) - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn exponent_serde() {
        let spec: NormSpec = serde_json::from_str(r#"{"p": "inf", "q": 1.5}"#).unwrap();
        assert!(spec.p.is_infinite());
        let back = serde_json::to_string(&spec).unwrap();
        assert!(back.contains(r#""p":"inf""#));
        assert!(serde_json::from_str::<NormSpec>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn besov_and_tl_basic_identities() {
        let (s, cubes, stack) = setup(65, Flavor::Homogeneous);
        let spec = NormSpec::default();
        let zero = vec![0.0; 65];
        assert_eq!(besov_norm(&s, &zero, &spec, &stack, &cubes).unwrap(), 0.0);
        assert_eq!(triebel_lizorkin_norm(&s, &zero, &spec, &stack, &cubes).unwrap(), 0.0);
        assert!(besov_norm(&s, &[2.0; 65], &spec, &stack, &cubes).unwrap() < 1e-9);
        let f = random(65, 2);
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let b = besov_norm(&s, &f, &spec, &stack, &cubes).unwrap();
        assert!((besov_norm(&s, &f2, &spec, &stack, &cubes).unwrap() - 2.0 * b).abs() < 1e-12 * b);
        let t = triebel_lizorkin_norm(&s, &f, &spec, &stack, &cubes).unwrap();
        assert!((b - t).abs() <= 1e-12 * b);
        let b1 = besov_norm(&s, &f, &NormSpec { q: 1.0, ..spec.clone() }, &stack, &cubes).unwrap();
        let b4 = besov_norm(&s, &f, &NormSpec { q: 4.0, ..spec.clone() }, &stack, &cubes).unwrap();
        let binf = besov_norm(&s, &f, &NormSpec { q: f64::INFINITY, ..spec.clone() }, &stack, &cubes).unwrap();
        assert!(b1 >= b && b >= b4 && b4 >= binf);
    }

    #[test]
    fn flavor_mismatch() {
        let (s, cubes, stack) = setup(17, Flavor::Homogeneous);
        let spec = NormSpec {
            flavor: Flavor::Inhomogeneous,
            ..Default::default()
        };
        assert!(matches!(besov_norm(&s, &[0.0; 17], &spec, &stack, &cubes), Err(Error::Flavor(_))));
    }

    #[test]
    fn besov_matches_resummation_oracle() {
        let (s, cubes, stack) = setup(257, Flavor::Homogeneous);
        let f: Vec<f64> = (0..257).map(|x| s.d(x, 0).powf(0.7)).collect();
        let spec = NormSpec::default();
        let got = besov_norm(&s, &f, &spec, &stack, &cubes).unwrap();
        let mut total = 0.0;
        for k in stack.levels() {
            let mut lp = 0.0;
            for x in 0..257 {
                let mut qf = 0.0;
                for y in 0..257 {
                    qf += stack.entry(k, x, y) * f[y] * s.weight(y);
                }
                lp += qf * qf * s.weight(x);
            }
            total += 0.5f64.powi(-k) * lp;
        }
        assert!((got - total.sqrt()).abs() <= 1e-12 * got, "{got} vs {}", total.sqrt());
    }

    #[test]
    fn inhomogeneous_block_on_constants() {
        let (s, cubes, stack) = setup(33, Flavor::Inhomogeneous);
        let spec = NormSpec {
            flavor: Flavor::Inhomogeneous,
            ..Default::default()
        };
        // Q_0 1 = 1, Q_1 1 = 0: block = (sum mu(Q) 1)^{1/2} = 1, tail = 0
        let b = besov_norm(&s, &[1.0; 33], &spec, &stack, &cubes).unwrap();
        assert!((b - 1.0).abs() < 1e-10, "{b}");
        let t = triebel_lizorkin_norm(&s, &[1.0; 33], &spec, &stack, &cubes).unwrap();
        assert!((t - 1.0).abs() < 1e-10);
        let tinf = triebel_lizorkin_norm(&s, &[1.0; 33], &NormSpec { p: f64::INFINITY, ..spec }, &stack, &cubes).unwrap();
        assert!((tinf - 1.0).abs() < 1e-10);
    }

    #[test]
    fn f_infinity_sup_matches_exhaustive_oracle() {
        let (s, cubes, stack) = setup(65, Flavor::Homogeneous);
        let fine = cubes.level(5).unwrap();
        let support = &fine.cubes[7].members;
        let mut f = vec![0.0; 65];
        for &x in support {
            f[x] = 1.0;
        }
        let spec = NormSpec {
            p: f64::INFINITY,
            ..Default::default()
        };
        let got = triebel_lizorkin_norm(&s, &f, &spec, &stack, &cubes).unwrap();
        let qf: Vec<Vec<f64>> = stack.levels().map(|k| stack.apply(k, &f, s.weights()).unwrap()).collect();
        let mut best = (0.0f64, 0i32, 0usize);
        for l in stack.levels() {
            for (a, c) in cubes.level(l).unwrap().cubes.iter().enumerate() {
                let mut acc = 0.0;
                let mut mass = 0.0;
                for &x in &c.members {
                    mass += s.weight(x);
                    for k in l..=stack.k_max {
                        acc += s.weight(x) * 0.5f64.powi(-k) * qf[(k - stack.k_min) as usize][x].powi(2);
                    }
                }
                let v = (acc / mass).sqrt();
                if v > best.0 {
                    best = (v, l, a);
                }
            }
        }
        assert!((got - best.0).abs() <= 1e-12 * got);
        // the maximising cube contains part of the support
        let arg = &cubes.level(best.1).unwrap().cubes[best.2];
        assert!(arg.members.iter().any(|x| support.contains(x)));
    }

    #[test]
    fn test_function_norm_oracle() {
        let s = generate_space::<f64>(&Generator::Grid1d { n: 129 }, &Measure::Uniform).unwrap();
        let (x1, r, beta, gamma) = (40usize, 0.1, 0.8, 0.6);
        assert_eq!(test_function_norm(&s, &[0.0; 129], x1, r, beta, gamma).unwrap(), 0.0);
        let f: Vec<f64> = (0..129).map(|x| (-(s.d(x, x1) / r).powi(2)).exp()).collect();
        let got = test_function_norm(&s, &f, x1, r, beta, gamma).unwrap();
        let vr: f64 = (0..129).filter(|&z| s.d(x1, z) < r).map(|z| s.weight(z)).sum();
        let v = |x: usize| -> f64 { (0..129).filter(|&z| s.d(x1, z) < s.d(x1, x)).map(|z| s.weight(z)).sum() };
        let rhs = |x: usize| (r / (r + s.d(x1, x))).powf(gamma) / (vr + v(x));
        let mut best = 0.0f64;
        for x in 0..129 {
            best = best.max(f[x].abs() / rhs(x));
            for y in 0..129 {
                let d = s.d(x, y);
                if x != y && d <= (r + s.d(x1, x)) / 2.0 {
                    best = best.max((f[x] - f[y]).abs() / ((d / (r + s.d(x1, x))).powf(beta) * rhs(x)));
                }
            }
        }
        assert!((got - best).abs() <= 1e-12 * best, "{got} vs {best}");
        let own: Vec<f64> = (0..129).map(rhs).collect();
        assert!(test_function_norm(&s, &own, x1, r, beta, gamma).unwrap() >= 1.0 - 1e-15);
    }

    #[test]
    fn admissibility_windows() {
        let spec = NormSpec::default();
        let a = admissible_range(&spec, NormKind::Besov, 1.0, 0.95);
        assert!(a.admissible, "{:?}", a.violations);
        assert!(a.p_threshold < 1.0);
        let b = 0.9f64;
        let edge = NormSpec { p: 1.0 / (1.0 + b), s: 0.5, ..Default::default() };
        assert!(!admissible_range(&edge, NormKind::Besov, 1.0, 0.95).admissible);
        let bad = NormSpec { s: 0.8, beta: 0.5, ..Default::default() };
        let r = admissible_range(&bad, NormKind::Besov, 1.0, 0.95);
        assert!(!r.admissible);
        assert!(r.violations.iter().any(|v| v.starts_with("s = 0.8")));
    }
}
