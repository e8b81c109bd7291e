//! Probe-function ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hts_core::kernels::Flavor;
use hts_core::{Error, Result, Space, Stack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// `Q_j g` for white noise `g` at an interior level `j`.
    Bandlimited,
    /// `d(., x0)^theta`.
    Holder,
    /// A ball indicator smoothed by the stack's partial sums.
    SmoothedIndicator,
    /// White noise smoothed by the stack's partial sums.
    GaussianField,
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::Bandlimited => "bandlimited",
            EnsembleKind::Holder => "holder",
            EnsembleKind::SmoothedIndicator => "smoothed_indicator",
            EnsembleKind::GaussianField => "gaussian_field",
        }
    }

    fn needs_stack(self) -> bool {
        self != EnsembleKind::Holder
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub kinds: Vec<EnsembleKind>,
    /// Fields per kind.
    pub count: usize,
    /// Keep only the first `limit` fields of the kind-interleaved list.
    pub limit: Option<usize>,
    pub seed: u64,
    pub mean_zero: bool,
    /// Range of Hölder exponents.
    pub theta: (f64, f64),
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            kinds: vec![
                EnsembleKind::Bandlimited,
                EnsembleKind::Holder,
                EnsembleKind::SmoothedIndicator,
                EnsembleKind::GaussianField,
            ],
            count: 13,
            limit: Some(50),
            seed: 2024,
            mean_zero: true,
            theta: (0.6, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub kind: EnsembleKind,
    /// Human-readable recipe, e.g. `holder(x0=0.25,theta=0.8)`.
    pub label: String,
    pub values: Vec<f64>,
}

pub fn holder_field(space: &Space, x0: usize, theta: f64) -> Vec<f64> {
    (0..space.len()).map(|x| space.d(x, x0).powf(theta)).collect()
}

/// Partial sum `A_k f = (Pi f) + sum_{i <= k} Q_i f` (no mean term for
/// inhomogeneous stacks).
pub fn smooth(stack: &Stack, space: &Space, f: &[f64], k: i32) -> Result<Vec<f64>> {
    let w = space.weights();
    let mut out = match stack.flavor {
        Flavor::Homogeneous => vec![space.mean(f); f.len()],
        Flavor::Inhomogeneous => vec![0.0; f.len()],
    };
    for i in stack.k_min..=k.min(stack.k_max) {
        for (o, v) in out.iter_mut().zip(stack.apply(i, f, w)?) {
            *o += v;
        }
    }
    Ok(out)
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Point at relative position `u` in index order; on grids this keeps the
/// physical location fixed across resolutions.
fn pick(n: usize, u: f64) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

fn member(
    space: &Space,
    stack: Option<&Stack>,
    spec: &EnsembleSpec,
    kind: EnsembleKind,
    rng: &mut ChaCha8Rng,
) -> Result<(String, Vec<f64>)> {
    let n = space.len();
    // interior levels, counted from the coarsest so scales are resolution-free
    let level = |stack: &Stack, rng: &mut ChaCha8Rng, lo: i32, hi: i32| -> i32 {
        let top = (stack.k_max - 1).max(stack.k_min);
        (stack.k_min + rng.random_range(lo..=hi)).min(top)
    };
    Ok(match kind {
        EnsembleKind::Holder => {
            let x0 = pick(n, rng.random_range(0.0..1.0));
            let theta = rng.random_range(spec.theta.0..=spec.theta.1);
            (format!("holder(x0={x0},theta={theta:.4})"), holder_field(space, x0, theta))
        }
        EnsembleKind::Bandlimited => {
            let stack = stack.unwrap();
            let j = level(stack, rng, 1, 4);
            let g = noise(rng, n);
            (format!("bandlimited(level={j})"), stack.apply(j, &g, space.weights())?)
        }
        EnsembleKind::SmoothedIndicator => {
            let stack = stack.unwrap();
            let c = pick(n, rng.random_range(0.0..1.0));
            let j = rng.random_range(1..=3);
            let r = space.diam() * stack.delta.powi(j);
            let ind: Vec<f64> = (0..n).map(|x| if space.d(c, x) < r { 1.0 } else { 0.0 }).collect();
            let k = level(stack, rng, j + 1, j + 3);
            (format!("smoothed_indicator(center={c},radius={r:.6},level={k})"), smooth(stack, space, &ind, k)?)
        }
        EnsembleKind::GaussianField => {
            let stack = stack.unwrap();
            let k = level(stack, rng, 2, 5);
            let g = noise(rng, n);
            (format!("gaussian_field(level={k})"), smooth(stack, space, &g, k)?)
        }
    })
}

/// Deterministic from `spec.seed`; each member has its own stream so draws
/// do not depend on the other members.
pub fn generate_ensemble(space: &Space, stack: Option<&Stack>, spec: &EnsembleSpec) -> Result<Vec<Member>> {
    if spec.kinds.is_empty() {
        return Err(Error::Parameter("ensemble needs at least one kind".into()));
    }
    if spec.count == 0 {
        return Err(Error::Parameter("ensemble count must be at least 1".into()));
    }
    if !(spec.theta.0 > 0.0 && spec.theta.0 <= spec.theta.1) {
        return Err(Error::Parameter(format!("theta range {:?} is invalid", spec.theta)));
    }
    if stack.is_none() && spec.kinds.iter().any(|k| k.needs_stack()) {
        return Err(Error::Parameter("bandlimited, smoothed and gaussian kinds need a kernel stack".into()));
    }
    let mut out = Vec::new();
    for i in 0..spec.count {
        for (ki, &kind) in spec.kinds.iter().enumerate() {
            let stream = (ki as u64) << 32 | i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream);
            let mut attempt = 0;
            loop {
                let (label, mut values) = member(space, stack, spec, kind, &mut rng)?;
                if spec.mean_zero {
                    let m = space.mean(&values);
                    values.iter_mut().for_each(|v| *v -= m);
                }
                let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if scale > 1e-10 {
                    out.push(Member { kind, label, values });
                    break;
                }
                attempt += 1;
                if attempt == 16 {
                    return Err(Error::Parameter(format!("{} draws keep vanishing", kind.name())));
                }
            }
        }
    }
    if let Some(l) = spec.limit {
        out.truncate(l);
    }
    Ok(out)
}
