//! Norm-equivalence experiments: difference norms against Besov and
//! Triebel–Lizorkin norms over an ensemble.

use serde::{Deserialize, Serialize};

use hts_core::difference_norms::{lipschitz_norm, LipschitzVariant};
use hts_core::kernels::Flavor;
use hts_core::norms::{admissible_range, besov_norm, exponent, lebesgue_norm, triebel_lizorkin_norm, NormKind, NormSpec};
use hts_core::{Error, Result};
use rayon::prelude::*;

use crate::ensemble::{EnsembleKind, Member};
use crate::setup::Setup;
use crate::stats::{band, Band};
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    BVsL,
    BVsLb,
    FVsLt,
    FVsLtU,
    InhomogBVsL,
    InhomogFVsLt,
}

impl Pairing {
    pub fn flavor(self) -> Flavor {
        match self {
            Pairing::InhomogBVsL | Pairing::InhomogFVsLt => Flavor::Inhomogeneous,
            _ => Flavor::Homogeneous,
        }
    }

    fn norm_kind(self) -> NormKind {
        match self {
            Pairing::BVsL | Pairing::BVsLb | Pairing::InhomogBVsL => NormKind::Besov,
            _ => NormKind::TriebelLizorkin,
        }
    }

    fn variant(self) -> LipschitzVariant {
        match self {
            Pairing::BVsL => LipschitzVariant::Ldot,
            Pairing::BVsLb => LipschitzVariant::LbDot,
            Pairing::FVsLt | Pairing::FVsLtU => LipschitzVariant::LtDot,
            Pairing::InhomogBVsL => LipschitzVariant::L,
            Pairing::InhomogFVsLt => LipschitzVariant::Lt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceParams {
    pub s: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    /// Inner exponent for `f_vs_lt_u`.
    #[serde(with = "exponent::option", skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub c_tilde: f64,
    /// Acceptance cap on max/min of the ratio.
    pub band_cap: f64,
    /// Gate of the `p <= 1` pairing: `|q_global - omega| <= tol * omega`.
    pub lower_bound_tolerance: f64,
    /// Run `p <= 1` experiments even when the lower-bound gate fails.
    pub ignore_gate: bool,
}

impl Default for EquivalenceParams {
    fn default() -> Self {
        EquivalenceParams {
            s: 0.5,
            p: 2.0,
            q: 2.0,
            u: None,
            beta: 0.9,
            gamma: 0.9,
            c_tilde: 1.0,
            band_cap: 100.0,
            lower_bound_tolerance: 0.15,
            ignore_gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRatio {
    pub index: usize,
    pub kind: EnsembleKind,
    pub label: String,
    /// Difference norm.
    pub left: f64,
    /// Besov or Triebel–Lizorkin norm.
    pub right: f64,
    /// `left / right`; `None` for degenerate fields.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub pairing: Pairing,
    pub n: usize,
    pub omega: f64,
    pub eta: f64,
    pub params: EquivalenceParams,
    pub rows: Vec<FieldRatio>,
    pub degenerate: usize,
    /// Ratio statistics over the non-degenerate fields.
    pub ratios: Band,
    pub per_kind: Vec<(EnsembleKind, Band)>,
    pub pass: bool,
    /// Reason for a failed run, if any.
    pub finding: Option<String>,
}

impl EquivalenceReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["index", "kind", "label", "left", "right", "ratio"]);
        for r in &self.rows {
            t.push(vec![
                r.index.into(),
                r.kind.name().into(),
                r.label.clone().into(),
                r.left.into(),
                r.right.into(),
                r.ratio.into(),
            ]);
        }
        t
    }
}

/// Hypotheses of the characterisation behind each pairing.
fn check_hypotheses(setup: &Setup, params: &EquivalenceParams, pairing: Pairing, eta: f64) -> Result<()> {
    let (p, q) = (params.p, params.q);
    let b = params.beta.min(params.gamma);
    if !(params.s > 0.0 && params.s < b) {
        return Err(Error::Incompatible(format!("need s in (0, beta ^ gamma) = (0, {b}), got s = {}", params.s)));
    }
    match pairing {
        Pairing::BVsL | Pairing::BVsLb | Pairing::InhomogBVsL => {
            if p < 1.0 {
                return Err(Error::Incompatible(format!("Besov pairings need p in [1, inf], got p = {p}")));
            }
        }
        Pairing::FVsLt | Pairing::InhomogFVsLt => {
            if !(p > 1.0 && p.is_finite()) || !(q > 1.0) {
                return Err(Error::Incompatible(format!(
                    "Triebel-Lizorkin pairings need p in (1, inf) and q in (1, inf], got p = {p}, q = {q}"
                )));
            }
            if params.u.is_some_and(|u| u != 1.0) {
                return Err(Error::Incompatible("u != 1 belongs to the f_vs_lt_u pairing".into()));
            }
        }
        Pairing::FVsLtU => {
            let u = params.u.unwrap_or(1.0);
            if !(p <= 1.0) || !(u > 0.0 && u < p) {
                return Err(Error::Incompatible(format!("f_vs_lt_u needs p <= 1 and u in (0, p), got p = {p}, u = {u}")));
            }
            let omega = setup.omega();
            let fit = setup.geometry.q_global.map(|f| f.exponent);
            let ok = fit.is_some_and(|qg| (qg - omega).abs() <= params.lower_bound_tolerance * omega);
            if !ok && !params.ignore_gate {
                return Err(Error::Incompatible(format!(
                    "lower-bound exponent {fit:?} does not match omega = {omega} within {}",
                    params.lower_bound_tolerance
                )));
            }
        }
    }
    let spec = norm_spec(setup, params, pairing);
    let adm = admissible_range(&spec, pairing.norm_kind(), setup.omega(), eta);
    if !adm.admissible {
        return Err(Error::Incompatible(format!("inadmissible parameters: {}", adm.violations.join("; "))));
    }
    Ok(())
}

fn norm_spec(setup: &Setup, params: &EquivalenceParams, pairing: Pairing) -> NormSpec {
    NormSpec {
        s: params.s,
        p: params.p,
        q: params.q,
        u: None,
        beta: params.beta,
        gamma: params.gamma,
        delta: setup.stack.delta,
        c_tilde: params.c_tilde,
        flavor: pairing.flavor(),
        n_low: None,
    }
}

pub fn equivalence_experiment(
    setup: &Setup,
    params: &EquivalenceParams,
    pairing: Pairing,
    ensemble: &[Member],
) -> Result<EquivalenceReport> {
    if setup.stack.flavor != pairing.flavor() {
        return Err(Error::Flavor(format!(
            "pairing needs the {} flavor, setup has {}",
            pairing.flavor(),
            setup.stack.flavor
        )));
    }
    let eta = setup.eta()?;
    check_hypotheses(setup, params, pairing, eta)?;
    let spec = norm_spec(setup, params, pairing);
    let lip_spec = NormSpec {
        u: if pairing == Pairing::FVsLtU { Some(params.u.unwrap_or(1.0)) } else { None },
        ..spec.clone()
    };
    let (space, stack, cubes) = (&setup.space, &setup.stack, &setup.cubes);
    let rows: Vec<FieldRatio> = ensemble
        .par_iter()
        .enumerate()
        .map(|(index, m)| {
            let f = &m.values;
            let left = lipschitz_norm(space, f, &lip_spec, pairing.variant())?;
            let right = match pairing.norm_kind() {
                NormKind::Besov => besov_norm(space, f, &spec, stack, cubes)?,
                NormKind::TriebelLizorkin => triebel_lizorkin_norm(space, f, &spec, stack, cubes)?,
            };
            let scale = lebesgue_norm(space, f, 2.0).max(f.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            let tiny = 1e-12 * scale.max(f64::MIN_POSITIVE);
            let ratio = (left > tiny && right > tiny).then(|| left / right);
            Ok(FieldRatio {
                index,
                kind: m.kind,
                label: m.label.clone(),
                left,
                right,
                ratio,
            })
        })
        .collect::<Result<_>>()?;
    let good: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let degenerate = rows.len() - good.len();
    let ratios = band(&good);
    let mut kinds: Vec<EnsembleKind> = Vec::new();
    for r in &rows {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    let per_kind = kinds
        .into_iter()
        .map(|k| {
            let v: Vec<f64> = rows.iter().filter(|r| r.kind == k).filter_map(|r| r.ratio).collect();
            (k, band(&v))
        })
        .collect();
    let finding = if good.is_empty() {
        Some("every field is degenerate".to_string())
    } else if !(ratios.spread <= params.band_cap) {
        Some(format!("ratio spread {} exceeds cap {}", ratios.spread, params.band_cap))
    } else {
        None
    };
    Ok(EquivalenceReport {
        pairing,
        n: space.len(),
        omega: setup.omega(),
        eta,
        params: params.clone(),
        rows,
        degenerate,
        ratios,
        per_kind,
        pass: finding.is_none(),
        finding,
    })
}
