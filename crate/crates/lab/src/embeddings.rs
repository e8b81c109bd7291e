//! Embedding suite: exact orderings between norms and measured constants of
//! the constant-bearing inclusions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hts_core::difference_norms::{lipschitz_norm, truncated_norm, LipschitzVariant, TruncatedVariant};
use hts_core::norms::{besov_norm, exponent, lebesgue_norm, triebel_lizorkin_norm, NormSpec};
use hts_core::{Error, Result, Space};

use crate::ensemble::Member;
use crate::setup::Setup;
use crate::stats::{SuiteReport, SuiteRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingParams {
    pub s: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    /// Second `q` for the `L_b` / `L_t` sandwich.
    #[serde(with = "exponent")]
    pub sandwich_q: f64,
    /// Smoothness increment for the shift rows.
    pub eps: f64,
    pub c_tilde: f64,
    /// Source of the Sobolev-type row `B^s_{p,q} -> B^{s - omega(1/p - 1)}_{1,q}`.
    pub sobolev_s: f64,
    pub sobolev_p: f64,
    /// Exponents swept by the monotonicity rows.
    #[serde(with = "exponent::vec")]
    pub q_grid: Vec<f64>,
    /// Relative slack for floating-point rounding in exact rows.
    pub tolerance: f64,
    pub band_cap: f64,
    pub truncation_cap: f64,
    pub c_tilde_cap: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            s: 0.5,
            p: 2.0,
            q: 2.0,
            sandwich_q: 4.0,
            eps: 0.2,
            c_tilde: 1.0,
            sobolev_s: 0.8,
            sobolev_p: 0.8,
            q_grid: vec![0.5, 1.0, 2.0, 4.0, f64::INFINITY],
            tolerance: 1e-12,
            band_cap: 100.0,
            truncation_cap: 4.0,
            c_tilde_cap: 8.0,
        }
    }
}

struct Counter {
    checked: usize,
    violations: usize,
    lo: f64,
    hi: f64,
}

impl Counter {
    fn new() -> Self {
        Counter {
            checked: 0,
            violations: 0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    /// Records `a <= b` up to relative slack; min/max track `a / b`.
    fn le(&mut self, a: f64, b: f64, tol: f64) {
        self.checked += 1;
        if a > b + tol * b.abs().max(a.abs()) {
            self.violations += 1;
        }
        if b > 0.0 {
            self.lo = self.lo.min(a / b);
            self.hi = self.hi.max(a / b);
        }
    }

    fn eq(&mut self, a: f64, b: f64, tol: f64) {
        self.checked += 1;
        if (a - b).abs() > tol * a.abs().max(b.abs()) {
            self.violations += 1;
        }
        if b > 0.0 {
            self.lo = self.lo.min(a / b);
            self.hi = self.hi.max(a / b);
        }
    }

    fn merge(mut self, o: Counter) -> Counter {
        self.checked += o.checked;
        self.violations += o.violations;
        self.lo = self.lo.min(o.lo);
        self.hi = self.hi.max(o.hi);
        self
    }

    fn row(self, name: &str, note: &str) -> SuiteRow {
        SuiteRow::exact(name, self.checked, self.violations, self.lo, self.hi, note)
    }
}

const VARIANTS: [LipschitzVariant; 6] = [
    LipschitzVariant::Ldot,
    LipschitzVariant::L,
    LipschitzVariant::LbDot,
    LipschitzVariant::Lb,
    LipschitzVariant::LtDot,
    LipschitzVariant::Lt,
];

fn nontrivial(space: &Space, f: &[f64]) -> bool {
    lebesgue_norm(space, f, 2.0) > 0.0
}

/// Runs an exact check per field in parallel and merges the counters in
/// ensemble order.
fn exact_row(
    ensemble: &[Member],
    name: &str,
    note: &str,
    check: impl Fn(&[f64], &mut Counter) -> Result<()> + Sync,
) -> Result<SuiteRow> {
    let parts: Vec<Counter> = ensemble
        .par_iter()
        .map(|m| {
            let mut c = Counter::new();
            check(&m.values, &mut c)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Counter::new(), Counter::merge).row(name, note))
}

fn ratios(ensemble: &[Member], f: impl Fn(&[f64]) -> Result<Option<f64>> + Sync) -> Result<Vec<f64>> {
    let v: Vec<Option<f64>> = ensemble.par_iter().map(|m| f(&m.values)).collect::<Result<_>>()?;
    Ok(v.into_iter().flatten().collect())
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()).then(|| a / b)
}

pub fn embedding_suite(setup: &Setup, params: &EmbeddingParams, ensemble: &[Member]) -> Result<SuiteReport> {
    if ensemble.is_empty() {
        return Err(Error::Parameter("embedding suite needs a nonempty ensemble".into()));
    }
    if !(params.s > 0.0 && params.eps > 0.0) {
        return Err(Error::Incompatible("embedding suite needs s > 0 and eps > 0".into()));
    }
    let (space, stack, cubes) = (&setup.space, &setup.stack, &setup.cubes);
    let tol = params.tolerance;
    let base = NormSpec {
        s: params.s,
        p: params.p,
        q: params.q,
        u: None,
        delta: stack.delta,
        c_tilde: params.c_tilde,
        flavor: stack.flavor,
        ..Default::default()
    };
    let with = |q: f64| NormSpec { q, ..base.clone() };
    let mut rows = Vec::new();

    rows.push(exact_row(ensemble, "besov_q_monotone", "q0 <= q1 => B(q1) <= B(q0)", |f, c| {
        let v: Vec<f64> = params
            .q_grid
            .iter()
            .map(|&q| besov_norm(space, f, &with(q), stack, cubes))
            .collect::<Result<_>>()?;
        for w in v.windows(2) {
            c.le(w[1], w[0], tol);
        }
        Ok(())
    })?);

    if params.p.is_finite() {
        rows.push(exact_row(ensemble, "triebel_lizorkin_q_monotone", "q0 <= q1 => F(q1) <= F(q0)", |f, c| {
            let v: Vec<f64> = params
                .q_grid
                .iter()
                .map(|&q| triebel_lizorkin_norm(space, f, &with(q), stack, cubes))
                .collect::<Result<_>>()?;
            for w in v.windows(2) {
                c.le(w[1], w[0], tol);
            }
            Ok(())
        })?);
    }

    rows.push(exact_row(ensemble, "lipschitz_q_monotone", "all six variants", |f, c| {
        for v in VARIANTS {
            let vals: Vec<f64> = params
                .q_grid
                .iter()
                .map(|&q| lipschitz_norm(space, f, &with(q), v))
                .collect::<Result<_>>()?;
            for w in vals.windows(2) {
                c.le(w[1], w[0], tol);
            }
        }
        Ok(())
    })?);

    if params.p >= 1.0 {
        rows.push(exact_row(ensemble, "jensen_lb_le_l", "L_b-dot <= L-dot and L_b <= L for p >= 1", |f, c| {
            let s = &base;
            c.le(
                lipschitz_norm(space, f, s, LipschitzVariant::LbDot)?,
                lipschitz_norm(space, f, s, LipschitzVariant::Ldot)?,
                tol,
            );
            c.le(
                lipschitz_norm(space, f, s, LipschitzVariant::Lb)?,
                lipschitz_norm(space, f, s, LipschitzVariant::L)?,
                tol,
            );
            Ok(())
        })?);
    }

    if params.p.is_finite() {
        let pp = NormSpec { q: params.p, ..base.clone() };
        rows.push(exact_row(ensemble, "lb_equals_lt_at_p_eq_q", "L_b-dot(s,p,p) = L_t-dot(s,p,p)", |f, c| {
            c.eq(
                lipschitz_norm(space, f, &pp, LipschitzVariant::LbDot)?,
                lipschitz_norm(space, f, &pp, LipschitzVariant::LtDot)?,
                tol,
            );
            Ok(())
        })?);
        rows.push(exact_row(ensemble, "f_equals_b_at_p_eq_q", "F(s,p,p) = B(s,p,p)", |f, c| {
            c.eq(
                triebel_lizorkin_norm(space, f, &pp, stack, cubes)?,
                besov_norm(space, f, &pp, stack, cubes)?,
                tol,
            );
            Ok(())
        })?);
    }

    let shifted = NormSpec { s: params.s + params.eps, ..base.clone() };
    rows.push(exact_row(ensemble, "eps_shift_truncated", "truncated (k >= 0) norm grows with s", |f, c| {
        for v in [TruncatedVariant::LTilde, TruncatedVariant::LbTilde] {
            c.le(truncated_norm(space, f, &base, v)?, truncated_norm(space, f, &shifted, v)?, tol);
        }
        Ok(())
    })?);

    // constant-bearing rows
    let omega = setup.omega();
    let (ss, sp) = (params.sobolev_s, params.sobolev_p);
    if sp > omega / (omega + ss) && sp <= 1.0 {
        let target_s = ss - omega * (1.0 / sp - 1.0);
        let src = NormSpec { s: ss, p: sp, ..base.clone() };
        let dst = NormSpec { s: target_s, p: 1.0, ..base.clone() };
        let v = ratios(ensemble, |f| {
            Ok(ratio(besov_norm(space, f, &dst, stack, cubes)?, besov_norm(space, f, &src, stack, cubes)?))
        })?;
        let m = v.iter().cloned().fold(0.0, f64::max);
        rows.push(SuiteRow::band(
            "sobolev_besov",
            &v,
            m,
            params.band_cap,
            format!("B^{ss}_{{{sp},q}} -> B^{target_s:.4}_{{1,q}}; statistic = max target/source"),
        ));
    }

    if params.p.is_finite() {
        let q = params.sandwich_q;
        let lo_q = params.p.min(q);
        let hi_q = params.p.max(q);
        let upper = ratios(ensemble, |f| {
            Ok(ratio(
                lipschitz_norm(space, f, &with(q), LipschitzVariant::LtDot)?,
                lipschitz_norm(space, f, &with(lo_q), LipschitzVariant::LbDot)?,
            ))
        })?;
        let m = upper.iter().cloned().fold(0.0, f64::max);
        rows.push(SuiteRow::band(
            "lt_below_lb_min",
            &upper,
            m,
            params.band_cap,
            "max L_t-dot(s,p,q) / L_b-dot(s,p,min(p,q))",
        ));
        let lower = ratios(ensemble, |f| {
            Ok(ratio(
                lipschitz_norm(space, f, &with(hi_q), LipschitzVariant::LbDot)?,
                lipschitz_norm(space, f, &with(q), LipschitzVariant::LtDot)?,
            ))
        })?;
        let m = lower.iter().cloned().fold(0.0, f64::max);
        rows.push(SuiteRow::band(
            "lb_max_below_lt",
            &lower,
            m,
            params.band_cap,
            "max L_b-dot(s,p,max(p,q)) / L_t-dot(s,p,q)",
        ));
    }

    for (name, v) in [("smoothness_shift_l", LipschitzVariant::L), ("smoothness_shift_lb", LipschitzVariant::Lb)] {
        let r = ratios(ensemble, |f| {
            Ok(ratio(lipschitz_norm(space, f, &base, v)?, lipschitz_norm(space, f, &shifted, v)?))
        })?;
        let m = r.iter().cloned().fold(0.0, f64::max);
        rows.push(SuiteRow::band(name, &r, m, params.band_cap, "max norm(s) / norm(s + eps)"));
    }

    for (name, tv, v) in [
        ("truncation_equivalence_l", TruncatedVariant::LTilde, LipschitzVariant::L),
        ("truncation_equivalence_lb", TruncatedVariant::LbTilde, LipschitzVariant::Lb),
    ] {
        let r = ratios(ensemble, |f| {
            if !nontrivial(space, f) {
                return Ok(None);
            }
            let t = lebesgue_norm(space, f, params.p) + truncated_norm(space, f, &base, tv)?;
            Ok(ratio(t, lipschitz_norm(space, f, &base, v)?))
        })?;
        let stat = r.iter().fold(1.0f64, |m, &x| m.max(x).max(1.0 / x));
        rows.push(SuiteRow::band(
            name,
            &r,
            stat,
            params.truncation_cap,
            "(L^p + truncated) / full; statistic = max(ratio, 1/ratio)",
        ));
    }

    let doubled = NormSpec { c_tilde: 2.0 * params.c_tilde, ..base.clone() };
    for (name, v) in [("c_tilde_robustness_l", LipschitzVariant::Ldot), ("c_tilde_robustness_lb", LipschitzVariant::LbDot)] {
        let r = ratios(ensemble, |f| {
            Ok(ratio(lipschitz_norm(space, f, &doubled, v)?, lipschitz_norm(space, f, &base, v)?))
        })?;
        let stat = r.iter().fold(1.0f64, |m, &x| m.max(x).max(1.0 / x));
        rows.push(SuiteRow::band(
            name,
            &r,
            stat,
            params.c_tilde_cap,
            "norm(2 C) / norm(C); statistic = max(ratio, 1/ratio)",
        ));
    }

    Ok(SuiteReport {
        suite: "embeddings".into(),
        n: space.len(),
        rows,
    })
}
