use std::path::Path;
use std::time::SystemTime;

use serde::Serialize;

use hts_core::difference_norms::{lipschitz_norm, truncated_norm};
use hts_core::dyadic::{verify_cubes, verify_dump, CubeDump, CubeVerification};
use hts_core::io::{load_space, space_to_document};
use hts_core::kernels::validate_ati;
use hts_core::norms::{besov_norm, lebesgue_norm, triebel_lizorkin_norm};
use hts_core::operators::reconstruct;
use hts_core::space::{generate_space, geometry_report, resolved_radii};
use hts_core::Space;
use hts_lab::embeddings::embedding_suite;
use hts_lab::lemmas::lemma_suite;
use hts_lab::stats::SuiteReport;
use hts_lab::table::{Cell, Table};
use hts_lab::{equivalence_experiment, generate_ensemble, Setup};

use crate::config::{FieldSource, Format, NormVariant, RunConfig};
use crate::output::Output;
use crate::{CliError, Common};

/// Loads the config, writes `effective_config.json`, runs `body` and
/// records the sidecar whatever the outcome.
pub fn run(
    name: &str,
    common: &Common,
    body: impl FnOnce(&RunConfig, &mut Output) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let started = SystemTime::now();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    let mut out = Output::create(&cfg.output.dir)?;
    out.json("effective_config.json", &cfg)?;
    let result = body(&cfg, &mut out);
    let code = result.as_ref().map_or_else(|e| e.code as i32, |_| 0);
    out.sidecar(name, started, code)?;
    result
}

fn space(cfg: &RunConfig) -> Result<Space, CliError> {
    Ok(match &cfg.space.file {
        Some(p) => load_space(p)?,
        None => generate_space(&cfg.space.generator, &cfg.space.measure)?,
    })
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    Ok(Setup::on_space(&cfg.setup_spec(), space(cfg)?)?)
}

fn report<T: Serialize>(out: &mut Output, cfg: &RunConfig, stem: &str, table: &Table, json: &T) -> Result<(), CliError> {
    if cfg.wants(Format::Csv) {
        out.write(&format!("{stem}.csv"), table.to_csv().as_bytes())?;
    }
    if cfg.wants(Format::Json) {
        out.json(&format!("{stem}.json"), json)?;
    }
    Ok(())
}

fn quantities(rows: &[(&str, Cell)]) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in rows {
        t.push(vec![Cell::Text(k.to_string()), v.clone()]);
    }
    t
}

fn opt(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::Float)
}

pub fn space_build(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let s = space(cfg)?;
    out.json("space.json", &space_to_document(&s))?;
    println!("{}: n = {}, a0 = {}", s.label(), s.len(), s.a0());
    Ok(())
}

pub fn space_report(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let s = space(cfg)?;
    let g = geometry_report(&s, &resolved_radii(&s), true)?;
    let t = quantities(&[
        ("n", Cell::Int(s.len() as i64)),
        ("a0", Cell::Float(s.a0())),
        ("diam", Cell::Float(g.diam)),
        ("c_mu", Cell::Float(g.c_mu)),
        ("omega", Cell::Float(g.omega)),
        ("q_global", opt(g.q_global.map(|f| f.exponent))),
        ("q_global_constant", opt(g.q_global.map(|f| f.constant))),
        ("q_local", opt(g.q_local.map(|f| f.exponent))),
        ("q_local_constant", opt(g.q_local.map(|f| f.constant))),
        ("kappa", opt(g.kappa)),
        ("volume_symmetry", Cell::Float(g.volume_symmetry)),
    ]);
    report(out, cfg, "geometry", &t, &g)?;
    println!("{}: c_mu = {}, omega = {}", s.label(), g.c_mu, g.omega);
    Ok(())
}

fn sandwich_table(v: &CubeVerification) -> Table {
    let mut t = Table::new(&[
        "k", "cubes", "saturated", "min_inner", "max_outer", "nominal_inner_pass", "nominal_outer_pass", "max_subcubes",
    ]);
    for l in &v.sandwich {
        t.push(vec![
            Cell::Int(l.k as i64),
            Cell::Int(l.cubes as i64),
            Cell::Text(l.saturated.to_string()),
            Cell::Float(l.min_inner),
            Cell::Float(l.max_outer),
            Cell::Int(l.nominal_inner_pass as i64),
            Cell::Int(l.nominal_outer_pass as i64),
            Cell::Int(l.max_subcubes as i64),
        ]);
    }
    t
}

fn verdict(v: &CubeVerification) -> Result<(), CliError> {
    if v.structural_pass() {
        println!("partition, nesting and center membership hold at every level");
        Ok(())
    } else {
        Err(CliError::violated(format!("cube verification failed:\n  {}", v.failures.join("\n  "))))
    }
}

pub fn cubes_build(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let s = space(cfg)?;
    let cubes = Setup::cubes(&cfg.setup_spec(), &s)?;
    out.json("cubes.json", &cubes.to_dump())?;
    let v = verify_cubes(&cubes, &s);
    report(out, cfg, "sandwich", &sandwich_table(&v), &v)?;
    println!("levels {}..={}", cubes.k_min(), cubes.k_max());
    verdict(&v)
}

pub fn cubes_verify(cfg: &RunConfig, out: &mut Output, dump: Option<&Path>) -> Result<(), CliError> {
    let path = dump.map_or_else(|| cfg.output.dir.join("cubes.json"), Path::to_path_buf);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let d: CubeDump = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let v = verify_dump(&d, &space(cfg)?);
    report(out, cfg, "verification", &sandwich_table(&v), &v)?;
    verdict(&v)
}

pub fn ati_build(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    out.json("kernels.json", &st.stack.to_dump())?;
    println!("{} stack, levels {}..={}", st.stack.flavor, st.stack.k_min, st.stack.k_max);
    Ok(())
}

/// Builder guarantees checked by `ati validate`.
const CANCEL_TOL: f64 = 1e-10;
const UNIT_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-3;

pub fn ati_validate(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let r = validate_ati(&st.stack, &st.space, &st.cubes, &cfg.validation)?;
    let mut rows = vec![
        ("nu", Cell::Float(r.nu)),
        ("size_const", Cell::Float(r.size_const)),
        ("size_const_without_h", Cell::Float(r.size_const_without_h)),
        ("eta", Cell::Float(r.eta)),
        ("reg_const", Cell::Float(r.reg_const)),
        ("second_diff_const", Cell::Float(r.second_diff_const)),
        ("cancel_resid", Cell::Float(r.cancel_resid)),
        ("unit_resid", opt(r.unit_resid)),
        ("identity_resid", Cell::Float(r.identity_resid)),
        ("symmetry_resid", Cell::Float(r.symmetry_resid)),
    ];
    let names: Vec<String> = r.rgamma.iter().map(|g| format!("rgamma_{}", g.gamma)).collect();
    for (name, g) in names.iter().zip(&r.rgamma) {
        rows.push((name, Cell::Float(g.constant)));
    }
    report(out, cfg, "validation", &quantities(&rows), &r)?;
    println!(
        "size {} eta {} cancel {:e} identity {:e}",
        r.size_const, r.eta, r.cancel_resid, r.identity_resid
    );
    let mut bad = Vec::new();
    if !(r.cancel_resid <= CANCEL_TOL) {
        bad.push(format!("cancellation residual {:e} > {CANCEL_TOL:e}", r.cancel_resid));
    }
    if let Some(u) = r.unit_resid.filter(|u| !(*u <= UNIT_TOL)) {
        bad.push(format!("unit-integral residual {u:e} > {UNIT_TOL:e}"));
    }
    if !r.size_const.is_finite() {
        bad.push("size constant is infinite".into());
    }
    if !(r.identity_resid <= IDENTITY_TOL) {
        bad.push(format!("identity residual {:e} > {IDENTITY_TOL:e}", r.identity_resid));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::violated(bad.join("; ")))
    }
}

fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if let Ok(v) = serde_json::from_str::<Vec<f64>>(&text) {
        return Ok(v);
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::usage(format!("{}: `{t}` is not a number", path.display())))
        })
        .collect()
}

/// The configured field; ensemble members need the stack, so `setup` is
/// built on demand.
fn field(cfg: &RunConfig, s: &Space, st: Option<&Setup>) -> Result<Vec<f64>, CliError> {
    let f = match &cfg.field {
        FieldSource::Constant { value } => vec![*value; s.len()],
        FieldSource::Values { values } => values.clone(),
        FieldSource::File { path } => read_values(path)?,
        FieldSource::Ensemble { index } => {
            let st = st.expect("ensemble fields come with a setup");
            let ens = generate_ensemble(&st.space, Some(&st.stack), &cfg.lab.ensemble)?;
            ens.into_iter()
                .nth(*index)
                .ok_or_else(|| CliError::usage(format!("field.index = {index} beyond the ensemble")))?
                .values
        }
    };
    if f.len() != s.len() {
        return Err(CliError::usage(format!("field has {} values, space has {} points", f.len(), s.len())));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(CliError::usage(format!("field value at point {i} is not finite")));
    }
    Ok(f)
}

pub fn norm_compute(cfg: &RunConfig, out: &mut Output, variant: Option<NormVariant>) -> Result<(), CliError> {
    let variant = variant.unwrap_or(cfg.norm.variant);
    let spec = cfg.norm_spec();
    let needs_stack = matches!(variant, NormVariant::Besov | NormVariant::TriebelLizorkin)
        || matches!(cfg.field, FieldSource::Ensemble { .. });
    let st = if needs_stack { Some(setup(cfg)?) } else { None };
    let owned;
    let s = match &st {
        Some(st) => &st.space,
        None => {
            owned = space(cfg)?;
            &owned
        }
    };
    let f = field(cfg, s, st.as_ref())?;
    let value = match variant {
        NormVariant::Lebesgue => lebesgue_norm(s, &f, spec.p),
        NormVariant::Besov => {
            let st = st.as_ref().unwrap();
            besov_norm(s, &f, &spec, &st.stack, &st.cubes)?
        }
        NormVariant::TriebelLizorkin => {
            let st = st.as_ref().unwrap();
            triebel_lizorkin_norm(s, &f, &spec, &st.stack, &st.cubes)?
        }
        v => match (v.lipschitz(), v.truncated()) {
            (Some(l), _) => lipschitz_norm(s, &f, &spec, l)?,
            (_, Some(t)) => truncated_norm(s, &f, &spec, t)?,
            _ => unreachable!(),
        },
    };
    let mut t = Table::new(&["variant", "value"]);
    t.push(vec![Cell::Text(variant.name().into()), Cell::Float(value)]);
    let json = serde_json::json!({ "variant": variant, "value": value, "spec": spec });
    report(out, cfg, "norm", &t, &json)?;
    println!("{value}");
    Ok(())
}

pub fn frame_reconstruct(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let f = field(cfg, &st.space, Some(&st))?;
    let (rf, rep) = reconstruct(&st.stack, &st.cubes, &st.space, &f, &cfg.solver)?;
    let mut t = Table::new(&["point", "f", "reconstruction"]);
    for (x, (a, b)) in f.iter().zip(&rf).enumerate() {
        t.push(vec![Cell::Int(x as i64), Cell::Float(*a), Cell::Float(*b)]);
    }
    report(out, cfg, "reconstruction", &t, &rep)?;
    println!(
        "residual {:e} after {} iterations; frame bounds [{}, {}]",
        rep.residual, rep.iterations, rep.lower_frame_bound, rep.upper_frame_bound
    );
    Ok(())
}

pub fn lab_equivalence(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let ens = generate_ensemble(&st.space, Some(&st.stack), &cfg.lab.ensemble)?;
    let r = equivalence_experiment(&st, &cfg.lab.equivalence, cfg.lab.pairing, &ens)?;
    report(out, cfg, "equivalence", &r.table(), &r)?;
    let b = &r.ratios;
    println!(
        "{}: {} fields ({} degenerate); ratio min {} median {} max {} geo_mean {}; spread {} (cap {})",
        serde_json::to_value(r.pairing).expect("pairing serializes").as_str().unwrap_or_default(), b.count, r.degenerate, b.min, b.median, b.max, b.geo_mean, b.spread, r.params.band_cap
    );
    if r.pass {
        Ok(())
    } else {
        Err(CliError::violated(r.finding.unwrap_or_else(|| "equivalence band failed".into())))
    }
}

fn suite(out: &mut Output, cfg: &RunConfig, stem: &str, r: &SuiteReport) -> Result<(), CliError> {
    report(out, cfg, stem, &r.table(), r)?;
    for row in &r.rows {
        println!(
            "{} {} checked {} violations {} statistic {}{}",
            if row.pass { "ok  " } else { "FAIL" },
            row.name,
            row.checked,
            row.violations,
            row.statistic,
            row.cap.map_or(String::new(), |c| format!(" cap {c}"))
        );
    }
    let failed: Vec<&str> = r.rows.iter().filter(|x| !x.pass).map(|x| x.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::violated(format!("{} rows failed: {}", r.suite, failed.join(", "))))
    }
}

pub fn lab_embeddings(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let ens = generate_ensemble(&st.space, Some(&st.stack), &cfg.lab.ensemble)?;
    let r = embedding_suite(&st, &cfg.lab.embeddings, &ens)?;
    suite(out, cfg, "embeddings", &r)
}

pub fn lab_lemmas(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let r = lemma_suite(&st, &cfg.lab.lemmas)?;
    suite(out, cfg, "lemmas", &r)
}
