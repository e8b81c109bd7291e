//! Run configuration: one JSON document, every section defaulted, unknown
//! keys rejected. Overrides address leaves by dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hts_core::difference_norms::{LipschitzVariant, TruncatedVariant};
use hts_core::dyadic::Sampler;
use hts_core::kernels::{Flavor, KernelParams, ValidationParams};
use hts_core::norms::{exponent, NormSpec};
use hts_core::operators::SolverParams;
use hts_core::space::{Generator, Measure};
use hts_lab::embeddings::EmbeddingParams;
use hts_lab::lemmas::LemmaParams;
use hts_lab::{EnsembleSpec, EquivalenceParams, Pairing, SetupSpec};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceSection,
    pub dyadic: DyadicSection,
    pub kernel: KernelSection,
    pub validation: ValidationParams,
    pub norm: NormSection,
    pub field: FieldSource,
    pub solver: SolverParams,
    pub lab: LabSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub generator: Generator,
    pub measure: Measure,
    /// Space document to load instead of generating; relative to the config file.
    pub file: Option<PathBuf>,
}

impl Default for SpaceSection {
    fn default() -> Self {
        SpaceSection {
            generator: Generator::Grid1d { n: 257 },
            measure: Measure::Uniform,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DyadicSection {
    pub delta: f64,
    pub j0: u32,
    pub sampler: Sampler,
}

impl Default for DyadicSection {
    fn default() -> Self {
        DyadicSection {
            delta: 0.5,
            j0: 2,
            sampler: Sampler::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub flavor: Flavor,
    pub a: f64,
    pub sigma: f64,
    pub n_low: usize,
    pub k_max: Option<i32>,
    /// Regularity exponent for admissibility checks; fitted when absent.
    pub eta: Option<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        let p = KernelParams::default();
        KernelSection {
            flavor: Flavor::Homogeneous,
            a: p.a,
            sigma: p.sigma,
            n_low: p.n_low,
            k_max: p.k_max,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum NormVariant {
    Lebesgue,
    Besov,
    TriebelLizorkin,
    LDot,
    L,
    LbDot,
    Lb,
    LtDot,
    Lt,
    LTilde,
    LbTilde,
}

impl NormVariant {
    pub fn name(self) -> &'static str {
        match self {
            NormVariant::Lebesgue => "lebesgue",
            NormVariant::Besov => "besov",
            NormVariant::TriebelLizorkin => "triebel_lizorkin",
            NormVariant::LDot => "l_dot",
            NormVariant::L => "l",
            NormVariant::LbDot => "lb_dot",
            NormVariant::Lb => "lb",
            NormVariant::LtDot => "lt_dot",
            NormVariant::Lt => "lt",
            NormVariant::LTilde => "l_tilde",
            NormVariant::LbTilde => "lb_tilde",
        }
    }

    pub fn lipschitz(self) -> Option<LipschitzVariant> {
        Some(match self {
            NormVariant::LDot => LipschitzVariant::Ldot,
            NormVariant::L => LipschitzVariant::L,
            NormVariant::LbDot => LipschitzVariant::LbDot,
            NormVariant::Lb => LipschitzVariant::Lb,
            NormVariant::LtDot => LipschitzVariant::LtDot,
            NormVariant::Lt => LipschitzVariant::Lt,
            _ => return None,
        })
    }

    pub fn truncated(self) -> Option<TruncatedVariant> {
        match self {
            NormVariant::LTilde => Some(TruncatedVariant::LTilde),
            NormVariant::LbTilde => Some(TruncatedVariant::LbTilde),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSection {
    pub variant: NormVariant,
    pub s: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    #[serde(with = "exponent::option")]
    pub u: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub c_tilde: f64,
}

impl Default for NormSection {
    fn default() -> Self {
        let n = NormSpec::default();
        NormSection {
            variant: NormVariant::Besov,
            s: n.s,
            p: n.p,
            q: n.q,
            u: n.u,
            beta: n.beta,
            gamma: n.gamma,
            c_tilde: n.c_tilde,
        }
    }
}

/// Where `norm compute` and `frame reconstruct` get their field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    Constant { value: f64 },
    Values { values: Vec<f64> },
    /// JSON array, or numbers separated by commas or whitespace.
    File { path: PathBuf },
    /// Member of the `lab.ensemble` draw.
    Ensemble { index: usize },
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Ensemble { index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabSection {
    pub ensemble: EnsembleSpec,
    pub pairing: Pairing,
    pub equivalence: EquivalenceParams,
    pub embeddings: EmbeddingParams,
    pub lemmas: LemmaParams,
}

impl Default for LabSection {
    fn default() -> Self {
        LabSection {
            ensemble: EnsembleSpec::default(),
            pairing: Pairing::BVsL,
            equivalence: EquivalenceParams::default(),
            embeddings: EmbeddingParams::default(),
            lemmas: LemmaParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when absent) and applies `key=value` overrides.
    /// Relative paths inside the file resolve against its directory, those
    /// given by overrides against the working directory; all end up absolute.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                let mut cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                let base = std::path::absolute(p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")))
                    .map_err(|e| CliError::usage(e.to_string()))?;
                cfg.rebase(&base);
                cfg
            }
            None => RunConfig::default(),
        };
        if !overrides.is_empty() {
            let mut v = serde_json::to_value(&cfg).expect("config serializes");
            for o in overrides {
                apply_override(&mut v, o)?;
            }
            cfg = serde_json::from_value(v).map_err(|e| CliError::usage(format!("after overrides: {e}")))?;
        }
        let cwd = std::env::current_dir().map_err(|e| CliError::usage(e.to_string()))?;
        cfg.rebase(&cwd);
        cfg.check()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = self.space.file.as_mut() {
            fix(f);
        }
        if let FieldSource::File { path } = &mut self.field {
            fix(path);
        }
        fix(&mut self.output.dir);
    }

    fn check(&self) -> Result<(), CliError> {
        if self.output.formats.is_empty() {
            return Err(CliError::usage("output.formats is empty"));
        }
        if self.lab.ensemble.kinds.is_empty() {
            return Err(CliError::usage("lab.ensemble.kinds is empty"));
        }
        Ok(())
    }

    pub fn setup_spec(&self) -> SetupSpec {
        SetupSpec {
            space: self.space.generator.clone(),
            measure: self.space.measure.clone(),
            delta: self.dyadic.delta,
            j0: self.dyadic.j0,
            sampler: self.dyadic.sampler,
            flavor: self.kernel.flavor,
            kernel: KernelParams {
                a: self.kernel.a,
                sigma: self.kernel.sigma,
                n_low: self.kernel.n_low,
                k_max: self.kernel.k_max,
            },
            eta: self.kernel.eta,
        }
    }

    pub fn norm_spec(&self) -> NormSpec {
        NormSpec {
            s: self.norm.s,
            p: self.norm.p,
            q: self.norm.q,
            u: self.norm.u,
            beta: self.norm.beta,
            gamma: self.norm.gamma,
            delta: self.dyadic.delta,
            c_tilde: self.norm.c_tilde,
            flavor: self.kernel.flavor,
            n_low: Some(self.kernel.n_low),
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// `a.b.c=value`; the value is JSON when it parses, a string otherwise.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{spec}` is not of the form key.path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::usage(format!("override path `{path}` has an empty segment")));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(CliError::usage(format!(
                    "override `{path}`: `{}` is not a section",
                    keys[..i].join(".")
                )))
            }
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!()
}
