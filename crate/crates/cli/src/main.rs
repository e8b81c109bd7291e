//! `hts`: build spaces, cubes and kernels, compute norms, run the lab suites.
//!
//! Exit status: 0 success, 1 usage or format error, 2 violated invariant
//! (failed verification, exact-row violation, band over its cap).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::NormVariant;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError { code: 1, message: m.into() }
    }

    pub fn violated(m: impl Into<String>) -> Self {
        CliError { code: 2, message: m.into() }
    }
}

impl From<hts_core::Error> for CliError {
    fn from(e: hts_core::Error) -> Self {
        use hts_core::Error as E;
        let code = match e {
            E::Certification { .. } | E::Convergence { .. } | E::IllConditionedFrame { .. } => 2,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hts", version, about = "Dyadic cubes, kernels and smoothness norms on finite quasi-metric measure spaces")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    group: Group,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; every section is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set dyadic.j0=3` (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Group {
    /// Space documents and geometry.
    Space {
        #[command(subcommand)]
        action: SpaceAction,
    },
    /// Dyadic cubes.
    Cubes {
        #[command(subcommand)]
        action: CubesAction,
    },
    /// Approximation-of-the-identity kernels.
    Ati {
        #[command(subcommand)]
        action: AtiAction,
    },
    Norm {
        #[command(subcommand)]
        action: NormAction,
    },
    Frame {
        #[command(subcommand)]
        action: FrameAction,
    },
    /// Experiment suites.
    Lab {
        #[command(subcommand)]
        action: LabAction,
    },
}

#[derive(Subcommand, Debug)]
enum SpaceAction {
    /// Write the space document (`space.json`).
    Build(Common),
    /// Measure doubling and lower-bound constants (`geometry.*`).
    Report(Common),
}

#[derive(Subcommand, Debug)]
enum CubesAction {
    /// Build, verify and dump the refined cubes (`cubes.json`, `sandwich.*`).
    Build(Common),
    /// Verify a cube dump against the configured space.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Dump to check; defaults to `cubes.json` in the output directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum AtiAction {
    /// Dump the dense kernel stack (`kernels.json`).
    Build(Common),
    /// Measure the kernel constants (`validation.*`).
    Validate(Common),
}

#[derive(Subcommand, Debug)]
enum NormAction {
    /// Evaluate one norm of the configured field.
    Compute {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<NormVariant>,
    },
}

#[derive(Subcommand, Debug)]
enum FrameAction {
    /// Frame reconstruction of the configured field (`reconstruction.*`).
    Reconstruct(Common),
}

#[derive(Subcommand, Debug)]
enum LabAction {
    /// Norm-equivalence band for `lab.pairing` (`equivalence.*`).
    Equivalence(Common),
    /// Embedding suite (`embeddings.*`).
    Embeddings(Common),
    /// Lemma suite (`lemmas.*`).
    Lemmas(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    use commands as c;
    let result = match cli.group {
        Group::Space { action: SpaceAction::Build(a) } => c::run("space build", &a, c::space_build),
        Group::Space { action: SpaceAction::Report(a) } => c::run("space report", &a, c::space_report),
        Group::Cubes { action: CubesAction::Build(a) } => c::run("cubes build", &a, c::cubes_build),
        Group::Cubes {
            action: CubesAction::Verify { common, dump },
        } => c::run("cubes verify", &common, |cfg, out| c::cubes_verify(cfg, out, dump.as_deref())),
        Group::Ati { action: AtiAction::Build(a) } => c::run("ati build", &a, c::ati_build),
        Group::Ati { action: AtiAction::Validate(a) } => c::run("ati validate", &a, c::ati_validate),
        Group::Norm {
            action: NormAction::Compute { common, variant },
        } => c::run("norm compute", &common, |cfg, out| c::norm_compute(cfg, out, variant)),
        Group::Frame {
            action: FrameAction::Reconstruct(a),
        } => c::run("frame reconstruct", &a, c::frame_reconstruct),
        Group::Lab { action: LabAction::Equivalence(a) } => c::run("lab equivalence", &a, c::lab_equivalence),
        Group::Lab { action: LabAction::Embeddings(a) } => c::run("lab embeddings", &a, c::lab_embeddings),
        Group::Lab { action: LabAction::Lemmas(a) } => c::run("lab lemmas", &a, c::lab_lemmas),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
