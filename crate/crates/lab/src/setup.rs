//! One-stop construction of space, cubes and stack from a config.

use serde::{Deserialize, Serialize};

use hts_core::dyadic::{build_cubes, build_nets, coarsest_level, saturation_level, CubeSystem, Sampler};
use hts_core::kernels::{build_exp_ati, build_exp_iati, validate_ati, Flavor, KernelParams, ValidationParams};
use hts_core::space::{generate_space, geometry_report, resolved_radii, GeometryReport, Generator, Measure};
use hts_core::{Result, Space, Stack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupSpec {
    pub space: Generator,
    pub measure: Measure,
    pub delta: f64,
    /// Subcube depth below each stack level.
    pub j0: u32,
    pub sampler: Sampler,
    pub flavor: Flavor,
    pub kernel: KernelParams,
    /// Regularity exponent of the stack; fitted by kernel validation when absent.
    pub eta: Option<f64>,
}

impl Default for SetupSpec {
    fn default() -> Self {
        SetupSpec {
            space: Generator::Grid1d { n: 257 },
            measure: Measure::Uniform,
            delta: 0.5,
            j0: 2,
            sampler: Sampler::Center,
            flavor: Flavor::Homogeneous,
            kernel: KernelParams::default(),
            eta: None,
        }
    }
}

pub struct Setup {
    pub spec: SetupSpec,
    pub space: Space,
    pub cubes: CubeSystem,
    pub stack: Stack,
    pub geometry: GeometryReport,
}

impl Setup {
    pub fn build(spec: &SetupSpec) -> Result<Setup> {
        let space: Space = generate_space(&spec.space, &spec.measure)?;
        Self::on_space(spec, space)
    }

    /// Nets run from the coarsest level (0 at the latest for inhomogeneous
    /// stacks) down to saturation plus `j0`.
    pub fn on_space(spec: &SetupSpec, space: Space) -> Result<Setup> {
        let cubes = Self::cubes(spec, &space)?;
        let stack = match spec.flavor {
            Flavor::Homogeneous => build_exp_ati(&space, &cubes, &spec.kernel)?,
            Flavor::Inhomogeneous => build_exp_iati(&space, &cubes, &spec.kernel)?,
        };
        let geometry = geometry_report(&space, &resolved_radii(&space), false)?;
        Ok(Setup {
            spec: spec.clone(),
            space,
            cubes,
            stack,
            geometry,
        })
    }

    /// Refined cubes alone, as [`Setup::on_space`] builds them.
    pub fn cubes(spec: &SetupSpec, space: &Space) -> Result<CubeSystem> {
        let coarse = coarsest_level(space.diam(), spec.delta);
        let k_min = match spec.flavor {
            Flavor::Homogeneous => coarse,
            Flavor::Inhomogeneous => coarse.min(0),
        };
        let sat = saturation_level(space.min_gap(), spec.delta).max(k_min + 1);
        let nets = build_nets(space, spec.delta, k_min, sat + spec.j0 as i32, false)?;
        build_cubes(&nets, space)?.refine_subcubes(spec.j0, spec.sampler)
    }

    pub fn n(&self) -> usize {
        self.space.len()
    }

    pub fn omega(&self) -> f64 {
        self.geometry.omega
    }

    /// Configured `eta`, or the fitted regularity exponent.
    pub fn eta(&self) -> Result<f64> {
        if let Some(e) = self.spec.eta {
            return Ok(e);
        }
        let params = ValidationParams {
            regularity_budget: 2_000_000,
            second_difference_budget: 10_000,
            probes: 1,
            ..Default::default()
        };
        Ok(validate_ati(&self.stack, &self.space, &self.cubes, &params)?.eta)
    }
}
