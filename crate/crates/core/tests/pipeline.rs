use hts_core::difference_norms::{lipschitz_norm, LipschitzVariant};
use hts_core::dyadic::{build_cubes, build_nets, coarsest_level, saturation_level, verify_cubes, verify_dump, Sampler};
use hts_core::io::{parse_space, space_to_document};
use hts_core::kernels::{build_exp_ati, build_exp_iati, KernelParams};
use hts_core::norms::{besov_norm, triebel_lizorkin_norm, NormSpec};
use hts_core::operators::{frame_operator, reconstruct, SolverParams};
use hts_core::space::{generate_space, Generator, Measure};
use hts_core::{Error, Flavor, Space};

fn pipeline(gen: &Generator, j0: u32) -> (Space, hts_core::dyadic::CubeSystem) {
    let space: Space = generate_space(gen, &Measure::Uniform).unwrap();
    let k0 = coarsest_level(space.diam(), 0.5).min(0);
    let sat = saturation_level(space.min_gap(), 0.5).max(k0 + 1);
    let nets = build_nets(&space, 0.5, k0, sat + j0 as i32, false).unwrap();
    let cubes = build_cubes(&nets, &space).unwrap().refine_subcubes(j0, Sampler::Center).unwrap();
    (space, cubes)
}

#[test]
fn every_family_builds_valid_cubes() {
    for gen in [
        Generator::Grid1d { n: 33 },
        Generator::Grid2d { side: 6 },
        Generator::Circle { n: 40 },
        Generator::Graph { n: 30, ring: 2, chords: 4, seed: 1 },
        Generator::SierpinskiLevel { level: 3 },
        Generator::SnowflakePower { n: 33, exponent: 2.0 },
    ] {
        let (space, cubes) = pipeline(&gen, 1);
        let v = verify_cubes(&cubes, &space);
        assert!(v.structural_pass(), "{gen:?}: {:?}", v.failures);
        let last = cubes.levels.last().unwrap();
        assert_eq!(last.cubes.len(), space.len());
    }
}

#[test]
fn dump_round_trip_and_tamper() {
    let (space, cubes) = pipeline(&Generator::Grid1d { n: 17 }, 0);
    let mut dump = cubes.to_dump();
    let text = serde_json::to_string(&dump).unwrap();
    assert_eq!(text, serde_json::to_string(&serde_json::from_str::<hts_core::dyadic::CubeDump>(&text).unwrap()).unwrap());
    assert!(verify_dump(&dump, &space).structural_pass());
    // move point 5 into a different cube at the finest level only
    let last = dump.levels.len() - 1;
    let lv = &mut dump.levels[last];
    let from = lv.cubes.iter().position(|c| c.members.contains(&5)).unwrap();
    let to = lv.cubes.iter().position(|c| !c.members.contains(&5) && c.parent != lv.cubes[from].parent).unwrap();
    lv.cubes[from].members.retain(|&m| m != 5);
    lv.cubes[to].members.push(5);
    lv.cubes[to].members.sort_unstable();
    let v = verify_dump(&dump, &space);
    assert!(!v.structural_pass());
    assert!(v.failures.iter().any(|f| f.contains('5')), "{:?}", v.failures);
}

#[test]
fn space_document_round_trip_preserves_norms() {
    let (space, cubes) = pipeline(&Generator::Circle { n: 32 }, 1);
    let text = serde_json::to_string(&space_to_document(&space)).unwrap();
    let again: Space = parse_space(&text).unwrap();
    let f: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
    let spec = NormSpec::default();
    let a = lipschitz_norm(&space, &f, &spec, LipschitzVariant::Lb).unwrap();
    let b = lipschitz_norm(&again, &f, &spec, LipschitzVariant::Lb).unwrap();
    assert_eq!(a, b);
    let stack = build_exp_ati(&space, &cubes, &KernelParams::default()).unwrap();
    assert!(besov_norm(&space, &f, &spec, &stack, &cubes).unwrap() > 0.0);
}

#[test]
fn frame_reconstruction_both_flavors() {
    let (space, cubes) = pipeline(&Generator::Grid1d { n: 65 }, 2);
    let f: Vec<f64> = (0..65).map(|i| (i as f64 * 0.3).sin()).collect();
    for flavor in [Flavor::Homogeneous, Flavor::Inhomogeneous] {
        let stack = match flavor {
            Flavor::Homogeneous => build_exp_ati(&space, &cubes, &KernelParams::default()),
            Flavor::Inhomogeneous => build_exp_iati(&space, &cubes, &KernelParams::default()),
        }
        .unwrap();
        let (g, rep) = reconstruct(&stack, &cubes, &space, &f, &SolverParams::default()).unwrap();
        assert!(rep.residual <= 1e-8, "{flavor}: {rep:?}");
        assert!(rep.lower_frame_bound > 0.0 && rep.lower_frame_bound <= rep.upper_frame_bound);
        let target: Vec<f64> = match flavor {
            Flavor::Homogeneous => {
                let m = space.mean(&f);
                f.iter().map(|v| v - m).collect()
            }
            Flavor::Inhomogeneous => f.clone(),
        };
        let err = g.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{flavor}: {err}");
        let sf = frame_operator(&stack, &cubes, &space, &f).unwrap();
        assert!(space.inner(&sf, &f) >= 0.0);
    }
}

#[test]
fn norm_flavor_mismatch_is_typed() {
    let (space, cubes) = pipeline(&Generator::Grid1d { n: 33 }, 1);
    let stack = build_exp_ati(&space, &cubes, &KernelParams::default()).unwrap();
    let spec = NormSpec {
        flavor: Flavor::Inhomogeneous,
        ..Default::default()
    };
    let f = vec![1.0; 33];
    assert!(matches!(besov_norm(&space, &f, &spec, &stack, &cubes), Err(Error::Flavor(_))));
    assert!(matches!(triebel_lizorkin_norm(&space, &f, &spec, &stack, &cubes), Err(Error::Flavor(_))));
}

#[test]
fn constant_field_has_zero_homogeneous_norms() {
    let (space, cubes) = pipeline(&Generator::Grid2d { side: 5 }, 1);
    let stack = build_exp_ati(&space, &cubes, &KernelParams::default()).unwrap();
    let f = vec![3.5; 25];
    let spec = NormSpec::default();
    let b = besov_norm(&space, &f, &spec, &stack, &cubes).unwrap();
    assert_eq!(b, 0.0);
    assert_eq!(triebel_lizorkin_norm(&space, &f, &spec, &stack, &cubes).unwrap(), 0.0);
    assert_eq!(lipschitz_norm(&space, &f, &spec, LipschitzVariant::Ldot).unwrap(), 0.0);
}

#[test]
fn single_precision_pipeline() {
    let space: hts_core::space::MetricMeasureSpace<f32> =
        generate_space(&Generator::Grid1d { n: 33 }, &Measure::Uniform).unwrap();
    let nets = build_nets(&space, 0.5, -1, 7, false).unwrap();
    let cubes = build_cubes(&nets, &space).unwrap().refine_subcubes(1, Sampler::Center).unwrap();
    assert!(verify_cubes(&cubes, &space).structural_pass());
    let stack = build_exp_ati(&space, &cubes, &KernelParams::default()).unwrap();
    let f: Vec<f32> = (0..33).map(|i| (i as f32 * 0.2).cos()).collect();
    let spec = NormSpec::default();
    let b32 = besov_norm(&space, &f, &spec, &stack, &cubes).unwrap();

    let (s64, c64) = pipeline(&Generator::Grid1d { n: 33 }, 1);
    let st64 = build_exp_ati(&s64, &c64, &KernelParams::default()).unwrap();
    let f64v: Vec<f64> = f.iter().map(|&v| v as f64).collect();
    let b64 = besov_norm(&s64, &f64v, &spec, &st64, &c64).unwrap();
    assert!((b32 as f64 - b64).abs() / b64 < 1e-3, "{b32} vs {b64}");
}
