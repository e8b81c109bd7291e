use proptest::prelude::*;

use hts_core::difference_norms::{lipschitz_norm, LipschitzVariant};
use hts_core::norms::NormSpec;
use hts_core::operators::hl_maximal;
use hts_core::space::{generate_space, Generator, Measure};
use hts_core::Space;

fn space() -> Space {
    generate_space(&Generator::Circle { n: 24 }, &Measure::Uniform).unwrap()
}

fn field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 24)
}

proptest! {
    #[test]
    fn maximal_dominates_and_is_sublinear(f in field(), g in field(), c in -5.0f64..5.0) {
        let s = space();
        let mf = hl_maximal(&s, &f);
        let mg = hl_maximal(&s, &g);
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let msum = hl_maximal(&s, &sum);
        let scaled: Vec<f64> = f.iter().map(|a| c * a).collect();
        let msc = hl_maximal(&s, &scaled);
        for x in 0..24 {
            prop_assert!(mf[x] >= f[x].abs());
            prop_assert!(msum[x] <= (mf[x] + mg[x]) * (1.0 + 1e-12));
            prop_assert!((msc[x] - c.abs() * mf[x]).abs() <= 1e-12 * msc[x].max(1.0));
        }
    }

    #[test]
    fn lipschitz_norms_are_seminorms(f in field(), c in -5.0f64..5.0, shift in -5.0f64..5.0) {
        let s = space();
        let spec = NormSpec::default();
        let base = lipschitz_norm(&s, &f, &spec, LipschitzVariant::Ldot).unwrap();
        let scaled: Vec<f64> = f.iter().map(|a| c * a).collect();
        let shifted: Vec<f64> = f.iter().map(|a| a + shift).collect();
        let a = lipschitz_norm(&s, &scaled, &spec, LipschitzVariant::Ldot).unwrap();
        let b = lipschitz_norm(&s, &shifted, &spec, LipschitzVariant::Ldot).unwrap();
        prop_assert!((a - c.abs() * base).abs() <= 1e-12 * a.max(1.0));
        prop_assert!((b - base).abs() <= 1e-12 * base.max(1.0));
        let lb = lipschitz_norm(&s, &f, &spec, LipschitzVariant::LbDot).unwrap();
        prop_assert!(lb <= base * (1.0 + 1e-12));
    }
}
