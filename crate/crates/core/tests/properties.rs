//! Cross-module invariants as property tests on the public API.

use lfv_core::environment::{EnvSpec, Environment};
use lfv_core::harness::RunConfig;
use lfv_core::lookdown::{j_neu, j_sel, EventKind, SelectionSpec, Type};
use lfv_core::point_process::sample_ppp;
use lfv_core::projected::parent_rare_probability;
use lfv_core::rng::rng_from_seed;
use lfv_core::spatial::TorusGrid;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = SelectionSpec> {
    (0.1f64..0.9).prop_map(|d| SelectionSpec::new([1.0 - d, 1.0 + d], [1.0, 1.0], 0.5).unwrap())
}

proptest! {
    #[test]
    fn ppp_is_a_pure_function_of_its_inputs(seed in any::<u64>(), intensity in 0.0f64..50.0, lo in -5.0f64..5.0, w in 0.1f64..10.0) {
        let a = sample_ppp(intensity, (lo, lo + w), &mut rng_from_seed(seed)).unwrap();
        let b = sample_ppp(intensity, (lo, lo + w), &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.points.iter().all(|&x| x >= lo && x < lo + w));
        prop_assert!(a.points.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn thinning_never_lowers_a_level(l in 0.0f64..1.0, extra in 0.0f64..5.0, u in 0.0f64..0.99, spec in spec_strategy(), z in prop::bool::ANY) {
        // l below v*: both maps multiply by 1/(1-u)
        let v = l + 1e-6;
        let ls = v + extra;
        let zeta = if z { 1 } else { -1 };
        prop_assert!(j_neu(l, ls, v, u).unwrap() >= l);
        prop_assert!(j_sel(l, Type::Rare, ls, Type::Common, zeta, v, u, &spec).unwrap() >= l);
    }

    #[test]
    fn flat_sigma_parent_probability_is_w(w in 0.0f64..=1.0, z in prop::bool::ANY) {
        let zeta = if z { 1 } else { -1 };
        let p = parent_rare_probability(w, EventKind::Selective, zeta, &SelectionSpec::neutral());
        prop_assert!((p - w).abs() < 1e-15);
    }

    #[test]
    fn field_values_are_signs(seed in any::<u64>(), ell in 0.2f64..3.0, cells in 8usize..40) {
        let grid = TorusGrid::new(6.0, cells, 1).unwrap();
        let env = Environment::new(EnvSpec::gaussian(ell, 1.0), Some(grid)).unwrap();
        let mut rng = rng_from_seed(seed);
        let s = env.initial(&mut rng);
        let s = env.advance(&s, 3.0, &mut rng).unwrap();
        prop_assert_eq!(s.values().len(), cells);
        prop_assert!(s.values().iter().all(|&v| v == 1 || v == -1));
    }

    #[test]
    fn config_hash_tracks_content(seed in any::<u64>(), reps in 1usize..1000) {
        let text = format!("model = \"feller\"\nreplicates = {reps}\nhorizon = 1.0\nbase_seed = {seed}\n[params]\na = 0.5\nx0 = 1.0\n");
        let c = RunConfig::from_toml(&text).unwrap();
        let back = RunConfig::from_toml(&c.canonical()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.base_seed = seed.wrapping_add(1);
        prop_assert_ne!(d.hash(), c.hash());
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
