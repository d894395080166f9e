mod common;

use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensegrity::sizing::*;
use tensegrity::statics::{prestress_modes, solve_force_densities, EquilibriumSolution, LoadCase};
use tensegrity::topology::*;

fn materials() -> [Material; 2] {
    [Material::aluminum(), Material::uhmwpe()]
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

#[test]
fn member_masses_match_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let q = log_uniform(&mut rng, 1e-3, 1e9);
        let l = log_uniform(&mut rng, 1e-2, 1e1);
        for m in materials() {
            assert!(rel(string_mass(q, l, &m).unwrap(), string_mass_oracle(q, l, &m)) < 1e-12);
            let (y, b) = bar_mass_oracle(q, l, &m);
            let (mass, mode) = bar_mass(q, l, &m).unwrap();
            assert!(rel(mass, y.max(b)) < 1e-12);
            let expected = if b > y {
                FailureMode::Buckling
            } else {
                FailureMode::Yield
            };
            if rel(y, b) > 1e-12 {
                assert_eq!(mode, expected, "q = {q}, l = {l}");
            }
        }
    }
}

#[test]
fn governing_mode_is_continuous_at_the_crossover() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let l = log_uniform(&mut rng, 1e-2, 1e1);
        for m in materials() {
            let star = crossover_force_density(l, &m);
            let (y, b) = bar_mass_oracle(star, l, &m);
            assert!(rel(y, b) < 1e-9);
            assert_eq!(
                bar_mass(star * 0.999, l, &m).unwrap().1,
                FailureMode::Buckling
            );
            assert_eq!(bar_mass(star * 1.001, l, &m).unwrap().1, FailureMode::Yield);
        }
    }
}

#[test]
fn aluminum_crossover_at_one_metre() {
    let star = crossover_force_density(1.0, &Material::aluminum());
    let expected = 4.0 * 110e6f64.powi(2) / (BUCKLING_CONSTANT * 60e9);
    assert!(rel(star, expected) < 1e-15);
}

#[test]
fn zero_prestress_weighs_nothing() {
    let t = build_prism(3, 1.0, 1.0, prism_equilibrium_twist(3)).unwrap();
    let s = solve_force_densities(&t, &t.positions(), &LoadCase::zeros(6)).unwrap();
    let r = total_min_mass(&t, &t.positions(), &s, &MaterialLibrary::builtin()).unwrap();
    assert_eq!(r.total, 0.0);
}

#[test]
fn unknown_material_is_a_config_error() {
    let mut t = build_prism(3, 1.0, 1.0, prism_equilibrium_twist(3)).unwrap();
    t.members[0].material = "unobtainium".into();
    let s = tensegrity::statics::EquilibriumSolution::zeros(&t);
    assert!(matches!(
        total_min_mass(&t, &t.positions(), &s, &MaterialLibrary::builtin()),
        Err(tensegrity::Error::Config(_))
    ));
}

#[test]
fn tbar_beats_continuum_bar_when_buckling_governs() {
    let al = Material::aluminum();
    let c = compare_to_continuum_bar(
        100.0,
        1.0,
        &al,
        &Material::uhmwpe(),
        BarSystem::TBar,
        &aspect_sweep(0.02, 0.5, 25),
    )
    .unwrap();
    assert_eq!(c.regime, FailureMode::Buckling);
    let (y, b) = bar_mass_oracle(100.0, 1.0, &al);
    assert!(b > y);
    assert!(rel(c.continuum_mass, b) < 1e-12);
    assert!(c.ratio.unwrap() < 1.0);
    assert!(!c.limit_guard);
}

#[test]
fn yield_regime_loses_the_advantage() {
    let c = compare_to_continuum_bar(
        1e7,
        1.0,
        &Material::aluminum(),
        &Material::uhmwpe(),
        BarSystem::TBar,
        &aspect_sweep(0.02, 0.5, 25),
    )
    .unwrap();
    assert_eq!(c.regime, FailureMode::Yield);
    assert!(c.ratio.unwrap() >= 1.0);
}

#[test]
fn unit_prestress_total_matches_summation() {
    let t = build_prism(3, 0.4, 0.8, prism_equilibrium_twist(3)).unwrap();
    let x = t.positions();
    let mode = prestress_modes(&t, &x).unwrap().positive_mode.unwrap();
    let alpha = t.string_count();
    let peak = mode.iter().take(alpha).cloned().fold(0.0, f64::max);
    let s = EquilibriumSolution {
        gamma: mode.iter().take(alpha).map(|g| g / peak).collect(),
        lambda: mode.iter().skip(alpha).map(|l| l / peak).collect(),
        ..EquilibriumSolution::zeros(&t)
    };
    let report = total_min_mass(&t, &x, &s, &MaterialLibrary::builtin()).unwrap();
    let (mut strings, mut bars) = (0.0, 0.0);
    for (k, &m) in t.string_indices().iter().enumerate() {
        strings += string_mass_oracle(
            s.gamma[k],
            t.member_vector(&x, m).norm(),
            &Material::uhmwpe(),
        );
    }
    for (k, &m) in t.bar_indices().iter().enumerate() {
        let (y, b) = bar_mass_oracle(
            s.lambda[k],
            t.member_vector(&x, m).norm(),
            &Material::aluminum(),
        );
        bars += y.max(b);
    }
    assert!(rel(report.string_total, strings) < 1e-12);
    assert!(rel(report.bar_total, bars) < 1e-12);
    assert!(rel(report.total, strings + bars) < 1e-12);
}

#[test]
fn rig_uses_the_default_material_map() {
    let rig = build_rig(&RigParams::default()).unwrap();
    let x = rig.positions();
    let mut w = LoadCase::zeros(rig.node_count());
    for &i in &rig.metadata.groups["ring_top_nodes"] {
        w.set(i, Vector3::new(0.0, 0.0, -10.0));
    }
    let s = solve_force_densities(&rig, &x, &w).unwrap();
    let report = total_min_mass(&rig, &x, &s, &MaterialLibrary::builtin()).unwrap();
    for m in &report.members {
        let expected = match m.kind {
            MemberKind::String => "uhmwpe",
            MemberKind::Bar => "aluminum",
        };
        assert_eq!(m.material, expected);
    }
    assert!(report.total > 0.0);
}

#[test]
fn zero_load_uses_probe_guard() {
    let c = compare_to_continuum_bar(
        0.0,
        1.0,
        &Material::aluminum(),
        &Material::uhmwpe(),
        BarSystem::DBar,
        &[0.1, 0.2],
    )
    .unwrap();
    assert!(c.limit_guard);
    assert!(c.ratio.unwrap().is_finite());
}

#[test]
fn material_overlay_json() {
    let lib = MaterialLibrary::from_json_str(
        r#"{"materials": [{"name": "steel", "density": 7850, "yield_strength": 250e6, "youngs_modulus": 200e9}]}"#,
    )
    .unwrap();
    assert_eq!(lib.get("steel").unwrap().density, 7850.0);
    assert!(MaterialLibrary::from_json_str(
        r#"{"materials": [{"name": "bad", "density": -1, "yield_strength": 1, "youngs_modulus": 1}]}"#
    )
    .is_err());
}

proptest! {
    #[test]
    fn bar_mass_is_monotone_and_at_least_yield(q in 0.0f64..1e8, dq in 0.0f64..1e6, l in 1e-2f64..10.0) {
        for m in materials() {
            let (a, _) = bar_mass(q, l, &m).unwrap();
            let (b, _) = bar_mass(q + dq, l, &m).unwrap();
            prop_assert!(b >= a);
            prop_assert!(a >= bar_mass_oracle(q, l, &m).0 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn string_mass_is_linear_in_force_density(q in 0.0f64..1e8, k in 0.0f64..100.0, l in 1e-2f64..10.0) {
        let m = Material::uhmwpe();
        let a = string_mass(q, l, &m).unwrap();
        let b = string_mass(k * q, l, &m).unwrap();
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn total_mass_ignores_member_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_rig(&mut rng);
        let mut w = LoadCase::zeros(t.node_count());
        for &i in &t.metadata.groups["ring_top_nodes"] {
            w.set(i, Vector3::new(0.0, 0.0, -rng.random_range(1.0..50.0)));
        }
        let Ok(s) = solve_force_densities(&t, &t.positions(), &w) else {
            return Ok(());
        };
        // Sizing applies to compressed bars only.
        prop_assume!(s.lambda.iter().all(|l| *l >= 0.0));
        let lib = MaterialLibrary::builtin();
        let base = total_min_mass(&t, &t.positions(), &s, &lib).unwrap();

        // Reverse the member list (and the density vectors with it).
        let mut r = t.clone();
        r.members.reverse();
        r.metadata.groups.clear();
        let mut s2 = s.clone();
        s2.gamma.reverse();
        s2.lambda.reverse();
        let rev = total_min_mass(&r, &r.positions(), &s2, &lib).unwrap();
        prop_assert_eq!(base.total, rev.total);
        prop_assert_eq!(base.string_total, rev.string_total);
        prop_assert_eq!(base.bar_total, rev.bar_total);
    }
}
