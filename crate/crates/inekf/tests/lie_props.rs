//! Bulk randomized checks of the state-group algebra against independent
//! dense linear-algebra oracles.

mod common;

use common::{expm, max_abs, rand_group, rand_rotvec, rand_tangent, rand_vec3, rng};
use inekf::lie::{
    group_exp, group_log, skew, so3_exp, so3_log, tangent, vee, wedge, Vec15,
};
use inekf::GroupState;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn group_exp_matches_dense_matrix_exponential() {
    let mut rng = rng(0x11CE);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        // Any direction, total norm up to 5; the closed form must hold far
        // beyond the small errors the filter feeds it.
        let mut zeta = Vec15::zeros();
        for i in 0..15 {
            zeta[i] = rng.gen_range(-1.0..=1.0);
        }
        let norm = rng.gen_range(0.0..=5.0);
        if zeta.norm() > 0.0 {
            zeta *= norm / zeta.norm();
        }
        let dense = expm(&wedge(&zeta));
        let closed = group_exp(&zeta).embed();
        worst = worst.max(max_abs(&(dense - closed)));
    }
    assert!(worst < 1e-9, "worst deviation {worst:.3e}");
}

#[test]
fn so3_exp_matches_dense_matrix_exponential() {
    let mut rng = rng(0x503E);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let phi = rand_rotvec(&mut rng, 0.0, std::f64::consts::PI - 0.01);
        let diff = expm(&skew(&phi)) - so3_exp(&phi);
        worst = worst.max(max_abs(&diff));
    }
    assert!(worst < 1e-10, "worst deviation {worst:.3e}");
}

#[test]
fn so3_exp_log_roundtrip_spans_the_angle_range() {
    let mut rng = rng(0x1069);
    let mut worst = 0.0_f64;
    for k in 0..1000 {
        // Sweep from well below the small-angle switch up to almost pi.
        let angle = match k % 4 {
            0 => rng.gen_range(0.0..=1e-8),
            1 => rng.gen_range(1e-8..=1e-4),
            2 => rng.gen_range(1e-4..=1.0),
            _ => rng.gen_range(1.0..=std::f64::consts::PI - 0.02),
        };
        let phi = rand_rotvec(&mut rng, angle, angle);
        let back = so3_log(&so3_exp(&phi)).expect("angle below pi");
        worst = worst.max((back - phi).norm());
    }
    assert!(worst < 1e-9, "worst roundtrip error {worst:.3e}");
}

#[test]
fn group_exp_log_roundtrip() {
    let mut rng = rng(0x6709);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let zeta = rand_tangent(&mut rng, 2.8, 2.0);
        let back = group_log(&group_exp(&zeta)).expect("angles below pi");
        worst = worst.max((back - zeta).norm());
    }
    assert!(worst < 1e-9, "worst roundtrip error {worst:.3e}");
}

#[test]
fn log_angle_agrees_with_trace_formula() {
    let mut rng = rng(0x7274);
    for _ in 0..500 {
        let phi = rand_rotvec(&mut rng, 1e-3, std::f64::consts::PI - 0.02);
        let r = so3_exp(&phi);
        let from_log = so3_log(&r).expect("angle below pi").norm();
        let from_trace = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        assert!(
            (from_log - from_trace).abs() < 1e-10,
            "angle mismatch: log {from_log}, trace {from_trace}"
        );
    }
}

#[test]
fn adjoint_matches_conjugation_in_the_embedding() {
    let mut rng = rng(0xAD10);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let x = rand_group(&mut rng, 2.0);
        let zeta = rand_tangent(&mut rng, 3.0, 2.0);
        let lhs = wedge(&(x.adjoint() * zeta));
        let rhs = x.embed() * wedge(&zeta) * x.inverse().embed();
        worst = worst.max(max_abs(&(lhs - rhs)));
    }
    assert!(worst < 1e-10, "worst deviation {worst:.3e}");
}

#[test]
fn adjoint_is_a_group_homomorphism() {
    let mut rng = rng(0xAD20);
    let mut worst = 0.0_f64;
    for _ in 0..500 {
        let a = rand_group(&mut rng, 1.5);
        let b = rand_group(&mut rng, 1.5);
        let diff = a.compose(&b).adjoint() - a.adjoint() * b.adjoint();
        worst = worst.max(max_abs(&diff));
    }
    assert!(worst < 1e-9, "worst deviation {worst:.3e}");
}

#[test]
fn composition_stays_on_the_group() {
    let mut rng = rng(0xC105);
    for _ in 0..500 {
        let c = rand_group(&mut rng, 2.0).compose(&rand_group(&mut rng, 2.0));
        assert!(c.is_valid(1e-9));
        let e = c.embed();
        // Structural rows of the embedding: unit diagonal, zero elsewhere.
        for &row in &[3, 4, 8] {
            for col in 0..9 {
                let expect = if row == col { 1.0 } else { 0.0 };
                assert_eq!(e[(row, col)], expect, "entry ({row}, {col})");
            }
        }
        // Pose and placement blocks never mix.
        for row in 0..5 {
            for col in 5..9 {
                assert_eq!(e[(row, col)], 0.0, "entry ({row}, {col})");
            }
        }
        let back = GroupState::from_embedding(&e);
        assert_eq!(back, c);
    }
}

#[test]
fn inverse_cancels_composition() {
    let mut rng = rng(0x1448);
    for _ in 0..500 {
        let x = rand_group(&mut rng, 2.0);
        let id = x.compose(&x.inverse());
        assert!(max_abs(&(id.embed() - GroupState::identity().embed())) < 1e-12);
    }
}

#[test]
fn vee_inverts_skew() {
    let mut rng = rng(0x5EE0);
    for _ in 0..100 {
        let v = rand_vec3(&mut rng, 10.0);
        assert_eq!(vee(&skew(&v)), v);
    }
}

#[test]
fn wedge_blocks_match_tangent_layout() {
    let mut rng = rng(0x3E06);
    let rot = rand_vec3(&mut rng, 1.0);
    let vel = rand_vec3(&mut rng, 1.0);
    let pos = rand_vec3(&mut rng, 1.0);
    let rot_off = rand_vec3(&mut rng, 1.0);
    let pos_off = rand_vec3(&mut rng, 1.0);
    let m = wedge(&tangent(&rot, &vel, &pos, &rot_off, &pos_off));
    assert_eq!(m.fixed_view::<3, 3>(0, 0), skew(&rot));
    assert_eq!(m.fixed_view::<3, 1>(0, 3).into_owned(), vel);
    assert_eq!(m.fixed_view::<3, 1>(0, 4).into_owned(), pos);
    assert_eq!(m.fixed_view::<3, 3>(5, 5), skew(&rot_off));
    assert_eq!(m.fixed_view::<3, 1>(5, 8).into_owned(), pos_off);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_compose_is_associative(
        a in proptest::array::uniform15(-1.0_f64..1.0),
        b in proptest::array::uniform15(-1.0_f64..1.0),
        c in proptest::array::uniform15(-1.0_f64..1.0),
    ) {
        let (a, b, c) = (
            group_exp(&Vec15::from_column_slice(&a)),
            group_exp(&Vec15::from_column_slice(&b)),
            group_exp(&Vec15::from_column_slice(&c)),
        );
        let lhs = a.compose(&b).compose(&c);
        let rhs = a.compose(&b.compose(&c));
        prop_assert!(max_abs(&(lhs.embed() - rhs.embed())) < 1e-12);
    }

    #[test]
    fn prop_group_log_inverts_group_exp(
        z in proptest::array::uniform15(-0.9_f64..0.9),
    ) {
        let zeta = Vec15::from_column_slice(&z);
        let back = group_log(&group_exp(&zeta)).unwrap();
        prop_assert!((back - zeta).norm() < 1e-10);
    }
}
