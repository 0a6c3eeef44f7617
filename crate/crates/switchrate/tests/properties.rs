//! Property tests for the module invariants.

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use switchrate::instanton::{saddle_jacobian, shoot_instanton, ShootOptions};
use switchrate::keldysh::{
    drift_diffusion, lindbladian_density, switching_rates, tr_parametrization, PhaseSpaceState,
};
use switchrate::lindblad::{build_lindbladian, dense_spectrum, steady_state};
use switchrate::meanfield::{fixed_points_general, fixed_points_kerr, residual};
use switchrate::model::{derive_coeffs, dephased_cat, dissipative_cat, Imperfection, SystemParams};
use switchrate::sweep::{run_sweep, set_alpha_ss_sq, NFock, Outputs, SweepSpec, SweepVariable, CSV_HEADER};

fn complex(r: f64) -> impl Strategy<Value = C64> {
    (-r..r, -r..r).prop_map(|(a, b)| C64::new(a, b))
}

prop_compose! {
    fn htrs()(
        delta in -1.0..1.0f64,
        kerr in -0.5..0.5f64,
        kappa1 in 0.05..1.0f64,
        kappa2 in 0.2..1.5f64,
        lambda1 in complex(1.0),
        lambda2 in complex(1.5),
        lambda3 in complex(0.4),
    ) -> SystemParams {
        SystemParams { delta, kerr, kappa1, kappa2, lambda1, lambda2, lambda3, ..Default::default() }
    }
}

prop_compose! {
    fn any_params()(base in htrs(), kappa_phi in 0.0..0.5f64) -> SystemParams {
        SystemParams { kappa_phi, ..base }
    }
}

prop_compose! {
    fn kerr_params()(
        delta in 1.0..6.0f64,
        kerr in 0.02..0.5f64,
        kappa1 in 0.2..2.0f64,
        modulus in 0.5..8.0f64,
        phase in 0.0..6.28f64,
    ) -> SystemParams {
        SystemParams { delta, kerr, kappa1, lambda1: C64::from_polar(modulus, phase), ..Default::default() }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha0_round_trip(p in htrs(), a in complex(5.0)) {
        let p = SystemParams { alpha0_sq: Some(a), lambda2: C64::new(0.0, 0.0), ..p };
        let back = p.to_lambda2_form().to_alpha0_form().unwrap();
        let got = back.alpha0_sq.unwrap();
        prop_assert!((got - a).norm() <= 1e-14 * (1.0 + a.norm()));
        prop_assert_eq!(back.lambda2, C64::new(0.0, 0.0));
    }

    #[test]
    fn derive_coeffs_is_deterministic(p in any_params()) {
        prop_assert_eq!(derive_coeffs(&p), derive_coeffs(&p.clone()));
    }

    #[test]
    fn fixed_points_are_roots(p in any_params()) {
        let set = fixed_points_general(&p).unwrap();
        for q in &set.points {
            prop_assert!(residual(&p, q.z) < 1e-10, "{} at {}", residual(&p, q.z), q.z);
        }
        let n_stable = set.points.iter().filter(|q| q.is_stable()).count();
        prop_assert!(set.diagnostic.is_some() || (n_stable <= 2 && set.points.len() <= 3));
    }

    #[test]
    fn kerr_closed_form_is_contained(p in kerr_params()) {
        let general = fixed_points_general(&p).unwrap();
        for q in fixed_points_kerr(&p).unwrap().points {
            let d = general.points.iter().map(|g| (g.z - q.z).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn density_vanishes_without_noise(p in any_params(), b in complex(3.0), bb in complex(3.0)) {
        let s = PhaseSpaceState { b, b_bar: bb, ..Default::default() };
        prop_assert!(lindbladian_density(&p, &s).norm() < 1e-12);
    }

    #[test]
    fn density_vanishes_on_tr_slice(p in htrs(), b in complex(3.0), bb in complex(3.0)) {
        if let Ok((b_q, b_q_bar)) = tr_parametrization(&p, [b, bb]) {
            let s = PhaseSpaceState { b, b_bar: bb, b_q, b_q_bar };
            let dd = drift_diffusion(&p, [b, bb]);
            let m = s.momenta();
            let scale = 1.0 + (m[0] * dd.a[0]).norm() + (m[1] * dd.a[1]).norm();
            prop_assert!(lindbladian_density(&p, &s).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn jacobian_spectrum_is_paired(p in any_params()) {
        for fp in fixed_points_general(&p).unwrap().points {
            let j = saddle_jacobian(&p, &PhaseSpaceState::noise_free(fp.z)).unwrap();
            prop_assert!(j.pairing_residual < 1e-10, "{}", j.pairing_residual);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lindbladian_structure(p in any_params(), seed in 0u64..1000) {
        let n = 9;
        let op = build_lindbladian(&p, n).unwrap();
        let norm = op.matrix.frobenius_norm();
        prop_assert!(op.trace_residual() < 1e-10);
        for l in dense_spectrum(&op).unwrap() {
            prop_assert!(l.re <= 1e-8 * norm);
        }
        let rho = steady_state(&op).unwrap();
        let v: Vec<C64> = (0..n * n).map(|k| rho[(k % n, k / n)]).collect();
        let r: f64 = op.apply(&v).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(r < 1e-8 * norm);

        // Hermitian input stays Hermitian
        let mut x = vec![C64::new(0.0, 0.0); n * n];
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for r in 0..n {
            for c in 0..=r {
                let z = if r == c { C64::new(next(), 0.0) } else { C64::new(next(), next()) };
                x[r + n * c] = z;
                x[c + n * r] = z.conj();
            }
        }
        let y = op.apply(&x);
        let mut herm: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                herm = herm.max((y[r + n * c] - y[c + n * r].conj()).norm());
            }
        }
        prop_assert!(herm < 1e-10 * (1.0 + norm));
    }
}

#[test]
fn cat_asymmetry_shrinks_with_drive() {
    let mut prev = f64::INFINITY;
    for a2 in [4.0f64, 16.0, 64.0] {
        let mut p = dissipative_cat(a2.sqrt(), Imperfection::Lambda3(C64::new(0.1, 0.05)));
        p.delta = 0.05;
        let r = switching_rates(&p, None).unwrap();
        let ratio = (r.is_12 - r.is_21).abs() / r.is_12.abs().max(r.is_21.abs());
        assert!(ratio < prev, "{ratio} after {prev}");
        prev = ratio;
    }
}

#[test]
fn dephasing_pushes_exponent_from_cat_law() {
    let deviation = |kappa_phi: f64| {
        let p = set_alpha_ss_sq(&dephased_cat(4.0, kappa_phi, 0.0), 4.0).unwrap();
        let set = fixed_points_general(&p).unwrap();
        let a1 = set.stable()[0].z;
        let shot = shoot_instanton(
            &p,
            a1,
            &ShootOptions {
                target: Some(C64::new(0.0, 0.0)),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(shot.trajectory.max_density_drift < 1e-6);
        (shot.action + 2.0 * a1.norm_sqr()).abs()
    };
    let (low, high) = (deviation(0.1), deviation(0.4));
    assert!(high > low, "{high} vs {low}");
}

#[test]
fn sweep_output_is_reproducible() {
    let spec = SweepSpec {
        label: "repro".into(),
        variable: SweepVariable::AlphaSsSq,
        grid: vec![1.0, 1.5, 2.0],
        fixed: dissipative_cat(1.5, Imperfection::Kerr(0.1)),
        outputs: Outputs {
            analytic_rate: true,
            numeric_gap: true,
            instanton_action: false,
        },
        n_fock: NFock::Fixed(24),
        prefactor: None,
        seed: 11,
    };
    let render = || {
        run_sweep(&spec)
            .unwrap()
            .iter()
            .map(|r| r.row.record(&r.params).join(","))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let first = render();
    assert_eq!(first, render());
    let rows = run_sweep(&spec).unwrap();
    for r in &rows {
        assert_eq!(r.row.record(&r.params).len(), CSV_HEADER.len());
        assert_eq!(r.row.params_hash, r.params.provenance_hash(Some(24)));
        assert_ne!(r.row.params_hash, r.params.provenance_hash(Some(25)));
    }
}
