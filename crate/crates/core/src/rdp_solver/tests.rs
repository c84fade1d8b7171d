use super::*;
use crate::source_model::build_joint;
use approx::assert_relative_eq;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn spec(rho: f64, t: usize) -> SourceSpec<f64> {
    SourceSpec::new(rho, 1.0, t).unwrap()
}

fn rates(r: &[f64]) -> RateProfile<f64> {
    RateProfile::finite(r).unwrap()
}

fn horizon(kind: PlfKind, r: &[f64], rho: f64) -> Vec<FrameSolution<f64>> {
    solve_horizon(kind, &rates(r), &spec(rho, r.len()), &SolverOptions::default())
        .unwrap()
        .1
}

fn d(kind: PlfKind, r: &[f64], rho: f64) -> f64 {
    horizon(kind, r, rho).last().unwrap().distortion
}

#[test]
fn frame1_closed_form() {
    let s = spec(0.5, 1);
    let inf = solve_frame1(Rate::Infinite, &s).unwrap();
    assert_eq!(inf.coeffs.source_coeff, 1.0);
    assert_eq!(inf.distortion, 0.0);
    let zero = solve_frame1(Rate::Finite(0.0), &s).unwrap();
    assert_eq!(zero.coeffs.source_coeff, 0.0);
    assert_eq!(zero.distortion, 2.0);
    assert_eq!(zero.coeffs.noise_var, 1.0);
    let small = solve_frame1(Rate::Finite(0.01), &s).unwrap();
    // sqrt(1 - 2^{-0.02}) = sqrt(0.01376729...) = 0.1173341...
    assert_relative_eq!(small.coeffs.source_coeff, 0.1173341, epsilon = 1e-7);
    assert_relative_eq!(small.distortion, 1.7653318, epsilon = 1e-6);
    // First-order approximation 2(1 - sqrt(2 eps ln 2)) is off by O(eps).
    let approx = 2.0 * (1.0 - (2.0 * 0.01 * LN2).sqrt());
    assert_relative_eq!(approx, 1.7645180, epsilon = 1e-6);
    assert!((small.distortion - approx).abs() < 0.01);
}

#[test]
fn frame1_is_shared_by_all_kinds() {
    for kind in PlfKind::ALL {
        let sol = solve_frame(
            kind,
            1,
            &rates(&[0.3, 1.0]),
            &ReconPolicy::default(),
            &spec(0.9, 2),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.kind, kind);
        assert_relative_eq!(
            sol.distortion,
            2.0 * (1.0 - (1.0 - 2f64.powf(-0.6)).sqrt()),
            epsilon = 1e-12
        );
        assert!(sol.perception_residual < 1e-12);
    }
}

#[test]
fn unconstrained_sa_is_perfect() {
    let p = RateProfile::new(vec![Rate::Infinite, Rate::Infinite]).unwrap();
    let (_, sols) = solve_horizon(PlfKind::Sa, &p, &spec(0.9, 2), &SolverOptions::default()).unwrap();
    let f2 = &sols[1];
    assert!(f2.coeffs.past_coeffs[0].abs() < 1e-9);
    assert_relative_eq!(f2.coeffs.source_coeff, 1.0, epsilon = 1e-9);
    assert!(f2.distortion < 1e-9);
}

#[test]
fn jd_copies_the_first_frame_at_unit_correlation() {
    let sols = horizon(PlfKind::Jd, &[1e-6, 1.0], 1.0);
    assert_relative_eq!(sols[1].coeffs.past_coeffs[0], 1.0, epsilon = 1e-6);
    assert!(sols[1].coeffs.source_coeff.abs() < 1e-6);
    assert_relative_eq!(sols[1].distortion, sols[0].distortion, epsilon = 1e-6);
}

#[test]
fn sa_low_rate_frame2() {
    // rho = 1: w2 = sqrt(1 - 2^{-2R2}), D2 = 2 (1 - nu^2)(1 - w2) exactly.
    let eps = 1e-4;
    let got = d(PlfKind::Sa, &[eps, 1.0], 1.0);
    let nu2 = 1.0 - 2f64.powf(-2.0 * eps);
    assert_relative_eq!(got, 2.0 * (1.0 - nu2) * (1.0 - 0.75f64.sqrt()), epsilon = 1e-9);
    let leading = 2.0 * (1.0 - 0.75f64.sqrt());
    assert_relative_eq!(leading, 0.267949, epsilon = 1e-6);
    assert!((got - leading).abs() <= 5.0 * eps.sqrt());
}

#[test]
fn fmd_low_rate_frame2() {
    let eps: f64 = 1e-4;
    let got = d(PlfKind::Fmd, &[eps, 1.0], 1.0);
    let table = 2.0 * (1.0 - (1.0 - 0.25 + 2.0 * eps * LN2).sqrt());
    assert!((got - table).abs() <= 5.0 * eps, "{got} vs {table}");
}

#[test]
fn horizon_at_infinite_rate_is_lossless() {
    for kind in PlfKind::ALL {
        let p = RateProfile::new(vec![Rate::Infinite; 3]).unwrap();
        let (_, sols) = solve_horizon(kind, &p, &spec(0.5, 3), &SolverOptions::default()).unwrap();
        for s in sols {
            assert!(s.distortion < 1e-9, "{kind}: {}", s.distortion);
        }
    }
}

#[test]
fn jd_error_permanence() {
    let sols = horizon(PlfKind::Jd, &[0.1, 1.0, 1.0], 1.0);
    let d1 = sols[0].distortion;
    for s in &sols[1..] {
        assert!((s.distortion - d1).abs() <= 5e-2);
    }
}

#[test]
fn sa_high_rate_recovers_third_frame() {
    let sols = horizon(PlfKind::Sa, &[20.0, 1e-4, 20.0], 0.9);
    assert!(sols[2].distortion <= 1e-3, "{}", sols[2].distortion);
}

#[test]
fn sa_and_jd_agree_at_high_first_rate() {
    for rho in [0.3, 0.9] {
        let sa = &horizon(PlfKind::Sa, &[20.0, 1e-3], rho)[1];
        let jd = &horizon(PlfKind::Jd, &[20.0, 1e-3], rho)[1];
        let gap = (sa.coeffs.weights() - jd.coeffs.weights()).amax();
        assert!(gap <= 1e-4, "rho {rho}: {gap}");
    }
}

#[test]
fn high_rate_frame2_closed_form() {
    // D2 = 2 (1 - rho^2)(1 - sqrt(1 - 2^{-2 eps})) for SA and JD with R1 infinite.
    let p = RateProfile::new(vec![Rate::Infinite, Rate::Finite(0.01)]).unwrap();
    let b = (1.0 - 2f64.powf(-0.02)).sqrt();
    for kind in [PlfKind::Sa, PlfKind::Jd] {
        let (_, sols) = solve_horizon(kind, &p, &spec(0.8, 2), &SolverOptions::default()).unwrap();
        assert_relative_eq!(sols[1].distortion, 2.0 * 0.36 * (1.0 - b), epsilon = 1e-10);
    }
}

#[test]
fn jd_frame3_matches_reference() {
    // Reference from an independent SQP solve of the same greedy programs.
    let sols = horizon(PlfKind::Jd, &[30.0, 1e-4, 30.0], 0.9);
    assert_relative_eq!(sols[2].distortion, 0.172954, epsilon = 1e-5);
}

#[test]
fn frame4_reference_values() {
    let r = [20.0, 1e-4, 1e-4, 1e-4];
    assert_relative_eq!(d(PlfKind::Sa, &r, 0.9), 0.925974, epsilon = 1e-5);
    assert_relative_eq!(d(PlfKind::Jd, &r, 0.9), 0.922282, epsilon = 1e-5);
    assert_relative_eq!(d(PlfKind::Fmd, &r, 0.9), 0.541834, epsilon = 1e-5);
}

#[test]
fn fmd_frame3_high_rate_reaches_two_step_floor() {
    // X̂_1 and X̂_2 nearly coincide; only the distortion is well conditioned.
    let got = d(PlfKind::Fmd, &[30.0, 1e-6, 1e-6], 0.9);
    assert!(got <= 0.3799992 + 1e-6, "{got}");
    assert!((got - 2.0 * (1.0 - 0.81)).abs() <= 1e-3);
}

#[test]
fn statuses() {
    let sols = horizon(PlfKind::Sa, &[0.5, 1.0], 0.9);
    assert_eq!(sols[0].solver_status, SolverStatus::Analytic);
    assert_eq!(sols[1].solver_status, SolverStatus::BoundaryLagrange);
    assert_eq!(SolverStatus::BoundaryLagrange.to_string(), "boundary-lagrange");
}

#[test]
fn rates_are_floored_after_frame1() {
    let sols = horizon(PlfKind::Sa, &[0.5, 0.0], 0.9);
    assert!(sols[1].rate_used.bits() <= RATE_FLOOR_BITS + 1e-9);
    assert!(sols[1].distortion.is_finite());
}

#[test]
fn grid_fallback_agrees_with_lagrange() {
    let opts = SolverOptions::default();
    for kind in PlfKind::ALL {
        for (rho, r) in [(0.9, [0.1, 1.0, 0.5]), (0.6, [1.0, 0.3, 2.0]), (1.0, [0.2, 0.5, 1.0])] {
            let s = spec(rho, 3);
            let p = rates(&r);
            let (policy, sols) = solve_horizon(kind, &p, &s, &opts).unwrap();
            for j in 2..=3 {
                let prog = FrameProgram::build(kind, j, &p, &policy, &s).unwrap();
                let g = grid_polish(&prog, &opts).unwrap();
                assert_eq!(g.solver_status, SolverStatus::GridPolish);
                assert!(
                    (g.distortion - sols[j - 1].distortion).abs() <= 1e-6,
                    "{kind} rho={rho} j={j}: grid {} vs {}",
                    g.distortion,
                    sols[j - 1].distortion
                );
            }
        }
    }
}

#[test]
fn inconsistent_jd_prefix_is_infeasible() {
    let s = spec(0.9, 3);
    let prefix = ReconPolicy::new(vec![
        FrameCoeffs::new(1, vec![], 1.0, 0.0).unwrap(),
        FrameCoeffs::new(2, vec![1.0], 0.0, 0.0).unwrap(),
    ])
    .unwrap();
    let err = solve_frame(
        PlfKind::Jd,
        3,
        &rates(&[1.0, 1.0, 1.0]),
        &prefix,
        &s,
        &SolverOptions::default(),
    )
    .unwrap_err();
    match err {
        RdpError::Infeasible { constraint } => assert!(constraint.contains("covariance match")),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn negative_pinned_noise_is_infeasible() {
    let s = spec(0.9, 2);
    let prefix = ReconPolicy::new(vec![FrameCoeffs::new(1, vec![], 0.1, 0.0).unwrap()]).unwrap();
    let err = solve_frame(
        PlfKind::Jd,
        2,
        &rates(&[1.0, 1.0]),
        &prefix,
        &s,
        &SolverOptions::default(),
    )
    .unwrap_err();
    match err {
        RdpError::Infeasible { constraint } => assert!(constraint.contains("variance match")),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn horizon_errors_carry_the_frame() {
    let err = solve_horizon(PlfKind::Sa, &rates(&[1.0]), &spec(0.5, 2), &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, RdpError::Shape(_)));
    assert!(RdpError::Shape("x".into())
        .at_frame(3)
        .to_string()
        .starts_with("frame 3"));
}

#[test]
fn oracle_matches_on_fixed_instances() {
    for (kind, r, rho) in [
        (PlfKind::Sa, [0.1, 0.5], 1.0),
        (PlfKind::Fmd, [0.3, 0.8], 0.7),
        (PlfKind::Jd, [1.0, 0.4], 0.5),
    ] {
        let sols = horizon(kind, &r, rho);
        let o = brute_force_frame(
            kind,
            2,
            &rates(&r),
            &ReconPolicy::new(vec![sols[0].coeffs.clone()]).unwrap(),
            &spec(rho, 2),
            0.005,
        )
        .unwrap();
        assert!((o.distortion - sols[1].distortion).abs() <= 2.0 * 0.005, "{kind}");
        assert!(
            o.distortion >= sols[1].distortion - 1e-9,
            "{kind}: oracle beat the solver"
        );
    }
}

#[test]
fn oracle_is_near_exact_when_unconstrained() {
    let p = RateProfile::new(vec![Rate::Infinite, Rate::Infinite]).unwrap();
    let s = spec(0.9, 2);
    let f1 = solve_frame1(Rate::Infinite, &s).unwrap();
    let o = brute_force_frame(
        PlfKind::Sa,
        2,
        &p,
        &ReconPolicy::new(vec![f1.coeffs]).unwrap(),
        &s,
        0.01,
    )
    .unwrap();
    assert!(o.distortion <= 0.02);
}

#[test]
fn oracle_sees_flat_jd_curve() {
    let s = spec(1.0, 2);
    let f1 = solve_frame1(Rate::Finite(0.1), &s).unwrap();
    let prefix = ReconPolicy::new(vec![f1.coeffs.clone()]).unwrap();
    let ds: Vec<f64> = [0.1, 1.0, 5.0]
        .iter()
        .map(|&r2| {
            brute_force_frame(PlfKind::Jd, 2, &rates(&[0.1, r2]), &prefix, &s, 0.01)
                .unwrap()
                .distortion
        })
        .collect();
    for x in &ds {
        assert!((x - ds[0]).abs() <= 0.03);
        assert!((x - f1.distortion).abs() <= 0.03);
    }
}

#[test]
fn oracle_rejects_deep_frames() {
    let s = spec(0.5, 4);
    let (policy, _) = solve_horizon(PlfKind::Sa, &rates(&[1.0; 4]), &s, &SolverOptions::default()).unwrap();
    assert!(brute_force_frame(PlfKind::Sa, 4, &rates(&[1.0; 4]), &policy, &s, 0.01).is_err());
}

#[test]
fn single_precision_solve() {
    let s = SourceSpec::new(0.9f32, 1.0, 2).unwrap();
    let p = RateProfile::finite(&[0.5f32, 1.0]).unwrap();
    let (_, sols) = solve_horizon(PlfKind::Sa, &p, &s, &SolverOptions::default()).unwrap();
    let d64 = d(PlfKind::Sa, &[0.5, 1.0], 0.9);
    assert!((sols[1].distortion as f64 - d64).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fmd_never_worse_than_sa(rho in 0.0f64..=1.0, r1 in 0.01f64..4.0, r2 in 0.01f64..4.0, r3 in 0.01f64..4.0) {
        for t in [2usize, 3] {
            let r = &[r1, r2, r3][..t];
            let fmd = horizon(PlfKind::Fmd, r, rho);
            let sa = horizon(PlfKind::Sa, r, rho);
            // Containment holds frame by frame only on a shared prefix.
            let s = spec(rho, t);
            let prefix = ReconPolicy::new(sa[..t - 1].iter().map(|x| x.coeffs.clone()).collect()).unwrap();
            let f = solve_frame(PlfKind::Fmd, t, &rates(r), &prefix, &s, &SolverOptions::default()).unwrap();
            prop_assert!(f.distortion <= sa[t - 1].distortion + 1e-6);
            if t == 2 {
                prop_assert!(fmd[1].distortion <= sa[1].distortion + 1e-6);
            }
        }
    }

    #[test]
    fn solutions_round_trip(kind_ix in 0usize..3, rho in 0.0f64..=1.0, r1 in 0.0f64..6.0, r2 in 0.0f64..6.0, r3 in 0.0f64..6.0) {
        let kind = PlfKind::ALL[kind_ix];
        let p = rates(&[r1, r2, r3]);
        let s = spec(rho, 3);
        let (policy, sols) = solve_horizon(kind, &p, &s, &SolverOptions::default()).unwrap();
        for sol in &sols {
            let j = sol.frame();
            let (ok, rate, resid) = round_trip_check(sol, p.get(j).unwrap(), &policy, &s).unwrap();
            prop_assert!(ok, "{kind} frame {j}: rate {rate} residual {resid}");
            prop_assert!(sol.distortion >= 0.0 && sol.distortion <= 4.0);
        }
        let joint = build_joint(&s, &policy).unwrap();
        prop_assert!(crate::linalg::min_eigenvalue(joint.cov()) >= -1e-10 * joint.cov().trace());
    }

    #[test]
    fn distortion_decreases_with_rate(kind_ix in 0usize..3, rho in 0.0f64..=1.0, r1 in 0.01f64..3.0, lo in 0.01f64..3.0, step in 0.0f64..2.0) {
        let kind = PlfKind::ALL[kind_ix];
        let a = d(kind, &[r1, lo], rho);
        let b = d(kind, &[r1, lo + step], rho);
        prop_assert!(b <= a + 1e-6, "{kind}: D({}) = {b} > D({lo}) = {a}", lo + step);
    }
}
