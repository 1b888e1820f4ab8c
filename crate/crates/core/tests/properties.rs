use nalgebra::{dmatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saddle_scale_core::metrics::contraction_check;
use saddle_scale_core::optim::{run, step_extragrad, Method, OptimizerConfig, StepContext};
use saddle_scale_core::precond::{ScalingConfig, ScalingState};
use saddle_scale_core::problems::{make_quadratic, QuadraticParts};
use saddle_scale_core::{OracleCounters, OracleSample, PointPair};

fn random_point(dx: usize, dy: usize, scale: f64, rng: &mut ChaCha8Rng) -> PointPair {
    PointPair {
        x: DVector::from_fn(dx, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0)),
        y: DVector::from_fn(dy, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0)),
    }
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let (sigma, batch, n) = (1.0, 4u32, 100_000);
    let p = make_quadratic(3, 2, 0.5, 2.0, 21)
        .unwrap()
        .with_noise(sigma)
        .unwrap();
    let z = PointPair::from_slices(&[0.3, -1.0, 2.0], &[1.5, -0.5]).unwrap();
    let exact = p.field(&z).unwrap();
    let mut counters = OracleCounters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sum = PointPair::zeros(3, 2);
    for _ in 0..n {
        let g = p
            .gradient(&z, OracleSample::new(rng.random(), batch), &mut counters)
            .unwrap();
        sum.x += g.gx;
        sum.y += g.gy_neg;
    }
    assert_eq!(counters.grad, n as u64);
    let band = 3.0 * (sigma / (batch as f64).sqrt()) / (n as f64).sqrt();
    for (m, e) in sum
        .x
        .iter()
        .zip(exact.gx.iter())
        .chain(sum.y.iter().zip(exact.gy_neg.iter()))
    {
        assert!((m / n as f64 - e).abs() <= band, "{} vs {e}", m / n as f64);
    }
}

#[test]
fn smoothness_and_strong_monotonicity_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let (mu, l) = (0.2, 5.0);
        let p = make_quadratic(4, 3, mu, l, seed).unwrap();
        for _ in 0..1000 {
            let z1 = random_point(4, 3, 10.0, &mut rng);
            let z2 = random_point(4, 3, 10.0, &mut rng);
            let f1 = p.field(&z1).unwrap();
            let f2 = p.field(&z2).unwrap();
            let df = PointPair {
                x: &f1.gx - &f2.gx,
                y: &f1.gy_neg - &f2.gy_neg,
            };
            let dz = z1.sub(&z2);
            let d2 = dz.norm_sq();
            assert!(df.norm() <= l * dz.norm() * (1.0 + 1e-12));
            let inner = df.x.dot(&dz.x) + df.y.dot(&dz.y);
            assert!(inner >= mu * d2 * (1.0 - 1e-12), "{inner} < {}", mu * d2);
        }
    }
}

#[test]
fn problem_construction_is_deterministic() {
    let a = make_quadratic(5, 4, 0.1, 3.0, 99).unwrap();
    let b = make_quadratic(5, 4, 0.1, 3.0, 99).unwrap();
    let c = make_quadratic(5, 4, 0.1, 3.0, 100).unwrap();
    assert_eq!(a.to_doc(), b.to_doc());
    assert_ne!(a.to_doc(), c.to_doc());
}

/// Textbook extra-gradient on the exact operator, written independently of the
/// library's step code.
fn reference_extragrad(
    p: &saddle_scale_core::SaddleProblem,
    z0: &PointPair,
    gamma: f64,
    steps: usize,
) -> PointPair {
    let q = p.quadratic().unwrap();
    let op = |x: &DVector<f64>, y: &DVector<f64>| {
        (
            &q.a * x + &q.b * y + &q.a_vec,
            -(q.b.transpose() * x) + &q.c * y + &q.c_vec,
        )
    };
    let (mut x, mut y) = (z0.x.clone(), z0.y.clone());
    for _ in 0..steps {
        let (gx, gy) = op(&x, &y);
        let (xh, yh) = (&x - gx * gamma, &y - gy * gamma);
        let (gx, gy) = op(&xh, &yh);
        x -= gx * gamma;
        y -= gy * gamma;
    }
    PointPair { x, y }
}

#[test]
fn frozen_unit_scaling_matches_textbook_extragradient() {
    let p = make_quadratic(4, 3, 0.5, 2.0, 17).unwrap();
    let z0 = PointPair::from_slices(&[1.0, -2.0, 0.5, 3.0], &[-1.0, 0.25, 2.0]).unwrap();
    let gamma = 0.1;
    for cfg in [
        ScalingConfig::oasis(),
        ScalingConfig::adahessian(),
        ScalingConfig::adam(),
    ] {
        let frozen = ScalingState::new(cfg.with_beta(1.0), 4, 3)
            .unwrap()
            .with_raw(DVector::from_element(4, 1.0), DVector::from_element(3, 1.0))
            .unwrap();
        assert_eq!(frozen.clipped_min(), 1.0);
        assert_eq!(frozen.clipped_max(), 1.0);
        let mut ctx = StepContext::new(&p, frozen, 5, 1).unwrap();
        let mut z = z0.clone();
        for _ in 0..60 {
            z = step_extragrad(&mut ctx, &z, gamma).unwrap().next;
        }
        let reference = reference_extragrad(&p, &z0, gamma, 60);
        assert!(
            z.dist_sq(&reference).sqrt() <= 1e-14 * (1.0 + reference.norm()),
            "{cfg:?}"
        );
    }
}

#[test]
fn contraction_check_frozen_scalar_quadratic() {
    let p = QuadraticParts::new(
        dmatrix![1.0],
        dmatrix![0.0],
        dmatrix![1.0],
        DVector::zeros(1),
        DVector::zeros(1),
    )
    .mu(1.0)
    .lipschitz(1.0)
    .build()
    .unwrap();
    let scaling = ScalingConfig::oasis().with_beta(1.0);
    let gamma = scaling.floor / 4.0;
    let cfg = OptimizerConfig::new(Method::ExtraGradient, gamma, scaling, 200);
    let tr = run(&p, &cfg, &PointPair::from_slices(&[1.0], &[-1.0]).unwrap()).unwrap();
    let report = contraction_check(&tr, &p, &cfg).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.steps_checked, 199);
    assert!(report.worst_ratio < 1.0);
}

#[test]
fn contraction_check_zero_step_keeps_distance() {
    let p = make_quadratic(2, 2, 0.5, 2.0, 2).unwrap();
    let cfg = OptimizerConfig::new(
        Method::ExtraGradient,
        0.0,
        ScalingConfig::oasis().with_beta(1.0),
        50,
    );
    let tr = run(&p, &cfg, &PointPair::zeros(2, 2)).unwrap();
    let r0 = tr.records[0].r2_weighted;
    assert!(tr.records.iter().all(|r| r.r2_weighted == r0));
    assert!(contraction_check(&tr, &p, &cfg).unwrap().passed);
}

#[test]
fn contraction_check_oasis_random_quadratic() {
    let p = make_quadratic(5, 5, 0.5, 2.0, 30).unwrap();
    let scaling = ScalingConfig::oasis();
    let cfg = OptimizerConfig::new(
        Method::ExtraGradient,
        scaling.floor / (4.0 * p.lipschitz()),
        scaling,
        1000,
    );
    let tr = run(
        &p,
        &cfg,
        &PointPair::from_slices(&[1.0; 5], &[-1.0; 5]).unwrap(),
    )
    .unwrap();
    assert!(contraction_check(&tr, &p, &cfg).unwrap().passed);
    // 200 deterministic steps shrink the weighted distance at every step
    assert!(tr.records[..200]
        .windows(2)
        .all(|w| w[1].r2_weighted < w[0].r2_weighted));
}

#[test]
fn contraction_check_reports_violation_and_rejects_noise() {
    let p = make_quadratic(2, 2, 0.5, 2.0, 2).unwrap();
    let scaling = ScalingConfig::oasis().with_beta(1.0);
    // a far too large step makes extra-gradient expand
    let cfg = OptimizerConfig::new(Method::ExtraGradient, 0.02, scaling, 4);
    let tr = run(
        &p,
        &cfg,
        &PointPair::from_slices(&[1.0, 1.0], &[1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let report = contraction_check(&tr, &p, &cfg).unwrap();
    assert!(!report.passed);
    let v = report.first_violation.unwrap();
    assert!(v.lhs > v.rhs);
    let json = serde_json::to_string(&contraction_check(&tr, &p, &cfg).unwrap()).unwrap();
    assert!(json.contains("\"lhs\""));

    let noisy = p.with_noise(0.1).unwrap();
    assert!(contraction_check(&tr, &noisy, &cfg).is_err());
}
