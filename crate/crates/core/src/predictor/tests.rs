use proptest::prelude::*;

use super::*;
use crate::models::{register_model, FayHerriot, JointDraw, ModelDefinition, NormalLognormal, ResponseKind};
use crate::numerics::{binomial_logpmf_logit, logistic, NormalRule};

fn design(x: Vec<f64>, known: f64) -> AreaDesign {
    AreaDesign::new(x, known).unwrap()
}

fn stream(seed: u64) -> Stream {
    StreamFactory::new(seed).get(0, 0, Purpose::XiSample, 0)
}

fn fh_delta() -> ParameterVector {
    ParameterVector::new(vec![], vec![1.0])
}

#[test]
fn closed_form_examples() {
    let d = design(vec![], 0.5);
    assert!((bp_fh_closed(1.5, &fh_delta(), &d).unwrap() - 1.0).abs() < 1e-15);
    let exact = AreaDesign::unchecked(vec![1.0], 0.0);
    let delta = ParameterVector::new(vec![0.3], vec![2.0]);
    assert_eq!(bp_fh_closed(4.25, &delta, &exact).unwrap(), 4.25);
    let flat = ParameterVector::new(vec![0.3], vec![0.0]);
    assert_eq!(bp_fh_closed(4.25, &flat, &design(vec![1.0], 0.5)).unwrap(), 0.3);
    let bad = AreaDesign::unchecked(vec![], -1.0);
    assert!(matches!(
        bp_fh_closed(0.0, &fh_delta(), &bad),
        Err(SaeError::InvalidParameter(_))
    ));
}

proptest! {
    #[test]
    fn closed_form_is_location_equivariant(
        y in -5.0..5.0f64, c in -5.0..5.0f64, lam in -2.0..2.0f64,
        s2 in 0.01..3.0f64, s in 0.01..3.0f64,
    ) {
        let d = design(vec![1.0], s);
        let base = bp_fh_closed(y, &ParameterVector::new(vec![lam], vec![s2]), &d).unwrap();
        let shifted = bp_fh_closed(y + c, &ParameterVector::new(vec![lam + c], vec![s2]), &d).unwrap();
        prop_assert!((shifted - base - c).abs() < 1e-12);
    }

    #[test]
    fn kernel_ratio_is_scale_invariant(y in -3.0..3.0f64, scale in 1e-3..1e3f64, seed in 0u64..50) {
        let model = FayHerriot::new(0);
        let d = design(vec![], 0.5);
        let mut rng = stream(seed);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| { let j = model.draw(&fh_delta(), &d, &mut rng); (j.y, j.theta) })
            .collect();
        let b = 0.4;
        let direct = |c: f64| {
            let w: Vec<f64> = pairs.iter().map(|(yj, _)| c * (-0.5 * ((yj - y) / b).powi(2)).exp()).collect();
            w.iter().zip(&pairs).map(|(w, p)| w * p.1).sum::<f64>() / w.iter().sum::<f64>()
        };
        let got = kernel::SortedSample::new(pairs.clone()).smooth(y, b, KernelShape::Gaussian).value;
        prop_assert!((got - direct(1.0)).abs() < 1e-12);
        prop_assert!((got - direct(scale)).abs() < 1e-12);
    }
}

#[test]
fn quadrature_degenerate_prior_pins_theta() {
    let d = design(vec![1.0], 20.0);
    let delta = ParameterVector::new(vec![0.7], vec![1e-12]);
    let v = ebp_quadrature_logit(3, &delta, &d, 15, &TargetFunction::Identity).unwrap();
    assert!((v - 0.7).abs() < 1e-4);
}

/// E[p] under the prior by a fine midpoint rule on the logit scale.
fn fine_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let n = 200_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|k| {
            let z = lo + (k as f64 + 0.5) * h;
            f(z) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
        })
        .sum()
}

#[test]
fn quadrature_total_expectation_identity() {
    let d = design(vec![1.0], 1.0);
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    let h = TargetFunction::Logistic;
    let xi0 = ebp_quadrature_logit(0, &delta, &d, 15, &h).unwrap();
    let xi1 = ebp_quadrature_logit(1, &delta, &d, 15, &h).unwrap();
    let p1 = fine_expectation(logistic);
    let total = xi1 * p1 + xi0 * (1.0 - p1);
    assert!((total - 0.5).abs() < 1e-6, "{total}");
    // ξ(1) against the fine-grid posterior mean.
    let oracle = fine_expectation(|z| logistic(z).powi(2)) / p1;
    assert!((xi1 - oracle).abs() < 1e-6, "{xi1} vs {oracle}");
}

#[test]
fn quadrature_refinement_is_stable_at_model_ii_sizes() {
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    let h = TargetFunction::Logistic;
    for n in [36u32, 20, 19, 16, 17, 11, 5, 6] {
        let d = design(vec![1.0], n as f64);
        for y in 0..=n {
            let a = ebp_quadrature_logit(y, &delta, &d, 15, &h).unwrap();
            let b = ebp_quadrature_logit(y, &delta, &d, 60, &h).unwrap();
            assert!((a - b).abs() < 1e-6, "n={n} y={y}: {a} vs {b}");
        }
    }
}

#[test]
fn quadrature_matches_closed_form_for_fh() {
    let model = FayHerriot::new(1);
    let d = design(vec![1.0], 0.5);
    let delta = ParameterVector::new(vec![0.2], vec![1.0]);
    let q = Quadrature::new(40).unwrap();
    for y in [-2.0, 0.0, 1.5, 3.0] {
        let v = xi(y, &delta, &model, &d, &TargetFunction::Identity, &q, &mut stream(0))
            .unwrap()
            .value;
        let exact = bp_fh_closed(y, &delta, &d).unwrap();
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }
}

#[test]
fn kernel_recovers_closed_form() {
    let model = FayHerriot::new(0);
    let d = design(vec![], 0.5);
    let v = ebp_kernel_continuous(
        1.5,
        &fh_delta(),
        &model,
        &d,
        100_000,
        None,
        &TargetFunction::Identity,
        &mut stream(3),
    )
    .unwrap();
    assert!(!v.tail);
    assert!((v.value - 1.0).abs() < 0.02, "{}", v.value);
}

#[test]
fn kernel_constant_target_is_exact() {
    let model = FayHerriot::new(0);
    let d = design(vec![], 0.5);
    let h = TargetFunction::Constant(2.75);
    for y in [-1.0, 0.3, 4.0] {
        for shape in [KernelShape::Gaussian, KernelShape::Epanechnikov] {
            let k = KernelSmoother::new(500, None, shape).unwrap();
            let v = xi(y, &fh_delta(), &model, &d, &h, &k, &mut stream(4)).unwrap();
            assert_eq!(v.value, 2.75);
        }
    }
}

#[test]
fn kernel_tail_falls_back_to_nearest() {
    let model = FayHerriot::new(0);
    let d = design(vec![], 0.5);
    let v = ebp_kernel_continuous(
        1e6,
        &fh_delta(),
        &model,
        &d,
        1000,
        None,
        &TargetFunction::Identity,
        &mut stream(5),
    )
    .unwrap();
    assert!(v.tail);
    // The nearest draw is the largest y*; its θ* is finite.
    assert!(v.value.is_finite());
    assert!(matches!(
        KernelSmoother::new(99, None, KernelShape::Gaussian),
        Err(SaeError::InvalidParameter(_))
    ));
    assert!(KernelSmoother::new(1000, Some(0.0), KernelShape::Gaussian).is_err());
}

#[test]
fn kernel_default_bandwidth() {
    let k = KernelSmoother::new(100_000, None, KernelShape::Gaussian).unwrap();
    assert!((k.bandwidth() - 0.1).abs() < 1e-12);
    assert_eq!(k.j_resamples(), 100_000);
}

#[test]
fn indicator_matches_quadrature() {
    let model = LogitNormal::new(1);
    let d = design(vec![1.0], 1.0);
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    let h = TargetFunction::Logistic;
    let ind = ebp_indicator_discrete(1.0, &delta, &model, &d, 1_000_000, &h, &mut stream(6)).unwrap();
    let quad = ebp_quadrature_logit(1, &delta, &d, 15, &h).unwrap();
    assert!((ind - quad).abs() < 0.005, "{ind} vs {quad}");
}

#[test]
fn indicator_all_match_is_sample_mean() {
    let model = register_model(ModelDefinition::new("stuck", 0, 1, ResponseKind::Discrete).sampler(
        |delta, _d, rng| JointDraw {
            theta: delta.psi[0] * rand::Rng::random::<f64>(rng),
            y: 3.0,
        },
    ))
    .unwrap();
    let d = design(vec![], 1.0);
    let delta = ParameterVector::new(vec![], vec![2.0]);
    let v = ebp_indicator_discrete(
        3.0,
        &delta,
        model.as_ref(),
        &d,
        500,
        &TargetFunction::Identity,
        &mut stream(7),
    )
    .unwrap();
    let mut rng = stream(7);
    let mean = (0..500).map(|_| model.draw(&delta, &d, &mut rng).theta).sum::<f64>() / 500.0;
    assert!((v - mean).abs() < 1e-12);
    let err = ebp_indicator_discrete(
        2.0,
        &delta,
        model.as_ref(),
        &d,
        500,
        &TargetFunction::Identity,
        &mut stream(7),
    )
    .unwrap_err();
    assert_eq!(err, SaeError::ResampleExhausted { y: 2.0, j: 500 });
}

#[test]
fn dispatcher_checks_capabilities() {
    let fh = FayHerriot::new(0);
    let d = design(vec![], 0.5);
    let closed = ClosedForm;
    let v = xi(
        1.5,
        &fh_delta(),
        &fh,
        &d,
        &TargetFunction::Identity,
        &closed,
        &mut stream(0),
    )
    .unwrap();
    assert_eq!(v.value, bp_fh_closed(1.5, &fh_delta(), &d).unwrap());

    let ln = NormalLognormal::new(1);
    let delta = ParameterVector::new(vec![0.0], vec![0.5]);
    let err = xi(
        1.0,
        &delta,
        &ln,
        &design(vec![1.0], 0.5),
        &TargetFunction::Identity,
        &closed,
        &mut stream(0),
    )
    .unwrap_err();
    assert_eq!(err.kind(), "unsupported-operation");

    let ind = Indicator::new(1000).unwrap();
    assert!(xi(
        1.0,
        &fh_delta(),
        &fh,
        &d,
        &TargetFunction::Identity,
        &ind,
        &mut stream(0)
    )
    .is_err());
    let logit = LogitNormal::new(1);
    let kern = KernelSmoother::new(1000, None, KernelShape::Gaussian).unwrap();
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    assert!(xi(
        1.0,
        &delta,
        &logit,
        &design(vec![1.0], 5.0),
        &TargetFunction::Logistic,
        &kern,
        &mut stream(0)
    )
    .is_err());
}

#[test]
fn dispatcher_indicator_within_mc_error_of_quadrature() {
    let logit = LogitNormal::new(1);
    let d = design(vec![1.0], 16.0);
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    let h = TargetFunction::Logistic;
    let ind = Indicator::new(10_000).unwrap();
    let v = xi(9.0, &delta, &logit, &d, &h, &ind, &mut stream(8)).unwrap().value;
    let q = ebp_quadrature_logit(9, &delta, &d, 15, &h).unwrap();
    // Posterior sd of p is about 0.1; roughly 600 of 10⁴ draws match y = 9.
    assert!((v - q).abs() < 4.0 * 0.1 / 600f64.sqrt(), "{v} vs {q}");
}

#[test]
fn registry_builds_by_name() {
    let reg = XiRegistry::with_builtins();
    assert_eq!(
        reg.names().collect::<Vec<_>>(),
        ["closed", "indicator", "kernel", "quadrature"]
    );
    let k = reg
        .build(&XiConfig {
            j_resamples: 1000,
            ..XiConfig::named("kernel")
        })
        .unwrap();
    assert_eq!(k.method(), XiMethod::Kernel);
    assert!(k.bandwidth() > 0.0 && k.j_resamples() == 1000);
    assert!(matches!(
        reg.build(&XiConfig::named("spline")),
        Err(SaeError::UnknownName { .. })
    ));
    assert!(reg
        .build(&XiConfig {
            quad_points: 2,
            ..XiConfig::named("quadrature")
        })
        .is_err());
}

fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

fn at_most_one_inversion(v: &[f64]) -> bool {
    v.windows(2).filter(|w| w[1] >= w[0]).count() <= 1 && v[v.len() - 1] < v[0]
}

#[test]
fn kernel_error_shrinks_with_j() {
    let model = FayHerriot::new(0);
    let d = design(vec![], 0.5);
    let exact = bp_fh_closed(0.8, &fh_delta(), &d).unwrap();
    let errs: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&j| {
            let dev: Vec<f64> = (0..50)
                .map(|r| {
                    let mut rng = StreamFactory::new(100).get(r, 0, Purpose::XiSample, 0);
                    ebp_kernel_continuous(
                        0.8,
                        &fh_delta(),
                        &model,
                        &d,
                        j,
                        None,
                        &TargetFunction::Identity,
                        &mut rng,
                    )
                    .unwrap()
                    .value
                        - exact
                })
                .collect();
            mean_sq(&dev)
        })
        .collect();
    assert!(at_most_one_inversion(&errs), "{errs:?}");
}

#[test]
fn indicator_error_shrinks_with_j() {
    let model = LogitNormal::new(1);
    let d = design(vec![1.0], 6.0);
    let delta = ParameterVector::new(vec![0.0], vec![1.0]);
    let h = TargetFunction::Logistic;
    let exact = ebp_quadrature_logit(2, &delta, &d, 40, &h).unwrap();
    let errs: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&j| {
            let dev: Vec<f64> = (0..50)
                .map(|r| {
                    let mut rng = StreamFactory::new(200).get(r, 0, Purpose::XiSample, 0);
                    ebp_indicator_discrete(2.0, &delta, &model, &d, j, &h, &mut rng).unwrap() - exact
                })
                .collect();
            mean_sq(&dev)
        })
        .collect();
    assert!(at_most_one_inversion(&errs), "{errs:?}");
}

#[test]
fn quadrature_posterior_matches_direct_sum() {
    // Same integral written out with the binomial pmf, 60-point rule.
    let d = design(vec![1.0], 11.0);
    let delta = ParameterVector::new(vec![-0.4], vec![0.8]);
    let rule = NormalRule::new(60);
    let sd = 0.8f64.sqrt();
    let f = |y: u32| {
        let num = rule.expect(|z| logistic(-0.4 + sd * z) * binomial_logpmf_logit(y, 11, -0.4 + sd * z).exp());
        let den = rule.expect(|z| binomial_logpmf_logit(y, 11, -0.4 + sd * z).exp());
        num / den
    };
    for y in [0u32, 4, 11] {
        let v = ebp_quadrature_logit(y, &delta, &d, 60, &TargetFunction::Logistic).unwrap();
        assert!((v - f(y)).abs() < 1e-12);
    }
}

#[test]
fn ebp_is_deterministic_per_area() {
    let model = FayHerriot::new(0);
    let designs: std::sync::Arc<[AreaDesign]> = (0..6).map(|_| design(vec![], 0.5)).collect::<Vec<_>>().into();
    let data = AreaDataset::new(designs, vec![0.1, -0.4, 1.2, 0.0, 2.0, -1.0]).unwrap();
    let kern = KernelSmoother::new(2000, None, KernelShape::Gaussian).unwrap();
    let streams = StreamFactory::new(9);
    let a = ebp(
        &data,
        &model,
        &fh_delta(),
        &TargetFunction::Identity,
        &kern,
        &streams,
        3,
    )
    .unwrap();
    let b = ebp(
        &data,
        &model,
        &fh_delta(),
        &TargetFunction::Identity,
        &kern,
        &streams,
        3,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.method, vec![XiMethod::Kernel; 6]);
    assert!(a.bandwidth > 0.0);
    let closed = ebp(
        &data,
        &model,
        &fh_delta(),
        &TargetFunction::Identity,
        &ClosedForm,
        &streams,
        3,
    )
    .unwrap();
    for (k, c) in a.beta_hat.iter().zip(&closed.beta_hat) {
        assert!((k - c).abs() < 0.1);
    }
    assert_eq!(closed.j_resamples, 0);
}
