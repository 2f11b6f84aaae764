//! End-to-end: generate a sample, write and read it back, estimate, combine,
//! simulate.

use approx::assert_abs_diff_eq;

use funbias::biasred::projector_weights;
use funbias::curves::{
    generate_sample, true_regression, Curve, CurveProcessParams, FunctionalSample, Grid, Metric,
    ProcessDraw,
};
use funbias::design::DesignSpec;
use funbias::estimator::{DistanceProfile, PhiTransform};
use funbias::kernels::{OneSidedKernel, SymmetricKernel};
use funbias::sim::{
    self, EstimatorKind, ExperimentConfig, PilotBandwidth, TableOverrides,
};

fn reference_sample(n: usize, seed: u64) -> (FunctionalSample, Curve) {
    let grid = Grid::standard();
    let params = CurveProcessParams {
        seed,
        ..Default::default()
    };
    let sample = generate_sample(&params, n, grid, true_regression).unwrap();
    (sample, ProcessDraw::REFERENCE.curve(grid))
}

#[test]
fn csv_round_trip_preserves_estimates() {
    let (sample, chi) = reference_sample(300, 4);
    let mut buf = Vec::new();
    sample.write_csv(&mut buf).unwrap();
    let back = FunctionalSample::read_csv(buf.as_slice()).unwrap();
    let mut qbuf = Vec::new();
    chi.write_csv(&mut qbuf).unwrap();
    let chi_back = Curve::read_csv(qbuf.as_slice()).unwrap();

    let a = DistanceProfile::new(&sample, &chi)
        .unwrap()
        .estimate(1.5, OneSidedKernel::Quadratic, &PhiTransform::Identity)
        .unwrap();
    let b = DistanceProfile::new(&back, &chi_back)
        .unwrap()
        .estimate(1.5, OneSidedKernel::Quadratic, &PhiTransform::Identity)
        .unwrap();
    assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-9);
    assert_eq!(a.neighbor_count, b.neighbor_count);
}

#[test]
fn rms_metric_is_a_bandwidth_rescaling() {
    let (sample, chi) = reference_sample(400, 8);
    let plain = DistanceProfile::with_metric(&sample, &chi, Metric::L2).unwrap();
    let rms = DistanceProfile::with_metric(&sample, &chi, Metric::L2Mean).unwrap();
    for h in [0.8, 1.0, 1.3] {
        let a = rms.estimate(h, OneSidedKernel::Quadratic, &PhiTransform::Identity).unwrap();
        let b = plain
            .estimate(h * 2f64.sqrt(), OneSidedKernel::Quadratic, &PhiTransform::Identity)
            .unwrap();
        assert_eq!(a.neighbor_count, b.neighbor_count);
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-9);
    }
}

#[test]
fn reduced_estimate_is_the_weighted_pilot_combination() {
    let (sample, chi) = reference_sample(500, 1);
    let profile = DistanceProfile::with_metric(&sample, &chi, Metric::L2Mean).unwrap();
    let spec: DesignSpec = "centered:21,0.01".parse().unwrap();
    let design = spec.build(Some(1.0)).unwrap();
    let w = projector_weights(&design).unwrap();
    let reduced = profile
        .estimate_reduced(&design, &w, OneSidedKernel::Quadratic, &PhiTransform::Identity)
        .unwrap();
    let manual: f64 = design
        .bandwidths()
        .iter()
        .zip(w.g())
        .map(|(&h, g)| {
            g * profile
                .estimate(h, OneSidedKernel::Quadratic, &PhiTransform::Identity)
                .unwrap()
                .value
        })
        .sum();
    assert_abs_diff_eq!(reduced.value, manual, epsilon = 1e-9);
    assert_eq!(reduced.pilots.len(), 21);
}

#[test]
fn density_pilot_integrates_to_one_on_the_reference_process() {
    let (sample, chi) = reference_sample(400, 2);
    let profile = DistanceProfile::new(&sample, &chi).unwrap();
    let weights = profile.local_weights(2.0, OneSidedKernel::Quadratic).unwrap();
    let b = 0.5;
    let dy = 0.005;
    let integral: f64 = (0..8000)
        .map(|i| {
            let y = -10.0 + dy * i as f64;
            weights
                .average(&PhiTransform::density(y, b, SymmetricKernel::Quartic).unwrap())
                .value
        })
        .sum::<f64>()
        * dy;
    assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-3);
}

#[test]
fn small_experiments_reproduce_the_qualitative_pattern() {
    // reduced runs of the h = 1 preset: bias shrinks by more than an order of
    // magnitude while the variance stays within a small factor
    let overrides = TableOverrides {
        replications: Some(100),
        seed: Some(5),
        ..Default::default()
    };
    let rows = sim::run_table(5, &overrides).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let (p, r) = (&row.report.estimators[0], &row.report.estimators[1]);
        assert!(r.sq_bias < 0.1 * p.sq_bias, "{}: {} vs {}", row.row_label, r.sq_bias, p.sq_bias);
        assert!(r.variance < 10.0 * p.variance);
        assert_eq!(p.failed + r.failed, 0);
    }
}

#[test]
fn cdf_and_pdf_experiments_use_gaussian_truths() {
    let mut cfg = ExperimentConfig::new(
        300,
        PilotBandwidth::Fixed(1.0),
        DesignSpec::Centered {
            h_center: None,
            count: 11,
            stepwidth: 0.02,
        },
    );
    cfg.replications = 40;
    cfg.seed = 11;
    let chi = ProcessDraw::REFERENCE.curve(Grid::standard());
    let r = true_regression(&chi).unwrap();

    cfg.estimator = EstimatorKind::Cdf { y: r };
    let rep = sim::run_experiment(&cfg).unwrap();
    assert_abs_diff_eq!(rep.truth, 0.5, epsilon = 1e-12);
    assert!(rep.estimators.iter().all(|e| (0.0..=1.0).contains(&e.mean_estimate)));

    cfg.estimator = EstimatorKind::Pdf {
        y: r,
        b: 0.8,
        k0: SymmetricKernel::Epanechnikov,
    };
    let rep = sim::run_experiment(&cfg).unwrap();
    assert_abs_diff_eq!(rep.truth, 1.0 / (2.0 * std::f64::consts::PI * 2.0).sqrt(), epsilon = 1e-12);
    assert!(rep.estimators.iter().all(|e| e.mean_estimate > 0.0));
}

#[test]
fn json_config_runs_like_the_preset() {
    let json = r#"{
        "n": 200, "replications": 20, "seed": 3,
        "pilot_h": 1.0,
        "design": {"strategy": "centered", "B": 21, "stepwidth": 0.01}
    }"#;
    let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
    let preset = &sim::table_configs(
        5,
        &TableOverrides {
            n: Some(200),
            replications: Some(20),
            seed: Some(3),
            ..Default::default()
        },
    )
    .unwrap()[1]
        .1;
    assert_eq!(&cfg, preset);
    assert_eq!(sim::run_experiment(&cfg).unwrap(), sim::run_experiment(preset).unwrap());
}
