//! Seeded Monte Carlo harness comparing the pilot estimator with its
//! bias-reduced combinations.
//!
//! Replication `r` draws a fresh sample from the synthetic curve process with
//! seed `derive_seed(seed, r)`; replications run in parallel and are reduced
//! in index order, so reports do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::biasred::{projector_weights, BandwidthDesign, WeightVector};
use crate::curves::{
    derive_seed, generate_sample, true_regression, CurveProcessParams, Grid, Metric, ProcessDraw,
};
use crate::design::{fixed_interval, two_cluster, DesignSpec};
use crate::error::{Error, Result};
use crate::estimator::{DistanceProfile, PhiTransform};
use crate::kernels::{OneSidedKernel, SymmetricKernel};

/// Response noise drawn together with the reference query curve; kept in the
/// config echo only.
pub const REFERENCE_CHI_NOISE: f64 = -0.1200122;

/// Pilot bandwidth: a fixed value or the rule `c · n^(−1/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PilotBandwidth {
    Fixed(f64),
    Rule { c: f64 },
}

impl PilotBandwidth {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        let h = match *self {
            PilotBandwidth::Fixed(h) => h,
            PilotBandwidth::Rule { c } => c * (n as f64).powf(-1.0 / 3.0),
        };
        if h > 0.0 && h.is_finite() {
            Ok(h)
        } else {
            Err(Error::InvalidConfig(format!("pilot bandwidth must be positive, got {h}")))
        }
    }
}

/// Functional of the conditional law being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Reg,
    Cdf { y: f64 },
    Pdf {
        y: f64,
        b: f64,
        #[serde(default = "default_k0")]
        k0: SymmetricKernel,
    },
}

fn default_k0() -> SymmetricKernel {
    SymmetricKernel::Epanechnikov
}

impl EstimatorKind {
    pub fn phi(&self) -> Result<PhiTransform> {
        match *self {
            EstimatorKind::Reg => Ok(PhiTransform::Identity),
            EstimatorKind::Cdf { y } => Ok(PhiTransform::Indicator { y }),
            EstimatorKind::Pdf { y, b, k0 } => PhiTransform::density(y, b, k0),
        }
    }

    /// Target value given `r(χ)` and Gaussian noise with standard deviation `sd`.
    pub fn truth(&self, regression: f64, sd: f64) -> Result<f64> {
        match *self {
            EstimatorKind::Reg => Ok(regression),
            EstimatorKind::Cdf { y } if sd == 0.0 => Ok(if y >= regression { 1.0 } else { 0.0 }),
            EstimatorKind::Cdf { y } => Ok(normal(regression, sd)?.cdf(y)),
            EstimatorKind::Pdf { .. } if sd == 0.0 => Err(Error::InvalidConfig(
                "conditional density is undefined without response noise".into(),
            )),
            EstimatorKind::Pdf { y, .. } => Ok(normal(regression, sd)?.pdf(y)),
        }
    }
}

fn normal(mean: f64, sd: f64) -> Result<Normal> {
    Normal::new(mean, sd).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// How the reported `mse` column is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseMode {
    /// `sq_bias + variance`.
    #[default]
    Decomposed,
    /// `mean((estimate − truth)²)`.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chi")]
    pub chi: ProcessDraw,
    #[serde(default = "default_chi_noise")]
    pub chi_noise: f64,
    pub pilot_h: PilotBandwidth,
    pub design: DesignSpec,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
    #[serde(default = "default_kernel")]
    pub kernel: OneSidedKernel,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Curve distance; defaults to the root-mean-square L2 distance.
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub mse_mode: MseMode,
}

fn default_replications() -> usize {
    500
}
fn default_chi() -> ProcessDraw {
    ProcessDraw::REFERENCE
}
fn default_chi_noise() -> f64 {
    REFERENCE_CHI_NOISE
}
fn default_estimator() -> EstimatorKind {
    EstimatorKind::Reg
}
fn default_kernel() -> OneSidedKernel {
    OneSidedKernel::Quadratic
}
fn default_grid_points() -> usize {
    101
}
fn default_metric() -> Metric {
    Metric::L2Mean
}
fn default_noise_sd() -> f64 {
    2f64.sqrt()
}

impl ExperimentConfig {
    /// Reference setup: `n` curves, 500 replications, reference query curve,
    /// quadratic kernel, regression.
    pub fn new(n: usize, pilot_h: PilotBandwidth, design: DesignSpec) -> Self {
        Self {
            n,
            replications: default_replications(),
            seed: 0,
            chi: default_chi(),
            chi_noise: default_chi_noise(),
            pilot_h,
            design,
            estimator: default_estimator(),
            kernel: default_kernel(),
            grid_points: default_grid_points(),
            metric: default_metric(),
            noise_sd: default_noise_sd(),
            mse_mode: MseMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.replications < 2 {
            return Err(Error::InvalidConfig(format!(
                "replications must be at least 2, got {}",
                self.replications
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        self.pilot_h.resolve(self.n)?;
        self.estimator.phi()?;
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(-1.0, 1.0, self.grid_points)
    }

    pub fn resolved_pilot_h(&self) -> Result<f64> {
        self.pilot_h.resolve(self.n)
    }
}

/// Summary statistics of one estimator over the replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// Number of bandwidths combined (1 for the pilot).
    #[serde(rename = "B")]
    pub count: usize,
    pub stepwidth: Option<f64>,
    pub sq_bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub mean_estimate: f64,
    pub failed: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: ExperimentConfig,
    pub truth: f64,
    pub h0: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == name)
    }

    pub fn pilot(&self) -> &EstimatorSummary {
        &self.estimators[0]
    }
}

/// One estimator to evaluate on every replication.
#[derive(Debug, Clone)]
pub struct EstimatorPlan {
    pub name: String,
    pub stepwidth: Option<f64>,
    pub weights: WeightVector,
}

impl EstimatorPlan {
    pub fn pilot(h: f64) -> Result<Self> {
        Ok(Self {
            name: "pilot".into(),
            stepwidth: None,
            weights: projector_weights(&BandwidthDesign::pilot(h)?)?,
        })
    }

    pub fn reduced(name: &str, design: &BandwidthDesign, stepwidth: Option<f64>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            stepwidth,
            weights: projector_weights(design)?,
        })
    }
}

/// Per-replication estimates; `None` marks a replication where the estimator
/// had an empty bandwidth ball.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub truth: f64,
    pub estimates: Vec<Vec<Option<f64>>>,
}

/// Runs every plan on the same replications (common random numbers).
pub fn run_replications(config: &ExperimentConfig, plans: &[EstimatorPlan]) -> Result<ReplicationOutcome> {
    config.validate()?;
    let grid = config.grid()?;
    let chi = config.chi.curve(grid);
    let truth = config.estimator.truth(true_regression(&chi)?, config.noise_sd)?;
    let phi = config.estimator.phi()?;

    let per_rep = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let params = CurveProcessParams {
                noise_sd: config.noise_sd,
                seed: derive_seed(config.seed, r as u64),
                ..CurveProcessParams::default()
            };
            let sample = generate_sample(&params, config.n, grid, true_regression)?;
            let profile = DistanceProfile::with_metric(&sample, &chi, config.metric)?;
            plans
                .iter()
                .map(|plan| {
                    let design = plan.weights.design();
                    match profile.estimate_reduced(design, &plan.weights, config.kernel, &phi) {
                        Ok(e) => Ok(Some(e.value)),
                        Err(Error::EmptyNeighborhood { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let estimates = (0..plans.len())
        .map(|j| per_rep.iter().map(|row| row[j]).collect())
        .collect();
    Ok(ReplicationOutcome { truth, estimates })
}

fn summarize(
    plan: &EstimatorPlan,
    values: &[Option<f64>],
    truth: f64,
    mode: MseMode,
) -> Result<EstimatorSummary> {
    let used: Vec<f64> = values.iter().flatten().copied().collect();
    if used.len() < 2 {
        return Err(Error::ExperimentFailed(values.len() - used.len()));
    }
    let k = used.len() as f64;
    let mean = used.iter().sum::<f64>() / k;
    let variance = used.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let sq_bias = (mean - truth).powi(2);
    let mse = match mode {
        MseMode::Decomposed => sq_bias + variance,
        MseMode::Empirical => used.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / k,
    };
    Ok(EstimatorSummary {
        estimator: plan.name.clone(),
        count: plan.weights.design().len(),
        stepwidth: plan.stepwidth,
        sq_bias,
        variance,
        mse,
        mean_estimate: mean,
        failed: values.len() - used.len(),
        used: used.len(),
    })
}

/// Runs arbitrary plans and summarises each.
pub fn run_plans(config: &ExperimentConfig, plans: &[EstimatorPlan]) -> Result<MonteCarloReport> {
    let outcome = run_replications(config, plans)?;
    let estimators = plans
        .iter()
        .zip(&outcome.estimates)
        .map(|(p, v)| summarize(p, v, outcome.truth, config.mse_mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloReport {
        config: config.clone(),
        truth: outcome.truth,
        h0: config.resolved_pilot_h()?,
        estimators,
    })
}

fn standard_plans(config: &ExperimentConfig) -> Result<Vec<EstimatorPlan>> {
    config.validate()?;
    let h = config.resolved_pilot_h()?;
    let design = config.design.build(Some(h))?;
    Ok(vec![
        EstimatorPlan::pilot(h)?,
        EstimatorPlan::reduced("reduced", &design, config.design.stepwidth())?,
    ])
}

/// Pilot at `pilot_h` against the reduced estimator over `design`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MonteCarloReport> {
    run_plans(config, &standard_plans(config)?)
}

/// Pilot at `h = 1`, the equidistant design with `B = 20` on `[0.9, 1.1]`
/// and the two-cluster design `[0.9, 0.91] ∪ [1.09, 1.1]`, all on the same
/// replications. The `design` field of `config` is ignored.
pub fn run_design_comparison(config: &ExperimentConfig) -> Result<MonteCarloReport> {
    config.validate()?;
    let h = config.resolved_pilot_h()?;
    let equi = fixed_interval(0.9, 1.1, 20)?;
    let cluster = two_cluster((0.9, 0.91), (1.09, 1.1), 20, 0.5)?;
    let plans = vec![
        EstimatorPlan::pilot(h)?,
        EstimatorPlan::reduced("reduced_equidistant", &equi, Some(0.01))?,
        EstimatorPlan::reduced("reduced_cluster", &cluster, None)?,
    ];
    run_plans(config, &plans)
}

/// Default configuration of the design comparison.
pub fn design_comparison_config() -> ExperimentConfig {
    ExperimentConfig::new(
        500,
        PilotBandwidth::Fixed(1.0),
        DesignSpec::FixedInterval {
            h0: 0.9,
            hu: 1.1,
            count: 20,
        },
    )
}

/// Overrides applied to every row of a table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableOverrides {
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
}

impl TableOverrides {
    fn apply(&self, mut c: ExperimentConfig) -> ExperimentConfig {
        if let Some(n) = self.n {
            c.n = n;
        }
        if let Some(r) = self.replications {
            c.replications = r;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(g) = self.grid_points {
            c.grid_points = g;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// `None` for rows from a user-supplied configuration.
    pub table: Option<u32>,
    pub row_label: String,
    pub report: MonteCarloReport,
}

const B_VALUES: [usize; 4] = [11, 15, 21, 41];
const STEPWIDTHS: [f64; 3] = [0.005, 0.01, 0.02];

/// Configurations of one table of the reference study, with row labels.
pub fn table_configs(table: u32, overrides: &TableOverrides) -> Result<Vec<(String, ExperimentConfig)>> {
    let centered = |count, stepwidth| DesignSpec::Centered {
        h_center: None,
        count,
        stepwidth,
    };
    let rows: Vec<(String, ExperimentConfig)> = match table {
        1..=3 => {
            let c = [9.28, 8.12, 6.96][table as usize - 1];
            [100, 200, 500]
                .into_iter()
                .map(|n| {
                    let cfg = ExperimentConfig::new(n, PilotBandwidth::Rule { c }, centered(21, 0.01));
                    (format!("n={n}"), cfg)
                })
                .collect()
        }
        4 | 5 => {
            let h = if table == 4 { 1.2 } else { 1.0 };
            STEPWIDTHS
                .into_iter()
                .map(|sw| {
                    let cfg = ExperimentConfig::new(500, PilotBandwidth::Fixed(h), centered(21, sw));
                    (format!("sw={sw}"), cfg)
                })
                .collect()
        }
        6..=9 => {
            let h = if table.is_multiple_of(2) { 1.2 } else { 1.0 };
            B_VALUES
                .into_iter()
                .map(|b| {
                    let sw = if table <= 7 { 0.01 } else { 0.1 / ((b - 1) as f64 / 2.0) };
                    let cfg = ExperimentConfig::new(500, PilotBandwidth::Fixed(h), centered(b, sw));
                    (format!("B={b}"), cfg)
                })
                .collect()
        }
        10 => vec![("n=500".into(), design_comparison_config())],
        _ => return Err(Error::UnknownTable(table)),
    };
    Ok(rows
        .into_iter()
        .map(|(label, cfg)| (label, overrides.apply(cfg)))
        .collect())
}

/// All rows of tables 1–9.
pub fn run_table_suite(table: u32, overrides: &TableOverrides) -> Result<Vec<TableRow>> {
    if !(1..=9).contains(&table) {
        return Err(Error::UnknownTable(table));
    }
    run_table(table, overrides)
}

/// Tables 1–9 via [`run_experiment`], table 10 via [`run_design_comparison`].
pub fn run_table(table: u32, overrides: &TableOverrides) -> Result<Vec<TableRow>> {
    table_configs(table, overrides)?
        .into_iter()
        .map(|(row_label, cfg)| {
            let report = if table == 10 {
                run_design_comparison(&cfg)?
            } else {
                run_experiment(&cfg)?
            };
            Ok(TableRow {
                table: Some(table),
                row_label,
                report,
            })
        })
        .collect()
}

/// Writes one CSV line per (row, estimator).
pub fn write_rows_csv<W: Write>(rows: &[TableRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidConfig(format!("csv output: {e}"));
    w.write_record([
        "table", "row_label", "estimator", "n", "h0", "B", "stepwidth", "sq_bias", "variance", "mse",
        "failed",
    ])
    .map_err(io)?;
    for row in rows {
        for e in &row.report.estimators {
            w.write_record([
                row.table.map(|t| t.to_string()).unwrap_or_default(),
                row.row_label.clone(),
                e.estimator.clone(),
                row.report.config.n.to_string(),
                row.report.h0.to_string(),
                e.count.to_string(),
                e.stepwidth.map(|s| s.to_string()).unwrap_or_default(),
                e.sq_bias.to_string(),
                e.variance.to_string(),
                e.mse.to_string(),
                e.failed.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()
        .map_err(|e| Error::InvalidConfig(format!("csv output: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostic {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub standardized: Vec<f64>,
}

/// Standardises `values` by their mean and sample standard deviation and
/// reports sample skewness and excess kurtosis (moment estimators).
pub fn normality_from_values(values: &[f64]) -> Result<NormalityDiagnostic> {
    if values.len() < 3 {
        return Err(Error::InvalidConfig("need at least three values".into()));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Degenerate("replication estimates have zero spread".into()));
    }
    let standardized: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let m2 = standardized.iter().map(|z| z * z).sum::<f64>() / k;
    let m3 = standardized.iter().map(|z| z.powi(3)).sum::<f64>() / k;
    let m4 = standardized.iter().map(|z| z.powi(4)).sum::<f64>() / k;
    Ok(NormalityDiagnostic {
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        standardized,
    })
}

/// Shape of the replication distribution of the reduced estimator; needs at
/// least 200 replications.
pub fn normality_diagnostic(config: &ExperimentConfig) -> Result<NormalityDiagnostic> {
    if config.replications < 200 {
        return Err(Error::InvalidConfig(format!(
            "normality diagnostic needs at least 200 replications, got {}",
            config.replications
        )));
    }
    let plans = standard_plans(config)?;
    let outcome = run_replications(config, &plans[1..])?;
    let values: Vec<f64> = outcome.estimates[0].iter().flatten().copied().collect();
    normality_from_values(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupErrorReport {
    /// `max_j |m̂(χ_j) − m(χ_j)|` over query curves with a nonempty ball.
    pub pilot: f64,
    pub reduced: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Empirical uniform error over a set of query curves on a single sample
/// drawn with the config's seed. Only the regression functional is supported.
pub fn sup_error_diagnostic(config: &ExperimentConfig, queries: &[ProcessDraw]) -> Result<SupErrorReport> {
    if config.estimator != EstimatorKind::Reg {
        return Err(Error::InvalidConfig("sup-error diagnostic supports regression only".into()));
    }
    let plans = standard_plans(config)?;
    let grid = config.grid()?;
    let params = CurveProcessParams {
        noise_sd: config.noise_sd,
        seed: derive_seed(config.seed, 0),
        ..CurveProcessParams::default()
    };
    let sample = generate_sample(&params, config.n, grid, true_regression)?;
    let errors = queries
        .par_iter()
        .map(|q| {
            let chi = q.curve(grid);
            let truth = true_regression(&chi)?;
            let profile = DistanceProfile::with_metric(&sample, &chi, config.metric)?;
            let mut out = [0.0; 2];
            for (slot, plan) in out.iter_mut().zip(&plans) {
                match profile.estimate_reduced(plan.weights.design(), &plan.weights, config.kernel, &PhiTransform::Identity) {
                    Ok(e) => *slot = (e.value - truth).abs(),
                    Err(Error::EmptyNeighborhood { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(out))
        })
        .collect::<Result<Vec<_>>>()?;
    let evaluated: Vec<[f64; 2]> = errors.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return Err(Error::ExperimentFailed(queries.len()));
    }
    Ok(SupErrorReport {
        pilot: evaluated.iter().map(|e| e[0]).fold(0.0, f64::max),
        reduced: evaluated.iter().map(|e| e[1]).fold(0.0, f64::max),
        evaluated: evaluated.len(),
        skipped: queries.len() - evaluated.len(),
    })
}
