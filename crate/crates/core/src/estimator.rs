//! Functional Nadaraya–Watson estimator
//!
//! ```text
//! m̂_Φ(χ) = Σ Φ(Y_k) K(‖X_k − χ‖ / h) / Σ K(‖X_k − χ‖ / h)
//! ```
//!
//! with `Φ` the identity (regression), an indicator (conditional CDF) or a
//! scaled symmetric kernel (conditional density).
//!
//! Sums run over the sample sorted by `(distance, response)` and are
//! accumulated with compensated summation, so an estimate does not depend on
//! the order in which the sample was supplied.

use serde::{Deserialize, Serialize};

use crate::biasred::{combine, BandwidthDesign, WeightVector};
use crate::curves::{Curve, FunctionalSample, Metric};
use crate::error::{Error, Result};
use crate::kernels::{OneSidedKernel, SymmetricKernel};
use crate::quadrature::KahanSum;

/// Transformation applied to the responses before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiTransform {
    Identity,
    Indicator { y: f64 },
    Density { y: f64, b: f64, k0: SymmetricKernel },
}

impl PhiTransform {
    pub fn density(y: f64, b: f64, k0: SymmetricKernel) -> Result<Self> {
        let phi = PhiTransform::Density { y, b, k0 };
        phi.validate()?;
        Ok(phi)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PhiTransform::Density { b, y, .. } if !(b > 0.0 && b.is_finite() && y.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "density transform needs finite y and b > 0, got y = {y}, b = {b}"
                )))
            }
            PhiTransform::Indicator { y } if y.is_nan() => {
                Err(Error::InvalidParameter("indicator threshold is NaN".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, y_k: f64) -> f64 {
        match *self {
            PhiTransform::Identity => y_k,
            PhiTransform::Indicator { y } => {
                if y_k <= y {
                    1.0
                } else {
                    0.0
                }
            }
            PhiTransform::Density { y, b, k0 } => k0.eval((y - y_k) / b) / b,
        }
    }

    /// Same transform with the response bandwidth replaced (density only).
    pub fn with_response_bandwidth(&self, b: f64) -> PhiTransform {
        match *self {
            PhiTransform::Density { y, k0, .. } => PhiTransform::Density { y, b, k0 },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    /// Number of curves with positive kernel weight.
    pub neighbor_count: usize,
    pub denominator: f64,
}

/// Distances from a query curve to every sample curve, paired with the
/// responses and kept in canonical `(distance, response)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    entries: Vec<(f64, f64)>,
}

impl DistanceProfile {
    pub fn new(sample: &FunctionalSample, chi: &Curve) -> Result<Self> {
        Self::with_metric(sample, chi, Metric::L2)
    }

    pub fn with_metric(sample: &FunctionalSample, chi: &Curve, metric: Metric) -> Result<Self> {
        let entries = sample
            .curves()
            .iter()
            .zip(sample.responses())
            .map(|(x, &y)| Ok((metric.distance(x, chi)?, y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_pairs(entries))
    }

    /// Build from precomputed `(distance, response)` pairs.
    pub fn from_pairs(mut entries: Vec<(f64, f64)>) -> Self {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.entries
    }

    /// Kernel weights `K(d_k / h)` of all curves inside the bandwidth ball.
    pub fn local_weights(&self, h: f64, kernel: OneSidedKernel) -> Result<LocalWeights> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {h}"
            )));
        }
        let mut entries = Vec::new();
        let mut denominator = KahanSum::new();
        for &(d, y) in &self.entries {
            let u = d / h;
            if u > 1.0 {
                break;
            }
            let w = kernel.eval(u);
            if w > 0.0 {
                denominator.add(w);
                entries.push((w, y));
            }
        }
        let denominator = denominator.value();
        if entries.is_empty() || denominator <= 0.0 {
            return Err(Error::EmptyNeighborhood { h });
        }
        Ok(LocalWeights {
            entries,
            denominator,
        })
    }

    pub fn estimate(&self, h: f64, kernel: OneSidedKernel, phi: &PhiTransform) -> Result<EstimateResult> {
        phi.validate()?;
        Ok(self.local_weights(h, kernel)?.average(phi))
    }

    /// Bias-reduced estimate: pilot estimates at every design row combined
    /// with the projector weights. Rows carrying a response bandwidth replace
    /// the density transform's `b`.
    pub fn estimate_reduced(
        &self,
        design: &BandwidthDesign,
        weights: &WeightVector,
        kernel: OneSidedKernel,
        phi: &PhiTransform,
    ) -> Result<ReducedEstimate> {
        let pilots = (0..design.len())
            .map(|i| {
                let row_phi = match design.response_bandwidth(i) {
                    Some(b) => phi.with_response_bandwidth(b),
                    None => *phi,
                };
                self.estimate(design.bandwidth(i), kernel, &row_phi)
            })
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = pilots.iter().map(|p| p.value).collect();
        let value = combine(&values, weights)?;
        Ok(ReducedEstimate { value, pilots })
    }
}

/// Positive kernel weights inside the bandwidth ball and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    entries: Vec<(f64, f64)>,
    denominator: f64,
}

impl LocalWeights {
    pub fn neighbor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    pub fn average(&self, phi: &PhiTransform) -> EstimateResult {
        let numerator: KahanSum = self.entries.iter().map(|&(w, y)| w * phi.apply(y)).collect();
        EstimateResult {
            value: numerator.value() / self.denominator,
            neighbor_count: self.entries.len(),
            denominator: self.denominator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedEstimate {
    pub value: f64,
    /// Pilot estimates, one per design row.
    pub pilots: Vec<EstimateResult>,
}

/// Kernel estimate `m̂_Φ(χ)` at bandwidth `h`.
pub fn estimate(
    sample: &FunctionalSample,
    chi: &Curve,
    h: f64,
    kernel: OneSidedKernel,
    phi: &PhiTransform,
) -> Result<EstimateResult> {
    DistanceProfile::new(sample, chi)?.estimate(h, kernel, phi)
}

/// Conditional distribution function estimate on an ascending `y_grid`.
pub fn estimate_cdf_curve(
    sample: &FunctionalSample,
    chi: &Curve,
    h: f64,
    kernel: OneSidedKernel,
    y_grid: &[f64],
) -> Result<Vec<f64>> {
    if y_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("y grid must be sorted ascending".into()));
    }
    let weights = DistanceProfile::new(sample, chi)?.local_weights(h, kernel)?;
    Ok(y_grid
        .iter()
        .map(|&y| weights.average(&PhiTransform::Indicator { y }).value.clamp(0.0, 1.0))
        .collect())
}

/// Conditional density estimate on a uniform `y_grid`.
pub fn estimate_density_curve(
    sample: &FunctionalSample,
    chi: &Curve,
    h: f64,
    b: f64,
    kernel: OneSidedKernel,
    k0: SymmetricKernel,
    y_grid: &[f64],
) -> Result<Vec<f64>> {
    if y_grid.len() >= 2 {
        let step = (y_grid[y_grid.len() - 1] - y_grid[0]) / (y_grid.len() - 1) as f64;
        let uniform = step > 0.0
            && y_grid
                .iter()
                .enumerate()
                .all(|(i, &y)| (y - (y_grid[0] + i as f64 * step)).abs() <= 1e-9 * step.max(1.0));
        if !uniform {
            return Err(Error::InvalidParameter("y grid must be uniform and ascending".into()));
        }
    }
    PhiTransform::density(0.0, b, k0)?;
    let weights = DistanceProfile::new(sample, chi)?.local_weights(h, kernel)?;
    Ok(y_grid
        .iter()
        .map(|&y| weights.average(&PhiTransform::Density { y, b, k0 }).value)
        .collect())
}
