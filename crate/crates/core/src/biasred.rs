//! Bias reduction by linear extrapolation in the regularization parameters.
//!
//! If the expectation of an estimator depends on its regularization
//! parameters through `m + Σ_j ℓ_j(h_j) β_j + o(·)`, evaluating it at `B`
//! parameter vectors and fitting that linear model by least squares gives
//! the intercept `β_0 = m` as a fixed linear combination of the pilot
//! estimates:
//!
//! ```text
//! m̂_B = e_1ᵀ (HᵀH)⁻¹ Hᵀ V = Σ_i g_i m̂_{h_i}
//! ```
//!
//! The weight row `g` satisfies `Σ g_i = 1` and `Σ g_i ℓ_j(h_ij) = 0` for every
//! link column, which is what removes the leading bias terms. It is computed
//! from a thin QR factorization of `H`; `(HᵀH)⁻¹` is never formed.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::KahanSum;

/// Default cap on `cond(HᵀH)`.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Known form through which a regularization parameter enters the bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `ℓ(x) = x`
    Linear,
    /// `ℓ(x) = x²`
    Square,
    /// `ℓ(x) = x^p`
    Power(f64),
}

impl Link {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Link::Linear => x,
            Link::Square => x * x,
            Link::Power(p) => x.powf(p),
        }
    }
}

/// Which regularization parameter of a design row a link column reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    /// The curve-distance bandwidth `h`.
    Bandwidth,
    /// The response bandwidth `b` of the density transform.
    ResponseBandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkColumn {
    pub parameter: Parameter,
    pub link: Link,
}

impl LinkColumn {
    pub const H: LinkColumn = LinkColumn {
        parameter: Parameter::Bandwidth,
        link: Link::Linear,
    };
    pub const B: LinkColumn = LinkColumn {
        parameter: Parameter::ResponseBandwidth,
        link: Link::Linear,
    };
    pub const B_SQUARED: LinkColumn = LinkColumn {
        parameter: Parameter::ResponseBandwidth,
        link: Link::Square,
    };
}

impl fmt::Display for LinkColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.parameter {
            Parameter::Bandwidth => "h",
            Parameter::ResponseBandwidth => "b",
        };
        match self.link {
            Link::Linear => write!(f, "{p}"),
            Link::Square => write!(f, "{p}^2"),
            Link::Power(e) => write!(f, "{p}^{e}"),
        }
    }
}

/// `B` regularization vectors `(h_i[, b_i])` with the link columns of `H`
/// and the base values `h_0`, `b_0` defining the multipliers `C_i = h_i / h_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthDesign {
    h: Vec<f64>,
    b: Option<Vec<f64>>,
    columns: Vec<LinkColumn>,
    base_h: f64,
    base_b: Option<f64>,
}

fn check_positive(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidDesign(format!(
            "{name} entries must be positive and finite, found {x}"
        )));
    }
    Ok(())
}

impl BandwidthDesign {
    pub fn new(
        h: Vec<f64>,
        b: Option<Vec<f64>>,
        columns: Vec<LinkColumn>,
        base_h: f64,
        base_b: Option<f64>,
    ) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidDesign("design has no rows".into()));
        }
        check_positive("h", &h)?;
        check_positive("h_0", &[base_h])?;
        if let Some(b) = &b {
            if b.len() != h.len() {
                return Err(Error::LengthMismatch {
                    expected: h.len(),
                    got: b.len(),
                });
            }
            check_positive("b", b)?;
        }
        if let Some(b0) = base_b {
            check_positive("b_0", &[b0])?;
        }
        if b.is_none()
            && columns
                .iter()
                .any(|c| c.parameter == Parameter::ResponseBandwidth)
        {
            return Err(Error::InvalidDesign(
                "a response-bandwidth column needs b values".into(),
            ));
        }
        if h.len() < columns.len() + 1 {
            return Err(Error::InvalidDesign(format!(
                "{} rows cannot identify {} coefficients",
                h.len(),
                columns.len() + 1
            )));
        }
        let design = Self {
            h,
            b,
            columns,
            base_h,
            base_b,
        };
        if !design.columns.is_empty() {
            for i in 0..design.len() {
                for k in 0..i {
                    if design.row(i) == design.row(k) {
                        return Err(Error::InvalidDesign(format!(
                            "rows {k} and {i} coincide"
                        )));
                    }
                }
            }
        }
        Ok(design)
    }

    /// Single-parameter design with columns `(1, h_i)` and `h_0 = 1`.
    pub fn h1(h: Vec<f64>) -> Result<Self> {
        Self::new(h, None, vec![LinkColumn::H], 1.0, None)
    }

    /// Joint design with columns `(1, h_i, b_i)`.
    pub fn h2(h: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(h, Some(b), vec![LinkColumn::H, LinkColumn::B], 1.0, Some(1.0))
    }

    /// Joint design with columns `(1, h_i, b_i²)`.
    pub fn h2_squared_b(h: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(
            h,
            Some(b),
            vec![LinkColumn::H, LinkColumn::B_SQUARED],
            1.0,
            Some(1.0),
        )
    }

    /// Intercept-only design: plain averaging of the pilots.
    pub fn intercept_only(h: Vec<f64>) -> Result<Self> {
        Self::new(h, None, Vec::new(), 1.0, None)
    }

    /// The unreduced estimator viewed as a one-row design with `C_1 = 1`.
    pub fn pilot(h: f64) -> Result<Self> {
        Self::new(vec![h], None, Vec::new(), h, None)
    }

    pub fn with_base(mut self, base_h: f64) -> Result<Self> {
        check_positive("h_0", &[base_h])?;
        self.base_h = base_h;
        Ok(self)
    }

    pub fn with_response_base(mut self, base_b: f64) -> Result<Self> {
        check_positive("b_0", &[base_b])?;
        self.base_b = Some(base_b);
        Ok(self)
    }

    /// Same design with every `h_i` and `h_0` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.h.iter().map(|h| h * factor).collect(),
            self.b.clone(),
            self.columns.clone(),
            self.base_h * factor,
            self.base_b,
        )
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.h
    }

    pub fn bandwidth(&self, i: usize) -> f64 {
        self.h[i]
    }

    pub fn response_bandwidths(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    pub fn response_bandwidth(&self, i: usize) -> Option<f64> {
        self.b.as_ref().map(|b| b[i])
    }

    pub fn columns(&self) -> &[LinkColumn] {
        &self.columns
    }

    pub fn base(&self) -> f64 {
        self.base_h
    }

    pub fn response_base(&self) -> Option<f64> {
        self.base_b
    }

    /// `C_i = h_i / h_0`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.h.iter().map(|h| h / self.base_h).collect()
    }

    /// `C'_i = b_i / b_0`, when the design carries response bandwidths.
    pub fn response_multipliers(&self) -> Option<Vec<f64>> {
        let b0 = self.base_b?;
        self.b.as_ref().map(|b| b.iter().map(|v| v / b0).collect())
    }

    /// Strictly increasing bandwidths (and response bandwidths, if present).
    pub fn is_increasing(&self) -> bool {
        let inc = |xs: &[f64]| xs.windows(2).all(|w| w[0] < w[1]);
        inc(&self.h) && self.b.as_deref().is_none_or(inc)
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| self.column_value(c, i)).collect()
    }

    fn column_value(&self, column: &LinkColumn, i: usize) -> f64 {
        let x = match column.parameter {
            Parameter::Bandwidth => self.h[i],
            Parameter::ResponseBandwidth => self.b.as_ref().expect("validated")[i],
        };
        column.link.eval(x)
    }
}

/// `H` with a leading column of ones and one column per link.
pub fn build_design_matrix(design: &BandwidthDesign) -> DMatrix<f64> {
    let cols = design.columns.len() + 1;
    DMatrix::from_fn(design.len(), cols, |i, j| {
        if j == 0 {
            1.0
        } else {
            design.column_value(&design.columns[j - 1], i)
        }
    })
}

/// Intercept row `g = e_1ᵀ (HᵀH)⁻¹ Hᵀ` of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    g: Vec<f64>,
    condition_number: f64,
    design: BandwidthDesign,
}

impl WeightVector {
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn design(&self) -> &BandwidthDesign {
        &self.design
    }

    /// `cond(HᵀH)` in the spectral norm.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn sum(&self) -> f64 {
        self.g.iter().copied().collect::<KahanSum>().value()
    }

    /// `Σ_i g_i ℓ_j(h_ij)` for each link column; zero up to rounding.
    pub fn column_residuals(&self) -> Vec<(LinkColumn, f64)> {
        self.design
            .columns
            .iter()
            .map(|c| {
                let r: KahanSum = (0..self.g.len())
                    .map(|i| self.g[i] * self.design.column_value(c, i))
                    .collect();
                (*c, r.value())
            })
            .collect()
    }
}

/// Projector weights with the default condition-number cap.
pub fn projector_weights(design: &BandwidthDesign) -> Result<WeightVector> {
    projector_weights_with_cap(design, DEFAULT_CONDITION_CAP)
}

/// Projector weights via a thin QR factorization `H = QR`:
/// `g = Q R⁻ᵀ e_1`.
pub fn projector_weights_with_cap(design: &BandwidthDesign, cap: f64) -> Result<WeightVector> {
    let h = build_design_matrix(design);
    let (rows, cols) = h.shape();
    let qr = h.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > smax * f64::EPSILON * rows.max(cols) as f64) {
        return Err(Error::SingularDesign);
    }
    let ratio = smax / smin;
    let condition = ratio * ratio;
    if condition > cap {
        return Err(Error::IllConditionedDesign {
            condition,
            cap,
        });
    }
    let mut e1 = DVector::zeros(cols);
    e1[0] = 1.0;
    let z = r
        .transpose()
        .solve_lower_triangular(&e1)
        .ok_or(Error::SingularDesign)?;
    let g = qr.q() * z;
    Ok(WeightVector {
        g: g.iter().copied().collect(),
        condition_number: condition,
        design: design.clone(),
    })
}

/// Closed-form weights of the `(1, h_i)` design:
/// `g_i = (Σh² − h_i Σh) / (B Σh² − (Σh)²)`.
pub fn closed_form_weights_h1(bandwidths: &[f64]) -> Result<WeightVector> {
    let n = bandwidths.len() as f64;
    let s1: f64 = bandwidths.iter().sum();
    let s2: f64 = bandwidths.iter().map(|h| h * h).sum();
    let denom = n * s2 - s1 * s1;
    if bandwidths.len() < 2 || !(denom > 1e-14 * n * s2) {
        return Err(Error::DegenerateDesign(
            "closed-form weights need at least two distinct bandwidths".into(),
        ));
    }
    let design = BandwidthDesign::h1(bandwidths.to_vec())?;
    let g = bandwidths.iter().map(|h| (s2 - h * s1) / denom).collect();
    // eigenvalues of [[B, Σh], [Σh, Σh²]]
    let tr = n + s2;
    let disc = ((n - s2).powi(2) + 4.0 * s1 * s1).sqrt();
    let condition = (tr + disc) / (tr - disc);
    Ok(WeightVector {
        g,
        condition_number: condition,
        design,
    })
}

/// `Σ g_i v_i`.
pub fn combine(estimates: &[f64], weights: &WeightVector) -> Result<f64> {
    if estimates.len() != weights.g.len() {
        return Err(Error::LengthMismatch {
            expected: weights.g.len(),
            got: estimates.len(),
        });
    }
    let acc: KahanSum = estimates.iter().zip(&weights.g).map(|(v, g)| v * g).collect();
    Ok(acc.value())
}

/// `Σ g_i C_i²` with `C_i = h_i / h_0` taken from the design's base.
pub fn sum_g_c_squared(weights: &WeightVector) -> f64 {
    let c = weights.design.multipliers();
    weights
        .g
        .iter()
        .zip(&c)
        .map(|(g, c)| g * c * c)
        .collect::<KahanSum>()
        .value()
}

/// Limit of `Σ g_i C_i²` for equally spaced bandwidths filling `(h_0, h_u]`:
/// `−(1 + Δ + Δ²/6)` with `Δ = (h_u − h_0)/h_0`.
pub fn limit_sum_g_c_squared(h0: f64, hu: f64) -> Result<f64> {
    if !(h0 > 0.0 && hu > h0 && hu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < h0 < hu, got h0 = {h0}, hu = {hu}"
        )));
    }
    let delta = (hu - h0) / h0;
    Ok(-(1.0 + delta + delta * delta / 6.0))
}

/// Both sides of the identity
/// `Σ g_i h_i² = h_0² ((ΣC²)² − ΣC³ ΣC) / (B ΣC² − (ΣC)²)`
/// for a `(1, h_i)` design. The left side uses the QR projector.
pub fn bias_coefficient_identity(design: &BandwidthDesign) -> Result<(f64, f64)> {
    if design.columns != [LinkColumn::H] {
        return Err(Error::InvalidDesign(
            "identity applies to the (1, h) design only".into(),
        ));
    }
    let w = projector_weights(design)?;
    let lhs = w
        .g
        .iter()
        .zip(&design.h)
        .map(|(g, h)| g * h * h)
        .collect::<KahanSum>()
        .value();
    let c = design.multipliers();
    let n = c.len() as f64;
    let s1: f64 = c.iter().sum();
    let s2: f64 = c.iter().map(|x| x * x).sum();
    let s3: f64 = c.iter().map(|x| x * x * x).sum();
    let denom = n * s2 - s1 * s1;
    if !(denom > 0.0) {
        return Err(Error::DegenerateDesign("zero spread of multipliers".into()));
    }
    let rhs = design.base_h * design.base_h * (s2 * s2 - s3 * s1) / denom;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn design_matrix_examples() {
        let d = BandwidthDesign::intercept_only(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(build_design_matrix(&d), DMatrix::from_element(3, 1, 1.0));
        let d = BandwidthDesign::h1(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            build_design_matrix(&d),
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0])
        );
        let d = BandwidthDesign::h2(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(
            build_design_matrix(&d),
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.1, 1.0, 2.0, 0.2, 1.0, 3.0, 0.3])
        );
        assert_eq!(projector_weights(&d), Err(Error::SingularDesign));
    }

    #[test]
    fn design_validation() {
        assert!(BandwidthDesign::h1(vec![1.0]).is_err());
        assert!(BandwidthDesign::h1(vec![1.0, 1.0, 2.0]).is_err());
        assert!(BandwidthDesign::h1(vec![1.0, -2.0]).is_err());
        assert!(BandwidthDesign::h2(vec![1.0, 2.0, 3.0], vec![1.0, 2.0]).is_err());
        assert!(BandwidthDesign::new(vec![1.0, 2.0], None, vec![LinkColumn::B], 1.0, None).is_err());
        assert!(BandwidthDesign::pilot(0.5).is_ok());
    }

    #[test]
    fn projector_examples() {
        let d = BandwidthDesign::intercept_only(vec![0.5, 0.7, 0.9, 1.1]).unwrap();
        let w = projector_weights(&d).unwrap();
        for g in w.g() {
            assert_abs_diff_eq!(*g, 0.25, epsilon = 1e-14);
        }
        let w = projector_weights(&BandwidthDesign::h1(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(w.g()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.g()[1], -1.0, epsilon = 1e-12);
        let w = projector_weights(&BandwidthDesign::h1(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        for (g, e) in w.g().iter().zip([4.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0]) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.column_residuals()[0].1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_equation_oracle_agrees() {
        // 2x2 normal equations solved by Cramer's rule.
        let h = [1.0, 2.0];
        let (n, s1, s2) = (2.0, 3.0, 5.0);
        let det = n * s2 - s1 * s1;
        let oracle: Vec<f64> = h.iter().map(|hi| (s2 - s1 * hi) / det).collect();
        let w = closed_form_weights_h1(&h).unwrap();
        assert_eq!(w.g(), oracle.as_slice());
        assert_eq!(oracle, vec![2.0, -1.0]);
    }

    #[test]
    fn ill_conditioned_design_is_rejected() {
        let d = BandwidthDesign::h1(vec![1.0, 1.0 + 1e-7]).unwrap();
        assert!(matches!(
            projector_weights(&d),
            Err(Error::IllConditionedDesign { .. })
        ));
        assert!(projector_weights_with_cap(&d, 1e20).is_ok());
    }

    #[test]
    fn closed_form_examples() {
        let a = closed_form_weights_h1(&[1.0, 2.0]).unwrap();
        let b = closed_form_weights_h1(&[10.0, 20.0]).unwrap();
        assert_eq!(a.g(), &[2.0, -1.0]);
        for (x, y) in a.g().iter().zip(b.g()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert!(matches!(closed_form_weights_h1(&[1.0, 1.0]), Err(Error::DegenerateDesign(_))));
        assert!(matches!(closed_form_weights_h1(&[1.0]), Err(Error::DegenerateDesign(_))));
        let qr = projector_weights(a.design()).unwrap();
        assert_abs_diff_eq!(a.condition_number(), qr.condition_number(), epsilon = 1e-8 * qr.condition_number());
    }

    #[test]
    fn combine_examples() {
        let w = projector_weights(&BandwidthDesign::h1(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(combine(&[5.0, 7.0], &w).unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(combine(&[4.2, 4.2], &w).unwrap(), 4.2, epsilon = 1e-12);
        assert!(matches!(combine(&[1.0], &w), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn remark_limit_examples() {
        assert_abs_diff_eq!(limit_sum_g_c_squared(1.0, 2.0).unwrap(), -13.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(limit_sum_g_c_squared(1.0, 1.0 + 1e-9).unwrap(), -1.0, epsilon = 1e-8);
        assert!(limit_sum_g_c_squared(2.0, 1.0).is_err());
    }

    #[test]
    fn bias_identity_examples() {
        let (l, r) = bias_coefficient_identity(&BandwidthDesign::h1(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(l, -10.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, -10.0 / 3.0, epsilon = 1e-12);
        let (l, r) = bias_coefficient_identity(&BandwidthDesign::h1(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(l, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, -2.0, epsilon = 1e-12);
        let scaled = BandwidthDesign::h1(vec![10.0, 20.0, 30.0]).unwrap().with_base(10.0).unwrap();
        let (l, r) = bias_coefficient_identity(&scaled).unwrap();
        assert_abs_diff_eq!(l, -1000.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, -1000.0 / 3.0, epsilon = 1e-9);
    }

    fn distinct_bandwidths(max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..5.0, 3..max).prop_filter("distinct", |v| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 1e-3)
        })
    }

    proptest! {
        #[test]
        fn weight_identities_hold(h in distinct_bandwidths(30)) {
            let w = projector_weights(&BandwidthDesign::h1(h.clone()).unwrap()).unwrap();
            prop_assert!((w.sum() - 1.0).abs() < 1e-10);
            prop_assert!(w.column_residuals()[0].1.abs() < 1e-10);
            let cf = closed_form_weights_h1(&h).unwrap();
            for (a, b) in w.g().iter().zip(cf.g()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn combine_recovers_intercept(h in distinct_bandwidths(20), b0 in -10.0f64..10.0, b1 in -10.0f64..10.0) {
            let w = projector_weights(&BandwidthDesign::h1(h.clone()).unwrap()).unwrap();
            let v: Vec<f64> = h.iter().map(|x| b0 + b1 * x).collect();
            prop_assert!((combine(&v, &w).unwrap() - b0).abs() < 1e-9);
        }

        #[test]
        fn weights_invariant_to_base_scaling(h in distinct_bandwidths(20), s in 0.1f64..10.0) {
            let d = BandwidthDesign::h1(h).unwrap();
            let a = projector_weights(&d).unwrap();
            let b = projector_weights(&d.scaled(s).unwrap()).unwrap();
            for (x, y) in a.g().iter().zip(b.g()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
