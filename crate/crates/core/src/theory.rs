//! Asymptotic bias and variance constants of the pilot and bias-reduced
//! estimators, evaluated by adaptive quadrature for a given one-sided kernel
//! and a model `τ₀` of the limiting concentration of distances inside the
//! bandwidth ball.
//!
//! ```text
//! M₀ = K(1) − ∫₀¹ (sK(s))′ τ₀(s) ds
//! M₁ = K(1) − ∫₀¹ K′(s) τ₀(s) ds
//! M₃ = ∫₀¹ (s²K′(s) + 2sK(s)) τ₀(s) ds
//! M₂(i₁,i₂) = K(1) K(ρ) − ∫₀¹ K(s) K′(sρ) τ₀(s) ds,   ρ = C_{i₂}/C_{i₁}
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biasred::WeightVector;
use crate::error::{Error, Result};
use crate::estimator::DistanceProfile;
use crate::kernels::OneSidedKernel;
use crate::quadrature::{adaptive_simpson, DEFAULT_TOLERANCE};

/// Limiting small-ball ratio `τ₀(s) = lim L(hs)/L(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SmallBallModel {
    /// `τ₀(s) = s^γ`, the fractal-type case.
    Power { gamma: f64 },
    /// `τ₀(s) = 1{s = 1}`, the limit of very concentrated (exponential-type) processes.
    Dirac,
    /// Piecewise-linear interpolation of `(s, τ₀(s))` knots spanning `[0, 1]`.
    Table { knots: Vec<(f64, f64)> },
}

impl SmallBallModel {
    pub fn power(gamma: f64) -> Result<Self> {
        let m = SmallBallModel::Power { gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        let m = SmallBallModel::Table { knots };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmallBallModel::Power { gamma } if !(gamma.is_finite() && *gamma >= 0.0) => Err(
                Error::InvalidParameter(format!("power exponent must be >= 0, got {gamma}")),
            ),
            SmallBallModel::Table { knots } => {
                let bad = |msg: &str| Err(Error::InvalidParameter(format!("tau table: {msg}")));
                if knots.len() < 2 {
                    return bad("need at least two knots");
                }
                if knots[0].0 != 0.0 || knots[knots.len() - 1] != (1.0, 1.0) {
                    return bad("knots must start at s = 0 and end at (1, 1)");
                }
                if knots.iter().any(|&(_, t)| !(0.0..=1.0).contains(&t)) {
                    return bad("values must lie in [0, 1]");
                }
                if knots.windows(2).any(|w| !(w[0].0 < w[1].0 && w[0].1 <= w[1].1)) {
                    return bad("knots must be increasing in s and nondecreasing in value");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `τ₀(s)`. For `s > 1` the power family is extended by `s^γ`; the other
    /// families saturate at 1.
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            SmallBallModel::Power { gamma } => {
                if s <= 0.0 {
                    if *gamma == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    s.powf(*gamma)
                }
            }
            SmallBallModel::Dirac => {
                if s >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SmallBallModel::Table { knots } => {
                if s >= 1.0 {
                    return 1.0;
                }
                if s <= 0.0 {
                    return knots[0].1;
                }
                let i = knots.partition_point(|k| k.0 <= s);
                let (s0, t0) = knots[i - 1];
                let (s1, t1) = knots[i];
                t0 + (t1 - t0) * (s - s0) / (s1 - s0)
            }
        }
    }

    /// `∫_a^b f(s) τ₀(s) ds` for `0 <= a <= b <= 1`.
    pub fn integrate_against<F>(&self, f: F, a: f64, b: f64, tol: f64) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        match self {
            SmallBallModel::Dirac => Ok(0.0),
            SmallBallModel::Power { .. } => adaptive_simpson(|s| f(s) * self.eval(s), a, b, tol),
            SmallBallModel::Table { knots } => {
                // split at the kinks
                let mut cuts = vec![a];
                cuts.extend(knots.iter().map(|k| k.0).filter(|&s| s > a && s < b));
                cuts.push(b);
                let share = tol / (cuts.len() - 1) as f64;
                cuts.windows(2)
                    .map(|w| adaptive_simpson(|s| f(s) * self.eval(s), w[0], w[1], share))
                    .sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MConstants {
    pub m0: f64,
    pub m1: f64,
    pub m3: f64,
}

/// Local behaviour of `φ(s) = E[m(X) − m(χ) | ‖X − χ‖ = s]` at zero, plus the
/// response-smoothing bias scales of the density transform.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PhiLocalSmoothness {
    pub phi_prime0: f64,
    pub phi_doubleprime0: f64,
    /// `½ ∫v²K₀ · ∂²f/∂y²`, the coefficient of `b²`.
    pub remainder_scale: f64,
    /// `(1/24) ∫v⁴K₀ · ∂⁴f/∂y⁴`, the coefficient of `b⁴`.
    pub fourth_order_scale: f64,
}

pub fn compute_m_constants(kernel: OneSidedKernel, tau: &SmallBallModel) -> Result<MConstants> {
    compute_m_constants_with_tol(kernel, tau, DEFAULT_TOLERANCE)
}

pub fn compute_m_constants_with_tol(
    kernel: OneSidedKernel,
    tau: &SmallBallModel,
    tol: f64,
) -> Result<MConstants> {
    tau.validate()?;
    let k = |s: f64| kernel.eval(s);
    let dk = |s: f64| kernel.derivative(s);
    let k1 = k(1.0);
    let m0 = k1 - tau.integrate_against(|s| k(s) + s * dk(s), 0.0, 1.0, tol)?;
    let m1 = k1 - tau.integrate_against(dk, 0.0, 1.0, tol)?;
    let m3 = tau.integrate_against(|s| s * s * dk(s) + 2.0 * s * k(s), 0.0, 1.0, tol)?;
    Ok(MConstants { m0, m1, m3 })
}

/// Single entry `M₂` for the ratio `ρ = C_{i₂}/C_{i₁}`. `K′(sρ)` vanishes for
/// `sρ > 1`, so the integral is clipped at `min(1, 1/ρ)`.
pub fn m2_entry(kernel: OneSidedKernel, tau: &SmallBallModel, ratio: f64, tol: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "multiplier ratio must be positive, got {ratio}"
        )));
    }
    let upper = (1.0 / ratio).min(1.0);
    let integral = tau.integrate_against(
        |s| kernel.eval(s) * kernel.derivative((s * ratio).min(1.0)),
        0.0,
        upper,
        tol,
    )?;
    Ok(kernel.eval(1.0) * kernel.eval(ratio) - integral)
}

/// `B × B` matrix of `M₂(i₁, i₂)`; rows are evaluated in parallel.
pub fn compute_m2(kernel: OneSidedKernel, tau: &SmallBallModel, multipliers: &[f64]) -> Result<DMatrix<f64>> {
    tau.validate()?;
    if let Some(c) = multipliers.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "multipliers must be positive, found {c}"
        )));
    }
    let n = multipliers.len();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| m2_entry(kernel, tau, multipliers[j] / multipliers[i], DEFAULT_TOLERANCE))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// `Σ_{i₁,i₂} g_{i₁} g_{i₂} τ₀(1/C_{i₁}) M₂(i₁,i₂) / M₁²`.
pub fn variance_factor_from(
    m1: f64,
    m2: &DMatrix<f64>,
    g: &[f64],
    tau: &SmallBallModel,
    multipliers: &[f64],
) -> Result<f64> {
    let n = g.len();
    if m2.shape() != (n, n) || multipliers.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: multipliers.len().min(m2.nrows()),
        });
    }
    let scale = DVector::from_iterator(
        n,
        (0..n).map(|i| g[i] * tau.eval(1.0 / multipliers[i])),
    );
    let gv = DVector::from_column_slice(g);
    Ok(scale.dot(&(m2 * gv)) / (m1 * m1))
}

/// Variance factor `Γ` of a weighted combination: multiplies
/// `D_Φ(χ) / (n L_χ(h₀))` in the asymptotic variance.
pub fn predicted_variance_factor(
    weights: &WeightVector,
    tau: &SmallBallModel,
    kernel: OneSidedKernel,
) -> Result<f64> {
    let c = weights.design().multipliers();
    let m = compute_m_constants(kernel, tau)?;
    let m2 = compute_m2(kernel, tau, &c)?;
    variance_factor_from(m.m1, &m2, weights.g(), tau, &c)
}

/// `S(χ,Φ) = ½ Σ g_i C_i² φ″(0) M₃/M₁` with `C_i = h_i / h0`.
pub fn second_order_bias_coefficient(
    constants: &MConstants,
    smooth: &PhiLocalSmoothness,
    weights: &WeightVector,
    h0: f64,
) -> f64 {
    let sum: f64 = weights
        .g()
        .iter()
        .zip(weights.design().bandwidths())
        .map(|(g, h)| g * (h / h0) * (h / h0))
        .sum();
    0.5 * sum * smooth.phi_doubleprime0 * constants.m3 / constants.m1
}

/// Leading bias of the reduced estimator, `S h₀²` plus the response-smoothing
/// terms. Rows with their own response bandwidth contribute `Σ g_i b_i²`
/// (and `b_i⁴`); otherwise the common `b` is used.
pub fn predicted_bias(
    constants: &MConstants,
    smooth: &PhiLocalSmoothness,
    weights: &WeightVector,
    h0: f64,
    b: Option<f64>,
) -> f64 {
    let s = second_order_bias_coefficient(constants, smooth, weights, h0);
    let density = match weights.design().response_bandwidths() {
        Some(bs) => weights
            .g()
            .iter()
            .zip(bs)
            .map(|(g, b)| g * (smooth.remainder_scale * b * b + smooth.fourth_order_scale * b.powi(4)))
            .sum(),
        None => b.map_or(0.0, |b| {
            smooth.remainder_scale * b * b + smooth.fourth_order_scale * b.powi(4)
        }),
    };
    s * h0 * h0 + density
}

/// First-order bias of the pilot: `φ′(0) (M₀/M₁) h + remainder_scale · b²`.
pub fn predicted_bias_pilot(
    constants: &MConstants,
    smooth: &PhiLocalSmoothness,
    h: f64,
    b: Option<f64>,
) -> f64 {
    smooth.phi_prime0 * constants.m0 / constants.m1 * h
        + b.map_or(0.0, |b| smooth.remainder_scale * b * b)
}

// Direct forms. Integrating by parts against `dτ₀` gives
//   ∫ s²K dτ₀         = K(1) − M₃
//   ∫ K(s) K(sr) dτ₀  = K(1)K(r) − ∫ (K′(s)K(sr) + r K(s)K′(sr)) τ₀(s) ds
// The theorem-form M₃ and M₂ above omit the boundary term and one product
// term respectively; the functions below use the integrals themselves.

/// `∫ s²K dτ₀ / ∫ K dτ₀`: the coefficient of `½ φ″(0) h²` in the pilot's
/// expectation.
pub fn second_moment_ratio(kernel: OneSidedKernel, tau: &SmallBallModel) -> Result<f64> {
    let m = compute_m_constants(kernel, tau)?;
    Ok((kernel.eval(1.0) - m.m3) / m.m1)
}

/// `∫₀¹ K(s) K(s r) dτ₀(s)`, the limit of `E[K(d/h_i) K(d/h_j)] / L(h_i)` for
/// `r = h_i / h_j`.
pub fn kernel_product_moment(kernel: OneSidedKernel, tau: &SmallBallModel, r: f64, tol: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth ratio must be positive, got {r}")));
    }
    let upper = (1.0 / r).min(1.0);
    let k = |s: f64| kernel.eval(s);
    let dk = |s: f64| kernel.derivative(s);
    let boundary = k(upper) * k((upper * r).min(1.0)) * tau.eval(upper);
    let integral = tau.integrate_against(
        |s| dk(s) * k((s * r).min(1.0)) + r * k(s) * dk((s * r).min(1.0)),
        0.0,
        upper,
        tol,
    )?;
    Ok(boundary - integral)
}

/// Variance factor from the direct moments:
/// `Σ g_i g_j ∫K(s)K(s C_i/C_j)dτ₀ / (τ₀(C_j) M₁²)`, multiplying
/// `σ²(χ) / (n L_χ(h₀))`. For a power-law `τ₀` this is exact in the limit.
pub fn predicted_variance_factor_direct(
    weights: &WeightVector,
    tau: &SmallBallModel,
    kernel: OneSidedKernel,
) -> Result<f64> {
    let c = weights.design().multipliers();
    let g = weights.g();
    let m1 = compute_m_constants(kernel, tau)?.m1;
    let n = c.len();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let scale = tau.eval(c[j]);
                    if scale <= 0.0 {
                        return Err(Error::Degenerate(format!("tau vanishes at C = {}", c[j])));
                    }
                    Ok(g[i] * g[j] * kernel_product_moment(kernel, tau, c[i] / c[j], DEFAULT_TOLERANCE)? / scale)
                })
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rows.iter().sum::<f64>() / (m1 * m1))
}

/// Leading bias of the reduced estimator from the direct second moment:
/// `½ φ″(0) Σ g_i h_i² · ∫s²K dτ₀/∫K dτ₀` plus the response-smoothing terms.
pub fn predicted_bias_direct(
    kernel: OneSidedKernel,
    tau: &SmallBallModel,
    smooth: &PhiLocalSmoothness,
    weights: &WeightVector,
    b: Option<f64>,
) -> Result<f64> {
    let ratio = second_moment_ratio(kernel, tau)?;
    let zero = PhiLocalSmoothness {
        phi_prime0: 0.0,
        phi_doubleprime0: 0.0,
        ..*smooth
    };
    let unit = MConstants { m0: 0.0, m1: 1.0, m3: 0.0 };
    let density = predicted_bias(&unit, &zero, weights, 1.0, b);
    let sum: f64 = weights
        .g()
        .iter()
        .zip(weights.design().bandwidths())
        .map(|(g, h)| g * h * h)
        .sum();
    Ok(0.5 * smooth.phi_doubleprime0 * ratio * sum + density)
}

/// Everything the `constants` report needs for one kernel, `τ₀` and design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub m0: f64,
    pub m1: f64,
    pub m3: f64,
    pub m2: Vec<Vec<f64>>,
    pub gamma_var: f64,
    pub s_bias: Option<f64>,
    /// `∫s²K dτ₀ / ∫K dτ₀`, see [`second_moment_ratio`].
    pub second_moment_ratio: f64,
    /// See [`predicted_variance_factor_direct`].
    pub gamma_var_direct: f64,
}

pub fn theory_constants(
    kernel: OneSidedKernel,
    tau: &SmallBallModel,
    weights: &WeightVector,
    smooth: Option<&PhiLocalSmoothness>,
) -> Result<TheoryConstants> {
    let m = compute_m_constants(kernel, tau)?;
    let c = weights.design().multipliers();
    let m2 = compute_m2(kernel, tau, &c)?;
    let gamma_var = variance_factor_from(m.m1, &m2, weights.g(), tau, &c)?;
    let s_bias = smooth
        .map(|s| second_order_bias_coefficient(&m, s, weights, weights.design().base()));
    Ok(TheoryConstants {
        m0: m.m0,
        m1: m.m1,
        m3: m.m3,
        m2: m2.row_iter().map(|r| r.iter().copied().collect()).collect(),
        gamma_var,
        s_bias,
        second_moment_ratio: (kernel.eval(1.0) - m.m3) / m.m1,
        gamma_var_direct: predicted_variance_factor_direct(weights, tau, kernel)?,
    })
}

/// Empirical small-ball probability `L̂(t)`: share of curves within distance `t`.
pub fn empirical_small_ball(profile: &DistanceProfile, t: f64) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    profile.distances().filter(|&d| d <= t).count() as f64 / profile.len() as f64
}

/// Empirical `τ_h(s) = L̂(hs) / L̂(h)`, or `None` when the ball of radius `h` is empty.
pub fn empirical_tau(profile: &DistanceProfile, h: f64, s: f64) -> Option<f64> {
    let base = empirical_small_ball(profile, h);
    (base > 0.0).then(|| empirical_small_ball(profile, h * s) / base)
}

/// Heuristic `φ′(0)`, `φ″(0)` from a least-squares quadratic fit of the
/// responses against distance inside the ball of radius `h`. Not a consistent
/// estimator of the derivatives in general; intended for plugging rough
/// values into [`predicted_bias`].
pub fn estimate_phi_derivatives(profile: &DistanceProfile, h: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = profile
        .pairs()
        .iter()
        .copied()
        .filter(|(d, _)| *d <= h)
        .collect();
    if pts.len() < 3 {
        return Err(Error::EmptyNeighborhood { h });
    }
    let x = DMatrix::from_fn(pts.len(), 3, |i, j| pts[i].0.powi(j as i32));
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let qr = x.qr();
    let rhs = qr.q().transpose() * y;
    let coef = qr
        .r()
        .solve_upper_triangular(&rhs)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularDesign)?;
    Ok((coef[1], 2.0 * coef[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasred::{projector_weights, BandwidthDesign};
    use crate::design::{centered_equidistant, fixed_interval, two_cluster};
    use approx::assert_abs_diff_eq;

    fn power(g: f64) -> SmallBallModel {
        SmallBallModel::power(g).unwrap()
    }

    #[test]
    fn m_constants_match_polynomial_integration() {
        // K = 2 - s, τ0 = s: M1 = 1 + 1/2, M0 = 1 - ∫(2-2s)s, M3 = ∫(4s² - 3s³)
        let m = compute_m_constants(OneSidedKernel::ShiftedLinear, &power(1.0)).unwrap();
        assert_abs_diff_eq!(m.m1, 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m0, 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m3, 7.0 / 12.0, epsilon = 1e-10);
        // K = 1.5(1 - s²), τ0 = s: M1 = ∫3s², M0 = -∫1.5(1-3s²)s, M3 = ∫(3s² - 6s⁴)
        let m = compute_m_constants(OneSidedKernel::Quadratic, &power(1.0)).unwrap();
        assert_abs_diff_eq!(m.m1, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m0, 3.0 / 8.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m3, -0.2, epsilon = 1e-10);
        // K = 2(1 - s), τ0 = s²: M1 = ∫2s², M0 = -∫(2-4s)s², M3 = ∫(4s - 6s²)s²
        let m = compute_m_constants(OneSidedKernel::Triangular, &power(2.0)).unwrap();
        assert_abs_diff_eq!(m.m1, 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.m0, -(2.0 / 3.0 - 1.0), epsilon = 1e-10);
        assert_abs_diff_eq!(m.m3, 1.0 - 1.2, epsilon = 1e-10);
    }

    #[test]
    fn m1_is_k0_when_tau_is_one() {
        for k in OneSidedKernel::ALL {
            let m = compute_m_constants(k, &power(0.0)).unwrap();
            assert_abs_diff_eq!(m.m1, k.eval(0.0), epsilon = 1e-10);
            let flat = SmallBallModel::table(vec![(0.0, 1.0), (1.0, 1.0)]).unwrap();
            let m = compute_m_constants(k, &flat).unwrap();
            assert_abs_diff_eq!(m.m1, k.eval(0.0), epsilon = 1e-10);
        }
    }

    #[test]
    fn dirac_model_keeps_boundary_terms() {
        let m = compute_m_constants(OneSidedKernel::ShiftedLinear, &SmallBallModel::Dirac).unwrap();
        assert_eq!((m.m0, m.m1, m.m3), (1.0, 1.0, 0.0));
    }

    #[test]
    fn table_model_matches_power_when_linear() {
        let t = SmallBallModel::table(vec![(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]).unwrap();
        for k in OneSidedKernel::ALL {
            let a = compute_m_constants(k, &t).unwrap();
            let b = compute_m_constants(k, &power(1.0)).unwrap();
            assert_abs_diff_eq!(a.m0, b.m0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.m1, b.m1, epsilon = 1e-9);
            assert_abs_diff_eq!(a.m3, b.m3, epsilon = 1e-9);
        }
        assert!(SmallBallModel::table(vec![(0.0, 0.5), (1.0, 0.9)]).is_err());
        assert!(SmallBallModel::table(vec![(0.0, 0.6), (0.5, 0.4), (1.0, 1.0)]).is_err());
        assert!(SmallBallModel::power(-1.0).is_err());
    }

    #[test]
    fn m2_examples() {
        let k = OneSidedKernel::Quadratic;
        // ρ = 1: -∫ 1.5(1-s²)(-3s) s ds = 4.5 (1/3 - 1/5)
        assert_abs_diff_eq!(m2_entry(k, &power(1.0), 1.0, 1e-10).unwrap(), 0.6, epsilon = 1e-10);
        // ρ = 2: integral over [0, 1/2] only; -∫ 1.5(1-s²)(-6s) s ds on [0, 1/2]
        let oracle = 9.0 * (0.125 / 3.0 - 0.03125 / 5.0);
        assert_abs_diff_eq!(m2_entry(k, &power(1.0), 2.0, 1e-10).unwrap(), oracle, epsilon = 1e-10);
        // shifted linear, ρ = 1/2: K(1)K(1/2) - ∫ (2-s)(-1) s ds = 1.5 + (1 - 1/3)
        let v = m2_entry(OneSidedKernel::ShiftedLinear, &power(1.0), 0.5, 1e-10).unwrap();
        assert_abs_diff_eq!(v, 1.5 + 2.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn m2_matrix_on_cluster_design_is_finite() {
        let d = two_cluster((0.9, 0.91), (1.09, 1.1), 20, 0.5).unwrap();
        let m = compute_m2(OneSidedKernel::Quadratic, &power(1.5), &d.multipliers()).unwrap();
        assert_eq!(m.shape(), (20, 20));
        assert!(m.iter().all(|v| v.is_finite()));
        for i in 0..20 {
            assert_abs_diff_eq!(m[(i, i)], m2_entry(OneSidedKernel::Quadratic, &power(1.5), 1.0, 1e-8).unwrap(), epsilon = 1e-7);
        }
    }

    #[test]
    fn variance_factor_examples() {
        let tau = power(1.0);
        let k = OneSidedKernel::ShiftedLinear;
        let pilot = projector_weights(&BandwidthDesign::pilot(1.3).unwrap()).unwrap();
        let m = compute_m_constants(k, &tau).unwrap();
        let m22 = m2_entry(k, &tau, 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(
            predicted_variance_factor(&pilot, &tau, k).unwrap(),
            tau.eval(1.0) * m22 / (m.m1 * m.m1),
            epsilon = 1e-9
        );

        // h = (1, 2), g = (2, -1), C = h: hand contraction of the 2x2 matrix
        let w = projector_weights(&BandwidthDesign::h1(vec![1.0, 2.0]).unwrap()).unwrap();
        let c = [1.0, 2.0];
        let g = [2.0, -1.0];
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                oracle += g[i] * g[j] * tau.eval(1.0 / c[i]) * m2_entry(k, &tau, c[j] / c[i], 1e-10).unwrap();
            }
        }
        oracle /= m.m1 * m.m1;
        let v = predicted_variance_factor(&w, &tau, k).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-8);
        assert!(v.is_finite() && v > 0.0);
        let scaled = predicted_variance_factor(&projector_weights(&w.design().scaled(3.0).unwrap()).unwrap(), &tau, k).unwrap();
        assert_abs_diff_eq!(v, scaled, epsilon = 1e-8);
    }

    #[test]
    fn reduced_to_pilot_variance_ratio_is_moderate() {
        let tau = power(1.0);
        let k = OneSidedKernel::ShiftedLinear;
        let pilot = projector_weights(&BandwidthDesign::pilot(1.0).unwrap()).unwrap();
        let p = predicted_variance_factor(&pilot, &tau, k).unwrap();
        for d in [
            fixed_interval(0.9, 1.1, 20).unwrap().with_base(1.0).unwrap(),
            two_cluster((0.9, 0.91), (1.09, 1.1), 20, 0.5).unwrap().with_base(1.0).unwrap(),
            centered_equidistant(1.0, 21, 0.01).unwrap(),
        ] {
            let r = predicted_variance_factor(&projector_weights(&d).unwrap(), &tau, k).unwrap();
            assert!(r.is_finite());
            let ratio = r / p;
            assert!(ratio.abs() < 1e6, "ratio {ratio}");
        }
    }

    #[test]
    fn bias_predictions() {
        let m = compute_m_constants(OneSidedKernel::ShiftedLinear, &power(1.0)).unwrap();
        let w = projector_weights(&centered_equidistant(1.0, 5, 0.1).unwrap()).unwrap();
        let flat = PhiLocalSmoothness {
            phi_prime0: 3.0,
            ..Default::default()
        };
        assert_eq!(predicted_bias(&m, &flat, &w, 1.0, None), 0.0);
        let smooth = PhiLocalSmoothness {
            phi_prime0: 1.0,
            phi_doubleprime0: 2.0,
            ..Default::default()
        };
        let b1 = predicted_bias(&m, &smooth, &w, 0.5, None);
        let w2 = projector_weights(&w.design().scaled(2.0).unwrap()).unwrap();
        let b2 = predicted_bias(&m, &smooth, &w2, 1.0, None);
        assert_abs_diff_eq!(b2, 4.0 * b1, epsilon = 1e-10);
        // S h0² equals ½ φ″ M3/M1 Σ g h²
        let direct: f64 = w.g().iter().zip(w.design().bandwidths()).map(|(g, h)| g * h * h).sum::<f64>()
            * 0.5 * 2.0 * m.m3 / m.m1;
        assert_abs_diff_eq!(b1, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(predicted_bias_pilot(&m, &smooth, 0.5, None), 0.5 * m.m0 / m.m1, epsilon = 1e-14);

        let dens = PhiLocalSmoothness {
            remainder_scale: 0.7,
            ..Default::default()
        };
        assert_abs_diff_eq!(predicted_bias(&m, &dens, &w, 1.0, Some(0.2)), 0.7 * 0.04, epsilon = 1e-14);
    }

    #[test]
    fn direct_moments_match_closed_forms() {
        let tau = power(1.0);
        // quadratic, τ = s: ∫s²K ds / ∫K ds = 1.5(1/3 − 1/5) = 0.2
        assert_abs_diff_eq!(second_moment_ratio(OneSidedKernel::Quadratic, &tau).unwrap(), 0.2, epsilon = 1e-10);
        // shifted linear, τ = s: ∫s²(2−s) / ∫(2−s) = (2/3 − 1/4) / (3/2)
        assert_abs_diff_eq!(
            second_moment_ratio(OneSidedKernel::ShiftedLinear, &tau).unwrap(),
            (2.0 / 3.0 - 0.25) / 1.5,
            epsilon = 1e-10
        );
        // ∫K² ds = 2.25 · 8/15 for the quadratic kernel
        let k2 = kernel_product_moment(OneSidedKernel::Quadratic, &tau, 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(k2, 1.2, epsilon = 1e-9);
        // r = 2: ∫₀^½ (2 − s)(2 − 2s) ds
        let v = kernel_product_moment(OneSidedKernel::ShiftedLinear, &tau, 2.0, 1e-10).unwrap();
        let oracle = adaptive_simpson(|s| (2.0 - s) * (2.0 - 2.0 * s), 0.0, 0.5, 1e-12).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
        // r = 1/2 with τ = s²: ∫ (2 − s)(2 − s/2) 2s ds
        let oracle = adaptive_simpson(|s| (2.0 - s) * (2.0 - s / 2.0) * 2.0 * s, 0.0, 1.0, 1e-12).unwrap();
        let v = kernel_product_moment(OneSidedKernel::ShiftedLinear, &power(2.0), 0.5, 1e-10).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
    }

    #[test]
    fn direct_variance_factor_of_pilot_is_classical() {
        // single bandwidth: ∫K² dτ / (∫K dτ)²
        let pilot = projector_weights(&BandwidthDesign::pilot(0.7).unwrap()).unwrap();
        let v = predicted_variance_factor_direct(&pilot, &power(1.0), OneSidedKernel::Quadratic).unwrap();
        assert_abs_diff_eq!(v, 1.2, epsilon = 1e-8);
    }

    #[test]
    fn empirical_diagnostics() {
        let p = DistanceProfile::from_pairs((1..=10).map(|i| (i as f64 / 10.0, 0.0)).collect());
        assert_abs_diff_eq!(empirical_small_ball(&p, 0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(empirical_tau(&p, 1.0, 0.3).unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(empirical_tau(&p, 0.01, 0.5), None);

        let q = DistanceProfile::from_pairs(
            (0..50).map(|i| {
                let d = i as f64 / 50.0;
                (d, 1.0 + 2.0 * d - 1.5 * d * d)
            }).collect(),
        );
        let (d1, d2) = estimate_phi_derivatives(&q, 1.0).unwrap();
        assert_abs_diff_eq!(d1, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d2, -3.0, epsilon = 1e-9);
    }
}
