//! One-sided kernels on `[0, 1]` applied to scaled curve distances, and
//! symmetric kernels on `[-1, 1]` used to smooth responses for conditional
//! densities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Kernel supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneSidedKernel {
    /// `(3/2)(1 - t^2)`; vanishes at `t = 1`.
    Quadratic,
    /// `2 - t`; positive at `t = 1` with constant negative slope.
    ShiftedLinear,
    /// `2(1 - t)`; vanishes at `t = 1`.
    Triangular,
}

impl OneSidedKernel {
    pub const ALL: [OneSidedKernel; 3] = [
        OneSidedKernel::Quadratic,
        OneSidedKernel::ShiftedLinear,
        OneSidedKernel::Triangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OneSidedKernel::Quadratic => "quadratic",
            OneSidedKernel::ShiftedLinear => "shifted_linear",
            OneSidedKernel::Triangular => "triangular",
        }
    }

    pub fn eval(self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            OneSidedKernel::Quadratic => 1.5 * (1.0 - t * t),
            OneSidedKernel::ShiftedLinear => 2.0 - t,
            OneSidedKernel::Triangular => 2.0 * (1.0 - t),
        }
    }

    /// Derivative on `[0, 1]`, taking the left limit at `t = 1`; zero outside
    /// the support.
    pub fn derivative(self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            OneSidedKernel::Quadratic => -3.0 * t,
            OneSidedKernel::ShiftedLinear => -1.0,
            OneSidedKernel::Triangular => -2.0,
        }
    }

    /// `K(1) > 0` with a strictly negative, bounded derivative on `[0, 1)`.
    pub fn satisfies_a4(self) -> bool {
        matches!(self, OneSidedKernel::ShiftedLinear)
    }
}

impl fmt::Display for OneSidedKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OneSidedKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadratic" => Ok(OneSidedKernel::Quadratic),
            "shifted_linear" | "shifted-linear" => Ok(OneSidedKernel::ShiftedLinear),
            "triangular" => Ok(OneSidedKernel::Triangular),
            _ => Err(Error::UnknownKernel(s.to_string())),
        }
    }
}

/// Symmetric second-order kernel supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetricKernel {
    /// `(3/4)(1 - v^2)`
    Epanechnikov,
    /// `(15/16)(1 - v^2)^2`
    Quartic,
}

impl SymmetricKernel {
    pub const ALL: [SymmetricKernel; 2] = [SymmetricKernel::Epanechnikov, SymmetricKernel::Quartic];

    pub fn name(self) -> &'static str {
        match self {
            SymmetricKernel::Epanechnikov => "epanechnikov",
            SymmetricKernel::Quartic => "quartic",
        }
    }

    pub fn eval(self, v: f64) -> f64 {
        if !(-1.0..=1.0).contains(&v) {
            return 0.0;
        }
        let u = 1.0 - v * v;
        match self {
            SymmetricKernel::Epanechnikov => 0.75 * u,
            SymmetricKernel::Quartic => 15.0 / 16.0 * u * u,
        }
    }

    /// `∫ v^2 K0(v) dv`
    pub fn second_moment(self) -> f64 {
        match self {
            SymmetricKernel::Epanechnikov => 0.2,
            SymmetricKernel::Quartic => 1.0 / 7.0,
        }
    }

    /// `∫ v^4 K0(v) dv`
    pub fn fourth_moment(self) -> f64 {
        match self {
            SymmetricKernel::Epanechnikov => 3.0 / 35.0,
            SymmetricKernel::Quartic => 1.0 / 21.0,
        }
    }

    /// `∫ K0(v)^2 dv`
    pub fn square_integral(self) -> f64 {
        match self {
            SymmetricKernel::Epanechnikov => 0.6,
            SymmetricKernel::Quartic => 5.0 / 7.0,
        }
    }
}

impl fmt::Display for SymmetricKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SymmetricKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" | "epan" => Ok(SymmetricKernel::Epanechnikov),
            "quartic" | "biweight" => Ok(SymmetricKernel::Quartic),
            _ => Err(Error::UnknownKernel(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use approx::assert_abs_diff_eq;

    fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        adaptive_simpson(f, a, b, 1e-12).unwrap()
    }

    #[test]
    fn one_sided_examples() {
        assert_eq!("quadratic".parse::<OneSidedKernel>().unwrap().eval(0.0), 1.5);
        let sl: OneSidedKernel = "shifted_linear".parse().unwrap();
        assert_eq!(sl.eval(1.0), 1.0);
        assert!(sl.satisfies_a4());
        assert_eq!(OneSidedKernel::Quadratic.eval(1.0), 0.0);
        assert!(!OneSidedKernel::Quadratic.satisfies_a4());
        assert!(!OneSidedKernel::Triangular.satisfies_a4());
        assert!(matches!("gauss".parse::<OneSidedKernel>(), Err(Error::UnknownKernel(_))));
    }

    #[test]
    fn one_sided_support_and_normalisation() {
        for k in OneSidedKernel::ALL {
            for t in [-1e-9, -0.5, 1.0 + 1e-9, 3.0] {
                assert_eq!(k.eval(t), 0.0);
                assert_eq!(k.derivative(t), 0.0);
            }
            for i in 0..=100 {
                assert!(k.eval(i as f64 / 100.0) >= 0.0);
            }
            // derivative agrees with a central difference of eval
            for &t in &[0.1, 0.4, 0.8] {
                let fd = (k.eval(t + 1e-6) - k.eval(t - 1e-6)) / 2e-6;
                assert_abs_diff_eq!(k.derivative(t), fd, epsilon = 1e-6);
            }
            if k != OneSidedKernel::ShiftedLinear {
                assert_abs_diff_eq!(integrate(|t| k.eval(t), 0.0, 1.0), 1.0, epsilon = 1e-10);
            }
            if k.satisfies_a4() {
                assert!(k.eval(1.0) > 0.0);
                assert!((0..100).all(|i| k.derivative(i as f64 / 100.0) < 0.0));
            }
        }
    }

    #[test]
    fn symmetric_examples() {
        let e = SymmetricKernel::Epanechnikov;
        // closed forms: ∫ v^2 (3/4)(1-v^2) = 1/5, ∫ (9/16)(1-v^2)^2 = 3/5
        assert_abs_diff_eq!(integrate(|v| v * v * e.eval(v), -1.0, 1.0), 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(integrate(|v| e.eval(v).powi(2), -1.0, 1.0), 0.6, epsilon = 1e-10);
        assert_abs_diff_eq!(
            integrate(|v| SymmetricKernel::Quartic.eval(v), -1.0, 1.0),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn stored_moments_match_quadrature() {
        for k in SymmetricKernel::ALL {
            assert_abs_diff_eq!(integrate(|v| k.eval(v), -1.0, 1.0), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(integrate(|v| v * v * k.eval(v), -1.0, 1.0), k.second_moment(), epsilon = 1e-8);
            assert_abs_diff_eq!(integrate(|v| v.powi(4) * k.eval(v), -1.0, 1.0), k.fourth_moment(), epsilon = 1e-8);
            assert_abs_diff_eq!(integrate(|v| k.eval(v).powi(2), -1.0, 1.0), k.square_integral(), epsilon = 1e-8);
            for p in [1, 3, 5] {
                assert_abs_diff_eq!(integrate(|v| v.powi(p) * k.eval(v), -1.0, 1.0), 0.0, epsilon = 1e-12);
            }
            for i in 0..=50 {
                let v = i as f64 / 50.0;
                assert_eq!(k.eval(v), k.eval(-v));
            }
            assert_eq!(k.name().parse::<SymmetricKernel>().unwrap(), k);
        }
    }
}
