//! Sampled curves on uniform grids, the L2 semimetric, and the synthetic
//! curve process used by the Monte Carlo harness.
//!
//! Curves are stored as values on a shared uniform grid. Integrals use the
//! trapezoid rule; derivatives use second-order finite differences (central in
//! the interior, one-sided three-point stencils at the endpoints), so affine
//! curves are differentiated exactly.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[t_min, t_max]` with `n_points` nodes (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t_min: f64,
    t_max: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(t_min: f64, t_max: f64, n_points: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
            return Err(Error::InvalidGrid(format!(
                "need finite t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        Ok(Self {
            t_min,
            t_max,
            n_points,
        })
    }

    /// The 101-point grid on `[-1, 1]` used by the simulation study.
    pub fn standard() -> Self {
        Self::new(-1.0, 1.0, 101).expect("static grid is valid")
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.t_max
        } else {
            self.t_min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Rebuild a grid from explicit abscissae, checking uniform spacing.
    pub fn from_points(ts: &[f64]) -> Result<Self> {
        if ts.len() < 2 {
            return Err(Error::InvalidGrid("fewer than 2 abscissae".into()));
        }
        let grid = Self::new(ts[0], ts[ts.len() - 1], ts.len())?;
        let tol = 1e-9 * grid.spacing().max(1.0);
        for (i, &t) in ts.iter().enumerate() {
            if (t - grid.point(i)).abs() > tol {
                return Err(Error::InvalidGrid(format!(
                    "abscissa {i} = {t} breaks uniform spacing"
                )));
            }
        }
        Ok(grid)
    }
}

/// Real-valued function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    grid: Grid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidCurve(format!(
                "{} values for a {}-point grid",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve(format!("value {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f` at every grid node.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Self::new(grid, grid.points().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Curve> {
        Curve::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Curve, f: F) -> Result<Curve> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Curve::new(self.grid, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidCurve(e.to_string());
        w.write_record(["t", "value"]).map_err(io)?;
        for (t, v) in self.grid.points().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidCurve(e.to_string()))?;
        Ok(())
    }

    /// Read a two-column `t,value` CSV with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidCurve(e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::InvalidCurve(format!(
                    "row {line}: expected 2 columns, got {}",
                    record.len()
                )));
            }
            ts.push(parse_field(&record[0], line)?);
            vs.push(parse_field(&record[1], line)?);
        }
        Curve::new(Grid::from_points(&ts)?, vs)
    }
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidCurve(format!("row {line}: cannot parse `{s}`")))
}

/// Trapezoid-rule approximation of the integral of `c` over its grid.
pub fn trapezoid_integral(c: &Curve) -> f64 {
    trapezoid(c.values(), c.grid().spacing())
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// L2 distance `sqrt(∫ (c1 - c2)^2 dt)` by the trapezoid rule.
pub fn l2_distance(c1: &Curve, c2: &Curve) -> Result<f64> {
    if c1.grid != c2.grid {
        return Err(Error::GridMismatch);
    }
    let n = c1.values.len();
    let sq = |i: usize| {
        let d = c1.values[i] - c2.values[i];
        d * d
    };
    let inner: f64 = (1..n - 1).map(sq).sum();
    let integral = c1.grid.spacing() * (inner + 0.5 * (sq(0) + sq(n - 1)));
    Ok(integral.max(0.0).sqrt())
}

/// Distance between sampled curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// [`l2_distance`].
    #[default]
    L2,
    /// L2 distance with respect to the uniform probability measure on the
    /// grid interval: `l2_distance / sqrt(t_max − t_min)` (root mean square).
    L2Mean,
}

impl Metric {
    pub fn distance(self, c1: &Curve, c2: &Curve) -> Result<f64> {
        let d = l2_distance(c1, c2)?;
        Ok(match self {
            Metric::L2 => d,
            Metric::L2Mean => d / (c1.grid.t_max - c1.grid.t_min).sqrt(),
        })
    }
}

/// Finite-difference derivative: central differences in the interior and
/// second-order one-sided stencils at both endpoints.
pub fn finite_difference_derivative(c: &Curve) -> Result<Curve> {
    let n = c.grid.n_points();
    if n < 3 {
        return Err(Error::InsufficientGrid(n));
    }
    let v = &c.values;
    let two_dt = 2.0 * c.grid.spacing();
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * v[0] + 4.0 * v[1] - v[2]) / two_dt);
    for i in 1..n - 1 {
        d.push((v[i + 1] - v[i - 1]) / two_dt);
    }
    d.push((3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / two_dt);
    Curve::new(c.grid, d)
}

/// Regression operator of the simulation study: `∫ |c'(t)| (1 - cos(πt)) dt`.
pub fn true_regression(c: &Curve) -> Result<f64> {
    let d = finite_difference_derivative(c)?;
    Ok(regression_from_derivative(&d))
}

fn regression_from_derivative(d: &Curve) -> f64 {
    let integrand: Vec<f64> = d
        .grid
        .points()
        .zip(&d.values)
        .map(|(t, &v)| v.abs() * (1.0 - (PI * t).cos()))
        .collect();
    trapezoid(&integrand, d.grid.spacing())
}

/// One realisation of the parameters `(a, b, ω)` of the curve process
/// `X(t) = sin(ωt) + t(a + 2π) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessDraw {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

impl ProcessDraw {
    /// Fixed query curve of the simulation study.
    pub const REFERENCE: ProcessDraw = ProcessDraw {
        a: 0.3064023,
        b: 0.3744585,
        omega: 3.826435,
    };

    pub fn eval(&self, t: f64) -> f64 {
        (self.omega * t).sin() + t * (self.a + 2.0 * PI) + self.b
    }

    pub fn eval_derivative(&self, t: f64) -> f64 {
        self.omega * (self.omega * t).cos() + self.a + 2.0 * PI
    }

    pub fn curve(&self, grid: Grid) -> Curve {
        Curve::from_fn(grid, |t| self.eval(t)).expect("process curves are finite")
    }

    /// Analytic derivative sampled on the grid.
    pub fn derivative(&self, grid: Grid) -> Curve {
        Curve::from_fn(grid, |t| self.eval_derivative(t)).expect("process curves are finite")
    }

    /// Regression value using the analytic derivative instead of finite differences.
    pub fn regression_exact_derivative(&self, grid: Grid) -> f64 {
        regression_from_derivative(&self.derivative(grid))
    }
}

/// Parameters of the synthetic curve process and its additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveProcessParams {
    /// Support of the uniform distribution of `a`.
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub omega_range: (f64, f64),
    /// Standard deviation of the response noise. Zero gives noiseless responses.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for CurveProcessParams {
    fn default() -> Self {
        Self {
            a_range: (0.0, 1.0),
            b_range: (0.0, 1.0),
            omega_range: (0.0, 2.0 * PI),
            noise_sd: 2f64.sqrt(),
            seed: 0,
        }
    }
}

impl CurveProcessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        for (name, (lo, hi)) in [
            ("a_range", self.a_range),
            ("b_range", self.b_range),
            ("omega_range", self.omega_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a finite interval, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// The `index`-th draw of `(a, b, ω, ε)`; each index owns an independent
    /// ChaCha stream, so draws do not depend on evaluation order.
    fn draw(&self, index: u64) -> (ProcessDraw, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let a = uniform(&mut rng, self.a_range);
        let b = uniform(&mut rng, self.b_range);
        let omega = uniform(&mut rng, self.omega_range);
        let noise = if self.noise_sd > 0.0 {
            Normal::new(0.0, self.noise_sd)
                .expect("validated noise_sd")
                .sample(&mut rng)
        } else {
            0.0
        };
        (ProcessDraw { a, b, omega }, noise)
    }
}

/// Paired curves and scalar responses sharing one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    grid: Grid,
    curves: Vec<Curve>,
    responses: Vec<f64>,
}

impl FunctionalSample {
    pub fn new(curves: Vec<Curve>, responses: Vec<f64>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidSample("sample is empty".into()));
        }
        if curves.len() != responses.len() {
            return Err(Error::InvalidSample(format!(
                "{} curves but {} responses",
                curves.len(),
                responses.len()
            )));
        }
        let grid = *curves[0].grid();
        if curves.iter().any(|c| *c.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidSample("non-finite response".into()));
        }
        Ok(Self {
            grid,
            curves,
            responses,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Wide CSV: header row of grid abscissae followed by `Y`, then one row
    /// per curve with its response in the last column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidSample(e.to_string());
        let mut header: Vec<String> = self.grid.points().map(|t| t.to_string()).collect();
        header.push("Y".into());
        w.write_record(&header).map_err(io)?;
        for (c, y) in self.curves.iter().zip(&self.responses) {
            let mut row: Vec<String> = c.values().iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidSample(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| Error::InvalidSample(e.to_string()))?
            .clone();
        if headers.len() < 3 || headers[headers.len() - 1].trim() != "Y" {
            return Err(Error::InvalidSample(
                "header must list the grid abscissae followed by `Y`".into(),
            ));
        }
        let ts = headers
            .iter()
            .take(headers.len() - 1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidSample(format!("bad abscissa `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = Grid::from_points(&ts)?;
        let mut curves = Vec::new();
        let mut responses = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidSample(e.to_string()))?;
            let fields = record
                .iter()
                .map(|s| parse_field(s, line))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::InvalidSample(e.to_string()))?;
            let (y, values) = fields
                .split_last()
                .ok_or_else(|| Error::InvalidSample(format!("row {line} is empty")))?;
            curves.push(Curve::new(grid, values.to_vec())?);
            responses.push(*y);
        }
        Self::new(curves, responses)
    }
}

/// Draw `n` i.i.d. pairs `(X_k, Y_k)` with `Y_k = regression(X_k) + ε_k`.
pub fn generate_sample<F>(
    params: &CurveProcessParams,
    n: usize,
    grid: Grid,
    regression: F,
) -> Result<FunctionalSample>
where
    F: Fn(&Curve) -> Result<f64>,
{
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let mut curves = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for k in 0..n as u64 {
        let (draw, noise) = params.draw(k);
        let curve = draw.curve(grid);
        responses.push(regression(&curve)? + noise);
        curves.push(curve);
    }
    FunctionalSample::new(curves, responses)
}

/// Mix a master seed with an index into a new, well-separated seed (SplitMix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
