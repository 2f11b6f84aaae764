//! Builders for bandwidth grids: equidistant grids centred on a pilot
//! bandwidth, equally spaced grids filling a fixed interval, and two-cluster
//! grids that mimic a two-point optimal design for a straight-line fit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::biasred::{BandwidthDesign, WeightVector};
use crate::error::{Error, Result};
use crate::kernels::OneSidedKernel;
use crate::theory::{predicted_variance_factor, SmallBallModel};

/// Declarative description of a bandwidth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum DesignSpec {
    /// `B` bandwidths `h_center + k·stepwidth`, `k = −(B−1)/2 … (B−1)/2`.
    /// Without `h_center` the pilot bandwidth is used.
    Centered {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h_center: Option<f64>,
        #[serde(rename = "B")]
        count: usize,
        stepwidth: f64,
    },
    /// `h_i = h0 (1 + i (hu − h0) / (h0 B))`, `i = 1 … B`.
    FixedInterval {
        h0: f64,
        hu: f64,
        #[serde(rename = "B")]
        count: usize,
    },
    /// `round(proportion·B)` bandwidths spread over `lo`, the rest over `hi`.
    TwoCluster {
        lo: (f64, f64),
        hi: (f64, f64),
        #[serde(rename = "B")]
        count: usize,
        proportion: f64,
    },
    /// Explicit bandwidth list; `h_0` is the smallest entry.
    Explicit { h: Vec<f64> },
}

impl DesignSpec {
    pub fn build(&self, pilot_h: Option<f64>) -> Result<BandwidthDesign> {
        match *self {
            DesignSpec::Centered {
                h_center,
                count,
                stepwidth,
            } => {
                let center = h_center.or(pilot_h).ok_or_else(|| {
                    Error::InvalidDesign("centered design needs a centre bandwidth".into())
                })?;
                centered_equidistant(center, count, stepwidth)
            }
            DesignSpec::FixedInterval { h0, hu, count } => fixed_interval(h0, hu, count),
            DesignSpec::TwoCluster {
                lo,
                hi,
                count,
                proportion,
            } => two_cluster(lo, hi, count, proportion),
            DesignSpec::Explicit { ref h } => {
                let base = h.iter().copied().fold(f64::INFINITY, f64::min);
                BandwidthDesign::h1(h.clone())?.with_base(base)
            }
        }
    }

    /// Number of bandwidths.
    pub fn count(&self) -> usize {
        match self {
            DesignSpec::Centered { count, .. }
            | DesignSpec::FixedInterval { count, .. }
            | DesignSpec::TwoCluster { count, .. } => *count,
            DesignSpec::Explicit { h } => h.len(),
        }
    }

    /// Distance between neighbouring bandwidths for equidistant grids.
    pub fn stepwidth(&self) -> Option<f64> {
        match *self {
            DesignSpec::Centered { stepwidth, .. } => Some(stepwidth),
            DesignSpec::FixedInterval { h0, hu, count } if count > 0 => {
                Some((hu - h0) / count as f64)
            }
            _ => None,
        }
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignSpec::Centered {
                h_center: Some(c),
                count,
                stepwidth,
            } => write!(f, "centered:{c},{count},{stepwidth}"),
            DesignSpec::Centered {
                h_center: None,
                count,
                stepwidth,
            } => write!(f, "centered:{count},{stepwidth}"),
            DesignSpec::FixedInterval { h0, hu, count } => write!(f, "fixed:{h0},{hu},{count}"),
            DesignSpec::TwoCluster {
                lo,
                hi,
                count,
                proportion,
            } => write!(
                f,
                "cluster:{},{},{},{},{count},{proportion}",
                lo.0, lo.1, hi.0, hi.1
            ),
            DesignSpec::Explicit { h } => {
                let parts: Vec<String> = h.iter().map(|x| x.to_string()).collect();
                write!(f, "explicit:{}", parts.join(","))
            }
        }
    }
}

/// Parses `centered:[h,]B,sw`, `fixed:h0,hu,B`, `cluster:lo0,lo1,hi0,hi1,B,p`
/// and `explicit:h1,h2,...`.
impl FromStr for DesignSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidDesign(format!("expected `strategy:params`, got `{s}`")))?;
        let nums = rest
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidDesign(format!("cannot parse `{p}` in `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let count = |x: f64| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::InvalidDesign(format!("B must be a nonnegative integer, got {x}")))
            }
        };
        let arity = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidDesign(format!(
                    "`{kind}` takes {n} parameters, got {}",
                    nums.len()
                )))
            }
        };
        match kind.trim() {
            "centered" if nums.len() == 2 => Ok(DesignSpec::Centered {
                h_center: None,
                count: count(nums[0])?,
                stepwidth: nums[1],
            }),
            "centered" => {
                arity(3)?;
                Ok(DesignSpec::Centered {
                    h_center: Some(nums[0]),
                    count: count(nums[1])?,
                    stepwidth: nums[2],
                })
            }
            "fixed" | "fixed_interval" => {
                arity(3)?;
                Ok(DesignSpec::FixedInterval {
                    h0: nums[0],
                    hu: nums[1],
                    count: count(nums[2])?,
                })
            }
            "cluster" | "two_cluster" => {
                arity(6)?;
                Ok(DesignSpec::TwoCluster {
                    lo: (nums[0], nums[1]),
                    hi: (nums[2], nums[3]),
                    count: count(nums[4])?,
                    proportion: nums[5],
                })
            }
            "explicit" => Ok(DesignSpec::Explicit { h: nums }),
            other => Err(Error::InvalidDesign(format!("unknown design strategy `{other}`"))),
        }
    }
}

/// Equidistant grid centred on `h_center`; `h_0 = h_center`.
pub fn centered_equidistant(h_center: f64, count: usize, stepwidth: f64) -> Result<BandwidthDesign> {
    if count < 2 {
        return Err(Error::InvalidDesign(format!("need B >= 2, got {count}")));
    }
    if !(stepwidth > 0.0 && stepwidth.is_finite() && h_center.is_finite()) {
        return Err(Error::InvalidDesign(format!(
            "need a positive stepwidth and finite centre, got {stepwidth} around {h_center}"
        )));
    }
    let half = (count - 1) as f64 / 2.0;
    let h: Vec<f64> = (0..count)
        .map(|i| h_center + (i as f64 - half) * stepwidth)
        .collect();
    if !(h[0] > 0.0) {
        return Err(Error::InvalidDesign(format!(
            "smallest bandwidth {} is not positive",
            h[0]
        )));
    }
    BandwidthDesign::h1(h)?.with_base(h_center)
}

/// `B` equally spaced bandwidths in `(h0, hu]`, ending exactly at `hu`; `h_0 = h0`.
pub fn fixed_interval(h0: f64, hu: f64, count: usize) -> Result<BandwidthDesign> {
    if !(h0 > 0.0 && hu > h0 && hu.is_finite()) {
        return Err(Error::InvalidDesign(format!(
            "need 0 < h0 < hu, got h0 = {h0}, hu = {hu}"
        )));
    }
    if count < 2 {
        return Err(Error::InvalidDesign(format!("need B >= 2, got {count}")));
    }
    let b = count as f64;
    let h: Vec<f64> = (1..=count)
        .map(|i| {
            if i == count {
                hu
            } else {
                h0 * (1.0 + i as f64 * (hu - h0) / (h0 * b))
            }
        })
        .collect();
    BandwidthDesign::h1(h)?.with_base(h0)
}

fn spread(interval: (f64, f64), k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![interval.0];
    }
    let step = (interval.1 - interval.0) / (k - 1) as f64;
    (0..k)
        .map(|i| {
            if i + 1 == k {
                interval.1
            } else {
                interval.0 + i as f64 * step
            }
        })
        .collect()
}

/// Two tight clusters of bandwidths; `h_0 = lo.0`.
pub fn two_cluster(lo: (f64, f64), hi: (f64, f64), count: usize, proportion: f64) -> Result<BandwidthDesign> {
    if !(lo.0 > 0.0 && lo.0 <= lo.1 && lo.1 < hi.0 && hi.0 <= hi.1 && hi.1.is_finite()) {
        return Err(Error::InvalidDesign(format!(
            "need 0 < lo <= lo' < hi <= hi', got {lo:?}, {hi:?}"
        )));
    }
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(Error::InvalidDesign(format!(
            "proportion must lie in (0, 1), got {proportion}"
        )));
    }
    let k = (proportion * count as f64).round() as usize;
    if k < 1 || k + 1 > count {
        return Err(Error::InvalidDesign(format!(
            "cluster sizes {k} and {} must both be positive",
            count.saturating_sub(k)
        )));
    }
    if (k > 1 && lo.0 == lo.1) || (count - k > 1 && hi.0 == hi.1) {
        return Err(Error::InvalidDesign(
            "a degenerate interval can hold a single bandwidth only".into(),
        ));
    }
    let mut h = spread(lo, k);
    h.extend(spread(hi, count - k));
    BandwidthDesign::h1(h)?.with_base(lo.0)
}

/// Design-dependent variance factor `Γ` used to compare competing grids at
/// a common base bandwidth. Depends on the bandwidths only through `C_i`.
pub fn variance_proxy(
    weights: &WeightVector,
    tau: &SmallBallModel,
    kernel: OneSidedKernel,
) -> Result<f64> {
    predicted_variance_factor(weights, tau, kernel)
}
