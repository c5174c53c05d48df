use serde::{Deserialize, Serialize};

use super::XiValue;
use crate::numerics::INV_SQRT_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    #[default]
    Gaussian,
    Epanechnikov,
}

/// Below this, a Gaussian kernel weight counts as underflowed.
const WEIGHT_FLOOR: f64 = 1e-300;

/// Half-width, in squared standardized units beyond the nearest draw, past
/// which Gaussian weights are dropped (relative weight < e⁻⁴⁰).
const GAUSSIAN_CUT: f64 = 80.0;

/// Resample (y*ʲ, h(θ*ʲ)) sorted by y* for windowed kernel sums.
#[derive(Debug, Clone)]
pub(crate) struct SortedSample {
    ys: Vec<f64>,
    hs: Vec<f64>,
    /// Set when every h(θ*ʲ) is the same value; the ratio is then exact.
    constant: Option<f64>,
}

impl SortedSample {
    pub(crate) fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (ys, hs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let constant = hs.first().copied().filter(|h0| hs.iter().all(|h| h == h0));
        Self { ys, hs, constant }
    }

    /// Index of the draw closest to y; ties go to the lower index.
    fn nearest(&self, y: f64) -> usize {
        let i = self.ys.partition_point(|&v| v < y);
        if i == 0 {
            0
        } else if i == self.ys.len() || y - self.ys[i - 1] <= self.ys[i] - y {
            i - 1
        } else {
            i
        }
    }

    pub(crate) fn smooth(&self, y: f64, b: f64, shape: KernelShape) -> XiValue {
        let near = self.nearest(y);
        let fallback = XiValue {
            value: self.hs[near],
            tail: true,
        };
        let u0 = (self.ys[near] - y) / b;
        let exact = |value| XiValue { value, tail: false };
        let (limit, weight): (f64, Box<dyn Fn(f64) -> f64>) = match shape {
            KernelShape::Gaussian => {
                if INV_SQRT_2PI * (-0.5 * u0 * u0).exp() / b < WEIGHT_FLOOR {
                    return fallback;
                }
                if let Some(c) = self.constant {
                    return exact(c);
                }
                // Weights are taken relative to the nearest draw; the common
                // factor cancels in the ratio.
                let base = u0 * u0;
                (
                    (base + GAUSSIAN_CUT).sqrt(),
                    Box::new(move |u| (-0.5 * (u * u - base)).exp()),
                )
            }
            KernelShape::Epanechnikov => {
                if u0.abs() >= 1.0 {
                    return fallback;
                }
                if let Some(c) = self.constant {
                    return exact(c);
                }
                (1.0, Box::new(|u| 0.75 * (1.0 - u * u)))
            }
        };
        let mut num = 0.0;
        let mut den = 0.0;
        let mut add = |j: usize| {
            let u = (self.ys[j] - y) / b;
            if u.abs() >= limit {
                return false;
            }
            let w = weight(u);
            num += w * self.hs[j];
            den += w;
            true
        };
        let mut j = near;
        while add(j) && j > 0 {
            j -= 1;
        }
        for j in near + 1..self.ys.len() {
            if !add(j) {
                break;
            }
        }
        exact(num / den)
    }
}
