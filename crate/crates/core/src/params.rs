//! Parameter vectors, box-shaped parameter spaces and per-area data.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};

/// Default floor applied to variance estimates that land on zero.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-8;

/// δ = (λ, ψ): regression coefficients followed by variance-type parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ParameterVector {
    pub fn new(lambda: Vec<f64>, psi: Vec<f64>) -> Self {
        assert!(
            !lambda.is_empty() || !psi.is_empty(),
            "parameter vector needs at least one component"
        );
        Self { lambda, psi }
    }

    /// Splits a flat vector after the first `p` entries.
    pub fn from_flat(p: usize, flat: &[f64]) -> Self {
        assert!(p <= flat.len(), "p = {p} exceeds length {}", flat.len());
        Self::new(flat[..p].to_vec(), flat[p..].to_vec())
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    pub fn q(&self) -> usize {
        self.psi.len()
    }

    /// Total dimension k = p + q.
    pub fn len(&self) -> usize {
        self.lambda.len() + self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat component `j` (0-based).
    pub fn get(&self, j: usize) -> f64 {
        let p = self.p();
        if j < p {
            self.lambda[j]
        } else {
            self.psi[j - p]
        }
    }

    pub fn set(&mut self, j: usize, value: f64) {
        let p = self.p();
        if j < p {
            self.lambda[j] = value;
        } else {
            self.psi[j - p] = value;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.lambda.iter().chain(&self.psi).copied().collect()
    }

    /// δ + step·direction, with `direction` given in flat coordinates.
    pub fn shifted(&self, direction: &[f64], step: f64) -> Self {
        assert_eq!(direction.len(), self.len());
        let flat: Vec<f64> = self
            .to_flat()
            .iter()
            .zip(direction)
            .map(|(a, d)| a + step * d)
            .collect();
        Self::from_flat(self.p(), &flat)
    }

    /// x'λ for a covariate vector of matching length.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.lambda.len());
        x.iter().zip(&self.lambda).map(|(a, b)| a * b).sum()
    }

    /// Bit pattern, used as an exact memoisation key.
    pub fn bits(&self) -> Vec<u64> {
        self.to_flat().iter().map(|v| v.to_bits()).collect()
    }
}

/// Bound on one coordinate of δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    pub lower_open: bool,
    pub upper_open: bool,
}

impl Bound {
    pub fn real_line() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            lower_open: true,
            upper_open: true,
        }
    }

    /// (0, ∞), the space of a variance coordinate.
    pub fn positive() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
            lower_open: true,
            upper_open: true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        if v.is_nan() {
            return false;
        }
        let above = if self.lower_open {
            v > self.lower
        } else {
            v >= self.lower
        };
        let below = if self.upper_open {
            v < self.upper
        } else {
            v <= self.upper
        };
        above && below
    }
}

/// Coordinate-wise box Δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    bounds: Vec<Bound>,
}

impl ParameterSpace {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(SaeError::InvalidDefinition(
                "parameter space needs at least one coordinate".into(),
            ));
        }
        for (j, b) in bounds.iter().enumerate() {
            if !(b.lower < b.upper) {
                return Err(SaeError::InvalidDefinition(format!(
                    "coordinate {j}: lower bound {} is not below upper bound {}",
                    b.lower, b.upper
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// `p` unrestricted regression coordinates followed by `q` open-positive
    /// variance coordinates.
    pub fn regression_with_variances(p: usize, q: usize) -> Self {
        let mut bounds = vec![Bound::real_line(); p];
        bounds.extend(std::iter::repeat_n(Bound::positive(), q));
        Self::new(bounds).expect("p + q must be positive")
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    /// Membership test. A dimension mismatch is a caller bug and panics.
    pub fn contains(&self, delta: &ParameterVector) -> bool {
        assert_eq!(
            delta.len(),
            self.dim(),
            "parameter vector has dimension {} but the space has {}",
            delta.len(),
            self.dim()
        );
        self.bounds.iter().enumerate().all(|(j, b)| b.contains(delta.get(j)))
    }

    pub fn check(&self, delta: &ParameterVector) -> Result<()> {
        if delta.len() != self.dim() {
            return Err(SaeError::InvalidParameter(format!(
                "expected {} components, got {}",
                self.dim(),
                delta.len()
            )));
        }
        if self.contains(delta) {
            Ok(())
        } else {
            Err(SaeError::InvalidParameter(format!(
                "{:?} lies outside the parameter space",
                delta.to_flat()
            )))
        }
    }

    /// Raises coordinates with an open lower bound of 0 to at least `floor`.
    pub fn clamp_variances(&self, delta: &mut ParameterVector, floor: f64) {
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lower == 0.0 && b.lower_open && !(delta.get(j) >= floor) {
                delta.set(j, floor);
            }
        }
    }
}

/// Covariates and the known constant of one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDesign {
    pub x: Vec<f64>,
    /// Sampling variance `s_i` for normal sampling models, sample size `n_i`
    /// for binomial ones.
    pub known: f64,
}

impl AreaDesign {
    pub fn new(x: Vec<f64>, known: f64) -> Result<Self> {
        if !(known > 0.0) || !known.is_finite() {
            return Err(SaeError::InvalidData(format!(
                "known constant must be positive and finite, got {known}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SaeError::InvalidData("non-finite covariate".into()));
        }
        Ok(Self { x, known })
    }

    /// Design without the positivity check; `s_i = 0` limits are legitimate
    /// inputs for some closed-form formulas.
    pub fn unchecked(x: Vec<f64>, known: f64) -> Self {
        Self { x, known }
    }

    pub fn sample_size(&self) -> u32 {
        self.known.round() as u32
    }
}

/// Direct estimates y_i with their designs. Designs are shared so that
/// bootstrap datasets can reuse them without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDataset {
    pub designs: Arc<[AreaDesign]>,
    pub y: Vec<f64>,
}

impl AreaDataset {
    pub fn new(designs: Arc<[AreaDesign]>, y: Vec<f64>) -> Result<Self> {
        if designs.len() != y.len() {
            return Err(SaeError::InvalidData(format!(
                "{} designs but {} observations",
                designs.len(),
                y.len()
            )));
        }
        if designs.is_empty() {
            return Err(SaeError::InvalidData("no areas".into()));
        }
        let p = designs[0].x.len();
        if designs.iter().any(|d| d.x.len() != p) {
            return Err(SaeError::InvalidData("covariate vectors have different lengths".into()));
        }
        Ok(Self { designs, y })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.designs[0].x.len()
    }

    /// Binomial validity: integral y with 0 ≤ y_i ≤ n_i.
    pub fn check_binomial(&self) -> Result<()> {
        for (i, (d, &y)) in self.designs.iter().zip(&self.y).enumerate() {
            let n = d.known;
            if n.fract() != 0.0 {
                return Err(SaeError::InvalidData(format!(
                    "area {i}: sample size {n} is not an integer"
                )));
            }
            if y.fract() != 0.0 || y < 0.0 || y > n {
                return Err(SaeError::InvalidData(format!(
                    "area {i}: y = {y} is not an integer in [0, {n}]"
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.y.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(SaeError::InvalidData(format!("area {i}: y is not finite"))),
            None => Ok(()),
        }
    }

    /// Dataset with area `u` deleted.
    pub fn without(&self, u: usize) -> AreaDataset {
        let designs: Vec<AreaDesign> = self
            .designs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != u)
            .map(|(_, d)| d.clone())
            .collect();
        let y = self
            .y
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != u)
            .map(|(_, v)| *v)
            .collect();
        AreaDataset {
            designs: designs.into(),
            y,
        }
    }
}
