use std::cell::{Cell, RefCell};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::params::{ParameterSpace, ParameterVector};

/// Step and resample sizes of the finite-difference stencils.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilConfig {
    pub z: f64,
    pub n0_first: usize,
    pub n0_second: usize,
}

impl StencilConfig {
    pub fn new(z: f64, n0_first: usize, n0_second: usize) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(SaeError::InvalidParameter(format!(
                "stencil step z must be positive, got {z}"
            )));
        }
        super::check_n0(n0_first)?;
        if n0_second < n0_first {
            return Err(SaeError::InvalidParameter(format!(
                "second-order resample size {n0_second} is below first-order size {n0_first}"
            )));
        }
        Ok(Self { z, n0_first, n0_second })
    }

    /// Default step m^(-5/4).
    pub fn default_z(m: usize) -> f64 {
        (m as f64).powf(-1.25)
    }
}

/// Which resample size a stencil point is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

/// A (possibly Monte Carlo) function evaluated at stencil points. `point`
/// numbers the distinct evaluations of one stencil, so implementations can
/// give each its own stream.
pub trait M1Function {
    fn m1(&self, delta: &ParameterVector, order: Order, point: u64) -> Result<f64>;
}

impl<F> M1Function for F
where
    F: Fn(&ParameterVector, Order, u64) -> Result<f64>,
{
    fn m1(&self, delta: &ParameterVector, order: Order, point: u64) -> Result<f64> {
        self(delta, order, point)
    }
}

/// First and second derivative estimates of M1 at δ̂ for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimates {
    pub area: usize,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
    /// Step actually used per coordinate.
    pub steps: Vec<f64>,
    /// Whether any step had to shrink to stay inside Δ.
    pub shrunk: bool,
}

const MIN_STEP: f64 = 1e-12;

/// Memoised stencil evaluations around δ̂.
pub struct Stencil<'a> {
    f: &'a dyn M1Function,
    delta_hat: &'a ParameterVector,
    space: &'a ParameterSpace,
    config: StencilConfig,
    cache: RefCell<Vec<(Vec<u64>, Order, f64)>>,
    next_point: Cell<u64>,
    shrunk: Cell<bool>,
}

impl<'a> Stencil<'a> {
    pub fn new(
        f: &'a dyn M1Function,
        delta_hat: &'a ParameterVector,
        space: &'a ParameterSpace,
        config: StencilConfig,
    ) -> Self {
        Self {
            f,
            delta_hat,
            space,
            config,
            cache: RefCell::new(Vec::new()),
            next_point: Cell::new(0),
            shrunk: Cell::new(false),
        }
    }

    fn eval(&self, delta: &ParameterVector, order: Order) -> Result<f64> {
        let key = delta.bits();
        if let Some(hit) = self.cache.borrow().iter().find(|(k, o, _)| *k == key && *o == order) {
            return Ok(hit.2);
        }
        let point = self.next_point.get();
        self.next_point.set(point + 1);
        let v = self.f.m1(delta, order, point)?;
        self.cache.borrow_mut().push((key, order, v));
        Ok(v)
    }

    fn unit(&self, coords: &[usize]) -> Vec<f64> {
        let mut e = vec![0.0; self.delta_hat.len()];
        for &c in coords {
            e[c] = 1.0;
        }
        e
    }

    /// Largest z·2^(-n) with δ̂ ± z·e inside Δ.
    fn step_along(&self, start: f64, coords: &[usize]) -> Result<f64> {
        let e = self.unit(coords);
        let mut z = start;
        while !(self.space.contains(&self.delta_hat.shifted(&e, z))
            && self.space.contains(&self.delta_hat.shifted(&e, -z)))
        {
            z *= 0.5;
            self.shrunk.set(true);
            if z < MIN_STEP {
                return Err(SaeError::StencilDegenerate { coordinate: coords[0] });
            }
        }
        Ok(z)
    }

    pub fn step(&self, j: usize) -> Result<f64> {
        self.step_along(self.config.z, &[j])
    }

    /// {M(δ̂ + z e) + M(δ̂ − z e) − 2 M(δ̂)} at the second-order size.
    fn second_difference(&self, coords: &[usize], z: f64) -> Result<f64> {
        let e = self.unit(coords);
        let plus = self.eval(&self.delta_hat.shifted(&e, z), Order::Second)?;
        let minus = self.eval(&self.delta_hat.shifted(&e, -z), Order::Second)?;
        let centre = self.eval(self.delta_hat, Order::Second)?;
        Ok(plus + minus - 2.0 * centre)
    }

    /// Centred first difference along coordinate j.
    pub fn d1(&self, j: usize) -> Result<f64> {
        let z = self.step(j)?;
        let e = self.unit(&[j]);
        let plus = self.eval(&self.delta_hat.shifted(&e, z), Order::First)?;
        let minus = self.eval(&self.delta_hat.shifted(&e, -z), Order::First)?;
        Ok((plus - minus) / (2.0 * z))
    }

    /// Second difference for (j, r); off-diagonal entries subtract the
    /// diagonal estimates.
    pub fn d2(&self, j: usize, r: usize) -> Result<f64> {
        if j == r {
            let z = self.step(j)?;
            return Ok(self.second_difference(&[j], z)? / (z * z));
        }
        let z = self.step_along(self.step(j)?.min(self.step(r)?), &[j, r])?;
        let diag = self.d2(j, j)? + self.d2(r, r)?;
        Ok((self.second_difference(&[j, r], z)? - z * z * diag) / (2.0 * z * z))
    }

    pub fn all(&self, area: usize) -> Result<DerivativeEstimates> {
        let k = self.delta_hat.len();
        let grad = (0..k).map(|j| self.d1(j)).collect::<Result<Vec<_>>>()?;
        let mut hess = vec![vec![0.0; k]; k];
        for j in 0..k {
            for r in 0..=j {
                let v = self.d2(j, r)?;
                hess[j][r] = v;
                hess[r][j] = v;
            }
        }
        Ok(DerivativeEstimates {
            area,
            grad,
            hess,
            steps: (0..k).map(|j| self.step(j)).collect::<Result<_>>()?,
            shrunk: self.shrunk.get(),
        })
    }

    pub fn shrunk(&self) -> bool {
        self.shrunk.get()
    }
}

/// First-order stencil estimate along coordinate j.
pub fn d1_star(
    j: usize,
    delta_hat: &ParameterVector,
    space: &ParameterSpace,
    stencil: StencilConfig,
    m1: &dyn M1Function,
) -> Result<f64> {
    Stencil::new(m1, delta_hat, space, stencil).d1(j)
}

/// Second-order stencil estimate for (j, r).
pub fn d2_star(
    j: usize,
    r: usize,
    delta_hat: &ParameterVector,
    space: &ParameterSpace,
    stencil: StencilConfig,
    m1: &dyn M1Function,
) -> Result<f64> {
    Stencil::new(m1, delta_hat, space, stencil).d2(j, r)
}
