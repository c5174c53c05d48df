use super::{check_size, FitResult, Fitter};
use crate::error::Result;
use crate::numerics::solve_dense;
use crate::params::{AreaDataset, ParameterVector};

/// Moment equations of the normal-lognormal model at δ:
/// Σ x_i (y_i − μ_i) and Σ [(y_i − μ_i)² − Var_δ(y_i)], where
/// μ_i = exp(x_i'λ + σ²/2) and Var_δ(y_i) = μ_i²(e^{σ²} − 1) + s_i.
pub fn lognormal_ee_residual(data: &AreaDataset, delta: &ParameterVector) -> Vec<f64> {
    let p = data.p();
    let sigma2 = delta.psi[0];
    let mut out = vec![0.0; p + 1];
    for (d, &y) in data.designs.iter().zip(&data.y) {
        let mu = (delta.linear_predictor(&d.x) + 0.5 * sigma2).exp();
        let r = y - mu;
        for a in 0..p {
            out[a] += d.x[a] * r;
        }
        out[p] += r * r - mu * mu * sigma2.exp_m1() - d.known;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unbiased estimating equations for the normal-lognormal model solved by
/// damped Newton iteration.
///
/// With an intercept column the λ-equations depend on λ only through
/// a = λ + (σ²/2)e₀, and are the stationarity conditions of the concave
/// Σ[y_i x_i'a − exp(x_i'a)]; the variance equation is then explicit in σ².
/// Without an intercept the full system is solved jointly. When no finite
/// root exists the fitted means are held above a floor (see
/// [`with_mean_floor`](Self::with_mean_floor)) and the objective reports the
/// KKT residual instead.
#[derive(Debug, Clone)]
pub struct LognormalEstimatingEquations {
    var_floor: f64,
    mean_floor: f64,
    max_iter: usize,
}

impl LognormalEstimatingEquations {
    pub const NAME: &'static str = "lognormal-ee";

    pub const DEFAULT_MEAN_FLOOR: f64 = 1e-4;

    pub fn new(var_floor: f64) -> Self {
        Self {
            var_floor,
            mean_floor: Self::DEFAULT_MEAN_FLOOR,
            max_iter: 200,
        }
    }

    /// Lower bound on the fitted means exp(x_i'λ + σ²/2). It only binds when
    /// the mean equations have no finite root, which negative y_i can cause.
    pub fn with_mean_floor(mut self, mean_floor: f64) -> Self {
        self.mean_floor = mean_floor;
        self
    }

    fn solve_with_intercept(&self, data: &AreaDataset, c: usize) -> (ParameterVector, bool, usize) {
        let p = data.p();
        let floor = self.mean_floor.ln();
        let mean_y = data.y.iter().sum::<f64>() / data.m() as f64;
        let mut a = vec![0.0; p];
        a[c] = mean_y.max(self.mean_floor.max(1e-3)).ln();
        let (mut converged, mut it) = self.maximize(data, &mut a, None);
        let feasible = |a: &[f64]| data.designs.iter().all(|d| dot(&d.x, a) >= floor);
        if !(converged && feasible(&a)) {
            // No finite root with every fitted mean above the floor: maximize
            // under x_i'a ≥ ln(mean_floor) by a log-barrier path.
            a = vec![0.0; p];
            a[c] = floor + 1.0;
            converged = false;
            let mut t = 1.0;
            while t <= 1e12 {
                let (ok, n) = self.maximize(data, &mut a, Some((floor, t)));
                it += n;
                converged = ok;
                t *= 10.0;
            }
        }
        let (mut ss, mut s_sum, mut mu2) = (0.0, 0.0, 0.0);
        for (d, &y) in data.designs.iter().zip(&data.y) {
            let mu = dot(&d.x, &a).exp();
            ss += (y - mu).powi(2);
            s_sum += d.known;
            mu2 += mu * mu;
        }
        let excess = (ss - s_sum) / mu2;
        let sigma2 = if excess > 0.0 { excess.ln_1p() } else { 0.0 };
        let sigma2 = sigma2.max(self.var_floor);
        let mut lambda = a;
        lambda[c] -= 0.5 * sigma2;
        (ParameterVector::new(lambda, vec![sigma2]), converged, it)
    }

    /// Damped Newton ascent on Σ[y_i η_i − exp(η_i)], η_i = x_i'a, optionally
    /// with the barrier (1/t) Σ ln(η_i − floor). Returns (converged, iterations).
    fn maximize(&self, data: &AreaDataset, a: &mut Vec<f64>, barrier: Option<(f64, f64)>) -> (bool, usize) {
        let p = a.len();
        let objective = |a: &[f64]| -> f64 {
            let mut q = 0.0;
            for (d, &y) in data.designs.iter().zip(&data.y) {
                let eta = dot(&d.x, a);
                q += y * eta - eta.exp();
                if let Some((floor, t)) = barrier {
                    if eta <= floor {
                        return f64::NEG_INFINITY;
                    }
                    q += (eta - floor).ln() / t;
                }
            }
            q
        };
        let mut q = objective(a);
        for it in 1..=self.max_iter {
            let mut grad = vec![0.0; p];
            let mut hess = vec![vec![0.0; p]; p];
            let mut scale = 0.0;
            for (d, &y) in data.designs.iter().zip(&data.y) {
                let eta = dot(&d.x, a);
                let mu = eta.exp();
                scale += y.abs() + mu;
                let (mut g, mut h) = (y - mu, mu);
                if let Some((floor, t)) = barrier {
                    let gap = eta - floor;
                    g += 1.0 / (t * gap);
                    h += 1.0 / (t * gap * gap);
                }
                for i in 0..p {
                    grad[i] += d.x[i] * g;
                    for j in 0..p {
                        hess[i][j] += h * d.x[i] * d.x[j];
                    }
                }
            }
            if norm(&grad) <= 1e-13 * scale.max(1.0) {
                return (true, it);
            }
            let Some(step) = solve_dense(hess, grad.clone()) else {
                return (false, it);
            };
            // Once the Newton decrement is at the roundoff level of the
            // objective, line search is blind; take the full step and stop.
            if dot(&grad, &step) <= 1e-15 * scale.max(1.0) {
                let cand: Vec<f64> = a.iter().zip(&step).map(|(x, s)| x + s).collect();
                if objective(&cand).is_finite() {
                    *a = cand;
                }
                return (true, it);
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = a.iter().zip(&step).map(|(x, s)| x + t * s).collect();
                let qc = objective(&cand);
                if qc.is_finite() && qc >= q {
                    *a = cand;
                    q = qc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                return (false, it);
            }
        }
        (false, self.max_iter)
    }

    /// Removes from the λ-residual its component along the covariates of
    /// areas whose fitted mean sits on the floor (the KKT multipliers).
    fn project_out_active(&self, data: &AreaDataset, delta: &ParameterVector, residual: &mut [f64]) {
        let p = data.p();
        let active: Vec<&[f64]> = data
            .designs
            .iter()
            .filter(|d| {
                let mu = (delta.linear_predictor(&d.x) + 0.5 * delta.psi[0]).exp();
                mu <= self.mean_floor * (1.0 + 1e-6)
            })
            .map(|d| d.x.as_slice())
            .collect();
        if active.is_empty() {
            return;
        }
        let gram: Vec<Vec<f64>> = active
            .iter()
            .map(|u| active.iter().map(|v| dot(u, v)).collect())
            .collect();
        let rhs: Vec<f64> = active.iter().map(|u| dot(u, &residual[..p])).collect();
        if let Some(coef) = solve_dense(gram, rhs) {
            for (x, c) in active.iter().zip(&coef) {
                for a in 0..p {
                    residual[a] -= c * x[a];
                }
            }
        }
    }

    fn solve_joint(&self, data: &AreaDataset) -> (ParameterVector, bool, usize) {
        let p = data.p();
        let mean_y = data.y.iter().sum::<f64>() / data.m() as f64;
        let mut delta = ParameterVector::new(vec![0.0; p], vec![0.5]);
        // Crude start: match the mean along the direction of x̄.
        let xbar: Vec<f64> = (0..p)
            .map(|a| data.designs.iter().map(|d| d.x[a]).sum::<f64>() / data.m() as f64)
            .collect();
        let xx: f64 = xbar.iter().map(|v| v * v).sum();
        if xx > 0.0 {
            let target = mean_y.max(1e-3).ln() - 0.25;
            delta.lambda = xbar.iter().map(|v| v * target / xx).collect();
        }
        let mut f = lognormal_ee_residual(data, &delta);
        let mut converged = false;
        let mut it = 0;
        while it < self.max_iter {
            it += 1;
            if norm(&f) <= 1e-11 {
                converged = true;
                break;
            }
            let sigma2 = delta.psi[0];
            let e = sigma2.exp();
            let mut jac = vec![vec![0.0; p + 1]; p + 1];
            for (d, &y) in data.designs.iter().zip(&data.y) {
                let mu = (delta.linear_predictor(&d.x) + 0.5 * sigma2).exp();
                let r = y - mu;
                for i in 0..p {
                    for j in 0..p {
                        jac[i][j] -= mu * d.x[i] * d.x[j];
                    }
                    jac[i][p] -= 0.5 * mu * d.x[i];
                    jac[p][i] += (-2.0 * r * mu - 2.0 * mu * mu * (e - 1.0)) * d.x[i];
                }
                jac[p][p] += -r * mu - mu * mu * (e - 1.0) - mu * mu * e;
            }
            let Some(step) = solve_dense(jac, f.iter().map(|v| -v).collect()) else {
                break;
            };
            let base = norm(&f);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let mut cand = delta.shifted(&step, t);
                cand.psi[0] = cand.psi[0].max(self.var_floor);
                let fc = lognormal_ee_residual(data, &cand);
                if norm(&fc).is_finite() && norm(&fc) < base {
                    delta = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                // Stuck on the variance floor: the λ-equations may still be solved.
                let on_floor = delta.psi[0] <= self.var_floor;
                converged = on_floor && norm(&f[..p]) <= 1e-8;
                break;
            }
        }
        (delta, converged, it)
    }
}

impl Fitter for LognormalEstimatingEquations {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn fit(&self, data: &AreaDataset) -> Result<FitResult> {
        data.check_finite()?;
        check_size(data, data.p() + 1)?;
        let intercept = (0..data.p()).find(|&a| data.designs.iter().all(|d| d.x[a] == 1.0));
        let (delta, converged, iterations) = match intercept {
            Some(c) => self.solve_with_intercept(data, c),
            None => self.solve_joint(data),
        };
        let mut residual = lognormal_ee_residual(data, &delta);
        self.project_out_active(data, &delta, &mut residual);
        let objective = if delta.psi[0] <= self.var_floor {
            norm(&residual[..data.p()])
        } else {
            norm(&residual)
        };
        Ok(FitResult {
            delta_hat: delta,
            converged: converged && objective.is_finite(),
            iterations,
            objective,
        })
    }
}
