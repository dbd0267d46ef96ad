//! Maximum-likelihood estimation of θ over the parameter set Θ.
//!
//! The average log-likelihood of the quadratic model depends on the data only
//! through three moments (with b = R1F uL):
//!
//! ```text
//! S = mean(uF uFᵀ),  B = mean(b bᵀ),  c = mean(uFᵀ b)
//! l(θ) = −(h/2) log 2π + ½ log det(λQ) − (λ/2) (tr(Q S) + 2c + tr(Q⁻¹ B))
//! ```
//!
//! `l` is concave in θ (the follower cost is linear in θ), so the ascent
//! below finds the global maximum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Dataset, GameConfig, ParamVector, QuantalResponse};
use crate::linalg::{self, SymBasis};

/// Backtracking line-search constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRule {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_increase: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init_theta: ParamVector,
    #[serde(default)]
    pub step_rule: StepRule,
}

impl Default for MleSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-8,
            init_theta: ParamVector::new(vec![10.0, 0.0, 10.0]),
            step_rule: StepRule::default(),
        }
    }
}

impl MleSettings {
    pub fn validate(&self, cfg: &GameConfig) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("mle max_iters must be positive"));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::config("mle grad_tol must be positive"));
        }
        let r = &self.step_rule;
        if !(r.initial_step > 0.0 && r.shrink > 0.0 && r.shrink < 1.0) {
            return Err(Error::config("mle step rule needs initial_step > 0 and 0 < shrink < 1"));
        }
        if !(r.sufficient_increase > 0.0 && r.sufficient_increase < 1.0) {
            return Err(Error::config("mle sufficient_increase must lie in (0, 1)"));
        }
        if !cfg.is_feasible(&self.init_theta) {
            return Err(Error::config("mle init_theta is outside the parameter set"));
        }
        Ok(())
    }

    /// Same settings with a different starting point (warm start).
    pub fn starting_at(&self, theta: ParamVector) -> Self {
        Self {
            init_theta: theta,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_hat: ParamVector,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// θ̂ touches the boundary of Θ or of the compactifying box.
    pub on_boundary: bool,
    /// Objective after every accepted step, starting from the projected initial point.
    pub trace: Vec<f64>,
}

/// Average log-likelihood of a dataset.
///
/// Value and gradient are accumulated from per-record residuals
/// `uF − μ(θ)`, which stay small even when the raw moments are large; the
/// Hessian, used only to pick a search direction, goes through the moments.
#[derive(Debug, Clone)]
pub struct LogLikelihood {
    basis: SymBasis,
    lambda: f64,
    follower: Vec<DVector<f64>>,
    drive: Vec<DVector<f64>>,
    drive_moment: DMatrix<f64>,
}

impl LogLikelihood {
    pub fn new(data: &Dataset, cfg: &GameConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("log-likelihood of an empty dataset"));
        }
        if cfg.lambda.is_nan() || cfg.lambda <= 0.0 {
            return Err(Error::domain("lambda must be positive"));
        }
        let h = cfg.h();
        let mut follower = Vec::with_capacity(data.len());
        let mut drive = Vec::with_capacity(data.len());
        let mut bb = DMatrix::zeros(h, h);
        for r in data.records() {
            cfg.check_leader_action(&r.u_leader)?;
            cfg.check_follower_action(&r.u_follower)?;
            let b = &cfg.r1f * DVector::from_column_slice(&r.u_leader);
            bb += &b * b.transpose();
            follower.push(DVector::from_column_slice(&r.u_follower));
            drive.push(b);
        }
        let count = data.len() as f64;
        Ok(Self {
            basis: cfg.basis(),
            lambda: cfg.lambda,
            follower,
            drive,
            drive_moment: bb / count,
        })
    }

    fn count(&self) -> f64 {
        self.follower.len() as f64
    }

    /// `None` when Q(θ) is not positive definite.
    pub fn value(&self, theta: &[f64]) -> Option<f64> {
        let q = self.basis.assemble(theta);
        let chol = q.clone().cholesky()?;
        let h = q.nrows() as f64;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let w = chol.inverse();
        let mut quad = 0.0;
        for (uf, b) in self.follower.iter().zip(&self.drive) {
            let r = uf + &w * b;
            quad += linalg::quad_form(&r, &q, &r);
        }
        quad /= self.count();
        Some(-0.5 * h * (2.0 * PI).ln() + 0.5 * (h * self.lambda.ln() + log_det) - 0.5 * self.lambda * quad)
    }

    fn inverse(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let q = self.basis.assemble(theta);
        Some(linalg::symmetrize(&q.cholesky()?.inverse()))
    }

    /// ∂l/∂θ_k = ½ tr(Q⁻¹E_k) − (λ/2) mean[(uF − μ)ᵀ E_k (uF + μ)].
    pub fn gradient(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let w = self.inverse(theta)?;
        let m = self.basis.len();
        let mut acc = DVector::zeros(m);
        for (uf, b) in self.follower.iter().zip(&self.drive) {
            let mu = -(&w * b);
            let diff = uf - &mu;
            let sum = uf + &mu;
            for k in 0..m {
                acc[k] += self.basis.bilinear(diff.as_slice(), k, sum.as_slice());
            }
        }
        acc /= self.count();
        Some(DVector::from_fn(m, |k, _| 0.5 * self.basis.trace_with(&w, k) - 0.5 * self.lambda * acc[k]))
    }

    /// Depends on the data only through `B = mean(b bᵀ)`, b = R1F uL.
    pub fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let w = self.inverse(theta)?;
        let wbw = &w * &self.drive_moment * &w;
        let m = self.basis.len();
        let mut hess = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in k..m {
                // tr(W E_l W E_k W B) + tr(W E_k W E_l W B), rewritten with WBW.
                let v = -0.5 * self.basis.sandwich_trace(&w, k, &w, l)
                    - 0.5 * self.lambda * (self.basis.sandwich_trace(&w, k, &wbw, l) + self.basis.sandwich_trace(&wbw, k, &w, l));
                hess[(k, l)] = v;
                hess[(l, k)] = v;
            }
        }
        Some(hess)
    }
}

/// Mean of `log_density` over the records.
pub fn log_likelihood(theta: &ParamVector, data: &Dataset, cfg: &GameConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("log-likelihood of an empty dataset"));
    }
    let model = QuantalResponse::new(cfg, theta)?;
    let mut total = 0.0;
    for r in data.records() {
        cfg.check_leader_action(&r.u_leader)?;
        cfg.check_follower_action(&r.u_follower)?;
        total += model.log_density(&r.u_follower, &r.u_leader);
    }
    Ok(total / data.len() as f64)
}

/// `E_{uF ~ p(·|uL, θ_true)}[log p(uF | uL, θ_query)]`, in closed form:
/// `−(h/2) log 2π + ½ log det(λQ_q) − (λ/2)(tr(Q_q Σ_t) + (μ_t − μ_q)ᵀ Q_q (μ_t − μ_q))`.
pub fn expected_log_density(
    u_leader: &[f64],
    theta_query: &ParamVector,
    theta_true: &ParamVector,
    cfg: &GameConfig,
) -> Result<f64> {
    cfg.check_leader_action(u_leader)?;
    let query = QuantalResponse::new(cfg, theta_query)?;
    let truth = QuantalResponse::new(cfg, theta_true)?;
    let h = cfg.h() as f64;
    let q = query.precision();
    let log_det = q.determinant().ln();
    let sigma_t = truth.covariance();
    let d = truth.mean(u_leader) - query.mean(u_leader);
    Ok(-0.5 * h * (2.0 * PI).ln() + 0.5 * (h * cfg.lambda.ln() + log_det)
        - 0.5 * cfg.lambda * ((q * &sigma_t).trace() + linalg::quad_form(&d, q, &d)))
}

/// Maps θ into Θ ∩ [−bound, bound]^m.
///
/// For h = 2 the map clamps θ1 to ≥ κ, then shrinks θ2 toward zero until
/// θ1θ3 − θ2² ≥ κ (raising θ3 if even θ2 = 0 is not enough). This is a
/// feasible map, not the exact Euclidean projection. Other sizes shift the
/// diagonal until every leading minor is at least κ.
pub fn project(theta: &[f64], cfg: &GameConfig) -> Vec<f64> {
    let bound = cfg.theta_bound;
    let kappa = cfg.kappa;
    let mut th: Vec<f64> = theta.iter().map(|x| x.clamp(-bound, bound)).collect();
    if cfg.h() == 2 {
        // Aim slightly inside so rounding never leaves the set.
        let target = kappa * (1.0 + 1e-10);
        th[0] = th[0].max(target);
        if th[0] * th[2] - th[1] * th[1] < target {
            let room = th[0] * th[2] - target;
            if room >= 0.0 {
                th[1] = th[1].signum() * room.sqrt();
                if th[0] * th[2] - th[1] * th[1] < target {
                    th[1] *= 1.0 - 1e-12;
                }
            } else {
                th[1] = 0.0;
                th[2] = (target / th[0]) * (1.0 + 1e-12);
            }
        }
        return th;
    }
    let basis = cfg.basis();
    let q = basis.assemble(&th);
    let ok = |shift: f64| {
        let shifted = &q + DMatrix::identity(q.nrows(), q.ncols()) * shift;
        linalg::leading_minors(&shifted).iter().all(|&d| d >= kappa * (1.0 + 1e-10))
    };
    if ok(0.0) {
        return th;
    }
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let shifted = &q + DMatrix::identity(q.nrows(), q.ncols()) * hi;
    basis.flatten(&shifted)
}

fn on_boundary(theta: &[f64], cfg: &GameConfig) -> bool {
    let margin = cfg.feasibility_margin(&ParamVector::from(theta));
    margin <= 1e-8 * cfg.kappa.max(1.0) || theta.iter().any(|x| x.abs() >= cfg.theta_bound * (1.0 - 1e-12))
}

/// ‖P(θ + ∇l) − θ‖, the projected-gradient stationarity measure.
fn stationarity(theta: &[f64], grad: &DVector<f64>, cfg: &GameConfig) -> f64 {
    let stepped: Vec<f64> = theta.iter().zip(grad.iter()).map(|(t, g)| t + g).collect();
    let p = project(&stepped, cfg);
    p.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Projected backtracking search along `dir`. Returns the accepted point and value.
fn line_search(
    obj: &LogLikelihood,
    theta: &[f64],
    value: f64,
    grad: &DVector<f64>,
    dir: &DVector<f64>,
    rule: &StepRule,
    cfg: &GameConfig,
) -> Option<(Vec<f64>, f64)> {
    let mut step = rule.initial_step;
    for _ in 0..80 {
        let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
        let trial = project(&trial, cfg);
        let moved: f64 = trial.iter().zip(theta).zip(grad.iter()).map(|((a, b), g)| (a - b) * g).sum();
        if moved > 0.0 {
            if let Some(v) = obj.value(&trial) {
                if v >= value + rule.sufficient_increase * moved && v > value {
                    return Some((trial, v));
                }
            }
        }
        step *= rule.shrink;
    }
    None
}

/// Maximizes the average log-likelihood over Θ.
///
/// Each iteration tries the Newton direction first (the negative Hessian is
/// positive definite for this model) and falls back to the plain gradient;
/// both are projected back into Θ and backtracked until the sufficient
/// increase condition holds, so the objective never decreases.
pub fn mle(data: &Dataset, settings: &MleSettings, cfg: &GameConfig) -> Result<MleResult> {
    let obj = LogLikelihood::new(data, cfg)?;
    if settings.init_theta.len() != cfg.m() {
        return Err(Error::domain("init_theta has the wrong length"));
    }
    let mut theta = project(settings.init_theta.as_slice(), cfg);
    let mut value = obj
        .value(&theta)
        .ok_or_else(|| Error::numerical("projected initial point is not positive definite"))?;
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        let grad = obj
            .gradient(&theta)
            .ok_or_else(|| Error::numerical("iterate left the positive-definite cone"))?;
        if stationarity(&theta, &grad, cfg) <= settings.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let newton = obj
            .hessian(&theta)
            .and_then(|hess| (-hess).cholesky())
            .map(|chol| chol.solve(&grad));
        let mut accepted = None;
        if let Some(dir) = newton {
            let rule = StepRule {
                initial_step: 1.0,
                ..settings.step_rule.clone()
            };
            accepted = line_search(&obj, &theta, value, &grad, &dir, &rule, cfg);
        }
        if accepted.is_none() {
            accepted = line_search(&obj, &theta, value, &grad, &grad, &settings.step_rule, cfg);
        }
        match accepted {
            Some((next, v)) => {
                theta = next;
                value = v;
                trace.push(v);
            }
            None => {
                // No ascent step improves the objective in floating point: the
                // iterate is stationary to working precision.
                converged = true;
                break;
            }
        }
    }

    Ok(MleResult {
        on_boundary: on_boundary(&theta, cfg),
        theta_hat: ParamVector::new(theta),
        loglik: value,
        iterations,
        converged,
        trace,
    })
}
