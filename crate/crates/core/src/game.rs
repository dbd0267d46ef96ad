//! Game model: configuration, the quantal-response follower and the
//! closed forms of the quadratic game.
//!
//! The follower's cost is
//!
//! ```text
//! J^F(uF, uL, θ) = ½ uFᵀ Q(θ) uF + uFᵀ R1F uL + ½ uLᵀ R2F uL
//! ```
//!
//! and a follower with rationality λ > 0 draws its action from the density
//! proportional to `exp(-λ J^F)`. With the action space taken to be all of
//! R^h this is the Gaussian `N(μ, Σ)` with `μ = -Q⁻¹ R1F uL` and
//! `Σ = Q⁻¹ / λ`. The leader's cost is
//!
//! ```text
//! J^L(uL, uF) = ½ uLᵀ QL uL + uFᵀ R1L uL + ½ uFᵀ R2L uF.
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rows, SymBasis};

/// Default κ of the parameter set Θ.
pub const DEFAULT_KAPPA: f64 = 1e-3;

/// Default bound |θ_k| ≤ 1e3 used to make Θ compact for estimation.
pub const DEFAULT_THETA_BOUND: f64 = 1e3;

/// Interior slack (in multiples of κ) required by the θ-derivative routines.
pub const INTERIOR_SLACK: f64 = 10.0;

/// Ground-truth follower parameter of the reference game.
pub const REFERENCE_THETA: [f64; 3] = [20.0, 10.0, 30.0];

/// Per-coordinate closed interval bounds of the leader's action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LeaderBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// The square `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::config(format!(
                "leader_box bounds have different lengths ({} vs {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "leader_box coordinate {i}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (x, (lo, hi)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Follower parameter θ; `Q(θ)` is assembled from it through [`SymBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Self {
        Self(theta)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl From<DVector<f64>> for ParamVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v.iter().copied().collect())
    }
}

/// Matrices and constants of the quadratic Stackelberg game.
///
/// `n` is the leader action dimension (`QL` is n×n), `h` the follower action
/// dimension (`R2L` is h×h) and `m = h(h+1)/2` the length of θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(with = "rows")]
    pub ql: DMatrix<f64>,
    /// h×n, enters the leader cost as `uFᵀ R1L uL`.
    #[serde(with = "rows")]
    pub r1l: DMatrix<f64>,
    #[serde(with = "rows")]
    pub r2l: DMatrix<f64>,
    /// h×n, enters the follower cost as `uFᵀ R1F uL`.
    #[serde(with = "rows")]
    pub r1f: DMatrix<f64>,
    /// n×n; does not affect the follower's choice.
    #[serde(with = "rows", default = "empty_matrix", skip_serializing_if = "is_empty_matrix")]
    pub r2f: DMatrix<f64>,
    pub lambda: f64,
    pub leader_box: LeaderBox,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_theta_bound")]
    pub theta_bound: f64,
}

fn empty_matrix() -> DMatrix<f64> {
    DMatrix::zeros(0, 0)
}

fn is_empty_matrix(m: &DMatrix<f64>) -> bool {
    m.is_empty()
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

fn default_theta_bound() -> f64 {
    DEFAULT_THETA_BOUND
}

impl GameConfig {
    /// The 2×2 reference game with box `[10, 100]²`, λ = 1 and κ = 1e-3.
    pub fn reference() -> Self {
        Self {
            ql: DMatrix::from_row_slice(2, 2, &[41.0, 2.0, 2.0, 8.0]),
            r1l: DMatrix::from_row_slice(2, 2, &[12.0, 42.0, 13.0, 1.0]),
            r2l: DMatrix::from_row_slice(2, 2, &[400.0, 34.0, 34.0, 4.0]),
            r1f: DMatrix::from_row_slice(2, 2, &[16.0, 8.0, 9.0, 31.0]),
            r2f: DMatrix::zeros(0, 0),
            lambda: 1.0,
            leader_box: LeaderBox::cube(2, 10.0, 100.0),
            kappa: DEFAULT_KAPPA,
            theta_bound: DEFAULT_THETA_BOUND,
        }
    }

    /// Leader action dimension.
    pub fn n(&self) -> usize {
        self.ql.nrows()
    }

    /// Follower action dimension.
    pub fn h(&self) -> usize {
        self.r2l.nrows()
    }

    /// Parameter dimension h(h+1)/2.
    pub fn m(&self) -> usize {
        let h = self.h();
        h * (h + 1) / 2
    }

    pub fn basis(&self) -> SymBasis {
        SymBasis::new(self.h())
    }

    /// `R2F`, with the empty matrix standing for all-zero.
    pub fn r2f(&self) -> DMatrix<f64> {
        if self.r2f.is_empty() {
            DMatrix::zeros(self.n(), self.n())
        } else {
            self.r2f.clone()
        }
    }

    /// Checks every structural invariant; the message names the first failure.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let h = self.h();
        if n == 0 || !linalg::is_square(&self.ql) {
            return Err(Error::config("QL must be a non-empty square matrix"));
        }
        if !linalg::is_symmetric(&self.ql, 1e-12) {
            return Err(Error::config("QL not symmetric"));
        }
        if linalg::min_eigenvalue(&self.ql) <= 0.0 {
            return Err(Error::config("QL not positive definite"));
        }
        if h == 0 || !linalg::is_square(&self.r2l) {
            return Err(Error::config("R2L must be a non-empty square matrix"));
        }
        if !linalg::is_symmetric(&self.r2l, 1e-12) {
            return Err(Error::config("R2L not symmetric"));
        }
        for (name, mat) in [("R1L", &self.r1l), ("R1F", &self.r1f)] {
            if mat.shape() != (h, n) {
                return Err(Error::config(format!(
                    "{name} must be {h}x{n}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        if !self.r2f.is_empty() {
            if self.r2f.shape() != (n, n) {
                return Err(Error::config(format!("R2F must be {n}x{n}")));
            }
            if !linalg::is_symmetric(&self.r2f, 1e-12) {
                return Err(Error::config("R2F not symmetric"));
            }
        }
        let all = [&self.ql, &self.r1l, &self.r2l, &self.r1f, &self.r2f];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::config("matrices must have finite entries"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be nonnegative"));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::config("kappa must be positive"));
        }
        if !(self.theta_bound.is_finite() && self.theta_bound > self.kappa) {
            return Err(Error::config("theta_bound must exceed kappa"));
        }
        self.leader_box.validate()?;
        if self.leader_box.dim() != n {
            return Err(Error::config(format!(
                "leader_box has dimension {}, expected {n}",
                self.leader_box.dim()
            )));
        }
        Ok(())
    }

    /// `Q(θ)`, without any feasibility check.
    pub fn precision(&self, theta: &ParamVector) -> DMatrix<f64> {
        self.basis().assemble(theta.as_slice())
    }

    fn check_theta_len(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.m() {
            return Err(Error::domain(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.m()
            )));
        }
        if theta.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("theta has non-finite entries"));
        }
        Ok(())
    }

    /// Smallest leading-minor slack `min_k (minor_k − κ)`. For h = 2 the
    /// minors are θ1 and θ1θ3 − θ2².
    pub fn feasibility_margin(&self, theta: &ParamVector) -> f64 {
        let q = self.precision(theta);
        linalg::leading_minors(&q)
            .into_iter()
            .map(|d| d - self.kappa)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, theta: &ParamVector) -> bool {
        theta.len() == self.m() && self.feasibility_margin(theta) >= -1e-9 * self.kappa
    }

    /// Membership in Θ.
    pub fn check_feasible(&self, theta: &ParamVector) -> Result<()> {
        self.check_theta_len(theta)?;
        if self.feasibility_margin(theta) < -1e-9 * self.kappa {
            return Err(Error::domain(format!(
                "theta {:?} is outside the parameter set (kappa = {})",
                theta.as_slice(),
                self.kappa
            )));
        }
        Ok(())
    }

    /// Membership in Θ with slack of at least `INTERIOR_SLACK · κ`.
    pub fn check_interior(&self, theta: &ParamVector) -> Result<()> {
        self.check_theta_len(theta)?;
        if self.feasibility_margin(theta) < INTERIOR_SLACK * self.kappa {
            return Err(Error::domain(format!(
                "theta {:?} is not strictly interior to the parameter set",
                theta.as_slice()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_leader_action(&self, u_leader: &[f64]) -> Result<()> {
        if u_leader.len() != self.n() {
            return Err(Error::domain(format!(
                "leader action has length {}, expected {}",
                u_leader.len(),
                self.n()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_follower_action(&self, u_follower: &[f64]) -> Result<()> {
        if u_follower.len() != self.h() {
            return Err(Error::domain(format!(
                "follower action has length {}, expected {}",
                u_follower.len(),
                self.h()
            )));
        }
        Ok(())
    }
}

/// Gaussian quantal response `N(mean, covariance)` for one leader action.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl FollowerDistribution {
    /// Cholesky factorization of the covariance, reusable across draws.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        let chol = self
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("follower covariance is not positive definite"))?;
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: chol.unpack(),
        })
    }
}

/// Draws `mean + L z` where `L` is the lower Cholesky factor of the
/// covariance and `z` holds h standard normals taken from the stream in
/// coordinate order.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// One round of play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub t: usize,
    pub u_leader: Vec<f64>,
    pub u_follower: Vec<f64>,
}

/// Rounds observed so far, in order, with steps numbered from 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<InteractionRecord>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<InteractionRecord>) -> Result<Self> {
        let mut prev = 0;
        for r in &records {
            if r.t <= prev || (prev == 0 && r.t != 1) {
                return Err(Error::domain(
                    "dataset step indices must start at 1 and strictly increase",
                ));
            }
            prev = r.t;
        }
        Ok(Self { records })
    }

    /// Appends a round with the next step index.
    pub fn push(&mut self, u_leader: Vec<f64>, u_follower: Vec<f64>) {
        let t = self.records.last().map_or(1, |r| r.t + 1);
        self.records.push(InteractionRecord {
            t,
            u_leader,
            u_follower,
        });
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// The quantal-response model at a fixed θ, with `Q`, `Q⁻¹` and `log det Q`
/// computed once.
#[derive(Debug, Clone)]
pub struct QuantalResponse {
    lambda: f64,
    basis: SymBasis,
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    log_det_q: f64,
    /// `Q⁻¹ R1F`, so that μ = −gain · uL.
    gain: DMatrix<f64>,
}

impl QuantalResponse {
    /// Requires θ ∈ Θ and λ > 0.
    pub fn new(cfg: &GameConfig, theta: &ParamVector) -> Result<Self> {
        cfg.check_feasible(theta)?;
        Self::new_unchecked(cfg, theta)
    }

    /// Skips the Θ-membership test; `Q(θ)` must still be positive definite.
    pub(crate) fn new_unchecked(cfg: &GameConfig, theta: &ParamVector) -> Result<Self> {
        if cfg.lambda.is_nan() || cfg.lambda <= 0.0 {
            return Err(Error::domain(
                "lambda must be positive: the quantal response density is improper at lambda = 0",
            ));
        }
        let basis = cfg.basis();
        let q = basis.assemble(theta.as_slice());
        let chol = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::domain("Q(theta) is not positive definite"))?;
        let log_det_q = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let q_inv = linalg::symmetrize(&chol.inverse());
        let gain = &q_inv * &cfg.r1f;
        Ok(Self {
            lambda: cfg.lambda,
            basis,
            q,
            q_inv,
            log_det_q,
            gain,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn basis(&self) -> &SymBasis {
        &self.basis
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn precision_inverse(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    /// `Q⁻¹ R1F`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn mean(&self, u_leader: &[f64]) -> DVector<f64> {
        -(&self.gain * DVector::from_column_slice(u_leader))
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.q_inv / self.lambda
    }

    pub fn distribution(&self, u_leader: &[f64]) -> FollowerDistribution {
        FollowerDistribution {
            mean: self.mean(u_leader),
            covariance: self.covariance(),
        }
    }

    pub fn log_density(&self, u_follower: &[f64], u_leader: &[f64]) -> f64 {
        let h = self.q.nrows() as f64;
        let r = DVector::from_column_slice(u_follower) - self.mean(u_leader);
        -0.5 * h * (2.0 * PI).ln() + 0.5 * (h * self.lambda.ln() + self.log_det_q)
            - 0.5 * self.lambda * linalg::quad_form(&r, &self.q, &r)
    }

    /// ∂/∂θ_k log p = ½ tr(Q⁻¹E_k) − (λ/2)(uFᵀE_k uF − μᵀE_k μ).
    pub fn score(&self, u_follower: &[f64], u_leader: &[f64]) -> DVector<f64> {
        let mu = self.mean(u_leader);
        let mu = mu.as_slice();
        DVector::from_fn(self.basis.len(), |k, _| {
            0.5 * self.basis.trace_with(&self.q_inv, k)
                - 0.5
                    * self.lambda
                    * (self.basis.bilinear(u_follower, k, u_follower) - self.basis.bilinear(mu, k, mu))
        })
    }

    /// Hessian of log p in θ. The follower cost is linear in θ, so the
    /// Hessian does not depend on uF:
    /// `−½ tr(Q⁻¹E_k Q⁻¹E_l) − λ μᵀE_k Q⁻¹ E_l μ`.
    pub fn hessian(&self, u_leader: &[f64]) -> DMatrix<f64> {
        let mu = self.mean(u_leader);
        let mu = mu.as_slice();
        let m = self.basis.len();
        let mut hess = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in k..m {
                let v = -0.5 * self.basis.sandwich_trace(&self.q_inv, k, &self.q_inv, l)
                    - self.lambda * self.basis.sandwich_bilinear(mu, k, &self.q_inv, l, mu);
                hess[(k, l)] = v;
                hess[(l, k)] = v;
            }
        }
        hess
    }
}

/// `½ uFᵀQ(θ)uF + uFᵀR1F uL + ½ uLᵀR2F uL`.
pub fn follower_cost(u_follower: &[f64], u_leader: &[f64], theta: &ParamVector, cfg: &GameConfig) -> Result<f64> {
    cfg.check_feasible(theta)?;
    cfg.check_follower_action(u_follower)?;
    cfg.check_leader_action(u_leader)?;
    let uf = DVector::from_column_slice(u_follower);
    let ul = DVector::from_column_slice(u_leader);
    let q = cfg.precision(theta);
    Ok(0.5 * linalg::quad_form(&uf, &q, &uf)
        + linalg::quad_form(&uf, &cfg.r1f, &ul)
        + 0.5 * linalg::quad_form(&ul, &cfg.r2f(), &ul))
}

/// `½ uLᵀQL uL + uFᵀR1L uL + ½ uFᵀR2L uF`.
pub fn leader_cost(u_leader: &[f64], u_follower: &[f64], cfg: &GameConfig) -> Result<f64> {
    cfg.check_leader_action(u_leader)?;
    cfg.check_follower_action(u_follower)?;
    let uf = DVector::from_column_slice(u_follower);
    let ul = DVector::from_column_slice(u_leader);
    Ok(0.5 * linalg::quad_form(&ul, &cfg.ql, &ul)
        + linalg::quad_form(&uf, &cfg.r1l, &ul)
        + 0.5 * linalg::quad_form(&uf, &cfg.r2l, &uf))
}

pub fn follower_response(u_leader: &[f64], theta: &ParamVector, cfg: &GameConfig) -> Result<FollowerDistribution> {
    cfg.check_leader_action(u_leader)?;
    Ok(QuantalResponse::new(cfg, theta)?.distribution(u_leader))
}

/// One draw from the follower's response. Factorizes the covariance on
/// every call; use [`FollowerDistribution::sampler`] in loops.
pub fn sample_follower<R: Rng + ?Sized>(dist: &FollowerDistribution, rng: &mut R) -> Result<DVector<f64>> {
    Ok(dist.sampler()?.sample(rng))
}

pub fn log_density(u_follower: &[f64], u_leader: &[f64], theta: &ParamVector, cfg: &GameConfig) -> Result<f64> {
    cfg.check_follower_action(u_follower)?;
    cfg.check_leader_action(u_leader)?;
    Ok(QuantalResponse::new(cfg, theta)?.log_density(u_follower, u_leader))
}

pub fn log_density_grad_theta(
    u_follower: &[f64],
    u_leader: &[f64],
    theta: &ParamVector,
    cfg: &GameConfig,
) -> Result<DVector<f64>> {
    cfg.check_interior(theta)?;
    cfg.check_follower_action(u_follower)?;
    cfg.check_leader_action(u_leader)?;
    Ok(QuantalResponse::new_unchecked(cfg, theta)?.score(u_follower, u_leader))
}

pub fn log_density_hessian_theta(
    u_follower: &[f64],
    u_leader: &[f64],
    theta: &ParamVector,
    cfg: &GameConfig,
) -> Result<DMatrix<f64>> {
    cfg.check_interior(theta)?;
    cfg.check_follower_action(u_follower)?;
    cfg.check_leader_action(u_leader)?;
    Ok(QuantalResponse::new_unchecked(cfg, theta)?.hessian(u_leader))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta0() -> ParamVector {
        ParamVector::new(REFERENCE_THETA.to_vec())
    }

    #[test]
    fn reference_config_is_valid() {
        let cfg = GameConfig::reference();
        cfg.validate().unwrap();
        assert_eq!((cfg.n(), cfg.h(), cfg.m()), (2, 2, 3));
        assert_eq!(cfg.r2f(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn follower_cost_examples() {
        let cfg = GameConfig::reference();
        let th = theta0();
        assert_eq!(follower_cost(&[0.0, 0.0], &[10.0, 10.0], &th, &cfg).unwrap(), 0.0);
        assert_relative_eq!(follower_cost(&[1.0, 0.0], &[0.0, 0.0], &th, &cfg).unwrap(), 10.0);
        assert_relative_eq!(follower_cost(&[1.0, 1.0], &[10.0, 10.0], &th, &cfg).unwrap(), 675.0);
    }

    #[test]
    fn follower_cost_rejects_infeasible_theta() {
        let cfg = GameConfig::reference();
        let bad = ParamVector::new(vec![1.0, 5.0, 1.0]);
        assert!(matches!(
            follower_cost(&[0.0, 0.0], &[10.0, 10.0], &bad, &cfg),
            Err(Error::Domain(_))
        ));
        let neg = ParamVector::new(vec![-1.0, 0.0, 1.0]);
        assert!(follower_cost(&[0.0, 0.0], &[10.0, 10.0], &neg, &cfg).is_err());
    }

    #[test]
    fn leader_cost_examples() {
        let cfg = GameConfig::reference();
        assert_eq!(leader_cost(&[0.0, 0.0], &[0.0, 0.0], &cfg).unwrap(), 0.0);
        assert_relative_eq!(leader_cost(&[1.0, 0.0], &[0.0, 0.0], &cfg).unwrap(), 20.5);
        // ½(41+2+2+8) + (12+42+13+1) + ½(400+34+34+4) = 26.5 + 68 + 236
        assert_relative_eq!(leader_cost(&[1.0, 1.0], &[1.0, 1.0], &cfg).unwrap(), 330.5);
        assert!(matches!(leader_cost(&[1.0], &[1.0, 1.0], &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn leader_cost_matches_dense_evaluation() {
        let cfg = GameConfig::reference();
        let ul = [3.0, -2.0];
        let uf = [0.5, 4.0];
        // Expand every product explicitly, no matrix helpers.
        let mut dense = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                dense += 0.5 * ul[i] * cfg.ql[(i, j)] * ul[j];
                dense += uf[i] * cfg.r1l[(i, j)] * ul[j];
                dense += 0.5 * uf[i] * cfg.r2l[(i, j)] * uf[j];
            }
        }
        assert_relative_eq!(leader_cost(&ul, &uf, &cfg).unwrap(), dense, max_relative = 1e-14);
    }

    #[test]
    fn pure_quadratic_scaling() {
        let mut cfg = GameConfig::reference();
        cfg.r1l = DMatrix::zeros(2, 2);
        cfg.r1f = DMatrix::zeros(2, 2);
        let th = theta0();
        let x = [1.3, -0.7];
        let x2 = [2.6, -1.4];
        let f = |u: &[f64]| follower_cost(u, &[5.0, 5.0], &th, &cfg).unwrap();
        assert_relative_eq!(f(&x2), 4.0 * f(&x), max_relative = 1e-14);
        let g = |u: &[f64]| leader_cost(u, &[0.0, 0.0], &cfg).unwrap();
        assert_relative_eq!(g(&x2), 4.0 * g(&x), max_relative = 1e-14);
    }

    #[test]
    fn response_examples() {
        let cfg = GameConfig::reference();
        let th = theta0();
        let dist = follower_response(&[10.0, 10.0], &th, &cfg).unwrap();
        assert_relative_eq!(dist.mean[0], -6.4, max_relative = 1e-12);
        assert_relative_eq!(dist.mean[1], -11.2, max_relative = 1e-12);
        let expected = DMatrix::from_row_slice(2, 2, &[0.06, -0.02, -0.02, 0.04]);
        assert!((&dist.covariance - expected).amax() < 1e-15);

        let mut zero = cfg.clone();
        zero.r1f = DMatrix::zeros(2, 2);
        let dist = follower_response(&[37.0, 91.0], &th, &zero).unwrap();
        assert_eq!(dist.mean, DVector::zeros(2));
    }

    #[test]
    fn response_rejects_zero_lambda() {
        let mut cfg = GameConfig::reference();
        cfg.lambda = 0.0;
        assert!(matches!(
            follower_response(&[10.0, 10.0], &theta0(), &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn covariance_is_scaled_inverse_precision() {
        let mut cfg = GameConfig::reference();
        for lambda in [0.3, 1.0, 7.5] {
            cfg.lambda = lambda;
            for th in [[20.0, 10.0, 30.0], [1.0, -0.5, 2.0], [0.01, 0.0, 0.2]] {
                let th = ParamVector::new(th.to_vec());
                let dist = follower_response(&[10.0, 55.0], &th, &cfg).unwrap();
                let q = cfg.precision(&th);
                let prod = &dist.covariance * &q * lambda;
                assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-12);
                assert!(linalg::is_symmetric(&dist.covariance, 0.0));
                assert!(linalg::is_positive_definite(&dist.covariance));
            }
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let cfg = GameConfig::reference();
        let dist = follower_response(&[10.0, 10.0], &theta0(), &cfg).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let x = sample_follower(&dist, &mut a).unwrap();
            let y = sample_follower(&dist, &mut b).unwrap();
            assert_eq!(x.as_slice(), y.as_slice());
        }
    }

    #[test]
    fn sampler_rejects_indefinite_covariance() {
        let dist = FollowerDistribution {
            mean: DVector::zeros(2),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_follower(&dist, &mut rng), Err(Error::Numerical(_))));
    }

    #[test]
    fn standard_normal_mean() {
        let dist = FollowerDistribution {
            mean: DVector::zeros(2),
            covariance: DMatrix::identity(2, 2),
        };
        let sampler = dist.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += sampler.sample(&mut rng);
        }
        acc /= n as f64;
        assert!(acc.amax() < 0.02, "mean {acc}");
    }

    #[test]
    fn empirical_covariance_within_three_standard_errors() {
        let cfg = GameConfig::reference();
        let dist = follower_response(&[10.0, 10.0], &theta0(), &cfg).unwrap();
        let sampler = dist.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        // Per entry: mean and second moment of (x_i - μ_i)(x_j - μ_j).
        let mut s1 = [0.0; 4];
        let mut s2 = [0.0; 4];
        for _ in 0..n {
            let d = sampler.sample(&mut rng) - &dist.mean;
            for (e, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let p = d[i] * d[j];
                s1[e] += p;
                s2[e] += p * p;
            }
        }
        for (e, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let mean = s1[e] / n as f64;
            let var = s2[e] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - dist.covariance[(i, j)]).abs() <= 3.0 * se,
                "entry ({i},{j}): {mean} vs {}",
                dist.covariance[(i, j)]
            );
        }
    }

    #[test]
    fn log_density_at_mean() {
        let cfg = GameConfig::reference();
        let th = theta0();
        let ul = [10.0, 10.0];
        let mu = follower_response(&ul, &th, &cfg).unwrap().mean;
        let v = log_density(mu.as_slice(), &ul, &th, &cfg).unwrap();
        // -½ log((2π)² · 0.002)
        let expected = -0.5 * ((2.0 * PI).powi(2) * 0.002).ln();
        assert_relative_eq!(v, expected, max_relative = 1e-13);
        assert!((v - 1.2696).abs() < 5e-4);
    }

    /// Closed-form normalizer of exp(−λ J^F) over R^h.
    fn normalizer(ul: &[f64], th: &ParamVector, cfg: &GameConfig) -> f64 {
        let q = cfg.precision(th);
        let q_inv = q.clone().try_inverse().unwrap();
        let ulv = DVector::from_column_slice(ul);
        let b = &cfg.r1f * &ulv;
        let h = cfg.h() as f64;
        (2.0 * PI / cfg.lambda).powf(h / 2.0)
            * q.determinant().powf(-0.5)
            * (0.5 * cfg.lambda * b.dot(&(&q_inv * &b))).exp()
    }

    #[test]
    fn density_equals_boltzmann_weight_over_normalizer() {
        let mut cfg = GameConfig::reference();
        cfg.lambda = 1.7;
        // Small leader actions keep exp(λ bᵀQ⁻¹b / 2) representable.
        let th = ParamVector::new(vec![3.0, -1.0, 2.0]);
        for (ul, uf) in [([0.1, 0.2], [0.3, -0.4]), ([-0.05, 0.0], [1.0, 1.0]), ([0.0, 0.0], [0.0, 0.5])] {
            let z = normalizer(&ul, &th, &cfg);
            let jf = follower_cost(&uf, &ul, &th, &cfg).unwrap();
            let direct = (-cfg.lambda * jf).exp() / z;
            let p = log_density(&uf, &ul, &th, &cfg).unwrap().exp();
            assert_relative_eq!(p, direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let cfg = GameConfig::reference();
        let th = theta0();
        let ul = [10.0, 10.0];
        let mu = follower_response(&ul, &th, &cfg).unwrap().mean;
        // Grid over [−50, 50]² around the mean, midpoint rule.
        let model = QuantalResponse::new(&cfg, &th).unwrap();
        let half = 50.0;
        let cells = 2000;
        let step = 2.0 * half / cells as f64;
        let mut total = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let x = mu[0] - half + (i as f64 + 0.5) * step;
                let y = mu[1] - half + (j as f64 + 0.5) * step;
                total += model.log_density(&[x, y], &ul).exp();
            }
        }
        total *= step * step;
        assert!((total - 1.0).abs() < 1e-4, "integral {total}");
    }

    fn random_interior(rng: &mut ChaCha8Rng) -> ParamVector {
        loop {
            let t1: f64 = rng.random_range(1.0..50.0);
            let t3 = rng.random_range(1.0..50.0);
            let lim = (t1 * t3).sqrt();
            let t2 = rng.random_range(-0.9 * lim..0.9 * lim);
            let th = ParamVector::new(vec![t1, t2, t3]);
            if GameConfig::reference().check_interior(&th).is_ok() {
                return th;
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = GameConfig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let th = random_interior(&mut rng);
            let ul = [rng.random_range(10.0..100.0), rng.random_range(10.0..100.0)];
            let mu = follower_response(&ul, &th, &cfg).unwrap().mean;
            let uf = [mu[0] + rng.random_range(-1.0..1.0), mu[1] + rng.random_range(-1.0..1.0)];
            let g = log_density_grad_theta(&uf, &ul, &th, &cfg).unwrap();
            for k in 0..3 {
                let step = 1e-5;
                let mut hi = th.as_slice().to_vec();
                let mut lo = th.as_slice().to_vec();
                hi[k] += step;
                lo[k] -= step;
                let fd = (log_density(&uf, &ul, &hi.into(), &cfg).unwrap()
                    - log_density(&uf, &ul, &lo.into(), &cfg).unwrap())
                    / (2.0 * step);
                let scale = g[k].abs().max(1.0);
                assert!((fd - g[k]).abs() <= 1e-5 * scale, "k={k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn gradient_at_mean_is_symbolic_form() {
        // uF = μ: ∂_k = ½ tr(Q⁻¹E_k) − (λ/2)(μᵀE_kμ − μᵀE_kμ) = ½ tr(Q⁻¹E_k).
        let cfg = GameConfig::reference();
        let th = theta0();
        let ul = [10.0, 10.0];
        let mu = follower_response(&ul, &th, &cfg).unwrap().mean;
        let g = log_density_grad_theta(mu.as_slice(), &ul, &th, &cfg).unwrap();
        // Q⁻¹ = [[0.06, −0.02], [−0.02, 0.04]]
        assert_relative_eq!(g[0], 0.03, max_relative = 1e-12);
        assert_relative_eq!(g[1], -0.02, max_relative = 1e-12);
        assert_relative_eq!(g[2], 0.02, max_relative = 1e-12);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let cfg = GameConfig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let th = random_interior(&mut rng);
            let ul = [rng.random_range(10.0..100.0), rng.random_range(10.0..100.0)];
            let uf = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let hess = log_density_hessian_theta(&uf, &ul, &th, &cfg).unwrap();
            assert_eq!(hess, hess.transpose());
            for l in 0..3 {
                let step = 1e-5;
                let mut hi = th.as_slice().to_vec();
                let mut lo = th.as_slice().to_vec();
                hi[l] += step;
                lo[l] -= step;
                let fd = (log_density_grad_theta(&uf, &ul, &hi.into(), &cfg).unwrap()
                    - log_density_grad_theta(&uf, &ul, &lo.into(), &cfg).unwrap())
                    / (2.0 * step);
                for k in 0..3 {
                    let scale = hess[(k, l)].abs().max(1.0);
                    assert!((fd[k] - hess[(k, l)]).abs() <= 1e-4 * scale);
                }
            }
        }
    }

    #[test]
    fn hessian_negative_definite_at_interior_points() {
        let cfg = GameConfig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let th = random_interior(&mut rng);
            let ul = [rng.random_range(10.0..100.0), rng.random_range(10.0..100.0)];
            let uf = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let hess = log_density_hessian_theta(&uf, &ul, &th, &cfg).unwrap();
            assert!(linalg::sym_eigenvalues(&hess).iter().all(|&e| e < 0.0));
        }
    }

    #[test]
    fn derivatives_reject_boundary_theta() {
        let cfg = GameConfig::reference();
        // θ1θ3 − θ2² = κ exactly: feasible but on the boundary.
        let th = ParamVector::new(vec![1.0, 0.0, cfg.kappa]);
        assert!(cfg.check_feasible(&th).is_ok());
        assert!(log_density_grad_theta(&[0.0, 0.0], &[10.0, 10.0], &th, &cfg).is_err());
        assert!(log_density_hessian_theta(&[0.0, 0.0], &[10.0, 10.0], &th, &cfg).is_err());
    }

    #[test]
    fn score_has_zero_mean() {
        let cfg = GameConfig::reference();
        let th = theta0();
        let ul = [10.0, 10.0];
        let model = QuantalResponse::new(&cfg, &th).unwrap();
        let sampler = model.distribution(&ul).sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 1_000_000;
        let mut s1 = DVector::zeros(3);
        let mut s2 = DVector::zeros(3);
        for _ in 0..n {
            let uf = sampler.sample(&mut rng);
            let g = model.score(uf.as_slice(), &ul);
            s2 += g.component_mul(&g);
            s1 += g;
        }
        for k in 0..3 {
            let mean = s1[k] / n as f64;
            let se = ((s2[k] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se, "component {k}: {mean} (se {se})");
        }
    }

    #[test]
    fn dataset_indices() {
        let mut d = Dataset::new();
        d.push(vec![1.0, 2.0], vec![0.0, 0.0]);
        d.push(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert_eq!(d.records()[1].t, 2);
        let bad = vec![InteractionRecord {
            t: 2,
            u_leader: vec![0.0; 2],
            u_follower: vec![0.0; 2],
        }];
        assert!(Dataset::from_records(bad).is_err());
        assert!(Dataset::from_records(d.records().to_vec()).is_ok());
    }

    #[test]
    fn config_validation_names_failure() {
        let mut cfg = GameConfig::reference();
        cfg.ql = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("QL not positive definite"), "{err}");

        let mut cfg = GameConfig::reference();
        cfg.leader_box = LeaderBox::cube(2, 5.0, 5.0);
        assert!(cfg.validate().is_err());

        let mut cfg = GameConfig::reference();
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }
}
