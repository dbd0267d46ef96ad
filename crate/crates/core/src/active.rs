//! The sequential algorithms: pure active learning (Algorithm 1), the
//! exploration–exploitation loop (Algorithm 2) and the two baselines, plus
//! the leader-side closed forms they need.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{mle, MleSettings};
use crate::fisher::{Criterion, InformationField};
use crate::game::{Dataset, GameConfig, ParamVector, QuantalResponse};
use crate::linalg;
use crate::search::BoxSearch;

/// `ρ_t = (μ0 / t) · σ(α (‖Δθ̂‖ − η))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSchedule {
    pub mu0: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        Self {
            mu0: 4e7,
            alpha: 1e3,
            eta: 2.0,
        }
    }
}

impl RhoSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0.is_finite() && self.mu0 >= 0.0) {
            return Err(Error::config("rho_schedule mu0 must be nonnegative"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("rho_schedule alpha must be positive"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("rho_schedule eta must be positive"));
        }
        Ok(())
    }

    /// ρ_t for an estimate change of `distance` (may be +∞).
    pub fn at_distance(&self, t: usize, distance: f64) -> f64 {
        let mu_t = self.mu0 / t.max(1) as f64;
        mu_t * sigmoid(self.alpha * (distance - self.eta))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn rho(t: usize, theta_t: &ParamVector, theta_prev: &ParamVector, sched: &RhoSchedule) -> Result<f64> {
    if t == 0 {
        return Err(Error::domain("rho is defined for t >= 1"));
    }
    Ok(sched.at_distance(t, theta_t.distance(theta_prev)))
}

/// `C(θ) = QL + 2 R1Fᵀ Q⁻¹ R2L Q⁻¹ R1F − R1Fᵀ Q⁻¹ R1L − R1Lᵀ Q⁻¹ R1F`.
///
/// Its positive definiteness at the true parameter is the strong-convexity
/// condition checked by [`stackelberg_equilibrium`]. The exact Hessian of the
/// expected leader cost is [`expected_cost_hessian`], which carries the R2L
/// term once rather than twice.
pub fn compute_c(theta: &ParamVector, cfg: &GameConfig) -> Result<DMatrix<f64>> {
    let model = QuantalResponse::new(cfg, theta)?;
    let g = model.gain();
    let c = &cfg.ql + g.transpose() * &cfg.r2l * g * 2.0 - g.transpose() * &cfg.r1l - cfg.r1l.transpose() * g;
    Ok(c)
}

/// Hessian K of uL ↦ E[J^L]:
/// `K = QL + Gᵀ R2L G − Gᵀ R1L − R1Lᵀ G` with `G = Q⁻¹ R1F`.
pub fn expected_cost_hessian(theta: &ParamVector, cfg: &GameConfig) -> Result<DMatrix<f64>> {
    Ok(CostField::new(cfg, &QuantalResponse::new(cfg, theta)?).hessian)
}

/// uL ↦ E[J^L(uL, uF)] under the response model at a fixed θ:
/// `½ uLᵀ K uL + ½ tr(R2L Σ)`.
#[derive(Debug, Clone)]
pub struct CostField {
    hessian: DMatrix<f64>,
    constant: f64,
}

impl CostField {
    pub fn new(cfg: &GameConfig, model: &QuantalResponse) -> Self {
        let g = model.gain();
        let k = &cfg.ql + g.transpose() * &cfg.r2l * g - g.transpose() * &cfg.r1l - cfg.r1l.transpose() * g;
        let constant = 0.5 * (&cfg.r2l * model.covariance()).trace();
        Self {
            hessian: linalg::symmetrize(&k),
            constant,
        }
    }

    pub fn value(&self, u_leader: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u_leader);
        0.5 * linalg::quad_form(&u, &self.hessian, &u) + self.constant
    }

    pub fn gradient(&self, u_leader: &[f64]) -> DVector<f64> {
        &self.hessian * DVector::from_column_slice(u_leader)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }
}

pub fn expected_leader_cost(u_leader: &[f64], theta: &ParamVector, cfg: &GameConfig) -> Result<f64> {
    cfg.check_leader_action(u_leader)?;
    let model = QuantalResponse::new(cfg, theta)?;
    Ok(CostField::new(cfg, &model).value(u_leader))
}

/// `argmin_{uL ∈ box} E[J^L | θ̂] − ρ H(uL | θ̂)` with the default search.
pub fn query_alg2(theta_hat: &ParamVector, rho: f64, c: Criterion, cfg: &GameConfig) -> Result<Vec<f64>> {
    query_alg2_with(theta_hat, rho, c, cfg, &BoxSearch::default())
}

pub fn query_alg2_with(
    theta_hat: &ParamVector,
    rho: f64,
    c: Criterion,
    cfg: &GameConfig,
    search: &BoxSearch,
) -> Result<Vec<f64>> {
    if rho.is_nan() || rho < 0.0 {
        return Err(Error::domain("rho must be nonnegative"));
    }
    let model = QuantalResponse::new(cfg, theta_hat)?;
    Ok(balanced_query(&model, rho, c, cfg, search))
}

fn balanced_query(model: &QuantalResponse, rho: f64, c: Criterion, cfg: &GameConfig, search: &BoxSearch) -> Vec<f64> {
    let cost = CostField::new(cfg, model);
    if rho == 0.0 {
        return search.minimize(&cfg.leader_box, |u| cost.value(u)).point;
    }
    let info = InformationField::new(model);
    search
        .minimize(&cfg.leader_box, |u| cost.value(u) - rho * info.criterion_at(u, c))
        .point
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub u_leader_star: Vec<f64>,
    /// Expected leader cost at the true parameter.
    pub cost: f64,
}

/// Minimizer of the expected leader cost under the true parameter over the
/// box.
///
/// Requires C(θ) positive definite (and the exact cost Hessian with it).
/// Solved by projected gradient with step 1/L; every 25 iterations the
/// current active set is tried with an exact reduced solve, which is kept
/// when it satisfies the box KKT conditions.
pub fn stackelberg_equilibrium(theta_true: &ParamVector, cfg: &GameConfig) -> Result<EquilibriumResult> {
    let c = compute_c(theta_true, cfg)?;
    if !linalg::is_positive_definite(&linalg::symmetrize(&c)) {
        return Err(Error::numerical(
            "C(theta) is not positive definite: the expected leader cost is not strongly convex",
        ));
    }
    let model = QuantalResponse::new(cfg, theta_true)?;
    let field = CostField::new(cfg, &model);
    let k = field.hessian();
    if !linalg::is_positive_definite(k) {
        return Err(Error::numerical(
            "expected leader cost Hessian is not positive definite: no unique equilibrium",
        ));
    }
    let bx = &cfg.leader_box;
    let n = cfg.n();
    let lipschitz = *linalg::sym_eigenvalues(k).last().expect("non-empty");
    let project = |x: &mut DVector<f64>| bx.clamp(x.as_mut_slice());

    let mut x = DVector::zeros(n);
    project(&mut x);
    for iter in 0..200_000 {
        let grad = k * &x;
        let mut next = &x - &grad / lipschitz;
        project(&mut next);
        x = next;
        if iter % 25 == 24 {
            if let Some(exact) = active_set_solve(k, &x, cfg) {
                x = exact;
                break;
            }
        }
        let g = k * &x;
        let mut probe = &x - &g;
        project(&mut probe);
        if (&probe - &x).amax() <= 1e-10 {
            break;
        }
    }
    Ok(EquilibriumResult {
        cost: field.value(x.as_slice()),
        u_leader_star: x.iter().copied().collect(),
    })
}

/// Solves `K_FF x_F = −K_FA x_A` on the free set of `x` and returns the
/// point if it is feasible and satisfies the KKT sign conditions.
fn active_set_solve(k: &DMatrix<f64>, x: &DVector<f64>, cfg: &GameConfig) -> Option<DVector<f64>> {
    let bx = &cfg.leader_box;
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|&i| x[i] > bx.lower[i] && x[i] < bx.upper[i]).collect();
    let mut y = x.clone();
    if !free.is_empty() {
        let kff = DMatrix::from_fn(free.len(), free.len(), |a, b| k[(free[a], free[b])]);
        let rhs = DVector::from_fn(free.len(), |a, _| {
            -(0..n).filter(|j| !free.contains(j)).map(|j| k[(free[a], j)] * x[j]).sum::<f64>()
        });
        let sol = kff.cholesky()?.solve(&rhs);
        for (a, &i) in free.iter().enumerate() {
            y[i] = sol[a];
        }
    }
    box_kkt_holds(k, &y, cfg, 1e-8).then_some(y)
}

/// Box KKT: each coordinate is interior with |∂_i| ≤ tol, at the lower
/// bound with ∂_i ≥ −tol, or at the upper bound with ∂_i ≤ tol.
pub fn box_kkt_holds(k: &DMatrix<f64>, x: &DVector<f64>, cfg: &GameConfig, tol: f64) -> bool {
    let bx = &cfg.leader_box;
    let grad = k * x;
    (0..x.len()).all(|i| {
        let (lo, hi) = (bx.lower[i], bx.upper[i]);
        if x[i] < lo || x[i] > hi {
            false
        } else if x[i] == lo {
            grad[i] >= -tol
        } else if x[i] == hi {
            grad[i] <= tol
        } else {
            grad[i].abs() <= tol
        }
    })
}

/// Leader policy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Maximize the information criterion each round.
    Alg1,
    /// Minimize expected cost minus ρ_t times the information criterion.
    Alg2,
    /// Uniform random queries over the box.
    Uniform,
    /// Minimize the estimated expected cost only.
    NoExploration,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Uniform => "uniform",
            Algorithm::NoExploration => "no_exploration",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            "uniform" => Ok(Algorithm::Uniform),
            "no_exploration" => Ok(Algorithm::NoExploration),
            other => Err(Error::config(format!(
                "unknown algorithm {other:?} (expected alg1, alg2, uniform or no_exploration)"
            ))),
        }
    }
}

/// Everything a run needs besides the game and the random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    /// Query criterion (Alg. 1 and 2); the baselines only report it.
    pub criterion: Criterion,
    pub rho_schedule: RhoSchedule,
    pub mle: MleSettings,
    pub search: BoxSearch,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, criterion: Criterion) -> Self {
        Self {
            algorithm,
            criterion,
            rho_schedule: RhoSchedule::default(),
            mle: MleSettings::default(),
            search: BoxSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub u_leader: Vec<f64>,
    pub u_follower: Vec<f64>,
    /// Estimate after this round's update.
    pub theta_hat: Vec<f64>,
    /// ρ_t; Algorithm 2 only.
    pub rho: Option<f64>,
    /// H(uL(t) | θ̂(t−1)).
    pub criterion: f64,
    /// Estimated expected leader cost E[J^L(uL(t)) | θ̂(t−1)].
    pub expected_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub path_id: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    pub meta: RunMeta,
    pub steps: Vec<StepRecord>,
}

impl RunTrajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn final_estimate(&self) -> Option<ParamVector> {
        self.steps.last().map(|s| ParamVector::new(s.theta_hat.clone()))
    }

    pub fn estimate_at(&self, t: usize) -> Option<ParamVector> {
        self.steps.get(t.checked_sub(1)?).map(|s| ParamVector::new(s.theta_hat.clone()))
    }
}

/// Plays `horizon` rounds against a follower with parameter `theta_true`.
///
/// Round t: (Alg. 2) compute ρ_t from the last two estimates, with the
/// first difference taken as +∞; choose uL(t) from θ̂(t−1) (uniform draws
/// come from `rng`); draw uF(t) from `rng`; refit θ̂(t) on all rounds so far,
/// warm-started at θ̂(t−1).
pub fn run_policy<R: Rng + ?Sized>(
    cfg: &GameConfig,
    theta_true: &ParamVector,
    spec: &RunSpec,
    horizon: usize,
    meta: RunMeta,
    rng: &mut R,
) -> Result<RunTrajectory> {
    if horizon == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let truth = QuantalResponse::new(cfg, theta_true)?;
    let mut data = Dataset::new();
    let mut estimate = ParamVector::new(crate::estimation::project(spec.mle.init_theta.as_slice(), cfg));
    let mut previous: Option<ParamVector> = None;
    let mut steps = Vec::with_capacity(horizon);

    for t in 1..=horizon {
        let model = QuantalResponse::new_unchecked(cfg, &estimate)?;
        let info = InformationField::new(&model);
        let cost = CostField::new(cfg, &model);

        let mut rho_t = None;
        let u_leader = match spec.algorithm {
            Algorithm::Alg1 => {
                spec.search
                    .maximize(&cfg.leader_box, |u| info.criterion_at(u, spec.criterion))
                    .point
            }
            Algorithm::Alg2 => {
                let distance = previous.as_ref().map_or(f64::INFINITY, |p| estimate.distance(p));
                let r = spec.rho_schedule.at_distance(t, distance);
                rho_t = Some(r);
                balanced_query(&model, r, spec.criterion, cfg, &spec.search)
            }
            Algorithm::Uniform => {
                let bx = &cfg.leader_box;
                (0..cfg.n()).map(|i| rng.random_range(bx.lower[i]..=bx.upper[i])).collect()
            }
            Algorithm::NoExploration => balanced_query(&model, 0.0, spec.criterion, cfg, &spec.search),
        };

        let u_follower = truth.distribution(&u_leader).sampler()?.sample(rng);
        data.push(u_leader.clone(), u_follower.iter().copied().collect());

        let fit = mle(&data, &spec.mle.starting_at(estimate.clone()), cfg)?;
        steps.push(StepRecord {
            t,
            criterion: info.criterion_at(&u_leader, spec.criterion),
            expected_cost: cost.value(&u_leader),
            u_follower: u_follower.iter().copied().collect(),
            u_leader,
            theta_hat: fit.theta_hat.as_slice().to_vec(),
            rho: rho_t,
        });
        previous = Some(std::mem::replace(&mut estimate, fit.theta_hat));
    }

    Ok(RunTrajectory { meta, steps })
}

fn meta_for(spec: &RunSpec) -> RunMeta {
    RunMeta {
        path_id: 0,
        seed: 0,
        algorithm: spec.algorithm,
        criterion: spec.criterion,
    }
}

pub fn run_algorithm1<R: Rng + ?Sized>(
    cfg: &GameConfig,
    theta_true: &ParamVector,
    settings: &MleSettings,
    c: Criterion,
    horizon: usize,
    rng: &mut R,
) -> Result<RunTrajectory> {
    let spec = RunSpec {
        mle: settings.clone(),
        ..RunSpec::new(Algorithm::Alg1, c)
    };
    run_policy(cfg, theta_true, &spec, horizon, meta_for(&spec), rng)
}

pub fn run_algorithm2<R: Rng + ?Sized>(
    cfg: &GameConfig,
    theta_true: &ParamVector,
    settings: &MleSettings,
    c: Criterion,
    sched: &RhoSchedule,
    horizon: usize,
    rng: &mut R,
) -> Result<RunTrajectory> {
    let spec = RunSpec {
        mle: settings.clone(),
        rho_schedule: *sched,
        ..RunSpec::new(Algorithm::Alg2, c)
    };
    run_policy(cfg, theta_true, &spec, horizon, meta_for(&spec), rng)
}

pub fn run_baseline_uniform<R: Rng + ?Sized>(
    cfg: &GameConfig,
    theta_true: &ParamVector,
    settings: &MleSettings,
    horizon: usize,
    rng: &mut R,
) -> Result<RunTrajectory> {
    let spec = RunSpec {
        mle: settings.clone(),
        ..RunSpec::new(Algorithm::Uniform, Criterion::D)
    };
    run_policy(cfg, theta_true, &spec, horizon, meta_for(&spec), rng)
}

pub fn run_baseline_no_exploration<R: Rng + ?Sized>(
    cfg: &GameConfig,
    theta_true: &ParamVector,
    settings: &MleSettings,
    horizon: usize,
    rng: &mut R,
) -> Result<RunTrajectory> {
    let spec = RunSpec {
        mle: settings.clone(),
        ..RunSpec::new(Algorithm::NoExploration, Criterion::E)
    };
    run_policy(cfg, theta_true, &spec, horizon, meta_for(&spec), rng)
}
