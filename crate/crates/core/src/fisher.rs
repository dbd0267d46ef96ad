//! Observation information matrix (OIM), design criteria and the
//! information-maximizing query.
//!
//! For the Gaussian response `N(μ(θ), Σ(θ))` the Fisher information is
//!
//! ```text
//! F_kl = ∂_kμᵀ Σ⁻¹ ∂_lμ + ½ tr(Σ⁻¹ ∂_kΣ Σ⁻¹ ∂_lΣ)
//!      = λ μᵀ E_k Q⁻¹ E_l μ + ½ tr(Q⁻¹ E_k Q⁻¹ E_l)
//! ```
//!
//! using `∂_kμ = −Q⁻¹E_kμ` and `∂_kΣ = −Q⁻¹E_kQ⁻¹/λ`. Since μ is linear in
//! the leader action, every entry is a constant plus a quadratic form in uL,
//! which [`InformationField`] precomputes for fast grid scans.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameConfig, ParamVector, QuantalResponse};
use crate::linalg::{self, SymBasis};
use crate::search::{grid_points, BoxSearch};

/// Symmetric positive-semidefinite information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Oim(DMatrix<f64>);

impl Oim {
    /// Checks symmetry (1e-12) and the eigenvalue floor (−1e-10), both
    /// relative to the largest entry, then symmetrizes.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_square(&matrix) {
            return Err(Error::domain("information matrix must be square"));
        }
        let scale = matrix.amax().max(1.0);
        if !linalg::is_symmetric(&matrix, 1e-12) {
            return Err(Error::numerical("information matrix is not symmetric"));
        }
        let sym = linalg::symmetrize(&matrix);
        if linalg::min_eigenvalue(&sym) < -1e-10 * scale {
            return Err(Error::numerical("information matrix is not positive semidefinite"));
        }
        Ok(Self(sym))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Optimal-design criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Trace.
    A,
    /// det^{1/m}.
    D,
    /// Smallest eigenvalue.
    E,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::A, Criterion::D, Criterion::E];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criterion::A => "A",
            Criterion::D => "D",
            Criterion::E => "E",
        };
        f.write_str(s)
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Criterion::A),
            "D" | "d" => Ok(Criterion::D),
            "E" | "e" => Ok(Criterion::E),
            other => Err(Error::config(format!("unknown criterion {other:?} (expected A, D or E)"))),
        }
    }
}

fn criterion_of_matrix(f: &DMatrix<f64>, c: Criterion) -> Result<f64> {
    let m = f.nrows();
    match c {
        Criterion::A => Ok(f.trace()),
        Criterion::D => {
            let det = f.determinant();
            if det >= 0.0 {
                return Ok(det.powf(1.0 / m as f64));
            }
            let scale = f.amax().max(1.0).powi(m as i32);
            if det >= -1e-10 * scale {
                Ok(0.0)
            } else {
                Err(Error::numerical(format!("information matrix has negative determinant {det}")))
            }
        }
        Criterion::E => Ok(linalg::min_eigenvalue(f)),
    }
}

/// Criterion value of an information matrix.
pub fn criterion_value(f: &Oim, c: Criterion) -> Result<f64> {
    criterion_of_matrix(f.matrix(), c)
}

/// The map uL ↦ F(uL | θ) at a fixed θ.
#[derive(Debug, Clone)]
pub struct InformationField {
    m: usize,
    n: usize,
    /// Covariance part ½ tr(Q⁻¹E_k Q⁻¹E_l); does not depend on uL.
    base: DMatrix<f64>,
    /// For each k ≤ l (row-major upper triangle), the n×n matrix
    /// `λ Gᵀ E_k Q⁻¹ E_l G` with `G = Q⁻¹R1F`, symmetrized.
    quad: Vec<DMatrix<f64>>,
    /// Pieces for the determinant in factored form; see `det_at`.
    basis: SymBasis,
    gain: DMatrix<f64>,
    /// `√λ Lᵀ` with `Q⁻¹ = L Lᵀ`.
    scaled_chol_t: DMatrix<f64>,
    base_inv: Option<(DMatrix<f64>, f64)>,
}

impl InformationField {
    pub fn new(model: &QuantalResponse) -> Self {
        let basis = model.basis();
        let m = basis.len();
        let w = model.precision_inverse();
        let g = model.gain();
        let n = g.ncols();
        let mut base = DMatrix::zeros(m, m);
        let mut quad = Vec::with_capacity(m * (m + 1) / 2);
        for k in 0..m {
            for l in k..m {
                let v = 0.5 * basis.sandwich_trace(w, k, w, l);
                base[(k, l)] = v;
                base[(l, k)] = v;
                let ekwel = basis.matrix(k) * w * basis.matrix(l);
                let mk = g.transpose() * ekwel * g * model.lambda();
                quad.push(linalg::symmetrize(&mk));
            }
        }
        let scaled_chol_t = w
            .clone()
            .cholesky()
            .map(|c| c.l().transpose() * model.lambda().sqrt())
            .unwrap_or_else(|| DMatrix::zeros(0, 0));
        let base_inv = base.clone().cholesky().map(|c| (c.inverse(), c.determinant()));
        Self {
            m,
            n,
            base,
            quad,
            basis: basis.clone(),
            gain: g.clone(),
            scaled_chol_t,
            base_inv,
        }
    }

    /// det F(uL) through `det(B + Jᵀ S J) = det(B) · det(I + S^{½} J B⁻¹ Jᵀ S^{½})`
    /// with B the covariance part, `J = [E_1 μ, …, E_m μ]` and `S = λ Q⁻¹`.
    /// The mean part has rank at most h < m, so forming F and taking its
    /// determinant loses most digits of the small eigenvalue; this form
    /// never subtracts.
    fn det_at(&self, u_leader: &[f64]) -> Option<f64> {
        let (b_inv, b_det) = self.base_inv.as_ref()?;
        if self.scaled_chol_t.is_empty() {
            return None;
        }
        let mu = -(&self.gain * DVector::from_column_slice(u_leader));
        let h = mu.len();
        let mut j = DMatrix::zeros(h, self.m);
        for k in 0..self.m {
            j.set_column(k, &(self.basis.matrix(k) * &mu));
        }
        let sj = &self.scaled_chol_t * j;
        let inner = DMatrix::identity(h, h) + &sj * b_inv * sj.transpose();
        Some(b_det * inner.determinant())
    }

    pub fn at(&self, u_leader: &[f64]) -> DMatrix<f64> {
        let u = DVector::from_column_slice(u_leader);
        let mut f = self.base.clone();
        let mut idx = 0;
        for k in 0..self.m {
            for l in k..self.m {
                let v = linalg::quad_form(&u, &self.quad[idx], &u);
                f[(k, l)] += v;
                if k != l {
                    f[(l, k)] += v;
                }
                idx += 1;
            }
        }
        f
    }

    /// `H(uL) = criterion(F(uL))`; NaN if the criterion cannot be evaluated.
    pub fn criterion_at(&self, u_leader: &[f64], c: Criterion) -> f64 {
        if c == Criterion::D {
            if let Some(det) = self.det_at(u_leader) {
                return det.powf(1.0 / self.m as f64);
            }
        }
        criterion_of_matrix(&self.at(u_leader), c).unwrap_or(f64::NAN)
    }

    pub fn leader_dim(&self) -> usize {
        self.n
    }
}

pub fn oim_closed_form(u_leader: &[f64], theta: &ParamVector, cfg: &GameConfig) -> Result<Oim> {
    cfg.check_leader_action(u_leader)?;
    let model = QuantalResponse::new(cfg, theta)?;
    Oim::new(InformationField::new(&model).at(u_leader))
}

/// Monte-Carlo estimate of the OIM with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct OimEstimate {
    pub oim: Oim,
    pub std_error: DMatrix<f64>,
}

/// Mean of score outer products over `samples` follower draws.
pub fn oim_monte_carlo<R: Rng + ?Sized>(
    u_leader: &[f64],
    theta: &ParamVector,
    cfg: &GameConfig,
    samples: usize,
    rng: &mut R,
) -> Result<Oim> {
    Ok(oim_monte_carlo_detailed(u_leader, theta, cfg, samples, rng)?.oim)
}

pub fn oim_monte_carlo_detailed<R: Rng + ?Sized>(
    u_leader: &[f64],
    theta: &ParamVector,
    cfg: &GameConfig,
    samples: usize,
    rng: &mut R,
) -> Result<OimEstimate> {
    if samples == 0 {
        return Err(Error::domain("Monte-Carlo OIM needs at least one sample"));
    }
    cfg.check_leader_action(u_leader)?;
    let model = QuantalResponse::new(cfg, theta)?;
    let sampler = model.distribution(u_leader).sampler()?;
    let m = cfg.m();
    let mut s1 = DMatrix::zeros(m, m);
    let mut s2 = DMatrix::zeros(m, m);
    for _ in 0..samples {
        let uf = sampler.sample(rng);
        let g = model.score(uf.as_slice(), u_leader);
        let outer = &g * g.transpose();
        s2 += outer.component_mul(&outer);
        s1 += outer;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = s2 / n - mean.component_mul(&mean);
    let std_error = var.map(|v| (v.max(0.0) / n).sqrt());
    Ok(OimEstimate {
        oim: Oim::new(mean)?,
        std_error,
    })
}

/// `argmax_{uL ∈ box} criterion(F(uL | θ̂))` with the default search.
pub fn maximize_criterion(theta_hat: &ParamVector, c: Criterion, cfg: &GameConfig) -> Result<Vec<f64>> {
    maximize_criterion_with(theta_hat, c, cfg, &BoxSearch::default())
}

pub fn maximize_criterion_with(
    theta_hat: &ParamVector,
    c: Criterion,
    cfg: &GameConfig,
    search: &BoxSearch,
) -> Result<Vec<f64>> {
    let model = QuantalResponse::new(cfg, theta_hat)?;
    let field = InformationField::new(&model);
    Ok(search.maximize(&cfg.leader_box, |u| field.criterion_at(u, c)).point)
}

/// The `k` best grid cells of the criterion, best first, so near-ties of
/// the maximizer are visible.
pub fn top_grid_cells(
    theta_hat: &ParamVector,
    c: Criterion,
    cfg: &GameConfig,
    resolution: usize,
    k: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let model = QuantalResponse::new(cfg, theta_hat)?;
    let field = InformationField::new(&model);
    let mut cells: Vec<(Vec<f64>, f64)> = grid_points(&cfg.leader_box, resolution)
        .map(|u| {
            let v = field.criterion_at(&u, c);
            (u, v)
        })
        .collect();
    cells.sort_by(|a, b| b.1.total_cmp(&a.1));
    cells.truncate(k);
    Ok(cells)
}

/// Running sum of information matrices; the average is F_T = sum / T.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningOim {
    sum: DMatrix<f64>,
    count: usize,
}

impl RunningOim {
    pub fn new(m: usize) -> Self {
        Self {
            sum: DMatrix::zeros(m, m),
            count: 0,
        }
    }

    pub fn update(&mut self, f: &Oim) {
        self.sum += f.matrix();
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> &DMatrix<f64> {
        &self.sum
    }

    pub fn average(&self) -> Option<DMatrix<f64>> {
        (self.count > 0).then(|| &self.sum / self.count as f64)
    }
}

pub fn running_oim_update(mut r: RunningOim, f: &Oim) -> RunningOim {
    r.update(f);
    r
}
