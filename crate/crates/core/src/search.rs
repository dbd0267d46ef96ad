//! Global search over the leader's box: a uniform grid scan followed by
//! local refinement from the best cells.
//!
//! Refinement runs projected gradient ascent with a central-difference
//! gradient, then a pattern search that halves its step until it falls below
//! `tol` (in box-normalized units). Only improvements above rounding noise are accepted, so
//! a flat objective returns the best grid node, and ties between candidates
//! go to the lexicographically smallest point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::LeaderBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSearch {
    /// Grid nodes per coordinate.
    pub resolution: usize,
    /// Number of best grid nodes refined locally.
    pub starts: usize,
    /// Smallest pattern step, relative to the box width.
    pub tol: f64,
}

impl Default for BoxSearch {
    fn default() -> Self {
        Self {
            resolution: 25,
            starts: 4,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Nodes of a `resolution^n` grid over the box, in lexicographic order.
pub fn grid_points(bx: &LeaderBox, resolution: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    let n = bx.dim();
    let total = resolution.checked_pow(n as u32).unwrap_or(usize::MAX);
    (0..total).map(move |mut idx| {
        let mut p = vec![0.0; n];
        for i in (0..n).rev() {
            let j = idx % resolution;
            idx /= resolution;
            p[i] = if resolution == 1 {
                bx.lower[i]
            } else if j + 1 == resolution {
                bx.upper[i]
            } else {
                bx.lower[i] + bx.width(i) * j as f64 / (resolution - 1) as f64
            };
        }
        p
    })
}

/// `v` improves on `current` by more than rounding noise.
fn gains(v: f64, current: f64) -> bool {
    v > current + 4.0 * f64::EPSILON * current.abs()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// `a` beats `b`: strictly larger value, or equal value and lexicographically smaller.
fn better(a: &SearchResult, b: &SearchResult) -> bool {
    a.value > b.value || (a.value == b.value && lex_less(&a.point, &b.point))
}

/// Pattern directions: every nonzero vector of {−1, 0, 1}^n for n ≤ 3,
/// otherwise the coordinate axes.
fn pattern(n: usize) -> Vec<Vec<f64>> {
    if n <= 3 {
        let total = 3usize.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|_| {
                        let d = (idx % 3) as f64 - 1.0;
                        idx /= 3;
                        d
                    })
                    .collect::<Vec<f64>>()
            })
            .filter(|d| d.iter().any(|&x| x != 0.0))
            .collect()
    } else {
        let mut dirs = Vec::with_capacity(2 * n);
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[i] = s;
                dirs.push(d);
            }
        }
        dirs
    }
}

impl BoxSearch {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::config("grid_resolution must be at least 2"));
        }
        if self.starts == 0 {
            return Err(Error::config("search starts must be positive"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::config("search tol must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn maximize<F: Fn(&[f64]) -> f64>(&self, bx: &LeaderBox, f: F) -> SearchResult {
        let n = bx.dim();
        // Work in normalized coordinates z ∈ [0, 1]^n.
        let to_u = |z: &[f64]| -> Vec<f64> { (0..n).map(|i| bx.lower[i] + bx.width(i) * z[i]).collect() };
        let to_z = |u: &[f64]| -> Vec<f64> { (0..n).map(|i| (u[i] - bx.lower[i]) / bx.width(i)).collect() };
        let eval = |z: &[f64]| -> f64 {
            let v = f(&to_u(z));
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };

        let mut seeds: Vec<SearchResult> = Vec::with_capacity(self.starts + 1);
        for u in grid_points(bx, self.resolution) {
            let cand = SearchResult {
                value: eval(&to_z(&u)),
                point: u,
            };
            let pos = seeds.iter().position(|s| better(&cand, s)).unwrap_or(seeds.len());
            if pos < self.starts {
                seeds.insert(pos, cand);
                seeds.truncate(self.starts);
            }
        }

        let spacing = 1.0 / (self.resolution - 1) as f64;
        let mut best: Option<SearchResult> = None;
        for seed in seeds {
            let z0 = to_z(&seed.point);
            let (z, value) = self.refine(&eval, z0, seed.value, spacing);
            let mut point = to_u(&z);
            bx.clamp(&mut point);
            // Keep the exact grid node when refinement did not move.
            let cand = if value > seed.value { SearchResult { point, value } } else { seed };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        best.expect("grid has at least one node")
    }

    pub fn minimize<F: Fn(&[f64]) -> f64>(&self, bx: &LeaderBox, f: F) -> SearchResult {
        let r = self.maximize(bx, |u| -f(u));
        SearchResult {
            point: r.point,
            value: -r.value,
        }
    }

    fn refine(&self, eval: &impl Fn(&[f64]) -> f64, mut z: Vec<f64>, mut value: f64, spacing: f64) -> (Vec<f64>, f64) {
        let n = z.len();
        let clamp = |z: &mut Vec<f64>| z.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));

        // Projected gradient ascent.
        let h = 1e-7;
        for _ in 0..100 {
            let mut grad = vec![0.0; n];
            for i in 0..n {
                let mut hi = z.clone();
                let mut lo = z.clone();
                hi[i] = (hi[i] + h).min(1.0);
                lo[i] = (lo[i] - h).max(0.0);
                let span = hi[i] - lo[i];
                grad[i] = if span > 0.0 { (eval(&hi) - eval(&lo)) / span } else { 0.0 };
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            let mut step = spacing;
            let mut moved = false;
            while step > self.tol {
                let mut trial: Vec<f64> = z.iter().zip(&grad).map(|(x, g)| x + step * g / norm).collect();
                clamp(&mut trial);
                let v = eval(&trial);
                if gains(v, value) {
                    z = trial;
                    value = v;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }

        // Pattern search polish.
        let dirs = pattern(n);
        let mut step = spacing;
        let mut budget = 20_000usize;
        while step > self.tol && budget > 0 {
            let mut improved = false;
            for d in &dirs {
                budget = budget.saturating_sub(1);
                let mut trial: Vec<f64> = z.iter().zip(d).map(|(x, di)| x + step * di).collect();
                clamp(&mut trial);
                let v = eval(&trial);
                if gains(v, value) {
                    z = trial;
                    value = v;
                    improved = true;
                    break;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (z, value)
    }
}
