//! Batch experiments: configuration files, seeded parallel sample paths,
//! summary statistics and plot-ready exports.
//!
//! Path `i` of a batch draws from `ChaCha8Rng::seed_from_u64(path_seed(master_seed, i))`,
//! where [`path_seed`] is the (i+1)-th output of a SplitMix64 generator
//! started at `master_seed`. Paths run on a rayon pool and are collected in
//! path order, so every output byte depends only on the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::active::{run_policy, Algorithm, RhoSchedule, RunMeta, RunSpec, RunTrajectory, StepRecord};
use crate::error::{Error, Result};
use crate::estimation::MleSettings;
use crate::fisher::{Criterion, InformationField};
use crate::game::{GameConfig, ParamVector, QuantalResponse, REFERENCE_THETA};
use crate::search::{grid_points, BoxSearch};

/// Version tag written into JSON bundles.
pub const ARTIFACT_VERSION: &str = "1";

/// Points in each kernel-density curve.
pub const DENSITY_POINTS: usize = 256;

fn default_theta_true() -> ParamVector {
    ParamVector::new(REFERENCE_THETA.to_vec())
}

fn default_grid_resolution() -> usize {
    BoxSearch::default().resolution
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory receiving all artifacts.
    pub dir: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl OutputPaths {
    pub fn trajectories(&self, format: Format) -> PathBuf {
        self.dir.join(format!("trajectories.{}", format.extension()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub criterion: Criterion,
    pub horizon: usize,
    pub num_paths: usize,
    pub master_seed: u64,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "default_theta_true")]
    pub theta_true: ParamVector,
    pub game: GameConfig,
    #[serde(default)]
    pub rho_schedule: RhoSchedule,
    #[serde(default)]
    pub mle: MleSettings,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    /// Table 1 settings for Algorithm 1: T = 20, 50 paths, D-optimality.
    pub fn table1_alg1() -> Self {
        Self {
            algorithm: Algorithm::Alg1,
            criterion: Criterion::D,
            horizon: 20,
            num_paths: 50,
            master_seed: 20240601,
            grid_resolution: default_grid_resolution(),
            theta_true: default_theta_true(),
            game: GameConfig::reference(),
            rho_schedule: RhoSchedule::default(),
            mle: MleSettings::default(),
            output: OutputPaths {
                dir: PathBuf::from("out/table1_alg1"),
            },
        }
    }

    /// Table 1 settings for Algorithm 2: T = 100, 300 paths, E-optimality.
    pub fn table1_alg2() -> Self {
        Self {
            algorithm: Algorithm::Alg2,
            criterion: Criterion::E,
            horizon: 100,
            num_paths: 300,
            output: OutputPaths {
                dir: PathBuf::from("out/table1_alg2"),
            },
            ..Self::table1_alg1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.num_paths == 0 {
            return Err(Error::config("num_paths must be at least 1"));
        }
        self.search().validate()?;
        self.rho_schedule.validate()?;
        self.mle.validate(&self.game)?;
        if self.theta_true.len() != self.game.m() {
            return Err(Error::config(format!(
                "theta_true has {} components, expected {}",
                self.theta_true.len(),
                self.game.m()
            )));
        }
        if !self.game.is_feasible(&self.theta_true) {
            return Err(Error::config("theta_true is outside the parameter set"));
        }
        Ok(())
    }

    pub fn search(&self) -> BoxSearch {
        BoxSearch::with_resolution(self.grid_resolution)
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            algorithm: self.algorithm,
            criterion: self.criterion,
            rho_schedule: self.rho_schedule,
            mle: self.mle.clone(),
            search: self.search(),
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let ec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        ec.validate()?;
        Ok(ec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, path)
}

pub fn save_config(ec: &ExperimentConfig, path: &Path) -> Result<()> {
    write_file(path, &ec.to_toml_string()?)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `i`: `mix64(master + (i + 1) · 0x9E3779B97F4A7C15)`.
pub fn path_seed(master_seed: u64, path_id: usize) -> u64 {
    mix64(master_seed.wrapping_add((path_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn run_experiment(ec: &ExperimentConfig) -> Result<Vec<RunTrajectory>> {
    ec.validate()?;
    let spec = ec.run_spec();
    let results: Vec<Result<RunTrajectory>> = (0..ec.num_paths)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(ec.master_seed, i);
            let meta = RunMeta {
                path_id: i,
                seed,
                algorithm: ec.algorithm,
                criterion: ec.criterion,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_policy(&ec.game, &ec.theta_true, &spec, ec.horizon, meta, &mut rng).map_err(|e| Error::Path {
                path_id: i,
                source: Box::new(e),
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for a single sample.
fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    /// Gaussian kernel estimate on an evenly spaced grid.
    Kernel { bandwidth: f64, x: Vec<f64>, y: Vec<f64> },
    /// All samples coincide.
    Spike { at: f64 },
}

/// Gaussian-kernel density with Silverman's bandwidth
/// `0.9 · min(sd, IQR/1.34) · n^(−1/5)` (sd alone when the IQR vanishes),
/// on [`DENSITY_POINTS`] points spanning the sample range ± 3 bandwidths.
pub fn kernel_density(samples: &[f64]) -> Result<Density> {
    if samples.is_empty() {
        return Err(Error::domain("density of an empty sample"));
    }
    let sorted = sorted_copy(samples);
    let n = samples.len() as f64;
    let sd = sample_variance(samples).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * n.powf(-0.2);
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Ok(Density::Spike { at: sorted[0] });
    }
    let lo = sorted[0] - 3.0 * bandwidth;
    let hi = sorted[sorted.len() - 1] + 3.0 * bandwidth;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..DENSITY_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (DENSITY_POINTS - 1) as f64)
        .collect();
    let y = x
        .iter()
        .map(|&g| {
            norm * samples
                .iter()
                .map(|&s| {
                    let z = (g - s) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Density::Kernel { bandwidth, x, y })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBias {
    /// √T (θ̂_i(T) − θ0_i), one per run.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub density: Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub horizon: usize,
    pub components: Vec<ComponentBias>,
}

impl BiasSummary {
    pub fn from_samples(horizon: usize, per_component: Vec<Vec<f64>>) -> Result<Self> {
        let components = per_component
            .into_iter()
            .map(|samples| {
                Ok(ComponentBias {
                    mean: mean(&samples),
                    variance: sample_variance(&samples),
                    density: kernel_density(&samples)?,
                    samples,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { horizon, components })
    }

    pub fn variances(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.variance).collect()
    }
}

fn common_horizon(runs: &[RunTrajectory]) -> Result<usize> {
    let first = runs.first().ok_or_else(|| Error::domain("empty run set"))?;
    let t = first.horizon();
    if t == 0 || runs.iter().any(|r| r.horizon() != t) {
        return Err(Error::domain("runs must share a nonzero horizon"));
    }
    Ok(t)
}

pub fn summarize_bias(runs: &[RunTrajectory], theta_true: &ParamVector) -> Result<BiasSummary> {
    let t = common_horizon(runs)?;
    let scale = (t as f64).sqrt();
    let m = theta_true.len();
    let mut per_component = vec![Vec::with_capacity(runs.len()); m];
    for run in runs {
        let last = &run.steps[t - 1].theta_hat;
        if last.len() != m {
            return Err(Error::domain("estimate dimension differs from theta_true"));
        }
        for (k, samples) in per_component.iter_mut().enumerate() {
            samples.push(scale * (last[k] - theta_true.as_slice()[k]));
        }
    }
    BiasSummary::from_samples(t, per_component)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub t: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub rows: Vec<ErrorRow>,
}

impl ErrorSeries {
    pub fn at(&self, t: usize) -> Option<&ErrorRow> {
        self.rows.get(t.checked_sub(1)?)
    }
}

/// Per-step order statistics of ‖uL(t) − uL*‖ / ‖uL*‖ across runs.
pub fn relative_error_series(runs: &[RunTrajectory], u_star: &[f64]) -> Result<ErrorSeries> {
    let norm = u_star.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::domain("uL_star must be nonzero"));
    }
    let horizon = common_horizon(runs)?;
    let rows = (0..horizon)
        .map(|k| {
            let errs: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let u = &r.steps[k].u_leader;
                    u.iter().zip(u_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm
                })
                .collect();
            let s = sorted_copy(&errs);
            ErrorRow {
                t: k + 1,
                min: s[0],
                p25: quantile_sorted(&s, 0.25),
                median: quantile_sorted(&s, 0.5),
                p75: quantile_sorted(&s, 0.75),
                max: s[s.len() - 1],
            }
        })
        .collect();
    Ok(ErrorSeries { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    /// 1-based parameter index.
    pub component: usize,
    /// Correlation of sorted samples with Blom normal scores.
    pub qq_correlation: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub const MIN_NORMALITY_SAMPLES: usize = 20;

pub fn normality_of(samples: &[f64]) -> Result<(f64, f64, f64)> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::domain(format!(
            "normality diagnostics need at least {MIN_NORMALITY_SAMPLES} samples, got {n}"
        )));
    }
    let sorted = sorted_copy(samples);
    let m = mean(&sorted);
    let central = |p: i32| sorted.iter().map(|x| (x - m).powi(p)).sum::<f64>() / n as f64;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    if m2.is_nan() || m2 <= 0.0 {
        return Err(Error::domain("normality diagnostics need a nonconstant sample"));
    }
    let normal = Normal::standard();
    let scores: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (n as f64 + 0.25)))
        .collect();
    let ms = mean(&scores);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in sorted.iter().zip(&scores) {
        sxy += (x - m) * (y - ms);
        sxx += (x - m) * (x - m);
        syy += (y - ms) * (y - ms);
    }
    Ok((sxy / (sxx * syy).sqrt(), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

pub fn normality_diagnostics(bias: &BiasSummary) -> Result<Vec<NormalityReport>> {
    bias.components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (qq, skew, kurt) = normality_of(&c.samples)?;
            Ok(NormalityReport {
                component: k + 1,
                qq_correlation: qq,
                skewness: skew,
                excess_kurtosis: kurt,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

/// Fixed 17-significant-digit formatting.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Column names for a game with n leader, h follower and m parameter components.
pub fn trajectory_header(n: usize, h: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["path_id".to_string(), "t".to_string()];
    cols.extend((1..=n).map(|i| format!("uL_{i}")));
    cols.extend((1..=h).map(|i| format!("uF_{i}")));
    cols.extend((1..=m).map(|i| format!("theta{i}")));
    cols.extend(["rho", "criterion", "expected_cost"].map(String::from));
    cols
}

pub fn trajectories_to_csv(runs: &[RunTrajectory]) -> Result<String> {
    let first = runs
        .iter()
        .find_map(|r| r.steps.first())
        .ok_or_else(|| Error::domain("no trajectory rows to export"))?;
    let (n, h, m) = (first.u_leader.len(), first.u_follower.len(), first.theta_hat.len());
    let mut out = trajectory_header(n, h, m).join(",");
    out.push('\n');
    for run in runs {
        for s in &run.steps {
            if s.u_leader.len() != n || s.u_follower.len() != h || s.theta_hat.len() != m {
                return Err(Error::domain("trajectories have inconsistent dimensions"));
            }
            let mut fields = vec![run.meta.path_id.to_string(), s.t.to_string()];
            fields.extend(s.u_leader.iter().chain(&s.u_follower).chain(&s.theta_hat).map(|&x| fmt_num(x)));
            fields.push(s.rho.map(fmt_num).unwrap_or_default());
            fields.push(fmt_num(s.criterion));
            fields.push(fmt_num(s.expected_cost));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Rows of a trajectory CSV grouped by path id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvPath {
    pub path_id: usize,
    pub steps: Vec<StepRecord>,
}

pub fn trajectories_from_csv(text: &str, origin: &Path) -> Result<Vec<CsvPath>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_error(origin, "empty file"))?.split(',').collect();
    let count = |prefix: &str| header.iter().filter(|c| c.starts_with(prefix)).count();
    let (n, h, m) = (count("uL_"), count("uF_"), count("theta"));
    let expected = trajectory_header(n, h, m);
    if header != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_error(origin, format!("unexpected header {:?}", header.join(","))));
    }
    let mut paths: Vec<CsvPath> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row = lineno + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(parse_error(origin, format!("line {row}: expected {} fields", header.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_error(origin, format!("line {row}: bad number {s:?}")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| parse_error(origin, format!("line {row}: bad integer {s:?}")));
        let vec = |a: usize, b: usize| f[a..b].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>();
        let path_id = int(f[0])?;
        let step = StepRecord {
            t: int(f[1])?,
            u_leader: vec(2, 2 + n)?,
            u_follower: vec(2 + n, 2 + n + h)?,
            theta_hat: vec(2 + n + h, 2 + n + h + m)?,
            rho: match f[2 + n + h + m] {
                "" => None,
                s => Some(num(s)?),
            },
            criterion: num(f[3 + n + h + m])?,
            expected_cost: num(f[4 + n + h + m])?,
        };
        match paths.last_mut() {
            Some(p) if p.path_id == path_id => p.steps.push(step),
            _ => paths.push(CsvPath {
                path_id,
                steps: vec![step],
            }),
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub artifact_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub metadata: BundleMetadata,
    pub runs: Vec<RunTrajectory>,
}

impl TrajectoryBundle {
    pub fn new(ec: &ExperimentConfig, runs: Vec<RunTrajectory>) -> Self {
        Self {
            metadata: BundleMetadata {
                artifact_version: ARTIFACT_VERSION.to_string(),
                master_seed: ec.master_seed,
                config: ec.clone(),
            },
            runs,
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::numerical(format!("cannot serialize to JSON: {e}")))
}

pub fn write_trajectories(ec: &ExperimentConfig, runs: &[RunTrajectory], format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => trajectories_to_csv(runs)?,
        Format::Json => to_json(&TrajectoryBundle::new(ec, runs.to_vec()))?,
    };
    write_file(path, &text)
}

pub fn read_bundle(path: &Path) -> Result<TrajectoryBundle> {
    serde_json::from_str(&read_file(path)?).map_err(|e| parse_error(path, e.to_string()))
}

pub fn read_csv_trajectories(path: &Path) -> Result<Vec<CsvPath>> {
    trajectories_from_csv(&read_file(path)?, path)
}

/// Reads trajectories from a `.json` bundle or a trajectory CSV. CSV input
/// carries no run metadata, so the returned runs take algorithm and
/// criterion from `ec` and a seed recomputed from the path id.
pub fn read_trajectories(path: &Path, ec: &ExperimentConfig) -> Result<Vec<RunTrajectory>> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(read_bundle(path)?.runs);
    }
    Ok(read_csv_trajectories(path)?
        .into_iter()
        .map(|p| RunTrajectory {
            meta: RunMeta {
                path_id: p.path_id,
                seed: path_seed(ec.master_seed, p.path_id),
                algorithm: ec.algorithm,
                criterion: ec.criterion,
            },
            steps: p.steps,
        })
        .collect())
}

pub const SUMMARY_HEADER: &str = "t,min,p25,median,p75";
pub const BIAS_HEADER: &str = "component,sample";
pub const FISHER_MAP_HEADER: &str = "uL_1,uL_2,H";

pub fn summary_to_csv(series: &ErrorSeries) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in &series.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt_num(r.min),
            fmt_num(r.p25),
            fmt_num(r.median),
            fmt_num(r.p75)
        );
    }
    out
}

pub fn bias_to_csv(bias: &BiasSummary) -> String {
    let mut out = format!("{BIAS_HEADER}\n");
    for (k, c) in bias.components.iter().enumerate() {
        for &s in &c.samples {
            let _ = writeln!(out, "theta{},{}", k + 1, fmt_num(s));
        }
    }
    out
}

/// H(uL | θ) at every node of a `resolution²` grid over the box.
pub fn fisher_map(theta: &ParamVector, c: Criterion, cfg: &GameConfig, resolution: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if cfg.n() != 2 {
        return Err(Error::domain("fisher map needs a two-dimensional leader action"));
    }
    let model = QuantalResponse::new(cfg, theta)?;
    let info = InformationField::new(&model);
    Ok(grid_points(&cfg.leader_box, resolution)
        .map(|u| {
            let h = info.criterion_at(&u, c);
            (u, h)
        })
        .collect())
}

pub fn fisher_map_to_csv(map: &[(Vec<f64>, f64)]) -> String {
    let mut out = format!("{FISHER_MAP_HEADER}\n");
    for (u, h) in map {
        let _ = writeln!(out, "{},{},{}", fmt_num(u[0]), fmt_num(u[1]), fmt_num(*h));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBundle {
    pub metadata: BundleMetadata,
    pub u_leader_star: Vec<f64>,
    pub bias: BiasSummary,
    pub errors: ErrorSeries,
    /// Empty when there are too few paths for the diagnostics.
    pub normality: Vec<NormalityReport>,
}

/// Writes `summary.csv` and `bias.csv`, or `summary.json`, into `dir`;
/// returns the written paths.
pub fn write_summaries(summary: &SummaryBundle, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    match format {
        Format::Csv => {
            let s = dir.join("summary.csv");
            let b = dir.join("bias.csv");
            write_file(&s, &summary_to_csv(&summary.errors))?;
            write_file(&b, &bias_to_csv(&summary.bias))?;
            Ok(vec![s, b])
        }
        Format::Json => {
            let p = dir.join("summary.json");
            write_file(&p, &to_json(summary)?)?;
            Ok(vec![p])
        }
    }
}

pub fn write_fisher_map(map: &[(Vec<f64>, f64)], format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => fisher_map_to_csv(map),
        Format::Json => to_json(&map.iter().map(|(u, h)| (u.clone(), *h)).collect::<Vec<_>>())?,
    };
    write_file(path, &text)
}

pub fn summarize(ec: &ExperimentConfig, runs: &[RunTrajectory]) -> Result<SummaryBundle> {
    let eq = crate::active::stackelberg_equilibrium(&ec.theta_true, &ec.game)?;
    let bias = summarize_bias(runs, &ec.theta_true)?;
    let errors = relative_error_series(runs, &eq.u_leader_star)?;
    let normality = if runs.len() >= MIN_NORMALITY_SAMPLES {
        normality_diagnostics(&bias).unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(SummaryBundle {
        metadata: BundleMetadata {
            artifact_version: ARTIFACT_VERSION.to_string(),
            master_seed: ec.master_seed,
            config: ec.clone(),
        },
        u_leader_star: eq.u_leader_star,
        bias,
        errors,
        normality,
    })
}
