//! Monte-Carlo campaigns: random poses, the per-trial pipeline
//! (synthesize → perturb → observe → sample → summarize), error CDFs and
//! nearest-rank percentiles, analytic bounds at the sampled poses, exports, and
//! the oracle suites behind `validate`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    build_channel_tensor, channel_params, draw_observations, perturb_params, Pose, Scenario, TensorDims,
};
use crate::crlb::{finite_difference_jacobian, jacobian_eta_wrt_zeta, params_and_jacobian, pose_bounds};
use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, Vec3};
use crate::posterior::{PosteriorModel, PriorConfig};
use crate::sampler::{run_chains, summarize, Estimator, NutsConfig, PoseEstimate, Target};
use crate::SeededRng;

/// Environment variable overriding the trial worker count.
pub const WORKERS_ENV: &str = "RISLOC_WORKERS";

/// Random poses keep at least this distance from every anchor.
pub const ANCHOR_EXCLUSION: f64 = 0.5;

/// Random poses keep `|sin θ'|` of every link at least this large.
pub const ZENITH_BAND: f64 = 1e-3;

const MAX_POSE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RisMode {
    On,
    Off,
}

impl RisMode {
    pub fn enabled(self) -> bool {
        self == RisMode::On
    }

    pub fn label(self) -> &'static str {
        match self {
            RisMode::On => "on",
            RisMode::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub scenario: Scenario,
    pub prior: PriorConfig,
    pub sigma2_list: Vec<f64>,
    pub ris_modes: Vec<RisMode>,
    pub n_trials: usize,
    pub n_obs: usize,
    pub sigma_sp2: f64,
    pub nuts: NutsConfig,
    pub estimator: Estimator,
    pub root_seed: u64,
    pub output_dir: PathBuf,
    /// Concurrent trials; all cores when absent. Overridden by `RISLOC_WORKERS`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            prior: PriorConfig::default(),
            sigma2_list: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            ris_modes: vec![RisMode::On, RisMode::Off],
            n_trials: 200,
            n_obs: 50,
            sigma_sp2: 1e-3,
            nuts: NutsConfig::default(),
            estimator: Estimator::Mean,
            root_seed: 2024,
            output_dir: PathBuf::from("results"),
            workers: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.prior.validate()?;
        self.nuts.validate()?;
        if self.n_trials == 0 || self.n_obs == 0 {
            return Err(Error::Config("n_trials and n_obs must be at least 1".into()));
        }
        if self.sigma2_list.is_empty() || self.sigma2_list.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("sigma2_list must be non-empty and positive".into()));
        }
        if self.ris_modes.is_empty() {
            return Err(Error::Config("ris_modes must be non-empty".into()));
        }
        if !(self.sigma_sp2.is_finite() && self.sigma_sp2 > 0.0) {
            return Err(Error::Config("sigma_sp2 must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// `(σ², mode)` pairs in campaign order; the position is the cell index.
    pub fn cells(&self) -> Vec<(f64, RisMode)> {
        self.sigma2_list.iter().flat_map(|&s| self.ris_modes.iter().map(move |&m| (s, m))).collect()
    }

    /// Worker count after the environment override.
    pub fn resolved_workers(&self) -> Result<Option<usize>> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
            },
            Err(_) => Ok(self.workers),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `(cell, trial)`, independent of scheduling order.
pub fn trial_seed(root_seed: u64, cell: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root_seed) ^ cell) ^ trial)
}

/// Cell tag of the pose stream: every cell sees the same true pose for a given trial index.
const POSE_STREAM: u64 = u64::MAX;

/// Smallest `|sin θ'|` over every arrival and departure angle, RIS link included.
fn min_sin_theta(pose: &Pose, sc: &Scenario) -> Result<f64> {
    let sc = sc.with_ris(true);
    let mut links = vec![(sc.bs_pose, pose.position), (sc.ris_pose, pose.position)];
    links.extend([(*pose, sc.bs_pose.position), (*pose, sc.ris_pose.position)]);
    let mut worst = f64::INFINITY;
    for (frame, target) in links {
        let rot = crate::geometry::rotation_matrix(&frame.rotation)?;
        let dir = target - frame.position;
        let local = rot.to_local(&(dir / dir.norm()));
        worst = worst.min((1.0 - local.z * local.z).max(0.0).sqrt());
    }
    Ok(worst)
}

/// Uniform pose in the open room box with angles in `(0, ε)`, away from anchors
/// and from the local zenith of every link.
pub fn random_pose<R: Rng + ?Sized>(sc: &Scenario, epsilon: f64, rng: &mut R) -> Result<Pose> {
    for _ in 0..MAX_POSE_ATTEMPTS {
        let mut open = |hi: f64| loop {
            let v = rng.random_range(0.0..hi);
            if v > 0.0 {
                break v;
            }
        };
        let position = Vec3::new(open(sc.room_l), open(sc.room_l), open(sc.room_h));
        let rotation = EulerAngles::new(open(epsilon), open(epsilon), open(epsilon));
        let pose = Pose::new(position, rotation);
        if (position - sc.bs_pose.position).norm() < ANCHOR_EXCLUSION
            || (position - sc.ris_pose.position).norm() < ANCHOR_EXCLUSION
        {
            continue;
        }
        if min_sin_theta(&pose, sc)? < ZENITH_BAND {
            continue;
        }
        return Ok(pose);
    }
    Err(Error::DegenerateGeometry(format!("no admissible pose after {MAX_POSE_ATTEMPTS} attempts")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub ris_on: bool,
    pub true_pose: Pose,
    /// Absent when the sampler failed; see `failure`.
    pub estimate: Option<PoseEstimate>,
    pub rhat_max: f64,
    pub divergences: usize,
    pub accept_mean: f64,
    pub step_size: f64,
    pub peb: f64,
    pub reb: f64,
    pub peb_pinv: f64,
    pub reb_pinv: f64,
    pub failure: Option<String>,
    /// Seconds; excluded from `trials.csv` so that file is reproducible.
    pub wall_time: f64,
}

impl TrialResult {
    pub fn position_error(&self) -> Option<f64> {
        self.estimate.as_ref().and_then(|e| e.position_error)
    }

    pub fn rotation_error(&self) -> Option<f64> {
        self.estimate.as_ref().and_then(|e| e.rotation_error)
    }
}

/// Everything a single trial needs besides its seeds.
#[derive(Debug, Clone)]
pub struct TrialSetup<'a> {
    pub scenario: &'a Scenario,
    pub prior: &'a PriorConfig,
    pub nuts: &'a NutsConfig,
    pub n_obs: usize,
    pub sigma_sp2: f64,
    pub estimator: Estimator,
}

impl<'a> From<&'a CampaignConfig> for TrialSetup<'a> {
    fn from(c: &'a CampaignConfig) -> Self {
        Self {
            scenario: &c.scenario,
            prior: &c.prior,
            nuts: &c.nuts,
            n_obs: c.n_obs,
            sigma_sp2: c.sigma_sp2,
            estimator: c.estimator,
        }
    }
}

/// Runs the pipeline at a given true pose. Sampler failures are recorded in
/// the result rather than returned as errors.
pub fn run_trial_at(truth: &Pose, sigma2: f64, ris_on: bool, setup: &TrialSetup, seed: u64) -> Result<TrialResult> {
    let start = Instant::now();
    let sc = setup.scenario.with_ris(ris_on);
    let mut rng = SeededRng::seed_from_u64(seed);
    let eta = channel_params(truth, &sc)?;
    let eta_hat = perturb_params(&eta, sigma2, &mut rng)?;
    let obs = draw_observations(&eta_hat, setup.sigma_sp2, setup.n_obs, &mut rng)?;
    let nuts = NutsConfig { seed: rng.random(), ..setup.nuts.clone() };

    let bounds = pose_bounds(truth, &sc, sigma2)?;
    let model = PosteriorModel::new(sc, *setup.prior, &obs)?;
    let mut result = TrialResult {
        cell: 0,
        trial: 0,
        seed,
        sigma2,
        ris_on,
        true_pose: *truth,
        estimate: None,
        rhat_max: f64::NAN,
        divergences: 0,
        accept_mean: f64::NAN,
        step_size: f64::NAN,
        peb: bounds.peb,
        reb: bounds.reb,
        peb_pinv: bounds.peb_pinv(),
        reb_pinv: bounds.reb_pinv(),
        failure: None,
        wall_time: 0.0,
    };
    match run_chains(&model, &nuts) {
        Ok(samples) => {
            result.estimate = Some(summarize(&samples, Some(truth), setup.estimator)?);
            // Pose coordinates only; the variance nodes are nuisance parameters.
            result.rhat_max = samples.rhat[..6].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            result.divergences = samples.divergences;
            result.accept_mean = samples.mean_accept_stat();
            result.step_size = samples.step_sizes().iter().sum::<f64>() / samples.chains.len() as f64;
        }
        Err(e @ Error::Sampler { .. }) => result.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Draws a true pose from `rng` and runs one trial on it.
pub fn run_trial<R: Rng + ?Sized>(sigma2: f64, ris_on: bool, setup: &TrialSetup, rng: &mut R) -> Result<TrialResult> {
    let truth = random_pose(setup.scenario, setup.prior.epsilon, rng)?;
    run_trial_at(&truth, sigma2, ris_on, setup, rng.random())
}

/// Nearest-rank percentile: the `⌈q·n⌉`-th smallest value.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Empirical CDF as `(value, F(value))` steps over the sorted sample.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Position,
    Rotation,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Position, Metric::Rotation];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Position => "position",
            Metric::Rotation => "rotation",
        }
    }

    fn of(self, t: &TrialResult) -> Option<f64> {
        match self {
            Metric::Position => t.position_error(),
            Metric::Rotation => t.rotation_error(),
        }
    }
}

/// Per-cell error statistics for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub metric: Metric,
    pub ris: RisMode,
    pub sigma2: f64,
    pub n: usize,
    pub failures: usize,
    pub p90: f64,
    pub median: f64,
    pub mean: f64,
    /// Mean analytic bound at the same poses (PEB or REB).
    pub mean_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub trials: Vec<TrialResult>,
    pub cells: Vec<(f64, RisMode)>,
}

impl ResultTable {
    pub fn cell_trials(&self, sigma2: f64, ris: RisMode) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(move |t| t.sigma2 == sigma2 && t.ris_on == ris.enabled())
    }

    pub fn errors(&self, metric: Metric, sigma2: f64, ris: RisMode) -> Vec<f64> {
        self.cell_trials(sigma2, ris).filter_map(|t| metric.of(t)).collect()
    }

    pub fn cdf(&self, metric: Metric, sigma2: f64, ris: RisMode) -> Vec<(f64, f64)> {
        empirical_cdf(&self.errors(metric, sigma2, ris))
    }

    pub fn p90(&self, metric: Metric, sigma2: f64, ris: RisMode) -> Option<f64> {
        percentile_nearest_rank(&self.errors(metric, sigma2, ris), 0.9)
    }

    pub fn summaries(&self) -> Vec<CellSummary> {
        let mut out = Vec::new();
        for metric in Metric::ALL {
            for &(sigma2, ris) in &self.cells {
                let errs = self.errors(metric, sigma2, ris);
                let all: Vec<&TrialResult> = self.cell_trials(sigma2, ris).collect();
                let bounds: Vec<f64> = all
                    .iter()
                    .map(|t| match metric {
                        Metric::Position => t.peb,
                        Metric::Rotation => t.reb,
                    })
                    .collect();
                out.push(CellSummary {
                    metric,
                    ris,
                    sigma2,
                    n: errs.len(),
                    failures: all.len() - errs.len(),
                    p90: percentile_nearest_rank(&errs, 0.9).unwrap_or(f64::NAN),
                    median: percentile_nearest_rank(&errs, 0.5).unwrap_or(f64::NAN),
                    mean: if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 },
                    mean_bound: bounds.iter().sum::<f64>() / bounds.len().max(1) as f64,
                });
            }
        }
        out
    }
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Runs every `(σ², RIS)` cell. Cells share the true pose of each trial index.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<ResultTable> {
    cfg.validate()?;
    ensure_writable(&cfg.output_dir)?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.n_trials).map(move |t| (c, t))).collect();
    let setup = TrialSetup::from(cfg);

    let run = || -> Result<Vec<TrialResult>> {
        jobs.par_iter()
            .map(|&(cell, trial)| {
                let mut pose_rng = SeededRng::seed_from_u64(trial_seed(cfg.root_seed, POSE_STREAM, trial as u64));
                let truth = random_pose(&cfg.scenario, cfg.prior.epsilon, &mut pose_rng)?;
                let (sigma2, mode) = cells[cell];
                let seed = trial_seed(cfg.root_seed, cell as u64, trial as u64);
                let mut r = run_trial_at(&truth, sigma2, mode.enabled(), &setup, seed)?;
                r.cell = cell;
                r.trial = trial;
                Ok(r)
            })
            .collect()
    };
    let trials = match cfg.resolved_workers()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(ResultTable { trials, cells })
}

/// Deterministic compact label for σ², e.g. `1e-3`.
pub fn sigma2_label(s: f64) -> String {
    format!("{s:e}")
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const TRIALS_HEADER: [&str; 27] = [
    "cell", "trial", "seed", "sigma2", "ris", "x", "y", "z", "alpha", "beta", "gamma", "est_x", "est_y", "est_z",
    "est_alpha", "est_beta", "est_gamma", "position_error", "rotation_error", "rhat_max", "divergences",
    "accept_mean", "step_size", "peb", "reb", "peb_pinv", "reb_pinv",
];

fn trial_row(t: &TrialResult) -> Vec<String> {
    let mut row = vec![
        t.cell.to_string(),
        t.trial.to_string(),
        t.seed.to_string(),
        t.sigma2.to_string(),
        if t.ris_on { "on" } else { "off" }.to_string(),
    ];
    row.extend(t.true_pose.to_array().iter().map(f64::to_string));
    match &t.estimate {
        Some(e) => row.extend(e.pose_mean.to_array().iter().map(f64::to_string)),
        None => row.extend(std::iter::repeat_n(String::new(), 6)),
    }
    row.extend([
        opt(t.position_error()),
        opt(t.rotation_error()),
        t.rhat_max.to_string(),
        t.divergences.to_string(),
        t.accept_mean.to_string(),
        t.step_size.to_string(),
        t.peb.to_string(),
        t.reb.to_string(),
        t.peb_pinv.to_string(),
        t.reb_pinv.to_string(),
    ]);
    row
}

/// Writes trials.csv, timings.csv, per-cell CDFs, summary.json, bounds.csv and plot.py.
pub fn export(results: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    if results.trials.is_empty() {
        return Err(Error::Domain("nothing to export".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("trials.csv");
    let mut header = TRIALS_HEADER.to_vec();
    header.push("failure");
    write_csv(
        &path,
        &header,
        results.trials.iter().map(|t| {
            let mut r = trial_row(t);
            r.push(t.failure.clone().unwrap_or_default());
            r
        }),
    )?;
    written.push(path);

    let path = dir.join("timings.csv");
    write_csv(
        &path,
        &["cell", "trial", "wall_time_s"],
        results.trials.iter().map(|t| [t.cell.to_string(), t.trial.to_string(), t.wall_time.to_string()]),
    )?;
    written.push(path);

    for metric in Metric::ALL {
        for &(sigma2, ris) in &results.cells {
            let path = dir.join(format!("cdf_{}_{}_{}.csv", metric.label(), ris.label(), sigma2_label(sigma2)));
            write_csv(
                &path,
                &["error", "cdf"],
                results.cdf(metric, sigma2, ris).into_iter().map(|(x, f)| [x.to_string(), f.to_string()]),
            )?;
            written.push(path);
        }
    }

    let summaries = results.summaries();
    // p90 table keyed like the paper's layout: metric → RIS mode → σ².
    let mut table: BTreeMap<&str, BTreeMap<&str, BTreeMap<String, f64>>> = BTreeMap::new();
    for s in &summaries {
        table.entry(s.metric.label()).or_default().entry(s.ris.label()).or_default().insert(sigma2_label(s.sigma2), s.p90);
    }
    let json = serde_json::json!({ "percentile": 0.9, "p90": table, "cells": summaries });
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Domain(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("bounds.csv");
    write_csv(
        &path,
        &["sigma2", "ris", "trial", "peb", "reb", "peb_pinv", "reb_pinv"],
        results.trials.iter().map(|t| {
            [
                t.sigma2.to_string(),
                if t.ris_on { "on" } else { "off" }.to_string(),
                t.trial.to_string(),
                t.peb.to_string(),
                t.reb.to_string(),
                t.peb_pinv.to_string(),
                t.reb_pinv.to_string(),
            ]
        }),
    )?;
    written.push(path);

    let path = dir.join("plot.py");
    fs::write(&path, PLOT_SCRIPT).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Per-trial rows of a previously exported trials.csv, keyed by column name.
pub fn read_trials_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            Ok(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Renders error CDFs, the p90 table, and PEB/REB curves from a campaign directory."""
import glob
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

root = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for ax, metric, unit in zip(axes, ["position", "rotation"], ["m", "rad"]):
    for path in sorted(glob.glob(os.path.join(root, f"cdf_{metric}_*.csv"))):
        _, _, ris, sigma2 = os.path.basename(path)[:-4].split("_", 3)
        df = pd.read_csv(path)
        if df.empty:
            continue
        ax.step(df["error"], df["cdf"], where="post", linestyle="-" if ris == "on" else "--",
                label=f"RIS {ris}, s2={sigma2}")
    ax.set_xscale("log")
    ax.set_xlabel(f"{metric} error [{unit}]")
    ax.set_ylabel("CDF")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(root, "cdf.png"), dpi=150)

bounds = pd.read_csv(os.path.join(root, "bounds.csv"))
finite = bounds.replace([float("inf")], float("nan"))
agg = finite.groupby(["sigma2", "ris"]).mean(numeric_only=True).reset_index()
fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for ax, col, label in zip(axes, ["peb", "reb"], ["PEB [m]", "REB [rad]"]):
    for ris, group in agg.groupby("ris"):
        group = group.sort_values("sigma2")
        y = group[col] if group[col].notna().any() else group[col + "_pinv"]
        ax.loglog(group["sigma2"], y, marker="o", label=f"RIS {ris}")
    ax.set_xlabel("sigma^2")
    ax.set_ylabel(label)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(root, "bounds.png"), dpi=150)

with open(os.path.join(root, "summary.json")) as fh:
    summary = json.load(fh)
for metric, by_ris in summary["p90"].items():
    print(f"p90 {metric} error")
    for ris, row in by_ris.items():
        cells = "  ".join(f"{k}: {v:.4g}" for k, v in sorted(row.items(), key=lambda kv: -float(kv[0])))
        print(f"  RIS {ris:3s}  {cells}")
"#;

/// Deterministic 5×5×2 pose grid over the room interior.
pub fn bounds_grid(sc: &Scenario) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(50);
    for i in 0..5 {
        for j in 0..5 {
            for (k, zf) in [0.25, 0.6].into_iter().enumerate() {
                let x = (i as f64 + 0.5) * sc.room_l / 5.0;
                let y = (j as f64 + 0.5) * sc.room_l / 5.0;
                let a = FRAC_PI_4 * (0.2 + 0.15 * ((i + 2 * j + k) % 5) as f64);
                let b = FRAC_PI_4 * (0.3 + 0.1 * ((2 * i + j) % 4) as f64);
                let g = FRAC_PI_4 * (0.25 + 0.12 * ((i + j + 3 * k) % 5) as f64);
                poses.push(Pose::new(Vec3::new(x, y, zf * sc.room_h), EulerAngles::new(a, b, g)));
            }
        }
    }
    poses
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Oracle suites: Jacobian vs finite differences, tensor phases, and NUTS on a
/// standard normal.
pub fn run_validation(seed: u64) -> Vec<CheckResult> {
    vec![validate_jacobian(seed), validate_tensor(seed), validate_nuts(seed)]
}

fn check(name: &'static str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
    }
}

fn validate_jacobian(seed: u64) -> CheckResult {
    check(
        "jacobian",
        (|| {
            let mut rng = SeededRng::seed_from_u64(seed);
            let sc = Scenario::default();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let pose = random_pose(&sc, FRAC_PI_4, &mut rng)?;
                for ris in [true, false] {
                    let s = sc.with_ris(ris);
                    let a = jacobian_eta_wrt_zeta(&pose, &s)?.matrix;
                    let f = finite_difference_jacobian(&pose, &s, 1e-6)?.matrix;
                    for i in 0..a.nrows() {
                        let scale = a.row(i).amax().max(f.row(i).amax()).max(f64::MIN_POSITIVE);
                        worst = worst.max((a.row(i) - f.row(i)).amax() / scale);
                    }
                }
            }
            Ok((worst <= 1e-5, format!("max relative deviation {worst:.2e} over 100 poses")))
        })(),
    )
}

fn validate_tensor(seed: u64) -> CheckResult {
    check(
        "tensor",
        (|| {
            let mut rng = SeededRng::seed_from_u64(seed ^ 1);
            let sc = Scenario::default();
            let dims = TensorDims::uniform(2);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let pose = random_pose(&sc, FRAC_PI_4, &mut rng)?;
                let t = build_channel_tensor(&pose, &sc, &dims, None)?;
                let eta = channel_params(&pose, &sc)?;
                let d = &eta.direct;
                for n in 0..2 {
                    for u1 in 0..2 {
                        for u2 in 0..2 {
                            for v1 in 0..2 {
                                for v2 in 0..2 {
                                    let expected = n as f64 * d.omega
                                        + u1 as f64 * d.psi[0]
                                        + u2 as f64 * d.psi[1]
                                        + v1 as f64 * d.varsigma[0]
                                        + v2 as f64 * d.varsigma[1];
                                    let h = t.direct.get(&[n, u1, u2, v1, v2]);
                                    let dphi = (h.arg() - expected + PI).rem_euclid(2.0 * PI) - PI;
                                    worst = worst.max(dphi.abs()).max((h.norm() - d.gain).abs() / d.gain);
                                }
                            }
                        }
                    }
                }
            }
            Ok((worst <= 1e-10, format!("max phase/magnitude deviation {worst:.2e} over 20 poses")))
        })(),
    )
}

struct StandardNormal6;

impl Target for StandardNormal6 {
    fn dim(&self) -> usize {
        6
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn initial_point(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
}

fn validate_nuts(seed: u64) -> CheckResult {
    check(
        "nuts",
        (|| {
            let cfg = NutsConfig { n_chains: 4, tune: 500, draws: 1000, seed, ..NutsConfig::default() };
            let s = run_chains(&StandardNormal6, &cfg)?;
            let mean_dev = s.mean().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let var_dev = s.variance().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
            let rhat = s.max_rhat();
            Ok((
                mean_dev <= 0.05 && var_dev <= 0.1 && rhat <= 1.01,
                format!("max |mean| {mean_dev:.3}, max |var-1| {var_dev:.3}, max R-hat {rhat:.4}"),
            ))
        })(),
    )
}

/// Bounds at every grid pose for one σ² and RIS mode.
pub fn grid_bounds(sc: &Scenario, sigma2: f64) -> Result<Vec<(Pose, crate::crlb::BoundReport)>> {
    bounds_grid(sc).into_iter().map(|p| Ok((p, pose_bounds(&p, sc, sigma2)?))).collect()
}

/// Observations for a trial at `truth`, as the sampler sees them (for inspection).
pub fn trial_observations(truth: &Pose, sigma2: f64, setup: &TrialSetup, ris_on: bool, seed: u64) -> Result<DMatrix<f64>> {
    let sc = setup.scenario.with_ris(ris_on);
    let mut rng = SeededRng::seed_from_u64(seed);
    let eta_hat = perturb_params(&channel_params(truth, &sc)?, sigma2, &mut rng)?;
    Ok(draw_observations(&eta_hat, setup.sigma_sp2, setup.n_obs, &mut rng)?.samples)
}

/// Whether every link of `pose` clears the zenith band (used by random poses).
pub fn clears_zenith_band(pose: &Pose, sc: &Scenario) -> Result<bool> {
    Ok(min_sin_theta(pose, sc)? >= ZENITH_BAND && params_and_jacobian(pose, &sc.with_ris(true)).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.9), Some(9.0));
        assert_eq!(percentile_nearest_rank(&v, 0.5), Some(5.0));
        assert_eq!(percentile_nearest_rank(&v, 1.0), Some(10.0));
        assert_eq!(percentile_nearest_rank(&[3.0], 0.9), Some(3.0));
        assert_eq!(percentile_nearest_rank(&[], 0.9), None);
    }

    #[test]
    fn cdf_is_a_step_function() {
        let cdf = empirical_cdf(&[0.3, 0.1, 0.2]);
        assert_eq!(cdf, vec![(0.1, 1.0 / 3.0), (0.2, 2.0 / 3.0), (0.3, 1.0)]);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = trial_seed(1, 0, 0);
        assert_eq!(a, trial_seed(1, 0, 0));
        assert_ne!(a, trial_seed(1, 0, 1));
        assert_ne!(a, trial_seed(1, 1, 0));
        assert_ne!(a, trial_seed(2, 0, 0));
        assert_ne!(trial_seed(1, 0, 1), trial_seed(1, 1, 0));
    }

    #[test]
    fn random_pose_is_admissible_and_uniform() {
        let sc = Scenario::default();
        let mut rng = SeededRng::seed_from_u64(7);
        let n = 10_000;
        let mut sums = [0.0; 6];
        for _ in 0..n {
            let p = random_pose(&sc, FRAC_PI_4, &mut rng).unwrap();
            let a = p.to_array();
            assert!(a[0] > 0.0 && a[0] < 15.0 && a[1] > 0.0 && a[1] < 15.0 && a[2] > 0.0 && a[2] < 5.0);
            assert!(a[3..].iter().all(|&v| v > 0.0 && v < FRAC_PI_4));
            assert!((p.position - sc.bs_pose.position).norm() >= ANCHOR_EXCLUSION);
            assert!((p.position - sc.ris_pose.position).norm() >= ANCHOR_EXCLUSION);
            for i in 0..6 {
                sums[i] += a[i];
            }
        }
        let widths = [15.0, 15.0, 5.0, FRAC_PI_4, FRAC_PI_4, FRAC_PI_4];
        for i in 0..6 {
            let mean = sums[i] / n as f64;
            let se = widths[i] / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - widths[i] / 2.0).abs() < 3.0 * se, "coordinate {i}: {mean}");
        }
        let mut r1 = SeededRng::seed_from_u64(3);
        let mut r2 = SeededRng::seed_from_u64(3);
        assert_eq!(random_pose(&sc, FRAC_PI_4, &mut r1).unwrap(), random_pose(&sc, FRAC_PI_4, &mut r2).unwrap());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = CampaignConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(CampaignConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(CampaignConfig::from_toml_str("bogus_key = 3").is_err());
        assert!(CampaignConfig::from_toml_str("n_trials = 0").is_err());
        assert!(CampaignConfig::from_toml_str("sigma2_list = []").is_err());
    }

    #[test]
    fn grid_has_fifty_distinct_interior_poses() {
        let sc = Scenario::default();
        let g = bounds_grid(&sc);
        assert_eq!(g.len(), 50);
        for p in &g {
            assert!(sc.contains(&p.position));
            assert!(clears_zenith_band(p, &sc).unwrap());
        }
    }

    #[test]
    fn sigma2_labels() {
        assert_eq!(sigma2_label(1e-3), "1e-3");
        assert_eq!(sigma2_label(0.1), "1e-1");
        assert_eq!(sigma2_label(2.5e-4), "2.5e-4");
    }
}
