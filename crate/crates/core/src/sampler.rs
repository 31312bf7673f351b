//! No-U-Turn Sampler with multinomial trajectory sampling, dual-averaging
//! step-size adaptation, optional windowed diagonal mass adaptation, parallel
//! chains, and split-R̂ / bulk-ESS diagnostics.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{eta_names, ObservationSet, Pose, Scenario};
use crate::error::{Error, Result};
use crate::posterior::{pose_errors, PosteriorModel, PriorConfig};
use crate::SeededRng;

/// Energy error above which a transition is flagged divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// A differentiable log-density on ℝⁿ.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Writes `∇ log p(x)` into `grad` and returns `log p(x)` (`−∞` outside the support).
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn initial_point(&self, rng: &mut SeededRng) -> Vec<f64>;

    /// Map to the space in which draws are stored and summarized.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn coordinate_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("q{i}")).collect()
    }
}

impl Target for PosteriorModel {
    fn dim(&self) -> usize {
        PosteriorModel::dim(self)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_density_into(x, grad)
    }

    fn initial_point(&self, rng: &mut SeededRng) -> Vec<f64> {
        PosteriorModel::initial_point(self, rng)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let s = PosteriorModel::constrain(self, x);
        s.pose.to_array().into_iter().chain(s.sigma_eta2).collect()
    }

    fn coordinate_names(&self) -> Vec<String> {
        ["x", "y", "z", "alpha", "beta", "gamma"]
            .iter()
            .map(|s| s.to_string())
            .chain(eta_names(self.scenario.ris_enabled).iter().map(|n| format!("sigma2_{n}")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassAdaptation {
    /// Identity mass matrix throughout.
    #[default]
    None,
    /// Diagonal mass matrix estimated in doubling warm-up windows.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NutsConfig {
    pub n_chains: usize,
    pub tune: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub mass: MassAdaptation,
    /// Starting step size before the initial heuristic search.
    pub init_step_size: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            tune: 1500,
            draws: 2500,
            target_accept: 0.9,
            max_tree_depth: 10,
            seed: 0,
            mass: MassAdaptation::None,
            init_step_size: 1.0,
        }
    }
}

impl NutsConfig {
    /// Desk-scale profile: one chain, 500 tuning and 500 kept draws.
    pub fn fast() -> Self {
        Self { n_chains: 1, tune: 500, draws: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::Config("n_chains, draws and max_tree_depth must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if !(self.init_step_size.is_finite() && self.init_step_size > 0.0) {
            return Err(Error::Config("init_step_size must be positive".into()));
        }
        Ok(())
    }
}

/// One leapfrog step `(q, p) → (q', p')` under a diagonal inverse metric.
///
/// `grad` must hold `∇ log p(q)` on entry and holds `∇ log p(q')` on exit.
/// Returns `log p(q')`; a non-finite value signals a divergence to the caller.
pub fn leapfrog<F>(q: &mut [f64], p: &mut [f64], grad: &mut [f64], step_size: f64, inv_metric: &[f64], mut f: F) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let half = 0.5 * step_size;
    for i in 0..q.len() {
        p[i] += half * grad[i];
        q[i] += step_size * inv_metric[i] * p[i];
    }
    let logp = f(q, grad);
    for i in 0..q.len() {
        p[i] += half * grad[i];
    }
    logp
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalized no-U-turn criterion on `ρ` and the sharp momenta at both ends.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

#[derive(Debug, Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Trajectory<'a, T: Target + ?Sized> {
    target: &'a T,
    inv_metric: &'a [f64],
    step_size: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Accumulators threaded through one subtree build.
struct Edge {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
}

impl Edge {
    fn new(dim: usize) -> Self {
        Self {
            p_sharp_beg: vec![0.0; dim],
            p_sharp_end: vec![0.0; dim],
            p_beg: vec![0.0; dim],
            p_end: vec![0.0; dim],
            rho: vec![0.0; dim],
        }
    }
}

impl<T: Target + ?Sized> Trajectory<'_, T> {
    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_metric).map(|(p, m)| p * m).collect()
    }

    /// Extends `z` by `2^depth` leapfrog steps in direction `sign`. Returns
    /// whether the subtree is valid (no divergence, no internal U-turn).
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        edge: &mut Edge,
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut SeededRng,
    ) -> bool {
        if depth == 0 {
            let target = self.target;
            z.logp = leapfrog(&mut z.q, &mut z.p, &mut z.grad, sign * self.step_size, self.inv_metric, |x, g| {
                target.log_density_grad(x, g)
            });
            self.n_leapfrog += 1;
            let mut h = kinetic(&z.p, self.inv_metric) - z.logp;
            if !h.is_finite() {
                h = f64::INFINITY;
            }
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            z_propose.clone_from(z);
            edge.p_sharp_beg = self.sharp(&z.p);
            edge.p_sharp_end.clone_from(&edge.p_sharp_beg);
            for (r, p) in edge.rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            edge.p_beg.clone_from(&z.p);
            edge.p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();
        let mut init = Edge::new(dim);
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, z_propose, &mut init, sign, &mut lsw_init, rng) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut fin = Edge::new(dim);
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, &mut z_propose_final, &mut fin, sign, &mut lsw_final, rng) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&init.rho, &fin.rho);
        for (r, s) in edge.rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&init.rho, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&fin.rho, &init.p_end));

        edge.p_sharp_beg = init.p_sharp_beg;
        edge.p_beg = init.p_beg;
        edge.p_sharp_end = fin.p_sharp_end;
        edge.p_end = fin.p_end;
        persist
    }
}

/// Outcome of one NUTS transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub position: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub diverged: bool,
    pub energy: f64,
}

/// One NUTS transition from `current` (with its log-density and gradient).
#[allow(clippy::too_many_arguments)]
pub fn nuts_draw<T: Target + ?Sized>(
    target: &T,
    current: &[f64],
    current_logp: f64,
    current_grad: &[f64],
    step_size: f64,
    inv_metric: &[f64],
    rng: &mut SeededRng,
    max_depth: usize,
) -> Transition {
    let dim = current.len();
    let p0: Vec<f64> = inv_metric
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let z0 = PhasePoint { q: current.to_vec(), p: p0, grad: current_grad.to_vec(), logp: current_logp };
    let h0 = kinetic(&z0.p, inv_metric) - z0.logp;

    let mut traj = Trajectory { target, inv_metric, step_size, h0, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
    let p_sharp0 = traj.sharp(&z0.p);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let mut z_propose = z0.clone();

    // Momenta at the inner ends of each half of the trajectory.
    let (mut p_fwd_bck, mut p_bck_fwd) = (z0.p.clone(), z0.p.clone());
    let (mut ps_fwd_fwd, mut ps_fwd_bck, mut ps_bck_fwd, mut ps_bck_bck) =
        (p_sharp0.clone(), p_sharp0.clone(), p_sharp0.clone(), p_sharp0);
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    while depth < max_depth {
        let mut edge = Edge::new(dim);
        let mut lsw_subtree = f64::NEG_INFINITY;
        let forward = rng.random::<f64>() > 0.5;
        let (rho_fwd, rho_bck);
        let valid = if forward {
            rho_bck = rho.clone();
            p_bck_fwd.clone_from(&p_fwd_bck);
            ps_bck_fwd.clone_from(&ps_fwd_bck);
            let v = traj.build_tree(depth, &mut z_fwd, &mut z_propose, &mut edge, 1.0, &mut lsw_subtree, rng);
            ps_fwd_bck = edge.p_sharp_beg;
            ps_fwd_fwd = edge.p_sharp_end;
            p_fwd_bck = edge.p_beg;
            rho_fwd = edge.rho;
            v
        } else {
            rho_fwd = rho.clone();
            p_fwd_bck.clone_from(&p_bck_fwd);
            ps_fwd_bck.clone_from(&ps_bck_fwd);
            let v = traj.build_tree(depth, &mut z_bck, &mut z_propose, &mut edge, -1.0, &mut lsw_subtree, rng);
            ps_bck_fwd = edge.p_sharp_beg;
            ps_bck_bck = edge.p_sharp_end;
            p_bck_fwd = edge.p_beg;
            rho_bck = edge.rho;
            v
        };
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample.clone_from(&z_propose);
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&ps_bck_bck, &ps_fwd_fwd, &rho);
        persist &= no_u_turn(&ps_bck_bck, &ps_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&ps_bck_fwd, &ps_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let accept_stat = if traj.n_leapfrog > 0 { traj.sum_metro_prob / traj.n_leapfrog as f64 } else { 0.0 };
    let energy = kinetic(&z_sample.p, inv_metric) - z_sample.logp;
    Transition {
        position: z_sample.q,
        grad: z_sample.grad,
        logp: z_sample.logp,
        accept_stat,
        depth,
        n_leapfrog: traj.n_leapfrog,
        diverged: traj.divergent,
        energy,
    }
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub target_accept: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
    step_size: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, target_accept: f64) -> Self {
        Self {
            target_accept,
            mu: (10.0 * step_size).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            step_size,
        }
    }

    /// Restarts the averaging around a new step size (after a metric update).
    pub fn restart(&mut self, step_size: f64) {
        *self = Self::new(step_size, self.target_accept);
    }

    /// Feeds one acceptance statistic, returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target_accept - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        self.step_size = x.exp();
        self.step_size
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// The averaged step size used once tuning ends.
    pub fn final_step_size(&self) -> f64 {
        if self.counter == 0.0 {
            self.step_size
        } else {
            self.x_bar.exp()
        }
    }
}

/// Runs dual averaging over a fixed sequence of acceptance statistics and
/// returns the step size after each update.
pub fn adapt_step_size(history: &[f64], target_accept: f64, initial: f64) -> Vec<f64> {
    let mut da = DualAveraging::new(initial, target_accept);
    history.iter().map(|&a| da.update(a)).collect()
}

/// Doubling step-size search so a single leapfrog step has acceptance near 0.8.
fn initial_step_size<T: Target + ?Sized>(
    target: &T,
    q: &[f64],
    logp: f64,
    grad: &[f64],
    inv_metric: &[f64],
    start: f64,
    rng: &mut SeededRng,
) -> f64 {
    let threshold = 0.8f64.ln();
    let mut eps = start;
    let mut direction = 0.0;
    for _ in 0..100 {
        let mut p: Vec<f64> = inv_metric.iter().map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt()).collect();
        let h0 = kinetic(&p, inv_metric) - logp;
        let (mut q1, mut g1) = (q.to_vec(), grad.to_vec());
        let logp1 = leapfrog(&mut q1, &mut p, &mut g1, eps, inv_metric, |x, g| target.log_density_grad(x, g));
        let h = kinetic(&p, inv_metric) - logp1;
        let delta = if h.is_finite() { h0 - h } else { f64::NEG_INFINITY };
        if direction == 0.0 {
            direction = if delta > threshold { 1.0 } else { -1.0 };
        }
        if direction > 0.0 && delta <= threshold {
            break;
        }
        if direction < 0.0 && delta >= threshold {
            break;
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            eps = eps.clamp(1e-12, 1e7);
            break;
        }
    }
    eps
}

/// Warm-up windows `[start, end)` for metric estimation: an initial fast
/// buffer, doubling slow windows, and a terminal fast buffer.
pub fn adaptation_windows(tune: usize) -> Vec<(usize, usize)> {
    if tune < 20 {
        return Vec::new();
    }
    let (mut init, mut term, mut base) = (75, 50, 25);
    if init + term + base > tune {
        init = (0.15 * tune as f64) as usize;
        term = (0.1 * tune as f64) as usize;
        base = tune - init - term;
    }
    let last = tune - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < last {
        let mut end = start + size;
        // Absorb a following window that would not fit before the terminal buffer.
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

/// Welford running variance.
#[derive(Debug, Clone)]
struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n as f64;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Variance shrunk toward `1e-3` for small windows.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Kept draws and sampler statistics for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// `draws × dim`, constrained coordinates.
    pub draws: DMatrix<f64>,
    pub accept_stats: Vec<f64>,
    pub depths: Vec<usize>,
    pub divergent: Vec<bool>,
    pub n_leapfrog: Vec<usize>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Runs warm-up and sampling for one chain.
pub fn run_chain<T: Target + ?Sized>(target: &T, cfg: &NutsConfig, chain: usize) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let dim = target.dim();
    let mut q = target.initial_point(&mut rng);
    let mut grad = vec![0.0; dim];
    let mut logp = target.log_density_grad(&q, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Sampler { chain, reason: "initial point has zero density".into() });
    }
    let mut inv_metric = vec![1.0; dim];
    let mut step = initial_step_size(target, &q, logp, &grad, &inv_metric, cfg.init_step_size, &mut rng);
    let mut da = DualAveraging::new(step, cfg.target_accept);

    let windows = match cfg.mass {
        MassAdaptation::None => Vec::new(),
        MassAdaptation::Diagonal => adaptation_windows(cfg.tune),
    };
    let mut window_idx = 0;
    let mut var = RunningVariance::new(dim);

    for it in 0..cfg.tune {
        let t = nuts_draw(target, &q, logp, &grad, step, &inv_metric, &mut rng, cfg.max_tree_depth);
        q = t.position;
        grad = t.grad;
        logp = t.logp;
        step = da.update(t.accept_stat);

        if let Some(&(start, end)) = windows.get(window_idx) {
            if it >= start && it < end {
                var.push(&q);
            }
            if it + 1 == end {
                inv_metric = var.regularized();
                var = RunningVariance::new(dim);
                window_idx += 1;
                step = initial_step_size(target, &q, logp, &grad, &inv_metric, step, &mut rng);
                da.restart(step);
            }
        }
    }
    if cfg.tune > 0 {
        step = da.final_step_size();
    }

    let mut out = ChainOutput {
        draws: DMatrix::zeros(cfg.draws, dim),
        accept_stats: Vec::with_capacity(cfg.draws),
        depths: Vec::with_capacity(cfg.draws),
        divergent: Vec::with_capacity(cfg.draws),
        n_leapfrog: Vec::with_capacity(cfg.draws),
        step_size: step,
        inv_metric: inv_metric.clone(),
    };
    for i in 0..cfg.draws {
        let t = nuts_draw(target, &q, logp, &grad, step, &inv_metric, &mut rng, cfg.max_tree_depth);
        q = t.position;
        grad = t.grad;
        logp = t.logp;
        for (j, v) in target.constrain(&q).into_iter().enumerate() {
            out.draws[(i, j)] = v;
        }
        out.accept_stats.push(t.accept_stat);
        out.depths.push(t.depth);
        out.divergent.push(t.diverged);
        out.n_leapfrog.push(t.n_leapfrog);
    }
    if out.divergent.iter().all(|&d| d) {
        return Err(Error::Sampler { chain, reason: format!("all {} draws diverged", cfg.draws) });
    }
    Ok(out)
}

/// Post-warm-up draws from every chain plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub names: Vec<String>,
    pub chains: Vec<ChainOutput>,
    pub divergences: usize,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl SampleSet {
    pub fn from_chains(names: Vec<String>, chains: Vec<ChainOutput>) -> Self {
        let dim = names.len();
        let divergences = chains.iter().map(|c| c.divergent.iter().filter(|&&d| d).count()).sum();
        let per_dim: Vec<Vec<Vec<f64>>> = (0..dim)
            .map(|j| chains.iter().map(|c| c.draws.column(j).iter().copied().collect()).collect())
            .collect();
        let rhat = per_dim.iter().map(|c| split_rhat(c)).collect();
        let ess = per_dim.iter().map(|c| bulk_ess(c)).collect();
        Self { names, chains, divergences, rhat, ess }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.nrows()).sum()
    }

    /// Step size of each chain after warm-up.
    pub fn step_sizes(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.step_size).collect()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        let all: Vec<f64> = self.chains.iter().flat_map(|c| c.accept_stats.iter().copied()).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pooled draws of coordinate `j` across all chains.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.draws.column(j).iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| mean(&self.pooled(j))).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let x = self.pooled(j);
                let m = mean(&x);
                x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
            })
            .collect()
    }

    /// One CSV per chain: coordinates, accept_stat, depth, divergent.
    pub fn write_chain_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (c, chain) in self.chains.iter().enumerate() {
            let path = dir.join(format!("chain_{c}.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
            let header: Vec<&str> =
                self.names.iter().map(String::as_str).chain(["accept_stat", "depth", "divergent"]).collect();
            w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
            for i in 0..chain.draws.nrows() {
                let mut rec: Vec<String> = chain.draws.row(i).iter().map(|v| v.to_string()).collect();
                rec.push(chain.accept_stats[i].to_string());
                rec.push(chain.depths[i].to_string());
                rec.push((chain.divergent[i] as u8).to_string());
                w.write_record(&rec).map_err(|e| Error::csv(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs `cfg.n_chains` independent chains in parallel.
pub fn run_chains<T: Target + ?Sized>(target: &T, cfg: &NutsConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::from_chains(target.coordinate_names(), chains))
}

/// Builds the localization posterior for `obs` and samples it.
pub fn sample_posterior(sc: &Scenario, prior: &PriorConfig, obs: &ObservationSet, cfg: &NutsConfig) -> Result<SampleSet> {
    let model = PosteriorModel::new(sc.clone(), *prior, obs)?;
    run_chains(&model, cfg)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            // Odd lengths drop the middle draw.
            [c[..half].to_vec(), c[c.len() - half..].to_vec()]
        })
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-R̂ over chains of equal length.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let n = split.first().map_or(0, Vec::len);
    if n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let w = mean(&split.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b_over_n = if split.len() > 1 { variance(&means) } else { 0.0 };
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Rank-normalized bulk effective sample size.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let n = split.first().map_or(0, Vec::len);
    if n < 4 {
        return f64::NAN;
    }
    let z = rank_normalize(&split);
    ess_from_autocorrelation(&z)
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        // Ties share their average rank.
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

/// Lag-`t` autocovariance (biased estimator) of one chain.
fn autocovariance(x: &[f64], m: f64, t: usize) -> f64 {
    let n = x.len();
    (0..n - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess_from_autocorrelation(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_mean = |t: usize| chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, t)).sum::<f64>() / m as f64;
    let acov0 = acov_mean(0);
    let w = acov0 * n as f64 / (n as f64 - 1.0);
    let var_plus = w * (n as f64 - 1.0) / n as f64 + if m > 1 { variance(&means) } else { 0.0 };
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| 1.0 - (w - acov_mean(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut t = 0;
    while t + 3 < n.saturating_sub(2) && rho_even + rho_odd > 0.0 {
        t += 2;
        rho_even = rho(t);
        rho_odd = rho(t + 1);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t] = rho_even;
            rho_hat[t + 1] = rho_odd;
        }
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t] = rho_even;
    }
    let mut t = 1;
    while t + 2 < max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Point estimate of the pose and, when a truth is supplied, its errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose_mean: Pose,
    pub position_error: Option<f64>,
    pub rotation_error: Option<f64>,
}

/// Pools all chains and summarizes the first six (pose) coordinates.
pub fn summarize(samples: &SampleSet, truth: Option<&Pose>, estimator: Estimator) -> Result<PoseEstimate> {
    if samples.n_draws() == 0 || samples.dim() < 6 {
        return Err(Error::Domain("sample set holds no pose draws".into()));
    }
    let mut z = [0.0; 6];
    for (j, zj) in z.iter_mut().enumerate() {
        let x = samples.pooled(j);
        *zj = match estimator {
            Estimator::Mean => mean(&x),
            Estimator::Median => median(&x),
        };
    }
    let pose_mean = Pose::from_array(&z);
    let errors = truth.map(|t| pose_errors(&pose_mean, t));
    Ok(PoseEstimate { pose_mean, position_error: errors.map(|e| e.0), rotation_error: errors.map(|e| e.1) })
}
