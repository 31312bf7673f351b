//! Bayesian network over the MS pose and per-parameter noise variances.
//!
//! The pose has uniform priors on the room box and on `(0, ε)³` for the Euler
//! angles; every η entry carries its own variance with an inverse-gamma prior.
//! Observations are i.i.d. Gaussian around `η(pose)`. The sampler works in an
//! unconstrained space: logit for the box coordinates and log for the
//! variances, with the log-Jacobian folded into the prior.
//!
//! Layout of an unconstrained vector: `[u_x, u_y, u_z, u_α, u_β, u_γ, w_0, …]`
//! where `w_k = log σ²_k`.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::channel::{eta_dim, ObservationSet, Pose, Scenario};
use crate::crlb::params_and_jacobian;
use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, Vec3};

/// Rows of η that hold spatial frequencies (ψ and ς), for either RIS mode.
fn is_spatial_frequency(k: usize, ris_enabled: bool) -> bool {
    if ris_enabled {
        k < 8
    } else {
        k < 4
    }
}

/// Sign applied to the spatial-frequency means. Forward synthesis and the
/// likelihood must agree; the overall sign is unobservable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencySign {
    #[default]
    Positive,
    Negative,
}

impl FrequencySign {
    fn factor(self) -> f64 {
        match self {
            FrequencySign::Positive => 1.0,
            FrequencySign::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Upper bound of the Euler-angle priors.
    pub epsilon: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub sign: FrequencySign,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { epsilon: FRAC_PI_4, ig_shape: 1e-3, ig_scale: 1e-3, sign: FrequencySign::Positive }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0 && self.epsilon < PI) {
            return Err(Error::Config(format!("epsilon must lie in (0, π), got {}", self.epsilon)));
        }
        if !(self.ig_shape > 0.0 && self.ig_scale > 0.0 && self.ig_shape.is_finite() && self.ig_scale.is_finite()) {
            return Err(Error::Config("inverse-gamma shape and scale must be positive".into()));
        }
        Ok(())
    }
}

/// Pose plus one variance per η entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub pose: Pose,
    pub sigma_eta2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedState(pub DVector<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct LogDensity {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// The implied pose was degenerate; `value` is `−∞` and `gradient` is zero.
    pub degenerate: bool,
}

impl LogDensity {
    fn degenerate(dim: usize) -> Self {
        Self { value: f64::NEG_INFINITY, gradient: DVector::zeros(dim), degenerate: true }
    }
}

/// `(lo, hi)` for each of the six pose coordinates.
pub fn pose_bounds(sc: &Scenario, prior: &PriorConfig) -> [(f64, f64); 6] {
    let e = prior.epsilon;
    [(0.0, sc.room_l), (0.0, sc.room_l), (0.0, sc.room_h), (0.0, e), (0.0, e), (0.0, e)]
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᵘ)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn logit_in(x: f64, lo: f64, hi: f64, name: &str) -> Result<f64> {
    if !(x > lo && x < hi) {
        return Err(Error::Domain(format!("{name} = {x} is outside the open interval ({lo}, {hi})")));
    }
    let s = (x - lo) / (hi - lo);
    Ok((s / (1.0 - s)).ln())
}

const POSE_NAMES: [&str; 6] = ["x", "y", "z", "alpha", "beta", "gamma"];

pub fn to_unconstrained(s: &LatentState, sc: &Scenario, prior: &PriorConfig) -> Result<UnconstrainedState> {
    let bounds = pose_bounds(sc, prior);
    let p = s.pose.to_array();
    let mut u = Vec::with_capacity(6 + s.sigma_eta2.len());
    for i in 0..6 {
        u.push(logit_in(p[i], bounds[i].0, bounds[i].1, POSE_NAMES[i])?);
    }
    for (k, &v) in s.sigma_eta2.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("variance {k} must be positive and finite, got {v}")));
        }
        u.push(v.ln());
    }
    Ok(UnconstrainedState(DVector::from_vec(u)))
}

fn pose_from_unconstrained(u: &[f64], bounds: &[(f64, f64); 6]) -> Pose {
    let mut p = [0.0; 6];
    for i in 0..6 {
        let (lo, hi) = bounds[i];
        p[i] = lo + (hi - lo) * sigmoid(u[i]);
    }
    Pose::from_array(&p)
}

pub fn from_unconstrained(u: &UnconstrainedState, sc: &Scenario, prior: &PriorConfig) -> Result<LatentState> {
    let u = u.0.as_slice();
    if u.len() < 6 {
        return Err(Error::Domain(format!("unconstrained state has {} < 6 entries", u.len())));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("unconstrained state is not finite".into()));
    }
    Ok(LatentState {
        pose: pose_from_unconstrained(u, &pose_bounds(sc, prior)),
        sigma_eta2: u[6..].iter().map(|w| w.exp()).collect(),
    })
}

/// Per-entry sample mean and scatter `Σ (y − ȳ)²`; all the likelihood needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub scatter: Vec<f64>,
}

impl SufficientStats {
    pub fn from_observations(obs: &ObservationSet) -> Self {
        let n = obs.len();
        let mut mean = Vec::with_capacity(obs.dim());
        let mut scatter = Vec::with_capacity(obs.dim());
        for col in obs.samples.column_iter() {
            // Sorting makes the statistics independent of row order.
            let mut vals: Vec<f64> = col.iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            let m = vals.iter().sum::<f64>() / n as f64;
            mean.push(m);
            scatter.push(vals.iter().map(|v| (v - m) * (v - m)).sum());
        }
        Self { n, mean, scatter }
    }
}

/// The localization posterior for one observation set.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    pub scenario: Scenario,
    pub prior: PriorConfig,
    pub stats: SufficientStats,
    /// Random restarts of the least-squares pose fit used to initialize chains.
    pub init_starts: usize,
    bounds: [(f64, f64); 6],
    ig_const: f64,
}

/// Default number of least-squares restarts per chain initialization.
pub const DEFAULT_INIT_STARTS: usize = 16;

const LM_ITERATIONS: usize = 100;

impl PosteriorModel {
    pub fn new(scenario: Scenario, prior: PriorConfig, obs: &ObservationSet) -> Result<Self> {
        scenario.validate()?;
        prior.validate()?;
        if obs.dim() != eta_dim(scenario.ris_enabled) {
            return Err(Error::Domain(format!(
                "observation width {} does not match the scenario (expected {})",
                obs.dim(),
                eta_dim(scenario.ris_enabled)
            )));
        }
        let bounds = pose_bounds(&scenario, &prior);
        let ig_const = prior.ig_shape * prior.ig_scale.ln() - ln_gamma(prior.ig_shape);
        Ok(Self {
            scenario,
            prior,
            stats: SufficientStats::from_observations(obs),
            init_starts: DEFAULT_INIT_STARTS,
            bounds,
            ig_const,
        })
    }

    /// `6 + dim(η)`.
    pub fn dim(&self) -> usize {
        6 + self.stats.mean.len()
    }

    pub fn constrain(&self, u: &[f64]) -> LatentState {
        LatentState {
            pose: pose_from_unconstrained(u, &self.bounds),
            sigma_eta2: u[6..].iter().map(|w| w.exp()).collect(),
        }
    }

    /// Adds the prior (with transform Jacobians) to `grad`, returns its value.
    fn prior_into(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        // Uniform density times the logit Jacobian: the interval widths cancel.
        for i in 0..6 {
            value -= softplus(-u[i]) + softplus(u[i]);
            grad[i] += 1.0 - 2.0 * sigmoid(u[i]);
        }
        let (a, b) = (self.prior.ig_shape, self.prior.ig_scale);
        for k in 6..u.len() {
            let w = u[k];
            let be = b * (-w).exp();
            value += self.ig_const - a * w - be;
            grad[k] += -a + be;
        }
        value
    }

    /// Adds the likelihood to `grad`; `None` when the pose is degenerate.
    fn likelihood_into(&self, u: &[f64], grad: &mut [f64]) -> Option<f64> {
        let pose = pose_from_unconstrained(u, &self.bounds);
        let (params, jac) = params_and_jacobian(&pose, &self.scenario).ok()?;
        let mu = params.to_vec();
        let ris = self.scenario.ris_enabled;
        let sign = self.prior.sign.factor();
        let n = self.stats.n as f64;
        let half_log_2pi = 0.5 * (2.0 * PI).ln();

        let mut value = 0.0;
        let mut d_pose = [0.0; 6];
        for k in 0..mu.len() {
            let f = if is_spatial_frequency(k, ris) { sign } else { 1.0 };
            let w = u[6 + k];
            let inv_var = (-w).exp();
            let r = self.stats.mean[k] - f * mu[k];
            let s = self.stats.scatter[k] + n * r * r;
            value += -n * (half_log_2pi + 0.5 * w) - 0.5 * s * inv_var;
            grad[6 + k] += -0.5 * n + 0.5 * s * inv_var;
            let d_mu = f * n * r * inv_var;
            for (j, dp) in d_pose.iter_mut().enumerate() {
                *dp += d_mu * jac.matrix[(k, j)];
            }
        }
        for i in 0..6 {
            let (lo, hi) = self.bounds[i];
            let s = sigmoid(u[i]);
            grad[i] += d_pose[i] * (hi - lo) * s * (1.0 - s);
        }
        value.is_finite().then_some(value)
    }

    fn check(&self, u: &UnconstrainedState) -> Result<()> {
        if u.0.len() != self.dim() {
            return Err(Error::Domain(format!("state has {} entries, model expects {}", u.0.len(), self.dim())));
        }
        if u.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("unconstrained state is not finite".into()));
        }
        Ok(())
    }

    pub fn log_prior(&self, u: &UnconstrainedState) -> Result<LogDensity> {
        self.check(u)?;
        let mut gradient = DVector::zeros(self.dim());
        let value = self.prior_into(u.0.as_slice(), gradient.as_mut_slice());
        Ok(LogDensity { value, gradient, degenerate: false })
    }

    pub fn log_likelihood(&self, u: &UnconstrainedState) -> Result<LogDensity> {
        self.check(u)?;
        let mut gradient = DVector::zeros(self.dim());
        Ok(match self.likelihood_into(u.0.as_slice(), gradient.as_mut_slice()) {
            Some(value) => LogDensity { value, gradient, degenerate: false },
            None => LogDensity::degenerate(self.dim()),
        })
    }

    pub fn log_posterior(&self, u: &UnconstrainedState) -> Result<LogDensity> {
        self.check(u)?;
        let mut gradient = vec![0.0; self.dim()];
        let value = self.log_density_into(u.0.as_slice(), &mut gradient);
        if value == f64::NEG_INFINITY {
            return Ok(LogDensity::degenerate(self.dim()));
        }
        Ok(LogDensity { value, gradient: DVector::from_vec(gradient), degenerate: false })
    }

    /// Log-posterior into a caller-owned gradient buffer; the sampler's hot path.
    pub fn log_density_into(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Some(ll) = self.likelihood_into(u, grad) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        };
        let value = ll + self.prior_into(u, grad);
        if value.is_finite() {
            value
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            f64::NEG_INFINITY
        }
    }

    /// Residuals `ȳ − μ(pose)` and their Jacobian with respect to the logit pose coordinates.
    fn residuals(&self, u: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let pose = pose_from_unconstrained(u, &self.bounds);
        let (params, jac) = params_and_jacobian(&pose, &self.scenario).ok()?;
        let ris = self.scenario.ris_enabled;
        let mut j = jac.matrix;
        let r = params
            .to_vec()
            .into_iter()
            .enumerate()
            .map(|(k, mu)| {
                let f = if is_spatial_frequency(k, ris) { self.prior.sign.factor() } else { 1.0 };
                j.row_mut(k).scale_mut(f);
                self.stats.mean[k] - f * mu
            })
            .collect();
        for i in 0..6 {
            let (lo, hi) = self.bounds[i];
            let s = sigmoid(u[i]);
            j.column_mut(i).scale_mut((hi - lo) * s * (1.0 - s));
        }
        Some((r, j))
    }

    /// Levenberg–Marquardt on the unweighted residuals, in logit space so every
    /// iterate stays inside the box. Returns the final pose coordinates and cost.
    fn least_squares(&self, mut u: [f64; 6]) -> Option<([f64; 6], f64)> {
        let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
        let (mut r, mut j) = self.residuals(&u)?;
        let mut c = cost(&r);
        let mut lambda = 1e-3;
        for _ in 0..LM_ITERATIONS {
            let jtj = j.tr_mul(&j);
            let jtr = j.tr_mul(&DVector::from_column_slice(&r));
            let mut a = jtj.clone();
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = u;
            for i in 0..6 {
                trial[i] += step[i].clamp(-2.0, 2.0);
            }
            match self.residuals(&trial) {
                Some((r2, j2)) if cost(&r2) < c => {
                    let improvement = c - cost(&r2);
                    u = trial;
                    c = cost(&r2);
                    r = r2;
                    j = j2;
                    lambda = (lambda / 3.0).max(1e-12);
                    if improvement <= 1e-14 * c.max(1e-300) {
                        break;
                    }
                }
                _ => {
                    lambda *= 4.0;
                    if lambda > 1e12 {
                        break;
                    }
                }
            }
        }
        Some((u, c))
    }

    /// Starting point for a chain: the best of several least-squares pose fits
    /// from random starts, with each variance at its conditional maximum
    /// (the mean squared residual of its entry at that pose).
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut best: Option<([f64; 6], f64)> = None;
        for _ in 0..self.init_starts.max(1) {
            let mut start = [0.0; 6];
            for v in start.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
            if let Some((u, c)) = self.least_squares(start) {
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((u, c));
                }
            }
        }
        let mut u = vec![0.0; self.dim()];
        let pose_u = best.map_or([0.0; 6], |b| b.0);
        u[..6].copy_from_slice(&pose_u);
        let n = self.stats.n as f64;
        match self.residuals(&u) {
            Some((r, _)) => {
                for (k, rk) in r.iter().enumerate() {
                    let msr = (self.stats.scatter[k] + n * rk * rk) / n;
                    u[6 + k] = msr.max(1e-300).ln();
                }
            }
            None => u[6..].iter_mut().for_each(|w| *w = 0.0),
        }
        u
    }
}

/// Free-function form of [`PosteriorModel::log_prior`].
pub fn log_prior(u: &UnconstrainedState, model: &PosteriorModel) -> Result<LogDensity> {
    model.log_prior(u)
}

/// Builds the model for `(obs, sc)` and evaluates the likelihood at `u`.
pub fn log_likelihood(u: &UnconstrainedState, obs: &ObservationSet, sc: &Scenario) -> Result<LogDensity> {
    PosteriorModel::new(sc.clone(), PriorConfig::default(), obs)?.log_likelihood(u)
}

/// Builds the model for `(obs, sc)` and evaluates the log-posterior at `u`.
pub fn log_posterior(u: &UnconstrainedState, obs: &ObservationSet, sc: &Scenario) -> Result<LogDensity> {
    PosteriorModel::new(sc.clone(), PriorConfig::default(), obs)?.log_posterior(u)
}

/// Position error in metres and rotation error in radians between two poses.
pub fn pose_errors(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let dp: Vec3 = estimate.position - truth.position;
    let (a, b) = (estimate.rotation.to_array(), truth.rotation.to_array());
    let dr = EulerAngles::new(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dp.norm(), dr.to_array().iter().map(|v| v * v).sum::<f64>().sqrt())
}
