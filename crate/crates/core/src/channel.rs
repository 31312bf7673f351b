//! Geometric channel parameters of the direct (BS→MS) and RIS-reflected
//! (BS→RIS→MS) links, the channel-estimation error model, observation
//! synthesis, and small channel tensors used to validate the parameterization.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    direction_and_distance, local_spherical_angles, rotation_matrix, EulerAngles, Vec3,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Parameter names in canonical order, RIS enabled.
pub const ETA_NAMES: [&str; 12] = [
    "psi_bm_1",
    "psi_bm_2",
    "psi_rm_1",
    "psi_rm_2",
    "varsigma_bm_1",
    "varsigma_bm_2",
    "varsigma_rm_1",
    "varsigma_rm_2",
    "omega_bm",
    "omega_brm",
    "b_bm",
    "b_brm",
];

/// Parameter names in canonical order, direct link only.
pub const ETA_NAMES_DIRECT: [&str; 6] =
    ["psi_bm_1", "psi_bm_2", "varsigma_bm_1", "varsigma_bm_2", "omega_bm", "b_bm"];

/// Positions of the direct-link entries inside the 12-entry vector.
pub const DIRECT_INDICES: [usize; 6] = [0, 1, 4, 5, 8, 10];

pub fn eta_names(ris_enabled: bool) -> &'static [&'static str] {
    if ris_enabled {
        &ETA_NAMES
    } else {
        &ETA_NAMES_DIRECT
    }
}

pub fn eta_dim(ris_enabled: bool) -> usize {
    if ris_enabled {
        12
    } else {
        6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: EulerAngles,
}

impl Pose {
    pub fn new(position: Vec3, rotation: EulerAngles) -> Self {
        Self { position, rotation }
    }

    /// `[x, y, z, α, β, γ]`.
    pub fn to_array(&self) -> [f64; 6] {
        let p = &self.position;
        let r = &self.rotation;
        [p.x, p.y, p.z, r.alpha, r.beta, r.gamma]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), EulerAngles::new(a[3], a[4], a[5]))
    }
}

/// Known anchors, room and radio constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub bs_pose: Pose,
    pub ris_pose: Pose,
    #[serde(rename = "room_L")]
    pub room_l: f64,
    #[serde(rename = "room_H")]
    pub room_h: f64,
    pub f_c: f64,
    pub f_sc: f64,
    pub tau0: f64,
    pub ris_enabled: bool,
    /// BS–RIS gain magnitude; free-space gain over `d_BR` when absent.
    #[serde(rename = "b_BR", default, skip_serializing_if = "Option::is_none")]
    pub b_br: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            bs_pose: Pose::new(Vec3::new(0.0, 0.0, 5.0), EulerAngles::zero()),
            ris_pose: Pose::new(Vec3::new(7.5, 15.0, 4.0), EulerAngles::zero()),
            room_l: 15.0,
            room_h: 5.0,
            f_c: 28e9,
            f_sc: 120e3,
            tau0: 0.0,
            ris_enabled: true,
            b_br: None,
        }
    }
}

impl Scenario {
    pub fn with_ris(&self, enabled: bool) -> Self {
        Self { ris_enabled: enabled, ..self.clone() }
    }

    pub fn d_br(&self) -> f64 {
        (self.ris_pose.position - self.bs_pose.position).norm()
    }

    /// Resolved BS–RIS gain magnitude.
    pub fn bs_ris_gain(&self) -> Result<f64> {
        match self.b_br {
            Some(b) => Ok(b),
            None => path_gain(self.d_br(), self.f_c),
        }
    }

    pub fn eta_dim(&self) -> usize {
        eta_dim(self.ris_enabled)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0.0..=self.room_l).contains(&p.x)
            && (0.0..=self.room_l).contains(&p.y)
            && (0.0..=self.room_h).contains(&p.z)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("room_L", self.room_l),
            ("room_H", self.room_h),
            ("f_c", self.f_c),
            ("f_sc", self.f_sc),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.tau0.is_finite() {
            return Err(Error::Config("tau0 must be finite".into()));
        }
        if let Some(b) = self.b_br {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Config(format!("b_BR must be positive, got {b}")));
            }
        }
        for (name, pose) in [("bs_pose", &self.bs_pose), ("ris_pose", &self.ris_pose)] {
            if !self.contains(&pose.position) {
                return Err(Error::Config(format!("{name} lies outside the room")));
            }
            if !pose.rotation.is_finite() {
                return Err(Error::Config(format!("{name} rotation must be finite")));
            }
        }
        if self.d_br() <= 0.0 {
            return Err(Error::Config("BS and RIS are co-located".into()));
        }
        Ok(())
    }
}

/// Parameters of one propagation path as seen by the MS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Arrival spatial frequencies at the MS.
    pub psi: [f64; 2],
    /// Departure spatial frequencies at the transmitting node (BS or RIS).
    pub varsigma: [f64; 2],
    /// Unwrapped delay phase.
    pub omega: f64,
    /// Gain magnitude (cascaded for the reflected path).
    pub gain: f64,
}

/// The channel-parameter vector η: the direct path plus, with RIS, the reflected path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub direct: PathParams,
    pub reflected: Option<PathParams>,
}

impl ChannelParams {
    pub fn ris_enabled(&self) -> bool {
        self.reflected.is_some()
    }

    pub fn dim(&self) -> usize {
        eta_dim(self.ris_enabled())
    }

    /// Flattens in canonical order (see [`ETA_NAMES`] / [`ETA_NAMES_DIRECT`]).
    pub fn to_vec(&self) -> Vec<f64> {
        let d = &self.direct;
        match &self.reflected {
            Some(r) => vec![
                d.psi[0],
                d.psi[1],
                r.psi[0],
                r.psi[1],
                d.varsigma[0],
                d.varsigma[1],
                r.varsigma[0],
                r.varsigma[1],
                d.omega,
                r.omega,
                d.gain,
                r.gain,
            ],
            None => vec![d.psi[0], d.psi[1], d.varsigma[0], d.varsigma[1], d.omega, d.gain],
        }
    }

    /// Inverse of [`Self::to_vec`]; the length selects the RIS mode.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.len() {
            12 => Ok(Self {
                direct: PathParams {
                    psi: [v[0], v[1]],
                    varsigma: [v[4], v[5]],
                    omega: v[8],
                    gain: v[10],
                },
                reflected: Some(PathParams {
                    psi: [v[2], v[3]],
                    varsigma: [v[6], v[7]],
                    omega: v[9],
                    gain: v[11],
                }),
            }),
            6 => Ok(Self {
                direct: PathParams {
                    psi: [v[0], v[1]],
                    varsigma: [v[2], v[3]],
                    omega: v[4],
                    gain: v[5],
                },
                reflected: None,
            }),
            n => Err(Error::Domain(format!("channel parameter vector has length {n}, expected 6 or 12"))),
        }
    }

    /// Drops the reflected path.
    pub fn direct_only(&self) -> Self {
        Self { direct: self.direct, reflected: None }
    }
}

fn spatial_frequencies(dir_local_theta: f64, dir_local_phi: f64) -> [f64; 2] {
    [PI * dir_local_theta.sin() * dir_local_phi.cos(), PI * dir_local_theta.cos()]
}

/// `(π sinθ' cosφ', π cosθ')` of the direction MS → anchor in the MS frame.
pub fn arrival_spatial_frequencies(ms: &Pose, anchor_pos: &Vec3) -> Result<[f64; 2]> {
    let (dir, _) = direction_and_distance(&ms.position, anchor_pos)?;
    let rot = rotation_matrix(&ms.rotation)?;
    let a = local_spherical_angles(&dir, &rot)?;
    Ok(spatial_frequencies(a.theta, a.phi))
}

/// `(π sinθ' cosφ', π cosθ')` of the direction anchor → MS in the anchor frame.
pub fn departure_spatial_frequencies(anchor: &Pose, ms_pos: &Vec3) -> Result<[f64; 2]> {
    let (dir, _) = direction_and_distance(&anchor.position, ms_pos)?;
    let rot = rotation_matrix(&anchor.rotation)?;
    let a = local_spherical_angles(&dir, &rot)?;
    Ok(spatial_frequencies(a.theta, a.phi))
}

/// `ω = −2π (ℓ/c + τ₀) f_sc`, not reduced modulo 2π.
pub fn delay_phase(path_length: f64, tau0: f64, f_sc: f64) -> f64 {
    -2.0 * PI * (path_length / SPEED_OF_LIGHT + tau0) * f_sc
}

/// Free-space gain magnitude `√(c / (4π f_c d))`.
pub fn path_gain(d: f64, f_c: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Domain(format!("path length must be positive, got {d}")));
    }
    if !(f_c.is_finite() && f_c > 0.0) {
        return Err(Error::Domain(format!("carrier frequency must be positive, got {f_c}")));
    }
    Ok((SPEED_OF_LIGHT / (f_c * 4.0 * PI * d)).sqrt())
}

/// Noise-free η for an MS pose in a scenario.
pub fn channel_params(ms: &Pose, sc: &Scenario) -> Result<ChannelParams> {
    let bs = &sc.bs_pose;
    let d_bm = (ms.position - bs.position).norm();
    let direct = PathParams {
        psi: arrival_spatial_frequencies(ms, &bs.position)?,
        varsigma: departure_spatial_frequencies(bs, &ms.position)?,
        omega: delay_phase(d_bm, sc.tau0, sc.f_sc),
        gain: path_gain(d_bm, sc.f_c)?,
    };
    let reflected = if sc.ris_enabled {
        let ris = &sc.ris_pose;
        let d_rm = (ms.position - ris.position).norm();
        Some(PathParams {
            psi: arrival_spatial_frequencies(ms, &ris.position)?,
            varsigma: departure_spatial_frequencies(ris, &ms.position)?,
            omega: delay_phase(sc.d_br() + d_rm, sc.tau0, sc.f_sc),
            gain: sc.bs_ris_gain()? * path_gain(d_rm, sc.f_c)?,
        })
    } else {
        None
    };
    Ok(ChannelParams { direct, reflected })
}

fn add_gaussian<R: Rng + ?Sized>(values: &mut [f64], sd: f64, rng: &mut R) {
    for v in values {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
}

/// Channel-estimation error model: `η̂ = η + w`, `w ~ N(0, σ² I)`.
pub fn perturb_params<R: Rng + ?Sized>(eta: &ChannelParams, sigma2: f64, rng: &mut R) -> Result<ChannelParams> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::Domain(format!("error variance must be non-negative, got {sigma2}")));
    }
    let mut v = eta.to_vec();
    add_gaussian(&mut v, sigma2.sqrt(), rng);
    ChannelParams::from_slice(&v)
}

/// `n` i.i.d. replicas of η̂ fed to the sampler, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub samples: DMatrix<f64>,
    pub sigma_sp2: f64,
    /// Estimation-error variance that produced η̂, when known.
    pub ce_sigma2: Option<f64>,
}

impl ObservationSet {
    pub fn new(samples: DMatrix<f64>, sigma_sp2: f64, ce_sigma2: Option<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Domain("observation set is empty".into()));
        }
        if samples.ncols() != 6 && samples.ncols() != 12 {
            return Err(Error::Domain(format!("observation width {} is neither 6 nor 12", samples.ncols())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observation set contains non-finite values".into()));
        }
        Ok(Self { samples, sigma_sp2, ce_sigma2 })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn ris_enabled(&self) -> bool {
        self.dim() == 12
    }

    /// Writes one row per observation with an η-name header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(eta_names(self.ris_enabled())).map_err(|e| Error::csv(path, e))?;
        for row in self.samples.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, sigma_sp2: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut values = Vec::new();
        let mut rows = 0;
        let width = r.headers().map_err(|e| Error::csv(path, e))?.len();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            for field in rec.iter() {
                values.push(field.parse::<f64>().map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?);
            }
            rows += 1;
        }
        Self::new(DMatrix::from_row_slice(rows, width, &values), sigma_sp2, None)
    }
}

/// `n` rows drawn from `N(η̂, σ_sp² I)`.
pub fn draw_observations<R: Rng + ?Sized>(
    eta_hat: &ChannelParams,
    sigma_sp2: f64,
    n: usize,
    rng: &mut R,
) -> Result<ObservationSet> {
    if n == 0 {
        return Err(Error::Domain("at least one observation is required".into()));
    }
    if !(sigma_sp2.is_finite() && sigma_sp2 > 0.0) {
        return Err(Error::Domain(format!("spread variance must be positive, got {sigma_sp2}")));
    }
    let mean = eta_hat.to_vec();
    let dim = mean.len();
    let sd = sigma_sp2.sqrt();
    let mut samples = DMatrix::zeros(n, dim);
    for i in 0..n {
        let mut row = mean.clone();
        add_gaussian(&mut row, sd, rng);
        for (j, v) in row.into_iter().enumerate() {
            samples[(i, j)] = v;
        }
    }
    ObservationSet::new(samples, sigma_sp2, None)
}

/// Largest per-axis size accepted by [`build_channel_tensor`].
pub const MAX_TENSOR_AXIS: usize = 8;

/// Array and OFDM sizes for tensor materialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorDims {
    pub subcarriers: usize,
    pub symbols: usize,
    pub ms_array: [usize; 2],
    pub bs_array: [usize; 2],
    pub ris_array: [usize; 2],
}

impl TensorDims {
    pub fn uniform(n: usize) -> Self {
        Self { subcarriers: n, symbols: n, ms_array: [n, n], bs_array: [n, n], ris_array: [n, n] }
    }

    fn axes(&self) -> [usize; 8] {
        [
            self.subcarriers,
            self.symbols,
            self.ms_array[0],
            self.ms_array[1],
            self.bs_array[0],
            self.bs_array[1],
            self.ris_array[0],
            self.ris_array[1],
        ]
    }
}

/// Dense complex tensor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex<f64>>,
}

impl ComplexTensor {
    fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![Complex::new(0.0, 0.0); len] }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for axis of size {n}");
            acc * n + i
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn get(&self, idx: &[usize]) -> Complex<f64> {
        self.data[self.offset(idx)]
    }

    fn set(&mut self, idx: &[usize], v: Complex<f64>) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex<f64>> {
        self.data.iter()
    }
}

/// RIS phase profile `Ω[k₁, k₂, t]`, unit-magnitude entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfile {
    dims: [usize; 3],
    phases: Vec<f64>,
}

impl RisProfile {
    pub fn all_ones(ris_array: [usize; 2], symbols: usize) -> Self {
        Self { dims: [ris_array[0], ris_array[1], symbols], phases: vec![0.0; ris_array[0] * ris_array[1] * symbols] }
    }

    /// Builds a profile from phases `ω_RIS[k₁, k₂, t]` in row-major order.
    pub fn from_phases(ris_array: [usize; 2], symbols: usize, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != ris_array[0] * ris_array[1] * symbols || phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("RIS profile does not match the requested dimensions".into()));
        }
        Ok(Self { dims: [ris_array[0], ris_array[1], symbols], phases })
    }

    fn coefficient(&self, k1: usize, k2: usize, t: usize) -> Complex<f64> {
        let i = (k1 * self.dims[1] + k2) * self.dims[2] + t;
        Complex::from_polar(1.0, self.phases[i])
    }
}

/// Direct tensor `[n, u₁, u₂, v₁, v₂]` and cascaded tensor `[n, t, u₁, u₂, v₁, v₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensors {
    pub direct: ComplexTensor,
    pub reflected: Option<ComplexTensor>,
}

fn phasor(phase: f64) -> Complex<f64> {
    Complex::from_polar(1.0, phase)
}

/// Materializes the line-of-sight and RIS-cascaded channel tensors for validation.
pub fn build_channel_tensor(
    ms: &Pose,
    sc: &Scenario,
    dims: &TensorDims,
    ris_profile: Option<&RisProfile>,
) -> Result<ChannelTensors> {
    if let Some(&bad) = dims.axes().iter().find(|&&n| n == 0 || n > MAX_TENSOR_AXIS) {
        return Err(Error::Domain(format!(
            "tensor axis size {bad} outside 1..={MAX_TENSOR_AXIS}; tensors are for validation only"
        )));
    }
    let eta = channel_params(ms, sc)?;
    let [nm1, nm2] = dims.ms_array;
    let [nb1, nb2] = dims.bs_array;

    let d = &eta.direct;
    let mut direct = ComplexTensor::zeros(vec![dims.subcarriers, nm1, nm2, nb1, nb2]);
    for n in 0..dims.subcarriers {
        for u1 in 0..nm1 {
            for u2 in 0..nm2 {
                for v1 in 0..nb1 {
                    for v2 in 0..nb2 {
                        let phase = n as f64 * d.omega
                            + u1 as f64 * d.psi[0]
                            + u2 as f64 * d.psi[1]
                            + v1 as f64 * d.varsigma[0]
                            + v2 as f64 * d.varsigma[1];
                        direct.set(&[n, u1, u2, v1, v2], d.gain * phasor(phase));
                    }
                }
            }
        }
    }

    let reflected = match &eta.reflected {
        None => None,
        Some(r) => {
            let default_profile;
            let profile = match ris_profile {
                Some(p) => {
                    if p.dims != [dims.ris_array[0], dims.ris_array[1], dims.symbols] {
                        return Err(Error::Domain("RIS profile shape does not match tensor dims".into()));
                    }
                    p
                }
                None => {
                    default_profile = RisProfile::all_ones(dims.ris_array, dims.symbols);
                    &default_profile
                }
            };
            // Incidence at the RIS from the BS and departure from the BS toward the RIS.
            let psi_br = arrival_spatial_frequencies(&sc.ris_pose, &sc.bs_pose.position)?;
            let varsigma_br = departure_spatial_frequencies(&sc.bs_pose, &sc.ris_pose.position)?;
            let vartheta = [psi_br[0] + r.varsigma[0], psi_br[1] + r.varsigma[1]];

            let mut t_sum = Vec::with_capacity(dims.symbols);
            for t in 0..dims.symbols {
                let mut acc = Complex::new(0.0, 0.0);
                for k1 in 0..dims.ris_array[0] {
                    for k2 in 0..dims.ris_array[1] {
                        acc += profile.coefficient(k1, k2, t)
                            * phasor(k1 as f64 * vartheta[0] + k2 as f64 * vartheta[1]);
                    }
                }
                t_sum.push(acc);
            }

            let mut tensor = ComplexTensor::zeros(vec![dims.subcarriers, dims.symbols, nm1, nm2, nb1, nb2]);
            for n in 0..dims.subcarriers {
                for (t, ris_sum) in t_sum.iter().enumerate() {
                    for u1 in 0..nm1 {
                        for u2 in 0..nm2 {
                            for v1 in 0..nb1 {
                                for v2 in 0..nb2 {
                                    let phase = n as f64 * r.omega
                                        + u1 as f64 * r.psi[0]
                                        + u2 as f64 * r.psi[1]
                                        + v1 as f64 * varsigma_br[0]
                                        + v2 as f64 * varsigma_br[1];
                                    tensor.set(&[n, t, u1, u2, v1, v2], r.gain * ris_sum * phasor(phase));
                                }
                            }
                        }
                    }
                }
            }
            Some(tensor)
        }
    };

    Ok(ChannelTensors { direct, reflected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_matrix;
    use crate::SeededRng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Vec3::new(x, y, z), EulerAngles::zero())
    }

    #[test]
    fn arrival_examples() {
        let f = arrival_spatial_frequencies(&at(5.0, 5.0, 1.0), &Vec3::new(5.0, 5.0, 4.0)).unwrap();
        assert!(f[0].abs() < 1e-15 && (f[1] - PI).abs() < 1e-15);
        let f = arrival_spatial_frequencies(&at(0.0, 0.0, 0.0), &Vec3::x()).unwrap();
        assert!((f[0] - PI).abs() < 1e-15 && f[1].abs() < 1e-15);
        let ms = Pose::new(Vec3::zeros(), EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        let f = arrival_spatial_frequencies(&ms, &Vec3::x()).unwrap();
        assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
        assert!(arrival_spatial_frequencies(&at(1.0, 1.0, 1.0), &Vec3::new(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn departure_examples() {
        let bs = at(0.0, 0.0, 0.0);
        let f = departure_spatial_frequencies(&bs, &Vec3::x()).unwrap();
        assert!((f[0] - PI).abs() < 1e-15 && f[1].abs() < 1e-15);
        let f = departure_spatial_frequencies(&bs, &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(f[0].abs() < 1e-15 && (f[1] + PI).abs() < 1e-15);
    }

    #[test]
    fn delay_phase_examples() {
        let f_sc = 120e3;
        let lambda = SPEED_OF_LIGHT / f_sc;
        assert!((delay_phase(lambda, 0.0, f_sc) + 2.0 * PI).abs() < 1e-12);
        assert!(delay_phase(1e-15, 0.0, f_sc).abs() < 1e-17);
        assert!((delay_phase(lambda, 1.0 / f_sc, f_sc) + 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn path_gain_examples() {
        let f_c = 28e9;
        let unit = SPEED_OF_LIGHT / (4.0 * PI * f_c);
        assert!((path_gain(unit, f_c).unwrap() - 1.0).abs() < 1e-15);
        let b = path_gain(3.0, f_c).unwrap();
        assert!((path_gain(12.0, f_c).unwrap() - b / 2.0).abs() < 1e-15);
        let expected = (SPEED_OF_LIGHT / (28e9 * 4.0 * PI * 10.0)).sqrt();
        assert_eq!(path_gain(10.0, f_c).unwrap(), expected);
        assert!(path_gain(0.0, f_c).is_err());
        assert!(path_gain(-1.0, f_c).is_err());
    }

    #[test]
    fn ris_off_has_six_entries() {
        let sc = Scenario::default().with_ris(false);
        let eta = channel_params(&at(5.0, 5.0, 1.5), &sc).unwrap();
        assert_eq!(eta.to_vec().len(), 6);
        assert!(eta.reflected.is_none());
        assert!(eta.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_scenario_composes_sub_operations() {
        let sc = Scenario::default();
        let ms = at(5.0, 5.0, 1.5);
        let eta = channel_params(&ms, &sc).unwrap().to_vec();
        let bs = sc.bs_pose.position;
        let ris = sc.ris_pose.position;
        // Independent recomputation by explicit vector algebra.
        let to_bs = (bs - ms.position).normalize();
        let to_ris = (ris - ms.position).normalize();
        let from_bs = -to_bs;
        let from_ris = -to_ris;
        let d_bm = (bs - ms.position).norm();
        let d_rm = (ris - ms.position).norm();
        let d_br = (ris - bs).norm();
        let c = SPEED_OF_LIGHT;
        let expected = [
            PI * to_bs.x,
            PI * to_bs.z,
            PI * to_ris.x,
            PI * to_ris.z,
            PI * from_bs.x,
            PI * from_bs.z,
            PI * from_ris.x,
            PI * from_ris.z,
            -2.0 * PI * d_bm / c * 120e3,
            -2.0 * PI * (d_br + d_rm) / c * 120e3,
            (c / (28e9 * 4.0 * PI * d_bm)).sqrt(),
            (c / (28e9 * 4.0 * PI * d_br)).sqrt() * (c / (28e9 * 4.0 * PI * d_rm)).sqrt(),
        ];
        for (i, (a, b)) in eta.iter().zip(expected).enumerate() {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{}: {a} vs {b}", ETA_NAMES[i]);
        }
    }

    #[test]
    fn vector_round_trip() {
        let eta = channel_params(&at(3.0, 7.0, 2.0), &Scenario::default()).unwrap();
        assert_eq!(ChannelParams::from_slice(&eta.to_vec()).unwrap(), eta);
        let direct = eta.direct_only();
        assert_eq!(ChannelParams::from_slice(&direct.to_vec()).unwrap(), direct);
        assert!(ChannelParams::from_slice(&[0.0; 7]).is_err());
    }

    #[test]
    fn perturbation_zero_and_determinism() {
        let eta = channel_params(&at(3.0, 7.0, 2.0), &Scenario::default()).unwrap();
        let mut rng = SeededRng::seed_from_u64(1);
        assert_eq!(perturb_params(&eta, 0.0, &mut rng).unwrap(), eta);
        let a = perturb_params(&eta, 1e-2, &mut SeededRng::seed_from_u64(9)).unwrap();
        let b = perturb_params(&eta, 1e-2, &mut SeededRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, eta);
        assert!(perturb_params(&eta, -1.0, &mut rng).is_err());
    }

    #[test]
    fn perturbation_variance() {
        let eta = channel_params(&at(3.0, 7.0, 2.0), &Scenario::default()).unwrap();
        let base = eta.to_vec();
        let mut rng = SeededRng::seed_from_u64(2024);
        let n = 100_000;
        let mut sum = [0.0; 12];
        let mut sum_sq = [0.0; 12];
        for _ in 0..n {
            let v = perturb_params(&eta, 1e-2, &mut rng).unwrap().to_vec();
            for j in 0..12 {
                let e = v[j] - base[j];
                sum[j] += e;
                sum_sq[j] += e * e;
            }
        }
        for j in 0..12 {
            let mean = sum[j] / n as f64;
            let var = (sum_sq[j] - n as f64 * mean * mean) / (n as f64 - 1.0);
            assert!((var / 1e-2 - 1.0).abs() < 0.05, "{}: variance {var}", ETA_NAMES[j]);
        }
    }

    #[test]
    fn observation_examples() {
        let eta = channel_params(&at(3.0, 7.0, 2.0), &Scenario::default()).unwrap();
        let mut rng = SeededRng::seed_from_u64(3);
        let one = draw_observations(&eta, 1e-30, 1, &mut rng).unwrap();
        for (a, b) in one.samples.row(0).iter().zip(eta.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(draw_observations(&eta, 1e-3, 50, &mut rng).unwrap().len(), 50);
        assert!(draw_observations(&eta, 1e-3, 0, &mut rng).is_err());
        assert!(draw_observations(&eta, 0.0, 5, &mut rng).is_err());

        let n = 10_000;
        let sigma_sp2 = 1e-3;
        let obs = draw_observations(&eta, sigma_sp2, n, &mut rng).unwrap();
        let bound = 3.0 * sigma_sp2.sqrt() / (n as f64).sqrt();
        for (j, truth) in eta.to_vec().into_iter().enumerate() {
            let mean = obs.samples.column(j).mean();
            assert!((mean - truth).abs() < bound, "{}", ETA_NAMES[j]);
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let eta = channel_params(&at(3.0, 7.0, 2.0), &Scenario::default()).unwrap();
        let obs = draw_observations(&eta, 1e-3, 7, &mut SeededRng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        obs.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("psi_bm_1,psi_bm_2,psi_rm_1"));
        let back = ObservationSet::read_csv(&path, 1e-3).unwrap();
        assert_eq!(back.samples, obs.samples);
    }

    #[test]
    fn tensor_index_zero_is_gain() {
        let sc = Scenario::default();
        let ms = at(4.0, 6.0, 1.0);
        let eta = channel_params(&ms, &sc).unwrap();
        let t = build_channel_tensor(&ms, &sc, &TensorDims::uniform(2), None).unwrap();
        let h0 = t.direct.get(&[0, 0, 0, 0, 0]);
        assert_eq!(h0, Complex::new(eta.direct.gain, 0.0));
        let ratio = t.direct.get(&[0, 1, 0, 0, 0]) / h0;
        assert!((ratio.arg() - eta.direct.psi[0]).abs() < 1e-12);
    }

    #[test]
    fn tensor_refuses_oversized_dims() {
        let sc = Scenario::default();
        let mut dims = TensorDims::uniform(2);
        dims.ms_array = [9, 2];
        assert!(build_channel_tensor(&at(4.0, 6.0, 1.0), &sc, &dims, None).is_err());
        dims.ms_array = [0, 2];
        assert!(build_channel_tensor(&at(4.0, 6.0, 1.0), &sc, &dims, None).is_err());
    }

    #[test]
    fn tensor_profile_shape_checked() {
        let sc = Scenario::default();
        let dims = TensorDims::uniform(2);
        let profile = RisProfile::all_ones([3, 2], 2);
        assert!(build_channel_tensor(&at(4.0, 6.0, 1.0), &sc, &dims, Some(&profile)).is_err());
        let profile = RisProfile::from_phases([2, 2], 2, vec![0.3; 8]).unwrap();
        let t = build_channel_tensor(&at(4.0, 6.0, 1.0), &sc, &dims, Some(&profile)).unwrap();
        assert!(t.reflected.unwrap().iter().all(|z| z.norm().is_finite()));
    }

    fn interior_pose() -> impl Strategy<Value = Pose> {
        (1.0f64..14.0, 1.0f64..13.5, 0.2f64..3.5, 0.0f64..0.78, 0.0f64..0.78, 0.0f64..0.78)
            .prop_map(|(x, y, z, a, b, g)| Pose::new(Vec3::new(x, y, z), EulerAngles::new(a, b, g)))
    }

    proptest! {
        #[test]
        fn translation_invariance(ms in interior_pose(), dx in -3.0f64..3.0, dy in -3.0f64..3.0, dz in -3.0f64..3.0) {
            let sc = Scenario::default();
            let shift = Vec3::new(dx, dy, dz);
            let mut moved = sc.clone();
            moved.bs_pose.position += shift;
            moved.ris_pose.position += shift;
            let a = channel_params(&ms, &sc).unwrap().to_vec();
            let b = channel_params(&Pose::new(ms.position + shift, ms.rotation), &moved).unwrap().to_vec();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn spatial_frequencies_bounded(ms in interior_pose()) {
            let v = channel_params(&ms, &Scenario::default()).unwrap().to_vec();
            prop_assert!(v[..8].iter().all(|f| f.abs() <= PI));
            prop_assert!(v[10] > 0.0 && v[11] > 0.0);
        }

        #[test]
        fn ris_off_is_projection(ms in interior_pose()) {
            let sc = Scenario::default();
            let on = channel_params(&ms, &sc).unwrap().to_vec();
            let off = channel_params(&ms, &sc.with_ris(false)).unwrap().to_vec();
            let projected: Vec<f64> = DIRECT_INDICES.iter().map(|&i| on[i]).collect();
            prop_assert_eq!(off, projected);
        }

        #[test]
        fn departure_matches_swapped_arrival(ms in interior_pose(), a in 0.0f64..1.0, b in 0.0f64..1.0, g in 0.0f64..1.0) {
            // Departure from an anchor equals arrival at that anchor of the reversed ray
            // when the anchor carries the rotation and the MS plays the anchor's role.
            let anchor = Pose::new(Vec3::new(2.0, 1.0, 4.0), EulerAngles::new(a, b, g));
            let dep = departure_spatial_frequencies(&anchor, &ms.position).unwrap();
            let rot = rotation_matrix(&anchor.rotation).unwrap();
            let local = rot.to_local(&(ms.position - anchor.position).normalize());
            prop_assert!((dep[0] - PI * local.x).abs() < 1e-12);
            prop_assert!((dep[1] - PI * local.z).abs() < 1e-12);
            let arr = arrival_spatial_frequencies(&Pose::new(anchor.position, anchor.rotation), &ms.position).unwrap();
            prop_assert!((dep[0] - arr[0]).abs() < 1e-12 && (dep[1] - arr[1]).abs() < 1e-12);
        }

        #[test]
        fn tensor_magnitude_constant(ms in interior_pose()) {
            let sc = Scenario::default();
            let eta = channel_params(&ms, &sc).unwrap();
            let t = build_channel_tensor(&ms, &sc, &TensorDims::uniform(2), None).unwrap();
            for z in t.direct.iter() {
                prop_assert!((z.norm() - eta.direct.gain).abs() < 1e-14);
            }
        }
    }
}
