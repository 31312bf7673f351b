//! Analytic Jacobian of the channel parameters with respect to the MS pose,
//! Fisher information, Cramér–Rao bound, and the derived position (PEB) and
//! rotation (REB) error bounds.
//!
//! Columns of every Jacobian follow `ζ = [x, y, z, α, β, γ]`; rows follow the
//! canonical η ordering of [`crate::channel::ETA_NAMES`] (or the direct-only
//! subset). Angle derivatives go through the local zenith/azimuth chain rule
//! and therefore refuse geometries where a link sits on its local zenith axis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix6, RowVector3, SymmetricEigen};

use crate::channel::{channel_params, eta_dim, ChannelParams, Pose, Scenario, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::geometry::{rotation_matrix, rotation_matrix_partials, Mat3, Vec3};

/// `|sin θ'|` below this raises [`Error::Singularity`].
pub const ZENITH_GUARD: f64 = 1e-8;

/// Fisher matrices with condition number at or above this are pseudo-inverted.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Geometry of one anchor → MS link.
#[derive(Debug, Clone, Copy)]
pub struct LinkAux {
    /// `ρ_M − ρ_anchor`.
    pub chi: Vec3,
    pub d: f64,
    /// Unit direction MS → anchor in the MS frame.
    pub k_arrival: Vec3,
    /// Unit direction anchor → MS in the anchor frame.
    pub k_departure: Vec3,
    /// `∂(χ/d)/∂ρ_M = I/d − χχᵀ/d³`.
    pub a: Mat3,
}

/// Auxiliary terms for the direct (BM) and, when enabled, reflected (RM) links.
#[derive(Debug, Clone, Copy)]
pub struct AuxBundle {
    pub bm: LinkAux,
    pub rm: Option<LinkAux>,
}

fn link_aux(ms: &Pose, ms_rot: &Mat3, anchor: &Pose, name: &str) -> Result<LinkAux> {
    let chi = ms.position - anchor.position;
    let d = chi.norm();
    if !d.is_finite() || d == 0.0 {
        return Err(Error::DegenerateGeometry(format!("MS coincides with the {name} anchor")));
    }
    let anchor_rot = rotation_matrix(&anchor.rotation)?;
    let unit = chi / d;
    Ok(LinkAux {
        chi,
        d,
        k_arrival: ms_rot.tr_mul(&(-unit)),
        k_departure: anchor_rot.to_local(&unit),
        a: Mat3::identity() / d - chi * chi.transpose() / d.powi(3),
    })
}

/// Computes χ, d, the local unit directions and the projection matrices for every link.
pub fn aux_terms(ms: &Pose, sc: &Scenario) -> Result<AuxBundle> {
    let ms_rot = *rotation_matrix(&ms.rotation)?.matrix();
    let bm = link_aux(ms, &ms_rot, &sc.bs_pose, "BS")?;
    let rm = if sc.ris_enabled { Some(link_aux(ms, &ms_rot, &sc.ris_pose, "RIS")?) } else { None };
    Ok(AuxBundle { bm, rm })
}

/// `∂η/∂ζ`, one row per channel parameter and one column per pose coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
}

impl Jacobian {
    pub fn ris_enabled(&self) -> bool {
        self.matrix.nrows() == 12
    }
}

/// Row-vector gradients of the two spatial frequencies `(π sinθ' cosφ', π cosθ')`
/// given the gradients of the local unit vector components.
fn spatial_frequency_rows(k: &Vec3, dk: [RowVector3<f64>; 3], link: &'static str) -> Result<[RowVector3<f64>; 2]> {
    let cos_t = k.z.clamp(-1.0, 1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    if sin_t < ZENITH_GUARD {
        return Err(Error::Singularity { link, sin_theta: sin_t });
    }
    let phi = k.y.atan2(k.x);
    let (sin_p, cos_p) = phi.sin_cos();
    let rho2 = k.x * k.x + k.y * k.y;

    let d_theta = -dk[2] / sin_t;
    let d_phi = (dk[1] * k.x - dk[0] * k.y) / rho2;

    let dpsi1_dtheta = PI * cos_t * cos_p;
    let dpsi1_dphi = -PI * sin_t * sin_p;
    let dpsi2_dtheta = -PI * sin_t;
    Ok([d_theta * dpsi1_dtheta + d_phi * dpsi1_dphi, d_theta * dpsi2_dtheta])
}

fn rows_of(m: &Mat3) -> [RowVector3<f64>; 3] {
    [m.row(0).into_owned(), m.row(1).into_owned(), m.row(2).into_owned()]
}

/// Spatial-frequency rows (position block, rotation block) for arrival at the MS.
fn arrival_rows(
    aux: &LinkAux,
    ms_rot: &Mat3,
    partials: &[Mat3; 3],
    link: &'static str,
) -> Result<([RowVector3<f64>; 2], [RowVector3<f64>; 2])> {
    // K = R_Mᵀ(−χ/d): ∂K/∂ρ = −R_Mᵀ A, ∂K/∂r_i = (∂R/∂r_i)ᵀ(−χ/d).
    let dk_pos = -(ms_rot.transpose() * aux.a);
    let pos = spatial_frequency_rows(&aux.k_arrival, rows_of(&dk_pos), link)?;

    let minus_unit = -aux.chi / aux.d;
    let mut dk_rot = Mat3::zeros();
    for (i, dr) in partials.iter().enumerate() {
        dk_rot.set_column(i, &dr.tr_mul(&minus_unit));
    }
    let rot = spatial_frequency_rows(&aux.k_arrival, rows_of(&dk_rot), link)?;
    Ok((pos, rot))
}

fn departure_rows(aux: &LinkAux, anchor: &Pose, link: &'static str) -> Result<[RowVector3<f64>; 2]> {
    let anchor_rot = rotation_matrix(&anchor.rotation)?;
    let dk = anchor_rot.transpose() * aux.a;
    spatial_frequency_rows(&aux.k_departure, rows_of(&dk), link)
}

fn set_row(m: &mut DMatrix<f64>, row: usize, pos: &RowVector3<f64>, rot: Option<&RowVector3<f64>>) {
    for j in 0..3 {
        m[(row, j)] = pos[j];
        m[(row, 3 + j)] = rot.map_or(0.0, |r| r[j]);
    }
}

/// Analytic `∂η/∂ζ` by the local-angle chain rule.
pub fn jacobian_eta_wrt_zeta(ms: &Pose, sc: &Scenario) -> Result<Jacobian> {
    params_and_jacobian(ms, sc).map(|(_, j)| j)
}

/// Channel parameters together with their pose Jacobian, sharing the geometry work.
pub(crate) fn params_and_jacobian(ms: &Pose, sc: &Scenario) -> Result<(ChannelParams, Jacobian)> {
    let aux = aux_terms(ms, sc)?;
    let ms_rot = *rotation_matrix(&ms.rotation)?.matrix();
    let partials = rotation_matrix_partials(&ms.rotation)?;
    let omega_scale = -2.0 * PI * sc.f_sc / SPEED_OF_LIGHT;

    let bm = &aux.bm;
    let (psi_bm_pos, psi_bm_rot) = arrival_rows(bm, &ms_rot, &partials, "BS->MS arrival")?;
    let vs_bm = departure_rows(bm, &sc.bs_pose, "BS->MS departure")?;
    let unit_bm = (bm.chi / bm.d).transpose();
    let omega_bm = unit_bm * omega_scale;
    let params = channel_params(ms, sc)?;
    let gain_bm = unit_bm * (-params.direct.gain / (2.0 * bm.d));

    let mut m = DMatrix::zeros(eta_dim(sc.ris_enabled), 6);
    match (&aux.rm, &params.reflected) {
        (Some(rm), Some(refl)) => {
            let (psi_rm_pos, psi_rm_rot) = arrival_rows(rm, &ms_rot, &partials, "RIS->MS arrival")?;
            let vs_rm = departure_rows(rm, &sc.ris_pose, "RIS->MS departure")?;
            let unit_rm = (rm.chi / rm.d).transpose();
            set_row(&mut m, 0, &psi_bm_pos[0], Some(&psi_bm_rot[0]));
            set_row(&mut m, 1, &psi_bm_pos[1], Some(&psi_bm_rot[1]));
            set_row(&mut m, 2, &psi_rm_pos[0], Some(&psi_rm_rot[0]));
            set_row(&mut m, 3, &psi_rm_pos[1], Some(&psi_rm_rot[1]));
            set_row(&mut m, 4, &vs_bm[0], None);
            set_row(&mut m, 5, &vs_bm[1], None);
            set_row(&mut m, 6, &vs_rm[0], None);
            set_row(&mut m, 7, &vs_rm[1], None);
            set_row(&mut m, 8, &omega_bm, None);
            set_row(&mut m, 9, &(unit_rm * omega_scale), None);
            set_row(&mut m, 10, &gain_bm, None);
            set_row(&mut m, 11, &(unit_rm * (-refl.gain / (2.0 * rm.d))), None);
        }
        _ => {
            set_row(&mut m, 0, &psi_bm_pos[0], Some(&psi_bm_rot[0]));
            set_row(&mut m, 1, &psi_bm_pos[1], Some(&psi_bm_rot[1]));
            set_row(&mut m, 2, &vs_bm[0], None);
            set_row(&mut m, 3, &vs_bm[1], None);
            set_row(&mut m, 4, &omega_bm, None);
            set_row(&mut m, 5, &gain_bm, None);
        }
    }
    Ok((params, Jacobian { matrix: m }))
}

/// Central-difference `∂η/∂ζ` with step `h` on every pose coordinate.
pub fn finite_difference_jacobian(ms: &Pose, sc: &Scenario, h: f64) -> Result<Jacobian> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let base = ms.to_array();
    let mut m = DMatrix::zeros(eta_dim(sc.ris_enabled), 6);
    for j in 0..6 {
        let mut plus = base;
        let mut minus = base;
        plus[j] += h;
        minus[j] -= h;
        let fp = channel_params(&Pose::from_array(&plus), sc)?.to_vec();
        let fm = channel_params(&Pose::from_array(&minus), sc)?.to_vec();
        for (i, (a, b)) in fp.iter().zip(&fm).enumerate() {
            m[(i, j)] = (a - b) / (2.0 * h);
        }
    }
    Ok(Jacobian { matrix: m })
}

/// `(1/σ²) Jᵀ J`.
pub fn fisher_information(jac: &Jacobian, sigma2: f64) -> Result<Matrix6<f64>> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("error variance must be positive, got {sigma2}")));
    }
    let jtj = jac.matrix.tr_mul(&jac.matrix);
    Ok(Matrix6::from_fn(|i, j| jtj[(i, j)] / sigma2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub fim: Matrix6<f64>,
    /// Inverse of the FIM, or its Moore–Penrose pseudo-inverse when ill-conditioned.
    pub crlb: Matrix6<f64>,
    /// Position error bound, m; infinite when the position is not identifiable.
    pub peb: f64,
    /// Rotation error bound, rad; infinite when the rotation is not identifiable.
    pub reb: f64,
    pub fim_rank: usize,
    pub pseudo_inverse_used: bool,
    pub position_identifiable: bool,
    pub rotation_identifiable: bool,
}

impl BoundReport {
    /// `√tr` of the position block of [`Self::crlb`], finite even when unidentifiable.
    pub fn peb_pinv(&self) -> f64 {
        block_trace(&self.crlb, 0).max(0.0).sqrt()
    }

    pub fn reb_pinv(&self) -> f64 {
        block_trace(&self.crlb, 3).max(0.0).sqrt()
    }
}

fn block_trace(m: &Matrix6<f64>, start: usize) -> f64 {
    (start..start + 3).map(|i| m[(i, i)]).sum()
}

/// Relative eigenvalue floor under which a Fisher direction counts as null.
const NULL_TOLERANCE: f64 = 1.0 / CONDITION_LIMIT;

/// CRLB, PEB and REB from a Fisher information matrix.
///
/// Rank-deficient matrices are pseudo-inverted. A null direction of the FIM
/// that touches the position (rotation) coordinates makes that block
/// non-identifiable, and its bound is reported as `+∞`; the pseudo-inverse
/// values stay available through [`BoundReport::peb_pinv`] and
/// [`BoundReport::reb_pinv`].
pub fn bounds(fim: &Matrix6<f64>) -> Result<BoundReport> {
    let scale = fim.amax();
    if !scale.is_finite() {
        return Err(Error::Domain("Fisher information is not finite".into()));
    }
    if (fim - fim.transpose()).amax() > 1e-9 * scale {
        return Err(Error::Domain("Fisher information is not symmetric".into()));
    }
    let sym = (fim + fim.transpose()) * 0.5;

    // Jacobi equilibration keeps mixed-unit blocks from dominating the conditioning.
    let diag: Vec<f64> = (0..6).map(|i| sym[(i, i)]).collect();
    let equil: Vec<f64> = diag.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    let scaled = Matrix6::from_fn(|i, j| sym[(i, j)] * equil[i] * equil[j]);

    let eig = SymmetricEigen::new(scaled);
    let lmax = eig.eigenvalues.max();
    let floor = NULL_TOLERANCE * lmax.max(f64::MIN_POSITIVE);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > floor).count();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };

    let d = Matrix6::from_fn(|i, j| if i == j { equil[i] } else { 0.0 });
    let (scaled_inv, pinv) = if lmax > 0.0 && condition < CONDITION_LIMIT {
        let inv = scaled
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| scaled.try_inverse())
            .ok_or_else(|| Error::Domain("Fisher information could not be inverted".into()))?;
        (inv, false)
    } else {
        let mut acc = Matrix6::zeros();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l > floor {
                let v = eig.eigenvectors.column(k);
                acc += v * v.transpose() / l;
            }
        }
        (acc, true)
    };
    let crlb = d * scaled_inv * d;

    // Null directions in the original coordinates are D·v for scaled-null v.
    let mut position_identifiable = true;
    let mut rotation_identifiable = true;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > floor {
            continue;
        }
        let v = d * eig.eigenvectors.column(k);
        let v = v / v.norm();
        if v.rows(0, 3).norm() > 1e-6 {
            position_identifiable = false;
        }
        if v.rows(3, 3).norm() > 1e-6 {
            rotation_identifiable = false;
        }
    }
    if lmax <= 0.0 {
        position_identifiable = false;
        rotation_identifiable = false;
    }

    let peb = if position_identifiable { block_trace(&crlb, 0).max(0.0).sqrt() } else { f64::INFINITY };
    let reb = if rotation_identifiable { block_trace(&crlb, 3).max(0.0).sqrt() } else { f64::INFINITY };
    Ok(BoundReport {
        fim: sym,
        crlb,
        peb,
        reb,
        fim_rank: rank,
        pseudo_inverse_used: pinv,
        position_identifiable,
        rotation_identifiable,
    })
}

/// Bounds for one pose and error variance, from the analytic Jacobian.
pub fn pose_bounds(ms: &Pose, sc: &Scenario, sigma2: f64) -> Result<BoundReport> {
    let jac = jacobian_eta_wrt_zeta(ms, sc)?;
    let fim = fisher_information(&jac, sigma2)?;
    // Invert the unit-noise FIM and rescale, so the bounds scale with σ² exactly
    // rather than through a second, differently rounded inversion.
    let unit = bounds(&fisher_information(&jac, 1.0)?)?;
    let s = sigma2.sqrt();
    Ok(BoundReport { fim, crlb: unit.crlb * sigma2, peb: unit.peb * s, reb: unit.reb * s, ..unit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, z: f64, a: f64, b: f64, g: f64) -> Pose {
        Pose::new(Vec3::new(x, y, z), EulerAngles::new(a, b, g))
    }

    fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..a.nrows() {
            let scale = a.row(i).amax().max(b.row(i).amax()).max(1e-300);
            for j in 0..a.ncols() {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn aux_on_axis() {
        let mut sc = Scenario::default();
        sc.bs_pose = Pose::new(Vec3::new(1.0, 2.0, 3.0), EulerAngles::zero());
        let ms = pose(4.0, 2.0, 3.0, 0.0, 0.0, 0.0);
        let aux = aux_terms(&ms, &sc).unwrap();
        assert_eq!(aux.bm.chi, Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(aux.bm.k_departure, Vec3::x());
        assert_eq!(aux.bm.k_arrival, -Vec3::x());
    }

    #[test]
    fn aux_properties() {
        let sc = Scenario::default();
        let ms = pose(3.3, 8.1, 1.2, 0.3, 0.1, 0.6);
        let aux = aux_terms(&ms, &sc).unwrap();
        for link in [aux.bm, aux.rm.unwrap()] {
            assert!((link.a * link.chi).amax() < 1e-12);
            assert!((link.k_arrival.norm() - 1.0).abs() < 1e-12);
            assert!((link.k_departure.norm() - 1.0).abs() < 1e-12);
        }
        let at_bs = Pose::new(sc.bs_pose.position, EulerAngles::zero());
        assert!(matches!(aux_terms(&at_bs, &sc), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn structural_zeros() {
        let sc = Scenario::default();
        let jac = jacobian_eta_wrt_zeta(&pose(4.0, 6.0, 1.5, 0.2, 0.3, 0.1), &sc).unwrap();
        for row in 4..12 {
            for col in 3..6 {
                assert_eq!(jac.matrix[(row, col)], 0.0);
            }
        }
        let fd = finite_difference_jacobian(&pose(4.0, 6.0, 1.5, 0.2, 0.3, 0.1), &sc, 1e-6).unwrap();
        for row in 4..12 {
            for col in 3..6 {
                assert!(fd.matrix[(row, col)].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn delay_gradient_along_ray() {
        let mut sc = Scenario::default().with_ris(false);
        sc.bs_pose.position = Vec3::new(0.0, 5.0, 2.0);
        let jac = jacobian_eta_wrt_zeta(&pose(6.0, 5.0, 2.0, 0.1, 0.2, 0.3), &sc).unwrap();
        let expected = -2.0 * PI * sc.f_sc / SPEED_OF_LIGHT;
        assert!((jac.matrix[(4, 0)] - expected).abs() < 1e-18);
        assert_eq!(jac.matrix[(4, 1)], 0.0);
        assert_eq!(jac.matrix[(4, 2)], 0.0);
    }

    #[test]
    fn zenith_singularity_is_named() {
        let sc = Scenario::default().with_ris(false);
        // MS directly below the BS with identity rotations: both BM angles sit on the zenith axis.
        let err = jacobian_eta_wrt_zeta(&pose(0.0, 0.0, 1.0, 0.0, 0.0, 0.0), &sc).unwrap_err();
        assert!(matches!(err, Error::Singularity { link, .. } if link.contains("BS")));
    }

    #[test]
    fn richardson_convergence() {
        let sc = Scenario::default();
        let ms = pose(4.2, 6.9, 1.1, 0.4, 0.2, 0.5);
        let analytic = jacobian_eta_wrt_zeta(&ms, &sc).unwrap();
        let e1 = max_rel_err(&finite_difference_jacobian(&ms, &sc, 1e-3).unwrap().matrix, &analytic.matrix);
        let e2 = max_rel_err(&finite_difference_jacobian(&ms, &sc, 5e-4).unwrap().matrix, &analytic.matrix);
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn fisher_examples() {
        let mut j = DMatrix::zeros(12, 6);
        for i in 0..6 {
            j[(i, i)] = 1.0;
        }
        let jac = Jacobian { matrix: j };
        assert_eq!(fisher_information(&jac, 1.0).unwrap(), Matrix6::identity());
        let sc = Scenario::default();
        let jac = jacobian_eta_wrt_zeta(&pose(4.0, 6.0, 1.5, 0.2, 0.3, 0.1), &sc).unwrap();
        let f1 = fisher_information(&jac, 1.0).unwrap();
        let f4 = fisher_information(&jac, 0.25).unwrap();
        assert!((f4 - f1 * 4.0).amax() <= 1e-15 * f4.amax());
        assert!(fisher_information(&jac, 0.0).is_err());
    }

    #[test]
    fn bounds_from_known_crlb() {
        let fim = Matrix6::from_diagonal(&nalgebra::Vector6::new(1.0, 1.0, 1.0, 0.25, 0.25, 0.25));
        let r = bounds(&fim).unwrap();
        assert!((r.peb - 3f64.sqrt()).abs() < 1e-14);
        assert!((r.reb - 2.0 * 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(r.fim_rank, 6);
        assert!(!r.pseudo_inverse_used);
    }

    #[test]
    fn bounds_rejects_asymmetric() {
        let mut fim = Matrix6::identity();
        fim[(0, 1)] = 0.5;
        assert!(bounds(&fim).is_err());
    }

    #[test]
    fn rank_deficient_rotation_is_flagged() {
        let sc = Scenario::default().with_ris(false);
        let r = pose_bounds(&pose(5.0, 5.0, 1.5, 0.2, 0.3, 0.1), &sc, 1e-3).unwrap();
        assert_eq!(r.fim_rank, 5);
        assert!(r.pseudo_inverse_used);
        assert!(r.position_identifiable);
        assert!(!r.rotation_identifiable);
        assert!(r.peb.is_finite() && r.reb.is_infinite());
        assert!(r.reb_pinv().is_finite());
    }

    #[test]
    fn halving_variance_shrinks_peb() {
        let sc = Scenario::default();
        let ms = pose(5.0, 5.0, 1.5, 0.2, 0.3, 0.1);
        let a = pose_bounds(&ms, &sc, 1e-3).unwrap();
        let b = pose_bounds(&ms, &sc, 5e-4).unwrap();
        assert!((a.peb / b.peb - 2f64.sqrt()).abs() < 1e-12);
    }

    fn interior_pose() -> impl Strategy<Value = Pose> {
        (0.5f64..14.5, 0.5f64..14.0, 0.2f64..4.5, 0.0f64..0.78, 0.0f64..0.78, 0.0f64..0.78)
            .prop_map(|(x, y, z, a, b, g)| pose(x, y, z, a, b, g))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn analytic_matches_finite_differences(ms in interior_pose(), ris in any::<bool>()) {
            let sc = Scenario::default().with_ris(ris);
            let analytic = jacobian_eta_wrt_zeta(&ms, &sc).unwrap();
            let fd = finite_difference_jacobian(&ms, &sc, 1e-6).unwrap();
            prop_assert!(max_rel_err(&fd.matrix, &analytic.matrix) <= 1e-5);
        }

        #[test]
        fn fim_is_psd(ms in interior_pose()) {
            let fim = pose_bounds(&ms, &Scenario::default(), 1e-3).unwrap().fim;
            let eig = SymmetricEigen::new(fim);
            prop_assert!(eig.eigenvalues.min() >= -1e-10 * fim.norm());
        }

        #[test]
        fn removing_ris_never_helps_position(ms in interior_pose()) {
            let sc = Scenario::default();
            let on = pose_bounds(&ms, &sc, 1e-3).unwrap();
            let off = pose_bounds(&ms, &sc.with_ris(false), 1e-3).unwrap();
            prop_assert!(off.peb >= on.peb);
            prop_assert!(off.reb >= on.reb);
            prop_assert!(off.fim_rank <= 6);
        }
    }
}
