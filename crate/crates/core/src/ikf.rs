//! Uncertainty-aware iterated Kalman update.
//!
//! Each iteration rematches scan points against the map at the current
//! iterate, builds point-to-plane observations weighted by the per-point
//! covariance, and applies the gain in information form:
//!
//! ```text
//! K  = (Hᵀ R⁻¹ H + P⁻¹)⁻¹ Hᵀ R⁻¹         with P = J⁻¹ P̂ J⁻ᵀ
//! x ⟵ x ⊞ (−K z − (I − K H) J⁻¹ (x ⊟ x̂))
//! ```
//!
//! `J` is the ⊞-Jacobian of the prior term at the current iterate (identity
//! except the attitude block). On convergence the posterior covariance is
//! `(I − K H) P`, symmetrized.

use crate::error::{Error, Result};
use crate::manifold::{right_jacobian, skew, Mat3, RigidTransform, Vec3};
use crate::mapping::{fit_plane, reselect_mahalanobis, PlaneMatch, PointMap};
use crate::scan::{UndistortedPoint, UndistortedScan};
use crate::state::{block3, CovMatrix, ErrorState, NavState, BLK_POS, BLK_THETA};
use nalgebra::{Cholesky, RowSVector};
use serde::{Deserialize, Serialize};

/// Minimum number of valid plane matches for an update to proceed.
pub const MIN_VALID_OBS: usize = 10;

/// Range-scaled residual gate: a match is kept only while the point sits
/// within `sqrt(range)/9` meters of its plane. Rejects cross-surface
/// associations that slip through the plane-validity check on sparse maps.
#[inline]
pub fn residual_gate(range: f64) -> f64 {
    range.max(0.0).sqrt() / 9.0
}

/// Iterated-filter configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct IkfConfig {
    /// Maximum Gauss-Newton iterations per scan.
    pub max_iterations: usize,
    /// Convergence threshold on the attitude increment (rad).
    pub eps_rot: f64,
    /// Convergence threshold on the position increment (m).
    pub eps_pos: f64,
    /// Neighbors K used for plane fitting.
    pub k_neighbors: usize,
    /// Euclidean candidates K_c for the two-stage search.
    pub k_candidates: usize,
    /// Point-plane distance bound for a fit to count as a plane (m).
    pub plane_threshold: f64,
    /// Use Mahalanobis reselection (the guided-matching switch).
    pub guided_matching: bool,
}

impl Default for IkfConfig {
    fn default() -> Self {
        IkfConfig {
            max_iterations: 4,
            eps_rot: 1e-3,
            eps_pos: 1e-3,
            k_neighbors: 5,
            k_candidates: 10,
            plane_threshold: 0.1,
            guided_matching: true,
        }
    }
}

impl IkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if self.k_neighbors < 3 {
            return Err(Error::Config("k_neighbors must be >= 3".into()));
        }
        if self.k_candidates < self.k_neighbors {
            return Err(Error::Config("k_candidates must be >= k_neighbors".into()));
        }
        if !(self.eps_rot > 0.0 && self.eps_pos > 0.0 && self.plane_threshold > 0.0) {
            return Err(Error::Config(
                "eps_rot, eps_pos, plane_threshold must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One weighted point-to-plane observation.
#[derive(Clone, Debug)]
pub struct Observation {
    /// The point in the global frame.
    pub point_world: Vec3,
    /// Its covariance in the global frame.
    pub cov_world: Mat3,
    /// The fitted plane it is matched to.
    pub plane: PlaneMatch,
    /// Signed point-to-plane distance `z = uᵀ(p − q)` (m).
    pub residual: f64,
    /// Residual variance `R = uᵀ Σ u` plus the floor (m²).
    pub weight: f64,
    /// Measurement Jacobian row w.r.t. the 15-dim error state.
    pub jacobian_row: RowSVector<f64, 15>,
}

/// Per-scan update diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct IkfStats {
    pub iterations: usize,
    pub rematches: usize,
    pub valid_matches: usize,
    pub mean_weight: f64,
}

/// Maps a point and its covariance into the global frame at the given state:
/// position through the full pose chain, covariance by rotation conjugation
/// (`ᴳR = ᴳR̂_I ᴵR_L`).
pub fn transform_point_and_cov(
    p: &UndistortedPoint,
    state: &NavState,
    extrinsics: &RigidTransform,
) -> (Vec3, Mat3) {
    let p_imu = extrinsics.apply(&p.pos);
    let pos = state.rot * p_imu + state.pos;
    let g_rot = (state.rot * extrinsics.rot).matrix().to_owned();
    let cov = g_rot * p.cov * g_rot.transpose();
    (pos, cov)
}

/// Builds the weighted observation of one matched point at the current
/// iterate. Fails on an invalid plane match.
pub fn build_observation(
    p_world: &Vec3,
    cov_world: &Mat3,
    plane: &PlaneMatch,
    state: &NavState,
) -> Result<Observation> {
    if !plane.valid {
        return Err(Error::InvalidMatch);
    }
    let u = plane.normal;
    let residual = u.dot(&(p_world - plane.centroid));
    let weight = (u.transpose() * cov_world * u)[(0, 0)] + crate::uncertainty::COV_FLOOR;

    // d z / d δθ = -uᵀ R̂ ⌊ᴵR_L p_L + ᴵt_L⌋ₓ ; d z / d δp = uᵀ
    let p_imu = state.rot.inverse() * (p_world - state.pos);
    let h_theta = -(u.transpose() * state.rot.matrix() * skew(&p_imu)).transpose();
    let mut row = RowSVector::<f64, 15>::zeros();
    for i in 0..3 {
        row[BLK_THETA + i] = h_theta[i];
        row[BLK_POS + i] = u[i];
    }
    Ok(Observation {
        point_world: *p_world,
        cov_world: *cov_world,
        plane: plane.clone(),
        residual,
        weight,
        jacobian_row: row,
    })
}

/// Solves one information-form update for a fixed observation set.
/// Returns `(δx, posterior covariance)` where the posterior corresponds to
/// `(I − K H) P` at this iterate.
pub fn solve_update(
    x: &NavState,
    x_hat: &NavState,
    observations: &[Observation],
) -> Result<(ErrorState, CovMatrix)> {
    let b = x.boxminus(x_hat);
    let phi = block3(&b, BLK_THETA);

    // J differs from identity only in the attitude block
    let mut j_inv = CovMatrix::identity();
    j_inv
        .fixed_view_mut::<3, 3>(BLK_THETA, BLK_THETA)
        .copy_from(&right_jacobian(&phi));
    let p_mapped = j_inv * x_hat.cov * j_inv.transpose();

    let p_inv = Cholesky::new(p_mapped)
        .ok_or(Error::SingularCovariance)?
        .inverse();

    let mut info = p_inv; // Hᵀ R⁻¹ H + P⁻¹
    let mut h_t_r_h = CovMatrix::zeros();
    let mut g = ErrorState::zeros(); // Hᵀ R⁻¹ z
    for obs in observations {
        let h = obs.jacobian_row;
        let w = 1.0 / obs.weight;
        let ht = h.transpose();
        let outer = ht * h * w;
        h_t_r_h += outer;
        g += ht * (obs.residual * w);
    }
    info += h_t_r_h;

    let info_chol = Cholesky::new(info).ok_or(Error::SingularCovariance)?;
    let info_inv = info_chol.inverse();

    let kh = info_inv * h_t_r_h;
    let i_minus_kh = CovMatrix::identity() - kh;
    let j_inv_b = j_inv * b;

    let delta = -(info_inv * g) - i_minus_kh * j_inv_b;
    let mut posterior = i_minus_kh * p_mapped;
    posterior = (posterior + posterior.transpose()) * 0.5;
    Ok((delta, posterior))
}

/// Matches every point of the scan against the map at the given state.
/// Returns one optional plane per point (None: no valid plane).
///
/// The innovation gate is applied only when `apply_gate` is set: the first
/// iteration of a scan matches ungated so that a large but legitimate prior
/// excursion can be corrected, and re-linearized iterations then reject
/// what still disagrees.
fn match_scan(
    scan: &UndistortedScan,
    map: &PointMap,
    state: &NavState,
    extrinsics: &RigidTransform,
    cfg: &IkfConfig,
    apply_gate: bool,
) -> Result<Vec<Option<PlaneMatch>>> {
    let sensor_origin = state.rot * extrinsics.trans + state.pos;
    let mut out = Vec::with_capacity(scan.points.len());
    for p in &scan.points {
        let (p_world, cov_world) = transform_point_and_cov(p, state, extrinsics);
        let candidates = map.knn_euclidean(&p_world, cfg.k_candidates)?;
        if candidates.len() < cfg.k_neighbors {
            out.push(None);
            continue;
        }
        let neighbors = if cfg.guided_matching {
            reselect_mahalanobis(&candidates, &p_world, &cov_world, cfg.k_neighbors)?
        } else {
            candidates[..cfg.k_neighbors].to_vec()
        };
        match fit_plane(&neighbors, &sensor_origin, cfg.plane_threshold) {
            Ok(pm) if pm.valid => {
                if !apply_gate {
                    out.push(Some(pm));
                    continue;
                }
                // innovation gate at 3σ of S = h P hᵀ + R_j, capped by the
                // range gate. High-uncertainty points keep a loose gate;
                // confident points reject cross-surface associations.
                let obs = build_observation(&p_world, &cov_world, &pm, state)?;
                let h = obs.jacobian_row;
                let s_var = (h * state.cov * h.transpose())[(0, 0)] + obs.weight;
                let in_chi = obs.residual * obs.residual <= 9.0 * s_var;
                if in_chi && obs.residual.abs() <= residual_gate(p.pos.norm()) {
                    out.push(Some(pm));
                } else {
                    out.push(None);
                }
            }
            Ok(_) | Err(Error::DegenerateNeighbors) => out.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs the iterated update for one scan. The scan must carry per-point
/// covariances and the state must be freshly propagated to the scan start.
///
/// On `NoValidMatches` the caller keeps the prior.
pub fn ikf_update(
    state: &NavState,
    scan: &UndistortedScan,
    map: &PointMap,
    extrinsics: &RigidTransform,
    cfg: &IkfConfig,
) -> Result<(NavState, IkfStats)> {
    let x_hat = state.clone();
    let mut x = state.clone();
    let mut stats = IkfStats::default();
    let mut matches: Vec<Option<PlaneMatch>> = Vec::new();
    let mut rematch = true;
    let mut last_posterior = x_hat.cov;

    for iter in 0..cfg.max_iterations {
        stats.iterations = iter + 1;
        if rematch {
            matches = match_scan(scan, map, &x, extrinsics, cfg, iter > 0)?;
            stats.rematches += 1;
        }

        let mut observations = Vec::with_capacity(scan.points.len());
        for (p, m) in scan.points.iter().zip(&matches) {
            if let Some(plane) = m {
                let (p_world, cov_world) = transform_point_and_cov(p, &x, extrinsics);
                observations.push(build_observation(&p_world, &cov_world, plane, &x)?);
            }
        }
        if observations.len() < MIN_VALID_OBS {
            return Err(Error::NoValidMatches {
                got: observations.len(),
                need: MIN_VALID_OBS,
            });
        }
        stats.valid_matches = observations.len();
        stats.mean_weight =
            observations.iter().map(|o| o.weight).sum::<f64>() / observations.len() as f64;

        let (delta, posterior) = solve_update(&x, &x_hat, &observations)?;
        x = x.boxplus(&delta);
        last_posterior = posterior;

        let d_rot = block3(&delta, BLK_THETA).norm();
        let d_pos = block3(&delta, BLK_POS).norm();
        if d_rot < cfg.eps_rot && d_pos < cfg.eps_pos {
            break;
        }
        // cost guard: keep the match set once the iterate has almost settled
        rematch = !(d_rot < 10.0 * cfg.eps_rot && d_pos < 10.0 * cfg.eps_pos);
    }

    x.cov = last_posterior;
    x.symmetrize_cov();
    x.rot.renormalize();
    Ok((x, stats))
}
