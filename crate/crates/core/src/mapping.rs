//! Incremental global point map with two-stage uncertainty-guided matching
//! and PCA plane fitting.
//!
//! Matching is two-stage: a Euclidean KNN pre-selection of `K_c` candidates
//! followed by a Mahalanobis reselection of the best `K` under the query
//! point's covariance. The map itself is a voxel-deduplicated point set over
//! an exact incremental KNN index.

use crate::error::{Error, Result};
use crate::kdtree::{BestK, KdTree};
use crate::manifold::{Mat3, RigidTransform, Vec3};
use crate::scan::UndistortedScan;
use crate::uncertainty::COV_FLOOR;
use nalgebra::Cholesky;
use std::collections::HashSet;
use std::io::Write;

/// Rebuild the kd-tree once this many points sit in the unindexed tail.
const REBUILD_TAIL: usize = 512;

/// Incremental global point map (frame G).
pub struct PointMap {
    resolution: f64,
    points: Vec<Vec3>,
    occupied: HashSet<(i64, i64, i64)>,
    tree: KdTree,
    indexed_len: usize,
}

impl PointMap {
    /// `resolution` is the voxel side used for deduplication (m).
    pub fn new(resolution: f64) -> Self {
        PointMap {
            resolution,
            points: Vec::new(),
            occupied: HashSet::new(),
            tree: KdTree::empty(),
            indexed_len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn voxel_of(&self, p: &Vec3) -> (i64, i64, i64) {
        (
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
            (p.z / self.resolution).floor() as i64,
        )
    }

    /// Inserts one world-frame point unless its voxel is already occupied.
    /// Returns whether the point was stored.
    pub fn insert(&mut self, p: Vec3) -> bool {
        let v = self.voxel_of(&p);
        if !self.occupied.insert(v) {
            return false;
        }
        self.points.push(p);
        if self.points.len() - self.indexed_len > REBUILD_TAIL {
            self.rebuild();
        }
        true
    }

    fn rebuild(&mut self) {
        self.tree = KdTree::build(&self.points);
        self.indexed_len = self.points.len();
    }

    /// The `k_c` map points nearest to `query` in Euclidean distance, ties
    /// broken by insertion order. Returns fewer when the map is smaller.
    pub fn knn_euclidean(&self, query: &Vec3, k_c: usize) -> Result<Vec<Vec3>> {
        if self.points.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut best = BestK::new(k_c);
        self.tree.knn_into(&self.points, query, &mut best);
        for (i, p) in self.points[self.indexed_len..].iter().enumerate() {
            best.offer((
                (p - query).norm_squared(),
                (self.indexed_len + i) as u32,
            ));
        }
        Ok(best
            .into_sorted()
            .into_iter()
            .map(|(_, i)| self.points[i as usize])
            .collect())
    }

    /// Transforms the scan into G, voxel-deduplicates at the map resolution
    /// and inserts. Deterministic given input order. Returns the number of
    /// points stored.
    pub fn insert_scan(&mut self, scan: &UndistortedScan, pose: &RigidTransform) -> usize {
        let mut added = 0;
        for p in &scan.points {
            if self.insert(pose.apply(&p.pos)) {
                added += 1;
            }
        }
        added
    }

    /// ASCII export, one `x y z` line per point.
    pub fn write_ascii(&self, mut w: impl Write) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

/// The `k` candidates with the smallest Mahalanobis distance
/// `(p − s)ᵀ Σ⁻¹ (p − s)` to the query; stable under ties. The covariance is
/// floored before inversion.
pub fn reselect_mahalanobis(
    candidates: &[Vec3],
    query: &Vec3,
    cov: &Mat3,
    k: usize,
) -> Result<Vec<Vec3>> {
    let floored = cov + Mat3::identity() * COV_FLOOR;
    let chol = Cholesky::new(floored).ok_or(Error::SingularCovariance)?;
    let inv = chol.inverse();
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = query - s;
            ((d.transpose() * inv * d)[(0, 0)], i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(_, i)| candidates[i])
        .collect())
}

/// A fitted local plane and its diagnostics.
#[derive(Clone, Debug)]
pub struct PlaneMatch {
    /// Unit normal, sign fixed toward the sensor.
    pub normal: Vec3,
    /// Mean of the neighbor set (m).
    pub centroid: Vec3,
    /// The neighbor positions the plane was fitted to.
    pub neighbors: Vec<Vec3>,
    /// All neighbors within the point-plane distance threshold.
    pub valid: bool,
    /// λ_min / λ_mid of the scatter matrix; 0 for a perfect plane.
    pub planarity: f64,
}

/// PCA plane fit over `neighbors`. The normal is the smallest-eigenvalue
/// direction of the scatter matrix, oriented so `normal·(sensor − centroid)
/// ≥ 0`; the fit is `valid` only when every neighbor lies within
/// `plane_threshold` of the plane.
pub fn fit_plane(
    neighbors: &[Vec3],
    sensor_origin: &Vec3,
    plane_threshold: f64,
) -> Result<PlaneMatch> {
    if neighbors.len() < 3 {
        return Err(Error::DegenerateNeighbors);
    }
    let n = neighbors.len() as f64;
    let centroid = neighbors.iter().sum::<Vec3>() / n;
    let mut scatter = Mat3::zeros();
    for p in neighbors {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    // sort eigenpairs ascending
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let l_min = eig.eigenvalues[order[0]].max(0.0);
    let l_mid = eig.eigenvalues[order[1]].max(0.0);
    let l_max = eig.eigenvalues[order[2]].max(0.0);
    if l_mid <= 1e-12 * l_max.max(1e-12) {
        return Err(Error::DegenerateNeighbors);
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into();
    normal.normalize_mut();
    if normal.dot(&(sensor_origin - centroid)) < 0.0 {
        normal = -normal;
    }
    let valid = neighbors
        .iter()
        .all(|p| normal.dot(&(p - centroid)).abs() <= plane_threshold);
    Ok(PlaneMatch {
        normal,
        centroid,
        neighbors: neighbors.to_vec(),
        valid,
        planarity: l_min / l_mid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{UndistortedPoint, UndistortedScan};
    use crate::manifold::Rot3;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn knn_single_point_map() {
        let mut map = PointMap::new(0.5);
        map.insert(Vec3::new(1.0, 2.0, 3.0));
        let got = map.knn_euclidean(&Vec3::zeros(), 5).unwrap();
        assert_eq!(got, vec![Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn knn_empty_map_errors() {
        let map = PointMap::new(0.5);
        assert!(matches!(
            map.knn_euclidean(&Vec3::zeros(), 1),
            Err(Error::EmptyMap)
        ));
    }

    #[test]
    fn knn_tie_preserves_insertion_order() {
        let mut map = PointMap::new(0.5);
        map.insert(Vec3::new(1.0, 0.0, 0.0));
        map.insert(Vec3::new(-1.0, 0.0, 0.0));
        let got = map.knn_euclidean(&Vec3::zeros(), 2).unwrap();
        assert_eq!(got[0], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(got[1], Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn knn_matches_exhaustive_scan_with_incremental_inserts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = PointMap::new(1e-6); // effectively no dedup
        let mut reference: Vec<Vec3> = Vec::new();
        for batch in 0..4 {
            for p in random_points(&mut rng, 300, 10.0) {
                map.insert(p);
                reference.push(p);
            }
            for _ in 0..50 {
                let q = Vec3::new(
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-12.0..12.0),
                );
                for k in [1usize, 3, 7, 20] {
                    let got = map.knn_euclidean(&q, k).unwrap();
                    let mut expect: Vec<(f64, usize)> = reference
                        .iter()
                        .enumerate()
                        .map(|(i, p)| ((p - q).norm_squared(), i))
                        .collect();
                    expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let expect: Vec<Vec3> =
                        expect.into_iter().take(k).map(|(_, i)| reference[i]).collect();
                    assert_eq!(got, expect, "batch {batch} k {k}");
                }
            }
        }
    }

    #[test]
    fn mahalanobis_identity_cov_equals_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let candidates = random_points(&mut rng, 40, 5.0);
        let q = Vec3::new(0.3, -0.2, 0.1);
        let got = reselect_mahalanobis(&candidates, &q, &Mat3::identity(), 7).unwrap();
        let mut expect: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<Vec3> = expect.into_iter().take(7).map(|(_, i)| candidates[i]).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn mahalanobis_prefers_candidates_along_elongated_axis() {
        // var 100 along x, var 1 elsewhere: (10,0,0) has distance 1,
        // (0,2,0) has distance 4
        let cov = Mat3::from_diagonal(&Vec3::new(100.0, 1.0, 1.0));
        let candidates = vec![Vec3::new(0.0, 2.0, 0.0), Vec3::new(10.0, 0.0, 0.0)];
        let got = reselect_mahalanobis(&candidates, &Vec3::zeros(), &cov, 1).unwrap();
        assert_eq!(got[0], Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn two_stage_equals_brute_force_when_kc_is_map_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let pts = random_points(&mut rng, 120, 4.0);
            let mut map = PointMap::new(1e-6);
            for p in &pts {
                map.insert(*p);
            }
            let q = Vec3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
            // random SPD covariance
            let a = Mat3::new(
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0),
            );
            let cov = a * a.transpose() + Mat3::identity() * 0.1;
            let candidates = map.knn_euclidean(&q, map.len()).unwrap();
            let two_stage = reselect_mahalanobis(&candidates, &q, &cov, 5).unwrap();
            let brute = reselect_mahalanobis(&pts, &q, &cov, 5).unwrap();
            // same multiset; insertion ordering differs only on exact ties,
            // which have measure zero here
            assert_eq!(two_stage, brute);
        }
    }

    #[test]
    fn fit_plane_exact_xy_plane() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
        ];
        let sensor = Vec3::new(0.0, 0.0, 2.0);
        let pm = fit_plane(&pts, &sensor, 0.1).unwrap();
        assert!(pm.valid);
        assert_relative_eq!(pm.normal, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
        assert_relative_eq!(pm.centroid, Vec3::new(0.5, 0.5, 0.0), epsilon = 1e-12);
        assert!(pm.planarity < 1e-12);
    }

    #[test]
    fn fit_plane_collinear_points_degenerate() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            fit_plane(&pts, &Vec3::new(0.0, 0.0, 1.0), 0.1),
            Err(Error::DegenerateNeighbors)
        ));
    }

    #[test]
    fn fit_plane_noisy_normal_within_two_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let true_normal = Vec3::new(0.2, -0.3, 0.93).normalize();
        let (t1, t2) = crate::uncertainty::tangent_basis(&true_normal);
        let mut pts = Vec::new();
        for _ in 0..30 {
            let u = rng.random_range(-0.5..0.5);
            let v = rng.random_range(-0.5..0.5);
            let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.01;
            pts.push(t1 * u + t2 * v + true_normal * noise);
        }
        let pm = fit_plane(&pts, &(true_normal * 5.0), 0.1).unwrap();
        let angle = pm.normal.dot(&true_normal).clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() < 2.0, "normal off by {}°", angle.to_degrees());
    }

    #[test]
    fn fit_plane_normal_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pts: Vec<Vec3> = (0..8)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.01..0.01),
                )
            })
            .collect();
        let sensor = Vec3::new(0.0, 0.0, 3.0);
        let base = fit_plane(&pts, &sensor, 0.2).unwrap();
        let t = RigidTransform::new(
            Rot3::exp(&Vec3::new(0.3, -0.8, 0.5)),
            Vec3::new(2.0, -1.0, 4.0),
        );
        let moved: Vec<Vec3> = pts.iter().map(|p| t.apply(p)).collect();
        let pm = fit_plane(&moved, &t.apply(&sensor), 0.2).unwrap();
        let expect = t.rot * base.normal;
        assert_relative_eq!(pm.normal, expect, epsilon = 1e-9);
    }

    fn scan_from(points: &[Vec3]) -> UndistortedScan {
        UndistortedScan {
            t0: 0.0,
            points: points
                .iter()
                .map(|&pos| UndistortedPoint {
                    pos,
                    raw: pos,
                    dt: 0.0,
                    rot: Rot3::identity(),
                    cov: Mat3::zeros(),
                })
                .collect(),
        }
    }

    #[test]
    fn insert_same_scan_twice_does_not_grow() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let pts = random_points(&mut rng, 200, 5.0);
        let scan = scan_from(&pts);
        let mut map = PointMap::new(0.5);
        map.insert_scan(&scan, &RigidTransform::identity());
        let n = map.len();
        map.insert_scan(&scan, &RigidTransform::identity());
        assert_eq!(map.len(), n);
    }

    #[test]
    fn voxel_dedup_keeps_one_of_two_close_points() {
        let mut map = PointMap::new(0.5);
        map.insert(Vec3::new(0.1, 0.1, 0.1));
        map.insert(Vec3::new(0.2, 0.1, 0.1)); // same 0.5 m voxel
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn insert_matches_naive_reference_over_scans() {
        // reference: same dedup rule, no spatial index
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let res = 0.5;
        let mut map = PointMap::new(res);
        let mut naive_occ: HashSet<(i64, i64, i64)> = HashSet::new();
        let mut naive_count = 0usize;
        for _ in 0..10 {
            let pts = random_points(&mut rng, 500, 8.0);
            let scan = scan_from(&pts);
            map.insert_scan(&scan, &RigidTransform::identity());
            for p in &pts {
                let v = (
                    (p.x / res).floor() as i64,
                    (p.y / res).floor() as i64,
                    (p.z / res).floor() as i64,
                );
                if naive_occ.insert(v) {
                    naive_count += 1;
                }
            }
            assert_eq!(map.len(), naive_count);
        }
    }
}
