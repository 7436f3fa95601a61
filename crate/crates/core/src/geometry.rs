//! Point clouds, rigid transforms, downsampling and ICP registration.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Ordered set of 3-D points in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    /// Builds a cloud, rejecting any non-finite coordinate.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub(crate) fn from_points_unchecked(points: Vec<Point>) -> Self {
        debug_assert!(points.iter().all(|p| p.iter().all(|c| c.is_finite())));
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        Some([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Cloud with every coordinate rounded to the nearest `f32`.
    pub fn to_f32_precision(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64])
            .collect();
        Self { points }
    }

    /// Copy translated so that the x,y centroid sits at the origin; z is untouched.
    pub fn centered_xy(&self) -> Self {
        let Some(c) = self.centroid() else {
            return self.clone();
        };
        let points = self.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2]]).collect();
        Self { points }
    }

    pub fn concat(&self, other: &PointCloud) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Self { points }
    }

    pub fn max_z(&self) -> Option<f64> {
        self.points.iter().map(|p| p[2]).reduce(f64::max)
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self { rotation, translation };
        t.validate(1e-6)?;
        Ok(t)
    }

    /// Extrinsic fixed-axis rotation: X first, then Y, then Z (`R = Rz * Ry * Rx`).
    pub fn from_euler_xyz(rx: f64, ry: f64, rz: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: euler_xyz_matrix(rx, ry, rz),
            translation,
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Matrix3::identity()).amax();
        let det = r.determinant();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "rotation is not proper orthonormal (|RᵀR - I| = {orth:e}, det = {det})"
            )));
        }
        if self.translation.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(())
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(cloud.points.iter().map(|p| self.apply_point(p)).collect())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

pub fn euler_xyz_matrix(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    let rot_x = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let rot_y = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rot_z = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rot_z * rot_y * rot_x
}

/// Rotates `(x, y)` by `theta` about `pivot`.
#[inline]
pub fn rotate_xy(x: f64, y: f64, theta: f64, pivot: (f64, f64)) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let dx = x - pivot.0;
    let dy = y - pivot.1;
    (pivot.0 + c * dx - s * dy, pivot.1 + s * dx + c * dy)
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Rotates every point about the vertical axis through `pivot`.
pub fn rotate_about_z(cloud: &PointCloud, theta: f64, pivot: (f64, f64)) -> Result<PointCloud> {
    if !theta.is_finite() || !pivot.0.is_finite() || !pivot.1.is_finite() {
        return Err(Error::invalid("rotation angle and pivot must be finite"));
    }
    if theta == 0.0 {
        return Ok(cloud.clone());
    }
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (x, y) = rotate_xy(p[0], p[1], theta, pivot);
            [x, y, p[2]]
        })
        .collect();
    Ok(PointCloud::from_points_unchecked(points))
}

/// Seeded uniform random downsampling to exactly `target` points.
///
/// Larger clouds are subsampled without replacement (input order kept). Smaller
/// clouds keep every point once and are topped up by sampling with replacement.
pub fn uniform_downsample(cloud: &PointCloud, target: usize, seed: u64) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::invalid("downsample target must be >= 1"));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("cannot downsample an empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = if n > target {
        let mut idx = index::sample(&mut rng, n, target).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| cloud.points[i]).collect()
    } else {
        let mut pts = cloud.points.clone();
        pts.extend((n..target).map(|_| cloud.points[rng.random_range(0..n)]));
        pts
    };
    Ok(PointCloud::from_points_unchecked(points))
}

fn check_non_collinear(cloud: &PointCloud, name: &str) -> Result<()> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{name} cloud has fewer than 3 points")));
    }
    let c = cloud.centroid().expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateGeometry(format!("{name} cloud is collinear")));
    }
    Ok(())
}

fn nearest_index(p: &Point, cloud: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in cloud.iter().enumerate() {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]` (Kabsch).
pub fn kabsch(src: &[Point], dst: &[Point]) -> RigidTransform {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        pts.iter().fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + Vector3::new(p[0], p[1], p[2])) / n
    };
    let cs = mean(src);
    let cd = mean(dst);
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        let a = Vector3::new(p[0], p[1], p[2]) - cs;
        let b = Vector3::new(q[0], q[1], q[2]) - cd;
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    }
}

/// Point-to-point ICP. Returns the transform `T` minimizing the mean
/// nearest-neighbor distance from `T(source)` to `target`.
pub fn icp_align(source: &PointCloud, target: &PointCloud, max_iter: usize, tol: f64) -> Result<RigidTransform> {
    check_non_collinear(source, "source")?;
    check_non_collinear(target, "target")?;
    let mean_nn = |t: &RigidTransform| -> (f64, Vec<Point>) {
        let mut total = 0.0;
        let mut matches = Vec::with_capacity(source.len());
        for p in &source.points {
            let q = t.apply_point(p);
            let (j, d2) = nearest_index(&q, &target.points);
            total += d2.sqrt();
            matches.push(target.points[j]);
        }
        (total / source.len() as f64, matches)
    };

    let mut current = RigidTransform::identity();
    let (mut err, mut matches) = mean_nn(&current);
    let mut best = (err, current);
    for _ in 0..max_iter {
        current = kabsch(&source.points, &matches);
        let (next_err, next_matches) = mean_nn(&current);
        if next_err < best.0 {
            best = (next_err, current);
        }
        let improvement = err - next_err;
        err = next_err;
        matches = next_matches;
        if improvement < tol {
            break;
        }
    }
    Ok(best.1)
}
