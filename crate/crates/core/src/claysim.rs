//! Kinematic pinch-pottery simulator.
//!
//! Clay is a point cloud. A pinch closes two parallel finger planes to a final
//! separation `d_ee` around the pinch center; clay swept by a finger (within
//! `finger_travel / 2` outside its final plane and within `finger_radius` of the
//! pinch axis) is pushed onto that plane and lifted by `k_up` times the
//! penetration depth. There is no elasticity; the model is deterministic and
//! equivariant under rotations about the vertical axis.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Step, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::geometry::{rotate_xy, wrap_angle, Point, PointCloud};
use crate::safety::fit_safety_circle;

pub const MIN_INITIAL_HEIGHT: f64 = 0.05;
pub const MAX_INITIAL_HEIGHT: f64 = 0.08;
pub const MIN_GOAL_DIAMETER: f64 = 0.07;
pub const MAX_GOAL_DIAMETER: f64 = 0.12;
pub const MIN_DEMO_LENGTH: usize = 21;
pub const MAX_DEMO_LENGTH: usize = 31;

/// One gripper squeeze: end-effector pose, final fingertip separation and the
/// termination/progress channel `gamma`.
///
/// Rotations are extrinsic X-then-Y-then-Z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PinchAction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub d_ee: f64,
    pub gamma: f64,
}

impl PinchAction {
    pub const DIM: usize = 8;

    pub fn to_array(&self) -> [f64; 8] {
        [self.x, self.y, self.z, self.rx, self.ry, self.rz, self.d_ee, self.gamma]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            rx: a[3],
            ry: a[4],
            rz: a[5],
            d_ee: a[6],
            gamma: a[7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("action has non-finite fields"));
        }
        if self.d_ee < 0.0 {
            return Err(Error::invalid(format!("d_ee must be >= 0, got {}", self.d_ee)));
        }
        if !(-PI..PI).contains(&self.rz) {
            return Err(Error::invalid(format!("rz must lie in [-pi, pi), got {}", self.rz)));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [-1, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Rotates the position about the workspace z-axis and advances the yaw.
    pub fn rotated_about_z(&self, theta: f64) -> Self {
        let (x, y) = rotate_xy(self.x, self.y, theta, (0.0, 0.0));
        Self {
            x,
            y,
            rz: wrap_angle(self.rz + theta),
            ..*self
        }
    }

    /// Unit normal of the finger planes: radial direction `(cos rz, sin rz, 0)`
    /// tilted by `rx` about the tangent axis.
    pub fn slab_normal(&self) -> [f64; 3] {
        let (sz, cz) = self.rz.sin_cos();
        let (sx, cx) = self.rx.sin_cos();
        [cx * cz, cx * sz, -sx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_points: usize,
    /// Clay volume proxy V₀ in m³; fixes the cylinder radius for a given height.
    pub clay_volume: f64,
    pub finger_radius: f64,
    pub k_up: f64,
    /// Total closing travel of the two fingers, in meters.
    pub finger_travel: f64,
    pub angular_step_deg: f64,
    pub angular_jitter_deg: f64,
    /// Wall angle reached by the widest goal; the map is linear in diameter.
    pub max_wall_angle: f64,
    pub d_ee_start: f64,
    pub d_ee_end: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_points: 2048,
            clay_volume: 1.6e-4,
            finger_radius: 0.015,
            k_up: 0.5,
            finger_travel: 0.04,
            angular_step_deg: 30.0,
            angular_jitter_deg: 6.0,
            max_wall_angle: 0.35,
            d_ee_start: 0.014,
            d_ee_end: 0.008,
        }
    }
}

impl SimConfig {
    pub fn cylinder_radius(&self, height: f64) -> f64 {
        (self.clay_volume / (PI * height)).sqrt()
    }

    /// Linear diameter → wall-angle map: vertical at the smallest goal.
    pub fn default_wall_angle(&self, diameter: f64) -> f64 {
        let t = ((diameter - MIN_GOAL_DIAMETER) / (MAX_GOAL_DIAMETER - MIN_GOAL_DIAMETER)).clamp(0.0, 1.0);
        self.max_wall_angle * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClayState {
    pub cloud: PointCloud,
    pub volume_proxy: f64,
}

impl ClayState {
    pub fn rotated_about_z(&self, theta: f64) -> Result<Self> {
        Ok(Self {
            cloud: crate::geometry::rotate_about_z(&self.cloud, theta, (0.0, 0.0))?,
            volume_proxy: self.volume_proxy,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub diameter: f64,
    pub height: f64,
    pub wall_angle: f64,
}

impl GoalSpec {
    /// Goal with the default height and wall-angle maps for `diameter`.
    pub fn from_diameter(diameter: f64, cfg: &SimConfig) -> Result<Self> {
        let spec = Self {
            diameter,
            height: default_goal_height(diameter),
            wall_angle: cfg.default_wall_angle(diameter),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_GOAL_DIAMETER - 1e-12..=MAX_GOAL_DIAMETER + 1e-12).contains(&self.diameter) {
            return Err(Error::invalid(format!(
                "goal diameter {} outside [{MIN_GOAL_DIAMETER}, {MAX_GOAL_DIAMETER}] m",
                self.diameter
            )));
        }
        if !(self.height > 0.0) || !self.height.is_finite() {
            return Err(Error::invalid("goal height must be positive"));
        }
        if !(0.0..PI / 2.0).contains(&self.wall_angle) {
            return Err(Error::invalid("wall angle must lie in [0, pi/2)"));
        }
        if self.height * self.wall_angle.tan() >= self.diameter / 2.0 {
            return Err(Error::invalid("wall angle too steep for the goal height"));
        }
        Ok(())
    }
}

/// Goal height falls linearly from 5.5 cm (7 cm bowl) to 4.75 cm (12 cm bowl).
pub fn default_goal_height(diameter: f64) -> f64 {
    0.055 - 0.15 * (diameter - MIN_GOAL_DIAMETER)
}

/// Uniform surface sample of a constant-volume cylinder standing on the origin.
pub fn new_clay_cylinder(cfg: &SimConfig, height: f64, seed: u64) -> Result<ClayState> {
    if !(MIN_INITIAL_HEIGHT..=MAX_INITIAL_HEIGHT).contains(&height) {
        return Err(Error::invalid(format!(
            "initial height {height} outside [{MIN_INITIAL_HEIGHT}, {MAX_INITIAL_HEIGHT}] m"
        )));
    }
    if cfg.n_points == 0 {
        return Err(Error::invalid("n_points must be >= 1"));
    }
    let radius = cfg.cylinder_radius(height);
    let side = 2.0 * PI * radius * height;
    let cap = PI * radius * radius;
    let total = side + 2.0 * cap;
    let n = cfg.n_points;
    let n_side = ((n as f64) * side / total).round() as usize;
    let n_top = (n - n_side) / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let p = if i < n_side {
            let a = rng.random_range(0.0..2.0 * PI);
            [radius * a.cos(), radius * a.sin(), rng.random_range(0.0..height)]
        } else {
            let a = rng.random_range(0.0..2.0 * PI);
            let r = radius * rng.random::<f64>().sqrt();
            let z = if i < n_side + n_top { height } else { 0.0 };
            [r * a.cos(), r * a.sin(), z]
        };
        points.push(p);
    }
    Ok(ClayState {
        cloud: PointCloud::from_points_unchecked(points),
        volume_proxy: cfg.clay_volume,
    })
}

/// Displacement of one point under a pinch, or `None` when it is not touched.
#[inline]
fn pinch_point(p: &Point, center: &Point, n: &[f64; 3], half_gap: f64, half_travel: f64, rf2: f64, k_up: f64) -> Option<Point> {
    let v = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    let s = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
    let depth = s.abs() - half_gap;
    if depth <= 0.0 || depth >= half_travel {
        return None;
    }
    let off = [v[0] - s * n[0], v[1] - s * n[1], v[2] - s * n[2]];
    if off[0] * off[0] + off[1] * off[1] + off[2] * off[2] >= rf2 {
        return None;
    }
    let push = -s.signum() * depth;
    Some([p[0] + push * n[0], p[1] + push * n[1], p[2] + push * n[2] + k_up * depth])
}

/// Applies one pinch. Point count and order are preserved.
pub fn apply_pinch(cfg: &SimConfig, state: &ClayState, action: &PinchAction) -> ClayState {
    let center = [action.x, action.y, action.z];
    let n = action.slab_normal();
    let half_gap = 0.5 * action.d_ee.max(0.0);
    let half_travel = 0.5 * cfg.finger_travel;
    let rf2 = cfg.finger_radius * cfg.finger_radius;
    let points = state
        .cloud
        .points()
        .iter()
        .map(|p| pinch_point(p, &center, &n, half_gap, half_travel, rf2, cfg.k_up).unwrap_or(*p))
        .collect();
    ClayState {
        cloud: PointCloud::from_points_unchecked(points),
        volume_proxy: state.volume_proxy,
    }
}

/// Deterministic open bowl: annular base, frustum wall and a rim ring at the
/// goal diameter. 30% / 60% / 10% of the points respectively.
pub fn generate_goal_cloud(spec: &GoalSpec, n_points: usize) -> Result<PointCloud> {
    spec.validate()?;
    if n_points == 0 {
        return Err(Error::invalid("n_points must be >= 1"));
    }
    Ok(bowl_cloud(spec, n_points))
}

/// Bowl sampler without the goal-range checks; used for intermediate shapes.
pub(crate) fn bowl_cloud(spec: &GoalSpec, n_points: usize) -> PointCloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    let r_top = spec.diameter / 2.0;
    let r_base = r_top - spec.height * spec.wall_angle.tan();
    let r_inner = 0.2 * r_base;
    let n_rim = (n_points / 10).max(1).min(n_points);
    let n_base = (n_points * 3 / 10).min(n_points - n_rim);
    let n_wall = n_points - n_rim - n_base;

    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_base {
        let t = (i as f64 + 0.5) / n_base as f64;
        let r = (r_inner * r_inner + t * (r_base * r_base - r_inner * r_inner)).sqrt();
        let a = i as f64 * golden;
        points.push([r * a.cos(), r * a.sin(), 0.0]);
    }
    for i in 0..n_wall {
        let t = (i as f64 + 0.5) / n_wall as f64;
        let z = t * spec.height;
        let r = r_base + (r_top - r_base) * t;
        let a = i as f64 * golden;
        points.push([r * a.cos(), r * a.sin(), z]);
    }
    for i in 0..n_rim {
        let a = 2.0 * PI * i as f64 / n_rim as f64;
        points.push([r_top * a.cos(), r_top * a.sin(), spec.height]);
    }
    PointCloud::from_points_unchecked(points)
}

/// `n` expert demonstrations from cylinders of random height. Goal diameters
/// are stratified over the goal range so every demo covers its own slice.
pub fn generate_demos(cfg: &SimConfig, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = MAX_GOAL_DIAMETER - MIN_GOAL_DIAMETER;
    (0..n)
        .map(|i| {
            let height = rng.random_range(MIN_INITIAL_HEIGHT..=MAX_INITIAL_HEIGHT);
            let u: f64 = rng.random();
            let diameter = MIN_GOAL_DIAMETER + span * (i as f64 + u) / n as f64;
            let demo_seed: u64 = rng.random();
            let initial = new_clay_cylinder(cfg, height, demo_seed)?;
            let spec = GoalSpec::from_diameter(diameter, cfg)?;
            let mut traj = scripted_expert_demo(cfg, &initial, &spec, demo_seed)?;
            traj.id = format!("demo-{i:04}");
            Ok(traj)
        })
        .collect()
}

struct DemoPlan {
    length: usize,
    angles: Vec<f64>,
    finish_len: usize,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn plan_actions(cfg: &SimConfig, plan: &DemoPlan, start: f64, end: f64, wall_angle: f64, height: f64) -> Vec<PinchAction> {
    let ramp = plan.length - plan.finish_len;
    (0..plan.length)
        .map(|k| {
            let t = k as f64 / (plan.length - 1) as f64;
            let r = if k < ramp { lerp(start, end, (k + 1) as f64 / ramp as f64) } else { end };
            let a = plan.angles[k];
            PinchAction {
                x: r * a.cos(),
                y: r * a.sin(),
                z: lerp(0.45, 0.55, t) * height,
                rx: wall_angle * t,
                ry: 0.0,
                rz: wrap_angle(a),
                d_ee: lerp(cfg.d_ee_start, cfg.d_ee_end, t),
                gamma: if k + 1 == plan.length { 1.0 } else { -1.0 },
            }
        })
        .collect()
}

fn run_actions(cfg: &SimConfig, initial: &ClayState, actions: &[PinchAction]) -> Vec<ClayState> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(initial.clone());
    for a in actions {
        let next = apply_pinch(cfg, states.last().expect("non-empty"), a);
        states.push(next);
    }
    states
}

/// Scripted expert: a spiral of rim pinches widening the clay to the goal
/// diameter, finished by one revolution at the final radius.
///
/// The final radius is tuned by re-simulating the plan until the fitted
/// diameter of the end state matches the goal.
pub fn scripted_expert_demo(cfg: &SimConfig, initial: &ClayState, spec: &GoalSpec, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_fit = fit_safety_circle(&initial.cloud)?;
    let height = initial.cloud.max_z().unwrap_or(MIN_INITIAL_HEIGHT);
    let goal_r = spec.diameter / 2.0;

    // A wall only follows a finger that starts within half the travel of it,
    // so one revolution may widen the pinch radius by at most that much.
    let per_rev = 0.8 * 0.5 * cfg.finger_travel;
    let step = cfg.angular_step_deg.to_radians();
    let per_rev_pinches = (2.0 * PI / step).round() as usize;
    let start = (start_fit.radius + 0.5 * cfg.d_ee_start + 0.25 * cfg.finger_travel).min(goal_r + 0.5 * cfg.d_ee_end);
    let gap = (goal_r + 0.5 * cfg.d_ee_end - start).max(0.0);
    let ramp_min = ((gap / per_rev) * per_rev_pinches as f64).ceil() as usize;
    let lo = (ramp_min + per_rev_pinches).clamp(MIN_DEMO_LENGTH, MAX_DEMO_LENGTH);
    let length = rng.random_range(lo..=MAX_DEMO_LENGTH);

    let jitter = cfg.angular_jitter_deg.to_radians();
    let mut angles = Vec::with_capacity(length);
    let mut a = rng.random_range(-PI..PI);
    for _ in 0..length {
        angles.push(a);
        a += step + if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
    }
    let plan = DemoPlan {
        length,
        angles,
        finish_len: per_rev_pinches.min(length - 1),
    };

    let mut end = goal_r + 0.5 * cfg.d_ee_end;
    let mut actions = plan_actions(cfg, &plan, start, end, spec.wall_angle, height);
    let mut states = run_actions(cfg, initial, &actions);
    for _ in 0..6 {
        let fit = fit_safety_circle(&states.last().expect("non-empty").cloud)?;
        let err = goal_r - fit.radius;
        if err.abs() < 1e-5 {
            break;
        }
        end += err;
        actions = plan_actions(cfg, &plan, start.min(end), end, spec.wall_angle, height);
        states = run_actions(cfg, initial, &actions);
    }

    let final_state = states.pop().expect("non-empty").cloud;
    let steps = states
        .into_iter()
        .zip(actions)
        .map(|(s, action)| Step { state: s.cloud, action })
        .collect();
    Ok(Trajectory {
        id: format!("demo-{seed}"),
        goal: generate_goal_cloud(spec, cfg.n_points)?,
        steps,
        final_state,
        meta: TrajectoryMeta {
            initial_height: height,
            goal_diameter: spec.diameter,
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotate_about_z;

    fn small_cfg() -> SimConfig {
        SimConfig {
            n_points: 1024,
            ..SimConfig::default()
        }
    }

    fn max_diff(a: &PointCloud, b: &PointCloud) -> f64 {
        a.points()
            .iter()
            .zip(b.points())
            .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn cylinder_radius_follows_constant_volume() {
        let cfg = SimConfig::default();
        let s = new_clay_cylinder(&cfg, 0.05, 1).unwrap();
        assert_eq!(s.cloud.len(), 2048);
        let r = cfg.cylinder_radius(0.05);
        assert!((r - (cfg.clay_volume / (PI * 0.05)).sqrt()).abs() < 1e-15);
        let max_r = s.cloud.points().iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
        assert!((max_r - r).abs() < 1e-12);
        let ratio = cfg.cylinder_radius(0.05) / cfg.cylinder_radius(0.08);
        assert!((ratio - (0.08f64 / 0.05).sqrt()).abs() < 1e-12);
        assert_eq!(s, new_clay_cylinder(&cfg, 0.05, 1).unwrap());
        assert!(new_clay_cylinder(&cfg, 0.04, 1).is_err());
        assert!(new_clay_cylinder(&cfg, 0.081, 1).is_err());
    }

    #[test]
    fn no_contact_leaves_state_unchanged() {
        let cfg = small_cfg();
        // Thin wall of thickness 4 mm in the plane x = 0.05.
        let pts: Vec<Point> = (0..200).map(|i| [0.048 + 0.004 * (i % 5) as f64 / 4.0, 0.0005 * (i / 5) as f64 - 0.01, 0.03]).collect();
        let state = ClayState {
            cloud: PointCloud::new(pts).unwrap(),
            volume_proxy: cfg.clay_volume,
        };
        let a = PinchAction {
            x: 0.05,
            z: 0.03,
            d_ee: 0.006,
            gamma: -1.0,
            ..Default::default()
        };
        assert_eq!(apply_pinch(&cfg, &state, &a), state);
    }

    #[test]
    fn straddling_points_move_to_planes_and_up() {
        let cfg = small_cfg();
        let p = 0.003;
        let d = 0.01;
        let pts = vec![[0.05 + d / 2.0 + p, 0.0, 0.03], [0.05 - d / 2.0 - p, 0.0, 0.03]];
        let state = ClayState {
            cloud: PointCloud::new(pts).unwrap(),
            volume_proxy: cfg.clay_volume,
        };
        let a = PinchAction {
            x: 0.05,
            z: 0.03,
            d_ee: d,
            ..Default::default()
        };
        let out = apply_pinch(&cfg, &state, &a);
        let q = out.cloud.points();
        assert!((q[0][0] - (0.05 + d / 2.0)).abs() < 1e-12);
        assert!((q[1][0] - (0.05 - d / 2.0)).abs() < 1e-12);
        for k in 0..2 {
            assert!((q[k][2] - (0.03 + cfg.k_up * p)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pinch_keeps_reflection_symmetry() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for _ in 0..300 {
            let s = rng.random_range(0.0..0.02);
            let t = rng.random_range(-0.02..0.02);
            let z = rng.random_range(0.0..0.06);
            // Mirror pairs about the plane through (0.04, 0) with normal x.
            pts.push([0.04 + s, t, z]);
            pts.push([0.04 - s, t, z]);
        }
        let state = ClayState {
            cloud: PointCloud::new(pts).unwrap(),
            volume_proxy: cfg.clay_volume,
        };
        let a = PinchAction {
            x: 0.04,
            z: 0.03,
            d_ee: 0.008,
            ..Default::default()
        };
        let out = apply_pinch(&cfg, &state, &a);
        for pair in out.cloud.points().chunks(2) {
            assert!(((pair[0][0] - 0.04) + (pair[1][0] - 0.04)).abs() < 1e-9);
            assert!((pair[0][1] - pair[1][1]).abs() < 1e-9);
            assert!((pair[0][2] - pair[1][2]).abs() < 1e-9);
        }
    }

    #[test]
    fn pinch_is_z_rotation_equivariant_and_bounded() {
        let cfg = small_cfg();
        let state = new_clay_cylinder(&cfg, 0.06, 5).unwrap();
        let a = PinchAction {
            x: 0.035,
            y: 0.01,
            z: 0.03,
            rx: 0.2,
            ry: 0.0,
            rz: 0.3,
            d_ee: 0.01,
            gamma: -1.0,
        };
        let bound = (0.5 + 0.5 * cfg.k_up) * cfg.finger_travel;
        let out = apply_pinch(&cfg, &state, &a);
        for (p, q) in state.cloud.points().iter().zip(out.cloud.points()) {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            assert!(d <= bound + 1e-12);
        }
        assert_ne!(out, state);
        for theta in [0.4, -2.0, 3.0] {
            let lhs = apply_pinch(&cfg, &state.rotated_about_z(theta).unwrap(), &a.rotated_about_z(theta));
            let rhs = out.rotated_about_z(theta).unwrap();
            assert!(max_diff(&lhs.cloud, &rhs.cloud) < 1e-9);
        }
    }

    #[test]
    fn goal_cloud_shape() {
        let cfg = SimConfig::default();
        assert!(cfg.default_wall_angle(0.08).to_degrees() < 5.0);
        assert_eq!(cfg.default_wall_angle(0.12), cfg.max_wall_angle);
        for d in [0.07, 0.08, 0.1, 0.12] {
            let spec = GoalSpec::from_diameter(d, &cfg).unwrap();
            let g = generate_goal_cloud(&spec, 2048).unwrap();
            assert_eq!(g.len(), 2048);
            let fit = fit_safety_circle(&g).unwrap();
            assert!((fit.radius - d / 2.0).abs() / (d / 2.0) < 0.02);
        }
        assert!(GoalSpec::from_diameter(0.13, &cfg).is_err());
        let bad = GoalSpec {
            diameter: 0.1,
            height: 0.05,
            wall_angle: 1.5,
        };
        assert!(generate_goal_cloud(&bad, 100).is_err());
    }

    #[test]
    fn expert_demo_properties() {
        let cfg = SimConfig::default();
        for (i, (h, d)) in [(0.05, 0.07), (0.08, 0.12), (0.065, 0.1), (0.08, 0.07), (0.05, 0.12)].into_iter().enumerate() {
            let init = new_clay_cylinder(&cfg, h, i as u64).unwrap();
            let spec = GoalSpec::from_diameter(d, &cfg).unwrap();
            let demo = scripted_expert_demo(&cfg, &init, &spec, 100 + i as u64).unwrap();
            let n = demo.steps.len();
            assert!((MIN_DEMO_LENGTH..=MAX_DEMO_LENGTH).contains(&n), "length {n}");
            let plus: Vec<usize> = demo.steps.iter().enumerate().filter(|(_, s)| s.action.gamma == 1.0).map(|(k, _)| k).collect();
            assert_eq!(plus, vec![n - 1]);
            assert!(demo.steps.iter().all(|s| s.action.validate().is_ok()));
            let fit = fit_safety_circle(&demo.final_state).unwrap();
            assert!((2.0 * fit.radius - d).abs() < 0.005, "diameter {} vs {d}", 2.0 * fit.radius);
            assert_eq!(demo.steps[0].state, init.cloud);
        }
    }

    #[test]
    fn demos_are_multimodal_but_reach_the_same_diameter() {
        let cfg = SimConfig::default();
        let init = new_clay_cylinder(&cfg, 0.06, 1).unwrap();
        let spec = GoalSpec::from_diameter(0.1, &cfg).unwrap();
        let a = scripted_expert_demo(&cfg, &init, &spec, 1).unwrap();
        let b = scripted_expert_demo(&cfg, &init, &spec, 2).unwrap();
        assert_ne!(a.steps[0].action, b.steps[0].action);
        let da = fit_safety_circle(&a.final_state).unwrap().radius * 2.0;
        let db = fit_safety_circle(&b.final_state).unwrap().radius * 2.0;
        assert!((da - db).abs() < 0.005);
        assert_eq!(a, scripted_expert_demo(&cfg, &init, &spec, 1).unwrap());
    }

    #[test]
    fn action_validation_and_rotation() {
        let a = PinchAction {
            x: 0.05,
            rz: 3.1,
            d_ee: 0.01,
            gamma: -1.0,
            ..Default::default()
        };
        assert!(a.validate().is_ok());
        assert!(PinchAction { d_ee: -0.1, ..a }.validate().is_err());
        assert!(PinchAction { gamma: 1.5, ..a }.validate().is_err());
        assert!(PinchAction { rz: PI, ..a }.validate().is_err());
        let r = a.rotated_about_z(0.2);
        assert!((-PI..PI).contains(&r.rz));
        assert!((r.rz - wrap_angle(3.3)).abs() < 1e-12);
        let c = PointCloud::new(vec![[a.x, a.y, a.z]]).unwrap();
        let rc = rotate_about_z(&c, 0.2, (0.0, 0.0)).unwrap();
        assert_eq!(rc.points()[0], [r.x, r.y, r.z]);
    }
}
