//! Pot footprint estimation and collision-avoiding action projection.

use crate::claysim::PinchAction;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Fraction of the x,y footprint that must fall inside the safety circle.
pub const INLIER_QUANTILE: f64 = 0.95;

/// Radial slack below which an action counts as on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyCircle {
    pub center: (f64, f64),
    pub radius: f64,
    pub inlier_fraction: f64,
}

impl SafetyCircle {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn radial_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.center.0).hypot(y - self.center.1)
    }
}

/// Circle centered at the x,y centroid whose radius is the nearest-rank 95th
/// percentile of the radial distances.
pub fn fit_safety_circle(state: &PointCloud) -> Result<SafetyCircle> {
    let n = state.len();
    if n == 0 {
        return Err(Error::invalid("cannot fit a safety circle to an empty cloud"));
    }
    let (sx, sy) = state
        .points()
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let center = (sx / n as f64, sy / n as f64);
    let mut radii: Vec<f64> = state
        .points()
        .iter()
        .map(|p| (p[0] - center.0).hypot(p[1] - center.1))
        .collect();
    radii.sort_by(f64::total_cmp);
    let rank = ((INLIER_QUANTILE * n as f64).ceil() as usize).clamp(1, n);
    let radius = radii[rank - 1];
    let inside = radii.partition_point(|&r| r <= radius);
    Ok(SafetyCircle {
        center,
        radius,
        inlier_fraction: inside as f64 / n as f64,
    })
}

/// Moves an action whose x,y lies strictly inside the circle radially onto its
/// boundary. Everything except x and y is kept.
pub fn project_action(action: &PinchAction, circle: &SafetyCircle) -> PinchAction {
    let dx = action.x - circle.center.0;
    let dy = action.y - circle.center.1;
    let r = dx.hypot(dy);
    if r >= circle.radius - BOUNDARY_TOL {
        return *action;
    }
    // Center-coincident actions fall back to the action's own yaw.
    let (ux, uy) = if r > 0.0 {
        (dx / r, dy / r)
    } else {
        (action.rz.cos(), action.rz.sin())
    };
    PinchAction {
        x: circle.center.0 + circle.radius * ux,
        y: circle.center.1 + circle.radius * uy,
        ..*action
    }
}
