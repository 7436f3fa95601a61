//! Evaluation metrics between point clouds: Chamfer distance, Earth Mover's
//! distance and squared diameter error. All results are reported in millimeters.

mod assignment;
mod sinkhorn;

use std::fmt;
use std::str::FromStr;

pub use assignment::min_cost_assignment;
pub use sinkhorn::sinkhorn_cost;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{uniform_downsample, Point, PointCloud};
use crate::safety::fit_safety_circle;

const M_TO_MM: f64 = 1000.0;

#[inline]
fn dist(p: &Point, q: &Point) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn mean_nearest(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric Chamfer distance `½·(mean_a min_b |a-b| + mean_b min_a |a-b|)`, in mm.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance needs non-empty clouds"));
    }
    let ab = mean_nearest(a.points(), b.points());
    let ba = mean_nearest(b.points(), a.points());
    Ok(0.5 * (ab + ba) * M_TO_MM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmdMode {
    /// Optimal one-to-one assignment.
    #[default]
    Exact,
    /// Sinkhorn approximation on subsampled clouds.
    Entropic,
}

impl FromStr for EmdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EmdMode::Exact),
            "entropic" => Ok(EmdMode::Entropic),
            other => Err(Error::invalid(format!("unknown EMD mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdConfig {
    /// Equal-size clouds above this count are subsampled before the exact solve.
    pub max_exact_points: usize,
    pub sinkhorn_points: usize,
    /// Regularization as a fraction of the mean pairwise cost.
    pub sinkhorn_reg: f64,
    pub sinkhorn_iterations: usize,
    pub seed: u64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            max_exact_points: 256,
            sinkhorn_points: 256,
            sinkhorn_reg: 0.01,
            sinkhorn_iterations: 300,
            seed: 0,
        }
    }
}

fn cost_matrix(a: &[Point], b: &[Point]) -> Vec<f64> {
    a.iter().flat_map(|p| b.iter().map(move |q| dist(p, q))).collect()
}

/// Earth Mover's distance (mean matched distance) in mm with default settings.
pub fn earth_movers_distance(a: &PointCloud, b: &PointCloud, mode: EmdMode) -> Result<f64> {
    earth_movers_distance_with(a, b, mode, &EmdConfig::default())
}

pub fn earth_movers_distance_with(a: &PointCloud, b: &PointCloud, mode: EmdMode, cfg: &EmdConfig) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("EMD needs non-empty clouds"));
    }
    match mode {
        EmdMode::Exact => {
            if a.len() != b.len() {
                return Err(Error::invalid(format!(
                    "exact EMD needs equal counts, got {} and {}",
                    a.len(),
                    b.len()
                )));
            }
            let (a, b) = if a.len() > cfg.max_exact_points {
                (
                    uniform_downsample(a, cfg.max_exact_points, cfg.seed)?,
                    uniform_downsample(b, cfg.max_exact_points, cfg.seed)?,
                )
            } else {
                (a.clone(), b.clone())
            };
            let n = a.len();
            let cost = cost_matrix(a.points(), b.points());
            let perm = min_cost_assignment(&cost, n);
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            Ok(total / n as f64 * M_TO_MM)
        }
        EmdMode::Entropic => {
            let k = cfg.sinkhorn_points.max(1);
            let a = uniform_downsample(a, k, cfg.seed)?;
            let b = uniform_downsample(b, k, cfg.seed.wrapping_add(1))?;
            let cost = cost_matrix(a.points(), b.points());
            let mean = cost.iter().sum::<f64>() / cost.len() as f64;
            if mean == 0.0 {
                return Ok(0.0);
            }
            let eps = cfg.sinkhorn_reg * mean;
            Ok(sinkhorn_cost(&cost, k, eps, cfg.sinkhorn_iterations) * M_TO_MM)
        }
    }
}

/// Squared difference (mm²) between the fitted diameter of `final_cloud` and `goal_diameter` (m).
pub fn diameter_error(final_cloud: &PointCloud, goal_diameter: f64) -> Result<f64> {
    if !(goal_diameter > 0.0) || !goal_diameter.is_finite() {
        return Err(Error::invalid("goal diameter must be positive"));
    }
    let circle = fit_safety_circle(final_cloud)?;
    let diff_mm = (2.0 * circle.radius - goal_diameter) * M_TO_MM;
    Ok(diff_mm * diff_mm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub chamfer_mm: f64,
    pub emd_mm: f64,
    pub diameter_mse_mm2: f64,
}

impl MetricReport {
    /// CD and exact EMD against `goal`, plus the diameter error against `goal_diameter`.
    ///
    /// EMD needs equal counts; the larger cloud is subsampled to the smaller one.
    pub fn evaluate(final_cloud: &PointCloud, goal: &PointCloud, goal_diameter: f64) -> Result<Self> {
        Self::evaluate_with(final_cloud, goal, goal_diameter, &EmdConfig::default())
    }

    pub fn evaluate_with(final_cloud: &PointCloud, goal: &PointCloud, goal_diameter: f64, emd: &EmdConfig) -> Result<Self> {
        let chamfer_mm = chamfer_distance(final_cloud, goal)?;
        let n = final_cloud.len().min(goal.len());
        let a = uniform_downsample(final_cloud, n, 17)?;
        let b = uniform_downsample(goal, n, 18)?;
        let emd_mm = earth_movers_distance_with(&a, &b, EmdMode::Exact, emd)?;
        let diameter_mse_mm2 = diameter_error(final_cloud, goal_diameter)?;
        Ok(Self {
            chamfer_mm,
            emd_mm,
            diameter_mse_mm2,
        })
    }

    pub fn entries(&self) -> [(&'static str, f64); 3] {
        [
            ("chamfer_mm", self.chamfer_mm),
            ("emd_mm", self.emd_mm),
            ("diameter_mse_mm2", self.diameter_mse_mm2),
        ]
    }

    /// Parses the `key=value` record produced by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 3];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed metric line '{line}'")))?;
            let slot = match k {
                "chamfer_mm" => 0,
                "emd_mm" => 1,
                "diameter_mse_mm2" => 2,
                _ => continue,
            };
            vals[slot] = Some(v.parse().map_err(|_| Error::invalid(format!("bad number in '{line}'")))?);
        }
        match vals {
            [Some(chamfer_mm), Some(emd_mm), Some(diameter_mse_mm2)] => Ok(Self {
                chamfer_mm,
                emd_mm,
                diameter_mse_mm2,
            }),
            _ => Err(Error::invalid("metric record is missing keys")),
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]).collect())
            .unwrap()
    }

    #[test]
    fn chamfer_identity_and_single_pair() {
        let c = random_cloud(30, 1);
        assert_eq!(chamfer_distance(&c, &c).unwrap(), 0.0);
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.0, 0.0, 0.01]]).unwrap();
        assert!((chamfer_distance(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        assert!(chamfer_distance(&a, &PointCloud::default()).is_err());
    }

    #[test]
    fn emd_identity_permutation_and_errors() {
        let c = random_cloud(4, 2);
        assert_eq!(earth_movers_distance(&c, &c, EmdMode::Exact).unwrap(), 0.0);
        let mut pts = c.points().to_vec();
        pts.reverse();
        pts.swap(0, 1);
        let p = PointCloud::new(pts).unwrap();
        assert_eq!(earth_movers_distance(&c, &p, EmdMode::Exact).unwrap(), 0.0);
        let d = random_cloud(5, 3);
        assert!(matches!(earth_movers_distance(&c, &d, EmdMode::Exact), Err(Error::InvalidArgument(_))));
        assert!(earth_movers_distance(&c, &d, EmdMode::Entropic).is_ok());
    }

    #[test]
    fn entropic_emd_approximates_exact() {
        let a = random_cloud(64, 4);
        let b = random_cloud(64, 5);
        let exact = earth_movers_distance(&a, &b, EmdMode::Exact).unwrap();
        let cfg = EmdConfig {
            sinkhorn_points: 64,
            ..EmdConfig::default()
        };
        // Downsampling to the same size keeps every point, so the clouds are unchanged.
        let ent = earth_movers_distance_with(&a, &b, EmdMode::Entropic, &cfg).unwrap();
        assert!(ent >= exact - 1e-6, "{ent} < {exact}");
        assert!((ent - exact) / exact < 0.05, "{ent} vs {exact}");
    }

    #[test]
    fn large_clouds_are_subsampled_for_exact_emd() {
        let a = random_cloud(400, 6);
        let v = earth_movers_distance(&a, &a, EmdMode::Exact).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn report_round_trips_through_text() {
        let r = MetricReport {
            chamfer_mm: 1.25,
            emd_mm: 0.1 + 0.2,
            diameter_mse_mm2: 400.0,
        };
        let text = r.to_string();
        assert!(text.starts_with("chamfer_mm=1.25\n"));
        assert_eq!(MetricReport::parse(&text).unwrap(), r);
        assert!(MetricReport::parse("chamfer_mm=1").is_err());
    }
}
