use super::{PolicyModel, Variant};
use crate::claysim::{
    apply_pinch, bowl_cloud, default_goal_height, generate_goal_cloud, ClayState, GoalSpec, PinchAction, SimConfig,
};
use crate::dataio::{Step, Trajectory, TrajectoryMeta};
use crate::diffcore::Scalar;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::MetricReport;
use crate::safety::{fit_safety_circle, project_action, BOUNDARY_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub max_actions: usize,
    pub project: bool,
    pub seed: u64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            max_actions: 80,
            project: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    pub report: MetricReport,
    /// Stopped on an executed action's gamma rather than the action limit.
    pub terminated_by_gamma: bool,
    pub hit_max_actions: bool,
    pub replans: usize,
    /// Executed actions whose (x, y) was moved by the projection.
    pub projected: usize,
    /// Executed actions strictly inside the safety circle fitted just before them.
    pub inside_circle: usize,
}

/// `n` intermediate bowls whose diameters step from `current_diameter` to the
/// goal in equal fractions `j / n`, `j = 1..=n`.
pub fn synthesize_subgoals(current_diameter: f64, goal: &GoalSpec, sim: &SimConfig, n: usize, n_points: usize) -> Vec<PointCloud> {
    (1..=n)
        .map(|j| {
            let f = j as f64 / n as f64;
            let d = current_diameter + f * (goal.diameter - current_diameter);
            let spec = if j == n {
                *goal
            } else {
                GoalSpec {
                    diameter: d,
                    height: default_goal_height(d),
                    wall_angle: sim.default_wall_angle(d),
                }
            };
            bowl_cloud(&spec, n_points)
        })
        .collect()
}

fn replan_seed(seed: u64, replan: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(replan as u64)
}

/// Receding-horizon control: sample a window, execute its first
/// `execution_horizon` actions, re-observe, repeat until an executed action's
/// gamma crosses the stop threshold or `max_actions` have run.
///
/// With `project`, every action is projected against the circle fitted to the
/// state it is applied to.
pub fn rollout_policy<F: Scalar>(
    model: &PolicyModel<F>,
    sim: &SimConfig,
    initial: &ClayState,
    goal: &GoalSpec,
    opts: &RolloutOptions,
) -> Result<RolloutResult> {
    if opts.max_actions == 0 {
        return Err(Error::invalid("max_actions must be >= 1"));
    }
    let goal_cloud = generate_goal_cloud(goal, sim.n_points)?;
    let cfg = &model.config;
    let mut state = initial.clone();
    let mut steps: Vec<Step> = Vec::new();
    let mut prev: Option<PinchAction> = None;
    let (mut replans, mut projected, mut inside) = (0, 0, 0);
    let mut terminated = false;
    'control: while steps.len() < opts.max_actions {
        let goals = match cfg.variant {
            Variant::Subgoal => {
                let d = fit_safety_circle(&state.cloud)?.diameter();
                synthesize_subgoals(d, goal, sim, cfg.n_subgoals(), sim.n_points)
            }
            _ => vec![goal_cloud.clone()],
        };
        let cond = model.condition(&state.cloud, &goals, prev.as_ref())?;
        let window = model.sample_actions(&cond, replan_seed(opts.seed, replans))?;
        replans += 1;
        for mut action in window.into_iter().take(cfg.execution_horizon) {
            let circle = fit_safety_circle(&state.cloud)?;
            if opts.project {
                let p = project_action(&action, &circle);
                if p != action {
                    projected += 1;
                }
                action = p;
            }
            if circle.radial_distance(action.x, action.y) < circle.radius - BOUNDARY_TOL {
                inside += 1;
            }
            let next = apply_pinch(sim, &state, &action);
            steps.push(Step {
                state: state.cloud,
                action,
            });
            state = next;
            prev = Some(action);
            if cfg.should_stop(action.gamma) {
                terminated = true;
                break 'control;
            }
            if steps.len() >= opts.max_actions {
                break 'control;
            }
        }
    }
    let report = MetricReport::evaluate(&state.cloud, &goal_cloud, goal.diameter)?;
    let trajectory = Trajectory {
        id: format!("rollout-{}", opts.seed),
        goal: goal_cloud,
        steps,
        final_state: state.cloud,
        meta: TrajectoryMeta {
            initial_height: initial.cloud.max_z().unwrap_or(0.0),
            goal_diameter: goal.diameter,
            seed: opts.seed,
        },
    };
    Ok(RolloutResult {
        hit_max_actions: !terminated,
        trajectory,
        report,
        terminated_by_gamma: terminated,
        replans,
        projected,
        inside_circle: inside,
    })
}
