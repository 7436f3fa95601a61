//! Python module `pinchbot`: point clouds, metrics, the safety projection,
//! the clay simulator and trained-policy rollouts.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyValueError};
use pyo3::prelude::*;

use pinchbot::claysim::{self, GoalSpec, SimConfig};
use pinchbot::dataio;
use pinchbot::metrics::{self, EmdMode, MetricReport};
use pinchbot::policy::{rollout_policy, PolicyModel, RolloutOptions};
use pinchbot::safety;
use pinchbot::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingFile(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        e @ Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn sim(n_points: Option<usize>) -> SimConfig {
    let mut s = SimConfig::default();
    if let Some(n) = n_points {
        s.n_points = n;
    }
    s
}

#[pyclass(name = "PointCloud", module = "pinchbot", from_py_object)]
#[derive(Clone)]
struct PyPointCloud(pinchbot::PointCloud);

#[pymethods]
impl PyPointCloud {
    #[new]
    fn new(points: Vec<[f64; 3]>) -> PyResult<Self> {
        pinchbot::PointCloud::new(points).map(Self).map_err(to_py)
    }

    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points().to_vec()
    }

    fn centroid(&self) -> Option<[f64; 3]> {
        self.0.centroid()
    }

    /// Rotation by `theta` radians about the world z axis.
    fn rotated_about_z(&self, theta: f64) -> PyResult<Self> {
        pinchbot::geometry::rotate_about_z(&self.0, theta, (0.0, 0.0)).map(Self).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(n={})", self.0.len())
    }
}

#[pyclass(name = "PinchAction", module = "pinchbot", get_all, set_all, from_py_object)]
#[derive(Clone, Copy)]
struct PyPinchAction {
    x: f64,
    y: f64,
    z: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    d_ee: f64,
    gamma: f64,
}

impl From<claysim::PinchAction> for PyPinchAction {
    fn from(a: claysim::PinchAction) -> Self {
        Self {
            x: a.x,
            y: a.y,
            z: a.z,
            rx: a.rx,
            ry: a.ry,
            rz: a.rz,
            d_ee: a.d_ee,
            gamma: a.gamma,
        }
    }
}

impl From<PyPinchAction> for claysim::PinchAction {
    fn from(a: PyPinchAction) -> Self {
        Self {
            x: a.x,
            y: a.y,
            z: a.z,
            rx: a.rx,
            ry: a.ry,
            rz: a.rz,
            d_ee: a.d_ee,
            gamma: a.gamma,
        }
    }
}

#[pymethods]
impl PyPinchAction {
    #[new]
    #[pyo3(signature = (x, y, z, rx=0.0, ry=0.0, rz=0.0, d_ee=0.01, gamma=-1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(x: f64, y: f64, z: f64, rx: f64, ry: f64, rz: f64, d_ee: f64, gamma: f64) -> Self {
        Self { x, y, z, rx, ry, rz, d_ee, gamma }
    }

    fn to_list(&self) -> [f64; 8] {
        claysim::PinchAction::from(*self).to_array()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", claysim::PinchAction::from(*self))
    }
}

#[pyclass(name = "SafetyCircle", module = "pinchbot", get_all, from_py_object)]
#[derive(Clone, Copy)]
struct PySafetyCircle {
    center: (f64, f64),
    radius: f64,
    inlier_fraction: f64,
}

impl PySafetyCircle {
    fn inner(&self) -> safety::SafetyCircle {
        safety::SafetyCircle {
            center: self.center,
            radius: self.radius,
            inlier_fraction: self.inlier_fraction,
        }
    }
}

#[pymethods]
impl PySafetyCircle {
    fn diameter(&self) -> f64 {
        self.inner().diameter()
    }

    fn radial_distance(&self, x: f64, y: f64) -> f64 {
        self.inner().radial_distance(x, y)
    }

    fn __repr__(&self) -> String {
        format!("SafetyCircle(center={:?}, radius={})", self.center, self.radius)
    }
}

#[pyclass(name = "ClayState", module = "pinchbot", from_py_object)]
#[derive(Clone)]
struct PyClayState(claysim::ClayState);

#[pymethods]
impl PyClayState {
    #[getter]
    fn cloud(&self) -> PyPointCloud {
        PyPointCloud(self.0.cloud.clone())
    }

    #[getter]
    fn volume_proxy(&self) -> f64 {
        self.0.volume_proxy
    }
}

#[pyfunction]
fn chamfer_distance(a: &PyPointCloud, b: &PyPointCloud) -> PyResult<f64> {
    metrics::chamfer_distance(&a.0, &b.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, mode="exact"))]
fn earth_movers_distance(a: &PyPointCloud, b: &PyPointCloud, mode: &str) -> PyResult<f64> {
    let mode: EmdMode = mode.parse().map_err(to_py)?;
    metrics::earth_movers_distance(&a.0, &b.0, mode).map_err(to_py)
}

/// Chamfer (mm), EMD (mm) and squared diameter error (mm^2) of a final state.
#[pyfunction]
fn evaluate(final_cloud: &PyPointCloud, goal: &PyPointCloud, goal_diameter: f64) -> PyResult<HashMap<&'static str, f64>> {
    let r = MetricReport::evaluate(&final_cloud.0, &goal.0, goal_diameter).map_err(to_py)?;
    Ok(r.entries().into_iter().collect())
}

#[pyfunction]
fn fit_safety_circle(cloud: &PyPointCloud) -> PyResult<PySafetyCircle> {
    let c = safety::fit_safety_circle(&cloud.0).map_err(to_py)?;
    Ok(PySafetyCircle {
        center: c.center,
        radius: c.radius,
        inlier_fraction: c.inlier_fraction,
    })
}

#[pyfunction]
fn project_action(action: PyPinchAction, circle: PySafetyCircle) -> PyPinchAction {
    safety::project_action(&action.into(), &circle.inner()).into()
}

#[pyfunction]
#[pyo3(signature = (height, seed, n_points=None))]
fn new_clay_cylinder(height: f64, seed: u64, n_points: Option<usize>) -> PyResult<PyClayState> {
    claysim::new_clay_cylinder(&sim(n_points), height, seed).map(PyClayState).map_err(to_py)
}

#[pyfunction]
fn apply_pinch(state: &PyClayState, action: PyPinchAction) -> PyClayState {
    PyClayState(claysim::apply_pinch(&SimConfig::default(), &state.0, &action.into()))
}

#[pyfunction]
fn goal_cloud(diameter: f64, n_points: usize) -> PyResult<PyPointCloud> {
    let spec = GoalSpec::from_diameter(diameter, &SimConfig::default()).map_err(to_py)?;
    claysim::generate_goal_cloud(&spec, n_points).map(PyPointCloud).map_err(to_py)
}

/// Writes `n` scripted demonstrations to `out` and returns their lengths.
#[pyfunction]
#[pyo3(signature = (n, seed, out, n_points=None))]
fn generate_demos(n: usize, seed: u64, out: PathBuf, n_points: Option<usize>) -> PyResult<Vec<usize>> {
    let demos = claysim::generate_demos(&sim(n_points), n, seed).map_err(to_py)?;
    dataio::save_dataset(&demos, &out).map_err(to_py)?;
    Ok(demos.iter().map(|d| d.len()).collect())
}

/// Final states of every trajectory in a dataset directory.
#[pyfunction]
fn load_final_states(dir: PathBuf) -> PyResult<Vec<PyPointCloud>> {
    let data = dataio::load_dataset(&dir).map_err(to_py)?;
    Ok(data.into_iter().map(|t| PyPointCloud(t.final_state)).collect())
}

#[pyclass(name = "RolloutResult", module = "pinchbot", get_all)]
struct PyRolloutResult {
    actions: Vec<PyPinchAction>,
    final_state: PyPointCloud,
    chamfer_mm: f64,
    emd_mm: f64,
    diameter_mse_mm2: f64,
    terminated_by_gamma: bool,
    projected: usize,
    inside_circle: usize,
}

#[pyclass(name = "Policy", module = "pinchbot")]
struct PyPolicy(PolicyModel<f32>);

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PolicyModel::load(&path).map(Self).map_err(to_py)
    }

    #[pyo3(signature = (goal_diameter, max_actions=80, project=true, seed=0, initial_height=0.065, n_points=None))]
    fn rollout(
        &self,
        goal_diameter: f64,
        max_actions: usize,
        project: bool,
        seed: u64,
        initial_height: f64,
        n_points: Option<usize>,
    ) -> PyResult<PyRolloutResult> {
        let s = sim(n_points);
        let goal = GoalSpec::from_diameter(goal_diameter, &s).map_err(to_py)?;
        let init = claysim::new_clay_cylinder(&s, initial_height, seed).map_err(to_py)?;
        let opts = RolloutOptions { max_actions, project, seed };
        let r = rollout_policy(&self.0, &s, &init, &goal, &opts).map_err(to_py)?;
        Ok(PyRolloutResult {
            actions: r.trajectory.actions().map(|&a| a.into()).collect(),
            final_state: PyPointCloud(r.trajectory.final_state.clone()),
            chamfer_mm: r.report.chamfer_mm,
            emd_mm: r.report.emd_mm,
            diameter_mse_mm2: r.report.diameter_mse_mm2,
            terminated_by_gamma: r.terminated_by_gamma,
            projected: r.projected,
            inside_circle: r.inside_circle,
        })
    }
}

#[pymodule]
#[pyo3(name = "pinchbot")]
fn pinchbot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyPinchAction>()?;
    m.add_class::<PySafetyCircle>()?;
    m.add_class::<PyClayState>()?;
    m.add_class::<PyRolloutResult>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(earth_movers_distance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_safety_circle, m)?)?;
    m.add_function(wrap_pyfunction!(project_action, m)?)?;
    m.add_function(wrap_pyfunction!(new_clay_cylinder, m)?)?;
    m.add_function(wrap_pyfunction!(apply_pinch, m)?)?;
    m.add_function(wrap_pyfunction!(goal_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(generate_demos, m)?)?;
    m.add_function(wrap_pyfunction!(load_final_states, m)?)?;
    Ok(())
}
