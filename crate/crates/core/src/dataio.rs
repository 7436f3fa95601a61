//! Trajectory datasets on disk and z-rotation augmentation.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! clouds/<traj>/goal.f32
//! clouds/<traj>/<step>.f32     one per state, including the final state
//! ```
//!
//! Cloud files are raw little-endian `f32` triples (x, y, z interleaved); the
//! point count lives in the manifest. Actions are stored in the manifest as
//! eight JSON numbers, which round-trip `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::claysim::PinchAction;
use crate::error::{Error, Result};
use crate::geometry::{rotate_about_z, PointCloud};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AUGMENT_FILE: &str = "augment.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub initial_height: f64,
    pub goal_diameter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: PointCloud,
    pub action: PinchAction,
}

/// Goal cloud plus alternating (state, action) pairs and the state reached
/// after the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub goal: PointCloud,
    pub steps: Vec<Step>,
    pub final_state: PointCloud,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State before action `k`; `k == len()` is the final state.
    pub fn state(&self, k: usize) -> &PointCloud {
        if k < self.steps.len() {
            &self.steps[k].state
        } else {
            &self.final_state
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = &PinchAction> {
        self.steps.iter().map(|s| &s.action)
    }

    /// Exactly one `gamma = +1`, on the last action; all others `-1`.
    pub fn has_binary_labels(&self) -> bool {
        let n = self.steps.len();
        n > 0
            && self
                .steps
                .iter()
                .enumerate()
                .all(|(k, s)| s.action.gamma == if k + 1 == n { 1.0 } else { -1.0 })
    }

    pub fn validate(&self, labels: LabelKind) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Validation(format!("trajectory '{}' has no actions", self.id)));
        }
        for (k, s) in self.steps.iter().enumerate() {
            s.action
                .validate()
                .map_err(|e| Error::Validation(format!("trajectory '{}' action {k}: {e}", self.id)))?;
        }
        if labels == LabelKind::Binary && !self.has_binary_labels() {
            return Err(Error::Validation(format!(
                "trajectory '{}' must have gamma = -1 everywhere except +1 on its last action",
                self.id
            )));
        }
        Ok(())
    }

    /// Rotates every cloud and action about the workspace z-axis.
    pub fn rotated_about_z(&self, theta: f64) -> Result<Self> {
        let rot = |c: &PointCloud| rotate_about_z(c, theta, (0.0, 0.0));
        Ok(Self {
            id: self.id.clone(),
            goal: rot(&self.goal)?,
            steps: self
                .steps
                .iter()
                .map(|s| {
                    Ok(Step {
                        state: rot(&s.state)?,
                        action: s.action.rotated_about_z(theta),
                    })
                })
                .collect::<Result<_>>()?,
            final_state: rot(&self.final_state)?,
            meta: self.meta,
        })
    }

    /// Copy with all clouds rounded to `f32`, i.e. exactly what a save/load cycle yields.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            id: self.id.clone(),
            goal: self.goal.to_f32_precision(),
            steps: self
                .steps
                .iter()
                .map(|s| Step {
                    state: s.state.to_f32_precision(),
                    action: s.action,
                })
                .collect(),
            final_state: self.final_state.to_f32_precision(),
            meta: self.meta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    /// Demonstration labels: `gamma ∈ {-1, +1}`, +1 only on the last action.
    Binary,
    /// Any `gamma` in `[-1, 1]` (policy rollouts).
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudRef {
    pub file: String,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub file: String,
    pub points: usize,
    pub action: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub meta: TrajectoryMeta,
    pub goal: CloudRef,
    pub steps: Vec<StepRecord>,
    pub final_state: CloudRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub labels: LabelKind,
    pub trajectories: Vec<TrajectoryRecord>,
}

fn write_cloud(root: &Path, rel: &str, cloud: &PointCloud) -> Result<CloudRef> {
    let mut bytes = Vec::with_capacity(cloud.len() * 12);
    for p in cloud.points() {
        for c in p {
            bytes.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    let path = root.join(rel);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(CloudRef {
        file: rel.to_string(),
        points: cloud.len(),
    })
}

fn read_cloud(root: &Path, rel: &str, points: usize) -> Result<PointCloud> {
    let path = root.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != points * 12 {
        return Err(Error::format(
            &path,
            format!("expected {} bytes for {points} points, found {}", points * 12, bytes.len()),
        ));
    }
    let pts = bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    PointCloud::new(pts).map_err(|e| Error::format(&path, e.to_string()))
}

/// Writes `manifest.json` and one binary file per cloud. Clouds are stored as `f32`.
pub fn save_dataset(trajectories: &[Trajectory], dir: &Path) -> Result<Manifest> {
    let labels = if trajectories.iter().all(Trajectory::has_binary_labels) {
        LabelKind::Binary
    } else {
        LabelKind::Free
    };
    for t in trajectories {
        t.validate(labels)?;
    }
    let clouds = dir.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;

    let mut records = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.iter().enumerate() {
        let tdir = format!("{i:04}");
        let abs = clouds.join(&tdir);
        fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        let goal = write_cloud(dir, &format!("clouds/{tdir}/goal.f32"), &t.goal)?;
        let steps = t
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let r = write_cloud(dir, &format!("clouds/{tdir}/{k}.f32"), &s.state)?;
                Ok(StepRecord {
                    file: r.file,
                    points: r.points,
                    action: s.action.to_array(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_state = write_cloud(dir, &format!("clouds/{tdir}/{}.f32", t.steps.len()), &t.final_state)?;
        records.push(TrajectoryRecord {
            id: t.id.clone(),
            meta: t.meta,
            goal,
            steps,
            final_state,
        });
    }

    let manifest = Manifest {
        version: FORMAT_VERSION,
        labels,
        trajectories: records,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: manifest.version,
        });
    }
    Ok(manifest)
}

/// Loads and validates a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<Trajectory>> {
    let manifest = read_manifest(dir)?;
    manifest
        .trajectories
        .iter()
        .map(|r| {
            let t = Trajectory {
                id: r.id.clone(),
                goal: read_cloud(dir, &r.goal.file, r.goal.points)?,
                steps: r
                    .steps
                    .iter()
                    .map(|s| {
                        Ok(Step {
                            state: read_cloud(dir, &s.file, s.points)?,
                            action: PinchAction::from_array(s.action),
                        })
                    })
                    .collect::<Result<_>>()?,
                final_state: read_cloud(dir, &r.final_state.file, r.final_state.points)?,
                meta: r.meta,
            };
            t.validate(manifest.labels)?;
            Ok(t)
        })
        .collect()
}

/// Writes one `x y z` line per point.
pub fn export_ascii(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * 32);
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2]).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Lazily rotated view over a base dataset: every trajectory at every angle in
/// `{0, step, 2·step, …}` degrees. Index `i` maps to base trajectory
/// `i / rotations` at angle `(i % rotations) · step`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub base: Vec<Trajectory>,
    pub step_deg: f64,
    rotations: usize,
}

impl AugmentedDataset {
    /// The identity view (a single 0° copy of each trajectory).
    pub fn identity(base: Vec<Trajectory>) -> Self {
        Self {
            base,
            step_deg: 360.0,
            rotations: 1,
        }
    }

    pub fn rotations(&self) -> usize {
        self.rotations
    }

    pub fn len(&self) -> usize {
        self.base.len() * self.rotations
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn angle(&self, rotation: usize) -> f64 {
        (rotation as f64 * self.step_deg).to_radians()
    }

    pub fn split_index(&self, i: usize) -> (usize, usize) {
        (i / self.rotations, i % self.rotations)
    }

    pub fn get(&self, i: usize) -> Result<Trajectory> {
        if i >= self.len() {
            return Err(Error::invalid(format!("index {i} out of range for {} trajectories", self.len())));
        }
        let (t, k) = self.split_index(i);
        let base = &self.base[t];
        if k == 0 {
            return Ok(base.clone());
        }
        let mut rotated = base.rotated_about_z(self.angle(k))?;
        rotated.id = format!("{}-rot{}", base.id, k as f64 * self.step_deg);
        Ok(rotated)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Trajectory>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn materialize(&self) -> Result<Vec<Trajectory>> {
        self.iter().collect()
    }
}

/// Rotation augmentation in `step_deg` increments; `360 / step_deg` must be an integer.
pub fn augment_rotations(dataset: Vec<Trajectory>, step_deg: f64) -> Result<AugmentedDataset> {
    if !(step_deg > 0.0) || !step_deg.is_finite() {
        return Err(Error::invalid("rotation step must be positive"));
    }
    let ratio = 360.0 / step_deg;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!("rotation step {step_deg}° does not divide 360°")));
    }
    Ok(AugmentedDataset {
        base: dataset,
        step_deg,
        rotations: ratio.round() as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRecord {
    pub version: u32,
    pub source: PathBuf,
    pub step_deg: f64,
}

/// Records a stream-on-load augmentation of `source` in `dir`.
pub fn save_augment_record(dir: &Path, source: &Path, step_deg: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rec = AugmentRecord {
        version: FORMAT_VERSION,
        source: source.to_path_buf(),
        step_deg,
    };
    let path = dir.join(AUGMENT_FILE);
    let text = serde_json::to_string_pretty(&rec).expect("record serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads either a plain dataset directory (identity view) or an augmentation
/// record pointing at one.
pub fn load_training_source(dir: &Path) -> Result<AugmentedDataset> {
    let aug = dir.join(AUGMENT_FILE);
    if aug.exists() {
        let text = fs::read_to_string(&aug).map_err(|e| Error::io(&aug, e))?;
        let rec: AugmentRecord = serde_json::from_str(&text).map_err(|e| Error::format(&aug, e.to_string()))?;
        if rec.version != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION,
                found: rec.version,
            });
        }
        let source = if rec.source.is_absolute() { rec.source.clone() } else { dir.join(&rec.source) };
        augment_rotations(load_dataset(&source)?, rec.step_deg)
    } else {
        Ok(AugmentedDataset::identity(load_dataset(dir)?))
    }
}
