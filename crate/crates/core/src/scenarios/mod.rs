//! Benchmark problems: a planar arm reaching over a table, single- and
//! two-finger box pushing, and a two-route point robot.

mod elbow;
mod kinematics;
mod push;
mod tworoute;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::SharedTarget;
use crate::path::{validate_skeleton, PathProblem, Skeleton, SuccessorTable};
use crate::scalar::Real;

pub use elbow::build_elbow;
pub use kinematics::PlanarChain;
pub use push::build_push;
pub use tworoute::{build_tworoute, probe, route_outcome, switching_threshold, RouteOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Elbow,
    Push,
    Tworoute,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::Elbow => "elbow",
            ScenarioName::Push => "push",
            ScenarioName::Tworoute => "tworoute",
        })
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elbow" => Ok(ScenarioName::Elbow),
            "push" => Ok(ScenarioName::Push),
            "tworoute" => Ok(ScenarioName::Tworoute),
            other => Err(Error::Scenario(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Numeric fixtures of a scenario. Fields that do not apply to a scenario
/// are ignored by its builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioParams {
    pub name: ScenarioName,
    /// Number of steps `N`.
    pub horizon: usize,
    /// Duration `T` in seconds.
    pub duration: f64,
    pub sigma: f64,
    /// Initial configuration `x_0`, also used for `x_{-1}`.
    pub start: Vec<f64>,
    /// Task target: end-effector position, box pose or robot position.
    pub target: Vec<f64>,
    pub target_weight: f64,
    /// Elbow: link lengths of the planar arm.
    pub link_lengths: Vec<f64>,
    /// Elbow: height of the arm base above the table.
    pub base_height: f64,
    /// Elbow: start of the contact window as a fraction of the horizon.
    /// Push: start of contact. Tworoute: step of the waypoint touch.
    pub window_fraction: f64,
    /// Push: half side length of the square box.
    pub box_half_size: f64,
    /// Push: contact points in the box frame, one per finger.
    pub contacts: Vec<[f64; 2]>,
    /// Push: weight of the box translation regularizer.
    pub object_weight: f64,
    /// Push: weight of the box rotation regularizer.
    pub rotation_weight: f64,
    /// Tworoute: waypoints A (near) and B (far).
    pub waypoints: Vec<[f64; 2]>,
}

impl ScenarioParams {
    pub fn defaults(name: ScenarioName) -> Self {
        let base = Self {
            name,
            horizon: 40,
            duration: 5.0,
            sigma: 0.1,
            start: Vec::new(),
            target: Vec::new(),
            target_weight: 10.0,
            link_lengths: Vec::new(),
            base_height: 0.0,
            window_fraction: 0.6,
            box_half_size: 0.0,
            contacts: Vec::new(),
            object_weight: 0.0,
            rotation_weight: 0.0,
            waypoints: Vec::new(),
        };
        match name {
            ScenarioName::Elbow => Self {
                sigma: 0.5,
                start: vec![1.3, -0.5, -0.5, -0.5],
                target: vec![1.6, 0.1],
                link_lengths: vec![0.5; 4],
                base_height: 0.2,
                ..base
            },
            ScenarioName::Push => Self {
                start: vec![-0.3, 0.0, -0.3, -0.2, 0.0, 0.0, 0.0],
                target: vec![0.25, 0.075, 0.15],
                target_weight: 3.0,
                window_fraction: 0.3,
                box_half_size: 0.1,
                contacts: vec![[-0.1, 0.06], [-0.1, -0.06]],
                object_weight: 10.0,
                rotation_weight: 1.0,
                ..base
            },
            ScenarioName::Tworoute => Self {
                start: vec![0.0, 0.0],
                target: vec![2.0, 0.0],
                window_fraction: 0.5,
                waypoints: vec![[1.0, -0.4], [1.0, 0.7]],
                ..base
            },
        }
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.horizon as f64
    }

    /// Step at which a fraction of the horizon begins, at least 1.
    pub fn step_at(&self, fraction: f64) -> usize {
        ((fraction * self.horizon as f64).round() as usize).clamp(1, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if self.horizon < 4 {
            return bad("horizon must be at least 4");
        }
        if !(self.duration > 0.0) || !(self.sigma > 0.0) || !(self.target_weight > 0.0) {
            return bad("duration, sigma and target weight must be positive");
        }
        if !(0.0..=1.0).contains(&self.window_fraction) {
            return bad("window fraction must lie in [0, 1]");
        }
        let finite = self.start.iter().chain(&self.target).all(|v| v.is_finite());
        if !finite {
            return bad("start and target must be finite");
        }
        Ok(())
    }
}

/// A built benchmark problem.
pub struct Scenario<T: Real> {
    pub params: ScenarioParams,
    pub problem: PathProblem<T>,
    pub skeletons: Vec<Skeleton<T>>,
    pub successors: SuccessorTable,
    /// Per-skeleton solver initialization.
    pub initial_paths: Vec<DVector<T>>,
    /// Final-configuration error used for rollout metrics.
    pub target: SharedTarget<T>,
    /// Direction of the disturbance probe, where the scenario defines one.
    pub disturbance_direction: Option<Vec<f64>>,
}

impl<T: Real> Scenario<T> {
    pub fn skeleton_ids(&self) -> Vec<String> {
        self.skeletons.iter().map(|s| s.id.clone()).collect()
    }

    pub fn skeleton_index(&self, id: &str) -> Option<usize> {
        self.skeletons.iter().position(|s| s.id == id)
    }

    /// Checks every skeleton against the successor table.
    pub fn validate(&self) -> Result<()> {
        for s in &self.skeletons {
            validate_skeleton(s, self.problem.horizon(), &self.successors).map_err(|v| {
                let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
                Error::InvalidSkeleton(format!("{}: {}", s.id, msg.join("; ")))
            })?;
        }
        Ok(())
    }

    pub fn record(&self) -> ScenarioRecord {
        ScenarioRecord {
            params: self.params.clone(),
            dim: self.problem.dim(),
            actuated: self.problem.actuated().to_vec(),
            costs: self
                .problem
                .costs()
                .iter()
                .map(|c| FeatureUse {
                    feature: c.feature.name().to_owned(),
                    rows: c.feature.dim(),
                    window: c.feature.window(),
                    steps: [c.steps.start, c.steps.end],
                })
                .collect(),
            skeletons: self
                .skeletons
                .iter()
                .map(|s| SkeletonRecord {
                    id: s.id.clone(),
                    eq_rows: s.eq_row_count(),
                    ineq_rows: s.ineq_row_count(),
                    modes: s
                        .modes
                        .iter()
                        .map(|m| ModeRecord {
                            symbol: m.symbol.clone(),
                            steps: [m.window.start, m.window.end],
                            eq: m.eq.iter().map(|f| f.name().to_owned()).collect(),
                            ineq: m.ineq.iter().map(|f| f.name().to_owned()).collect(),
                        })
                        .collect(),
                    switches: s
                        .switches
                        .iter()
                        .map(|w| SwitchRecord {
                            symbol: w.symbol.clone(),
                            step: w.at_step,
                            eq: w.eq.iter().map(|f| f.name().to_owned()).collect(),
                        })
                        .collect(),
                })
                .collect(),
            successors: self.successors.clone(),
        }
    }
}

/// Builds the scenario named in `params`.
pub fn build<T: Real>(params: &ScenarioParams) -> Result<Scenario<T>> {
    params.validate()?;
    let s = match params.name {
        ScenarioName::Elbow => build_elbow(params)?,
        ScenarioName::Push => build_push(params)?,
        ScenarioName::Tworoute => build_tworoute(params)?,
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureUse {
    pub feature: String,
    pub rows: usize,
    pub window: usize,
    pub steps: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModeRecord {
    pub symbol: String,
    pub steps: [usize; 2],
    pub eq: Vec<String>,
    pub ineq: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SwitchRecord {
    pub symbol: String,
    pub step: usize,
    pub eq: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkeletonRecord {
    pub id: String,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    pub modes: Vec<ModeRecord>,
    pub switches: Vec<SwitchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioRecord {
    pub params: ScenarioParams,
    pub dim: usize,
    pub actuated: Vec<usize>,
    pub costs: Vec<FeatureUse>,
    pub skeletons: Vec<SkeletonRecord>,
    pub successors: SuccessorTable,
}
