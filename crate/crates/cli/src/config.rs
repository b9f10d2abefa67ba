//! Run configuration: scenario defaults, overlaid by a JSON document, then by
//! `--set key=value` dot-path overrides.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use slgp_core::exec::{ControllerMode, Disturbance};
use slgp_core::kodp::KodpConfig;
use slgp_core::laplace::{LaplaceConfig, PriorMode};
use slgp_core::plan::PlanConfig;
use slgp_core::scenarios::{ScenarioName, ScenarioParams};
use slgp_core::solver::SolverConfig;

pub const RUN_CONFIG_SCHEMA: &str = "slgp.run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema")]
    pub schema: String,
    pub scenario: ScenarioParams,
    pub solver: SolverConfig,
    pub laplace: LaplaceConfig,
    pub kodp: KodpConfig,
    pub prior_mode: PriorMode,
    pub controller_mode: ControllerMode,
    pub hysteresis: f64,
    /// Multiplier on the scenario's `sigma` for execution noise.
    pub noise_scale: f64,
    pub disturbances: Vec<Disturbance>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn schema() -> String {
    RUN_CONFIG_SCHEMA.to_owned()
}

impl RunConfig {
    pub fn defaults(name: ScenarioName) -> Self {
        Self {
            schema: schema(),
            scenario: ScenarioParams::defaults(name),
            solver: SolverConfig::default(),
            laplace: LaplaceConfig::default(),
            kodp: KodpConfig::default(),
            prior_mode: PriorMode::default(),
            controller_mode: ControllerMode::default(),
            hysteresis: 0.0,
            noise_scale: 1.0,
            disturbances: Vec::new(),
            seeds: vec![1],
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            solver: self.solver.clone(),
            laplace: self.laplace,
            kodp: self.kodp,
            prior_mode: self.prior_mode,
        }
    }

    pub fn validate(&self, simulate: bool) -> Result<()> {
        self.scenario.validate()?;
        self.plan_config().validate()?;
        if !(self.hysteresis >= 0.0) {
            bail!("hysteresis must be nonnegative");
        }
        if !(self.noise_scale >= 0.0) {
            bail!("noiseScale must be nonnegative");
        }
        if simulate && self.seeds.is_empty() {
            bail!("simulate needs at least one seed");
        }
        for d in &self.disturbances {
            if d.step == 0 || d.step > self.scenario.horizon {
                bail!("disturbance step {} outside [1, {}]", d.step, self.scenario.horizon);
            }
            if d.offset.iter().any(|v| !v.is_finite()) {
                bail!("disturbance at step {} has a non-finite offset", d.step);
            }
        }
        Ok(())
    }
}

/// Command-line level overrides, applied after the JSON layers.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioName>,
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub controller: Option<ControllerMode>,
    pub noise: Option<f64>,
    pub disturb: Vec<String>,
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub trace: bool,
}

pub fn resolve(o: &Overrides) -> Result<RunConfig> {
    let file = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let name = match (o.scenario, &file) {
        (Some(n), _) => n,
        (None, Some(v)) => match v.pointer("/scenario/name") {
            Some(n) => serde_json::from_value(n.clone()).context("scenario.name")?,
            None => ScenarioName::Elbow,
        },
        (None, None) => ScenarioName::Elbow,
    };
    let mut value = serde_json::to_value(RunConfig::defaults(name))?;
    if let Some(f) = file {
        merge(&mut value, f, "")?;
    }
    set_path(&mut value, "scenario.name", serde_json::to_value(name)?)?;
    for kv in &o.set {
        let (key, raw) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{kv}`"))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        set_path(&mut value, key.trim(), v)?;
    }
    let mut config: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    if let Some(m) = o.controller {
        config.controller_mode = m;
    }
    if let Some(s) = o.noise {
        config.noise_scale = s;
    }
    if !o.disturb.is_empty() {
        config.disturbances = o.disturb.iter().map(|d| parse_disturbance(d)).collect::<Result<_>>()?;
    }
    if let Some(s) = &o.seeds {
        config.seeds = parse_seeds(s)?;
    }
    if let Some(out) = &o.out {
        config.output_dir = out.clone();
    }
    if o.trace {
        config.solver.trace = true;
    }
    Ok(config)
}

/// Recursive object merge; non-object values in `top` replace `base`. Keys
/// absent from `base` are rejected.
pub fn merge(base: &mut Value, top: Value, path: &str) -> Result<()> {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| anyhow!("unknown configuration key `{sub}`"))?;
                merge(slot, v, &sub)?;
            }
        }
        (b, t) => *b = t,
    }
    Ok(())
}

/// Replaces the existing entry at a dot-separated path; numeric segments
/// index arrays.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("malformed key `{path}`");
    }
    let mut cur = root;
    for seg in &segments {
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| anyhow!("`{seg}` in `{path}` is not an array index"))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| anyhow!("index {idx} out of range in `{path}`"))?
            }
            Value::Object(map) => map
                .get_mut(*seg)
                .ok_or_else(|| anyhow!("unknown configuration key `{path}`"))?,
            _ => bail!("`{path}` descends into a scalar"),
        };
    }
    *cur = value;
    Ok(())
}

/// `step:dx,dy,...`.
pub fn parse_disturbance(s: &str) -> Result<Disturbance> {
    let (step, offset) = s.split_once(':').ok_or_else(|| anyhow!("--disturb expects step:dx,dy,..., got `{s}`"))?;
    let step = step.trim().parse().with_context(|| format!("disturbance step in `{s}`"))?;
    let offset = offset
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("disturbance offset in `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Disturbance { step, offset })
}

/// `a..b` (inclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().with_context(|| format!("seed range `{s}`"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("seed range `{s}`"))?;
            if b < a {
                bail!("empty seed range `{s}`");
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![s.trim().parse().with_context(|| format!("seed `{s}`"))?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_overrides_nested_values() {
        let o = Overrides {
            scenario: Some(ScenarioName::Tworoute),
            set: vec!["solver.muInit=2".into(), "scenario.waypoints.1.1=0.9".into(), "priorMode=uniformWithNa".into()],
            ..Overrides::default()
        };
        let c = resolve(&o).unwrap();
        assert_eq!(c.solver.mu_init, 2.0);
        assert_eq!(c.scenario.waypoints[1], [1.0, 0.9]);
        assert_eq!(c.prior_mode, PriorMode::UniformWithNa);
        assert_eq!(c.scenario.name, ScenarioName::Tworoute);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let o = Overrides {
            set: vec!["solver.bogus=1".into()],
            ..Overrides::default()
        };
        assert!(resolve(&o).is_err());
        let o = Overrides {
            set: vec!["nothing=1".into()],
            ..Overrides::default()
        };
        assert!(resolve(&o).is_err());
    }

    #[test]
    fn merge_replaces_leaves_and_rejects_unknown_keys() {
        let mut a = json!({"a": {"b": 1, "c": 2}, "d": [1, 2]});
        merge(&mut a, json!({"a": {"b": 5}, "d": [3]}), "").unwrap();
        assert_eq!(a, json!({"a": {"b": 5, "c": 2}, "d": [3]}));
        assert!(merge(&mut a, json!({"a": {"x": 1}}), "").is_err());
    }

    #[test]
    fn flag_syntax() {
        assert_eq!(parse_seeds("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..1").is_err());
        let d = parse_disturbance("12:0.0,0.8").unwrap();
        assert_eq!((d.step, d.offset), (12, vec![0.0, 0.8]));
        assert!(parse_disturbance("12").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::defaults(ScenarioName::Push);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
