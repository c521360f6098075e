//! Scenario files and the built-in scenarios.

use serde::{Deserialize, Serialize};

use bwsurge_core::alloc::AllocationSpec;
use bwsurge_core::ctmc::SimConfig;
use bwsurge_core::{NetworkModel, TrafficClass, TrafficProfile};

use crate::CliError;

pub const BUILTINS: [&str; 3] = ["dps3", "tree", "linear-surge"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: NetworkModel,
    /// Defaults to the constant arrival rates of the surging classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<TrafficProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluid: Option<FluidSection>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Scaling parameters, strictly increasing.
    pub k: Vec<u64>,
    pub horizon: f64,
    pub step: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub initial_surge: Vec<f64>,
    #[serde(default)]
    pub initial_stable: Vec<u64>,
    #[serde(default = "yes")]
    pub scale_weights: bool,
    /// Window length for class window averages of the first replication.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

impl SimSection {
    pub fn config(&self, k: u64, seed: u64) -> SimConfig {
        SimConfig {
            k,
            horizon: self.horizon,
            step: self.step,
            seed,
            initial_surge: self.initial_surge.clone(),
            initial_stable: self.initial_stable.clone(),
            scale_weights: self.scale_weights,
            record_path: self.window.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidMethod {
    /// Averaged rates from the frozen stationary laws.
    #[default]
    Averaged,
    /// Closed form of work-conserving networks.
    FastPath,
    /// Streaming/elastic link, truncated Poisson streaming law.
    StreamExact,
    /// Streaming/elastic link, untruncated Poisson law.
    StreamPoisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub u0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub method: FluidMethod,
    /// Upper corner of the equilibrium search box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub trajectories: bool,
    #[serde(default = "yes")]
    pub fluid: bool,
    #[serde(default)]
    pub window_averages: bool,
    #[serde(default)]
    pub equilibrium_report: bool,
    /// Target blocking probability for the QoS report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos_p_m: Option<f64>,
    /// Surge values at which to dump the frozen stationary law.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stationary_at: Vec<Vec<f64>>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            trajectories: true,
            fluid: true,
            window_averages: false,
            equilibrium_report: false,
            qos_p_m: None,
            stationary_at: Vec::new(),
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-8
}

impl Scenario {
    pub fn profile(&self) -> TrafficProfile {
        self.profile
            .clone()
            .unwrap_or_else(|| TrafficProfile::constant(&self.model))
    }

    pub fn label(&self) -> &str {
        if self.name.is_empty() {
            "scenario"
        } else {
            &self.name
        }
    }

    /// Every consistency problem of the scenario.
    pub fn validate(&self) -> Vec<String> {
        let mut out: Vec<String> = self.model.validate().iter().map(|v| format!("model: {v}")).collect();
        if !out.is_empty() {
            return out;
        }
        let c = self.model.surge_count;
        if let Some(p) = &self.profile {
            out.extend(p.validate(&self.model).iter().map(|v| format!("profile: {v}")));
        }
        if let Some(sim) = &self.sim {
            if sim.k.is_empty() {
                out.push("sim: k needs at least one value".into());
            }
            if sim.k.windows(2).any(|w| w[1] <= w[0]) {
                out.push("sim: k values must be strictly increasing".into());
            }
            if sim.replications == 0 {
                out.push("sim: replications must be >= 1".into());
            }
            if let Some(&k) = sim.k.first() {
                out.extend(sim.config(k, sim.seed).violations(&self.model).into_iter().map(|v| format!("sim: {v}")));
            }
            if let Some(s) = sim.window {
                if !(s >= sim.step) {
                    out.push(format!("sim: window {s} is shorter than the grid step {}", sim.step));
                }
            }
        }
        if let Some(f) = &self.fluid {
            if f.u0.len() != c {
                out.push(format!("fluid: u0 has {} entries, model has {c} surging classes", f.u0.len()));
            }
            if f.u0.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
                out.push("fluid: u0 must be finite and >= 0".into());
            }
            if !(f.horizon > 0.0 && f.step > 0.0 && f.step <= f.horizon) {
                out.push("fluid: need 0 < step <= horizon".into());
            }
            if !(f.tol > 0.0) {
                out.push("fluid: tol must be positive".into());
            }
            if let Some(u) = &f.upper {
                if u.len() != c || u.iter().any(|v| !(*v > 0.0)) {
                    out.push("fluid: upper must have one positive entry per surging class".into());
                }
            }
            let stream = matches!(self.model.allocation, AllocationSpec::StreamElastic { .. });
            if matches!(f.method, FluidMethod::StreamExact | FluidMethod::StreamPoisson) && !stream {
                out.push("fluid: stream methods need the stream_elastic allocation".into());
            }
        }
        if let Some(p) = self.outputs.qos_p_m {
            if !(p > 0.0 && p < 1.0) {
                out.push(format!("outputs: qos_p_m = {p} must lie in (0, 1)"));
            }
            if !matches!(self.model.allocation, AllocationSpec::StreamElastic { .. }) {
                out.push("outputs: a QoS report needs the stream_elastic allocation".into());
            }
        }
        for z in &self.outputs.stationary_at {
            if z.len() != c || z.iter().any(|v| !(*v >= 0.0)) {
                out.push(format!("outputs: stationary_at point {z:?} needs {c} nonnegative entries"));
            }
        }
        if self.outputs.window_averages && self.sim.as_ref().and_then(|s| s.window).is_none() {
            out.push("outputs: window_averages needs sim.window".into());
        }
        out
    }
}

/// Parse a scenario, reporting the line and column of syntax errors.
pub fn parse(text: &str) -> Result<Scenario, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Validation(format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

/// Load a scenario file, or a built-in scenario by name.
pub fn load(arg: &str) -> Result<Scenario, CliError> {
    let path = std::path::Path::new(arg);
    if !path.exists() {
        if let Some(s) = builtin(arg) {
            return Ok(s);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {arg}: {e} (built-in scenarios: {})", BUILTINS.join(", "))))?;
    parse(&text)
}

/// Three-class DPS link: class 1 surges, classes 2 and 3 have loads 0.3 and
/// 0.1, so the fluid line has slope -0.1.
pub fn dps3_model() -> NetworkModel {
    NetworkModel::new(
        vec![
            TrafficClass::surge(0.5, 1.0),
            TrafficClass::stable(3.0, 10.0),
            TrafficClass::stable(1.0, 10.0),
        ],
        AllocationSpec::Dps { capacity: 1.0 },
        1,
    )
}

/// Tree network with `c1 = 0.4`, `c2 = 0.8` and `rho2 = 0.5`.
pub fn tree_model(rho1: f64) -> NetworkModel {
    NetworkModel::new(
        vec![TrafficClass::surge(rho1, 1.0), TrafficClass::stable(0.5, 1.0)],
        AllocationSpec::Tree { c1: 0.4, c2: 0.8 },
        1,
    )
}

/// Linear network with unit capacities: class 1 on both links, classes 2
/// and 3 on one link each.
pub fn linear_model() -> NetworkModel {
    NetworkModel::new(
        vec![
            TrafficClass::surge(0.89, 1.0),
            TrafficClass::stable(0.5, 10.0),
            TrafficClass::stable(0.004, 0.2),
        ],
        AllocationSpec::ProportionalFair {
            incidence: vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]],
            capacities: vec![1.0, 1.0],
            tolerance: 1e-10,
        },
        1,
    )
}

/// Elastic class 1 with `rho1 = 0.6` next to streaming flows of rate
/// `c = 0.01` and bandwidth load 0.2.
pub fn stream_model() -> NetworkModel {
    NetworkModel::new(
        vec![TrafficClass::surge(0.6, 1.0), TrafficClass::stable(2.0, 10.0)],
        AllocationSpec::StreamElastic {
            rate: 0.01,
            share: Default::default(),
        },
        1,
    )
}

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "dps3" => Some(Scenario {
            name: "dps3".into(),
            model: dps3_model(),
            profile: None,
            sim: Some(SimSection {
                k: vec![200, 1000, 5000],
                horizon: 12.0,
                step: 0.01,
                seed: 1,
                replications: 5,
                initial_surge: vec![1.0],
                initial_stable: vec![0, 0],
                scale_weights: true,
                window: Some(0.1),
            }),
            fluid: Some(FluidSection {
                u0: vec![1.0],
                horizon: 12.0,
                step: 0.01,
                tol: 1e-8,
                method: FluidMethod::Averaged,
                upper: None,
            }),
            outputs: Outputs {
                window_averages: true,
                equilibrium_report: true,
                ..Outputs::default()
            },
        }),
        "tree" => Some(Scenario {
            name: "tree".into(),
            model: tree_model(0.2),
            profile: None,
            sim: Some(SimSection {
                k: vec![1000],
                horizon: 30.0,
                step: 0.05,
                seed: 1,
                replications: 1,
                initial_surge: vec![1.0],
                initial_stable: vec![0],
                scale_weights: true,
                window: Some(1.0),
            }),
            fluid: Some(FluidSection {
                u0: vec![1.0],
                horizon: 30.0,
                step: 0.05,
                tol: 1e-8,
                method: FluidMethod::Averaged,
                upper: None,
            }),
            outputs: Outputs {
                window_averages: true,
                equilibrium_report: true,
                ..Outputs::default()
            },
        }),
        "linear-surge" => Some(Scenario {
            name: "linear-surge".into(),
            model: linear_model(),
            profile: None,
            sim: Some(SimSection {
                k: vec![1000],
                horizon: 200.0,
                step: 0.5,
                seed: 1,
                replications: 1,
                initial_surge: vec![10.0],
                initial_stable: vec![1000, 1000],
                scale_weights: true,
                window: None,
            }),
            fluid: None,
            outputs: Outputs {
                fluid: false,
                ..Outputs::default()
            },
        }),
        _ => None,
    }
}
