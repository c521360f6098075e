//! Scenario runner and figure-data reproduction for `bwsurge-core`.
//!
//! Every command writes CSV files into an output directory together with a
//! `summary.txt` holding the sha256 of each file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod output;
pub mod reproduce;
pub mod scenario;

use std::path::PathBuf;

use thiserror::Error;

use bwsurge_core::ctmc::{replicate, window_average, Ensemble};
use bwsurge_core::fluid::{
    classify as classify_model, find_equilibria, solve_fluid, stream_fluid, work_conserving_fast_path, FluidError,
    StreamMode, StreamParams,
};
use bwsurge_core::qos::{qos_plan, QosError, QosTarget};
use bwsurge_core::stationary::Averager;
use bwsurge_core::FluidSolution;

use output::{fluid_table, num, stationary_table, sub_seed, trajectory_table, OutputDir, Table};
use scenario::{FluidMethod, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<FluidError> for CliError {
    fn from(e: FluidError) -> Self {
        match e {
            FluidError::NotWorkConserving | FluidError::SurgeCount(_) | FluidError::Invalid(_) => {
                CliError::Validation(format!("fluid: {e}"))
            }
            FluidError::Stationary(_) => CliError::Numerical(format!("stationary: {e}")),
        }
    }
}

impl From<QosError> for CliError {
    fn from(e: QosError) -> Self {
        match e {
            QosError::Invalid(_) => CliError::Validation(format!("qos: {e}")),
            _ => CliError::Numerical(format!("qos: {e}")),
        }
    }
}

impl From<bwsurge_core::ctmc::SimError> for CliError {
    fn from(e: bwsurge_core::ctmc::SimError) -> Self {
        use bwsurge_core::ctmc::SimError;
        match e {
            SimError::Invalid(_) => CliError::Validation(format!("ctmc: {e}")),
            _ => CliError::Numerical(format!("ctmc: {e}")),
        }
    }
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: None,
            tol: None,
        }
    }
}

/// Load, apply overrides and validate.
pub fn prepare(arg: &str, opts: &Options) -> Result<Scenario, CliError> {
    let mut s = scenario::load(arg)?;
    if let (Some(seed), Some(sim)) = (opts.seed, s.sim.as_mut()) {
        sim.seed = seed;
    }
    if let (Some(tol), Some(f)) = (opts.tol, s.fluid.as_mut()) {
        f.tol = tol;
    }
    let problems = s.validate();
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    Ok(s)
}

fn fluid_on_grid(s: &Scenario, u0: &[f64], horizon: f64, step: f64) -> Result<FluidSolution, CliError> {
    let f = s
        .fluid
        .as_ref()
        .ok_or_else(|| CliError::Validation("scenario has no fluid section".into()))?;
    let sol = match f.method {
        FluidMethod::Averaged => solve_fluid(&s.model, &s.profile(), u0, horizon, step, f.tol),
        FluidMethod::FastPath => work_conserving_fast_path(&s.model, u0[0], horizon, step)?,
        FluidMethod::StreamExact | FluidMethod::StreamPoisson => {
            let p = StreamParams::from_model(&s.model)?;
            let mode = if f.method == FluidMethod::StreamExact {
                StreamMode::Exact
            } else {
                StreamMode::PoissonApprox
            };
            stream_fluid(&p, u0[0], horizon, step, mode, f.tol)
        }
    };
    Ok(sol)
}

fn check_divergence(sol: &FluidSolution) -> Result<(), CliError> {
    match &sol.divergence {
        Some(d) => Err(CliError::Numerical(format!(
            "fluid path stopped at t = {}: {}",
            d.time, d.reason
        ))),
        None => Ok(()),
    }
}

/// `fluid`: the averaged ODE on the fluid section's grid.
pub fn cmd_fluid(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let f = s.fluid.as_ref().ok_or_else(|| CliError::Validation("scenario has no fluid section".into()))?;
    let sol = fluid_on_grid(s, &f.u0, f.horizon, f.step)?;
    out.write_table(&format!("{}_fluid.csv", s.label()), &fluid_table(&sol))?;
    check_divergence(&sol)
}

fn deviation_row(k: u64, e: &Ensemble) -> Vec<String> {
    vec![
        k.to_string(),
        e.runs.len().to_string(),
        num(e.mean_sup_deviation),
        num(e.sup_deviation_se()),
    ]
}

/// `simulate`: one trajectory per `k`, plus sup-deviations from the fluid
/// path and window averages when requested.
pub fn cmd_simulate(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let sim = s.sim.as_ref().ok_or_else(|| CliError::Validation("scenario has no sim section".into()))?;
    let profile = s.profile();
    let reference = match &s.fluid {
        Some(_) => {
            let sol = fluid_on_grid(s, &sim.initial_surge, sim.horizon, sim.step)?;
            check_divergence(&sol)?;
            Some(sol.u)
        }
        None => None,
    };
    let mut deviations = Table::new(["k", "replications", "mean_sup_deviation", "standard_error"]);
    let c = s.model.surge_count;
    for &k in &sim.k {
        let cfg = sim.config(k, sub_seed(sim.seed, &format!("sim/k={k}")));
        let ens = replicate(&s.model, &profile, &cfg, sim.replications, reference.as_deref())?;
        let first = &ens.runs[0];
        out.write_table(&format!("{}_sim_K{k}.csv", s.label()), &trajectory_table(first))?;
        if reference.is_some() {
            deviations.push(deviation_row(k, &ens));
        }
        if let (Some(w), true) = (sim.window, s.outputs.window_averages) {
            let n = s.model.len();
            let mut table = Table::new(
                std::iter::once("t".to_string())
                    .chain((c + 1..=n).map(|i| format!("x{i}_window")))
                    .chain(std::iter::once("truncated".to_string())),
            );
            let series: Vec<_> = (c..n)
                .map(|i| window_average(first, |y| y[i], w))
                .collect::<Result<_, _>>()?;
            for j in 0..first.times.len() {
                let mut row = vec![num(first.times[j])];
                row.extend(series.iter().map(|ws| num(ws.values[j])));
                row.push(u8::from(series[0].truncated[j]).to_string());
                table.push(row);
            }
            out.write_table(&format!("{}_window_K{k}.csv", s.label()), &table)?;
        }
    }
    if reference.is_some() {
        out.write_table(&format!("{}_deviation.csv", s.label()), &deviations)?;
    }
    Ok(())
}

fn initial_surge(s: &Scenario) -> Vec<f64> {
    s.fluid
        .as_ref()
        .map(|f| f.u0.clone())
        .or_else(|| s.sim.as_ref().map(|m| m.initial_surge.clone()))
        .unwrap_or_else(|| vec![1.0; s.model.surge_count])
}

/// `classify`: equilibria, regime and robust stability.
pub fn cmd_classify(s: &Scenario, out: &mut OutputDir) -> Result<String, CliError> {
    let u0 = initial_surge(s);
    let tol = s.fluid.as_ref().map_or(1e-8, |f| f.tol);
    let report = match s.fluid.as_ref().and_then(|f| f.upper.clone()) {
        Some(upper) => find_equilibria(&s.model, &upper, &u0, tol)?,
        None => classify_model(&s.model, &u0, tol)?,
    };
    let text = report.to_string();
    out.write(&format!("{}_equilibria.txt", s.label()), &text)?;
    Ok(text)
}

/// `qos`: the priority rescaling that meets the blocking target.
pub fn cmd_qos(s: &Scenario, out: &mut OutputDir) -> Result<String, CliError> {
    let p_m = s
        .outputs
        .qos_p_m
        .ok_or_else(|| CliError::Validation("outputs.qos_p_m is required for a QoS report".into()))?;
    let params = StreamParams::from_model(&s.model)?;
    let target = QosTarget::new(p_m, params.c, params.rho2)?;
    let u0 = initial_surge(s)[0];
    let report = qos_plan(&target, &params, u0)?;
    let text = report.to_string();
    out.write(&format!("{}_qos.txt", s.label()), &text)?;
    if !report.post_check {
        return Err(CliError::Numerical(format!("rescaled supremum {} above threshold", report.u_sup_after)));
    }
    Ok(text)
}

/// Frozen stationary laws requested in `outputs.stationary_at`.
pub fn cmd_stationary(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let avg = Averager::new(&s.model);
    for (i, z) in s.outputs.stationary_at.iter().enumerate() {
        let a = avg
            .at(z)
            .map_err(|e| CliError::Numerical(format!("stationary at {z:?}: {e}")))?;
        out.write_table(
            &format!("{}_pi_{i}.csv", s.label()),
            &stationary_table(&a.distribution, s.model.surge_count),
        )?;
    }
    Ok(())
}

/// `run`: every output the scenario requests.
pub fn cmd_run(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    if s.fluid.is_some() && s.outputs.fluid {
        cmd_fluid(s, out)?;
    }
    if s.sim.is_some() && s.outputs.trajectories {
        cmd_simulate(s, out)?;
    }
    if s.outputs.equilibrium_report {
        cmd_classify(s, out)?;
    }
    if s.outputs.qos_p_m.is_some() {
        cmd_qos(s, out)?;
    }
    cmd_stationary(s, out)
}
