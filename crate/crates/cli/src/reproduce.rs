//! CSV data behind each figure, one file per curve.

use bwsurge_core::ctmc::{simulate, window_average, ScaledTrajectory, SimConfig};
use bwsurge_core::fluid::{solve_fluid, stream_fluid, time_grid, StreamMode, StreamParams};
use bwsurge_core::stationary::Averager;
use bwsurge_core::{FluidSolution, TrafficProfile, SURGE_FLOOR};

use crate::output::{num, sub_seed, OutputDir, Table};
use crate::scenario::{dps3_model, linear_model, stream_model, tree_model};
use crate::CliError;

pub const FIGURES: [&str; 5] = ["fig3", "fig5", "fig6", "fig7", "tree-priority-compare"];

pub fn reproduce(id: &str, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    match id {
        "fig3" => fig3(seed, out),
        "fig5" => fig5(seed, out),
        "fig6" => fig6(seed, out),
        "fig7" => fig7(seed, out),
        "tree-priority-compare" => tree_priority_compare(out),
        _ => Err(CliError::Validation(format!(
            "unknown figure id {id:?}; valid ids: {}",
            FIGURES.join(", ")
        ))),
    }
}

fn checked(sol: FluidSolution) -> Result<FluidSolution, CliError> {
    match &sol.divergence {
        Some(d) => Err(CliError::Numerical(format!("fluid stopped at t = {}: {}", d.time, d.reason))),
        None => Ok(sol),
    }
}

/// Scaled surge path next to the fluid path on the same grid.
fn surge_vs_fluid(traj: &ScaledTrajectory, sol: &FluidSolution) -> Table {
    let mut t = Table::new(["t", "y1", "u1"]);
    for (j, &time) in traj.times.iter().enumerate() {
        t.push_numbers(&[time, traj.surge[j][0], sol.u[j][0]]);
    }
    t
}

/// Window average of stable class `class` against its mean under the
/// frozen law at the fluid state.
fn window_vs_conditional(
    traj: &ScaledTrajectory,
    sol: &FluidSolution,
    avg: &Averager,
    class: usize,
    window: f64,
) -> Result<Table, CliError> {
    let c = avg.model().surge_count;
    let ws = window_average(traj, |y| y[class], window)?;
    let mut t = Table::new(["t", "window_average", "conditional_mean", "truncated"]);
    for (j, &time) in ws.times.iter().enumerate() {
        let z: Vec<f64> = sol.u[j].iter().map(|&v| v.max(SURGE_FLOOR)).collect();
        let m = avg
            .at(&z)
            .map_err(|e| CliError::Numerical(format!("stationary at {z:?}: {e}")))?
            .stable_mean[class - c];
        t.push(vec![num(time), num(ws.values[j]), num(m), u8::from(ws.truncated[j]).to_string()]);
    }
    Ok(t)
}

fn fig3(seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let model = dps3_model();
    let profile = TrafficProfile::constant(&model);
    let (horizon, step) = (12.0, 0.01);
    let sol = checked(solve_fluid(&model, &profile, &[1.0], horizon, step, 1e-9))?;
    let cfg = SimConfig::new(1000, horizon, step, sub_seed(seed, "fig3/sim"), vec![1.0], vec![0, 0]).with_path();
    let traj = simulate(&model, &profile, &cfg)?;
    out.write_table("fig3_class1.csv", &surge_vs_fluid(&traj, &sol))?;
    let avg = Averager::new(&model);
    out.write_table("fig3_class2.csv", &window_vs_conditional(&traj, &sol, &avg, 1, 0.1)?)?;
    Ok(())
}

fn fig5(seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let (horizon, step) = (30.0, 0.05);
    for (curve, rho1) in [("low", 0.2), ("high", 0.35)] {
        let model = tree_model(rho1);
        let profile = TrafficProfile::constant(&model);
        let sol = checked(solve_fluid(&model, &profile, &[1.0], horizon, step, 1e-9))?;
        let cfg = SimConfig::new(1000, horizon, step, sub_seed(seed, &format!("fig5/{curve}")), vec![1.0], vec![0])
            .with_path();
        let traj = simulate(&model, &profile, &cfg)?;
        out.write_table(&format!("fig5_{curve}_class1.csv"), &surge_vs_fluid(&traj, &sol))?;
        let avg = Averager::new(&model);
        out.write_table(
            &format!("fig5_{curve}_class2.csv"),
            &window_vs_conditional(&traj, &sol, &avg, 1, 1.0)?,
        )?;
    }
    Ok(())
}

fn fig6(seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let model = linear_model();
    let profile = TrafficProfile::constant(&model);
    let k = 1000;
    for (curve, scale) in [("usual", false), ("priority", true)] {
        let mut cfg = SimConfig::new(k, 200.0, 0.5, sub_seed(seed, "fig6"), vec![10.0], vec![k, k]);
        cfg.scale_weights = scale;
        let traj = simulate(&model, &profile, &cfg)?;
        let mut t = if scale {
            Table::new(["t", "y1", "x2", "x3"])
        } else {
            Table::new(["t", "x1_over_k", "x2_over_k", "x3_over_k"])
        };
        for j in 0..traj.times.len() {
            let state = if scale { traj.scaled_state(j) } else { traj.usual_fluid_state(j) };
            let mut row = vec![traj.times[j]];
            row.extend(state);
            t.push_numbers(&row);
        }
        out.write_table(&format!("fig6_{curve}.csv"), &t)?;
    }
    Ok(())
}

fn fig7(seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let model = stream_model();
    let params = StreamParams::from_model(&model)?;
    let (horizon, step) = (10.0, 0.01);
    let exact = checked(stream_fluid(&params, 0.0, horizon, step, StreamMode::Exact, 1e-9))?;
    let poisson = checked(stream_fluid(&params, 0.0, horizon, step, StreamMode::PoissonApprox, 1e-9))?;
    for (curve, sol) in [("fluid_exact", &exact), ("fluid_poisson", &poisson)] {
        let mut t = Table::new(["t", "u1", "phibar_1"]);
        for j in 0..sol.times.len() {
            t.push_numbers(&[sol.times[j], sol.u[j][0], sol.phibar[j][0]]);
        }
        out.write_table(&format!("fig7_{curve}.csv"), &t)?;
    }
    let profile = TrafficProfile::constant(&model);
    let cfg = SimConfig::new(2000, horizon, step, sub_seed(seed, "fig7/sim"), vec![0.0], vec![0]);
    let traj = simulate(&model, &profile, &cfg)?;
    out.write_table("fig7_sim.csv", &surge_vs_fluid(&traj, &exact))?;
    Ok(())
}

/// Class 1 of the tree under priority scaling against strict priority to
/// class 2, where class 1 always sees the `z -> 0+` law.
fn tree_priority_compare(out: &mut OutputDir) -> Result<(), CliError> {
    let model = tree_model(0.35);
    let profile = TrafficProfile::constant(&model);
    let (horizon, step) = (30.0, 0.05);
    let scaled = checked(solve_fluid(&model, &profile, &[1.0], horizon, step, 1e-9))?;
    let avg = Averager::new(&model);
    let strict_rate = avg
        .surge_rates(&[SURGE_FLOOR])
        .map_err(|e| CliError::Numerical(e.to_string()))?[0];
    let slope = model.classes[0].arrival_rate - model.classes[0].service_rate * strict_rate;
    let mut t = Table::new(["t", "u1", "phibar_1"]);
    for (j, &time) in scaled.times.iter().enumerate() {
        t.push_numbers(&[time, scaled.u[j][0], scaled.phibar[j][0]]);
    }
    out.write_table("tree-priority-compare_priority_scaling.csv", &t)?;
    let mut t = Table::new(["t", "u1", "phibar_1"]);
    for time in time_grid(horizon, step) {
        t.push_numbers(&[time, (1.0 + slope * time).max(0.0), strict_rate]);
    }
    out.write_table("tree-priority-compare_strict_priority.csv", &t)?;
    Ok(())
}
