//! The averaged fluid ODE `u' = a'(t) - mu phibar(u)`, reflected at zero,
//! and its equilibrium and stability analysis.

mod equilibria;
mod hfunc;
mod ode;
mod stream;

pub use equilibria::{
    analyze, classify, find_equilibria, robust_stability, Criterion, Equilibrium, EquilibriumReport, Regime, RobustStability,
    Verdict,
};
pub use hfunc::{h_forward, h_function, h_quadrature, h_table, HError, HRow, HTable};
pub use ode::{StepStats, EVENT_TOL};
pub use stream::{stream_fluid, StreamMode, StreamParams, StreamRates};

use thiserror::Error;

use crate::alloc::{integer_grid, is_work_conserving};
use crate::model::{NetworkModel, TrafficProfile};
use crate::stationary::{Averager, StationaryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error("allocation is not work conserving")]
    NotWorkConserving,
    #[error("the closed form needs exactly one surging class, model has {0}")]
    SurgeCount(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Averaged allocation of the surging classes as a function of their
/// macroscopic state.
pub trait AveragedRates: Sync {
    fn surge_count(&self) -> usize;
    fn phibar(&self, z: &[f64]) -> Result<Vec<f64>, FluidError>;
}

impl AveragedRates for Averager {
    fn surge_count(&self) -> usize {
        self.model().surge_count
    }

    fn phibar(&self, z: &[f64]) -> Result<Vec<f64>, FluidError> {
        Ok(self.surge_rates(z)?)
    }
}

/// Where and why an integration stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub time: f64,
    pub reason: String,
}

/// A solution of the fluid ODE on a uniform output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidSolution {
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub phibar: Vec<Vec<f64>>,
    /// Coordinates sitting at zero.
    pub at_boundary: Vec<Vec<bool>>,
    /// First time each coordinate reached zero from above.
    pub hit_times: Vec<Option<f64>>,
    pub steps: StepStats,
    pub divergence: Option<Divergence>,
}

impl FluidSolution {
    pub fn last(&self) -> &[f64] {
        self.u.last().expect("solution has at least the initial point")
    }

    /// Values of surge coordinate `i` along the grid.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.u.iter().map(|u| u[i]).collect()
    }

    /// Linear interpolation of the solution at time `t`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return self.u[0].clone();
        }
        if j >= self.times.len() {
            return self.last().to_vec();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        self.u[j - 1]
            .iter()
            .zip(&self.u[j])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Output grid `0, step, .., horizon`.
pub fn time_grid(horizon: f64, step: f64) -> Vec<f64> {
    let n = (horizon / step).round() as usize;
    (0..=n).map(|j| j as f64 * step).collect()
}

/// The ODE of one network: averaged rates, service rates and arrival
/// profile of the surging classes.
pub struct FluidProblem<'a> {
    pub rates: &'a dyn AveragedRates,
    pub service: Vec<f64>,
    pub profile: TrafficProfile,
}

impl<'a> FluidProblem<'a> {
    pub fn new(rates: &'a dyn AveragedRates, service: Vec<f64>, profile: TrafficProfile) -> Self {
        Self {
            rates,
            service,
            profile,
        }
    }

    /// The problem for `model` with averaged rates from `averager`.
    pub fn for_model(model: &NetworkModel, averager: &'a Averager, profile: &TrafficProfile) -> Self {
        Self::new(
            averager,
            model.surge_classes().iter().map(|c| c.service_rate).collect(),
            profile.clone(),
        )
    }

    /// Averaged drift `a'(t) - mu phibar(z)`, without reflection.
    pub fn drift(&self, t: f64, z: &[f64]) -> Result<Vec<f64>, FluidError> {
        let phibar = self.rates.phibar(z)?;
        Ok(self
            .profile
            .rates_at(t)
            .iter()
            .zip(&self.service)
            .zip(&phibar)
            .map(|((a, m), p)| a - m * p)
            .collect())
    }

    /// Drift with the reflection at zero applied.
    pub fn velocity(&self, t: f64, z: &[f64]) -> Result<Vec<f64>, FluidError> {
        let mut d = self.drift(t, z)?;
        for (di, &zi) in d.iter_mut().zip(z) {
            if zi <= 0.0 {
                *di = di.max(0.0);
            }
        }
        Ok(d)
    }

    /// Integrate from `u0` with local error tolerance `tol`, reporting on
    /// the grid `0, step, .., horizon`.
    pub fn solve(&self, u0: &[f64], horizon: f64, step: f64, tol: f64) -> FluidSolution {
        let grid = time_grid(horizon, step);
        let breakpoints: Vec<f64> = self
            .profile
            .surge
            .iter()
            .flat_map(|a| a.breakpoints.iter().map(|&(t, _)| t))
            .collect();
        let out = ode::integrate(|t, z| self.drift(t, z), u0, &grid, &breakpoints, tol);
        let n = out.values.len();
        let mut phibar = Vec::with_capacity(n);
        let mut divergence = out.failure.map(|(time, e)| Divergence {
            time,
            reason: e.to_string(),
        });
        for u in &out.values {
            match self.rates.phibar(u) {
                Ok(p) => phibar.push(p),
                Err(e) => {
                    divergence.get_or_insert(Divergence {
                        time: grid[phibar.len()],
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
        let n = phibar.len();
        let u: Vec<Vec<f64>> = out.values.into_iter().take(n).collect();
        FluidSolution {
            times: grid[..n].to_vec(),
            at_boundary: u.iter().map(|v| v.iter().map(|&x| x <= 0.0).collect()).collect(),
            u,
            phibar,
            hit_times: out.hits,
            steps: out.stats,
            divergence,
        }
    }
}

/// Solve the averaged ODE of `model` with stationary laws computed
/// numerically along the path.
pub fn solve_fluid(
    model: &NetworkModel,
    profile: &TrafficProfile,
    u0: &[f64],
    horizon: f64,
    step: f64,
    tol: f64,
) -> FluidSolution {
    let averager = Averager::new(model);
    FluidProblem::for_model(model, &averager, profile).solve(u0, horizon, step, tol)
}

/// Closed-form path of a work-conserving network with one surging class:
/// `u(t) = (u(0) + (lambda - mu (C - sum_j rho_j)) t)^+`.
pub fn work_conserving_fast_path(
    model: &NetworkModel,
    u0: f64,
    horizon: f64,
    step: f64,
) -> Result<FluidSolution, FluidError> {
    if model.surge_count != 1 {
        return Err(FluidError::SurgeCount(model.surge_count));
    }
    let samples = integer_grid(model.len(), 3);
    if !is_work_conserving(&model.allocation, &model.weights(), &samples) {
        return Err(FluidError::NotWorkConserving);
    }
    let cap = model
        .allocation
        .nominal_capacity()
        .ok_or(FluidError::NotWorkConserving)?;
    let surge = &model.classes[0];
    let phibar = cap - model.stable_load();
    let slope = surge.arrival_rate - surge.service_rate * phibar;
    let times = time_grid(horizon, step);
    let u: Vec<Vec<f64>> = times.iter().map(|t| vec![(u0 + slope * t).max(0.0)]).collect();
    let hit = (slope < 0.0).then(|| -u0 / slope).filter(|&t| t <= horizon);
    Ok(FluidSolution {
        at_boundary: u.iter().map(|v| vec![v[0] <= 0.0]).collect(),
        phibar: vec![vec![phibar]; times.len()],
        u,
        times,
        hit_times: vec![if u0 <= 0.0 { Some(0.0) } else { hit }],
        steps: StepStats {
            accepted: 0,
            rejected: 0,
            min_step: 0.0,
            max_step: 0.0,
        },
        divergence: None,
    })
}
