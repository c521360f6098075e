//! Exact simulation of the flow-count process and the priority-scaling
//! harness.
//!
//! Events are drawn by competing exponential clocks with every rate
//! recomputed after each event. Time-varying surge arrival rates are
//! piecewise constant; at a breakpoint the clocks are simply restarted,
//! which is exact because they are memoryless.

mod window;

pub use window::{sup_deviation, window_average, WindowSeries};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::AllocError;
use crate::model::{NetworkModel, TrafficProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error("total event rate {rate} is not finite")]
    RateOverflow { rate: f64 },
    #[error("trajectory has no recorded path; enable record_path")]
    NoPath,
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// Scaling parameter, horizon and initial condition of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: u64,
    /// Horizon in macroscopic time.
    pub horizon: f64,
    /// Output grid step in macroscopic time.
    pub step: f64,
    pub seed: u64,
    /// Macroscopic surge state; the run starts from `round(k * u)` flows.
    pub initial_surge: Vec<f64>,
    pub initial_stable: Vec<u64>,
    /// Divide surge weights by `k`. Turning this off gives the usual fluid
    /// scaling of the same process.
    #[serde(default = "yes")]
    pub scale_weights: bool,
    /// Keep every event, needed for window averages.
    #[serde(default)]
    pub record_path: bool,
}

fn yes() -> bool {
    true
}

impl SimConfig {
    pub fn new(k: u64, horizon: f64, step: f64, seed: u64, initial_surge: Vec<f64>, initial_stable: Vec<u64>) -> Self {
        Self {
            k,
            horizon,
            step,
            seed,
            initial_surge,
            initial_stable,
            scale_weights: true,
            record_path: false,
        }
    }

    pub fn with_path(mut self) -> Self {
        self.record_path = true;
        self
    }

    pub fn grid_len(&self) -> usize {
        (self.horizon / self.step).round() as usize + 1
    }

    pub fn violations(&self, model: &NetworkModel) -> Vec<String> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push("scaling parameter k must be >= 1".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            out.push(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            out.push(format!("grid step {} must be positive", self.step));
        }
        if self.initial_surge.len() != model.surge_count {
            out.push(format!(
                "initial surge state has {} entries, model has {} surging classes",
                self.initial_surge.len(),
                model.surge_count
            ));
        }
        if self.initial_surge.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            out.push("initial surge state must be finite and >= 0".into());
        }
        if self.initial_stable.len() != model.stable_count() {
            out.push(format!(
                "initial stable state has {} entries, model has {} stable classes",
                self.initial_stable.len(),
                model.stable_count()
            ));
        }
        out
    }
}

/// Every event of a run: the state holds from `times[m]` to `times[m + 1]`
/// (or to the horizon for the last entry).
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    /// Microscopic counts, `dim` per event, flattened.
    pub states: Vec<u64>,
    pub dim: usize,
    pub horizon: f64,
    pub k: f64,
    pub surge_count: usize,
    /// Surge values of a frozen run, which override the stored counts.
    pub frozen_surge: Option<Vec<f64>>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, m: usize) -> &[u64] {
        &self.states[m * self.dim..(m + 1) * self.dim]
    }

    /// State after event `m` with surge coordinates divided by `k`.
    pub fn scaled_state(&self, m: usize, out: &mut Vec<f64>) {
        out.clear();
        for (i, &v) in self.state(m).iter().enumerate() {
            out.push(if i < self.surge_count {
                match &self.frozen_surge {
                    Some(z) => z[i],
                    None => v as f64 / self.k,
                }
            } else {
                v as f64
            });
        }
    }
}

/// A sample path of the scaled process on a macroscopic time grid: surge
/// coordinates divided by `k`, stable coordinates as raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTrajectory {
    pub k: u64,
    pub seed: u64,
    pub surge_count: usize,
    pub times: Vec<f64>,
    pub surge: Vec<Vec<f64>>,
    pub stable: Vec<Vec<u64>>,
    /// Blocked arrivals (all classes) up to each grid time.
    pub blocked: Vec<u64>,
    pub events: u64,
    /// Arrivals offered to each class, admitted or not.
    pub offered: Vec<u64>,
    pub blocked_by_class: Vec<u64>,
    pub path: Option<Path>,
}

impl ScaledTrajectory {
    /// The scaled state at grid index `j`, surge first.
    pub fn scaled_state(&self, j: usize) -> Vec<f64> {
        self.surge[j]
            .iter()
            .copied()
            .chain(self.stable[j].iter().map(|&v| v as f64))
            .collect()
    }

    /// Fraction of offered arrivals of `class` that were blocked.
    pub fn blocking_fraction(&self, class: usize) -> Option<f64> {
        (self.offered[class] > 0).then(|| self.blocked_by_class[class] as f64 / self.offered[class] as f64)
    }

    /// Scale factor turning raw coordinate `i` into the value plotted on the
    /// usual fluid scale (every coordinate divided by `k`).
    pub fn usual_fluid_state(&self, j: usize) -> Vec<f64> {
        let k = self.k as f64;
        self.surge[j]
            .iter()
            .copied()
            .chain(self.stable[j].iter().map(|&v| v as f64 / k))
            .collect()
    }
}

struct Recorder {
    step: f64,
    n_grid: usize,
    next: usize,
    k: f64,
    c: usize,
    frozen_surge: Option<Vec<f64>>,
    times: Vec<f64>,
    surge: Vec<Vec<f64>>,
    stable: Vec<Vec<u64>>,
    blocked: Vec<u64>,
}

impl Recorder {
    /// Record every grid point strictly before `t` with state `x`.
    fn until(&mut self, t: f64, x: &[u64], blocked: u64) {
        while self.next < self.n_grid && (self.next as f64) * self.step < t {
            self.push(x, blocked);
        }
    }

    fn finish(&mut self, x: &[u64], blocked: u64) {
        while self.next < self.n_grid {
            self.push(x, blocked);
        }
    }

    fn push(&mut self, x: &[u64], blocked: u64) {
        self.times.push(self.next as f64 * self.step);
        self.surge.push(match &self.frozen_surge {
            Some(z) => z.clone(),
            None => x[..self.c].iter().map(|&v| v as f64 / self.k).collect(),
        });
        self.stable.push(x[self.c..].to_vec());
        self.blocked.push(blocked);
        self.next += 1;
    }
}

/// Simulate the network under priority scaling (or the usual fluid scaling
/// when `cfg.scale_weights` is off).
///
/// Surge class `i` receives arrivals at the slope of `profile.surge[i]`
/// evaluated at macroscopic time; macroscopic time `t` is microscopic time
/// `k t`, so `X_i(k t) / k` has drift equal to that slope.
pub fn simulate(
    model: &NetworkModel,
    profile: &TrafficProfile,
    cfg: &SimConfig,
) -> Result<ScaledTrajectory, SimError> {
    let mut problems: Vec<String> = model.validate().iter().map(ToString::to_string).collect();
    problems.extend(profile.validate(model).iter().map(ToString::to_string));
    problems.extend(cfg.violations(model));
    if !problems.is_empty() {
        return Err(SimError::Invalid(problems.join("; ")));
    }
    let k = cfg.k as f64;
    let weights = if cfg.scale_weights {
        model.scaled_weights(k)
    } else {
        model.weights()
    };
    let x0: Vec<u64> = cfg
        .initial_surge
        .iter()
        .map(|u| (u * k).round() as u64)
        .chain(cfg.initial_stable.iter().copied())
        .collect();
    run(model, Some(profile), &weights, x0, None, k, cfg.horizon, cfg.step, cfg.seed, cfg.record_path, cfg.k)
}

/// Configuration of a run with the surge frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenConfig {
    /// Horizon in microscopic time.
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub initial_stable: Vec<u64>,
}

/// Simulate only the stable classes with the surge pinned at `z`, using the
/// unscaled weights so that the surge mass is `weight * z`. The returned
/// trajectory has `k = 1` and a recorded path.
pub fn simulate_frozen(model: &NetworkModel, z: &[f64], cfg: &FrozenConfig) -> Result<ScaledTrajectory, SimError> {
    if z.len() != model.surge_count || cfg.initial_stable.len() != model.stable_count() {
        return Err(SimError::Invalid("frozen state dimension mismatch".into()));
    }
    let x0: Vec<u64> = z.iter().map(|_| 0).chain(cfg.initial_stable.iter().copied()).collect();
    run(
        model,
        None,
        &model.weights(),
        x0,
        Some(z.to_vec()),
        1.0,
        cfg.horizon,
        cfg.step,
        cfg.seed,
        true,
        1,
    )
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: &NetworkModel,
    profile: Option<&TrafficProfile>,
    weights: &[f64],
    mut x: Vec<u64>,
    frozen: Option<Vec<f64>>,
    k: f64,
    horizon: f64,
    step: f64,
    seed: u64,
    record_path: bool,
    k_label: u64,
) -> Result<ScaledTrajectory, SimError> {
    let n = model.len();
    let c = model.surge_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xf: Vec<f64> = vec![0.0; n];
    let fill = |xf: &mut Vec<f64>, x: &[u64]| {
        for i in 0..n {
            xf[i] = match &frozen {
                Some(z) if i < c => z[i],
                _ => x[i] as f64,
            };
        }
    };
    let dynamic_from = if frozen.is_some() { c } else { 0 };
    let mut phi = vec![0.0; n];
    let mut rates = vec![0.0; 2 * n];
    let mut offered = vec![0u64; n];
    let mut blocked_by_class = vec![0u64; n];
    let mut blocked = 0u64;
    let mut events = 0u64;
    let mut rec = Recorder {
        step,
        n_grid: (horizon / step).round() as usize + 1,
        next: 0,
        k,
        c,
        frozen_surge: frozen.clone(),
        times: Vec::new(),
        surge: Vec::new(),
        stable: Vec::new(),
        blocked: Vec::new(),
    };
    let mut path = record_path.then(|| Path {
        times: vec![0.0],
        states: x.clone(),
        dim: n,
        horizon,
        k,
        surge_count: c,
        frozen_surge: frozen.clone(),
    });

    let mut t = 0.0;
    rec.until(f64::MIN_POSITIVE, &x, blocked);
    while t < horizon {
        let seg_end = profile
            .and_then(|p| p.next_breakpoint(t))
            .map_or(horizon, |b| b.min(horizon));
        fill(&mut xf, &x);
        model.allocation.rates_into(weights, &xf, &mut phi)?;
        let mut total = 0.0;
        for i in 0..n {
            let (arr, dep) = if i < dynamic_from {
                (0.0, 0.0)
            } else {
                let class = &model.classes[i];
                let arr = match profile {
                    Some(p) if i < c => p.surge[i].rate_at(t),
                    _ => class.arrival_rate,
                };
                let dep = if x[i] > 0 { class.service_rate * phi[i] } else { 0.0 };
                (arr, dep)
            };
            rates[2 * i] = arr;
            rates[2 * i + 1] = dep;
            total += arr + dep;
        }
        if !total.is_finite() {
            return Err(SimError::RateOverflow { rate: total });
        }
        let t_next = if total > 0.0 {
            let e: f64 = rng.sample(Exp1);
            t + e / (total * k)
        } else {
            f64::INFINITY
        };
        if t_next >= seg_end {
            rec.until(seg_end, &x, blocked);
            t = seg_end;
            continue;
        }
        rec.until(t_next, &x, blocked);
        t = t_next;
        let mut u = rng.random::<f64>() * total;
        let mut chosen = rates.len() - 1;
        for (idx, &r) in rates.iter().enumerate() {
            if u < r {
                chosen = idx;
                break;
            }
            u -= r;
        }
        // Guard against the fallthrough landing on a zero rate.
        while rates[chosen] == 0.0 {
            chosen -= 1;
        }
        let class = chosen / 2;
        if chosen.is_multiple_of(2) {
            offered[class] += 1;
            if model.allocation.admits(weights, &xf, class) {
                x[class] += 1;
            } else {
                blocked_by_class[class] += 1;
                blocked += 1;
            }
        } else {
            x[class] -= 1;
        }
        events += 1;
        if let Some(p) = path.as_mut() {
            p.times.push(t);
            p.states.extend_from_slice(&x);
        }
    }
    rec.finish(&x, blocked);
    Ok(ScaledTrajectory {
        k: k_label,
        seed,
        surge_count: c,
        times: rec.times,
        surge: rec.surge,
        stable: rec.stable,
        blocked: rec.blocked,
        events,
        offered,
        blocked_by_class,
        path,
    })
}

/// Summary of independent replications of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub mean_surge: Vec<Vec<f64>>,
    pub mean_stable: Vec<Vec<f64>>,
    /// Pathwise sup-deviation of each run's surge coordinates from the
    /// reference.
    pub sup_deviation: Vec<f64>,
    pub mean_sup_deviation: f64,
    pub runs: Vec<ScaledTrajectory>,
}

impl Ensemble {
    /// Standard error of the mean sup-deviation.
    pub fn sup_deviation_se(&self) -> f64 {
        standard_error(&self.sup_deviation)
    }
}

/// Sample standard error of the mean; zero for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Run `n_runs` replications with seeds `cfg.seed ^ r`, in parallel, and
/// compare their surge paths with `reference` (one vector per grid point).
/// Without a reference the ensemble mean is used.
pub fn replicate(
    model: &NetworkModel,
    profile: &TrafficProfile,
    cfg: &SimConfig,
    n_runs: usize,
    reference: Option<&[Vec<f64>]>,
) -> Result<Ensemble, SimError> {
    if n_runs == 0 {
        return Err(SimError::Invalid("at least one replication is required".into()));
    }
    let runs: Vec<ScaledTrajectory> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = cfg.seed ^ r;
            simulate(model, profile, &c)
        })
        .collect::<Result<_, _>>()?;
    let len = runs[0].times.len();
    let avg = |get: &dyn Fn(&ScaledTrajectory, usize) -> Vec<f64>| -> Vec<Vec<f64>> {
        (0..len)
            .map(|j| {
                let mut acc = get(&runs[0], j);
                for r in &runs[1..] {
                    for (a, v) in acc.iter_mut().zip(get(r, j)) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n_runs as f64);
                acc
            })
            .collect()
    };
    let mean_surge = avg(&|r, j| r.surge[j].clone());
    let mean_stable = avg(&|r, j| r.stable[j].iter().map(|&v| v as f64).collect());
    let reference = reference.unwrap_or(&mean_surge);
    let sup: Vec<f64> = runs.iter().map(|r| sup_deviation(r, reference)).collect();
    let mean_sup_deviation = sup.iter().sum::<f64>() / n_runs as f64;
    Ok(Ensemble {
        times: runs[0].times.clone(),
        mean_surge,
        mean_stable,
        sup_deviation: sup,
        mean_sup_deviation,
        runs,
    })
}
