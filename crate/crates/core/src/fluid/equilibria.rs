//! Zeros of the averaged drift, their stability, the long-run regime of a
//! fluid path and robust stability.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{FluidError, FluidProblem};
use crate::alloc::{integer_grid, is_monotone, is_work_conserving};
use crate::model::{NetworkModel, TrafficProfile};
use crate::stationary::Averager;
use crate::SURGE_FLOOR;

const BASIN_HORIZON: f64 = 100.0;
const SCAN_POINTS: usize = 400;
const NEWTON_ITERATIONS: usize = 100;

/// Long-run behaviour of the surge state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Converges to a positive stable equilibrium.
    InteriorStable,
    /// Grows without bound (or leaves the region where the frozen chain is
    /// ergodic).
    Unstable,
    /// Tends to 0 without reaching it.
    AbsorbedAsymptotic,
    /// Reaches 0 in finite time.
    AbsorbedFiniteTime,
}

impl Regime {
    pub fn number(self) -> u8 {
        match self {
            Regime::InteriorStable => 1,
            Regime::Unstable => 2,
            Regime::AbsorbedAsymptotic => 3,
            Regime::AbsorbedFiniteTime => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::InteriorStable => "interior-stable",
            Regime::Unstable => "unstable",
            Regime::AbsorbedAsymptotic => "absorbed-asymptotic",
            Regime::AbsorbedFiniteTime => "absorbed-finite-time",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {}", self.number(), self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub point: Vec<f64>,
    /// Max norm of the drift at `point`.
    pub residual: f64,
    /// Real parts of the eigenvalues of the finite-difference Jacobian.
    pub eigen_real: Vec<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub equilibria: Vec<Equilibrium>,
    /// Drift at `0+`.
    pub drift_at_zero: Vec<f64>,
    pub regime: Regime,
    /// Where the path from `u0` ends up after the basin horizon.
    pub limit: Vec<f64>,
    pub hit_time: Option<f64>,
    pub robust_stable: Option<bool>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.9e}")).collect();
    format!("({})", parts.join(", "))
}

impl fmt::Display for EquilibriumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.equilibria.is_empty() {
            writeln!(f, "equilibrium none regime={}", self.regime)?;
        }
        for e in &self.equilibria {
            let signs: String = e
                .eigen_real
                .iter()
                .map(|&r| if r < 0.0 { '-' } else if r > 0.0 { '+' } else { '0' })
                .collect();
            writeln!(
                f,
                "equilibrium point={} residual={:.3e} eigen_signs={} {} regime={}",
                fmt_vec(&e.point),
                e.residual,
                signs,
                if e.stable { "stable" } else { "unstable" },
                self.regime
            )?;
        }
        writeln!(f, "drift_at_zero={}", fmt_vec(&self.drift_at_zero))?;
        writeln!(f, "limit={}", fmt_vec(&self.limit))?;
        match self.hit_time {
            Some(t) => writeln!(f, "hit_time={t:.9e}")?,
            None => writeln!(f, "hit_time=none")?,
        }
        match self.robust_stable {
            Some(b) => writeln!(f, "robust_stable={b}"),
            None => writeln!(f, "robust_stable=inconclusive"),
        }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central-difference Jacobian of the drift, one-sided next to the
/// boundary.
fn jacobian(problem: &FluidProblem, z: &[f64]) -> Result<DMatrix<f64>, FluidError> {
    let n = z.len();
    let h = 1e-5 * norm_inf(z).max(1.0);
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut hi = z.to_vec();
        let mut lo = z.to_vec();
        hi[j] += h;
        lo[j] = (lo[j] - h).max(0.0);
        let span = hi[j] - lo[j];
        let dh = problem.drift(0.0, &hi)?;
        let dl = problem.drift(0.0, &lo)?;
        for i in 0..n {
            jac[(i, j)] = (dh[i] - dl[i]) / span;
        }
    }
    Ok(jac)
}

fn classify_point(problem: &FluidProblem, point: Vec<f64>, residual: f64) -> Result<Equilibrium, FluidError> {
    let jac = jacobian(problem, &point)?;
    let eigen_real: Vec<f64> = if jac.nrows() == 1 {
        vec![jac[(0, 0)]]
    } else {
        jac.complex_eigenvalues().iter().map(|c| c.re).collect()
    };
    let stable = eigen_real.iter().all(|&r| r < 0.0);
    Ok(Equilibrium {
        point,
        residual,
        eigen_real,
        stable,
    })
}

/// Scan `(0, upper]` for sign changes of the scalar drift and bisect each.
fn scalar_roots(problem: &FluidProblem, upper: f64, tol: f64) -> Result<Vec<Equilibrium>, FluidError> {
    let lo_exp = (upper * 1e-6).log10();
    let hi_exp = upper.log10();
    let mut grid: Vec<f64> = (0..SCAN_POINTS / 2)
        .map(|j| 10f64.powf(lo_exp + (hi_exp - lo_exp) * j as f64 / (SCAN_POINTS / 2) as f64))
        .chain((1..=SCAN_POINTS / 2).map(|j| upper * j as f64 / (SCAN_POINTS / 2) as f64))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let f = |z: f64| problem.drift(0.0, &[z]).map(|d| d[0]);
    let mut values = Vec::with_capacity(grid.len());
    for &z in &grid {
        // Points where the frozen chain is not ergodic are skipped.
        values.push(f(z).ok());
    }
    let mut out = Vec::new();
    for j in 1..grid.len() {
        let (Some(va), Some(vb)) = (values[j - 1], values[j]) else {
            continue;
        };
        if va == 0.0 {
            if out.last().is_none_or(|e: &Equilibrium| e.point[0] != grid[j - 1]) {
                out.push(classify_point(problem, vec![grid[j - 1]], 0.0)?);
            }
            continue;
        }
        if va.signum() == vb.signum() || vb == 0.0 {
            continue;
        }
        let (mut a, mut b, mut fa) = (grid[j - 1], grid[j], va);
        let mut mid = 0.5 * (a + b);
        let mut fm = f(mid)?;
        for _ in 0..200 {
            if fm.abs() <= tol * 1e-2 || b - a <= 1e-15 * b {
                break;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
            mid = 0.5 * (a + b);
            fm = f(mid)?;
        }
        out.push(classify_point(problem, vec![mid], fm.abs())?);
    }
    Ok(out)
}

/// Damped Newton from a grid of starts in the box `(0, upper]`.
fn vector_roots(problem: &FluidProblem, upper: &[f64], tol: f64) -> Result<Vec<Equilibrium>, FluidError> {
    let dim = upper.len();
    let per_axis = match dim {
        2 => 5,
        3 => 3,
        _ => 2,
    };
    let mut out: Vec<Equilibrium> = Vec::new();
    let starts = integer_grid(dim, per_axis - 1);
    for s in starts {
        let mut z: Vec<f64> = s
            .iter()
            .zip(upper)
            .map(|(k, u)| u * (k + 0.5) / per_axis as f64)
            .collect();
        let Ok(mut d) = problem.drift(0.0, &z) else {
            continue;
        };
        let mut converged = false;
        for _ in 0..NEWTON_ITERATIONS {
            if norm_inf(&d) <= tol {
                converged = true;
                break;
            }
            let Ok(jac) = jacobian(problem, &z) else {
                break;
            };
            let Some(step) = jac.lu().solve(&DVector::from_column_slice(&d)) else {
                break;
            };
            let mut damping = 1.0;
            let mut moved = false;
            while damping > 1e-6 {
                let trial: Vec<f64> = z
                    .iter()
                    .zip(step.iter())
                    .map(|(zi, si)| (zi - damping * si).max(SURGE_FLOOR))
                    .collect();
                if let Ok(dt) = problem.drift(0.0, &trial) {
                    if norm_inf(&dt) < norm_inf(&d) {
                        z = trial;
                        d = dt;
                        moved = true;
                        break;
                    }
                }
                damping *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if !converged || z.iter().any(|&v| v <= 1e3 * SURGE_FLOOR) {
            continue;
        }
        let dup = out
            .iter()
            .any(|e| e.point.iter().zip(&z).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + a.abs())));
        if !dup {
            let r = norm_inf(&d);
            out.push(classify_point(problem, z, r)?);
        }
    }
    Ok(out)
}

/// Equilibria of `problem` in the box `(0, upper]` and the regime of the
/// path started at `u0`. Arrival rates are taken at `t = 0`.
pub fn analyze(problem: &FluidProblem, upper: &[f64], u0: &[f64], tol: f64) -> Result<EquilibriumReport, FluidError> {
    let dim = problem.rates.surge_count();
    if upper.len() != dim || u0.len() != dim {
        return Err(FluidError::Invalid(format!("search box and u0 need {dim} coordinates")));
    }
    let equilibria = if dim == 1 {
        scalar_roots(problem, upper[0], tol)?
    } else {
        vector_roots(problem, upper, tol)?
    };
    let drift_at_zero = problem.drift(0.0, &vec![SURGE_FLOOR; dim])?;
    let sol = problem.solve(u0, BASIN_HORIZON, 1.0, tol.min(1e-8));
    let limit = sol.last().to_vec();
    let hit_time = sol
        .hit_times
        .iter()
        .copied()
        .try_fold(0.0f64, |m, h| h.map(|h| m.max(h)));
    let at_zero = limit.iter().all(|&v| v <= 0.0);
    let regime = if sol.divergence.is_some() {
        Regime::Unstable
    } else if at_zero && hit_time.is_some() {
        Regime::AbsorbedFiniteTime
    } else if equilibria.iter().filter(|e| e.stable).any(|e| {
        e.point
            .iter()
            .zip(&limit)
            .all(|(a, b)| (a - b).abs() <= 1e-3 * (1.0 + a.abs()))
    }) {
        Regime::InteriorStable
    } else if norm_inf(&limit) <= 1e-4 {
        Regime::AbsorbedAsymptotic
    } else {
        let v = problem.velocity(0.0, &limit)?;
        let beyond = equilibria
            .iter()
            .all(|e| e.point.iter().zip(&limit).any(|(p, l)| l > p));
        if v.iter().any(|&x| x > 0.0) && beyond {
            Regime::Unstable
        } else if v.iter().all(|&x| x <= 0.0) {
            Regime::AbsorbedAsymptotic
        } else {
            Regime::Unstable
        }
    };
    Ok(EquilibriumReport {
        equilibria,
        drift_at_zero,
        regime,
        limit,
        hit_time,
        robust_stable: None,
    })
}

/// Equilibria, regime and robust stability of `model` under its constant
/// arrival rates.
pub fn find_equilibria(model: &NetworkModel, upper: &[f64], u0: &[f64], tol: f64) -> Result<EquilibriumReport, FluidError> {
    let averager = Averager::new(model);
    let profile = TrafficProfile::constant(model);
    let problem = FluidProblem::for_model(model, &averager, &profile);
    let mut report = analyze(&problem, upper, u0, tol)?;
    report.robust_stable = robust_stability(model, tol)?.verdict.as_bool();
    Ok(report)
}

/// [`find_equilibria`] on the box `(0, max(10, 4 u0)]` in every coordinate.
pub fn classify(model: &NetworkModel, u0: &[f64], tol: f64) -> Result<EquilibriumReport, FluidError> {
    let upper: Vec<f64> = u0.iter().map(|&u| (4.0 * u).max(10.0)).collect();
    find_equilibria(model, &upper, u0, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    NotStable,
    Inconclusive,
}

impl Verdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::Stable => Some(true),
            Verdict::NotStable => Some(false),
            Verdict::Inconclusive => None,
        }
    }
}

/// Which sufficient condition was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// `sum rho < C`.
    WorkConserving,
    /// Sign of the drift at `0+`.
    Monotone,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustStability {
    pub verdict: Verdict,
    pub criterion: Criterion,
    /// Positive when stable: `C - sum rho`, or `-max_i drift_i(0+)`.
    pub margin: f64,
}

fn verdict_from(margin: f64, tol: f64) -> Verdict {
    if margin > tol {
        Verdict::Stable
    } else if margin < -tol {
        Verdict::NotStable
    } else {
        Verdict::Inconclusive
    }
}

/// Robust stability by load for work-conserving allocations and by the sign
/// of the drift at `0+` for monotone ones.
pub fn robust_stability(model: &NetworkModel, tol: f64) -> Result<RobustStability, FluidError> {
    let dim = model.len();
    let weights = model.weights();
    let samples = integer_grid(dim, 3);
    if is_work_conserving(&model.allocation, &weights, &samples) {
        if let Some(cap) = model.allocation.nominal_capacity() {
            let margin = cap - model.total_load();
            return Ok(RobustStability {
                verdict: verdict_from(margin, tol),
                criterion: Criterion::WorkConserving,
                margin,
            });
        }
    }
    if is_monotone(&model.allocation, &weights, dim, 4) {
        let averager = Averager::new(model);
        let margin = match averager.drift(&vec![SURGE_FLOOR; model.surge_count], None) {
            Ok(d) => -d.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
            // Stable classes are not ergodic even with all the capacity.
            Err(_) => f64::NEG_INFINITY,
        };
        return Ok(RobustStability {
            verdict: verdict_from(margin, tol),
            criterion: Criterion::Monotone,
            margin,
        });
    }
    Ok(RobustStability {
        verdict: Verdict::Inconclusive,
        criterion: Criterion::None,
        margin: f64::NAN,
    })
}
