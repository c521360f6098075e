//! Weighted proportional fairness: maximize `sum_i m_i log(phi_i)` subject to
//! `A phi <= C`, where `m_i = w_i x_i` is the priority mass of class `i`.
//! With `phi_i = x_i eta_i` this is the per-flow formulation.

use super::{link_loads, AllocError};

const MAX_ITERATIONS: usize = 100_000;

/// Rates together with the link prices certifying optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub rates: Vec<f64>,
    /// Lagrange multipliers of the link constraints.
    pub prices: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn masses(weights: &[f64], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(x)
        .map(|(w, x)| if *x > 0.0 { w * x } else { 0.0 })
        .collect()
}

fn is_linear_network(incidence: &[Vec<f64>]) -> bool {
    incidence.len() == 2
        && incidence[0] == [1.0, 1.0, 0.0]
        && incidence[1] == [1.0, 0.0, 1.0]
}

/// Solve the proportional fair program, using a closed form on a single link
/// and on the two-link linear network, and the iterative solver otherwise.
pub fn proportional_fair(
    weights: &[f64],
    x: &[f64],
    incidence: &[Vec<f64>],
    capacities: &[f64],
    tol: f64,
) -> Result<PfSolution, AllocError> {
    let m = masses(weights, x);
    if m.iter().all(|&v| v == 0.0) {
        return Ok(PfSolution {
            rates: vec![0.0; x.len()],
            prices: vec![0.0; capacities.len()],
            iterations: 0,
            residual: 0.0,
        });
    }
    if incidence.len() == 1 {
        return single_link(&m, &incidence[0], capacities[0]);
    }
    if is_linear_network(incidence) {
        return Ok(linear_network(&m, capacities[0], capacities[1]));
    }
    iterate(&m, incidence, capacities, tol)
}

/// The general dual solver, exposed so it can be checked against the
/// closed forms.
pub fn proportional_fair_iterative(
    weights: &[f64],
    x: &[f64],
    incidence: &[Vec<f64>],
    capacities: &[f64],
    tol: f64,
) -> Result<PfSolution, AllocError> {
    iterate(&masses(weights, x), incidence, capacities, tol)
}

fn single_link(m: &[f64], row: &[f64], cap: f64) -> Result<PfSolution, AllocError> {
    let total: f64 = m.iter().sum();
    let mut rates = vec![0.0; m.len()];
    for (i, (&mi, &a)) in m.iter().zip(row).enumerate() {
        if mi > 0.0 {
            if a <= 0.0 {
                return Err(AllocError::Unconstrained { class: i + 1 });
            }
            rates[i] = cap * mi / (a * total);
        }
    }
    Ok(PfSolution {
        rates,
        prices: vec![total / cap],
        iterations: 0,
        residual: 0.0,
    })
}

/// Routes: class 1 crosses both links, class 2 only link 1, class 3 only
/// link 2.
fn linear_network(m: &[f64], c1: f64, c2: f64) -> PfSolution {
    let (a, b, d) = (m[0], m[1], m[2]);
    let cmin = c1.min(c2);
    let f = match (a > 0.0, b > 0.0, d > 0.0) {
        (false, _, _) => 0.0,
        (true, false, false) => cmin,
        (true, true, false) => c2.min(a * c1 / (a + b)),
        (true, false, true) => c1.min(a * c2 / (a + d)),
        (true, true, true) if c1 == c2 => c1 * a / (a + b + d),
        (true, true, true) => {
            // a/f = b/(c1 - f) + d/(c2 - f) has a unique root on (0, cmin);
            // the left side minus the right side is decreasing.
            let g = |f: f64| a / f - b / (c1 - f) - d / (c2 - f);
            let (mut lo, mut hi) = (0.0, cmin);
            let mut f = cmin * a / (a + b + d);
            for _ in 0..200 {
                let v = g(f);
                if v > 0.0 {
                    lo = f;
                } else {
                    hi = f;
                }
                let dv = -a / (f * f) - b / ((c1 - f) * (c1 - f)) - d / ((c2 - f) * (c2 - f));
                let newton = f - v / dv;
                f = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                if hi - lo <= 1e-15 * cmin || v == 0.0 {
                    break;
                }
            }
            f
        }
    };
    let phi2 = if b > 0.0 { c1 - f } else { 0.0 };
    let phi3 = if d > 0.0 { c2 - f } else { 0.0 };
    let p1 = if b > 0.0 { b / phi2 } else { 0.0 };
    let p2 = if d > 0.0 { d / phi3 } else if a > 0.0 { a / f - p1 } else { 0.0 };
    PfSolution {
        rates: vec![f, phi2, phi3],
        prices: vec![p1, p2.max(0.0)],
        iterations: 0,
        residual: 0.0,
    }
}

/// Dual price iteration `p_l <- p_l * load_l / C_l` with primal rates
/// `phi_i = m_i / sum_l A_li p_l`.
fn iterate(
    m: &[f64],
    incidence: &[Vec<f64>],
    capacities: &[f64],
    tol: f64,
) -> Result<PfSolution, AllocError> {
    let links = incidence.len();
    let n = m.len();
    for i in (0..n).filter(|&i| m[i] > 0.0) {
        if incidence.iter().all(|row| row[i] <= 0.0) {
            return Err(AllocError::Unconstrained { class: i + 1 });
        }
    }
    let mut prices: Vec<f64> = (0..links)
        .map(|l| {
            let used: f64 = (0..n).map(|i| incidence[l][i] * m[i]).sum();
            if used > 0.0 {
                used / capacities[l]
            } else {
                0.0
            }
        })
        .collect();
    let mut rates = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        for i in 0..n {
            rates[i] = if m[i] > 0.0 {
                let cost: f64 = (0..links).map(|l| incidence[l][i] * prices[l]).sum();
                m[i] / cost
            } else {
                0.0
            };
        }
        let loads = link_loads(incidence, &rates);
        let pmax = prices.iter().cloned().fold(0.0, f64::max);
        residual = (0..links)
            .map(|l| {
                let gap = (loads[l] - capacities[l]) / capacities[l];
                if prices[l] == 0.0 {
                    gap.max(0.0)
                } else {
                    gap.max(gap.abs().min(prices[l] / pmax))
                }
            })
            .fold(0.0, f64::max);
        if residual <= tol {
            // Pull the rates strictly inside the polytope.
            let excess = (0..links)
                .map(|l| loads[l] / capacities[l])
                .fold(1.0, f64::max);
            rates.iter_mut().for_each(|r| *r /= excess);
            return Ok(PfSolution {
                rates,
                prices,
                iterations: iteration,
                residual,
            });
        }
        for l in 0..links {
            prices[l] *= loads[l] / capacities[l];
        }
    }
    Err(AllocError::SolverFailure {
        iterations: MAX_ITERATIONS,
        residual,
    })
}
