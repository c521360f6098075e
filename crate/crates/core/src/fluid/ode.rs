//! Dormand-Prince 5(4) with reflection at zero and boundary-hit location.

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Width to which a boundary hit is located in time.
pub const EVENT_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub max_step: f64,
}

pub(crate) struct OdeOutput<E> {
    pub values: Vec<Vec<f64>>,
    pub stats: StepStats,
    /// Time and cause of an aborted integration.
    pub failure: Option<(f64, E)>,
    /// First time each coordinate was driven onto zero.
    pub hits: Vec<Option<f64>>,
}

/// Projected right-hand side: a coordinate at zero cannot decrease.
fn reflect(u: &[f64], mut f: Vec<f64>) -> Vec<f64> {
    for (fi, &ui) in f.iter_mut().zip(u) {
        if ui <= 0.0 && *fi < 0.0 {
            *fi = 0.0;
        }
    }
    f
}

/// Integrate `u' = f(t0, u)` reflected at zero, reporting `u` at each time of
/// `grid` (starting at 0). The right-hand side is autonomous between
/// consecutive `breakpoints`; `t0` passed to `f` is the start of the current
/// step, which never straddles a breakpoint.
pub(crate) fn integrate<E>(
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    u0: &[f64],
    grid: &[f64],
    breakpoints: &[f64],
    tol: f64,
) -> OdeOutput<E> {
    let d = u0.len();
    let mut out = OdeOutput {
        values: vec![u0.to_vec()],
        stats: StepStats {
            accepted: 0,
            rejected: 0,
            min_step: f64::INFINITY,
            max_step: 0.0,
        },
        failure: None,
        hits: u0.iter().map(|&v| (v <= 0.0).then_some(0.0)).collect(),
    };
    let t_end = *grid.last().unwrap_or(&0.0);
    let mut stops: Vec<f64> = grid[1..]
        .iter()
        .copied()
        .chain(breakpoints.iter().copied().filter(|&b| b > 0.0 && b < t_end))
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut t = 0.0;
    let mut u = u0.to_vec();
    let mut h = (t_end * 1e-3).max(1e-6);
    let mut next_grid = 1;
    let mut k = vec![vec![0.0; d]; 7];
    let mut trial = vec![0.0; d];
    let mut stage = vec![0.0; d];

    // One RK step of size `h` from (t, u): fills `k`, returns the error norm.
    let mut step = |t: f64, u: &[f64], h: f64, k: &mut Vec<Vec<f64>>, y: &mut Vec<f64>, stage: &mut Vec<f64>| -> Result<f64, E> {
        k[0] = reflect(u, f(t, u)?);
        for s in 1..7 {
            for i in 0..d {
                stage[i] = u[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            k[s] = reflect(stage, f(t, stage)?);
        }
        // The seventh stage is evaluated at the fifth-order solution.
        y.copy_from_slice(stage);
        let mut err: f64 = 0.0;
        for i in 0..d {
            let e = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let scale = tol * (1.0 + u[i].abs().max(y[i].abs()));
            err = err.max(e.abs() / scale);
        }
        Ok(err)
    };

    for stop in stops {
        while t < stop {
            if out.stats.accepted + out.stats.rejected > MAX_STEPS {
                return out;
            }
            let h_try = h.min(stop - t);
            let err = match step(t, &u, h_try, &mut k, &mut trial, &mut stage) {
                Ok(e) => e,
                Err(e) => {
                    out.failure = Some((t, e));
                    return out;
                }
            };
            if err > 1.0 {
                out.stats.rejected += 1;
                h = h_try * (0.9 * err.powf(-0.2)).max(0.2);
                continue;
            }
            let crossing = |y: &[f64]| (0..d).any(|i| u[i] > 0.0 && y[i] < 0.0);
            let mut taken = h_try;
            if crossing(&trial) {
                let (mut lo, mut hi) = (0.0, h_try);
                let mut scratch = vec![0.0; d];
                while hi - lo > EVENT_TOL {
                    let mid = 0.5 * (lo + hi);
                    if let Err(e) = step(t, &u, mid, &mut k, &mut scratch, &mut stage) {
                        out.failure = Some((t, e));
                        return out;
                    }
                    if crossing(&scratch) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if let Err(e) = step(t, &u, hi, &mut k, &mut trial, &mut stage) {
                    out.failure = Some((t, e));
                    return out;
                }
                taken = hi;
            }
            for i in 0..d {
                if trial[i] < 0.0 || (u[i] > 0.0 && trial[i] <= 0.0) {
                    trial[i] = 0.0;
                    if out.hits[i].is_none() {
                        out.hits[i] = Some(t + taken);
                    }
                }
            }
            out.stats.accepted += 1;
            out.stats.min_step = out.stats.min_step.min(taken);
            out.stats.max_step = out.stats.max_step.max(taken);
            t = if taken == stop - t { stop } else { t + taken };
            u.copy_from_slice(&trial);
            let grow = if err > 0.0 { (0.9 * err.powf(-0.2)).min(5.0) } else { 5.0 };
            h = (h_try * grow).max(1e-12);
        }
        if next_grid < grid.len() && (grid[next_grid] - t).abs() <= 1e-12 * (1.0 + t) {
            out.values.push(u.clone());
            next_grid += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|j| t * j as f64 / n as f64).collect()
    }

    #[test]
    fn exponential_decay() {
        let out = integrate(|_, u: &[f64]| Ok::<_, ()>(vec![-u[0]]), &[1.0], &grid(2.0, 4), &[], 1e-10);
        for (j, v) in out.values.iter().enumerate() {
            let t = 0.5 * j as f64;
            assert!((v[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_negative_drift_hits_zero_and_stays() {
        let out = integrate(|_, _: &[f64]| Ok::<_, ()>(vec![-0.1]), &[1.0], &grid(20.0, 40), &[], 1e-10);
        assert!((out.hits[0].unwrap() - 10.0).abs() < 1e-9);
        for (j, v) in out.values.iter().enumerate() {
            let t = 0.5 * j as f64;
            assert!((v[0] - (1.0 - 0.1 * t).max(0.0)).abs() < 1e-9, "t = {t}: {}", v[0]);
        }
    }

    #[test]
    fn leaves_the_boundary_when_drift_turns_positive() {
        // Drift -1 before t = 1 and +1 after.
        let out = integrate(
            |t0, _: &[f64]| Ok::<_, ()>(vec![if t0 < 1.0 { -1.0 } else { 1.0 }]),
            &[0.5],
            &grid(2.0, 4),
            &[1.0],
            1e-10,
        );
        let v: Vec<f64> = out.values.iter().map(|v| v[0]).collect();
        for (a, b) in v.iter().zip([0.5, 0.0, 0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-9, "{v:?}");
        }
    }
}
