use super::{ScaledTrajectory, SimError};

/// Sliding-window time averages `(1/s) int_t^{t+s} f(Y(h)) dh`, one per
/// grid time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Windows cut short by the horizon.
    pub truncated: Vec<bool>,
}

impl WindowSeries {
    /// Mean and standard error of the values of non-overlapping,
    /// non-truncated windows, treated as batch means.
    pub fn batch_mean(&self, window: f64) -> (f64, f64) {
        let mut picked = Vec::new();
        let mut next = f64::NEG_INFINITY;
        for ((&t, &v), &cut) in self.times.iter().zip(&self.values).zip(&self.truncated) {
            if !cut && t >= next - 1e-12 {
                picked.push(v);
                next = t + window;
            }
        }
        let n = picked.len() as f64;
        let mean = picked.iter().sum::<f64>() / n;
        (mean, super::standard_error(&picked))
    }
}

/// Window averages of `f` along the recorded path of `traj`. `f` receives
/// the scaled state (surge divided by `k`, stable counts as reals).
pub fn window_average(
    traj: &ScaledTrajectory,
    mut f: impl FnMut(&[f64]) -> f64,
    s: f64,
) -> Result<WindowSeries, SimError> {
    let path = traj.path.as_ref().ok_or(SimError::NoPath)?;
    let step = traj.times.get(1).map_or(f64::INFINITY, |t| t - traj.times[0]);
    if !(s > 0.0) || s < step * (1.0 - 1e-9) {
        return Err(SimError::Invalid(format!("window {s} is shorter than the grid step {step}")));
    }
    // Prefix integrals at event times.
    let m = path.len();
    let mut values = Vec::with_capacity(m);
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    let mut buf = Vec::with_capacity(path.dim);
    for i in 0..m {
        path.scaled_state(i, &mut buf);
        let v = f(&buf);
        values.push(v);
        let end = if i + 1 < m { path.times[i + 1] } else { path.horizon };
        prefix.push(prefix[i] + v * (end - path.times[i]));
    }
    let integral_to = |tau: f64| -> f64 {
        let idx = path.times.partition_point(|&t| t <= tau).max(1) - 1;
        prefix[idx] + values[idx] * (tau - path.times[idx])
    };
    let mut out = WindowSeries {
        times: Vec::with_capacity(traj.times.len()),
        values: Vec::with_capacity(traj.times.len()),
        truncated: Vec::with_capacity(traj.times.len()),
    };
    for &t in &traj.times {
        let end = (t + s).min(path.horizon);
        let cut = t + s > path.horizon * (1.0 + 1e-12);
        let v = if end > t {
            (integral_to(end) - integral_to(t)) / (end - t)
        } else {
            values[path.times.partition_point(|&x| x <= t).max(1) - 1]
        };
        out.times.push(t);
        out.values.push(v);
        out.truncated.push(cut);
    }
    Ok(out)
}

/// `max_j max_i |Y_i(t_j) - reference[j][i]|` over the surge coordinates.
pub fn sup_deviation(traj: &ScaledTrajectory, reference: &[Vec<f64>]) -> f64 {
    traj.surge
        .iter()
        .zip(reference)
        .flat_map(|(y, r)| y.iter().zip(r).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::alloc::AllocationSpec;
    use crate::model::{TrafficClass, TrafficProfile};

    #[test]
    fn constant_functional_averages_to_one() {
        let m = NetworkModel::new(
            vec![TrafficClass::surge(0.5, 1.0), TrafficClass::stable(0.3, 1.0)],
            AllocationSpec::Dps { capacity: 1.0 },
            1,
        );
        let cfg = SimConfig::new(100, 3.0, 0.1, 5, vec![1.0], vec![0]).with_path();
        let tr = simulate(&m, &TrafficProfile::constant(&m), &cfg).unwrap();
        let w = window_average(&tr, |_| 1.0, 0.5).unwrap();
        assert!(w.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(w.truncated.last().copied().unwrap());
        assert!(!w.truncated[0]);
    }

    #[test]
    fn short_window_is_rejected() {
        let m = NetworkModel::new(
            vec![TrafficClass::surge(0.5, 1.0), TrafficClass::stable(0.3, 1.0)],
            AllocationSpec::Dps { capacity: 1.0 },
            1,
        );
        let cfg = SimConfig::new(10, 1.0, 0.1, 5, vec![1.0], vec![0]).with_path();
        let tr = simulate(&m, &TrafficProfile::constant(&m), &cfg).unwrap();
        assert!(window_average(&tr, |_| 1.0, 0.05).is_err());
    }
}
