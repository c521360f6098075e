//! Elastic class 1 sharing one link with admission-controlled streaming
//! class 2 at rate `c` per flow.

use super::{AveragedRates, FluidError, FluidProblem, FluidSolution};
use crate::alloc::{AllocationSpec, CAPACITY_EPS};
use crate::model::{NetworkModel, TrafficProfile};
use crate::SURGE_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// Truncated Poisson law on the admissible streaming counts.
    Exact,
    /// Untruncated Poisson law, `phibar(z) = H(weight z / c)`.
    PoissonApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamParams {
    pub lambda1: f64,
    pub mu1: f64,
    /// Priority weight of the elastic class; its mass is `weight * z`.
    pub weight: f64,
    /// Streaming load in circuits, `lambda2 / (mu2 c)`.
    pub rho2: f64,
    pub c: f64,
}

impl StreamParams {
    pub fn from_model(model: &NetworkModel) -> Result<Self, FluidError> {
        let AllocationSpec::StreamElastic { rate, .. } = model.allocation else {
            return Err(FluidError::Invalid("model does not use the streaming/elastic allocation".into()));
        };
        if model.len() != 2 || model.surge_count != 1 {
            return Err(FluidError::Invalid("streaming/elastic model needs one elastic and one streaming class".into()));
        }
        let (e, s) = (&model.classes[0], &model.classes[1]);
        Ok(Self {
            lambda1: e.arrival_rate,
            mu1: e.service_rate,
            weight: e.weight,
            rho2: s.arrival_rate / (s.service_rate * rate),
            c: rate,
        })
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Largest admissible streaming count at elastic mass `m`: every `n`
    /// with `m / (m + c n) + c n <= 1`, that is `n <= (1 - m) / c`.
    pub fn max_flows(&self, mass: f64) -> u64 {
        if mass >= 1.0 {
            return 0;
        }
        let mut n = ((1.0 - mass) / self.c).floor().max(0.0) as u64;
        let fits = |n: u64| {
            let s = self.c * n as f64;
            mass / (mass + s) + s <= 1.0 + CAPACITY_EPS
        };
        while fits(n + 1) {
            n += 1;
        }
        while n > 0 && !fits(n) {
            n -= 1;
        }
        n
    }

    /// Truncated Poisson weights on `0..=n_max`, normalized.
    pub fn streaming_law(&self, n_max: u64) -> Vec<f64> {
        let mut w = Vec::with_capacity(n_max as usize + 1);
        let mut term = 1.0f64;
        let mut sum = 0.0;
        for n in 0..=n_max {
            if n > 0 {
                term *= self.rho2 / n as f64;
            }
            w.push(term);
            sum += term;
            if sum > 1e250 {
                w.iter_mut().for_each(|v| *v *= 1e-250);
                term *= 1e-250;
                sum *= 1e-250;
            }
        }
        w.iter().map(|v| v / sum).collect()
    }

    /// Averaged elastic rate at macroscopic elastic state `z`.
    pub fn phibar(&self, z: f64, mode: StreamMode) -> f64 {
        let m = self.weight * z.max(SURGE_FLOOR);
        match mode {
            StreamMode::Exact => {
                let n_max = self.max_flows(m);
                self.streaming_law(n_max)
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * m / (m + self.c * n as f64))
                    .sum()
            }
            StreamMode::PoissonApprox => super::h_quadrature(m / self.c, self.rho2),
        }
    }

    /// Probability of no streaming flow as the elastic state tends to 0.
    pub fn pi0(&self) -> f64 {
        self.streaming_law(self.max_flows(0.0))[0]
    }

    pub fn rates(&self, mode: StreamMode) -> StreamRates {
        StreamRates { params: *self, mode }
    }
}

/// [`AveragedRates`] of the streaming/elastic link.
#[derive(Debug, Clone, Copy)]
pub struct StreamRates {
    pub params: StreamParams,
    pub mode: StreamMode,
}

impl AveragedRates for StreamRates {
    fn surge_count(&self) -> usize {
        1
    }

    fn phibar(&self, z: &[f64]) -> Result<Vec<f64>, FluidError> {
        Ok(vec![self.params.phibar(z[0], self.mode)])
    }
}

/// Fluid path of the elastic class.
pub fn stream_fluid(
    params: &StreamParams,
    u0: f64,
    horizon: f64,
    step: f64,
    mode: StreamMode,
    tol: f64,
) -> FluidSolution {
    let rates = params.rates(mode);
    let profile = TrafficProfile {
        surge: vec![crate::model::CumulativeArrivals::constant(params.lambda1)],
    };
    FluidProblem::new(&rates, vec![params.mu1], profile).solve(&[u0], horizon, step, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho2: f64, c: f64) -> StreamParams {
        StreamParams {
            lambda1: 0.6,
            mu1: 1.0,
            weight: 1.0,
            rho2,
            c,
        }
    }

    #[test]
    fn admission_cap_matches_floor() {
        let p = params(1.0, 0.01);
        assert_eq!(p.max_flows(0.5), 50);
        assert_eq!(p.max_flows(0.99), 1);
        assert_eq!(p.max_flows(0.0), 100);
        assert_eq!(params(1.0, 0.25).max_flows(0.0), 4);
        assert_eq!(p.max_flows(1.2), 0);
    }

    #[test]
    fn elastic_rate_at_zero_is_empty_probability() {
        let p = params(0.2, 0.01);
        assert!((p.phibar(0.0, StreamMode::Exact) - p.pi0()).abs() < 1e-9);
        assert!((p.phibar(0.0, StreamMode::PoissonApprox) - (-0.2f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn exact_rate_is_increasing() {
        let p = params(20.0, 0.01);
        let mut prev = 0.0;
        for j in 0..200 {
            let v = p.phibar(j as f64 * 0.005, StreamMode::Exact);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }
}
