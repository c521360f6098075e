//! Network instances: traffic classes, the allocation they share, and the
//! cumulative-arrival profiles that drive surging classes.

use serde::{Deserialize, Serialize};

use crate::alloc::AllocationSpec;

/// One class of flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficClass {
    /// Poisson arrival intensity (flows per unit time).
    pub arrival_rate: f64,
    /// Inverse mean flow size.
    pub service_rate: f64,
    /// Allocation weight. For a surging class this is the unscaled weight;
    /// the simulator divides it by the scaling parameter.
    pub weight: f64,
    #[serde(default)]
    pub is_surge: bool,
}

impl TrafficClass {
    pub fn new(arrival_rate: f64, service_rate: f64, weight: f64, is_surge: bool) -> Self {
        Self {
            arrival_rate,
            service_rate,
            weight,
            is_surge,
        }
    }

    /// A stable class with unit weight.
    pub fn stable(arrival_rate: f64, service_rate: f64) -> Self {
        Self::new(arrival_rate, service_rate, 1.0, false)
    }

    /// A surging class with unit weight.
    pub fn surge(arrival_rate: f64, service_rate: f64) -> Self {
        Self::new(arrival_rate, service_rate, 1.0, true)
    }

    /// Offered load `arrival_rate / service_rate`.
    pub fn load(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }
}

/// A multi-class bandwidth-sharing network. Surging classes occupy the
/// leading indices `0..surge_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub classes: Vec<TrafficClass>,
    pub allocation: AllocationSpec,
    pub surge_count: usize,
}

/// A broken invariant found by [`NetworkModel::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Class index the violation refers to, if any.
    pub class: Option<usize>,
    pub message: String,
}

impl Violation {
    fn global(message: impl Into<String>) -> Self {
        Self {
            class: None,
            message: message.into(),
        }
    }

    fn class(class: usize, message: impl Into<String>) -> Self {
        Self {
            class: Some(class),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.class {
            Some(i) => write!(f, "class {}: {}", i + 1, self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl NetworkModel {
    pub fn new(classes: Vec<TrafficClass>, allocation: AllocationSpec, surge_count: usize) -> Self {
        Self {
            classes,
            allocation,
            surge_count,
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn stable_count(&self) -> usize {
        self.classes.len().saturating_sub(self.surge_count)
    }

    pub fn surge_classes(&self) -> &[TrafficClass] {
        &self.classes[..self.surge_count.min(self.classes.len())]
    }

    pub fn stable_classes(&self) -> &[TrafficClass] {
        &self.classes[self.surge_count.min(self.classes.len())..]
    }

    /// Total offered load over all classes.
    pub fn total_load(&self) -> f64 {
        self.classes.iter().map(TrafficClass::load).sum()
    }

    /// Offered load of the stable classes only.
    pub fn stable_load(&self) -> f64 {
        self.stable_classes().iter().map(TrafficClass::load).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.weight).collect()
    }

    /// Weights in effect at scaling parameter `k`: surge weights are divided
    /// by `k`, stable weights are untouched.
    pub fn scaled_weights(&self, k: f64) -> Vec<f64> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| if i < self.surge_count { c.weight / k } else { c.weight })
            .collect()
    }

    /// Check every structural invariant; an empty list means the model is
    /// well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.classes.len();
        if n == 0 {
            out.push(Violation::global("model has no classes"));
            return out;
        }
        if self.surge_count == 0 {
            out.push(Violation::global("at least one surging class is required"));
        }
        if self.surge_count >= n {
            out.push(Violation::global(format!(
                "surge_count = {} leaves no stable class among {n}",
                self.surge_count
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.arrival_rate.is_finite() && c.arrival_rate >= 0.0) {
                out.push(Violation::class(i, format!("arrival rate {} must be finite and >= 0", c.arrival_rate)));
            }
            if !(c.service_rate.is_finite() && c.service_rate > 0.0) {
                out.push(Violation::class(i, format!("service rate {} must be finite and > 0", c.service_rate)));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                out.push(Violation::class(i, format!("weight {} must be finite and > 0", c.weight)));
            }
            let should_surge = i < self.surge_count;
            if c.is_surge != should_surge {
                out.push(Violation::class(
                    i,
                    if c.is_surge {
                        "surging class is not among the leading surge_count indices"
                    } else {
                        "class is inside the surge prefix but is not flagged as surging"
                    },
                ));
            }
        }
        if let Some(dim) = self.allocation.dimension() {
            if dim != n {
                out.push(Violation::global(format!(
                    "allocation is defined for {dim} classes, model has {n}"
                )));
            }
        }
        for msg in self.allocation.structural_violations() {
            out.push(Violation::global(msg));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// Piecewise-linear cumulative arrivals of one surging class on the
/// macroscopic time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeArrivals {
    /// Breakpoints `(t, a(t))`, starting at `(0, 0)`.
    pub breakpoints: Vec<(f64, f64)>,
    /// Slope used after the last breakpoint.
    pub tail_rate: f64,
}

impl CumulativeArrivals {
    /// Constant arrival rate `rate`: `a(t) = rate * t`.
    pub fn constant(rate: f64) -> Self {
        Self {
            breakpoints: vec![(0.0, 0.0)],
            tail_rate: rate,
        }
    }

    /// Build from consecutive `(duration, rate)` segments, continuing at
    /// `tail_rate` afterwards.
    pub fn from_segments(segments: &[(f64, f64)], tail_rate: f64) -> Self {
        let mut breakpoints = vec![(0.0, 0.0)];
        let (mut t, mut a) = (0.0, 0.0);
        for &(dt, rate) in segments {
            t += dt;
            a += dt * rate;
            breakpoints.push((t, a));
        }
        Self { breakpoints, tail_rate }
    }

    /// Slope of `a` at `t` (right-continuous).
    pub fn rate_at(&self, t: f64) -> f64 {
        for w in self.breakpoints.windows(2) {
            let ((t0, a0), (t1, a1)) = (w[0], w[1]);
            if t >= t0 && t < t1 {
                return (a1 - a0) / (t1 - t0);
            }
        }
        self.tail_rate
    }

    pub fn value_at(&self, t: f64) -> f64 {
        for w in self.breakpoints.windows(2) {
            let ((t0, a0), (t1, a1)) = (w[0], w[1]);
            if t >= t0 && t < t1 {
                return a0 + (a1 - a0) * (t - t0) / (t1 - t0);
            }
        }
        let &(tl, al) = self.breakpoints.last().expect("at least one breakpoint");
        al + self.tail_rate * (t - tl).max(0.0)
    }

    /// First breakpoint strictly after `t`, if any.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        self.breakpoints.iter().map(|&(s, _)| s).find(|&s| s > t)
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.breakpoints.first() {
            Some(&(t, a)) if t == 0.0 && a == 0.0 => {}
            _ => out.push("cumulative arrivals must start at (0, 0)".to_string()),
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                out.push(format!("breakpoint times must increase ({} after {})", w[1].0, w[0].0));
            }
            if w[1].1 < w[0].1 {
                out.push(format!("cumulative arrivals decrease between t = {} and t = {}", w[0].0, w[1].0));
            }
        }
        if !(self.tail_rate.is_finite() && self.tail_rate >= 0.0) {
            out.push(format!("tail rate {} must be finite and >= 0", self.tail_rate));
        }
        out
    }
}

/// Cumulative arrival functions for every surging class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub surge: Vec<CumulativeArrivals>,
}

impl TrafficProfile {
    /// Constant rates taken from the model's surging classes.
    pub fn constant(model: &NetworkModel) -> Self {
        Self {
            surge: model
                .surge_classes()
                .iter()
                .map(|c| CumulativeArrivals::constant(c.arrival_rate))
                .collect(),
        }
    }

    pub fn rates_at(&self, t: f64) -> Vec<f64> {
        self.surge.iter().map(|a| a.rate_at(t)).collect()
    }

    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        self.surge
            .iter()
            .filter_map(|a| a.next_breakpoint(t))
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
    }

    pub fn validate(&self, model: &NetworkModel) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.surge.len() != model.surge_count {
            out.push(Violation::global(format!(
                "profile covers {} surging classes, model has {}",
                self.surge.len(),
                model.surge_count
            )));
        }
        for (i, a) in self.surge.iter().enumerate() {
            out.extend(a.violations().into_iter().map(|m| Violation::class(i, m)));
        }
        out
    }
}

/// A point of the mixed state space: real-valued (macroscopic) surge
/// coordinates and integer stable coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub surge: Vec<f64>,
    pub stable: Vec<u64>,
}

impl State {
    pub fn new(surge: Vec<f64>, stable: Vec<u64>) -> Self {
        debug_assert!(surge.iter().all(|&z| z >= 0.0));
        Self { surge, stable }
    }

    /// Flatten into one real vector in class order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.surge
            .iter()
            .copied()
            .chain(self.stable.iter().map(|&y| y as f64))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.surge.iter().all(|&z| z == 0.0) && self.stable.iter().all(|&y| y == 0)
    }
}
