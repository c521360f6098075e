//! Bandwidth allocation functions.
//!
//! Every allocation is evaluated on a weighted state: `weights[i] * x[i]`
//! is the priority mass of class `i`. Surge coordinates may be real valued,
//! so each variant accepts arbitrary nonnegative reals and agrees with its
//! integer definition on integer points.

mod pf;

pub use pf::{proportional_fair, proportional_fair_iterative, PfSolution};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack accepted when checking capacity constraints.
pub const CAPACITY_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("state has {got} coordinates, allocation expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("infeasible state: allocated capacity {total} exceeds 1")]
    InfeasibleState { total: f64 },
    #[error("proportional fair solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("class {class} has positive mass but crosses no link")]
    Unconstrained { class: usize },
}

/// How the elastic class is served in the streaming/elastic allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticShare {
    /// `r1 x1 / (r1 x1 + c x2)`, the share used by the averaged dynamics.
    #[default]
    Ratio,
    /// `max(r1 x1 / (r1 x1 + c x2), 1 - c x2)`: the elastic class also
    /// takes any capacity left over by the streaming flows.
    MaxResidual,
}

/// Which allocation the network uses, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationSpec {
    /// Discriminatory processor sharing on one link of capacity `capacity`.
    Dps { capacity: f64 },
    /// Weighted proportional fairness. `incidence[l][i]` is the amount of
    /// link `l` used per unit rate of class `i`.
    ProportionalFair {
        incidence: Vec<Vec<f64>>,
        capacities: Vec<f64>,
        #[serde(default = "default_pf_tolerance")]
        tolerance: f64,
    },
    /// Two routes with dedicated links `c1`, `c2` and a shared unit link.
    Tree { c1: f64, c2: f64 },
    /// Elastic class 1 and streaming class 2 at `rate` per streaming flow,
    /// with admission control on streaming arrivals.
    StreamElastic {
        rate: f64,
        #[serde(default)]
        share: ElasticShare,
    },
    /// Full priority to the stable classes: the surging coordinates are
    /// zeroed whenever some stable class is present.
    PriorityWrap {
        inner: Box<AllocationSpec>,
        surge_count: usize,
    },
}

fn default_pf_tolerance() -> f64 {
    1e-9
}

/// Discriminatory processor sharing: `capacity * w_i x_i / sum_j w_j x_j`.
pub fn dps(weights: &[f64], x: &[f64], capacity: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    dps_into(weights, x, capacity, &mut out);
    out
}

fn dps_into(weights: &[f64], x: &[f64], capacity: f64, out: &mut [f64]) {
    let total: f64 = weights.iter().zip(x).map(|(w, x)| w * x).sum();
    for (o, (w, x)) in out.iter_mut().zip(weights.iter().zip(x)) {
        *o = if *x > 0.0 { capacity * w * x / total } else { 0.0 };
    }
}

/// The tree allocation on two routes.
pub fn tree(r1: f64, r2: f64, x: [f64; 2], c1: f64, c2: f64) -> [f64; 2] {
    let [x1, x2] = x;
    match (x1 > 0.0, x2 > 0.0) {
        (false, false) => [0.0, 0.0],
        (true, false) => [c1, 0.0],
        (false, true) => [0.0, c2.min(1.0)],
        (true, true) => {
            let (m1, m2) = (r1 * x1, r2 * x2);
            // Equality falls outside the strict region.
            let phi1 = if (m1 + m2) * c1 < m1 {
                c1
            } else {
                (m1 / (m1 + m2)).max(1.0 - c2)
            };
            [phi1, 1.0 - phi1]
        }
    }
}

/// Rates of the streaming/elastic allocation with the residual floor on the
/// elastic share. Class 2 (streaming) gets `c x2`.
pub fn stream_elastic(r1: f64, x1: f64, x2: f64, c: f64) -> Result<[f64; 2], AllocError> {
    let rates = stream_rates(r1 * x1, x2, c, ElasticShare::MaxResidual);
    let total = rates[0] + rates[1];
    if total > 1.0 + CAPACITY_EPS {
        return Err(AllocError::InfeasibleState { total });
    }
    Ok(rates)
}

/// Whether a streaming arrival fits: the state with one more streaming flow
/// must satisfy `phi1 + phi2 <= 1`.
pub fn stream_admits(r1: f64, x1: f64, x2: f64, c: f64) -> bool {
    let next = x2 + 1.0;
    let rates = stream_rates(r1 * x1, next, c, ElasticShare::Ratio);
    rates[0] + rates[1] <= 1.0 + CAPACITY_EPS
}

fn stream_rates(elastic_mass: f64, x2: f64, c: f64, share: ElasticShare) -> [f64; 2] {
    let phi2 = c * x2;
    if elastic_mass <= 0.0 {
        return [0.0, phi2];
    }
    let ratio = elastic_mass / (elastic_mass + phi2);
    let phi1 = match share {
        ElasticShare::Ratio => ratio,
        ElasticShare::MaxResidual => ratio.max(1.0 - phi2),
    };
    [phi1, phi2]
}

impl AllocationSpec {
    /// Number of classes the allocation is defined for, when fixed.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            AllocationSpec::Dps { .. } => None,
            AllocationSpec::ProportionalFair { incidence, .. } => incidence.first().map(Vec::len),
            AllocationSpec::Tree { .. } | AllocationSpec::StreamElastic { .. } => Some(2),
            AllocationSpec::PriorityWrap { inner, .. } => inner.dimension(),
        }
    }

    /// Capacity a work-conserving allocation hands out in every nonzero
    /// state, if the variant has a single such figure.
    pub fn nominal_capacity(&self) -> Option<f64> {
        match self {
            AllocationSpec::Dps { capacity } => Some(*capacity),
            AllocationSpec::ProportionalFair { capacities, .. } if capacities.len() == 1 => {
                Some(capacities[0])
            }
            AllocationSpec::ProportionalFair { .. } => None,
            AllocationSpec::Tree { .. } | AllocationSpec::StreamElastic { .. } => Some(1.0),
            AllocationSpec::PriorityWrap { inner, .. } => inner.nominal_capacity(),
        }
    }

    pub fn has_admission_control(&self) -> bool {
        match self {
            AllocationSpec::StreamElastic { .. } => true,
            AllocationSpec::PriorityWrap { inner, .. } => inner.has_admission_control(),
            _ => false,
        }
    }

    /// Parameter problems independent of any particular state.
    pub fn structural_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            AllocationSpec::Dps { capacity } => {
                if !(capacity.is_finite() && *capacity > 0.0) {
                    out.push(format!("DPS capacity {capacity} must be positive"));
                }
            }
            AllocationSpec::ProportionalFair {
                incidence,
                capacities,
                tolerance,
            } => {
                if incidence.is_empty() {
                    out.push("proportional fair allocation needs at least one link".into());
                }
                if incidence.len() != capacities.len() {
                    out.push(format!(
                        "{} incidence rows but {} capacities",
                        incidence.len(),
                        capacities.len()
                    ));
                }
                let n = incidence.first().map_or(0, Vec::len);
                for (l, row) in incidence.iter().enumerate() {
                    if row.len() != n {
                        out.push(format!("incidence row {l} has {} entries, expected {n}", row.len()));
                    }
                    if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                        out.push(format!("incidence row {l} has a negative or non-finite entry"));
                    }
                }
                for i in 0..n {
                    if incidence.iter().all(|row| row.get(i).copied().unwrap_or(0.0) == 0.0) {
                        out.push(format!("class {} crosses no link", i + 1));
                    }
                }
                if capacities.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                    out.push("link capacities must be positive".into());
                }
                if !(*tolerance > 0.0) {
                    out.push(format!("solver tolerance {tolerance} must be positive"));
                }
            }
            AllocationSpec::Tree { c1, c2 } => {
                for (name, c) in [("c1", c1), ("c2", c2)] {
                    if !(*c > 0.0 && *c <= 1.0) {
                        out.push(format!("tree capacity {name} = {c} must lie in (0, 1]"));
                    }
                }
                if c1 + c2 < 1.0 {
                    out.push(format!("tree capacities c1 + c2 = {} < 1 make the allocation exceed c1", c1 + c2));
                }
            }
            AllocationSpec::StreamElastic { rate, .. } => {
                if !(*rate > 0.0 && *rate < 1.0) {
                    out.push(format!("streaming rate {rate} must lie in (0, 1)"));
                }
            }
            AllocationSpec::PriorityWrap { inner, surge_count } => {
                out.extend(inner.structural_violations());
                if let Some(d) = inner.dimension() {
                    if *surge_count >= d {
                        out.push(format!("priority wrap surge count {surge_count} leaves no stable class"));
                    }
                }
            }
        }
        out
    }

    /// Allocation `phi(w . x)`.
    pub fn rates(&self, weights: &[f64], x: &[f64]) -> Result<Vec<f64>, AllocError> {
        let mut out = vec![0.0; x.len()];
        self.rates_into(weights, x, &mut out)?;
        Ok(out)
    }

    /// Same as [`rates`](Self::rates) but writes into `out`.
    pub fn rates_into(&self, weights: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), AllocError> {
        if let Some(d) = self.dimension() {
            if x.len() != d {
                return Err(AllocError::Dimension { expected: d, got: x.len() });
            }
        }
        debug_assert_eq!(weights.len(), x.len());
        match self {
            AllocationSpec::Dps { capacity } => dps_into(weights, x, *capacity, out),
            AllocationSpec::ProportionalFair {
                incidence,
                capacities,
                tolerance,
            } => {
                let sol = proportional_fair(weights, x, incidence, capacities, *tolerance)?;
                out.copy_from_slice(&sol.rates);
            }
            AllocationSpec::Tree { c1, c2 } => {
                out.copy_from_slice(&tree(weights[0], weights[1], [x[0], x[1]], *c1, *c2));
            }
            AllocationSpec::StreamElastic { rate, share } => {
                let [mut phi1, phi2] = stream_rates(weights[0] * x[0], x[1], *rate, *share);
                // Admitted streaming flows are never preempted: when elastic
                // growth pushes the state past capacity the elastic class
                // absorbs the deficit.
                if phi1 + phi2 > 1.0 {
                    phi1 = (1.0 - phi2).max(0.0);
                }
                out[0] = phi1;
                out[1] = phi2;
            }
            AllocationSpec::PriorityWrap { inner, surge_count } => {
                let c = *surge_count;
                if x[c..].iter().any(|&v| v > 0.0) {
                    let mut masked = x.to_vec();
                    masked[..c].iter_mut().for_each(|v| *v = 0.0);
                    inner.rates_into(weights, &masked, out)?;
                } else {
                    inner.rates_into(weights, x, out)?;
                }
            }
        }
        Ok(())
    }

    /// Whether an arrival of `class` is admitted in state `x`.
    pub fn admits(&self, weights: &[f64], x: &[f64], class: usize) -> bool {
        match self {
            AllocationSpec::StreamElastic { rate, .. } => {
                class != 1 || stream_admits(weights[0], x[0], x[1], *rate)
            }
            AllocationSpec::PriorityWrap { inner, .. } => inner.admits(weights, x, class),
            _ => true,
        }
    }

    /// The full-priority allocation built on top of this one.
    pub fn priority_wrap(&self, surge_count: usize) -> AllocationSpec {
        AllocationSpec::PriorityWrap {
            inner: Box::new(self.clone()),
            surge_count,
        }
    }
}

/// Full-priority version of `inner` for `surge_count` surging classes.
pub fn priority_wrap(inner: &AllocationSpec, surge_count: usize) -> AllocationSpec {
    inner.priority_wrap(surge_count)
}

/// True iff the allocation hands out exactly its nominal capacity on every
/// nonzero sampled state.
pub fn is_work_conserving(spec: &AllocationSpec, weights: &[f64], samples: &[Vec<f64>]) -> bool {
    let Some(cap) = spec.nominal_capacity() else {
        return false;
    };
    samples
        .iter()
        .filter(|x| x.iter().any(|&v| v > 0.0))
        .all(|x| match spec.rates(weights, x) {
            Ok(r) => (r.iter().sum::<f64>() - cap).abs() <= 1e-9,
            Err(_) => false,
        })
}

/// All integer states in `{0..=max}^dim`.
pub fn integer_grid(dim: usize, max: u32) -> Vec<Vec<f64>> {
    let side = max as usize + 1;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let v = (k % side) as f64;
                    k /= side;
                    v
                })
                .collect()
        })
        .collect()
}

/// Check that `phi_i` is nonincreasing in every other coordinate on the
/// integer grid `{0..=max}^dim`.
pub fn is_monotone(spec: &AllocationSpec, weights: &[f64], dim: usize, max: u32) -> bool {
    for x in integer_grid(dim, max) {
        let Ok(base) = spec.rates(weights, &x) else {
            return false;
        };
        for j in 0..dim {
            let mut up = x.clone();
            up[j] += 1.0;
            if !spec.admits(weights, &x, j) {
                continue;
            }
            let Ok(next) = spec.rates(weights, &up) else {
                return false;
            };
            for i in (0..dim).filter(|&i| i != j) {
                if next[i] > base[i] + 1e-12 {
                    return false;
                }
            }
        }
    }
    true
}

/// Link loads `incidence * rates`.
pub fn link_loads(incidence: &[Vec<f64>], rates: &[f64]) -> Vec<f64> {
    incidence
        .iter()
        .map(|row| row.iter().zip(rates).map(|(a, r)| a * r).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dps_proportional_shares() {
        assert!(close(&dps(&[1.0; 3], &[2.0, 3.0, 5.0], 1.0), &[0.2, 0.3, 0.5], 1e-15));
        assert_eq!(dps(&[1.0, 2.0], &[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn dps_frozen_surge_equal_masses() {
        // Surge frozen at z = 1 with unit weight, stable counts (1, 1).
        let r = dps(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 1.0);
        assert!(close(&r, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn tree_strict_priority_when_surge_weight_vanishes() {
        let [p1, p2] = tree(0.0, 1.0, [3.0, 2.0], 0.4, 0.8);
        assert!((p1 - 0.2).abs() < 1e-15);
        assert!((p2 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn tree_examples() {
        // (1 + 1) 0.4 < 1 puts (1, 1) in the strict region.
        let [p1, p2] = tree(1.0, 1.0, [1.0, 1.0], 0.4, 0.8);
        assert_eq!((p1, p2), (0.4, 0.6));
        let [p1, p2] = tree(1.0, 1.0, [1.0, 2.0], 0.4, 0.8);
        assert!((p1 - 1.0 / 3.0).abs() < 1e-15 && (p2 - 2.0 / 3.0).abs() < 1e-15);
        let [p1, _] = tree(1.0, 1.0, [5.0, 1.0], 0.4, 0.8);
        assert_eq!(p1, 0.4);
        assert_eq!(tree(1.0, 1.0, [2.0, 0.0], 0.4, 0.8), [0.4, 0.0]);
        assert_eq!(tree(1.0, 1.0, [0.0, 2.0], 0.4, 0.8), [0.0, 0.8]);
        assert_eq!(tree(1.0, 1.0, [0.0, 0.0], 0.4, 0.8), [0.0, 0.0]);
    }

    #[test]
    fn tree_boundary_of_strict_region_takes_max_branch() {
        // (x1 + x2) c1 = x1 exactly: x1 = 2, x2 = 3, c1 = 0.4.
        let [p1, _] = tree(1.0, 1.0, [2.0, 3.0], 0.4, 0.8);
        assert_eq!(p1, 0.4f64.max(0.2));
        let [p1, _] = tree(1.0, 1.0, [2.0, 3.0], 0.4, 0.5);
        assert_eq!(p1, 0.5);
    }

    #[test]
    fn stream_elastic_examples() {
        assert_eq!(stream_elastic(1.0, 3.0, 0.0, 0.01).unwrap(), [1.0, 0.0]);
        let [p1, p2] = stream_elastic(1.0, 0.0, 10.0, 0.01).unwrap();
        assert_eq!(p1, 0.0);
        assert!((p2 - 0.1).abs() < 1e-15);
        assert!(stream_admits(1.0, 0.5, 49.0, 0.01));
        assert!(!stream_admits(1.0, 0.5, 50.0, 0.01));
    }

    #[test]
    fn stream_elastic_rejects_overfull_state() {
        assert!(matches!(
            stream_elastic(1.0, 0.5, 60.0, 0.01),
            Err(AllocError::InfeasibleState { .. })
        ));
    }

    #[test]
    fn priority_wrap_examples() {
        let t = AllocationSpec::Tree { c1: 0.4, c2: 0.8 }.priority_wrap(1);
        assert_eq!(t.rates(&[1.0, 1.0], &[3.0, 2.0]).unwrap(), vec![0.0, 0.8]);
        assert_eq!(t.rates(&[1.0, 1.0], &[3.0, 0.0]).unwrap(), vec![0.4, 0.0]);
        let d = priority_wrap(&AllocationSpec::Dps { capacity: 1.0 }, 1);
        assert_eq!(d.rates(&[1.0; 3], &[5.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn work_conservation_by_variant() {
        let samples = integer_grid(2, 4);
        let w = [1.0, 1.0];
        assert!(is_work_conserving(&AllocationSpec::Dps { capacity: 1.0 }, &w, &samples));
        assert!(!is_work_conserving(&AllocationSpec::Tree { c1: 0.4, c2: 0.8 }, &w, &samples));
        let s = AllocationSpec::StreamElastic {
            rate: 0.1,
            share: ElasticShare::MaxResidual,
        };
        assert!(!is_work_conserving(&s, &w, &[vec![0.0, 3.0]]));
        let pf = AllocationSpec::ProportionalFair {
            incidence: vec![vec![1.0, 1.0]],
            capacities: vec![1.0],
            tolerance: 1e-10,
        };
        assert!(is_work_conserving(&pf, &w, &samples));
    }

    #[test]
    fn monotone_variants() {
        assert!(is_monotone(&AllocationSpec::Dps { capacity: 1.0 }, &[1.0, 2.0, 0.5], 3, 5));
        assert!(is_monotone(&AllocationSpec::Tree { c1: 0.4, c2: 0.8 }, &[1.0, 1.0], 2, 12));
        let s = AllocationSpec::StreamElastic {
            rate: 0.05,
            share: ElasticShare::Ratio,
        };
        assert!(is_monotone(&s, &[1.0, 1.0], 2, 10));
    }

    #[test]
    fn zero_coordinates_get_exactly_zero() {
        let specs = [
            AllocationSpec::Dps { capacity: 1.0 },
            AllocationSpec::Tree { c1: 0.4, c2: 0.8 },
            AllocationSpec::StreamElastic {
                rate: 0.01,
                share: ElasticShare::Ratio,
            },
        ];
        for s in &specs {
            for x in integer_grid(2, 3) {
                let r = s.rates(&[1.0, 1.0], &x).unwrap();
                for (xi, ri) in x.iter().zip(&r) {
                    if *xi == 0.0 {
                        assert_eq!(*ri, 0.0, "{s:?} at {x:?}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn dps_is_feasible_and_work_conserving(
            w in prop::collection::vec(0.01f64..10.0, 3),
            x in prop::collection::vec(0.0f64..50.0, 3),
            cap in 0.1f64..5.0,
        ) {
            let r = dps(&w, &x, cap);
            let sum: f64 = r.iter().sum();
            if x.iter().any(|&v| v > 0.0) {
                prop_assert!((sum - cap).abs() <= 1e-9 * cap);
            } else {
                prop_assert_eq!(sum, 0.0);
            }
            prop_assert!(r.iter().all(|&v| v >= 0.0 && v <= cap * (1.0 + 1e-12)));
        }

        #[test]
        fn tree_is_feasible(
            r in prop::collection::vec(0.01f64..10.0, 2),
            x in prop::collection::vec(0.0f64..50.0, 2),
            c1 in 0.2f64..1.0,
            c2 in 0.2f64..1.0,
        ) {
            prop_assume!(c1 + c2 >= 1.0);
            let [p1, p2] = tree(r[0], r[1], [x[0], x[1]], c1, c2);
            prop_assert!(p1 <= c1 + 1e-12 && p2 <= c2 + 1e-12);
            prop_assert!(p1 + p2 <= 1.0 + 1e-12);
            prop_assert!(p1 >= 0.0 && p2 >= 0.0);
        }

        #[test]
        fn real_surge_coordinates_extend_integer_definition(
            x1 in 0u32..20, x2 in 0u32..20, w in 0.1f64..4.0,
        ) {
            // Evaluating at a real coordinate equal to an integer gives the
            // integer value, and nearby reals stay nearby.
            let spec = AllocationSpec::Tree { c1: 0.4, c2: 0.8 };
            let a = spec.rates(&[w, 1.0], &[x1 as f64, x2 as f64]).unwrap();
            let b = spec.rates(&[w, 1.0], &[x1 as f64 + 1e-9, x2 as f64]).unwrap();
            if x1 > 0 {
                prop_assert!((a[0] - b[0]).abs() < 1e-6);
            }
            let d = AllocationSpec::Dps { capacity: 1.0 };
            let a = d.rates(&[w, 1.0], &[x1 as f64, x2 as f64]).unwrap();
            let b = d.rates(&[w, 1.0], &[x1 as f64 + 1e-9, x2 as f64]).unwrap();
            if x1 + x2 > 0 {
                prop_assert!((a[0] - b[0]).abs() < 1e-6);
            }
        }
    }
}
