//! Erlang-B blocking and the priority rescaling rule that keeps the
//! conditional blocking of streaming flows below a target.

use thiserror::Error;

use crate::fluid::{StreamMode, StreamParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("invalid target: {0}")]
    Invalid(String),
    #[error("target infeasible: {circuits} circuits of rate {c} leave no room for elastic traffic")]
    Infeasible { circuits: u64, c: f64 },
    #[error("elastic load {lambda1} is not below the averaged rate supremum {sup}")]
    Saturated { lambda1: f64, sup: f64 },
}

/// Blocking probability `g(n)` of `n` circuits at load `rho`, by the
/// recurrence `B(k) = rho B(k-1) / (k + rho B(k-1))`.
pub fn erlang_b(n: u64, rho: f64) -> f64 {
    let mut b = 1.0;
    for k in 1..=n {
        b = rho * b / (k as f64 + rho * b);
    }
    b
}

/// Smallest `n` with `erlang_b(n, rho) <= p`.
pub fn erlang_b_inverse(p: f64, rho: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let mut hi = 1u64;
    while erlang_b(hi, rho) > p {
        hi *= 2;
    }
    let mut lo = hi / 2;
    // erlang_b(lo) > p unless lo == 0 and p >= 1
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if erlang_b(mid, rho) <= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if erlang_b(lo, rho) <= p {
        lo
    } else {
        hi
    }
}

/// Streaming flows that fit next to elastic mass `z`: `floor((1 - z) / c)`.
pub fn max_streaming_flows(z: f64, c: f64) -> u64 {
    if z >= 1.0 {
        return 0;
    }
    ((1.0 - z) / c + 1e-9).floor() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosTarget {
    /// Maximal blocking probability of a streaming flow.
    pub p_m: f64,
    pub c: f64,
    /// Streaming load `lambda2 / (mu2 c)`.
    pub rho2: f64,
}

impl QosTarget {
    pub fn new(p_m: f64, c: f64, rho2: f64) -> Result<Self, QosError> {
        if !(p_m > 0.0 && p_m < 1.0) {
            return Err(QosError::Invalid(format!("p_m = {p_m} not in (0, 1)")));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(QosError::Invalid(format!("c = {c} not in (0, 1)")));
        }
        if !(rho2 > 0.0) {
            return Err(QosError::Invalid(format!("rho2 = {rho2} not positive")));
        }
        Ok(Self { p_m, c, rho2 })
    }

    pub fn circuits(&self) -> u64 {
        erlang_b_inverse(self.p_m, self.rho2)
    }

    /// Largest elastic mass leaving room for [`Self::circuits`] streams:
    /// `1 - c g^{-1}(p_m)`.
    pub fn threshold(&self) -> f64 {
        1.0 - self.c * self.circuits() as f64
    }
}

/// How the supremum of the elastic fluid path was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Supremum {
    /// The path decreases from its initial value.
    Initial(f64),
    /// The path increases to the root of `phibar(z) = rho1`.
    Equilibrium(f64),
}

impl Supremum {
    pub fn value(self) -> f64 {
        match self {
            Supremum::Initial(v) | Supremum::Equilibrium(v) => v,
        }
    }
}

/// Supremum over time of the elastic mass `weight * u1(t)` from `u0`.
pub fn u1_sup(params: &StreamParams, u0: f64) -> Result<Supremum, QosError> {
    let rho1 = params.lambda1 / params.mu1;
    // phibar as a function of the elastic mass m = weight z.
    let unit = params.with_weight(1.0);
    let f = |m: f64| unit.phibar(m, StreamMode::Exact);
    let m0 = params.weight * u0;
    if rho1 <= f(m0) {
        return Ok(Supremum::Initial(m0));
    }
    let sup = f(1.0);
    if rho1 >= sup {
        return Err(QosError::Saturated {
            lambda1: rho1,
            sup,
        });
    }
    let (mut lo, mut hi) = (m0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < rho1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Supremum::Equilibrium(0.5 * (lo + hi)))
}

/// Factor `(1 - c g^{-1}(p_m)) / u_sup` applied to the elastic priority.
pub fn qos_rescale(target: &QosTarget, u_sup: f64) -> Result<f64, QosError> {
    if !(u_sup > 0.0) {
        return Err(QosError::Invalid(format!("supremum {u_sup} not positive")));
    }
    let threshold = target.threshold();
    if threshold <= 0.0 {
        return Err(QosError::Infeasible {
            circuits: target.circuits(),
            c: target.c,
        });
    }
    Ok(threshold / u_sup)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosReport {
    pub target: QosTarget,
    pub circuits: u64,
    pub threshold: f64,
    pub u_sup: Supremum,
    /// Multiplies the elastic weight; 1 when the target already holds.
    pub factor: f64,
    /// Supremum after rescaling.
    pub u_sup_after: f64,
    pub post_check: bool,
}

impl std::fmt::Display for QosReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "p_m={:.12e}", self.target.p_m)?;
        writeln!(f, "rho2={:.12e}", self.target.rho2)?;
        writeln!(f, "c={:.12e}", self.target.c)?;
        writeln!(f, "circuits={}", self.circuits)?;
        writeln!(f, "threshold={:.12e}", self.threshold)?;
        let kind = match self.u_sup {
            Supremum::Initial(_) => "initial",
            Supremum::Equilibrium(_) => "equilibrium",
        };
        writeln!(f, "u_sup={:.12e} ({kind})", self.u_sup.value())?;
        writeln!(f, "factor={:.12e}", self.factor)?;
        writeln!(f, "u_sup_after={:.12e}", self.u_sup_after)?;
        writeln!(f, "post_check={}", if self.post_check { "pass" } else { "fail" })
    }
}

/// Rescale the elastic priority so that the elastic mass never exceeds the
/// threshold, and check the rescaled supremum. Only shrinks the weight.
pub fn qos_plan(target: &QosTarget, params: &StreamParams, u0: f64) -> Result<QosReport, QosError> {
    let u_sup = u1_sup(params, u0)?;
    let threshold = target.threshold();
    let factor = qos_rescale(target, u_sup.value())?.min(1.0);
    let rescaled = params.with_weight(params.weight * factor);
    let after = u1_sup(&rescaled, u0)?.value();
    Ok(QosReport {
        target: *target,
        circuits: target.circuits(),
        threshold,
        u_sup,
        factor,
        u_sup_after: after,
        post_check: after <= threshold + 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        assert_eq!(erlang_b(0, 3.0), 1.0);
        assert!((erlang_b(2, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(erlang_b_inverse(0.25, 1.0), 2);
        assert_eq!(erlang_b_inverse(0.2, 1.0), 2);
        assert_eq!(erlang_b_inverse(0.5, 1.0), 1);
    }

    #[test]
    fn flows_floor() {
        assert_eq!(max_streaming_flows(0.5, 0.01), 50);
        assert_eq!(max_streaming_flows(0.0, 0.25), 4);
        assert_eq!(max_streaming_flows(0.99, 0.01), 1);
        assert_eq!(max_streaming_flows(1.5, 0.01), 0);
    }

    #[test]
    fn rescale_ratios() {
        let t = QosTarget::new(0.05, 0.01, 20.0).unwrap();
        let th = t.threshold();
        assert!((qos_rescale(&t, th).unwrap() - 1.0).abs() < 1e-15);
        assert!((qos_rescale(&t, 2.0 * th).unwrap() - 0.5).abs() < 1e-15);
        let bad = QosTarget::new(1e-6, 0.2, 20.0).unwrap();
        assert!(matches!(qos_rescale(&bad, 0.5), Err(QosError::Infeasible { .. })));
    }
}
