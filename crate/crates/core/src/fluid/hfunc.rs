//! `H(z) = E[z / (z + X)]` for `X ~ Poisson(rho)`: the averaged elastic
//! rate at elastic mass `c z` when streaming occupancy is Poisson.
//!
//! `H` satisfies `H(n + 1) = (n + 1) / rho * (1 - H(n))` with
//! `H(0) = exp(-rho)`. Run forwards this recursion multiplies rounding
//! errors by `(n + 1) / rho` at every step, so [`h_function`] only uses it
//! forwards up to `n <= rho` and backwards (where it contracts) above.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HError {
    #[error("forward recursion left (0, 1) at n = {escaped} (value {value}); last trustworthy index {last_stable}")]
    Unstable { last_stable: u64, escaped: u64, value: f64 },
}

/// `H(z) = 1 - rho * int_0^1 v^z exp(rho (v - 1)) dv`, the integral form
/// after one integration by parts (smooth for every `z >= 0`).
pub fn h_quadrature(z: f64, rho: f64) -> f64 {
    let out = quadrature::integrate(|v: f64| v.powf(z) * (rho * (v - 1.0)).exp(), 0.0, 1.0, 1e-15);
    1.0 - rho * out.integral
}

/// `H(n)` by the recursion, evaluated in its stable direction.
pub fn h_function(n: u64, rho: f64) -> f64 {
    if (n as f64) <= rho {
        let mut h = (-rho).exp();
        for k in 0..n {
            h = (k + 1) as f64 / rho * (1.0 - h);
        }
        return h;
    }
    // Start far above n where H(N) ~ N / (N + rho) up to O(rho / N^2), and
    // run H(k) = 1 - rho H(k + 1) / (k + 1) down to n.
    let top = n + 80 + (2.0 * rho).ceil() as u64;
    let mut h = top as f64 / (top as f64 + rho);
    for k in (n..top).rev() {
        h = 1.0 - rho * h / (k + 1) as f64;
    }
    h
}

/// The literal forward recursion from `H(0)`. Fails as soon as a value
/// leaves `(0, 1)`.
pub fn h_forward(n: u64, rho: f64) -> Result<f64, HError> {
    let mut h = (-rho).exp();
    for k in 0..n {
        let next = (k + 1) as f64 / rho * (1.0 - h);
        if !(next > 0.0 && next < 1.0) {
            return Err(HError::Unstable {
                last_stable: k,
                escaped: k + 1,
                value: next,
            });
        }
        h = next;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HRow {
    pub n: u64,
    pub recursion: f64,
    pub quadrature: f64,
    /// Literal forward recursion, while it stays inside `(0, 1)`.
    pub forward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HTable {
    pub rho: f64,
    pub rows: Vec<HRow>,
    /// Where the forward recursion escaped `(0, 1)`, if it did.
    pub forward_escape: Option<u64>,
}

impl HTable {
    pub fn max_abs_difference(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.recursion - r.quadrature).abs())
            .fold(0.0, f64::max)
    }
}

/// `H(0..=n_max)` by the recursion and by quadrature side by side.
pub fn h_table(n_max: u64, rho: f64) -> HTable {
    let forward_escape = match h_forward(n_max, rho) {
        Ok(_) => None,
        Err(HError::Unstable { escaped, .. }) => Some(escaped),
    };
    let rows = (0..=n_max)
        .map(|n| HRow {
            n,
            recursion: h_function(n, rho),
            quadrature: h_quadrature(n as f64, rho),
            forward: h_forward(n, rho).ok(),
        })
        .collect();
    HTable {
        rho,
        rows,
        forward_escape,
    }
}
