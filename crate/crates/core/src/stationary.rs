//! Stationary laws of the stable classes with the surge held fixed, and the
//! averaged rates and drift they induce.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::alloc::{AllocError, AllocationSpec};
use crate::model::NetworkModel;
use crate::SURGE_FLOOR;

/// Default tolerance for one stable class.
pub const TOL_1D: f64 = 1e-10;
/// Default tolerance for two or more stable classes.
pub const TOL_MULTI: f64 = 1e-8;
/// Largest truncation box, in states.
pub const MAX_STATES: usize = 1 << 14;
const MAX_STATES_1D: usize = 1 << 22;
const INITIAL_SIDE_CAP: usize = 64;
const MAX_SWEEPS: usize = 100_000;
/// Grid on which the memo cache quantizes the surge value.
pub const CACHE_QUANTUM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("empty support")]
    EmptySupport,
    #[error("zero death rate at state {state} inside the support")]
    ZeroDeath { state: u64 },
    #[error("frozen chain does not look ergodic: tail mass {tail_mass:e} with {states} states")]
    Divergent { states: usize, tail_mass: f64 },
    #[error("global balance iteration stalled at residual {residual:e} after {sweeps} sweeps")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// A probability law on a box `prod_i {0, .., dims[i] - 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub dims: Vec<usize>,
    /// Probabilities in mixed-radix order, first coordinate fastest.
    pub probs: Vec<f64>,
    /// Mass on the outer faces of the box, a proxy for the truncated tail.
    pub tail_mass: f64,
    /// Global balance residual of the uniformized chain.
    pub residual: f64,
    pub sweeps: usize,
}

impl StationaryDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn state(&self, mut index: usize) -> Vec<u64> {
        self.dims
            .iter()
            .map(|&d| {
                let v = index % d;
                index /= d;
                v as u64
            })
            .collect()
    }

    pub fn index(&self, y: &[u64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for (&v, &d) in y.iter().zip(&self.dims) {
            if v as usize >= d {
                return None;
            }
            idx += v as usize * stride;
            stride *= d;
        }
        Some(idx)
    }

    pub fn prob(&self, y: &[u64]) -> f64 {
        self.index(y).map_or(0.0, |i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<u64>, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.state(i), p))
    }

    pub fn expectation(&self, mut f: impl FnMut(&[u64]) -> f64) -> f64 {
        self.iter().map(|(y, p)| p * f(&y)).sum()
    }

    pub fn mean(&self, coord: usize) -> f64 {
        self.expectation(|y| y[coord] as f64)
    }

    pub fn marginal(&self, coord: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims[coord]];
        for (y, p) in self.iter() {
            out[y[coord] as usize] += p;
        }
        out
    }
}

/// Support of a one-dimensional birth-death chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// `{0, .., max}`.
    UpTo(u64),
    /// All of `N`; truncated once the tail is below tolerance.
    Unbounded,
}

/// Stationary law of a birth-death chain with constant birth rate `lambda`
/// by detailed balance: `pi(n) ~ prod_{k <= n} lambda / death(k)`.
pub fn stationary_1d(
    lambda: f64,
    mut death: impl FnMut(u64) -> f64,
    support: Support,
    tol: f64,
) -> Result<StationaryDistribution, StationaryError> {
    let mut w = vec![1.0f64];
    let mut sum = 1.0;
    let mut tail_mass = 0.0;
    if lambda > 0.0 {
        let mut n = 0u64;
        loop {
            if let Support::UpTo(max) = support {
                if n >= max {
                    break;
                }
            }
            let d = death(n + 1);
            if !(d > 0.0) {
                return Err(StationaryError::ZeroDeath { state: n + 1 });
            }
            let q = lambda / d;
            let last = *w.last().expect("nonempty");
            if support == Support::Unbounded && q < 1.0 {
                // Death rates are nondecreasing for every allocation used
                // here, so the remaining tail is at most geometric.
                let bound = last * q / (1.0 - q);
                if bound <= tol * sum && last <= tol * sum {
                    tail_mass = bound / sum;
                    break;
                }
            }
            if w.len() >= MAX_STATES_1D {
                return Err(StationaryError::Divergent {
                    states: w.len(),
                    tail_mass: last / sum,
                });
            }
            let next = last * q;
            w.push(next);
            sum += next;
            if sum > 1e250 {
                w.iter_mut().for_each(|v| *v *= 1e-250);
                sum *= 1e-250;
            }
            n += 1;
        }
    }
    let probs: Vec<f64> = w.iter().map(|v| v / sum).collect();
    Ok(StationaryDistribution {
        dims: vec![probs.len()],
        probs,
        tail_mass,
        residual: 0.0,
        sweeps: 0,
    })
}

/// The stable classes with the surge frozen at `surge`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenChain {
    pub allocation: AllocationSpec,
    /// Unscaled weights of every class; the surge mass is `weight * z`.
    pub weights: Vec<f64>,
    pub surge: Vec<f64>,
    pub arrival: Vec<f64>,
    pub service: Vec<f64>,
}

impl FrozenChain {
    /// Freeze the surge of `model` at `z`. Zero coordinates are replaced by
    /// [`SURGE_FLOOR`] so that rates are the `z -> 0+` limits.
    pub fn new(model: &NetworkModel, z: &[f64]) -> Self {
        let stable = model.stable_classes();
        Self {
            allocation: model.allocation.clone(),
            weights: model.weights(),
            surge: z.iter().map(|&v| v.max(SURGE_FLOOR)).collect(),
            arrival: stable.iter().map(|c| c.arrival_rate).collect(),
            service: stable.iter().map(|c| c.service_rate).collect(),
        }
    }

    /// Number of stable classes.
    pub fn dim(&self) -> usize {
        self.arrival.len()
    }

    fn full_state(&self, y: &[u64]) -> Vec<f64> {
        self.surge
            .iter()
            .copied()
            .chain(y.iter().map(|&v| v as f64))
            .collect()
    }

    /// Allocation of every class (surge first) at stable state `y`.
    pub fn rates(&self, y: &[u64]) -> Result<Vec<f64>, AllocError> {
        self.allocation.rates(&self.weights, &self.full_state(y))
    }

    /// Whether an arrival of stable class `j` is admitted at `y`.
    pub fn admits(&self, y: &[u64], j: usize) -> bool {
        self.allocation
            .admits(&self.weights, &self.full_state(y), self.surge.len() + j)
    }

    /// Largest reachable count of a single stable class, if arrivals are
    /// eventually blocked.
    fn admission_limit(&self) -> Option<u64> {
        if !self.allocation.has_admission_control() {
            return None;
        }
        let mut n = 0u64;
        while (n as usize) < MAX_STATES_1D {
            if !self.admits(&[n], 0) {
                return Some(n);
            }
            n += 1;
        }
        None
    }
}

/// Stationary law of a frozen chain. One stable class is solved exactly by
/// detailed balance; more are solved by Gauss-Seidel on a truncation box that
/// is doubled until the mass on its outer faces is below `tol`.
pub fn stationary_multi(chain: &FrozenChain, tol: f64) -> Result<StationaryDistribution, StationaryError> {
    stationary_warm(chain, tol, None)
}

fn stationary_warm(
    chain: &FrozenChain,
    tol: f64,
    warm: Option<&StationaryDistribution>,
) -> Result<StationaryDistribution, StationaryError> {
    let d = chain.dim();
    if d == 0 {
        return Err(StationaryError::EmptySupport);
    }
    if d == 1 {
        let support = chain.admission_limit().map_or(Support::Unbounded, Support::UpTo);
        let mut err = None;
        let dist = stationary_1d(
            chain.arrival[0],
            |n| match chain.rates(&[n]) {
                Ok(r) => chain.service[0] * r[chain.surge.len()],
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            },
            support,
            tol,
        );
        if let Some(e) = err {
            return Err(e.into());
        }
        return dist;
    }
    if chain.arrival.iter().all(|&l| l == 0.0) {
        let dims = vec![1; d];
        return Ok(StationaryDistribution {
            dims,
            probs: vec![1.0],
            tail_mass: 0.0,
            residual: 0.0,
            sweeps: 0,
        });
    }

    let mut dims: Vec<usize> = match warm {
        Some(w) if w.dims.len() == d => w.dims.clone(),
        _ => chain
            .arrival
            .iter()
            .zip(&chain.service)
            .map(|(&l, &m)| {
                let rho = l / m;
                let side = if rho < 1.0 {
                    (10.0 * rho / (1.0 - rho)).ceil() as usize
                } else {
                    INITIAL_SIDE_CAP
                };
                side.clamp(2, INITIAL_SIDE_CAP) + 1
            })
            .collect(),
    };
    let mut start = warm.filter(|w| w.dims == dims).map(|w| w.probs.clone());
    loop {
        let total: usize = dims.iter().product();
        let mut solver = BoxSolver::new(chain, &dims)?;
        let probs = start.take().unwrap_or_else(|| solver.initial_guess());
        let (probs, residual, sweeps) = solver.solve(probs, tol)?;
        let faces = solver.face_mass(&probs);
        let tail_mass = faces.iter().cloned().fold(0.0, f64::max);
        if tail_mass <= tol {
            return Ok(StationaryDistribution {
                dims,
                probs,
                tail_mass,
                residual,
                sweeps,
            });
        }
        let grown: Vec<usize> = dims
            .iter()
            .zip(&faces)
            .map(|(&n, &f)| if f > tol { 2 * (n - 1) + 1 } else { n })
            .collect();
        let grown_total: usize = grown.iter().product();
        if grown_total > MAX_STATES {
            return Err(StationaryError::Divergent {
                states: total,
                tail_mass,
            });
        }
        start = Some(embed(&probs, &dims, &grown));
        dims = grown;
    }
}

/// Copy a law on a smaller box into a larger one, filling new states with
/// a small positive mass so Gauss-Seidel can reach them.
fn embed(probs: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    let total: usize = to.iter().product();
    let mut out = vec![1e-12 / total as f64; total];
    for (i, &p) in probs.iter().enumerate() {
        let mut rem = i;
        let mut idx = 0;
        let mut stride = 1;
        for (&f, &t) in from.iter().zip(to) {
            idx += (rem % f) * stride;
            rem /= f;
            stride *= t;
        }
        out[idx] += p;
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

struct BoxSolver {
    dims: Vec<usize>,
    strides: Vec<usize>,
    coords: Vec<u32>,
    birth: Vec<f64>,
    death: Vec<f64>,
    out: Vec<f64>,
    uniform_rate: f64,
}

impl BoxSolver {
    fn new(chain: &FrozenChain, dims: &[usize]) -> Result<Self, StationaryError> {
        let d = dims.len();
        let total: usize = dims.iter().product();
        let mut strides = vec![1; d];
        for i in 1..d {
            strides[i] = strides[i - 1] * dims[i - 1];
        }
        let mut coords = vec![0u32; total * d];
        let mut birth = vec![0.0; total * d];
        let mut death = vec![0.0; total * d];
        let mut out = vec![0.0; total];
        let c = chain.surge.len();
        let mut y = vec![0u64; d];
        for s in 0..total {
            let mut rem = s;
            for i in 0..d {
                y[i] = (rem % dims[i]) as u64;
                rem /= dims[i];
                coords[s * d + i] = y[i] as u32;
            }
            let phi = chain.rates(&y)?;
            for i in 0..d {
                if (y[i] as usize) + 1 < dims[i] && chain.admits(&y, i) {
                    birth[s * d + i] = chain.arrival[i];
                }
                if y[i] > 0 {
                    death[s * d + i] = chain.service[i] * phi[c + i];
                }
            }
            out[s] = birth[s * d..(s + 1) * d].iter().sum::<f64>()
                + death[s * d..(s + 1) * d].iter().sum::<f64>();
        }
        let uniform_rate = out.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            dims: dims.to_vec(),
            strides,
            coords,
            birth,
            death,
            out,
            uniform_rate,
        })
    }

    fn initial_guess(&self) -> Vec<f64> {
        let total = self.out.len();
        vec![1.0 / total as f64; total]
    }

    fn inflow(&self, pi: &[f64], s: usize) -> f64 {
        let d = self.dims.len();
        let mut acc = 0.0;
        for i in 0..d {
            let yi = self.coords[s * d + i] as usize;
            let st = self.strides[i];
            if yi > 0 {
                acc += pi[s - st] * self.birth[(s - st) * d + i];
            }
            if yi + 1 < self.dims[i] {
                acc += pi[s + st] * self.death[(s + st) * d + i];
            }
        }
        acc
    }

    fn residual(&self, pi: &[f64]) -> f64 {
        let r: f64 = (0..pi.len())
            .map(|s| (self.inflow(pi, s) - pi[s] * self.out[s]).abs())
            .sum();
        r / self.uniform_rate
    }

    fn solve(&mut self, mut pi: Vec<f64>, tol: f64) -> Result<(Vec<f64>, f64, usize), StationaryError> {
        let total = pi.len();
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            // Symmetric sweep: forward then backward.
            for s in (0..total).chain((0..total).rev()) {
                if self.out[s] > 0.0 {
                    pi[s] = self.inflow(&pi, s) / self.out[s];
                }
            }
            sweeps += 1;
            let sum: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= sum);
            if sweeps % 8 == 0 {
                residual = self.residual(&pi);
                if residual <= tol * 1e-2 {
                    return Ok((pi, residual, sweeps));
                }
            }
        }
        Err(StationaryError::NoConvergence { sweeps, residual })
    }

    fn face_mass(&self, pi: &[f64]) -> Vec<f64> {
        let d = self.dims.len();
        let mut faces = vec![0.0; d];
        for (s, &p) in pi.iter().enumerate() {
            let coords = &self.coords[s * d..(s + 1) * d];
            for ((face, &c), &dim) in faces.iter_mut().zip(coords).zip(&self.dims) {
                if c as usize + 1 == dim {
                    *face += p;
                }
            }
        }
        faces
    }
}

/// Averaged allocation and stable-class means under a frozen law.
#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    /// `sum_y phi_i(z, y) pi^z(y)` for every class, surge classes first.
    pub phibar: Vec<f64>,
    /// Mean count of each stable class.
    pub stable_mean: Vec<f64>,
    pub distribution: Arc<StationaryDistribution>,
}

fn averages(chain: &FrozenChain, dist: StationaryDistribution) -> Result<Averages, StationaryError> {
    let n = chain.surge.len() + chain.dim();
    let mut phibar = vec![0.0; n];
    let mut stable_mean = vec![0.0; chain.dim()];
    for (y, p) in dist.iter() {
        if p == 0.0 {
            continue;
        }
        let r = chain.rates(&y)?;
        for (acc, v) in phibar.iter_mut().zip(&r) {
            *acc += p * v;
        }
        for (acc, &v) in stable_mean.iter_mut().zip(&y) {
            *acc += p * v as f64;
        }
    }
    Ok(Averages {
        phibar,
        stable_mean,
        distribution: Arc::new(dist),
    })
}

/// Evaluates averaged rates of one model at many surge values. With two or
/// more stable classes results are memoized on a grid of
/// [`CACHE_QUANTUM`] and successive solves are warm started.
#[derive(Debug)]
pub struct Averager {
    model: NetworkModel,
    tol: f64,
    cache: Option<Mutex<HashMap<Vec<i64>, Arc<Averages>>>>,
    warm: Mutex<Option<Arc<StationaryDistribution>>>,
}

impl Averager {
    pub fn new(model: &NetworkModel) -> Self {
        let multi = model.stable_count() >= 2;
        Self {
            model: model.clone(),
            tol: if multi { TOL_MULTI } else { TOL_1D },
            cache: multi.then(|| Mutex::new(HashMap::new())),
            warm: Mutex::new(None),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn at(&self, z: &[f64]) -> Result<Arc<Averages>, StationaryError> {
        let Some(cache) = &self.cache else {
            return self.compute(z).map(Arc::new);
        };
        let key: Vec<i64> = z.iter().map(|v| (v / CACHE_QUANTUM).round() as i64).collect();
        if let Some(hit) = cache.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let zq: Vec<f64> = key.iter().map(|&k| k as f64 * CACHE_QUANTUM).collect();
        let value = Arc::new(self.compute(&zq)?);
        cache
            .lock()
            .expect("cache poisoned")
            .insert(key, value.clone());
        Ok(value)
    }

    fn compute(&self, z: &[f64]) -> Result<Averages, StationaryError> {
        let chain = FrozenChain::new(&self.model, z);
        let warm = self.warm.lock().expect("warm start poisoned").clone();
        let dist = stationary_warm(&chain, self.tol, warm.as_deref())?;
        let avg = averages(&chain, dist)?;
        if chain.dim() >= 2 {
            *self.warm.lock().expect("warm start poisoned") = Some(avg.distribution.clone());
        }
        Ok(avg)
    }

    /// Averaged rates of the surge classes.
    pub fn surge_rates(&self, z: &[f64]) -> Result<Vec<f64>, StationaryError> {
        let c = self.model.surge_count;
        Ok(self.at(z)?.phibar[..c].to_vec())
    }

    /// Averaged drift `a'_i - mu_i phibar_i(z)` of the surge classes, where
    /// `slopes` defaults to the constant arrival rates.
    pub fn drift(&self, z: &[f64], slopes: Option<&[f64]>) -> Result<Vec<f64>, StationaryError> {
        let phibar = self.surge_rates(z)?;
        Ok(self
            .model
            .surge_classes()
            .iter()
            .zip(phibar)
            .enumerate()
            .map(|(i, (c, p))| slopes.map_or(c.arrival_rate, |s| s[i]) - c.service_rate * p)
            .collect())
    }
}

/// Averaged rates of every class at surge value `z`.
pub fn averaged_rate(model: &NetworkModel, z: &[f64], tol: f64) -> Result<Vec<f64>, StationaryError> {
    let avg = Averager::new(model).with_tol(tol).without_cache();
    Ok(avg.at(z)?.phibar.clone())
}

/// Averaged drift of the surge classes at `z`.
pub fn drift(
    model: &NetworkModel,
    z: &[f64],
    slopes: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<f64>, StationaryError> {
    Averager::new(model).with_tol(tol).without_cache().drift(z, slopes)
}
