//! Two-sided Skorokhod map, reflected Brownian paths and Monte Carlo
//! evaluation of the workload control cost
//!
//! ```text
//! J̄ = E ∫₀^∞ e^{−αt} [ h̄(X̄ₜ) dt + r̄ dZ̄ₜ ],   (X̄, Ȳ, Z̄) = Γ[0, x*](x̄₀ + W̄).
//! ```
//!
//! Paths are sampled on a uniform grid. Discrete monitoring of a Brownian path
//! misses the excursions between grid points, which biases the boundary
//! pushing by `O(√dt)`. To remove most of that bias each step feeds the map
//! with the running minimum and maximum of the Brownian bridge between the two
//! grid values (both have closed-form laws given the endpoints) before the
//! endpoint itself, then reports the state at the grid point only.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::holding_cost::PiecewiseLinear;
use crate::rng::{self, StreamRng};
use crate::stats::MeanSe;

/// Samples of a right-continuous piecewise-constant path on `t = k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Path {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("path step must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("path has no samples".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// `φ = ψ + η₁ − η₂` with `φ ∈ [a, b]` and minimal pushing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reflection {
    pub phi: Vec<f64>,
    /// Cumulative pushing at the lower boundary.
    pub eta_lower: Vec<f64>,
    /// Cumulative pushing at the upper boundary.
    pub eta_upper: Vec<f64>,
}

/// Incremental form of the map: feed increments of `ψ` one at a time.
#[derive(Debug, Clone, Copy)]
pub struct Reflector {
    lo: f64,
    hi: f64,
    pub phi: f64,
    pub eta_lower: f64,
    pub eta_upper: f64,
}

impl Reflector {
    pub fn new(lo: f64, hi: f64, start: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("reflection bounds need a < b, got [{lo}, {hi}]")));
        }
        if !(lo..=hi).contains(&start) {
            return Err(Error::OutOfDomain { what: "initial value", value: start, lo, hi });
        }
        Ok(Self { lo, hi, phi: start, eta_lower: 0.0, eta_upper: 0.0 })
    }

    /// Applies one increment of `ψ`; returns the pushing `(dη₁, dη₂)` it caused.
    #[inline]
    pub fn push(&mut self, increment: f64) -> (f64, f64) {
        let y = self.phi + increment;
        if y < self.lo {
            let d = self.lo - y;
            self.eta_lower += d;
            self.phi = self.lo;
            (d, 0.0)
        } else if y > self.hi {
            let d = y - self.hi;
            self.eta_upper += d;
            self.phi = self.hi;
            (0.0, d)
        } else {
            self.phi = y;
            (0.0, 0.0)
        }
    }
}

/// The two-sided map on `[a, b]`, exact for piecewise-constant inputs.
/// `b = +∞` gives the one-sided map.
pub fn skorokhod_map(psi: &Path, a: f64, b: f64) -> Result<Reflection> {
    let mut r = Reflector::new(a, b, psi.values[0])?;
    let n = psi.len();
    let mut out = Reflection {
        phi: Vec::with_capacity(n),
        eta_lower: Vec::with_capacity(n),
        eta_upper: Vec::with_capacity(n),
    };
    out.phi.push(r.phi);
    out.eta_lower.push(0.0);
    out.eta_upper.push(0.0);
    for w in psi.values.windows(2) {
        r.push(w[1] - w[0]);
        out.phi.push(r.phi);
        out.eta_lower.push(r.eta_lower);
        out.eta_upper.push(r.eta_upper);
    }
    Ok(out)
}

/// Reflected Brownian motion on `[0, x*]` with drift `m̄` and variance `σ̄²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RbmParams {
    pub x0: f64,
    pub m_bar: f64,
    pub sigma2_bar: f64,
    pub x_star: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl RbmParams {
    /// Uses the default step and a horizon with `e^{−αT} = 10⁻⁹`.
    pub fn with_defaults(x0: f64, m_bar: f64, sigma2_bar: f64, x_star: f64, alpha: f64) -> Self {
        Self {
            x0,
            m_bar,
            sigma2_bar,
            x_star,
            dt: default_dt(x_star, sigma2_bar),
            horizon: default_horizon(alpha),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn check(&self) -> Result<()> {
        if !(self.x_star > 0.0 && self.x_star.is_finite()) {
            return Err(Error::InvalidArgument(format!("x_star must be positive, got {}", self.x_star)));
        }
        if !(0.0..=self.x_star).contains(&self.x0) {
            return Err(Error::OutOfDomain { what: "x0", value: self.x0, lo: 0.0, hi: self.x_star });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument("dt and horizon must be positive".into()));
        }
        if !(self.sigma2_bar >= 0.0) || !self.m_bar.is_finite() {
            return Err(Error::InvalidArgument("sigma2_bar must be nonnegative, m_bar finite".into()));
        }
        Ok(())
    }
}

/// `10⁻³ · min(1, x*²/σ̄²)`.
pub fn default_dt(x_star: f64, sigma2_bar: f64) -> f64 {
    let ratio = if sigma2_bar > 0.0 { x_star * x_star / sigma2_bar } else { 1.0 };
    1e-3 * ratio.min(1.0)
}

/// Horizon after which the discount factor is below `10⁻⁹`.
pub fn default_horizon(alpha: f64) -> f64 {
    1e9f64.ln() / alpha
}

/// One grid step of a reflected path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmStep {
    pub x: f64,
    pub dy: f64,
    pub dz: f64,
}

/// Streams grid samples of `Γ[0, x*](x̄₀ + W̄)` without storing the path.
pub struct RbmStepper {
    reflector: Reflector,
    drift: f64,
    sd: f64,
    var_dt: f64,
    remaining: usize,
    rng: StreamRng,
}

impl RbmStepper {
    pub fn new(params: &RbmParams, rng: StreamRng) -> Result<Self> {
        params.check()?;
        Ok(Self {
            reflector: Reflector::new(0.0, params.x_star, params.x0)?,
            drift: params.m_bar * params.dt,
            sd: (params.sigma2_bar * params.dt).sqrt(),
            var_dt: params.sigma2_bar * params.dt,
            remaining: params.steps(),
            rng,
        })
    }
}

impl Iterator for RbmStepper {
    type Item = RbmStep;

    fn next(&mut self) -> Option<RbmStep> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let d = self.drift + self.sd * z;
        // extremes of the bridge from 0 to d over one step
        let lo = 0.5 * (d - (d * d - 2.0 * self.var_dt * rng::open_unit(&mut self.rng).ln()).sqrt());
        let hi = 0.5 * (d + (d * d - 2.0 * self.var_dt * rng::open_unit(&mut self.rng).ln()).sqrt());
        let (first, second) = if self.rng.random::<bool>() { (lo, hi) } else { (hi, lo) };
        let r = &mut self.reflector;
        let (y0, z0) = (r.eta_lower, r.eta_upper);
        r.push(first);
        r.push(second - first);
        r.push(d - second);
        Some(RbmStep { x: r.phi, dy: r.eta_lower - y0, dz: r.eta_upper - z0 })
    }
}

/// Grid samples of `X̄`, `Ȳ`, `Z̄`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbmPaths {
    pub dt: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn simulate_rbm(params: &RbmParams, seed: u64) -> Result<RbmPaths> {
    simulate_rbm_with(params, rng::stream(seed, 0, 0))
}

fn simulate_rbm_with(params: &RbmParams, rng: StreamRng) -> Result<RbmPaths> {
    let stepper = RbmStepper::new(params, rng)?;
    let n = params.steps() + 1;
    let mut out = RbmPaths {
        dt: params.dt,
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    out.x.push(params.x0);
    out.y.push(0.0);
    out.z.push(0.0);
    let (mut y, mut z) = (0.0, 0.0);
    for s in stepper {
        y += s.dy;
        z += s.dz;
        out.x.push(s.x);
        out.y.push(y);
        out.z.push(z);
    }
    Ok(out)
}

/// Discounted cost of a path together with a bound on the truncated tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathCost {
    pub cost: f64,
    pub tail_bound: f64,
}

/// Accumulates `∫ e^{−αt} h̄(X̄) dt + Σ e^{−αt} r̄ ΔZ̄` step by step. The
/// holding term uses the exact discount integral over each step times the
/// trapezoid average of `h̄`.
#[derive(Debug, Clone)]
pub struct CostAccumulator<'a> {
    h_bar: &'a PiecewiseLinear,
    r_bar: f64,
    alpha: f64,
    dt: f64,
    step_weight: f64,
    k: usize,
    h_prev: f64,
    z_total: f64,
    pub cost: f64,
}

impl<'a> CostAccumulator<'a> {
    pub fn new(h_bar: &'a PiecewiseLinear, r_bar: f64, alpha: f64, dt: f64, x0: f64) -> Self {
        Self {
            h_bar,
            r_bar,
            alpha,
            dt,
            step_weight: -(-alpha * dt).exp_m1() / alpha,
            k: 0,
            h_prev: h_bar.eval(x0),
            z_total: 0.0,
            cost: 0.0,
        }
    }

    #[inline]
    pub fn step(&mut self, x: f64, dz: f64) {
        let t0 = self.k as f64 * self.dt;
        let disc = (-self.alpha * t0).exp();
        let h = self.h_bar.eval(x);
        self.cost += disc * self.step_weight * 0.5 * (self.h_prev + h);
        if dz != 0.0 {
            self.cost += disc * (-self.alpha * self.dt).exp() * self.r_bar * dz;
            self.z_total += dz;
        }
        self.h_prev = h;
        self.k += 1;
    }

    /// `e^{−αT}(h̄_max/α + r̄ · average pushing rate / α)`, a bound on the
    /// part of the cost beyond the horizon when the pushing rate stays near
    /// its observed average.
    pub fn finish(self) -> PathCost {
        let horizon = self.k as f64 * self.dt;
        let h_max = self.h_bar.values.iter().copied().fold(0.0, f64::max);
        let rate = if horizon > 0.0 { self.z_total / horizon } else { 0.0 };
        let tail_bound = (-self.alpha * horizon).exp() * (h_max + self.r_bar * rate) / self.alpha;
        PathCost { cost: self.cost, tail_bound }
    }
}

pub fn bcp_cost(paths: &RbmPaths, h_bar: &PiecewiseLinear, r_bar: f64, alpha: f64) -> Result<PathCost> {
    let n = paths.x.len();
    if n == 0 || paths.z.len() != n || paths.y.len() != n {
        return Err(Error::InvalidArgument("path components have mismatched lengths".into()));
    }
    let horizon = (n - 1) as f64 * paths.dt;
    if alpha * horizon < 20.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} too short for discount {alpha}: need alpha*T >= 20"
        )));
    }
    let mut acc = CostAccumulator::new(h_bar, r_bar, alpha, paths.dt, paths.x[0]);
    for k in 1..n {
        acc.step(paths.x[k], paths.z[k] - paths.z[k - 1]);
    }
    Ok(acc.finish())
}

/// Monte Carlo estimate of the discounted cost of the reflected process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub replications: usize,
    pub max_tail_bound: f64,
}

impl McEstimate {
    /// Standardized distance to a reference value.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.se
    }
}

/// Per-replication discounted costs. Replication `k` uses stream
/// `(seed, k)`, so two calls with the same seed share their noise.
pub fn rbm_cost_samples(
    params: &RbmParams,
    h_bar: &PiecewiseLinear,
    r_bar: f64,
    alpha: f64,
    replications: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<PathCost>> {
    params.check()?;
    if alpha * params.horizon < 20.0 {
        return Err(Error::InvalidArgument("need alpha*T >= 20".into()));
    }
    Ok(exec.map(replications, |k| {
        let stepper = RbmStepper::new(params, rng::stream(seed, k as u64, 0)).expect("checked parameters");
        let mut acc = CostAccumulator::new(h_bar, r_bar, alpha, params.dt, params.x0);
        for s in stepper {
            acc.step(s.x, s.dz);
        }
        acc.finish()
    }))
}

pub fn rbm_cost_mc(
    params: &RbmParams,
    h_bar: &PiecewiseLinear,
    r_bar: f64,
    alpha: f64,
    replications: usize,
    seed: u64,
    exec: Execution,
) -> Result<McEstimate> {
    if replications < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let costs = rbm_cost_samples(params, h_bar, r_bar, alpha, replications, seed, exec)?;
    let values: Vec<f64> = costs.iter().map(|c| c.cost).collect();
    let s = MeanSe::of(&values);
    Ok(McEstimate {
        mean: s.mean,
        se: s.se,
        replications,
        max_tail_bound: costs.iter().map(|c| c.tail_bound).fold(0.0, f64::max),
    })
}

/// Stationary distribution function of the reflected process on `[0, x*]`:
/// density proportional to `exp(2m̄w/σ̄²)`, uniform when `m̄ = 0`.
pub fn stationary_cdf(m_bar: f64, sigma2_bar: f64, x_star: f64, w: f64) -> f64 {
    let c = 2.0 * m_bar / sigma2_bar;
    let w = w.clamp(0.0, x_star);
    if (c * x_star).abs() < 1e-12 {
        w / x_star
    } else {
        (c * w).exp_m1() / (c * x_star).exp_m1()
    }
}

/// Samples of `X̄` every `spacing` time units along one long path, for
/// occupation-measure checks.
pub fn occupation_samples(params: &RbmParams, spacing: f64, seed: u64) -> Result<Vec<f64>> {
    let every = (spacing / params.dt).round().max(1.0) as usize;
    let stepper = RbmStepper::new(params, rng::stream(seed, 0, 0))?;
    Ok(stepper
        .enumerate()
        .filter(|(k, _)| (k + 1) % every == 0)
        .map(|(_, s)| s.x)
        .collect())
}
