//! Discrete-event simulation of the `n`-th system under the triangular policy.
//!
//! Arrivals are renewal processes with rates `λᵢⁿ = nλᵢ + √n λ̂ᵢ`. Each class
//! serves its head-of-line task only (FIFO within class); the task carries a
//! unit-mean requirement that is worked off at rate `Bᵢ μᵢⁿ`, where `B` is the
//! policy allocation recomputed after every event. Between events the state
//! is constant, so the discounted holding cost is integrated exactly.
//!
//! With `2I` clocks that all move whenever `B` changes, the next event is
//! found by a linear scan rather than a priority queue. Ties go to arrivals
//! before departures, then to the lower class index.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{derive, SystemSpec, UnitSampler};
use crate::policy::{Admission, PolicyConfig};
use crate::rng::{self, StreamRng};
use crate::stats::MeanSe;

/// Per-class holding and rejection costs used in place of the instance's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostOverride {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n: u64,
    pub horizon: f64,
    pub seed: u64,
    pub sample_dt: f64,
    /// Unscaled initial queue lengths; empty system when `None`.
    pub initial: Option<Vec<u64>>,
    /// First-order arrival rates replacing the instance's (second-order
    /// terms dropped).
    pub arrival_rates: Option<Vec<f64>>,
    pub costs: Option<CostOverride>,
}

impl SimConfig {
    pub fn new(n: u64, horizon: f64, seed: u64) -> Self {
        Self {
            n,
            horizon,
            seed,
            sample_dt: 1e-3,
            initial: None,
            arrival_rates: None,
            costs: None,
        }
    }
}

/// Unscaled queue lengths `⌊√n x̂ᵢ⌋` for a scaled content `x̂`, e.g. a point
/// of `γ` or `γᵃ` used as a start.
pub fn unscaled_counts(x_hat: &[f64], n: u64) -> Vec<u64> {
    let sn = (n as f64).sqrt();
    x_hat.iter().map(|v| (v * sn).floor().max(0.0) as u64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSample {
    pub t: f64,
    /// `X̂ⁿ = Xⁿ/√n`.
    pub x_hat: Vec<f64>,
    /// `θⁿ·X̂ⁿ`.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub n: u64,
    pub seed: u64,
    pub horizon: f64,
    /// Discounted cost `∫ e^{−αt} h·X̂ dt + Σ e^{−αt} rᵢ/√n` per rejection.
    pub cost: f64,
    pub trace: Vec<TraceSample>,
    pub ssc: Vec<f64>,
    pub ssc_max: f64,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub rejected_policy: Vec<u64>,
    pub rejected_forced: Vec<u64>,
    pub final_x: Vec<u64>,
    pub events: u64,
    /// Cumulative time with an empty system.
    pub idle_time: f64,
    /// Trace samples whose workload exceeded `a*`.
    pub beyond_a_star: usize,
    pub warnings: Vec<String>,
}

impl SimResult {
    pub fn total_policy_rejections(&self) -> u64 {
        self.rejected_policy.iter().sum()
    }

    pub fn total_forced_rejections(&self) -> u64 {
        self.rejected_forced.iter().sum()
    }

    /// Forced rejections as a fraction of all rejections; `None` without any.
    pub fn forced_share(&self) -> Option<f64> {
        let f = self.total_forced_rejections();
        let total = f + self.total_policy_rejections();
        (total > 0).then(|| f as f64 / total as f64)
    }
}

struct ClassDynamics {
    arrival_rate: f64,
    service_rate: f64,
    theta_n: f64,
    ia: UnitSampler,
    st: UnitSampler,
    h: f64,
    r: f64,
}

fn dynamics(spec: &SystemSpec, policy: &PolicyConfig, cfg: &SimConfig) -> Result<Vec<ClassDynamics>> {
    let derived = derive(spec)?;
    if policy.theta != derived.theta || (policy.b - spec.b).abs() > 0.0 {
        return Err(Error::InvalidArgument("policy was built for a different instance".into()));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) || !(cfg.sample_dt > 0.0) {
        return Err(Error::InvalidArgument("horizon and sample_dt must be positive".into()));
    }
    let k = spec.num_classes();
    for (name, len) in [
        ("initial", cfg.initial.as_ref().map(Vec::len)),
        ("arrival_rates", cfg.arrival_rates.as_ref().map(Vec::len)),
        ("costs.h", cfg.costs.as_ref().map(|c| c.h.len())),
        ("costs.r", cfg.costs.as_ref().map(|c| c.r.len())),
    ] {
        if len.is_some_and(|l| l != k) {
            return Err(Error::InvalidArgument(format!("{name} needs {k} entries")));
        }
    }
    let n = cfg.n as f64;
    let sn = n.sqrt();
    spec.classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let arrival_rate = match &cfg.arrival_rates {
                Some(l) => n * l[i],
                None => n * c.lambda + sn * c.lambda_hat,
            };
            let service_rate = n * c.mu + sn * c.mu_hat;
            if !(arrival_rate >= 0.0) || !(service_rate > 0.0) {
                return Err(Error::InvalidArgument(format!("class {}: rates must be positive at n = {}", c.label, cfg.n)));
            }
            Ok(ClassDynamics {
                arrival_rate,
                service_rate,
                theta_n: n / service_rate,
                ia: c.ia_family.sampler(c.ia_scv)?,
                st: c.st_family.sampler(c.st_scv)?,
                h: cfg.costs.as_ref().map_or(c.h, |o| o.h[i]),
                r: cfg.costs.as_ref().map_or(c.r, |o| o.r[i]),
            })
        })
        .collect()
}

struct Engine<'a> {
    policy: &'a PolicyConfig,
    classes: Vec<ClassDynamics>,
    n: u64,
    sqrt_n: f64,
    alpha: f64,
    x: Vec<u64>,
    residual: Vec<f64>,
    next_arrival: Vec<f64>,
    effort: Vec<f64>,
    arrival_rng: Vec<StreamRng>,
    service_rng: Vec<StreamRng>,
}

impl Engine<'_> {
    fn x_hat(&self) -> Vec<f64> {
        self.x.iter().map(|&v| v as f64 / self.sqrt_n).collect()
    }

    fn workload(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.classes)
            .map(|(&v, c)| c.theta_n * v as f64)
            .sum::<f64>()
            / self.sqrt_n
    }

    fn reallocate(&mut self) {
        let x_hat = self.x_hat();
        let w = self.workload();
        self.effort = self.policy.allocate(&x_hat, w);
        let total: f64 = self.effort.iter().sum();
        for (i, &b) in self.effort.iter().enumerate() {
            assert!(self.x[i] > 0 || b == 0.0, "effort on an empty class");
        }
        assert!(
            self.x.iter().all(|&v| v == 0) || (total - 1.0).abs() < 1e-9,
            "server idles with work present"
        );
    }

    fn draw_interarrival(&mut self, i: usize) -> f64 {
        let c = &self.classes[i];
        if c.arrival_rate == 0.0 {
            f64::INFINITY
        } else {
            c.ia.sample(&mut self.arrival_rng[i]) / c.arrival_rate
        }
    }

    fn draw_requirement(&mut self, i: usize) -> f64 {
        let s = self.classes[i].st.sample(&mut self.service_rng[i]);
        // exact zeros would create simultaneous completions
        if s > 0.0 {
            s
        } else {
            f64::MIN_POSITIVE + self.service_rng[i].random::<f64>() * f64::EPSILON
        }
    }

    fn holding_rate(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.classes)
            .map(|(&v, c)| c.h * v as f64)
            .sum::<f64>()
            / self.sqrt_n
    }
}

enum Event {
    Arrival(usize),
    Departure(usize),
}

/// Runs one replication.
pub fn run(spec: &SystemSpec, policy: &PolicyConfig, cfg: &SimConfig) -> Result<SimResult> {
    let classes = dynamics(spec, policy, cfg)?;
    let k = classes.len();
    let mut warnings = Vec::new();
    let x0 = cfg.initial.clone().unwrap_or_else(|| vec![0; k]);
    let capacity = policy.capacity(cfg.n);
    if x0.iter().sum::<u64>() > capacity {
        return Err(Error::InvalidArgument(format!("initial content exceeds the buffer of {capacity} tasks")));
    }
    if x0.iter().any(|&v| v > 0) {
        warnings.push(
            "nonzero initial state: the start is used as given, without moving it onto the policy curve".into(),
        );
    }
    let mut e = Engine {
        policy,
        sqrt_n: (cfg.n as f64).sqrt(),
        n: cfg.n,
        alpha: spec.alpha,
        x: x0.clone(),
        residual: vec![0.0; k],
        next_arrival: vec![0.0; k],
        effort: vec![0.0; k],
        arrival_rng: (0..k).map(|i| rng::stream(cfg.seed, 0, 2 * i as u64)).collect(),
        service_rng: (0..k).map(|i| rng::stream(cfg.seed, 0, 2 * i as u64 + 1)).collect(),
        classes,
    };
    for i in 0..k {
        e.next_arrival[i] = e.draw_interarrival(i);
        if e.x[i] > 0 {
            e.residual[i] = e.draw_requirement(i);
        }
    }
    e.reallocate();

    let mut arrivals = vec![0u64; k];
    let mut departures = vec![0u64; k];
    let mut rejected_policy = vec![0u64; k];
    let mut rejected_forced = vec![0u64; k];
    let mut trace = Vec::with_capacity((cfg.horizon / cfg.sample_dt) as usize + 2);
    let mut next_sample_idx: u64 = 0;
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut idle_time = 0.0;
    let mut events = 0u64;

    loop {
        let mut best = (f64::INFINITY, None);
        for i in 0..k {
            if e.next_arrival[i] < best.0 {
                best = (e.next_arrival[i], Some(Event::Arrival(i)));
            }
        }
        for i in 0..k {
            let rate = e.effort[i] * e.classes[i].service_rate;
            if rate > 0.0 {
                let done = t + e.residual[i] / rate;
                if done < best.0 {
                    best = (done, Some(Event::Departure(i)));
                }
            }
        }
        let t_next = best.0.min(cfg.horizon);

        loop {
            let ts = next_sample_idx as f64 * cfg.sample_dt;
            if ts > t_next || ts > cfg.horizon {
                break;
            }
            trace.push(TraceSample { t: ts, x_hat: e.x_hat(), w: e.workload() });
            next_sample_idx += 1;
        }

        let dt = t_next - t;
        if dt > 0.0 {
            let disc = (-e.alpha * t).exp();
            cost += disc * (-(-e.alpha * dt).exp_m1()) / e.alpha * e.holding_rate();
            for i in 0..k {
                let rate = e.effort[i] * e.classes[i].service_rate;
                if rate > 0.0 {
                    e.residual[i] = (e.residual[i] - rate * dt).max(0.0);
                }
            }
            if e.x.iter().all(|&v| v == 0) {
                idle_time += dt;
            }
        }
        t = t_next;
        if best.0 > cfg.horizon {
            break;
        }
        events += 1;

        match best.1.expect("finite event time has an event") {
            Event::Arrival(i) => {
                arrivals[i] += 1;
                let total: u64 = e.x.iter().sum();
                let w = e.workload();
                match policy.admit_count(i, total, w, e.n) {
                    Admission::Accept => {
                        e.x[i] += 1;
                        if e.x[i] == 1 {
                            e.residual[i] = e.draw_requirement(i);
                        }
                        assert!(total < capacity, "buffer overflow");
                    }
                    decision => {
                        if decision == Admission::RejectPolicy {
                            rejected_policy[i] += 1;
                        } else {
                            rejected_forced[i] += 1;
                        }
                        cost += (-e.alpha * t).exp() * e.classes[i].r / e.sqrt_n;
                    }
                }
                e.next_arrival[i] = t + e.draw_interarrival(i);
            }
            Event::Departure(i) => {
                departures[i] += 1;
                e.x[i] -= 1;
                e.residual[i] = if e.x[i] > 0 { e.draw_requirement(i) } else { 0.0 };
            }
        }
        for i in 0..k {
            debug_assert_eq!(
                e.x[i] + departures[i] + rejected_policy[i] + rejected_forced[i],
                x0[i] + arrivals[i],
                "flow balance"
            );
        }
        e.reallocate();
    }

    let (ssc_max, ssc) = ssc_metric(&trace, policy);
    let beyond_a_star = trace.iter().filter(|s| s.w > policy.a_star).count();
    if beyond_a_star > 0 {
        warnings.push(format!(
            "{beyond_a_star} trace samples above a* = {}; the curve is continued to the full-buffer corner there",
            policy.a_star
        ));
    }
    Ok(SimResult {
        n: cfg.n,
        seed: cfg.seed,
        horizon: cfg.horizon,
        cost,
        trace,
        ssc,
        ssc_max,
        arrivals,
        departures,
        rejected_policy,
        rejected_forced,
        final_x: e.x,
        events,
        idle_time,
        beyond_a_star,
        warnings,
    })
}

/// `‖X̂ⁿ(t) − γᵃ(θⁿ·X̂ⁿ(t))‖₁` at every sample and its maximum.
pub fn ssc_metric(trace: &[TraceSample], policy: &PolicyConfig) -> (f64, Vec<f64>) {
    let series: Vec<f64> = trace
        .iter()
        .map(|s| {
            let target = policy
                .gamma_a_extended(s.w.clamp(0.0, policy.x_max))
                .expect("clamped workload");
            s.x_hat.iter().zip(&target).map(|(x, g)| (x - g).abs()).sum()
        })
        .collect();
    (series.iter().copied().fold(0.0, f64::max), series)
}

/// Summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub cost: MeanSe,
    pub ssc_max: MeanSe,
    pub policy_rejections: u64,
    pub forced_rejections: u64,
    /// Mean over replications with at least one rejection.
    pub mean_forced_share: Option<f64>,
}

/// Runs `base` once per seed and summarizes. Results are reduced in seed
/// order, so the outcome does not depend on `exec`.
pub fn replicate(
    spec: &SystemSpec,
    policy: &PolicyConfig,
    base: &SimConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SimResult>> {
    exec.map(seeds.len(), |k| {
        let cfg = SimConfig { seed: seeds[k], ..base.clone() };
        run(spec, policy, &cfg)
    })
    .into_iter()
    .collect()
}

pub fn summarize(results: &[SimResult]) -> CostEstimate {
    let costs: Vec<f64> = results.iter().map(|r| r.cost).collect();
    let ssc: Vec<f64> = results.iter().map(|r| r.ssc_max).collect();
    let shares: Vec<f64> = results.iter().filter_map(SimResult::forced_share).collect();
    CostEstimate {
        cost: MeanSe::of(&costs),
        ssc_max: MeanSe::of(&ssc),
        policy_rejections: results.iter().map(SimResult::total_policy_rejections).sum(),
        forced_rejections: results.iter().map(SimResult::total_forced_rejections).sum(),
        mean_forced_share: (!shares.is_empty()).then(|| shares.iter().sum::<f64>() / shares.len() as f64),
    }
}

/// Mean and standard error of `J_n` over at least ten seeds.
pub fn cost_estimate(
    spec: &SystemSpec,
    policy: &PolicyConfig,
    base: &SimConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<CostEstimate> {
    if seeds.len() < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 seeds, got {}", seeds.len())));
    }
    Ok(summarize(&replicate(spec, policy, base, seeds, exec)?))
}
