//! Free-boundary Bellman equation for the workload control problem.
//!
//! Find `V` on `[0, x]` with
//!
//! ```text
//! min( ½σ̄² V'' + m̄ V' − αV + h̄ ,  V' ,  r̄ − V' ) = 0   in (0, x)
//! V'(0) = 0,  V'(x) = r̄
//! ```
//!
//! The equation is discretized on a uniform grid and written node by node as
//! a maximum over two monotone linear rows: the diffusion row (central second
//! difference) and the rejection row `(Vᵢ − Vᵢ₋₁)/Δ − r̄`. The gradient
//! constraint `V' ≥ 0` only binds at the origin, where it becomes the Neumann
//! condition imposed through a mirrored ghost node. The discrete system is
//! solved by policy iteration: fix the active row at every node, solve the
//! resulting tridiagonal system, switch rows where the other one is larger,
//! repeat until the active set no longer changes.
//!
//! The free boundary `x*` is the left end of the trailing run of rejection
//! rows.

use serde::Serialize;

use crate::error::{check_domain, Error, Result};
use crate::holding_cost::{HoldingCost, PiecewiseLinear};
use crate::model::DerivedParams;

/// Coefficients of the one-dimensional problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellmanProblem {
    pub sigma2_bar: f64,
    pub m_bar: f64,
    pub alpha: f64,
    pub r_bar: f64,
    pub x_max: f64,
    pub h_bar: PiecewiseLinear,
}

impl BellmanProblem {
    pub fn new(derived: &DerivedParams, holding: &HoldingCost, alpha: f64) -> Self {
        Self {
            sigma2_bar: derived.sigma2_bar,
            m_bar: derived.m_bar,
            alpha,
            r_bar: holding.rejection.r_bar,
            x_max: derived.x_max,
            h_bar: holding.h_bar.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_bar", self.sigma2_bar),
            ("alpha", self.alpha),
            ("r_bar", self.r_bar),
            ("x_max", self.x_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.m_bar.is_finite() {
            return Err(Error::InvalidArgument("m_bar must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    /// Number of grid intervals `N`.
    pub grid_intervals: usize,
    /// Convergence tolerance relative to `r̄ · x_max`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { grid_intervals: 4096, tol: 1e-8, max_iterations: 200 }
    }
}

impl SolverSettings {
    pub fn with_grid(grid_intervals: usize) -> Self {
        Self { grid_intervals, ..Self::default() }
    }
}

/// Active row at a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Diffusion,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbSolution {
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub gradient: Vec<f64>,
    #[serde(skip)]
    pub branches: Vec<Branch>,
    pub x_star: f64,
    pub x_star_index: usize,
    pub r_bar: f64,
    /// Largest `|min(L_h V, DV, r̄ − DV)|` over interior nodes.
    pub residual: f64,
    pub grid_intervals: usize,
    pub tol: f64,
    pub iterations: usize,
    /// Drift handled by upwinding because the central scheme was not monotone.
    pub upwind_drift: bool,
}

impl HjbSolution {
    pub fn dw(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Free boundary at either end of the domain.
    pub fn boundary_touching(&self) -> bool {
        self.x_star_index == 0 || self.x_star_index == self.grid_intervals
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.x_star_index == self.grid_intervals {
            w.push(format!(
                "free boundary reached the end of the domain (x_star = x_max = {}): \
                 rejecting before the buffer is exhausted never pays off",
                self.x_star
            ));
        }
        if self.x_star_index == 0 {
            w.push("free boundary at the origin: every arrival of the rejected class is turned away".into());
        }
        if self.upwind_drift {
            w.push("drift term upwinded: central differences were not monotone on this grid".into());
        }
        w
    }

    pub fn value_at(&self, w: f64) -> Result<f64> {
        let (k, t) = self.locate(w)?;
        Ok(lerp(&self.value, k, t))
    }

    /// Interpolated `V'`, clamped to `[0, r̄]`.
    pub fn gradient_at(&self, w: f64) -> Result<f64> {
        let (k, t) = self.locate(w)?;
        Ok(lerp(&self.gradient, k, t).clamp(0.0, self.r_bar))
    }

    fn locate(&self, w: f64) -> Result<(usize, f64)> {
        check_domain("workload", w, 0.0, self.x_max())?;
        let dw = self.dw();
        let k = ((w / dw).floor() as usize).min(self.grid_intervals - 1);
        Ok((k, (w - self.grid[k]) / dw))
    }
}

fn lerp(v: &[f64], k: usize, t: f64) -> f64 {
    if t == 0.0 {
        v[k]
    } else if t == 1.0 {
        v[k + 1]
    } else {
        0.5 * (v[k] + v[k + 1]) + (t - 0.5) * (v[k + 1] - v[k])
    }
}

/// One linear row `lower·V[i−1] + diag·V[i] + upper·V[i+1] = rhs`.
#[derive(Debug, Clone, Copy)]
struct Row {
    lower: f64,
    diag: f64,
    upper: f64,
    rhs: f64,
}

impl Row {
    fn residual(&self, v: &[f64], i: usize) -> f64 {
        let mut s = self.diag * v[i] - self.rhs;
        if i > 0 {
            s += self.lower * v[i - 1];
        }
        if i + 1 < v.len() {
            s += self.upper * v[i + 1];
        }
        s
    }

    /// Magnitude used to decide whether a row violation is above rounding.
    fn scale(&self, v: &[f64], i: usize) -> f64 {
        let mut s = (self.diag * v[i]).abs() + self.rhs.abs();
        if i > 0 {
            s += (self.lower * v[i - 1]).abs();
        }
        if i + 1 < v.len() {
            s += (self.upper * v[i + 1]).abs();
        }
        s
    }
}

struct Discretization {
    diffusion: Vec<Row>,
    reject: Vec<Row>,
    upwind: bool,
}

fn discretize(p: &BellmanProblem, n: usize) -> Discretization {
    let dw = p.x_max / n as f64;
    let s2 = p.sigma2_bar;
    let m = p.m_bar;
    let a = s2 / (2.0 * dw * dw);
    let upwind = m.abs() * dw > s2;
    let mut diffusion = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let h = p.h_bar.eval(dw * i as f64);
        let row = if i == 0 {
            // mirrored ghost V₋₁ = V₁ gives V'(0) = 0
            Row { lower: 0.0, diag: 2.0 * a + p.alpha, upper: -2.0 * a, rhs: h }
        } else if i == n {
            // ghost V_{N+1} = V_{N−1} + 2Δ r̄ gives V'(x) = r̄
            Row {
                lower: -2.0 * a,
                diag: 2.0 * a + p.alpha,
                upper: 0.0,
                rhs: h + 2.0 * a * dw * p.r_bar + m * p.r_bar,
            }
        } else if !upwind {
            let c = m / (2.0 * dw);
            Row { lower: -(a - c), diag: 2.0 * a + p.alpha, upper: -(a + c), rhs: h }
        } else if m > 0.0 {
            Row { lower: -a, diag: 2.0 * a + m / dw + p.alpha, upper: -(a + m / dw), rhs: h }
        } else {
            Row { lower: -(a - m / dw), diag: 2.0 * a - m / dw + p.alpha, upper: -a, rhs: h }
        };
        diffusion.push(row);
    }
    let reject = (0..=n)
        .map(|_| Row { lower: -1.0 / dw, diag: 1.0 / dw, upper: 0.0, rhs: p.r_bar })
        .collect();
    Discretization { diffusion, reject, upwind }
}

/// Thomas algorithm; the policy rows are diagonally dominant.
fn solve_tridiagonal(rows: &[Row]) -> Vec<f64> {
    let n = rows.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = rows[0].upper / rows[0].diag;
    d[0] = rows[0].rhs / rows[0].diag;
    for i in 1..n {
        let r = &rows[i];
        let denom = r.diag - r.lower * c[i - 1];
        c[i] = r.upper / denom;
        d[i] = (r.rhs - r.lower * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Solves the Bellman equation by policy iteration.
pub fn solve_bellman(problem: &BellmanProblem, settings: &SolverSettings) -> Result<HjbSolution> {
    problem.check()?;
    let n = settings.grid_intervals;
    if n < 100 {
        return Err(Error::InvalidArgument(format!("grid needs at least 100 intervals, got {n}")));
    }
    let disc = discretize(problem, n);
    let dw = problem.x_max / n as f64;
    let scale = problem.r_bar * problem.x_max;
    let mut branches = vec![Branch::Diffusion; n + 1];
    let mut value = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        let rows: Vec<Row> = branches
            .iter()
            .enumerate()
            .map(|(i, b)| match b {
                Branch::Diffusion => disc.diffusion[i],
                Branch::Reject => disc.reject[i],
            })
            .collect();
        value = solve_tridiagonal(&rows);
        let mut changed = false;
        // node 0 always carries the reflecting condition
        for i in 1..=n {
            let fd = disc.diffusion[i].residual(&value, i);
            let fr = disc.reject[i].residual(&value, i);
            let next = match branches[i] {
                Branch::Diffusion if fr > fd && fr > 1e-12 * disc.reject[i].scale(&value, i) => {
                    Branch::Reject
                }
                Branch::Reject if fd > fr && fd > 1e-12 * disc.diffusion[i].scale(&value, i) => {
                    Branch::Diffusion
                }
                b => b,
            };
            if next != branches[i] {
                branches[i] = next;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    let residual = complementarity_residual(problem, &disc, &value, dw);
    if !converged {
        return Err(Error::NonConvergence { iterations, residual });
    }
    if residual > settings.tol * scale {
        return Err(Error::NonConvergence { iterations, residual });
    }

    let mut gradient = vec![0.0; n + 1];
    for i in 1..n {
        gradient[i] = (value[i + 1] - value[i - 1]) / (2.0 * dw);
    }
    gradient[n] = match branches[n] {
        Branch::Reject => (value[n] - value[n - 1]) / dw,
        Branch::Diffusion => problem.r_bar,
    };

    let first_reject = (1..=n)
        .rev()
        .take_while(|&i| branches[i] == Branch::Reject)
        .last();
    let x_star_index = match first_reject {
        Some(k) => k - 1,
        None => n,
    };
    let grid: Vec<f64> = (0..=n).map(|i| dw * i as f64).collect();
    Ok(HjbSolution {
        x_star: grid[x_star_index],
        x_star_index,
        grid,
        value,
        gradient,
        branches,
        r_bar: problem.r_bar,
        residual,
        grid_intervals: n,
        tol: settings.tol,
        iterations,
        upwind_drift: disc.upwind,
    })
}

fn complementarity_residual(p: &BellmanProblem, disc: &Discretization, v: &[f64], dw: f64) -> f64 {
    let n = v.len() - 1;
    (1..n)
        .map(|i| {
            let generator = -disc.diffusion[i].residual(v, i);
            let slope = (v[i + 1] - v[i - 1]) / (2.0 * dw);
            generator.min(slope).min(p.r_bar - slope).abs()
        })
        .fold(0.0, f64::max)
}
