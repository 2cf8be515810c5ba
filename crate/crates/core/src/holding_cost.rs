//! Workload holding cost for the shared buffer.
//!
//! For a workload `w`, `h̄(w)` is the cheapest holding cost of any buffer
//! content `ξ` (with `Σξᵢ ≤ b`) carrying exactly that workload, and `γ(w)` is
//! a content attaining it. The minimum sits on a vertex of the feasible set,
//! so at most two classes are present: starting from the empty buffer, classes
//! are accumulated in the order of smallest incremental cost per unit of
//! workload, `(h_k − h_j)/(θ_k − θ_j)`, with the empty buffer playing the role
//! of a class with `h = θ = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DerivedParams, SystemSpec};

/// Relative slack accepted above `x_max` before a workload is an error.
const DOMAIN_SLACK: f64 = 1e-9;

/// The only class subject to discretionary rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RejectionRule {
    pub i_star: usize,
    /// Cheapest rejection cost per unit of workload, `min rᵢ μᵢ`.
    pub r_bar: f64,
}

/// Picks the class minimizing `rᵢ μᵢ`, lowest index on ties.
pub fn rejection_rule(spec: &SystemSpec, derived: &DerivedParams) -> RejectionRule {
    let mut i_star = 0;
    let mut r_bar = f64::INFINITY;
    for (i, (c, theta)) in spec.classes.iter().zip(&derived.theta).enumerate() {
        let v = c.r / theta;
        if v < r_bar {
            r_bar = v;
            i_star = i;
        }
    }
    RejectionRule { i_star, r_bar }
}

/// The sequence in which classes fill the buffer as workload grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccumulationOrder {
    /// Class indices `p(1), …, p(J)`.
    pub p: Vec<usize>,
    /// Classes that are never accumulated, ascending.
    pub never: Vec<usize>,
    /// Breakpoints `ŵ₀ = 0, ŵⱼ = b θ_{p(j)}`.
    pub w_hat: Vec<f64>,
    /// `ratios[j-1][i]` is the incremental cost of moving from `p(j−1)` to
    /// class `i`, or `None` when `i` is not eligible at that step.
    pub ratios: Vec<Vec<Option<f64>>>,
}

impl AccumulationOrder {
    /// Number of accumulated classes `J`.
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Accumulated classes, ascending.
    pub fn accumulated(&self) -> Vec<usize> {
        let mut e = self.p.clone();
        e.sort_unstable();
        e
    }

    /// The ratio that selected `p(j)`, `1 ≤ j ≤ J`.
    pub fn selected_ratio(&self, j: usize) -> f64 {
        self.ratios[j - 1][self.p[j - 1]].expect("selected class is eligible")
    }

    /// `θ_{p(j)}` with the convention `θ_{p(0)} = 0`.
    pub fn theta(&self, derived: &DerivedParams, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            derived.theta[self.p[j - 1]]
        }
    }

    /// The class at accumulation position `j ≥ 1`.
    pub fn class(&self, j: usize) -> usize {
        self.p[j - 1]
    }

    /// Accumulation interval containing `w`: `j` with `ŵ_{j−1} ≤ w < ŵⱼ`,
    /// or `J` at the right end.
    pub fn interval(&self, w: f64) -> usize {
        let k = self.w_hat[1..].partition_point(|&x| x <= w);
        (k + 1).min(self.len())
    }
}

pub fn accumulation_order(spec: &SystemSpec, derived: &DerivedParams) -> AccumulationOrder {
    let n = spec.num_classes();
    let h = spec.h();
    let mut p = Vec::new();
    let mut ratios = Vec::new();
    let (mut h_prev, mut theta_prev) = (0.0, 0.0);
    loop {
        let row: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let eligible = if p.is_empty() {
                    true
                } else {
                    h[i] > h_prev && derived.theta[i] > theta_prev
                };
                eligible.then(|| (h[i] - h_prev) / (derived.theta[i] - theta_prev))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in row.iter().enumerate() {
            if let Some(r) = *r {
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((i, r));
                }
            }
        }
        let Some((next, _)) = best else { break };
        ratios.push(row);
        p.push(next);
        h_prev = h[next];
        theta_prev = derived.theta[next];
    }
    debug_assert_eq!(p.last().copied(), Some(derived.argmax_theta()));
    let never = (0..n).filter(|i| !p.contains(i)).collect();
    let mut w_hat = vec![0.0];
    w_hat.extend(p.iter().map(|&i| spec.b * derived.theta[i]));
    AccumulationOrder { p, never, w_hat, ratios }
}

/// Scalar piecewise-linear function given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(breakpoints.len(), values.len());
        assert!(!breakpoints.is_empty());
        debug_assert!(breakpoints.windows(2).all(|w| w[0] < w[1]));
        Self { breakpoints, values }
    }

    /// The zero function on `[0, x_max]`.
    pub fn zero(x_max: f64) -> Self {
        Self::new(vec![0.0, x_max], vec![0.0, 0.0])
    }

    /// `κ w` on `[0, x_max]`.
    pub fn linear(kappa: f64, x_max: f64) -> Self {
        Self::new(vec![0.0, x_max], vec![0.0, kappa * x_max])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Linear interpolation; constant extrapolation outside the domain.
    pub fn eval(&self, x: f64) -> f64 {
        let (k, t) = locate(&self.breakpoints, x);
        match t {
            None => self.values[k],
            Some(t) => self.values[k] + t * (self.values[k + 1] - self.values[k]),
        }
    }

    /// Slope on each segment.
    pub fn slopes(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect()
    }
}

/// Piecewise-linear curve in `ℝ^I` given by its vertices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexCurve {
    pub breakpoints: Vec<f64>,
    pub vertices: Vec<Vec<f64>>,
}

impl VertexCurve {
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (k, t) = locate(&self.breakpoints, x);
        match t {
            None => self.vertices[k].clone(),
            Some(t) => self.vertices[k]
                .iter()
                .zip(&self.vertices[k + 1])
                .map(|(a, b)| if a == b { *a } else { a + t * (b - a) })
                .collect(),
        }
    }
}

/// Segment index and interpolation weight, or a clamped endpoint.
fn locate(xs: &[f64], x: f64) -> (usize, Option<f64>) {
    let last = xs.len() - 1;
    if last == 0 || x <= xs[0] {
        return (0, None);
    }
    if x >= xs[last] {
        return (last, None);
    }
    let k = xs.partition_point(|&b| b <= x) - 1;
    (k, Some((x - xs[k]) / (xs[k + 1] - xs[k])))
}

/// Everything about `h̄` and `γ` for one instance, materialized once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldingCost {
    pub rejection: RejectionRule,
    pub order: AccumulationOrder,
    pub h_bar: PiecewiseLinear,
    pub gamma: VertexCurve,
    pub x_max: f64,
}

impl HoldingCost {
    pub fn new(spec: &SystemSpec, derived: &DerivedParams) -> Self {
        let rejection = rejection_rule(spec, derived);
        let order = accumulation_order(spec, derived);
        let h_bar = h_bar(spec, derived, &order);
        let gamma = gamma_curve(spec, &order);
        Self { rejection, order, h_bar, gamma, x_max: derived.x_max }
    }

    /// `γ(w)`, with `w` clamped to `x_max` when it exceeds it by rounding only.
    pub fn gamma(&self, w: f64) -> Result<Vec<f64>> {
        Ok(self.gamma.eval(self.clamp(w)?))
    }

    pub fn h_bar_at(&self, w: f64) -> Result<f64> {
        Ok(self.h_bar.eval(self.clamp(w)?))
    }

    pub(crate) fn clamp(&self, w: f64) -> Result<f64> {
        clamp_workload(w, self.x_max)
    }
}

/// `h̄` as a breakpoint table: `h̄(ŵⱼ) = b h_{p(j)}`.
pub fn h_bar(spec: &SystemSpec, _derived: &DerivedParams, order: &AccumulationOrder) -> PiecewiseLinear {
    let mut values = vec![0.0];
    values.extend(order.p.iter().map(|&i| spec.b * spec.classes[i].h));
    PiecewiseLinear::new(order.w_hat.clone(), values)
}

fn gamma_curve(spec: &SystemSpec, order: &AccumulationOrder) -> VertexCurve {
    let n = spec.num_classes();
    let mut vertices = vec![vec![0.0; n]];
    for &i in &order.p {
        let mut v = vec![0.0; n];
        v[i] = spec.b;
        vertices.push(v);
    }
    VertexCurve { breakpoints: order.w_hat.clone(), vertices }
}

/// Minimizing buffer content `γ(w)` for `0 ≤ w ≤ x_max`.
pub fn gamma(
    spec: &SystemSpec,
    derived: &DerivedParams,
    order: &AccumulationOrder,
    w: f64,
) -> Result<Vec<f64>> {
    let w = clamp_workload(w, derived.x_max)?;
    Ok(gamma_curve(spec, order).eval(w))
}

/// Rejects workloads outside `[0, x_max]`, tolerating rounding drift above
/// `x_max`.
pub(crate) fn clamp_workload(w: f64, x_max: f64) -> Result<f64> {
    if w.is_nan() || w < 0.0 || w > x_max * (1.0 + DOMAIN_SLACK) {
        return Err(Error::OutOfDomain { what: "workload", value: w, lo: 0.0, hi: x_max });
    }
    Ok(w.min(x_max))
}

/// Brute-force minimum of `h·x` over `{x ≥ 0, Σx ≤ b, θ·x = w}` by enumerating
/// every basic solution: one class alone with slack capacity, or two classes
/// filling the buffer. Returns the value and a minimizing vertex.
pub fn lp_oracle(spec: &SystemSpec, derived: &DerivedParams, w: f64) -> Result<(f64, Vec<f64>)> {
    let n = spec.num_classes();
    let h = spec.h();
    let theta = &derived.theta;
    let b = spec.b;
    let w = clamp_workload(w, derived.x_max)?;
    if w == 0.0 {
        return Ok((0.0, vec![0.0; n]));
    }
    let tol = 1e-12 * b;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |x: Vec<f64>| {
        let v: f64 = h.iter().zip(&x).map(|(h, x)| h * x).sum();
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, x));
        }
    };
    for i in 0..n {
        let xi = w / theta[i];
        if xi <= b + tol {
            let mut x = vec![0.0; n];
            x[i] = xi;
            consider(x);
        }
        for k in 0..n {
            if k == i {
                continue;
            }
            // x_i + x_k = b, θ_i x_i + θ_k x_k = w
            let xk = (w - theta[i] * b) / (theta[k] - theta[i]);
            let xi = b - xk;
            if xk >= -tol && xi >= -tol {
                let mut x = vec![0.0; n];
                x[i] = xi.max(0.0);
                x[k] = xk.max(0.0);
                consider(x);
            }
        }
    }
    best.ok_or(Error::OutOfDomain { what: "workload", value: w, lo: 0.0, hi: derived.x_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{class, table1};
    use crate::model::derive;
    use proptest::prelude::*;

    fn table1_cost() -> (SystemSpec, DerivedParams, HoldingCost) {
        let spec = table1();
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        (spec, d, hc)
    }

    #[test]
    fn table1_rejection_rule() {
        let (spec, d, _) = table1_cost();
        let rule = rejection_rule(&spec, &d);
        assert_eq!(rule.i_star, 1);
        assert!((rule.r_bar - 1540.0).abs() < 1e-9);
    }

    #[test]
    fn rejection_rule_ties_pick_lowest_index() {
        let spec = SystemSpec {
            classes: vec![class("a", 0.25, 1.0, 1.0, 2.0), class("b", 0.5, 2.0, 1.0, 1.0)],
            b: 1.0,
            alpha: 1.0,
            criticality_tol: 0.6,
        };
        let d = derive(&spec).unwrap();
        assert_eq!(rejection_rule(&spec, &d).i_star, 0);
    }

    #[test]
    fn table1_order() {
        let (_, _, hc) = table1_cost();
        let o = &hc.order;
        assert_eq!(o.p, vec![2, 1, 0]);
        assert!(o.never.is_empty());
        let origin: Vec<f64> = o.ratios[0].iter().map(|r| r.unwrap()).collect();
        assert!((origin[0] - 2502.0).abs() < 1e-9);
        assert!((origin[1] - 2310.0).abs() < 1e-9);
        assert!((origin[2] - 2052.4).abs() < 1e-9);
        assert_eq!(o.ratios[1][2], None);
        assert!((o.ratios[1][1].unwrap() - 317.0 / (1.0 / 2.2 - 1.0 / 2.8)).abs() < 1e-9);
        assert!((o.selected_ratio(3) - 340.0 / (1.0 / 1.8 - 1.0 / 2.2)).abs() < 1e-9);
        assert!((o.w_hat[1] - 125.0 / 2.8).abs() < 1e-12);
        assert!((o.w_hat[2] - 125.0 / 2.2).abs() < 1e-12);
        assert!((o.w_hat[3] - 125.0 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn single_class_order() {
        let spec = SystemSpec {
            classes: vec![class("a", 1.0, 2.0, 3.0, 1.0)],
            b: 4.0,
            alpha: 1.0,
            criticality_tol: 0.6,
        };
        let d = derive(&spec).unwrap();
        let o = accumulation_order(&spec, &d);
        assert_eq!(o.p, vec![0]);
        assert_eq!(o.w_hat, vec![0.0, 2.0]);
    }

    #[test]
    fn dominated_class_is_never_accumulated() {
        // class "d" has small θ and a large h: never on the lower hull
        let spec = SystemSpec {
            classes: vec![
                class("a", 0.2, 1.0, 1.0, 1.0),
                class("b", 0.3, 2.0, 1.5, 1.0),
                class("c", 0.3, 3.0, 1.2, 1.0),
                class("d", 0.2, 5.0, 9.0, 1.0),
            ],
            b: 10.0,
            alpha: 1.0,
            criticality_tol: 0.6,
        };
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        assert!(hc.order.never.contains(&3));
        assert_eq!(*hc.order.p.last().unwrap(), 0);
        for k in 0..=400 {
            let w = d.x_max * k as f64 / 400.0;
            let (v, _) = lp_oracle(&spec, &d, w).unwrap();
            assert!((hc.h_bar.eval(w) - v).abs() <= 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn h_bar_table1() {
        let (_, d, hc) = table1_cost();
        assert_eq!(hc.h_bar.eval(0.0), 0.0);
        assert!((hc.h_bar.breakpoints[1] - 44.64).abs() < 0.01);
        assert!((hc.h_bar.breakpoints[2] - 56.85).abs() < 0.05);
        let slopes = hc.h_bar.slopes();
        for j in 1..=hc.order.len() {
            assert!((slopes[j - 1] - hc.order.selected_ratio(j)).abs() < 1e-9 * slopes[j - 1]);
        }
        assert!(slopes.windows(2).all(|s| s[0] <= s[1]));
        assert!(slopes.iter().all(|&s| s > 0.0));
        assert_eq!(hc.h_bar.domain().1, d.x_max);
    }

    #[test]
    fn gamma_table1_examples() {
        let (spec, d, hc) = table1_cost();
        assert_eq!(hc.gamma(0.0).unwrap(), vec![0.0; 3]);
        let g = hc.gamma(125.0 / 2.8).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 125.0]);
        let g = hc.gamma(50.0).unwrap();
        let x2 = (50.0 - 125.0 / 2.8) / (1.0 / 2.2 - 1.0 / 2.8);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - x2).abs() < 1e-9 && (g[1] - 55.06).abs() < 0.1);
        assert!((g[2] - (125.0 - x2)).abs() < 1e-9 && (g[2] - 69.94).abs() < 0.1);
        let (v, x) = lp_oracle(&spec, &d, 50.0).unwrap();
        assert!((v - hc.h_bar.eval(50.0)).abs() < 1e-9 * v);
        assert!(x.iter().zip(&g).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(hc.gamma(-1.0).is_err());
        assert!(hc.gamma(d.x_max * 1.01).is_err());
        assert_eq!(hc.gamma(d.x_max * (1.0 + 1e-12)).unwrap(), vec![125.0, 0.0, 0.0]);
        let free = gamma(&spec, &d, &hc.order, 50.0).unwrap();
        assert_eq!(free, g);
    }

    #[test]
    fn lp_oracle_table1_w60() {
        let (spec, d, _) = table1_cost();
        let (v, x) = lp_oracle(&spec, &d, 60.0).unwrap();
        let x1 = (60.0 - 125.0 / 2.2) / (1.0 / 1.8 - 1.0 / 2.2);
        assert!((x[0] - x1).abs() < 1e-9 && (x[0] - 31.5).abs() < 0.01);
        assert!((x[1] - (125.0 - x1)).abs() < 1e-9 && (x[1] - 93.5).abs() < 0.01);
        assert_eq!(x[2], 0.0);
        assert!((v - (1390.0 * x[0] + 1050.0 * x[1])).abs() < 1e-9 * v);
        assert_eq!(lp_oracle(&spec, &d, 0.0).unwrap(), (0.0, vec![0.0; 3]));
    }

    #[test]
    fn lp_oracle_beats_random_feasible_points() {
        let (spec, d, _) = table1_cost();
        let mut rng = crate::rng::stream(11, 0, 0);
        use rand::Rng;
        let mut checked = 0;
        while checked < 1000 {
            // random content with Σ ≤ b, then its workload
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let fill: f64 = rng.random();
            let s: f64 = raw.iter().sum();
            let xi: Vec<f64> = raw.iter().map(|r| r / s * fill * spec.b).collect();
            let w = d.dot_theta(&xi);
            let (v, _) = lp_oracle(&spec, &d, w).unwrap();
            let cost: f64 = spec.h().iter().zip(&xi).map(|(h, x)| h * x).sum();
            assert!(v <= cost * (1.0 + 1e-12));
            checked += 1;
        }
    }

    fn random_instance() -> impl Strategy<Value = SystemSpec> {
        (1usize..=6)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec((0.5f64..5.0, 1.0f64..100.0, 1.0f64..100.0), n),
                    1.0f64..200.0,
                )
            })
            .prop_filter_map("distinct theta", |(cls, b)| {
                let n = cls.len();
                let mut mus: Vec<f64> = cls.iter().map(|c| c.0).collect();
                mus.sort_by(f64::total_cmp);
                if mus.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                    return None;
                }
                let classes = cls
                    .iter()
                    .enumerate()
                    .map(|(i, &(mu, h, r))| class(&format!("c{i}"), mu / n as f64, mu, h, r))
                    .collect();
                Some(SystemSpec { classes, b, alpha: 1.0, criticality_tol: 1e-9 })
            })
    }

    proptest! {
        #[test]
        fn h_bar_matches_vertex_enumeration(spec in random_instance(), ws in proptest::collection::vec(0.0f64..=1.0, 50)) {
            let d = derive(&spec).unwrap();
            let hc = HoldingCost::new(&spec, &d);
            for u in ws {
                let w = u * d.x_max;
                let (v, _) = lp_oracle(&spec, &d, w).unwrap();
                let hb = hc.h_bar.eval(w);
                prop_assert!((hb - v).abs() <= 1e-9 * v.abs().max(1e-300), "w={} h̄={} lp={}", w, hb, v);
                let g = hc.gamma(w).unwrap();
                prop_assert!((d.dot_theta(&g) - w).abs() <= 1e-12 * w.max(1e-300) * 10.0);
                prop_assert!(g.iter().sum::<f64>() <= spec.b * (1.0 + 1e-12));
                prop_assert!(g.iter().filter(|&&x| x != 0.0).count() <= 2);
                let hg: f64 = spec.h().iter().zip(&g).map(|(h, x)| h * x).sum();
                prop_assert!((hg - hb).abs() <= 1e-9 * hb.max(1e-300));
            }
        }

        #[test]
        fn order_is_monotone_and_h_bar_convex(spec in random_instance()) {
            let d = derive(&spec).unwrap();
            let hc = HoldingCost::new(&spec, &d);
            let o = &hc.order;
            let h = spec.h();
            prop_assert_eq!(*o.p.last().unwrap(), d.argmax_theta());
            prop_assert!(o.p.windows(2).all(|w| d.theta[w[0]] < d.theta[w[1]] && h[w[0]] < h[w[1]]));
            prop_assert!(o.w_hat.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(o.p.len() + o.never.len(), spec.num_classes());
            let s = hc.h_bar.slopes();
            prop_assert!(s.iter().all(|&x| x > 0.0));
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)));
        }
    }
}
