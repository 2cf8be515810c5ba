//! The triangular policy: margin curve `γᵃ`, priority sets, service
//! allocation and admission.
//!
//! The buffer target `γ(w)` sits on the full-buffer boundary, where arrivals
//! would be rejected by force. The policy tracks instead a curve `γᵃ` drawn on
//! the edges of the smaller simplex `Σxᵢ = a`, `a = b − ε`: on the `j`-th
//! workload interval it mixes classes `p(j−1)` and `p(j)` (accumulation
//! positions) so that `θ·γᵃ(w) = w`. Classes whose queue is below their target
//! get low priority; the server works on high-priority classes in proportion
//! to their traffic intensities. Only class `i*` is rejected on purpose, once
//! the workload reaches `a* = min(x*, θ_{p(J)} a)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::holding_cost::{AccumulationOrder, HoldingCost, RejectionRule, VertexCurve};
use crate::model::{DerivedParams, SystemSpec};

/// Relative slack on workload domain checks.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyConfig {
    pub epsilon: f64,
    pub b: f64,
    pub a: f64,
    pub a_star: f64,
    pub x_star: f64,
    pub x_max: f64,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub order: AccumulationOrder,
    pub rejection: RejectionRule,
    #[serde(skip)]
    gamma: VertexCurve,
}

/// `w = θ_{p(j−1)} χ_l + θ_{p(j)} χ_h` with `θ_{p(0)} = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Representation {
    pub j: usize,
    pub chi_l: f64,
    pub chi_h: f64,
    /// Class at position `j−1`, absent for `j = 1`.
    pub low_class: Option<usize>,
    pub high_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margins {
    pub j: usize,
    pub xi_l: f64,
    pub xi_h: f64,
    pub eps_l: f64,
    pub eps_h: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrioritySets {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    pub low_plus: Vec<usize>,
    pub high_plus: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Accept,
    RejectPolicy,
    RejectForced,
}

impl PolicyConfig {
    pub fn new(
        spec: &SystemSpec,
        derived: &DerivedParams,
        holding: &HoldingCost,
        x_star: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < spec.b) {
            return Err(Error::OutOfDomain { what: "epsilon", value: epsilon, lo: 0.0, hi: spec.b });
        }
        if !(x_star > 0.0 && x_star <= derived.x_max * (1.0 + SLACK)) {
            return Err(Error::OutOfDomain { what: "x_star", value: x_star, lo: 0.0, hi: derived.x_max });
        }
        let a = spec.b - epsilon;
        let theta_j = holding.order.theta(derived, holding.order.len());
        Ok(Self {
            epsilon,
            b: spec.b,
            a,
            a_star: x_star.min(theta_j * a),
            x_star,
            x_max: derived.x_max,
            theta: derived.theta.clone(),
            rho: derived.rho.clone(),
            order: holding.order.clone(),
            rejection: holding.rejection,
            gamma: holding.gamma.clone(),
        })
    }

    /// `b/25`.
    pub fn default_epsilon(b: f64) -> f64 {
        b / 25.0
    }

    pub fn num_classes(&self) -> usize {
        self.theta.len()
    }

    fn pos_theta(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.theta[self.order.class(j)]
        }
    }

    /// Right end of the margin region, `θ_{p(J)} a`.
    pub fn w_edge(&self) -> f64 {
        self.pos_theta(self.order.len()) * self.a
    }

    /// The unique representation of `w ∈ [0, θ_{p(J)} a)` on the `a`-edges.
    pub fn represent(&self, w: f64) -> Result<Representation> {
        if !(w >= 0.0 && w < self.w_edge()) {
            return Err(Error::OutOfDomain { what: "workload", value: w, lo: 0.0, hi: self.w_edge() });
        }
        Ok(self.represent_unchecked(w))
    }

    fn represent_unchecked(&self, w: f64) -> Representation {
        let big_j = self.order.len();
        let t1 = self.pos_theta(1);
        if w < t1 * self.a {
            return Representation {
                j: 1,
                chi_l: 0.0,
                chi_h: w / t1,
                low_class: None,
                high_class: self.order.class(1),
            };
        }
        if w >= self.w_edge() {
            // interpolation band towards the full-buffer corner b e_{p(J)}
            return Representation {
                j: big_j,
                chi_l: 0.0,
                chi_h: w / self.pos_theta(big_j),
                low_class: (big_j > 1).then(|| self.order.class(big_j - 1)),
                high_class: self.order.class(big_j),
            };
        }
        let mut j = 2;
        while j < big_j && w >= self.pos_theta(j) * self.a {
            j += 1;
        }
        let (tl, th) = (self.pos_theta(j - 1), self.pos_theta(j));
        let chi_h = (w - self.a * tl) / (th - tl);
        Representation {
            j,
            chi_l: self.a - chi_h,
            chi_h,
            low_class: Some(self.order.class(j - 1)),
            high_class: self.order.class(j),
        }
    }

    /// Workload-dependent margins computed from `ξ = γ(w)` on the full
    /// buffer.
    pub fn margins(&self, w: f64) -> Result<Margins> {
        let w = self.check_workload(w, self.x_max)?;
        let j = self.order.interval(w);
        let xi = self.gamma.eval(w);
        let xi_h = xi[self.order.class(j)];
        let xi_l = if j > 1 { xi[self.order.class(j - 1)] } else { 0.0 };
        let half = 0.5 * self.epsilon;
        let eps_l = if xi_l < xi_h {
            half.min(xi_l)
        } else if xi_h > half {
            half
        } else {
            self.epsilon - xi_h
        };
        Ok(Margins { j, xi_l, xi_h, eps_l, eps_h: self.epsilon - eps_l })
    }

    /// `ξ − ε_l e_{p(j−1)} − ε_h e_{p(j)}`: the point on the `a`-edge below
    /// `γ(w)`.
    pub fn margin_point(&self, w: f64) -> Result<Vec<f64>> {
        let m = self.margins(w)?;
        let mut x = vec![0.0; self.num_classes()];
        x[self.order.class(m.j)] = m.xi_h - m.eps_h;
        if m.j > 1 {
            x[self.order.class(m.j - 1)] = m.xi_l - m.eps_l;
        }
        Ok(x)
    }

    /// `γᵃ(w)` on `[0, a*]`.
    pub fn gamma_a(&self, w: f64) -> Result<Vec<f64>> {
        let w = self.check_workload(w, self.a_star)?;
        Ok(self.curve_point(w))
    }

    /// `γᵃ(w)` on all of `[0, x_max]`; beyond `θ_{p(J)} a` the curve runs
    /// linearly from `a e_{p(J)}` to `b e_{p(J)}`.
    pub fn gamma_a_extended(&self, w: f64) -> Result<Vec<f64>> {
        let w = self.check_workload(w, self.x_max)?;
        Ok(self.curve_point(w))
    }

    fn curve_point(&self, w: f64) -> Vec<f64> {
        let r = self.represent_unchecked(w);
        let mut x = vec![0.0; self.num_classes()];
        x[r.high_class] = r.chi_h;
        if let Some(l) = r.low_class {
            x[l] += r.chi_l;
        }
        x
    }

    fn check_workload(&self, w: f64, hi: f64) -> Result<f64> {
        if w.is_nan() || w < 0.0 || w > hi * (1.0 + SLACK) {
            return Err(Error::OutOfDomain { what: "workload", value: w, lo: 0.0, hi });
        }
        Ok(w.min(hi))
    }

    /// Priority split at scaled content `x` with workload `w`. Equality with a
    /// threshold counts as high priority.
    pub fn priority_sets(&self, x: &[f64], w: f64) -> PrioritySets {
        let r = self.represent_unchecked(w.clamp(0.0, self.x_max));
        let mut low = Vec::new();
        let mut high = Vec::new();
        for (i, &xi) in x.iter().enumerate() {
            let is_low = (i == r.high_class && xi < r.chi_h)
                || (r.j > 1 && Some(i) == r.low_class && xi < r.chi_l);
            if is_low {
                low.push(i);
            } else {
                high.push(i);
            }
        }
        let plus = |v: &[usize]| v.iter().copied().filter(|&i| x[i] > 0.0).collect();
        PrioritySets { low_plus: plus(&low), high_plus: plus(&high), low, high }
    }

    /// Effort fractions proportional to `ρ` over the nonempty high-priority
    /// classes, or over the nonempty low-priority ones when no high-priority
    /// work is present.
    pub fn allocate(&self, x: &[f64], w: f64) -> Vec<f64> {
        let sets = self.priority_sets(x, w);
        let served = if sets.high_plus.is_empty() { &sets.low_plus } else { &sets.high_plus };
        let mut b = vec![0.0; x.len()];
        let total: f64 = served.iter().map(|&i| self.rho[i]).sum();
        for &i in served {
            b[i] = self.rho[i] / total;
        }
        b
    }

    /// Largest unscaled buffer content, `⌊b√n⌋`.
    pub fn capacity(&self, n: u64) -> u64 {
        (self.b * (n as f64).sqrt() * (1.0 + 1e-12)).floor() as u64
    }

    /// Decision for an arrival of `class` at scaled content `x`, workload `w`.
    pub fn admit(&self, class: usize, x: &[f64], w: f64, n: u64) -> Admission {
        let total = (x.iter().sum::<f64>() * (n as f64).sqrt()).round() as u64;
        self.admit_count(class, total, w, n)
    }

    /// As [`PolicyConfig::admit`] with the unscaled number of tasks present.
    pub fn admit_count(&self, class: usize, total_tasks: u64, w: f64, n: u64) -> Admission {
        if class == self.rejection.i_star && w >= self.a_star {
            Admission::RejectPolicy
        } else if total_tasks + 1 > self.capacity(n) {
            Admission::RejectForced
        } else {
            Admission::Accept
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holding_cost::HoldingCost;
    use crate::model::{derive, fixtures::table1};
    use proptest::prelude::*;

    fn cfg(epsilon: f64) -> PolicyConfig {
        let spec = table1();
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        PolicyConfig::new(&spec, &d, &hc, d.x_max, epsilon).unwrap()
    }

    #[test]
    fn config_invariants() {
        let c = cfg(5.0);
        assert_eq!(c.a, 120.0);
        assert!((c.a_star - 120.0 / 1.8).abs() < 1e-12);
        assert!(c.a_star <= c.x_star && c.a_star < c.x_max);
        let spec = table1();
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        assert!(PolicyConfig::new(&spec, &d, &hc, 60.0, 0.0).is_err());
        assert!(PolicyConfig::new(&spec, &d, &hc, 60.0, 125.0).is_err());
        assert!(PolicyConfig::new(&spec, &d, &hc, 80.0, 5.0).is_err());
        let inner = PolicyConfig::new(&spec, &d, &hc, 30.0, 5.0).unwrap();
        assert_eq!(inner.a_star, 30.0);
        assert_eq!(PolicyConfig::default_epsilon(125.0), 5.0);
    }

    #[test]
    fn represent_examples() {
        let c = cfg(5.0);
        let r = c.represent(0.0).unwrap();
        assert_eq!((r.j, r.chi_l, r.chi_h), (1, 0.0, 0.0));
        let r = c.represent(50.0).unwrap();
        assert_eq!(r.j, 2);
        assert_eq!((r.low_class, r.high_class), (Some(2), 1));
        let chi_h = (50.0 - 120.0 / 2.8) / (1.0 / 2.2 - 1.0 / 2.8);
        assert!((r.chi_h - chi_h).abs() < 1e-12 && (r.chi_h - 73.30).abs() < 0.05);
        assert!((r.chi_l - 46.70).abs() < 0.05);
        assert!((r.chi_l / 2.8 + r.chi_h / 2.2 - 50.0).abs() < 1e-12);
        assert!(c.represent(c.w_edge()).is_err());
        assert!(c.represent(-1e-3).is_err());
    }

    #[test]
    fn margins_example() {
        let c = cfg(5.0);
        let m = c.margins(50.0).unwrap();
        assert_eq!(m.j, 2);
        assert!((m.xi_l - 69.94).abs() < 0.1 && (m.xi_h - 55.06).abs() < 0.1);
        assert_eq!((m.eps_l, m.eps_h), (2.5, 2.5));
    }

    #[test]
    fn margin_cases() {
        let c = cfg(5.0);
        // just past ŵ₁ the higher class is scarce: third case
        let w = 125.0 / 2.8 + 0.1;
        let m = c.margins(w).unwrap();
        assert!(m.xi_h <= 2.5 && m.xi_l >= m.xi_h);
        assert!((m.eps_l - (5.0 - m.xi_h)).abs() < 1e-12);
        assert!((m.eps_h - m.xi_h).abs() < 1e-12);
        // near ŵ₂ the lower class is scarce: first case
        let w = 125.0 / 2.2 - 0.1;
        let m = c.margins(w).unwrap();
        assert!(m.xi_l < m.xi_h);
        assert_eq!(m.eps_l, m.xi_l.min(2.5));
        for k in 0..=500 {
            let w = c.x_max * k as f64 / 500.0;
            let m = c.margins(w).unwrap();
            assert!(m.eps_l >= 0.0 && m.eps_h >= 0.0);
            assert!((m.eps_l + m.eps_h - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_point_lies_on_the_a_edge() {
        let c = cfg(5.0);
        for k in 1..1000 {
            let w = 125.0 / 2.8 + (c.x_max - 125.0 / 2.8) * k as f64 / 1000.0;
            let m = c.margins(w).unwrap();
            if m.xi_l - m.eps_l < 0.0 || m.xi_h - m.eps_h < 0.0 {
                continue;
            }
            let p = c.margin_point(w).unwrap();
            assert!((p.iter().sum::<f64>() - c.a).abs() < 1e-9);
            let wp: f64 = p.iter().zip(&c.theta).map(|(x, t)| x * t).sum();
            if wp < c.w_edge() {
                let g = c.gamma_a(wp.min(c.a_star)).unwrap();
                for (a, b) in g.iter().zip(&p) {
                    assert!((a - b).abs() < 1e-9, "w={w}: {g:?} vs {p:?}");
                }
            }
        }
    }

    #[test]
    fn gamma_a_is_a_rescaled_gamma() {
        let spec = table1();
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        let c = cfg(5.0);
        for k in 0..=10_000 {
            let w = c.a_star * k as f64 / 10_000.0;
            let g = c.gamma_a(w).unwrap();
            assert!((d.dot_theta(&g) - w).abs() <= 1e-10 * w.max(1.0));
            assert!(g.iter().sum::<f64>() <= c.a * (1.0 + 1e-12));
            assert!(g.iter().filter(|&&x| x != 0.0).count() <= 2);
            let scaled = hc.gamma(w * c.b / c.a).unwrap();
            for (x, y) in g.iter().zip(&scaled) {
                assert!((x - y * c.a / c.b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn band_reaches_the_full_corner() {
        let c = cfg(5.0);
        let w_chi = c.w_edge();
        let w_xi = c.x_max;
        for k in 0..=100 {
            let w = w_chi + (w_xi - w_chi) * k as f64 / 100.0;
            let g = c.gamma_a_extended(w).unwrap();
            let theta_dot: f64 = g.iter().zip(&c.theta).map(|(x, t)| x * t).sum();
            assert!((theta_dot - w).abs() <= 1e-10 * w);
            let lin = c.a + (w - w_chi) / (w_xi - w_chi) * (c.b - c.a);
            assert!((g[0] - lin).abs() < 1e-9);
        }
        let corner = c.gamma_a_extended(c.x_max).unwrap();
        assert!((corner[0] - 125.0).abs() < 1e-12 && corner[1] == 0.0 && corner[2] == 0.0);
        assert!(c.gamma_a(c.a_star + 1.0).is_err());
    }

    #[test]
    fn vanishing_margin_recovers_gamma() {
        let spec = table1();
        let d = derive(&spec).unwrap();
        let hc = HoldingCost::new(&spec, &d);
        let c = cfg(1e-9);
        for k in 0..=1000 {
            let w = c.a_star * k as f64 / 1000.0;
            let g = c.gamma_a(w).unwrap();
            let h = hc.gamma(w).unwrap();
            let diff: f64 = g.iter().zip(&h).map(|(x, y)| (x - y).abs()).sum();
            assert!(diff <= 1e-9 * c.b, "w={w} diff={diff}");
        }
    }

    #[test]
    fn priority_examples() {
        let c = cfg(5.0);
        let s = c.priority_sets(&[0.0; 3], 0.0);
        assert!(s.low_plus.is_empty() && s.high_plus.is_empty());
        let g = c.gamma_a(50.0).unwrap();
        let x: Vec<f64> = g.iter().map(|v| (v - 0.1).max(0.0)).collect();
        let s = c.priority_sets(&x, 50.0);
        assert_eq!(s.low, vec![1, 2]);
        assert_eq!(s.high, vec![0]);
        // ties go to high priority
        let s = c.priority_sets(&g, 50.0);
        assert_eq!(s.low, Vec::<usize>::new());
        // j = 1: only p(1) can be low
        let s = c.priority_sets(&[1.0, 1.0, 1.0], 10.0);
        assert_eq!(s.low, vec![2]);
        assert_eq!(s.high_plus, vec![0, 1]);
    }

    #[test]
    fn dominated_class_is_always_high() {
        use crate::model::fixtures::class;
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
        let c = PolicyConfig::new(&spec, &d, &hc, d.x_max, 0.4).unwrap();
        for k in 0..100 {
            let w = d.x_max * k as f64 / 100.0;
            let s = c.priority_sets(&[0.0, 0.0, 0.0, 0.01], w);
            assert_eq!(s.high_plus, vec![3]);
        }
    }

    #[test]
    fn allocation_examples() {
        let c = cfg(5.0);
        assert_eq!(c.allocate(&[0.0; 3], 0.0), vec![0.0; 3]);
        // classes I and II above their targets, III empty
        let b = c.allocate(&[5.0, 60.0, 0.0], 10.0);
        let rho = &c.rho;
        assert!((b[0] - rho[0] / (rho[0] + rho[1])).abs() < 1e-15);
        assert!((b[0] - 0.5011).abs() < 5e-5 && (b[1] - 0.4989).abs() < 5e-5);
        assert_eq!(b[2], 0.0);
        assert!(b[0] > rho[0] && b[1] > rho[1]);
        // only low-priority work present
        let b = c.allocate(&[0.0, 0.0, 1.0], 10.0);
        assert_eq!(b, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn admission_examples() {
        let c = cfg(5.0);
        let n = 100;
        for i in 0..3 {
            assert_eq!(c.admit(i, &[0.0; 3], 0.0, n), Admission::Accept);
        }
        assert_eq!(c.admit(1, &[0.0, 0.0, 10.0], c.a_star, n), Admission::RejectPolicy);
        assert_eq!(c.admit(0, &[0.0, 0.0, 10.0], c.a_star, n), Admission::Accept);
        let full = [c.b, 0.0, 0.0];
        assert_eq!(c.admit(0, &full, 0.5 * c.a_star, n), Admission::RejectForced);
        assert_eq!(c.admit(2, &[c.b - 0.1, 0.0, 0.0], 0.5, n), Admission::Accept);
        assert_eq!(c.capacity(100), 1250);
        assert_eq!(c.capacity(2), 176);
    }

    proptest! {
        #[test]
        fn reconstruction(u in 0.0f64..1.0) {
            let c = cfg(5.0);
            let w = u * c.w_edge();
            let r = c.represent(w).unwrap();
            let tl = r.low_class.map_or(0.0, |l| c.theta[l]);
            prop_assert!((tl * r.chi_l + c.theta[r.high_class] * r.chi_h - w).abs() <= 1e-12 * w.max(1.0));
            prop_assert!(r.chi_l >= 0.0 && r.chi_h >= 0.0);
            prop_assert!(r.chi_l + r.chi_h <= c.a * (1.0 + 1e-15));
            if r.j == 1 {
                prop_assert_eq!(r.chi_l, 0.0);
            }
        }

        #[test]
        fn allocation_properties(x in proptest::collection::vec(0.0f64..80.0, 3), zeros in proptest::collection::vec(any::<bool>(), 3), u in 0.0f64..1.0) {
            let c = cfg(5.0);
            let x: Vec<f64> = x.iter().zip(&zeros).map(|(v, z)| if *z { 0.0 } else { *v }).collect();
            let w = u * c.x_max;
            let b = c.allocate(&x, w);
            let total: f64 = b.iter().sum();
            if x.iter().all(|&v| v == 0.0) {
                prop_assert_eq!(total, 0.0);
            } else {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            for i in 0..3 {
                prop_assert!(b[i] >= 0.0);
                if x[i] == 0.0 {
                    prop_assert_eq!(b[i], 0.0);
                }
            }
            // moving a coordinate without crossing its threshold or zero keeps B
            let s = c.priority_sets(&x, w);
            let mut moved = x.clone();
            for i in 0..3 {
                if x[i] > 0.0 && s.high.contains(&i) {
                    moved[i] = x[i] + 7.0;
                }
            }
            prop_assert_eq!(c.allocate(&moved, w), b);
        }
    }
}
