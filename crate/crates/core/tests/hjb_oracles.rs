//! The Bellman solver against an independent shooting construction, plus grid
//! refinement and comparative statics.

use sharedbuf::hjb::{solve_bellman, BellmanProblem, HjbSolution, SolverSettings};
use sharedbuf::holding_cost::{HoldingCost, PiecewiseLinear};
use sharedbuf::model::{derive, SystemSpec};

fn table1() -> SystemSpec {
    SystemSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../instances/table1.json")).unwrap()
}

fn problem(spec: &SystemSpec) -> BellmanProblem {
    let d = derive(spec).unwrap();
    let hc = HoldingCost::new(spec, &d);
    BellmanProblem::new(&d, &hc, spec.alpha)
}

/// The bundled three-class instance with rejection costs cut so that early rejection pays off.
fn interior_instance() -> SystemSpec {
    let mut spec = table1();
    for c in &mut spec.classes {
        c.r *= 0.1;
    }
    spec
}

/// Writes `V = c φ + ψ` with `φ` solving the homogeneous equation
/// (`φ(0) = 1, φ'(0) = 0`) and `ψ` the inhomogeneous one from rest. A
/// barrier at `x` forces `V'(x) = r̄`, so `c(x) = (r̄ − ψ'(x))/φ'(x)` is the
/// cost from the origin of rejecting at `x`; the free boundary minimizes it.
/// Returns `(x*, V(0))`.
fn shooting(p: &BellmanProblem, steps: usize) -> (f64, f64) {
    let (x, v, _) = shooting_full(p, steps);
    (x, v)
}

/// Also returns `c(x_max)`.
fn shooting_full(p: &BellmanProblem, steps: usize) -> (f64, f64, f64) {
    let h = p.x_max / steps as f64;
    let rhs = |w: f64, y: [f64; 4]| -> [f64; 4] {
        // y = (φ, φ', ψ, ψ')
        let k = 2.0 / p.sigma2_bar;
        [
            y[1],
            k * (p.alpha * y[0] - p.m_bar * y[1]),
            y[3],
            k * (p.alpha * y[2] - p.m_bar * y[3] - p.h_bar.eval(w)),
        ]
    };
    let mut y = [1.0, 0.0, 0.0, 0.0];
    let mut best = (p.x_max, f64::INFINITY);
    let mut last = f64::NAN;
    for s in 0..steps {
        let w = s as f64 * h;
        let add = |a: [f64; 4], b: [f64; 4], f: f64| -> [f64; 4] {
            [a[0] + f * b[0], a[1] + f * b[1], a[2] + f * b[2], a[3] + f * b[3]]
        };
        let k1 = rhs(w, y);
        let k2 = rhs(w + 0.5 * h, add(y, k1, 0.5 * h));
        let k3 = rhs(w + 0.5 * h, add(y, k2, 0.5 * h));
        let k4 = rhs(w + h, add(y, k3, h));
        for i in 0..4 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let c = (p.r_bar - y[3]) / y[1];
        if c < best.1 {
            best = ((s + 1) as f64 * h, c);
        }
        last = c;
    }
    (best.0, best.1, last)
}

fn solve(p: &BellmanProblem, n: usize) -> HjbSolution {
    solve_bellman(p, &SolverSettings::with_grid(n)).unwrap()
}

#[test]
fn table1_matches_shooting() {
    let p = problem(&table1());
    let sol = solve(&p, 4096);
    // c(x) keeps falling all the way to x_max; far out it is flat to rounding
    let (_, v0, at_end) = shooting_full(&p, 200_000);
    assert!(at_end - v0 <= 1e-12 * v0);
    assert_eq!(sol.x_star, p.x_max);
    assert!(sol.boundary_touching());
    // second-order convergence towards the oracle value
    assert!((sol.value[0] - v0).abs() < 1e-3 * v0, "{} vs {v0}", sol.value[0]);
    let fine = solve(&p, 16_384);
    assert!((fine.value[0] - v0).abs() < 1e-4 * v0, "{} vs {v0}", fine.value[0]);
    assert!((fine.value[0] - v0).abs() < 0.1 * (sol.value[0] - v0).abs());
    assert_eq!(sol.gradient_at(0.0).unwrap(), 0.0);
    assert!((sol.gradient_at(p.x_max).unwrap() - p.r_bar).abs() <= 1e-8 * p.r_bar * p.x_max);
    assert_eq!(sol.x_star_index, 4096);
}

#[test]
fn coarse_grid_agrees_with_shooting_on_interior_boundary() {
    let p = problem(&interior_instance());
    let (x_oracle, v_oracle) = shooting(&p, 400_000);
    assert!(x_oracle < p.x_max);
    for (n, rel) in [(1024, 2e-2), (4096, 1e-3)] {
        let sol = solve(&p, n);
        let dw = p.x_max / n as f64;
        assert!((sol.x_star - x_oracle).abs() <= 2.0 * dw, "N={n}: {} vs {x_oracle}", sol.x_star);
        assert!((sol.value[0] - v_oracle).abs() < rel * v_oracle, "N={n}: {} vs {v_oracle}", sol.value[0]);
        assert!(sol.warnings().is_empty());
    }
}

#[test]
fn free_boundary_converges_under_refinement() {
    let p = problem(&interior_instance());
    for n in [512, 1024, 2048] {
        let a = solve(&p, n).x_star;
        let b = solve(&p, 2 * n).x_star;
        assert!((a - b).abs() <= 4.0 * p.x_max / n as f64, "N={n}: {a} vs {b}");
    }
}

#[test]
fn comparative_statics() {
    let base = interior_instance();
    let x0 = solve(&problem(&base), 2048).x_star;
    let mut dear_r = base.clone();
    dear_r.classes.iter_mut().for_each(|c| c.r *= 2.0);
    let mut dear_h = base.clone();
    dear_h.classes.iter_mut().for_each(|c| c.h *= 2.0);
    assert!(solve(&problem(&dear_r), 2048).x_star >= x0);
    assert!(solve(&problem(&dear_h), 2048).x_star <= x0);
    // on the bundled instance itself the boundary sits at the end of the domain either way
    let t = table1();
    let mut t_r = t.clone();
    t_r.classes.iter_mut().for_each(|c| c.r *= 2.0);
    let mut t_h = t.clone();
    t_h.classes.iter_mut().for_each(|c| c.h *= 2.0);
    let xt = solve(&problem(&t), 2048).x_star;
    assert!(solve(&problem(&t_r), 2048).x_star >= xt);
    assert!(solve(&problem(&t_h), 2048).x_star <= xt);
}

#[test]
fn complementarity_signs_at_every_node() {
    let p = problem(&interior_instance());
    let sol = solve(&p, 2048);
    let dw = sol.dw();
    let tol = 1e-8 * p.r_bar * p.x_max;
    for i in 1..sol.grid_intervals {
        let v = &sol.value;
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dw * dw);
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * dw);
        let gen = 0.5 * p.sigma2_bar * d2 + p.m_bar * d1 - p.alpha * v[i] + p.h_bar.eval(sol.grid[i]);
        let terms = [gen, d1, p.r_bar - d1];
        assert!(terms.iter().all(|&t| t >= -tol), "node {i}: {terms:?}");
        assert!(terms.iter().any(|&t| t.abs() <= tol), "node {i}: {terms:?}");
    }
}

#[test]
fn steep_linear_cost_sweep() {
    for kappa in [20.0, 50.0, 200.0] {
        let p = BellmanProblem {
            sigma2_bar: 1.0,
            m_bar: 0.0,
            alpha: 1.0,
            r_bar: 5.0,
            x_max: 10.0,
            h_bar: PiecewiseLinear::linear(kappa, 10.0),
        };
        let sol = solve(&p, 2000);
        assert!(sol.x_star > 0.0 && sol.x_star < p.x_max, "kappa {kappa}");
        let inside = &sol.gradient[..=sol.x_star_index];
        assert!(inside.windows(2).all(|g| g[1] > g[0]));
    }
}

#[test]
fn drifts_of_both_signs() {
    for m_bar in [-3.0, 3.0, 400.0] {
        let p = BellmanProblem {
            sigma2_bar: 1.0,
            m_bar,
            alpha: 1.0,
            r_bar: 5.0,
            x_max: 10.0,
            h_bar: PiecewiseLinear::linear(20.0, 10.0),
        };
        let sol = solve(&p, 2000);
        assert_eq!(sol.upwind_drift, m_bar.abs() * 10.0 / 2000.0 > 1.0);
        let (x_oracle, v_oracle) = shooting(&p, 200_000);
        if m_bar.abs() < 10.0 {
            assert!((sol.x_star - x_oracle).abs() <= 2.0 * sol.dw(), "m={m_bar}");
            assert!((sol.value[0] - v_oracle).abs() < 1e-3 * v_oracle.abs().max(1.0));
        }
    }
}
