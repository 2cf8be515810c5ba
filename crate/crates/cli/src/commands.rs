//! One function per subcommand. Each takes fully resolved parameters, so a
//! manifest replay runs exactly the same code path as the original call.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sharedbuf::des::{self, SimConfig, SimResult};
use sharedbuf::hjb::{solve_bellman, BellmanProblem, HjbSolution, SolverSettings};
use sharedbuf::holding_cost::HoldingCost;
use sharedbuf::model::{derive, validate, DerivedParams, SystemSpec};
use sharedbuf::policy::PolicyConfig;
use sharedbuf::reflect::{rbm_cost_mc, simulate_rbm, RbmParams};
use sharedbuf::stats::MeanSe;
use sharedbuf::{Error, Execution};

use crate::manifest::Manifest;
use crate::output::{floats, to_json, Cell, Csv, Prefix};
use crate::CliError;

/// Files produced by a command, as `(suffix, contents)`.
pub type Files = Vec<(String, String)>;

pub struct Ctx<'a> {
    pub manifest: &'a Manifest,
    pub prefix: &'a Prefix,
}

impl Ctx<'_> {
    fn spec(&self) -> &SystemSpec {
        &self.manifest.instance
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn manifest_file(&self) -> String {
        self.prefix.file_name("_manifest.json")
    }
}

struct Model {
    derived: DerivedParams,
    holding: HoldingCost,
}

fn model(spec: &SystemSpec) -> Result<Model, CliError> {
    let derived = derive(spec)?;
    let holding = HoldingCost::new(spec, &derived);
    Ok(Model { derived, holding })
}

fn label_columns(spec: &SystemSpec, stem: &str) -> Vec<String> {
    spec.labels().iter().map(|l| format!("{stem}_{l}")).collect()
}

/// Evenly spaced points `lo, …, hi`.
fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 })
        .collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoParams {}

#[derive(Serialize)]
struct DeriveReport<'a> {
    manifest: &'a Manifest,
    total_load: f64,
    derived: &'a DerivedParams,
    i_star: usize,
    i_star_label: &'a str,
    r_bar: f64,
}

pub fn derive_cmd(ctx: &Ctx, _: &NoParams) -> Result<Files, CliError> {
    let spec = ctx.spec();
    let m = model(spec)?;
    let i_star = m.holding.rejection.i_star;
    let report = DeriveReport {
        manifest: ctx.manifest,
        total_load: spec.total_load(),
        derived: &m.derived,
        i_star,
        i_star_label: &spec.classes[i_star].label,
        r_bar: m.holding.rejection.r_bar,
    };
    Ok(vec![(".json".into(), to_json(&report))])
}

pub fn order_cmd(ctx: &Ctx, _: &NoParams) -> Result<Files, CliError> {
    let spec = ctx.spec();
    let m = model(spec)?;
    let order = &m.holding.order;
    let labels = spec.labels();
    let never: Vec<&str> = order.never.iter().map(|&i| labels[i]).collect();
    let mut meta = vec![
        ("manifest", ctx.manifest_file()),
        ("never_accumulated", never.join(",")),
    ];
    // every eligible candidate, step by step, so the argmin can be audited
    let candidates: Vec<String> = order
        .ratios
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|r| format!("{}={}", labels[i], crate::output::fmt_f64(r))))
                .collect();
            format!("j={} {}", j + 1, cells.join(" "))
        })
        .collect();
    for c in &candidates {
        meta.push(("candidates", c.clone()));
    }
    let columns: Vec<String> = ["j", "class_label", "w_hat_j", "ratio"].map(String::from).to_vec();
    let mut csv = Csv::new(&meta, &columns);
    for j in 1..=order.len() {
        csv.row(&[
            Cell::U(j as u64),
            Cell::S(labels[order.class(j)].to_string()),
            Cell::F(order.w_hat[j]),
            Cell::F(order.selected_ratio(j)),
        ]);
    }
    Ok(vec![(".csv".into(), csv.into_string())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbarParams {
    pub grid_points: usize,
}

pub fn hbar_cmd(ctx: &Ctx, p: &HbarParams) -> Result<Files, CliError> {
    if p.grid_points < 2 {
        return Err(CliError::Input("--grid-points must be at least 2".into()));
    }
    let spec = ctx.spec();
    let m = model(spec)?;
    let meta = [
        ("manifest", ctx.manifest_file()),
        ("breakpoints", floats(&m.holding.order.w_hat)),
        ("slopes", floats(&m.holding.h_bar.slopes())),
        ("x_max", crate::output::fmt_f64(m.derived.x_max)),
    ];
    let mut columns = vec!["w".to_string(), "h_bar".to_string()];
    columns.extend(label_columns(spec, "gamma"));
    let mut csv = Csv::new(&meta, &columns);
    for w in grid(0.0, m.derived.x_max, p.grid_points) {
        let mut row = vec![Cell::F(w), Cell::F(m.holding.h_bar_at(w)?)];
        row.extend(m.holding.gamma(w)?.into_iter().map(Cell::F));
        csv.row(&row);
    }
    Ok(vec![(".csv".into(), csv.into_string())])
}

/// Where the free boundary used by a command came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub x_star: f64,
    /// `V̄(0)` when the boundary came from a solve.
    pub v0: Option<f64>,
    pub source: String,
}

/// How the user asked for the boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryRequest {
    Inline(SolverSettings),
    FromSolve(String),
    Given(f64),
}

#[derive(Deserialize)]
struct SolveArtifact {
    manifest: Manifest,
    x_star: f64,
    v0: f64,
}

pub fn resolve_boundary(spec: &SystemSpec, req: &BoundaryRequest) -> Result<Boundary, CliError> {
    match req {
        BoundaryRequest::Inline(settings) => {
            let sol = solve(spec, settings)?;
            for w in sol.warnings() {
                eprintln!("warning: {w}");
            }
            Ok(Boundary {
                x_star: sol.x_star,
                v0: Some(sol.value[0]),
                source: format!("inline solve with N = {}", settings.grid_intervals),
            })
        }
        BoundaryRequest::FromSolve(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Input(format!("missing solve artifact {path} ({e}); run `solve` first or pass --x-star"))
            })?;
            let a: SolveArtifact = serde_json::from_str(&text).map_err(Error::from)?;
            if a.manifest.instance != *spec {
                return Err(CliError::Input(format!("{path} was solved for a different instance")));
            }
            Ok(Boundary { x_star: a.x_star, v0: Some(a.v0), source: format!("solve artifact {path}") })
        }
        BoundaryRequest::Given(x) => Ok(Boundary { x_star: *x, v0: None, source: "given".into() }),
    }
}

/// Default location of a prior solve: `solve.json` next to the outputs.
pub fn default_solve_path(prefix: &Prefix) -> String {
    prefix.dir().join("solve.json").to_string_lossy().into_owned()
}

fn solve(spec: &SystemSpec, settings: &SolverSettings) -> Result<HjbSolution, CliError> {
    let m = model(spec)?;
    let problem = BellmanProblem::new(&m.derived, &m.holding, spec.alpha);
    Ok(solve_bellman(&problem, settings)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaAParams {
    pub grid_points: usize,
    pub epsilon: f64,
    pub boundary: Boundary,
}

pub fn gamma_a_cmd(ctx: &Ctx, p: &GammaAParams) -> Result<Files, CliError> {
    if p.grid_points < 2 {
        return Err(CliError::Input("--grid-points must be at least 2".into()));
    }
    let spec = ctx.spec();
    let m = model(spec)?;
    let policy = PolicyConfig::new(spec, &m.derived, &m.holding, p.boundary.x_star, p.epsilon)?;
    let meta = [
        ("manifest", ctx.manifest_file()),
        ("a", crate::output::fmt_f64(policy.a)),
        ("a_star", crate::output::fmt_f64(policy.a_star)),
        ("x_star", crate::output::fmt_f64(policy.x_star)),
        ("i_star", spec.classes[policy.rejection.i_star].label.clone()),
    ];
    let mut columns = vec!["w".to_string()];
    columns.extend(label_columns(spec, "gamma_a"));
    columns.extend(["eps_l", "eps_h", "j"].map(String::from));
    let mut csv = Csv::new(&meta, &columns);
    for w in grid(0.0, policy.a_star, p.grid_points) {
        let mut row = vec![Cell::F(w)];
        row.extend(policy.gamma_a(w)?.into_iter().map(Cell::F));
        let margins = policy.margins(w)?;
        let j = if w < policy.w_edge() { policy.represent(w)?.j } else { policy.order.len() };
        row.extend([Cell::F(margins.eps_l), Cell::F(margins.eps_h), Cell::U(j as u64)]);
        csv.row(&row);
    }
    Ok(vec![(".csv".into(), csv.into_string())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub grid_intervals: usize,
    pub tol: f64,
    pub max_iterations: usize,
    pub csv: bool,
}

impl SolveParams {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            grid_intervals: self.grid_intervals,
            tol: self.tol,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Serialize)]
struct SolveReport<'a> {
    manifest: &'a Manifest,
    x_star: f64,
    x_star_index: usize,
    r_bar: f64,
    residual: f64,
    #[serde(rename = "N")]
    n: usize,
    tol: f64,
    iterations: usize,
    v0: f64,
    x_max: f64,
    boundary_touching: bool,
    upwind_drift: bool,
    warnings: Vec<String>,
}

pub fn solve_cmd(ctx: &Ctx, p: &SolveParams) -> Result<Files, CliError> {
    let sol = solve(ctx.spec(), &p.settings())?;
    let warnings = sol.warnings();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = SolveReport {
        manifest: ctx.manifest,
        x_star: sol.x_star,
        x_star_index: sol.x_star_index,
        r_bar: sol.r_bar,
        residual: sol.residual,
        n: sol.grid_intervals,
        tol: sol.tol,
        iterations: sol.iterations,
        v0: sol.value[0],
        x_max: sol.x_max(),
        boundary_touching: sol.boundary_touching(),
        upwind_drift: sol.upwind_drift,
        warnings,
    };
    let mut files = vec![(".json".to_string(), to_json(&report))];
    if p.csv {
        let meta = [("manifest", ctx.manifest_file()), ("x_star", crate::output::fmt_f64(sol.x_star))];
        let mut csv = Csv::new(&meta, &["w", "V", "Vp"].map(String::from));
        for ((w, v), g) in sol.grid.iter().zip(&sol.value).zip(&sol.gradient) {
            csv.row(&[Cell::F(*w), Cell::F(*v), Cell::F(*g)]);
        }
        files.push(("_value.csv".into(), csv.into_string()));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmCmdParams {
    pub boundary: Boundary,
    pub replications: usize,
    pub x0: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Number of paths written to the per-path CSV.
    pub paths_csv: usize,
}

#[derive(Serialize)]
struct RbmReport<'a> {
    manifest: &'a Manifest,
    mean_cost: f64,
    se: f64,
    replications: usize,
    #[serde(rename = "V0")]
    v0: Option<f64>,
    z_score: Option<f64>,
    x_star: f64,
    dt: f64,
    horizon: f64,
    max_tail_bound: f64,
}

fn rbm_params(spec: &SystemSpec, d: &DerivedParams, x_star: f64, x0: f64, dt: f64, horizon: f64) -> RbmParams {
    let mut prm = RbmParams::with_defaults(x0, d.m_bar, d.sigma2_bar, x_star, spec.alpha);
    prm.dt = dt;
    prm.horizon = horizon;
    prm
}

pub fn rbm_cmd(ctx: &Ctx, p: &RbmCmdParams) -> Result<Files, CliError> {
    let spec = ctx.spec();
    let m = model(spec)?;
    let prm = rbm_params(spec, &m.derived, p.boundary.x_star, p.x0, p.dt, p.horizon);
    let r_bar = m.holding.rejection.r_bar;
    let est = rbm_cost_mc(&prm, &m.holding.h_bar, r_bar, spec.alpha, p.replications, ctx.seed(), Execution::Parallel)?;
    let report = RbmReport {
        manifest: ctx.manifest,
        mean_cost: est.mean,
        se: est.se,
        replications: est.replications,
        v0: p.boundary.v0,
        z_score: p.boundary.v0.map(|v| est.z_score(v)),
        x_star: p.boundary.x_star,
        dt: prm.dt,
        horizon: prm.horizon,
        max_tail_bound: est.max_tail_bound,
    };
    let mut files = vec![(".json".to_string(), to_json(&report))];
    if p.paths_csv > 0 {
        // replication k of the estimate runs on seed + k
        let paths: Vec<_> = (0..p.paths_csv.min(p.replications))
            .map(|k| simulate_rbm(&prm, ctx.seed().wrapping_add(k as u64)))
            .collect::<Result<_, _>>()?;
        let mut columns = vec!["t".to_string()];
        columns.extend((0..paths.len()).map(|k| format!("x_{k}")));
        let mut csv = Csv::new(&[("manifest", ctx.manifest_file())], &columns);
        for s in 0..paths[0].x.len() {
            let mut row = vec![Cell::F(s as f64 * prm.dt)];
            row.extend(paths.iter().map(|path| Cell::F(path.x[s])));
            csv.row(&row);
        }
        files.push(("_paths.csv".into(), csv.into_string()));
    }
    Ok(files)
}

/// Initial queue content of the simulated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Empty buffer.
    Empty,
    /// `γᵃ(a*)`: the policy curve at the rejection threshold.
    AStar,
    /// `γ(x_max)`: the buffer full of the slowest class.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesParams {
    pub n: u64,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub sample_dt: f64,
    pub start: Start,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateParams {
    pub boundary: Boundary,
    #[serde(flatten)]
    pub des: DesParams,
}

fn start_counts(m: &Model, policy: &PolicyConfig, start: Start, n: u64) -> Result<Option<Vec<u64>>, CliError> {
    Ok(match start {
        Start::Empty => None,
        Start::AStar => Some(des::unscaled_counts(&policy.gamma_a(policy.a_star)?, n)),
        Start::Full => Some(des::unscaled_counts(&m.holding.gamma(m.derived.x_max)?, n)),
    })
}

fn run_des(spec: &SystemSpec, m: &Model, x_star: f64, p: &DesParams) -> Result<(PolicyConfig, Vec<SimResult>), CliError> {
    if p.seeds.len() < 2 {
        return Err(CliError::Input("need at least two seeds".into()));
    }
    let policy = PolicyConfig::new(spec, &m.derived, &m.holding, x_star, p.epsilon)?;
    let mut cfg = SimConfig::new(p.n, p.horizon, 0);
    cfg.sample_dt = p.sample_dt;
    cfg.initial = start_counts(m, &policy, p.start, p.n)?;
    let results = des::replicate(spec, &policy, &cfg, &p.seeds, Execution::Parallel)?;
    Ok((policy, results))
}

#[derive(Serialize)]
struct SeedRow {
    seed: u64,
    cost: f64,
    ssc_max: f64,
    policy_rejections: u64,
    forced_rejections: u64,
    forced_share: Option<f64>,
    idle_time: f64,
    events: u64,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    manifest: &'a Manifest,
    n: u64,
    a_star: f64,
    cost: MeanSe,
    ssc_max: MeanSe,
    policy_rejections: u64,
    forced_rejections: u64,
    mean_forced_share: Option<f64>,
    trace_seed: u64,
    per_seed: Vec<SeedRow>,
    warnings: Vec<String>,
}

fn distinct_warnings(results: &[SimResult]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in results.iter().flat_map(|r| &r.warnings) {
        if !out.contains(w) {
            out.push(w.clone());
        }
    }
    out
}

pub fn simulate_cmd(ctx: &Ctx, p: &SimulateParams) -> Result<Files, CliError> {
    let spec = ctx.spec();
    let m = model(spec)?;
    let (policy, results) = run_des(spec, &m, p.boundary.x_star, &p.des)?;
    let s = des::summarize(&results);
    let summary = SimulateSummary {
        manifest: ctx.manifest,
        n: p.des.n,
        a_star: policy.a_star,
        cost: s.cost,
        ssc_max: s.ssc_max,
        policy_rejections: s.policy_rejections,
        forced_rejections: s.forced_rejections,
        mean_forced_share: s.mean_forced_share,
        trace_seed: results[0].seed,
        per_seed: results
            .iter()
            .map(|r| SeedRow {
                seed: r.seed,
                cost: r.cost,
                ssc_max: r.ssc_max,
                policy_rejections: r.total_policy_rejections(),
                forced_rejections: r.total_forced_rejections(),
                forced_share: r.forced_share(),
                idle_time: r.idle_time,
                events: r.events,
            })
            .collect(),
        warnings: distinct_warnings(&results),
    };
    let first = &results[0];
    let mut columns = vec!["t".to_string()];
    columns.extend(label_columns(spec, "x_hat"));
    columns.extend(["workload", "ssc"].map(String::from));
    let meta = [("manifest", ctx.manifest_file()), ("seed", first.seed.to_string())];
    let mut csv = Csv::new(&meta, &columns);
    for (sample, ssc) in first.trace.iter().zip(&first.ssc) {
        let mut row = vec![Cell::F(sample.t)];
        row.extend(sample.x_hat.iter().map(|&x| Cell::F(x)));
        row.extend([Cell::F(sample.w), Cell::F(*ssc)]);
        csv.row(&row);
    }
    Ok(vec![
        ("_summary.json".into(), to_json(&summary)),
        ("_trace.csv".into(), csv.into_string()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    pub boundary: Boundary,
    pub n_values: Vec<u64>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub sample_dt: f64,
    pub start: Start,
    pub replications: usize,
    pub dt: f64,
    pub rbm_horizon: f64,
}

#[derive(Serialize)]
struct McSummary {
    mean: f64,
    se: f64,
    replications: usize,
    z_score: f64,
    dt: f64,
    horizon: f64,
}

#[derive(Serialize)]
struct DesRow {
    n: u64,
    cost: MeanSe,
    ssc_max: MeanSe,
    policy_rejections: u64,
    forced_rejections: u64,
    mean_forced_share: Option<f64>,
}

#[derive(Serialize)]
struct CompareReport<'a> {
    manifest: &'a Manifest,
    #[serde(rename = "V0")]
    v0: f64,
    x_star: f64,
    mc: McSummary,
    des: Vec<DesRow>,
    ssc_max_decreasing: bool,
    /// Absent when some `n` saw no rejections at all.
    forced_share_decreasing: Option<bool>,
    warnings: Vec<String>,
}

pub fn compare_cmd(ctx: &Ctx, p: &CompareParams) -> Result<Files, CliError> {
    let spec = ctx.spec();
    let m = model(spec)?;
    let v0 = p
        .boundary
        .v0
        .ok_or_else(|| CliError::Input("compare needs V(0) from a solve".into()))?;
    let prm = rbm_params(spec, &m.derived, p.boundary.x_star, 0.0, p.dt, p.rbm_horizon);
    let est = rbm_cost_mc(
        &prm,
        &m.holding.h_bar,
        m.holding.rejection.r_bar,
        spec.alpha,
        p.replications,
        ctx.seed(),
        Execution::Parallel,
    )?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &n in &p.n_values {
        let dp = DesParams {
            n,
            horizon: p.horizon,
            seeds: p.seeds.clone(),
            epsilon: p.epsilon,
            sample_dt: p.sample_dt,
            start: p.start,
        };
        let (_, results) = run_des(spec, &m, p.boundary.x_star, &dp)?;
        for w in distinct_warnings(&results) {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let s = des::summarize(&results);
        rows.push(DesRow {
            n,
            cost: s.cost,
            ssc_max: s.ssc_max,
            policy_rejections: s.policy_rejections,
            forced_rejections: s.forced_rejections,
            mean_forced_share: s.mean_forced_share,
        });
    }
    let ssc: Vec<f64> = rows.iter().map(|r| r.ssc_max.mean).collect();
    let shares: Option<Vec<f64>> = rows.iter().map(|r| r.mean_forced_share).collect();
    let report = CompareReport {
        manifest: ctx.manifest,
        v0,
        x_star: p.boundary.x_star,
        mc: McSummary {
            mean: est.mean,
            se: est.se,
            replications: est.replications,
            z_score: est.z_score(v0),
            dt: prm.dt,
            horizon: prm.horizon,
        },
        des: rows,
        ssc_max_decreasing: strictly_decreasing(&ssc),
        forced_share_decreasing: shares.map(|s| strictly_decreasing(&s)),
        warnings,
    };
    Ok(vec![(".json".into(), to_json(&report))])
}

/// Instance loading with validation findings surfaced one per line.
pub fn load_instance(path: &Path) -> Result<SystemSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read instance {}: {e}", path.display())))?;
    let spec = SystemSpec::from_json_str(&text)?;
    let violations = validate(&spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations).into());
    }
    Ok(spec)
}
