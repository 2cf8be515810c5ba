//! Problem instance, heavy-traffic parameters and validation.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution family of the unit-mean inter-arrival or service variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Deterministic,
    /// Symmetric uniform around 1; reachable scv is `[0, 1/3)`.
    Uniform,
    /// Log-normal with mean 1 and the requested scv.
    Lognormal,
}

impl Family {
    /// Checks that `scv` is attainable by this family with strictly positive
    /// samples.
    pub fn admits(self, scv: f64) -> bool {
        match self {
            Family::Exponential => scv == 1.0,
            Family::Deterministic => scv == 0.0,
            Family::Uniform => (0.0..1.0 / 3.0).contains(&scv),
            Family::Lognormal => scv > 0.0 && scv.is_finite(),
        }
    }

    pub fn sampler(self, scv: f64) -> Result<UnitSampler> {
        if !self.admits(scv) {
            return Err(Error::InvalidArgument(format!(
                "{self:?} family cannot produce scv {scv}"
            )));
        }
        Ok(match self {
            Family::Exponential => UnitSampler::Exponential,
            Family::Deterministic => UnitSampler::Deterministic,
            Family::Uniform => UnitSampler::Uniform {
                half_width: (3.0 * scv).sqrt(),
            },
            Family::Lognormal => {
                let s2 = scv.ln_1p();
                UnitSampler::Lognormal(
                    LogNormal::new(-0.5 * s2, s2.sqrt()).expect("finite lognormal parameters"),
                )
            }
        })
    }
}

/// Draws unit-mean positive variables from one [`Family`].
#[derive(Debug, Clone, Copy)]
pub enum UnitSampler {
    Exponential,
    Deterministic,
    Uniform { half_width: f64 },
    Lognormal(LogNormal<f64>),
}

impl UnitSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            UnitSampler::Exponential => Exp1.sample(rng),
            UnitSampler::Deterministic => 1.0,
            UnitSampler::Uniform { half_width } => {
                1.0 + half_width * (2.0 * rng.random::<f64>() - 1.0)
            }
            UnitSampler::Lognormal(d) => d.sample(rng),
        }
    }
}

/// One task class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    /// First-order arrival rate.
    pub lambda: f64,
    /// First-order service rate.
    pub mu: f64,
    /// Second-order arrival perturbation.
    #[serde(default)]
    pub lambda_hat: f64,
    /// Second-order service perturbation.
    #[serde(default)]
    pub mu_hat: f64,
    /// Holding cost per task per unit time.
    pub h: f64,
    /// Rejection cost per task.
    pub r: f64,
    pub ia_scv: f64,
    pub st_scv: f64,
    pub ia_family: Family,
    pub st_family: Family,
}

fn default_criticality_tol() -> f64 {
    0.01
}

/// The problem instance: classes, scaled buffer size and discount rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub classes: Vec<ClassSpec>,
    pub b: f64,
    pub alpha: f64,
    #[serde(default = "default_criticality_tol")]
    pub criticality_tol: f64,
}

/// A single finding reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NoClasses,
    NonPositive {
        class: Option<String>,
        field: &'static str,
        value: f64,
    },
    ScvFamily {
        class: String,
        field: &'static str,
        family: Family,
        scv: f64,
    },
    NotCritical { total_load: f64, tol: f64 },
    ThetaNotDistinct { first: String, second: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoClasses => write!(f, "instance has no classes"),
            Violation::NonPositive { class: Some(c), field, value } => {
                write!(f, "class {c}: {field} = {value} must be positive")
            }
            Violation::NonPositive { class: None, field, value } => {
                write!(f, "{field} = {value} must be positive")
            }
            Violation::ScvFamily { class, field, family, scv } => {
                write!(f, "class {class}: {field} = {scv} not attainable by {family:?}")
            }
            Violation::NotCritical { total_load, tol } => write!(
                f,
                "total load {total_load} differs from 1 by more than {tol}"
            ),
            Violation::ThetaNotDistinct { first, second } => {
                write!(f, "theta not distinct: classes {first} and {second} share 1/mu")
            }
        }
    }
}

impl SystemSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn h(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.h).collect()
    }

    pub fn r(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.r).collect()
    }

    pub fn total_load(&self) -> f64 {
        self.classes.iter().map(|c| c.lambda / c.mu).sum()
    }
}

/// Reports every violated requirement; an empty list means the instance is
/// usable.
pub fn validate(spec: &SystemSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.classes.is_empty() {
        out.push(Violation::NoClasses);
    }
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(spec.b) {
        out.push(Violation::NonPositive { class: None, field: "b", value: spec.b });
    }
    if !positive(spec.alpha) {
        out.push(Violation::NonPositive { class: None, field: "alpha", value: spec.alpha });
    }
    if !(spec.criticality_tol >= 0.0) {
        out.push(Violation::NonPositive {
            class: None,
            field: "criticality_tol",
            value: spec.criticality_tol,
        });
    }
    for c in &spec.classes {
        for (field, value) in [("lambda", c.lambda), ("mu", c.mu), ("h", c.h), ("r", c.r)] {
            if !positive(value) {
                out.push(Violation::NonPositive { class: Some(c.label.clone()), field, value });
            }
        }
        for (field, family, scv) in [
            ("ia_scv", c.ia_family, c.ia_scv),
            ("st_scv", c.st_family, c.st_scv),
        ] {
            if !family.admits(scv) {
                out.push(Violation::ScvFamily { class: c.label.clone(), field, family, scv });
            }
        }
    }
    if !spec.classes.is_empty() && spec.classes.iter().all(|c| positive(c.lambda) && positive(c.mu))
    {
        let total = spec.total_load();
        if (total - 1.0).abs() > spec.criticality_tol {
            out.push(Violation::NotCritical { total_load: total, tol: spec.criticality_tol });
        }
        for (i, a) in spec.classes.iter().enumerate() {
            for b in &spec.classes[i + 1..] {
                if 1.0 / a.mu == 1.0 / b.mu {
                    out.push(Violation::ThetaNotDistinct {
                        first: a.label.clone(),
                        second: b.label.clone(),
                    });
                }
            }
        }
    }
    out
}

/// Heavy-traffic quantities computed from a valid [`SystemSpec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Mean service time per task, `1/μᵢ`.
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    /// Per-class drift `λ̂ᵢ − ρᵢ μ̂ᵢ`.
    pub m: Vec<f64>,
    /// Per-class variance `λᵢ (C²_IA + C²_ST)`.
    pub sigma2: Vec<f64>,
    pub m_bar: f64,
    pub sigma2_bar: f64,
    /// Largest workload that fits in the buffer, `b · maxᵢ θᵢ`.
    pub x_max: f64,
}

pub fn derive(spec: &SystemSpec) -> Result<DerivedParams> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    let theta: Vec<f64> = spec.classes.iter().map(|c| 1.0 / c.mu).collect();
    let rho: Vec<f64> = spec.classes.iter().map(|c| c.lambda / c.mu).collect();
    let m: Vec<f64> = spec
        .classes
        .iter()
        .zip(&rho)
        .map(|(c, rho)| c.lambda_hat - rho * c.mu_hat)
        .collect();
    let sigma2: Vec<f64> = spec
        .classes
        .iter()
        .map(|c| c.lambda * (c.ia_scv + c.st_scv))
        .collect();
    let m_bar = theta.iter().zip(&m).map(|(t, m)| t * m).sum();
    let sigma2_bar = theta.iter().zip(&sigma2).map(|(t, s)| t * t * s).sum();
    let theta_max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DerivedParams {
        x_max: spec.b * theta_max,
        theta,
        rho,
        m,
        sigma2,
        m_bar,
        sigma2_bar,
    })
}

impl DerivedParams {
    pub fn dot_theta(&self, x: &[f64]) -> f64 {
        self.theta.iter().zip(x).map(|(t, x)| t * x).sum()
    }

    /// Index of the class with the largest `θᵢ`.
    pub fn argmax_theta(&self) -> usize {
        let mut best = 0;
        for (i, &t) in self.theta.iter().enumerate() {
            if t > self.theta[best] {
                best = i;
            }
        }
        best
    }
}
