use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Field-level validation failure, reported back to API clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(errors: &[FieldError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// Reference operating characteristics a design is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub cumulative_efficacy: Vec<f64>,
    #[serde(default)]
    pub iess: Option<f64>,
    #[serde(default)]
    pub iec: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

/// Group sequential design: analyses at cumulative sizes `schedule`, stop for
/// efficacy at analysis `t` when `P(psi > psi0 | y) > efficacy[t]`, and for
/// futility when it falls to `futility[t]` or below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    #[serde(default)]
    pub name: Option<String>,
    pub schedule: Vec<usize>,
    pub efficacy: Vec<f64>,
    /// One bound per interim analysis; `0` disables futility stopping there.
    #[serde(default)]
    pub futility: Option<Vec<f64>>,
    #[serde(default)]
    pub psi0: f64,
    #[serde(default)]
    pub reference: Option<Reference>,
}

impl TrialDesign {
    pub fn new(schedule: Vec<usize>, efficacy: Vec<f64>) -> Result<Self> {
        let d = Self {
            name: None,
            schedule,
            efficacy,
            futility: None,
            psi0: 0.0,
            reference: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn fixed(n: usize, u: f64) -> Result<Self> {
        Self::new(vec![n], vec![u])
    }

    pub fn with_psi0(mut self, psi0: f64) -> Self {
        self.psi0 = psi0;
        self
    }

    pub fn with_futility(mut self, futility: Vec<f64>) -> Result<Self> {
        self.futility = Some(futility);
        self.validate()?;
        Ok(self)
    }

    pub fn n_analyses(&self) -> usize {
        self.schedule.len()
    }

    pub fn final_n(&self) -> usize {
        self.schedule.last().copied().unwrap_or(0)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "n={:?} u={:?}",
                self.schedule,
                self.efficacy
            )
        })
    }

    /// Futility bound at analysis `t`, `0` where none applies.
    pub fn futility_at(&self, t: usize) -> f64 {
        self.futility
            .as_ref()
            .and_then(|f| f.get(t).copied())
            .unwrap_or(0.0)
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let mut push = |field: String, message: String| out.push(FieldError { field, message });
        let t = self.schedule.len();
        if t == 0 {
            push("schedule".into(), "at least one analysis is required".into());
        }
        for (i, &n) in self.schedule.iter().enumerate() {
            if n == 0 {
                push(format!("schedule[{i}]"), "sample size must be positive".into());
            }
            if i > 0 && n <= self.schedule[i - 1] {
                push(
                    format!("schedule[{i}]"),
                    format!("must exceed the previous analysis ({})", self.schedule[i - 1]),
                );
            }
        }
        if self.efficacy.len() != t {
            push(
                "efficacy".into(),
                format!("{} thresholds given for {t} analyses", self.efficacy.len()),
            );
        }
        for (i, &u) in self.efficacy.iter().enumerate() {
            if !(u > 0.0 && u < 1.0) {
                push(format!("efficacy[{i}]"), format!("{u} is not in (0, 1)"));
            }
        }
        if let Some(f) = &self.futility {
            if f.len() + 1 != t.max(1) {
                push(
                    "futility".into(),
                    format!("{} bounds given; expected one per interim analysis ({})", f.len(), t.saturating_sub(1)),
                );
            }
            for (i, &l) in f.iter().enumerate() {
                if !(0.0..1.0).contains(&l) {
                    push(format!("futility[{i}]"), format!("{l} is not in [0, 1)"));
                } else if let Some(&u) = self.efficacy.get(i) {
                    if l >= u {
                        push(format!("futility[{i}]"), format!("must be below efficacy[{i}] = {u}"));
                    }
                }
            }
        }
        if !self.psi0.is_finite() {
            push("psi0".into(), "must be finite".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.field_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid design: {}", join(&errors))))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read design {}: {e}", path.display())))?;
        let mut d = Self::from_json_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if d.name.is_none() {
            d.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(d)
    }
}

/// Costs of a type I error, a type II error and each enrolled subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl CostSpec {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Result<Self> {
        let c = Self { c0, c1, c2 };
        c.validate()?;
        Ok(c)
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(FieldError {
                    field: format!("cost.{name}"),
                    message: format!("{v} must be a nonnegative number"),
                });
            }
        }
        if out.is_empty() && self.c0 == 0.0 && self.c1 == 0.0 && self.c2 == 0.0 {
            out.push(FieldError {
                field: "cost".into(),
                message: "at least one cost must be positive".into(),
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.field_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(join(&errors)))
        }
    }
}

pub const MIN_MVN_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvnConfig {
    pub draws: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for MvnConfig {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 20_240_601,
            antithetic: true,
        }
    }
}

impl MvnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < MIN_MVN_DRAWS {
            return Err(Error::Config(format!(
                "mvn draws = {}; at least {MIN_MVN_DRAWS} required",
                self.draws
            )));
        }
        Ok(())
    }
}
