//! Step-size rules for the gradient iteration.
//!
//! Each rule implements [`StepRule`] and is registered by name in a
//! [`StepRegistry`]. A rule is selected at runtime from a textual spec of the
//! form `name[:arg[:arg...]]`, e.g. `fixed:0.01`, `auto:0.5` or `backtrack`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::auto_step_size;
use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::model::ProblemInstance;
use crate::objective;

/// Result of asking a rule for the next iterate.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Moved { z: CVector, mu: f64 },
    /// The rule could not find an acceptable step.
    Stalled,
}

pub trait StepRule: Send {
    fn name(&self) -> &'static str;

    /// Called once with the initial point before iterating. Returns the
    /// nominal step size.
    fn prepare(&mut self, instance: &ProblemInstance, z0: &[Complex64]) -> Result<f64>;

    fn step(
        &mut self,
        instance: &ProblemInstance,
        z: &[Complex64],
        loss: f64,
        grad: &[Complex64],
    ) -> StepOutcome;
}

pub struct FixedStep {
    mu: f64,
}

impl FixedStep {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("fixed step must be positive, got {mu}")));
        }
        Ok(Self { mu })
    }
}

impl StepRule for FixedStep {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn prepare(&mut self, _: &ProblemInstance, _: &[Complex64]) -> Result<f64> {
        Ok(self.mu)
    }

    fn step(&mut self, _: &ProblemInstance, z: &[Complex64], _: f64, grad: &[Complex64]) -> StepOutcome {
        StepOutcome::Moved {
            z: linalg::axpy(z, -self.mu, grad),
            mu: self.mu,
        }
    }
}

/// Fixed step `safety / λ̂_max`, with `λ̂_max` the largest real-Hessian
/// eigenvalue at the initial point.
pub struct CurvatureStep {
    safety: f64,
    mu: f64,
}

impl CurvatureStep {
    pub const DEFAULT_SAFETY: f64 = 0.9;

    pub fn new(safety: f64) -> Result<Self> {
        if !(safety > 0.0 && safety < 1.0) {
            return Err(Error::invalid(format!("auto safety must lie in (0, 1), got {safety}")));
        }
        Ok(Self { safety, mu: 0.0 })
    }
}

impl StepRule for CurvatureStep {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn prepare(&mut self, instance: &ProblemInstance, z0: &[Complex64]) -> Result<f64> {
        self.mu = auto_step_size(instance, z0, self.safety)?;
        Ok(self.mu)
    }

    fn step(&mut self, _: &ProblemInstance, z: &[Complex64], _: f64, grad: &[Complex64]) -> StepOutcome {
        StepOutcome::Moved {
            z: linalg::axpy(z, -self.mu, grad),
            mu: self.mu,
        }
    }
}

/// Armijo backtracking along `-∇f`. The trial step grows by `1/shrink` after
/// every accepted step and shrinks by `shrink` until
/// `f(z − t∇f) ≤ f(z) − 2 c t ‖∇f‖²`.
pub struct Backtracking {
    shrink: f64,
    c_armijo: f64,
    t: f64,
}

impl Backtracking {
    pub const DEFAULT_SHRINK: f64 = 0.5;
    pub const DEFAULT_ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 80;

    pub fn new(shrink: f64, c_armijo: f64) -> Result<Self> {
        if !(shrink > 0.0 && shrink < 1.0) {
            return Err(Error::invalid(format!("backtracking shrink must lie in (0, 1), got {shrink}")));
        }
        if !(c_armijo > 0.0 && c_armijo < 1.0) {
            return Err(Error::invalid(format!("Armijo constant must lie in (0, 1), got {c_armijo}")));
        }
        Ok(Self {
            shrink,
            c_armijo,
            t: 0.0,
        })
    }
}

impl StepRule for Backtracking {
    fn name(&self) -> &'static str {
        "backtrack"
    }

    fn prepare(&mut self, instance: &ProblemInstance, z0: &[Complex64]) -> Result<f64> {
        // Start at the edge of the stable range of the quadratic model.
        self.t = 2.0 * auto_step_size(instance, z0, 0.5)?;
        Ok(self.t)
    }

    fn step(
        &mut self,
        instance: &ProblemInstance,
        z: &[Complex64],
        loss: f64,
        grad: &[Complex64],
    ) -> StepOutcome {
        let g2 = linalg::norm_sqr(grad);
        let mut t = self.t / self.shrink;
        for _ in 0..Self::MAX_HALVINGS {
            let candidate = linalg::axpy(z, -t, grad);
            let f_new = objective::loss_unchecked(instance, &candidate);
            if f_new.is_finite() && f_new <= loss - 2.0 * self.c_armijo * t * g2 && f_new <= loss {
                self.t = t;
                return StepOutcome::Moved { z: candidate, mu: t };
            }
            t *= self.shrink;
        }
        StepOutcome::Stalled
    }
}

type Builder = fn(&[f64]) -> Result<Box<dyn StepRule>>;

struct Entry {
    usage: &'static str,
    build: Builder,
}

/// Name → constructor table for step rules.
pub struct StepRegistry {
    entries: BTreeMap<String, Entry>,
}

impl StepRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("fixed", "fixed:<mu>", |args| match args {
            [mu] => Ok(Box::new(FixedStep::new(*mu)?)),
            _ => Err(Error::invalid("fixed step needs exactly one argument: fixed:<mu>")),
        });
        reg.register("auto", "auto[:safety]", |args| match args {
            [] => Ok(Box::new(CurvatureStep::new(CurvatureStep::DEFAULT_SAFETY)?)),
            [s] => Ok(Box::new(CurvatureStep::new(*s)?)),
            _ => Err(Error::invalid("auto step takes at most one argument")),
        });
        reg.register("backtrack", "backtrack[:shrink[:c_armijo]]", |args| {
            let shrink = args.first().copied().unwrap_or(Backtracking::DEFAULT_SHRINK);
            let c = args.get(1).copied().unwrap_or(Backtracking::DEFAULT_ARMIJO);
            if args.len() > 2 {
                return Err(Error::invalid("backtrack takes at most two arguments"));
            }
            Ok(Box::new(Backtracking::new(shrink, c)?))
        });
        reg
    }

    /// Shared registry holding the built-in rules.
    pub fn builtin() -> &'static StepRegistry {
        static REG: OnceLock<StepRegistry> = OnceLock::new();
        REG.get_or_init(StepRegistry::with_builtins)
    }

    pub fn register(&mut self, name: &str, usage: &'static str, build: Builder) {
        self.entries.insert(name.to_string(), Entry { usage, build });
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn usage(&self) -> String {
        self.entries
            .values()
            .map(|e| e.usage)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn build(&self, spec: &StepSpec) -> Result<Box<dyn StepRule>> {
        let entry = self.entries.get(&spec.name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown step rule '{}', expected one of {}",
                spec.name,
                self.usage()
            ))
        })?;
        (entry.build)(&spec.args)
    }
}

/// Parsed `name[:arg...]` step specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StepSpec {
    name: String,
    args: Vec<f64>,
}

impl StepSpec {
    pub fn fixed(mu: f64) -> Self {
        Self {
            name: "fixed".into(),
            args: vec![mu],
        }
    }

    pub fn auto(safety: f64) -> Self {
        Self {
            name: "auto".into(),
            args: vec![safety],
        }
    }

    pub fn backtracking(shrink: f64, c_armijo: f64) -> Self {
        Self {
            name: "backtrack".into(),
            args: vec![shrink, c_armijo],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn args(&self) -> &[f64] {
        &self.args
    }

    /// Builds the rule from the built-in registry.
    pub fn build(&self) -> Result<Box<dyn StepRule>> {
        StepRegistry::builtin().build(self)
    }
}

impl Default for StepSpec {
    fn default() -> Self {
        Self {
            name: "auto".into(),
            args: Vec::new(),
        }
    }
}

impl FromStr for StepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_string();
        if name.is_empty() {
            return Err(Error::invalid("empty step specification"));
        }
        let args = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad step argument '{p}' in '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name, args })
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for a in &self.args {
            write!(f, ":{a}")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for StepSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StepSpec> for String {
    fn from(s: StepSpec) -> String {
        s.to_string()
    }
}
