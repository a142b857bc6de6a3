//! Experiment configs: a JSON file per job, with command-line flags layered on top.

use std::path::{Path, PathBuf};

use ergodic_core::computable::HaltingTable;
use ergodic_core::growth::{deserialize_growth_spec, DigitBudget, GrowthFunction, GrowthSpec, DEFAULT_DIGIT_BUDGET};
use ergodic_core::mean_bounds::BoundMode;
use ergodic_core::operators::{FunctionPattern, System, SystemRecipe};
use ergodic_core::{Element, Error, Rational, Result, Scalar, ScalarRepr};
use serde::{Deserialize, Deserializer, Serialize};

/// Environment variable that replaces the default digit budget.
pub const DIGIT_BUDGET_ENV: &str = "ES_DIGIT_BUDGET";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    F64,
    Rational,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

/// `f` as explicit coordinates (numbers, `"p/q"` strings or `{num, den}`
/// objects) or as a named pattern.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FunctionInput {
    Values(Vec<ScalarRepr>),
    Pattern(FunctionPattern),
}

impl FunctionInput {
    pub fn build<S: Scalar>(&self, system: &System<S>) -> Result<Element<S>> {
        match self {
            FunctionInput::Values(values) => {
                let coords = values.iter().map(|v| v.to_scalar()).collect::<Result<Vec<S>>>()?;
                Element::new(system.space.clone(), coords)
            }
            FunctionInput::Pattern(p) => p.build(&system.space),
        }
    }
}

/// Every parameter any command reads. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: Option<SystemRecipe>,
    pub f: Option<FunctionInput>,
    pub scalar: Option<ScalarKind>,
    pub eps: Option<ScalarRepr>,
    pub lambda: Option<ScalarRepr>,
    pub lambda1: Option<ScalarRepr>,
    pub lambda2: Option<ScalarRepr>,
    #[serde(rename = "K", alias = "growth", default, deserialize_with = "optional_growth")]
    pub growth: Option<GrowthSpec>,
    pub horizon: Option<usize>,
    pub n: Option<usize>,
    pub alpha: Option<ScalarRepr>,
    pub beta: Option<ScalarRepr>,
    pub downcrossings: Option<usize>,
    pub norm_f: Option<ScalarRepr>,
    pub norm_inf: Option<ScalarRepr>,
    pub norm_fstar: Option<ScalarRepr>,
    pub mode: Option<BoundMode>,
    pub table: Option<HaltingTable>,
    #[serde(rename = "N")]
    pub blocks: Option<usize>,
    pub trace_cap: Option<usize>,
    pub probe_limit: Option<usize>,
    pub kachurovskii_constant: Option<f64>,
    pub digit_budget: Option<u64>,
    pub output: Option<OutputSpec>,
}

fn optional_growth<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<GrowthSpec>, D::Error> {
    deserialize_growth_spec(d).map(Some)
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field; } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("config {}: {e}", path.display()))
        })
    }

    /// Fields set in `other` replace the ones here.
    pub fn overlay(&mut self, other: ExperimentConfig) {
        overlay!(self, other; system, f, scalar, eps, lambda, lambda1, lambda2, growth, horizon, n,
            alpha, beta, downcrossings, norm_f, norm_inf, norm_fstar, mode, table, blocks,
            trace_cap, probe_limit, kachurovskii_constant, digit_budget, output);
    }

    /// Explicit value, else `ES_DIGIT_BUDGET`, else the library default.
    pub fn budget(&self) -> Result<DigitBudget> {
        if let Some(d) = self.digit_budget {
            return Ok(DigitBudget::new(d));
        }
        match std::env::var(DIGIT_BUDGET_ENV) {
            Ok(text) => text
                .trim()
                .parse()
                .map(DigitBudget::new)
                .map_err(|_| Error::InvalidArgument(format!("{DIGIT_BUDGET_ENV}={text:?} is not a digit count"))),
            Err(_) => Ok(DigitBudget::new(DEFAULT_DIGIT_BUDGET)),
        }
    }

    pub fn system<S: Scalar>(&self) -> Result<System<S>> {
        require(self.system.as_ref(), "system")?.build()
    }

    pub fn element<S: Scalar>(&self, system: &System<S>) -> Result<Element<S>> {
        require(self.f.as_ref(), "f")?.build(system)
    }

    pub fn growth_fn(&self) -> Result<GrowthFunction> {
        let k = require(self.growth.as_ref(), "K")?.build()?;
        k.validate(64, &DigitBudget::default())?;
        Ok(k)
    }

    pub fn scalar_or(&self, default: ScalarKind) -> ScalarKind {
        self.scalar.unwrap_or(default)
    }
}

pub fn require<'a, T>(value: Option<&'a T>, name: &str) -> Result<&'a T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
}

pub fn scalar_value<S: Scalar>(value: Option<&ScalarRepr>, name: &str) -> Result<S> {
    require(value, name)?.to_scalar()
}

pub fn rational_value(value: Option<&ScalarRepr>, name: &str) -> Result<Rational> {
    require(value, name)?.to_rational()
}

/// A positive parameter.
pub fn positive(value: Option<&ScalarRepr>, name: &str) -> Result<Rational> {
    let q = rational_value(value, name)?;
    if q <= Rational::from_integer(0.into()) {
        return Err(Error::InvalidArgument(format!("`{name}` must be positive")));
    }
    Ok(q)
}
