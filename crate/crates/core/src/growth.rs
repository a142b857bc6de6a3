//! Nondecreasing integer functions `K` with `K(n) ≥ n`, evaluated over big
//! integers under a digit budget, and their iterates `Kᵉ(1)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{decimal_digits, decimal_digits_upper};

pub const DEFAULT_DIGIT_BUDGET: u64 = 1_000_000;

/// Largest number of decimal digits a single evaluation may produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitBudget {
    pub max_digits: u64,
}

impl Default for DigitBudget {
    fn default() -> Self {
        DigitBudget {
            max_digits: DEFAULT_DIGIT_BUDGET,
        }
    }
}

impl DigitBudget {
    pub fn new(max_digits: u64) -> Self {
        DigitBudget { max_digits }
    }

    pub fn admits(&self, x: &BigUint) -> bool {
        decimal_digits_upper(x) <= self.max_digits || decimal_digits(x) <= self.max_digits
    }

    pub fn check(&self, x: BigUint) -> Result<BigUint> {
        if self.admits(&x) {
            Ok(x)
        } else {
            Err(self.exceeded())
        }
    }

    pub(crate) fn exceeded(&self) -> Error {
        Error::DigitBudgetExceeded {
            budget: self.max_digits,
            iterations: 0,
        }
    }

    /// Rejects a result whose digit count is known to exceed the budget
    /// before computing it.
    fn precheck(&self, estimated_digits: f64) -> Result<()> {
        if estimated_digits > self.max_digits as f64 + 1.0 {
            Err(self.exceeded())
        } else {
            Ok(())
        }
    }
}

type CustomFn = dyn Fn(&BigUint, &DigitBudget) -> Result<BigUint> + Send + Sync;

#[derive(Clone)]
enum Repr {
    Identity,
    Shift(BigUint),
    Affine { c: BigUint, d: BigUint },
    Polynomial(u32),
    Exponential(BigUint),
    Table(Arc<Vec<BigUint>>),
    Custom { name: String, f: Arc<CustomFn> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthFamily {
    Identity,
    Shift,
    Affine,
    Polynomial,
    Exponential,
    Table,
    Custom,
}

#[derive(Clone)]
pub struct GrowthFunction {
    repr: Repr,
}

impl fmt::Debug for GrowthFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrowthFunction({})", self.describe())
    }
}

impl GrowthFunction {
    pub fn identity() -> Self {
        GrowthFunction {
            repr: Repr::Identity,
        }
    }

    /// `n ↦ n + c`
    pub fn shift(c: impl Into<BigUint>) -> Self {
        GrowthFunction {
            repr: Repr::Shift(c.into()),
        }
    }

    /// `n ↦ c·n + d`, `c ≥ 1`
    pub fn affine(c: impl Into<BigUint>, d: impl Into<BigUint>) -> Result<Self> {
        let c = c.into();
        if c.is_zero() {
            return Err(Error::invalid("affine slope must be at least 1"));
        }
        Ok(GrowthFunction {
            repr: Repr::Affine { c, d: d.into() },
        })
    }

    /// `n ↦ n^degree`, `degree ≥ 1`
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        Ok(GrowthFunction {
            repr: Repr::Polynomial(degree),
        })
    }

    /// `n ↦ base^n`, `base ≥ 2`
    pub fn exponential(base: impl Into<BigUint>) -> Result<Self> {
        let base = base.into();
        if base < BigUint::from(2u32) {
            return Err(Error::invalid("exponential base must be at least 2"));
        }
        Ok(GrowthFunction {
            repr: Repr::Exponential(base),
        })
    }

    /// `n ↦ values[n]`, defined on `0..values.len()`.
    pub fn table(values: Vec<BigUint>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("growth table is empty"));
        }
        for (n, v) in values.iter().enumerate() {
            if *v < BigUint::from(n) {
                return Err(Error::invalid(format!("table value K({n}) = {v} is below {n}")));
            }
            if n > 0 && *v < values[n - 1] {
                return Err(Error::invalid(format!("table decreases at {n}")));
            }
        }
        Ok(GrowthFunction {
            repr: Repr::Table(Arc::new(values)),
        })
    }

    /// Wraps a closure; call [`GrowthFunction::validate`] to probe it.
    pub fn custom<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&BigUint, &DigitBudget) -> Result<BigUint> + Send + Sync + 'static,
    {
        GrowthFunction {
            repr: Repr::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
        }
    }

    pub fn family(&self) -> GrowthFamily {
        match self.repr {
            Repr::Identity => GrowthFamily::Identity,
            Repr::Shift(_) => GrowthFamily::Shift,
            Repr::Affine { .. } => GrowthFamily::Affine,
            Repr::Polynomial(_) => GrowthFamily::Polynomial,
            Repr::Exponential(_) => GrowthFamily::Exponential,
            Repr::Table(_) => GrowthFamily::Table,
            Repr::Custom { .. } => GrowthFamily::Custom,
        }
    }

    pub fn is_identity(&self) -> bool {
        match &self.repr {
            Repr::Identity => true,
            Repr::Shift(c) => c.is_zero(),
            Repr::Affine { c, d } => c.is_one() && d.is_zero(),
            Repr::Polynomial(k) => *k == 1,
            _ => false,
        }
    }

    pub fn describe(&self) -> String {
        match &self.repr {
            Repr::Identity => "n".into(),
            Repr::Shift(c) => format!("n + {c}"),
            Repr::Affine { c, d } if d.is_zero() => format!("{c}n"),
            Repr::Affine { c, d } => format!("{c}n + {d}"),
            Repr::Polynomial(k) => format!("n^{k}"),
            Repr::Exponential(b) => format!("{b}^n"),
            Repr::Table(v) => format!("table of {} values", v.len()),
            Repr::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, n: &BigUint, budget: &DigitBudget) -> Result<BigUint> {
        let out = match &self.repr {
            Repr::Identity => n.clone(),
            Repr::Shift(c) => n + c,
            Repr::Affine { c, d } => c * n + d,
            Repr::Polynomial(k) => {
                budget.precheck(*k as f64 * (n.bits().saturating_sub(1)) as f64 * std::f64::consts::LOG10_2)?;
                num_traits::pow(n.clone(), *k as usize)
            }
            Repr::Exponential(b) => {
                let lower_digits = b.bits().saturating_sub(1) as f64 * std::f64::consts::LOG10_2;
                let exp = match n.to_u64() {
                    Some(e) => e,
                    None => return Err(budget.exceeded()),
                };
                budget.precheck(exp as f64 * lower_digits)?;
                b.pow(u32::try_from(exp).map_err(|_| budget.exceeded())?)
            }
            Repr::Table(values) => n
                .to_usize()
                .and_then(|i| values.get(i))
                .cloned()
                .ok_or_else(|| Error::OutOfDomain(format!("{n} (table has {} values)", values.len())))?,
            Repr::Custom { f, .. } => f(n, budget)?,
        };
        budget.check(out)
    }

    /// `K(n)` as a machine integer, or `None` if it does not fit.
    pub fn eval_u64(&self, n: u64) -> Result<Option<u64>> {
        match &self.repr {
            Repr::Identity => return Ok(Some(n)),
            Repr::Shift(c) => return Ok(c.to_u64().and_then(|c| n.checked_add(c))),
            Repr::Affine { c, d } => {
                return Ok(c
                    .to_u64()
                    .zip(d.to_u64())
                    .and_then(|(c, d)| c.checked_mul(n)?.checked_add(d)))
            }
            Repr::Polynomial(k) => return Ok(n.checked_pow(*k)),
            _ => {}
        }
        match self.eval(&BigUint::from(n), &DigitBudget::new(21)) {
            Ok(v) => Ok(v.to_u64()),
            Err(Error::DigitBudgetExceeded { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn eval_usize(&self, n: usize) -> Result<Option<usize>> {
        Ok(self.eval_u64(n as u64)?.and_then(|v| usize::try_from(v).ok()))
    }

    /// Checks `K(n) ≥ n` and monotonicity for `n = 0..=probes`.
    pub fn validate(&self, probes: u64, budget: &DigitBudget) -> Result<()> {
        let mut prev: Option<BigUint> = None;
        for n in 0..=probes {
            let nb = BigUint::from(n);
            let v = match self.eval(&nb, budget) {
                Ok(v) => v,
                Err(Error::OutOfDomain(_)) => break,
                Err(e) => return Err(e),
            };
            if v < nb {
                return Err(Error::invalid(format!("{}: K({n}) = {v} < {n}", self.describe())));
            }
            if let Some(p) = &prev {
                if v < *p {
                    return Err(Error::invalid(format!("{}: decreases at {n}", self.describe())));
                }
            }
            prev = Some(v);
        }
        Ok(())
    }

    /// Runs `x ↦ K(x)` from `start`, `times` times.
    pub fn iterate(&self, start: &BigUint, times: &BigUint, budget: &DigitBudget) -> IterationRun {
        let mut x = start.clone();
        let mut done = BigUint::zero();
        while done < *times {
            match self.eval(&x, budget) {
                Ok(next) => {
                    done += 1u32;
                    if next == x {
                        return IterationRun {
                            value: x,
                            completed: times.clone(),
                            fixed_point_at: Some(done),
                            status: IterationStatus::Complete,
                        };
                    }
                    x = next;
                }
                Err(Error::DigitBudgetExceeded { budget, .. }) => {
                    return IterationRun {
                        value: x,
                        completed: done,
                        fixed_point_at: None,
                        status: IterationStatus::BudgetExceeded { budget },
                    }
                }
                Err(e) => {
                    return IterationRun {
                        value: x,
                        completed: done,
                        fixed_point_at: None,
                        status: IterationStatus::Failed(e.to_string()),
                    }
                }
            }
        }
        IterationRun {
            value: x,
            completed: done,
            fixed_point_at: None,
            status: IterationStatus::Complete,
        }
    }

    /// `Kᵉ(1)`.
    pub fn iterate_from_one(&self, times: &BigUint, budget: &DigitBudget) -> Result<BigUint> {
        self.iterate(&BigUint::one(), times, budget).into_result()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IterationStatus {
    Complete,
    BudgetExceeded { budget: u64 },
    Failed(String),
}

/// Outcome of an iteration; on exhaustion `value` is the last admissible
/// iterate and `completed` counts the applications that succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationRun {
    pub value: BigUint,
    pub completed: BigUint,
    /// Iteration at which `K(x) = x` ended the loop early.
    pub fixed_point_at: Option<BigUint>,
    pub status: IterationStatus,
}

impl IterationRun {
    pub fn is_complete(&self) -> bool {
        self.status == IterationStatus::Complete
    }

    pub fn into_result(self) -> Result<BigUint> {
        match self.status {
            IterationStatus::Complete => Ok(self.value),
            IterationStatus::BudgetExceeded { budget } => Err(Error::DigitBudgetExceeded {
                budget,
                iterations: self.completed.to_u64().unwrap_or(u64::MAX),
            }),
            IterationStatus::Failed(msg) => Err(Error::invalid(msg)),
        }
    }
}

/// Serializable description of a growth function, as used in configs.
///
/// Also parses from short strings: `identity`, `n+5`, `2n`, `3n+1`, `n^2`,
/// `2^n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthSpec {
    Identity,
    Shift { c: u64 },
    Affine { c: u64, d: u64 },
    Polynomial { degree: u32 },
    Exponential { base: u64 },
    Table { values: Vec<u64> },
}

impl GrowthSpec {
    pub fn build(&self) -> Result<GrowthFunction> {
        match self {
            GrowthSpec::Identity => Ok(GrowthFunction::identity()),
            GrowthSpec::Shift { c } => Ok(GrowthFunction::shift(*c)),
            GrowthSpec::Affine { c, d } => GrowthFunction::affine(*c, *d),
            GrowthSpec::Polynomial { degree } => GrowthFunction::polynomial(*degree),
            GrowthSpec::Exponential { base } => GrowthFunction::exponential(*base),
            GrowthSpec::Table { values } => {
                GrowthFunction::table(values.iter().map(|&v| BigUint::from(v)).collect())
            }
        }
    }
}

impl FromStr for GrowthSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let s = s.to_ascii_lowercase();
        let bad = || Error::invalid(format!("unrecognized growth function {text:?}"));
        let num = |t: &str| t.parse::<u64>().map_err(|_| bad());
        if s == "identity" || s == "id" || s == "n" {
            return Ok(GrowthSpec::Identity);
        }
        if let Some(rest) = s.strip_prefix("n+") {
            return Ok(GrowthSpec::Shift { c: num(rest)? });
        }
        if let Some(rest) = s.strip_prefix("n^") {
            return Ok(GrowthSpec::Polynomial {
                degree: rest.parse().map_err(|_| bad())?,
            });
        }
        if let Some(base) = s.strip_suffix("^n") {
            return Ok(GrowthSpec::Exponential { base: num(base)? });
        }
        if let Some((c, d)) = s.split_once("n+") {
            return Ok(GrowthSpec::Affine {
                c: if c.is_empty() { 1 } else { num(c.trim_end_matches('*'))? },
                d: num(d)?,
            });
        }
        if let Some(c) = s.strip_suffix('n') {
            return Ok(GrowthSpec::Affine {
                c: num(c.trim_end_matches('*'))?,
                d: 0,
            });
        }
        Err(bad())
    }
}

/// Accepts either the tagged object form or the short string form.
pub fn deserialize_growth_spec<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<GrowthSpec, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Text(String),
        Spec(GrowthSpec),
    }
    match Either::deserialize(d)? {
        Either::Text(t) => t.parse().map_err(serde::de::Error::custom),
        Either::Spec(s) => Ok(s),
    }
}
