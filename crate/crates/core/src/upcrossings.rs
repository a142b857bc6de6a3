//! Crossing and fluctuation counts along average trajectories, and the bounds
//! they give for the mean and pointwise stability witnesses.
//!
//! Counts use a greedy scan: wait for a value below `α`, then for one above
//! `β`, count, and repeat. Taking the earliest transition each time is
//! optimal, so the greedy count is the maximal alternation count. Any finite
//! horizon only undercounts, which keeps every inequality check sound.

use std::io::Write;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::growth::{DigitBudget, GrowthFunction, IterationRun};
use crate::hilbert::{averages_prefix, Element, Operator};
use crate::mean_bounds::{met_bound, BoundMode, MeanBoundParams};
use crate::pointwise::{exceptional_measure, pet_bound, DeviationReport, OrbitSums, PointwiseParams};
use crate::scalar::{ceil_to_biguint, decimal_digits, scalar_text, Scalar};

fn check_interval<S: Scalar>(alpha: &S, beta: &S) -> Result<()> {
    if alpha < beta {
        Ok(())
    } else {
        Err(Error::invalid("need alpha < beta"))
    }
}

/// Number of passes from a value `< α` to a later value `> β`.
pub fn count_upcrossings<S: PartialOrd>(series: &[S], alpha: &S, beta: &S) -> usize {
    let mut below = false;
    let mut count = 0;
    for x in series {
        if !below {
            below = x < alpha;
        } else if x > beta {
            count += 1;
            below = false;
        }
    }
    count
}

/// Number of passes from a value `> β` to a later value `< α`.
pub fn count_downcrossings<S: PartialOrd>(series: &[S], alpha: &S, beta: &S) -> usize {
    let mut above = false;
    let mut count = 0;
    for x in series {
        if !above {
            above = x > beta;
        } else if x < alpha {
            count += 1;
            above = false;
        }
    }
    count
}

/// Up- plus downcrossings of `[α, β]` by `series[start..=end]`, ignoring any
/// crossing that began before `start`.
pub fn window_crossings<S: PartialOrd>(series: &[S], alpha: &S, beta: &S, start: usize, end: usize) -> usize {
    let end = end.min(series.len().saturating_sub(1));
    if start > end {
        return 0;
    }
    let window = &series[start..=end];
    count_upcrossings(window, alpha, beta) + count_downcrossings(window, alpha, beta)
}

/// Crossing counts of `n ↦ Aₙf(x)`, `1 ≤ n ≤ N`, for every atom.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingProfile<S> {
    pub alpha: S,
    pub beta: S,
    pub horizon: usize,
    pub weights: Vec<S>,
    pub up: Vec<usize>,
    pub down: Vec<usize>,
}

impl<S: Scalar> CrossingProfile<S> {
    /// `∫ ω↑ dμ` over the horizon.
    pub fn mean_upcrossings(&self) -> S {
        self.weights
            .iter()
            .zip(&self.up)
            .fold(S::zero(), |acc, (w, &c)| acc + w.clone() * S::from_usize(c))
    }

    /// Measure of the atoms with at least `k` downcrossings.
    pub fn downcrossing_measure(&self, k: usize) -> S {
        self.weights
            .iter()
            .zip(&self.down)
            .filter(|(_, &c)| c >= k)
            .fold(S::zero(), |acc, (w, _)| acc + w.clone())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["atom", "weight", "up", "down"])?;
        for (x, ((wt, up), down)) in self.weights.iter().zip(&self.up).zip(&self.down).enumerate() {
            w.write_record([x.to_string(), scalar_text(wt), up.to_string(), down.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trajectory `(A₁f(x), …, A_Nf(x))` of every atom.
pub fn pointwise_trajectories<S: Scalar>(op: &Operator<S>, f: &Element<S>, horizon: usize) -> Result<Vec<Vec<S>>> {
    let mut orbit = OrbitSums::new(op, f)?;
    orbit.extend_to(horizon)?;
    Ok((0..orbit.atoms())
        .map(|x| (1..=horizon).map(|m| orbit.average(m, x)).collect())
        .collect())
}

pub fn crossing_profile<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    alpha: &S,
    beta: &S,
    horizon: usize,
) -> Result<CrossingProfile<S>> {
    check_interval(alpha, beta)?;
    let paths = pointwise_trajectories(op, f, horizon)?;
    Ok(CrossingProfile {
        alpha: alpha.clone(),
        beta: beta.clone(),
        horizon,
        weights: f.space().weights().to_vec(),
        up: paths.iter().map(|p| count_upcrossings(p, alpha, beta)).collect(),
        down: paths.iter().map(|p| count_downcrossings(p, alpha, beta)).collect(),
    })
}

/// `lhs = ∫ ω_{α,β} dμ` and `rhs = ∫ (f − α)⁺ dμ / (β − α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BishopCheck<S> {
    pub lhs: S,
    pub rhs: S,
    pub horizon: usize,
    pub holds: bool,
}

pub fn bishop_check<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    alpha: &S,
    beta: &S,
    horizon: usize,
) -> Result<BishopCheck<S>> {
    let profile = crossing_profile(op, f, alpha, beta, horizon)?;
    let lhs = profile.mean_upcrossings();
    let excess = f.map_coords(|x| {
        let d = x.clone() - alpha.clone();
        if d > S::zero() {
            d
        } else {
            S::zero()
        }
    });
    let rhs = excess.integral() / (beta.clone() - alpha.clone());
    let holds = lhs <= rhs.clone() + S::slack();
    Ok(BishopCheck {
        lhs,
        rhs,
        horizon,
        holds,
    })
}

/// Measure of the atoms with at least `k` downcrossings, against `(α/β)ᵏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvanovCheck<S> {
    pub measure: S,
    pub bound: S,
    pub k: usize,
    pub horizon: usize,
    pub holds: bool,
}

pub fn ivanov_check<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    alpha: &S,
    beta: &S,
    k: usize,
    horizon: usize,
) -> Result<IvanovCheck<S>> {
    if !(*alpha > S::zero()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if f.coords().iter().any(|x| *x < S::zero()) {
        return Err(Error::invalid("f must be nonnegative"));
    }
    let profile = crossing_profile(op, f, alpha, beta, horizon)?;
    let measure = profile.downcrossing_measure(k);
    let ratio = alpha.clone() / beta.clone();
    let bound = (0..k).fold(S::one(), |acc, _| acc * ratio.clone());
    let holds = measure <= bound.clone() + S::slack();
    Ok(IvanovCheck {
        measure,
        bound,
        k,
        horizon,
        holds,
    })
}

/// Pairs `m₁ < n₁ ≤ m₂ < n₂ ≤ …` (1-based average indices) whose values
/// are at least `ε` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationProfile<S> {
    pub eps: S,
    pub horizon: usize,
    pub count: usize,
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy earliest-end selection over `0..len`; `far(m, n)` says whether the
/// values at `m < n` are at least `ε` apart. Returns 0-based pairs.
fn greedy_fluctuations(len: usize, mut far: impl FnMut(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut start = 0;
    'outer: while start < len {
        for n in start + 1..len {
            if let Some(m) = (start..n).find(|&m| far(m, n)) {
                pairs.push((m, n));
                start = n;
                continue 'outer;
            }
        }
        break;
    }
    pairs
}

/// `ε`-fluctuations of a real sequence.
pub fn count_series_fluctuations<S: Scalar>(series: &[S], eps: &S) -> Vec<(usize, usize)> {
    greedy_fluctuations(series.len(), |m, n| {
        (series[m].clone() - series[n].clone()).abs() >= eps.clone() - S::slack()
    })
}

/// `ε`-fluctuations of `(Aₙf)` in the L² norm over `1 ≤ n ≤ N`.
pub fn count_fluctuations<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    eps: &S,
    horizon: usize,
) -> Result<FluctuationProfile<S>> {
    if !(*eps > S::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let averages = averages_prefix(op, f, horizon)?;
    let eps_sq = eps.clone() * eps.clone();
    let pairs: Vec<(usize, usize)> = greedy_fluctuations(averages.len(), |m, n| {
        let d = averages[n].sub(&averages[m]).expect("averages share a space");
        d.norm_sq() >= eps_sq.clone() - S::slack()
    })
    .into_iter()
    .map(|(m, n)| (m + 1, n + 1))
    .collect();
    Ok(FluctuationProfile {
        eps: eps.clone(),
        horizon,
        count: pairs.len(),
        pairs,
    })
}

/// `Kᵉ(1)` with `e = ⌈16‖f‖∞²/(λ₁²λ₂)⌉`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BishopBound {
    pub e: BigUint,
    pub step: String,
    pub run: IterationRun,
}

impl BishopBound {
    pub fn value(&self) -> Option<&BigUint> {
        self.run.is_complete().then_some(&self.run.value)
    }
}

pub fn bishop_iterations(norm_inf: &BigRational, lambda1: &BigRational, lambda2: &BigRational) -> Result<BigUint> {
    if *lambda1 <= BigRational::zero() || *lambda2 <= BigRational::zero() {
        return Err(Error::invalid("lambda1 and lambda2 must be positive"));
    }
    let e = ceil_to_biguint(&(BigRational::from_integer(16.into()) * norm_inf * norm_inf / (lambda1 * lambda1 * lambda2)))?;
    Ok(e)
}

pub fn bishop_pet_bound(
    norm_inf: &BigRational,
    lambda1: &BigRational,
    lambda2: &BigRational,
    k: &GrowthFunction,
    budget: &DigitBudget,
) -> Result<BishopBound> {
    let e = bishop_iterations(norm_inf, lambda1, lambda2)?;
    let run = k.iterate(&BigUint::one(), &e, budget);
    Ok(BishopBound {
        e,
        step: k.describe(),
        run,
    })
}

/// Checks `n = Kⁱ(1)`, `i = 0..=e`, over the windows `[Kⁱ(1), Kⁱ⁺¹(1)]`; the
/// crossing argument guarantees one of them has exceptional measure `≤ λ₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct BishopWindowSearch<S> {
    pub e: BigUint,
    pub reports: Vec<DeviationReport<S>>,
    pub witness: Option<usize>,
    /// The next window no longer fit in memory.
    pub truncated: bool,
}

pub fn bishop_window_search<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    lambda1: &BigRational,
    lambda2: &BigRational,
    k: &GrowthFunction,
) -> Result<BishopWindowSearch<S>> {
    let norm_inf = f
        .norm_inf()
        .to_rational()
        .ok_or_else(|| Error::invalid("non-finite sup norm"))?;
    let e = bishop_iterations(&norm_inf, lambda1, lambda2)?;
    let l1 = S::from_rational(lambda1);
    let l2 = S::from_rational(lambda2);
    let steps = e.to_usize().unwrap_or(usize::MAX);
    let mut reports = Vec::new();
    let mut witness = None;
    let mut truncated = false;
    let mut n = 1usize;
    for i in 0..=steps {
        let end = match k.eval_usize(n)? {
            Some(end) if end.saturating_add(1).saturating_mul(f.dim()) <= crate::pointwise::ORBIT_STORAGE_LIMIT => end,
            _ => {
                truncated = true;
                break;
            }
        };
        let report = exceptional_measure(op, f, n, end, &l1)?;
        let ok = report.exceptional_measure <= l2.clone() + S::slack();
        reports.push(report);
        if ok {
            witness = Some(i);
            break;
        }
        n = end.max(n);
    }
    Ok(BishopWindowSearch {
        e,
        reports,
        witness,
        truncated,
    })
}

/// Caller-chosen constant in the fluctuation bound when none is given. The
/// true constant is not explicit, so bounds computed with it are indicative.
pub const DEFAULT_KACHUROVSKII_CONSTANT: f64 = 1.0;

/// `C·r⁴·(1 + ln r)` with `r = ‖f‖∞/ε`; `C` when `r < 1`.
pub fn kachurovskii_bound(norm_inf: f64, eps: f64, c: f64) -> Result<f64> {
    if !(eps > 0.0) || !(c > 0.0) || !norm_inf.is_finite() || norm_inf < 0.0 {
        return Err(Error::invalid("need eps > 0, C > 0 and a finite sup norm"));
    }
    let r = norm_inf / eps;
    if r < 1.0 {
        return Ok(c);
    }
    Ok(c * r.powi(4) * (1.0 + r.ln()))
}

/// `K^⌈k⌉(1)` for a fluctuation bound `k`.
pub fn kachurovskii_mean_bound(fluctuations: f64, k: &GrowthFunction, budget: &DigitBudget) -> Result<IterationRun> {
    let times = fluctuation_iterations(fluctuations)?;
    Ok(k.iterate(&BigUint::one(), &times, budget))
}

fn fluctuation_iterations(fluctuations: f64) -> Result<BigUint> {
    let q = BigRational::from_float(fluctuations)
        .filter(|q| *q >= BigRational::zero())
        .ok_or_else(|| Error::invalid("fluctuation bound must be finite and nonnegative"))?;
    ceil_to_biguint(&q)
}

/// One row of the bound comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: &'static str,
    pub iterations: BigUint,
    pub step: String,
    pub bound: Option<BigUint>,
    pub bound_digits: Option<u64>,
}

impl ComparisonRow {
    fn new(method: &'static str, iterations: BigUint, step: String, run: IterationRun) -> Self {
        let bound = run.is_complete().then_some(run.value);
        ComparisonRow {
            method,
            iterations,
            step,
            bound_digits: bound.as_ref().map(decimal_digits),
            bound,
        }
    }
}

/// Inputs for [`compare_bounds`]. The mean rows appear when `eps` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonInput {
    pub norm_sq: BigRational,
    pub norm_inf: BigRational,
    pub lambda1: BigRational,
    pub lambda2: BigRational,
    pub eps: Option<BigRational>,
    pub kachurovskii_constant: f64,
    pub mode: BoundMode,
}

/// Pointwise bounds from the mean-ergodic route and from upcrossings, and
/// optionally the mean bounds from projections and from fluctuations.
pub fn compare_bounds(input: &ComparisonInput, k: &GrowthFunction, budget: &DigitBudget) -> Result<Vec<ComparisonRow>> {
    let params = PointwiseParams::from_norm_sq(input.norm_sq.clone(), input.lambda1.clone(), input.lambda2.clone())?;
    let pet = pet_bound(&params, k, budget);
    let bishop = bishop_pet_bound(&input.norm_inf, &input.lambda1, &input.lambda2, k, budget)?;
    let mut rows = vec![
        ComparisonRow::new("pointwise_projection", params.e.clone(), pet.step, pet.run),
        ComparisonRow::new("pointwise_upcrossing", bishop.e, bishop.step, bishop.run),
    ];
    if let Some(eps) = &input.eps {
        let params = MeanBoundParams::from_norm_sq(input.norm_sq.clone(), eps.clone(), input.mode)?;
        let met = met_bound(&params, k, budget);
        rows.push(ComparisonRow::new("mean_projection", params.e.clone(), met.step, met.run));
        let norm_inf = Scalar::to_f64(&input.norm_inf);
        let flucts = kachurovskii_bound(norm_inf, Scalar::to_f64(eps), input.kachurovskii_constant)?;
        let run = kachurovskii_mean_bound(flucts, k, budget)?;
        let iterations = fluctuation_iterations(flucts)?;
        rows.push(ComparisonRow::new("mean_fluctuation", iterations, k.describe(), run));
    }
    Ok(rows)
}
