//! Pointwise statements on atomized systems: the maximal inequality, the
//! Chebyshev and truncation bounds, and the search for `n` whose averages stay
//! within `λ₁` of `Aₙf` on all but a set of measure `λ₂`.
//!
//! Everything here needs a point map, so dense operators are rejected. With
//! rational weights every measure is an exact sum of atom weights.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::growth::{DigitBudget, GrowthFunction, IterationRun};
use crate::hilbert::{Element, Operator};
use crate::scalar::{biguint_to_rational, ceil_sqrt, ceil_to_biguint, Scalar};

/// Most orbit-sum coordinates kept in memory by one search.
pub const ORBIT_STORAGE_LIMIT: usize = 1 << 22;

fn pow2(k: u32) -> BigUint {
    BigUint::one() << k
}

fn exceeds<S: Scalar>(value: &S, threshold: &S) -> bool {
    *value > threshold.clone() + S::slack()
}

fn require_positive<S: Scalar>(x: &S, what: &str) -> Result<()> {
    if *x > S::zero() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be positive")))
    }
}

fn point_map<S: Scalar>(op: &Operator<S>, f: &Element<S>) -> Result<Vec<usize>> {
    if f.dim() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: f.dim(),
        });
    }
    op.point_map()
        .map(|m| m.as_slice().to_vec())
        .ok_or(Error::NotPointwise)
}

/// Birkhoff sums `Sₘ(x) = Σ_{j<m} f(τʲx)` for every atom, grown on demand.
#[derive(Debug, Clone)]
pub struct OrbitSums<S> {
    map: Vec<usize>,
    values: Vec<S>,
    positions: Vec<usize>,
    /// `sums[m][x] = Sₘ(x)`
    sums: Vec<Vec<S>>,
}

impl<S: Scalar> OrbitSums<S> {
    pub fn new(op: &Operator<S>, f: &Element<S>) -> Result<Self> {
        let map = point_map(op, f)?;
        let atoms = map.len();
        Ok(OrbitSums {
            map,
            values: f.coords().to_vec(),
            positions: (0..atoms).collect(),
            sums: vec![vec![S::zero(); atoms]],
        })
    }

    pub fn atoms(&self) -> usize {
        self.map.len()
    }

    /// Largest `m` with `Sₘ` available.
    pub fn len(&self) -> usize {
        self.sums.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend_to(&mut self, m: usize) -> Result<()> {
        if m.saturating_add(1).saturating_mul(self.atoms()) > ORBIT_STORAGE_LIMIT {
            return Err(Error::CapExceeded(format!(
                "orbit sums up to {m} on {} atoms exceed the storage limit",
                self.atoms()
            )));
        }
        while self.sums.len() <= m {
            let last = self.sums.last().expect("S_0 is always present");
            let next = last
                .iter()
                .zip(&self.positions)
                .map(|(s, &p)| s.clone() + self.values[p].clone())
                .collect();
            for p in &mut self.positions {
                *p = self.map[*p];
            }
            self.sums.push(next);
        }
        Ok(())
    }

    pub fn sum(&self, m: usize, atom: usize) -> &S {
        &self.sums[m][atom]
    }

    /// `Aₘf(x)`, for `m ≥ 1`.
    pub fn average(&self, m: usize, atom: usize) -> S {
        self.sums[m][atom].clone() / S::from_usize(m)
    }
}

/// The set where some partial sum is positive, and the integral of `f` over it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximalCheck<S> {
    pub set: Vec<usize>,
    pub measure: S,
    pub integral: S,
    /// `∫_A f ≥ 0`, up to the scalar slack.
    pub holds: bool,
}

/// A set `{x : max_{i≤n} Σ_{j<i} Tʲf(x) > 0}` and `∫_A f dμ`, which is never negative.
pub fn maximal_theorem_check<S: Scalar>(op: &Operator<S>, f: &Element<S>, n: usize) -> Result<MaximalCheck<S>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut orbit = OrbitSums::new(op, f)?;
    orbit.extend_to(n)?;
    let set: Vec<usize> = (0..orbit.atoms())
        .filter(|&x| (1..=n).any(|i| *orbit.sum(i, x) > S::zero()))
        .collect();
    let space = f.space();
    let integral = set
        .iter()
        .fold(S::zero(), |acc, &x| acc + space.weight(x).clone() * f.coords()[x].clone());
    let measure = space.measure_of(set.iter().copied());
    let holds = integral >= -S::slack();
    Ok(MaximalCheck {
        set,
        measure,
        integral,
        holds,
    })
}

/// A measured set together with the bound it must respect.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureBound<S> {
    pub measure: S,
    pub bound: S,
    pub holds: bool,
}

impl<S: Scalar> MeasureBound<S> {
    fn new(measure: S, bound: S) -> Self {
        let holds = measure <= bound.clone() + S::slack();
        MeasureBound { measure, bound, holds }
    }
}

/// `μ{x : max_{1≤i≤n} |Aᵢf(x)| > λ}` against `‖f‖₁/λ`.
pub fn maximal_set_measure<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    n: usize,
    lambda: &S,
) -> Result<MeasureBound<S>> {
    require_positive(lambda, "lambda")?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut orbit = OrbitSums::new(op, f)?;
    orbit.extend_to(n)?;
    let set = (0..orbit.atoms()).filter(|&x| (1..=n).any(|i| exceeds(&orbit.average(i, x).abs(), lambda)));
    let measure = f.space().measure_of(set);
    Ok(MeasureBound::new(measure, f.norm_l1() / lambda.clone()))
}

/// `μ{x : |f(x)| ≥ λ}` against `‖f‖₂²/λ²`.
pub fn chebyshev_measure<S: Scalar>(f: &Element<S>, lambda: &S) -> Result<MeasureBound<S>> {
    require_positive(lambda, "lambda")?;
    let set = (0..f.dim()).filter(|&x| f.coords()[x].abs() >= lambda.clone() - S::slack());
    let measure = f.space().measure_of(set);
    Ok(MeasureBound::new(measure, f.norm_sq() / (lambda.clone() * lambda.clone())))
}

/// `u = u′ + u″` with `u′` the part of `u` where `|u| ≤ L`.
#[derive(Debug, Clone)]
pub struct Split<S> {
    pub bounded: Element<S>,
    pub remainder: Element<S>,
    /// `‖u″‖₁`
    pub remainder_l1: S,
    /// `‖u‖₂²/L`
    pub bound: S,
    pub holds: bool,
}

pub fn split_function<S: Scalar>(u: &Element<S>, level: &S) -> Result<Split<S>> {
    require_positive(level, "truncation level")?;
    let bounded = u.map_coords(|x| if x.abs() <= *level { x.clone() } else { S::zero() });
    let remainder = u.map_coords(|x| if x.abs() <= *level { S::zero() } else { x.clone() });
    let remainder_l1 = remainder.norm_l1();
    let bound = u.norm_sq() / level.clone();
    let holds = remainder_l1 <= bound.clone() + S::slack();
    Ok(Split {
        bounded,
        remainder,
        remainder_l1,
        bound,
        holds,
    })
}

/// `ρ = ⌈‖f‖₂/(λ₁√λ₂)⌉` and the iteration count `e = ⌈2⁷‖f‖₂²/(λ₁√λ₂)⌉`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointwiseParams {
    pub norm_sq: BigRational,
    pub lambda1: BigRational,
    pub lambda2: BigRational,
    pub rho: BigUint,
    pub e: BigUint,
}

impl PointwiseParams {
    pub fn from_norm_sq(norm_sq: BigRational, lambda1: BigRational, lambda2: BigRational) -> Result<Self> {
        if norm_sq <= BigRational::zero() {
            return Err(Error::invalid("f must be nonzero"));
        }
        require_positive(&lambda1, "lambda1")?;
        require_positive(&lambda2, "lambda2")?;
        // Both ceilings have the form ⌈a/√b⌉ = ⌈√(a²/b)⌉ for positive a, b.
        let denom = &lambda1 * &lambda1 * &lambda2;
        let rho = ceil_sqrt(&(&norm_sq / &denom))?;
        let scaled = biguint_to_rational(&pow2(7)) * &norm_sq;
        let e = ceil_sqrt(&(&scaled * &scaled / &denom))?;
        Ok(PointwiseParams {
            norm_sq,
            lambda1,
            lambda2,
            rho,
            e,
        })
    }

    pub fn from_norm(norm: BigRational, lambda1: BigRational, lambda2: BigRational) -> Result<Self> {
        Self::from_norm_sq(&norm * &norm, lambda1, lambda2)
    }

    pub fn for_element<S: Scalar>(f: &Element<S>, lambda1: &BigRational, lambda2: &BigRational) -> Result<Self> {
        let norm_sq = f
            .norm_sq()
            .to_rational()
            .ok_or_else(|| Error::invalid("non-finite norm"))?;
        Self::from_norm_sq(norm_sq, lambda1.clone(), lambda2.clone())
    }
}

/// `K̂(i) = i + 2³⁴ρ⁶·K(2¹²·K(1)³·i²·ρ⁴)`.
pub fn khat_pointwise(k: &GrowthFunction, rho: &BigUint) -> GrowthFunction {
    let k = k.clone();
    let rho2 = rho * rho;
    let rho4 = &rho2 * &rho2;
    let lead = pow2(34) * &rho4 * &rho2;
    let name = format!("i + 2^34*{rho}^6*K(2^12*K(1)^3*i^2*{rho}^4), K(n) = {}", k.describe());
    GrowthFunction::custom(name, move |i, budget| {
        let k1 = k.eval(&BigUint::one(), budget)?;
        let arg = budget.check(pow2(12) * k1.pow(3) * i * i * &rho4)?;
        Ok(i + &lead * k.eval(&arg, budget)?)
    })
}

/// Window length `2³⁴k⁷ρ⁶` that controls the second term for averages up to `k`.
pub fn second_term_e(k: &BigUint, rho: &BigUint) -> BigUint {
    pow2(34) * k.pow(7) * rho.pow(6)
}

/// `K̂ᵉ(1)`, below which some `n` has a small exceptional set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PetBound {
    pub params: PointwiseParams,
    pub step: String,
    pub run: IterationRun,
}

impl PetBound {
    pub fn value(&self) -> Option<&BigUint> {
        self.run.is_complete().then_some(&self.run.value)
    }
}

pub fn pet_bound(params: &PointwiseParams, k: &GrowthFunction, budget: &DigitBudget) -> PetBound {
    let step = khat_pointwise(k, &params.rho);
    let run = step.iterate(&BigUint::one(), &params.e, budget);
    PetBound {
        params: params.clone(),
        step: step.describe(),
        run,
    }
}

/// Measure of the atoms where some `Aₘf`, `n ≤ m ≤ k`, differs from `Aₙf` by
/// more than `λ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport<S> {
    pub n: usize,
    pub k: usize,
    pub exceptional_measure: S,
    pub exceptional_atoms: Vec<usize>,
    pub threshold: S,
}

impl<S: Scalar> DeviationReport<S> {
    /// Recompute the measure from scratch on the same system.
    pub fn recompute(&self, op: &Operator<S>, f: &Element<S>) -> Result<DeviationReport<S>> {
        exceptional_measure(op, f, self.n, self.k, &self.threshold)
    }
}

fn deviation_report<S: Scalar>(
    orbit: &OrbitSums<S>,
    space_weights: &crate::hilbert::MeasureSpace<S>,
    n: usize,
    k: usize,
    lambda1: &S,
) -> DeviationReport<S> {
    let exceptional_atoms: Vec<usize> = (0..orbit.atoms())
        .filter(|&x| {
            let an = orbit.average(n, x);
            (n..=k).any(|m| exceeds(&(orbit.average(m, x) - an.clone()).abs(), lambda1))
        })
        .collect();
    DeviationReport {
        n,
        k,
        exceptional_measure: space_weights.measure_of(exceptional_atoms.iter().copied()),
        exceptional_atoms,
        threshold: lambda1.clone(),
    }
}

/// `μ{x : max_{n≤m≤k} |Aₘf(x) − Aₙf(x)| > λ₁}`.
pub fn exceptional_measure<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    n: usize,
    k: usize,
    lambda1: &S,
) -> Result<DeviationReport<S>> {
    require_positive(lambda1, "lambda1")?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut orbit = OrbitSums::new(op, f)?;
    orbit.extend_to(k.max(n))?;
    Ok(deviation_report(&orbit, f.space(), n, k.max(n), lambda1))
}

/// `μ{x : max_{n≤m≤k} (|Aₘh(x)| + |Aₙh(x)|) > λ}`, the quantity bounded for
/// the first, last and coboundary terms of the decomposition.
pub fn paired_window_measure<S: Scalar>(
    op: &Operator<S>,
    h: &Element<S>,
    n: usize,
    k: usize,
    lambda: &S,
) -> Result<S> {
    require_positive(lambda, "lambda")?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let k = k.max(n);
    let mut orbit = OrbitSums::new(op, h)?;
    orbit.extend_to(k)?;
    let set = (0..orbit.atoms()).filter(|&x| {
        let an = orbit.average(n, x).abs();
        (n..=k).any(|m| exceeds(&(orbit.average(m, x).abs() + an.clone()), lambda))
    });
    Ok(h.space().measure_of(set))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseSearch<S> {
    pub found: bool,
    /// The witness, or the candidate with the smallest exceptional measure.
    pub report: DeviationReport<S>,
    pub horizon: usize,
    pub candidates_checked: usize,
}

fn window_end(k: &GrowthFunction, n: usize) -> Result<usize> {
    let end = k
        .eval_usize(n)?
        .ok_or_else(|| Error::CapExceeded(format!("K({n}) does not fit in memory")))?;
    Ok(end.max(n))
}

/// Least `n ≤ horizon` whose exceptional set over `[n, K(n)]` at `λ₁` has
/// measure at most `λ₂`.
pub fn find_pointwise_stable_n<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    lambda1: &S,
    lambda2: &S,
    k: &GrowthFunction,
    horizon: usize,
) -> Result<PointwiseSearch<S>> {
    require_positive(lambda1, "lambda1")?;
    require_positive(lambda2, "lambda2")?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut orbit = OrbitSums::new(op, f)?;
    let mut best: Option<DeviationReport<S>> = None;
    for n in 1..=horizon {
        let end = window_end(k, n)?;
        orbit.extend_to(end)?;
        let report = deviation_report(&orbit, f.space(), n, end, lambda1);
        if report.exceptional_measure <= lambda2.clone() + S::slack() {
            return Ok(PointwiseSearch {
                found: true,
                report,
                horizon,
                candidates_checked: n,
            });
        }
        if best
            .as_ref()
            .is_none_or(|b| report.exceptional_measure < b.exceptional_measure)
        {
            best = Some(report);
        }
    }
    Ok(PointwiseSearch {
        found: false,
        report: best.expect("horizon is at least 1"),
        horizon,
        candidates_checked: horizon,
    })
}

/// One step `(iₖ, nₖ)` of the pointwise index recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseStep<S> {
    pub k: usize,
    pub i: BigUint,
    pub n: BigUint,
    /// The formula gave 0 and `nₖ` was raised to 1.
    pub clamped: bool,
    /// Report for `nₖ` over `[nₖ, K(nₖ)]`, when small enough to check.
    pub report: Option<DeviationReport<S>>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseSequenceRun<S> {
    pub params: PointwiseParams,
    pub steps: Vec<PointwiseStep<S>>,
    pub witness_k: Option<usize>,
    pub cap_reached: bool,
}

/// The schedule `i₀ = 0`, `nₖ = ⌈2¹²K(1)³iₖ²‖f‖⁴/(λ₁⁴λ₂²)⌉` (at least 1),
/// `iₖ₊₁ = iₖ + 2³⁴K(nₖ)⁷ρ⁶`. Each `nₖ` whose window fits in memory is
/// checked; the run stops at the first stable one, after `e` steps, or once
/// `iₖ` exceeds `cap`.
pub fn iterate_pointwise_sequences<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    lambda1: &BigRational,
    lambda2: &BigRational,
    k: &GrowthFunction,
    cap: &BigUint,
    budget: &DigitBudget,
) -> Result<PointwiseSequenceRun<S>> {
    let params = PointwiseParams::for_element(f, lambda1, lambda2)?;
    let l1 = S::from_rational(lambda1);
    let l2 = S::from_rational(lambda2);
    let k1 = k.eval(&BigUint::one(), budget)?;
    let l1_sq = lambda1 * lambda1;
    let scale = biguint_to_rational(&(pow2(12) * k1.pow(3))) * &params.norm_sq * &params.norm_sq
        / (&l1_sq * &l1_sq * lambda2 * lambda2);
    let rho6 = params.rho.pow(6);
    let steps_max = params.e.to_usize().unwrap_or(usize::MAX);
    let mut orbit: Option<OrbitSums<S>> = None;
    let mut steps = Vec::new();
    let mut witness_k = None;
    let mut cap_reached = false;
    let mut i = BigUint::zero();
    for step in 0..steps_max {
        if i > *cap {
            cap_reached = true;
            break;
        }
        let raw = ceil_to_biguint(&(biguint_to_rational(&(&i * &i)) * &scale))?;
        let clamped = raw.is_zero();
        let n = if clamped { BigUint::one() } else { budget.check(raw)? };
        let kn = k.eval(&n, budget)?;
        let window = n.to_usize().zip(kn.to_usize()).filter(|&(n, kn)| {
            kn.max(n).saturating_add(1).saturating_mul(f.dim()) <= ORBIT_STORAGE_LIMIT
        });
        let report = match window {
            Some((nu, knu)) => {
                if orbit.is_none() {
                    orbit = Some(OrbitSums::new(op, f)?);
                }
                let orbit = orbit.as_mut().expect("just created");
                orbit.extend_to(knu.max(nu))?;
                Some(deviation_report(orbit, f.space(), nu, knu.max(nu), &l1))
            }
            None => None,
        };
        let stable = report
            .as_ref()
            .is_some_and(|r| r.exceptional_measure <= l2.clone() + S::slack());
        steps.push(PointwiseStep {
            k: step,
            i: i.clone(),
            n,
            clamped,
            report,
            stable,
        });
        if stable {
            witness_k = Some(step);
            break;
        }
        i = budget.check(i + pow2(34) * kn.pow(7) * &rho6)?;
    }
    Ok(PointwiseSequenceRun {
        params,
        steps,
        witness_k,
        cap_reached,
    })
}

/// Result of the L¹ reduction: the approximant used and the report for `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximantSearch<S> {
    pub index: usize,
    pub l1_error: S,
    /// Search on the approximant at `(λ₁/2, λ₂/2)`.
    pub approximant: PointwiseSearch<S>,
    /// The approximant's witness re-checked on `f` at `(λ₁, λ₂)`.
    pub report: DeviationReport<S>,
    pub stable: bool,
}

/// Reduce a search for `f` to one for an approximant `fᵢ` with
/// `‖f − fᵢ‖₁ ≤ λ₁λ₂/8`. The maximal inequality pushes the error terms below
/// `λ₁/2` off a set of measure `λ₂/2`, so a witness for `fᵢ` at `(λ₁/2, λ₂/2)`
/// is a witness for `f`. Each stated rate is checked against the true L¹
/// distance.
pub fn search_via_approximants<S: Scalar>(
    op: &Operator<S>,
    f: &Element<S>,
    approximants: &[(Element<S>, S)],
    lambda1: &S,
    lambda2: &S,
    k: &GrowthFunction,
    horizon: usize,
) -> Result<ApproximantSearch<S>> {
    require_positive(lambda1, "lambda1")?;
    require_positive(lambda2, "lambda2")?;
    let tolerance = lambda1.clone() * lambda2.clone() / S::from_usize(8);
    for (index, (g, stated)) in approximants.iter().enumerate() {
        let l1_error = f.sub(g)?.norm_l1();
        if l1_error > stated.clone() + S::slack() {
            return Err(Error::invalid(format!(
                "approximant {index} is farther from f than its stated L1 rate"
            )));
        }
        if l1_error > tolerance {
            continue;
        }
        let two = S::from_usize(2);
        let half1 = lambda1.clone() / two.clone();
        let half2 = lambda2.clone() / two;
        let approximant = find_pointwise_stable_n(op, g, &half1, &half2, k, horizon)?;
        let report = approximant.report.clone();
        let report = exceptional_measure(op, f, report.n, report.k, lambda1)?;
        let stable = approximant.found && report.exceptional_measure <= lambda2.clone() + S::slack();
        return Ok(ApproximantSearch {
            index,
            l1_error,
            approximant,
            report,
            stable,
        });
    }
    Err(Error::invalid("no approximant is within lambda1*lambda2/8 in L1"))
}
