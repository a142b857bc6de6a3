//! Explicit bounds for the mean ergodic theorem and the search for local
//! stability witnesses.
//!
//! A witness for `(ε, K)` is an `n` with `‖Aₘf − Aₙf‖ ≤ ε` for every
//! `m ∈ [n, K(n)]`. Bounds are exact big integers; searches run in floating
//! point on concrete systems.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::{DigitBudget, GrowthFunction, GrowthSpec, IterationRun, IterationStatus};
use crate::hilbert::{AverageStream, Element, Operator, OperatorClass};
use crate::projection::{TraceBuilder, DEFAULT_DELTA_MIN};
use crate::scalar::{biguint_to_rational, ceil_sqrt, ceil_to_biguint, Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Isometry,
    Nonexpansive,
}

impl From<OperatorClass> for BoundMode {
    fn from(c: OperatorClass) -> Self {
        match c {
            OperatorClass::Isometry => BoundMode::Isometry,
            OperatorClass::Nonexpansive => BoundMode::Nonexpansive,
        }
    }
}

fn pow2(k: u32) -> BigUint {
    BigUint::one() << k
}

/// `ρ = ⌈‖f‖/ε⌉` and the iteration count `e = 2⁹ρ²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeanBoundParams {
    pub norm_sq: BigRational,
    pub eps: BigRational,
    pub rho: BigUint,
    pub e: BigUint,
    pub mode: BoundMode,
}

impl MeanBoundParams {
    pub fn from_norm_sq(norm_sq: BigRational, eps: BigRational, mode: BoundMode) -> Result<Self> {
        if norm_sq <= BigRational::zero() {
            return Err(Error::invalid("f must be nonzero"));
        }
        if eps <= BigRational::zero() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        let rho = ceil_sqrt(&(&norm_sq / (&eps * &eps)))?;
        let e = pow2(9) * &rho * &rho;
        Ok(MeanBoundParams {
            norm_sq,
            eps,
            rho,
            e,
            mode,
        })
    }

    pub fn from_norm(norm: BigRational, eps: BigRational, mode: BoundMode) -> Result<Self> {
        Self::from_norm_sq(&norm * &norm, eps, mode)
    }

    pub fn for_element<S: Scalar>(f: &Element<S>, eps: &BigRational, mode: BoundMode) -> Result<Self> {
        let norm_sq = f
            .norm_sq()
            .to_rational()
            .ok_or_else(|| Error::invalid("non-finite norm"))?;
        Self::from_norm_sq(norm_sq, eps.clone(), mode)
    }
}

/// Window lengths `d`, `d′(n)`, `d″(m)`, `d‴(m)` and `d̂(m)` over which the
/// projections are guaranteed to settle, all exact ceilings of rational
/// expressions in `‖f‖⁴/ε⁴`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowLengths {
    /// `‖f‖²/ε²`
    ratio_sq: BigRational,
    /// `‖f‖⁴/ε⁴`
    ratio_4: BigRational,
}

impl WindowLengths {
    pub fn new(norm_sq: &BigRational, eps: &BigRational) -> Result<Self> {
        if *eps <= BigRational::zero() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if *norm_sq <= BigRational::zero() {
            return Err(Error::invalid("f must be nonzero"));
        }
        let ratio_sq = norm_sq / (eps * eps);
        let ratio_4 = &ratio_sq * &ratio_sq;
        Ok(WindowLengths { ratio_sq, ratio_4 })
    }

    fn scaled(&self, factor: BigUint, m: u64) -> BigUint {
        let m4 = BigUint::from(m).pow(4);
        ceil_to_biguint(&(biguint_to_rational(&(factor * m4)) * &self.ratio_4))
            .expect("window lengths are positive")
    }

    /// `d = ⌈32‖f‖⁴/ε⁴⌉`: some `j ∈ [i, i+d)` has `‖T(f−gⱼ) − (f−gⱼ)‖ ≤ ε`.
    pub fn fixed_point_window(&self) -> BigUint {
        self.scaled(BigUint::from(32u32), 1)
    }

    /// `d′(n) = ⌈2n⁴‖f‖⁴/ε⁴⌉`: some `j` in the window has `‖Aₙ(f−gⱼ) − (f−gⱼ)‖ ≤ ε`.
    pub fn single_average_window(&self, n: u64) -> BigUint {
        self.scaled(BigUint::from(2u32), n)
    }

    /// `d″(m) = ⌈32m⁴‖f‖⁴/ε⁴⌉`: settling over this window controls every `Aₙ`, `n ≤ m`.
    pub fn all_averages_window(&self, m: u64) -> BigUint {
        self.scaled(BigUint::from(32u32), m)
    }

    /// `d‴(m) = ⌈2⁹m⁴‖f‖⁴/ε⁴⌉`: settling over this window controls `Aₘ − Aₙ`.
    pub fn average_difference_window(&self, m: u64) -> BigUint {
        self.scaled(pow2(9), m)
    }

    /// `⌈2⁷‖f‖²/ε²⌉`, the number of `d‴` windows scanned for the pointwise step.
    pub fn window_count(&self) -> BigUint {
        ceil_to_biguint(&(biguint_to_rational(&pow2(7)) * &self.ratio_sq))
            .expect("positive ratio")
    }

    /// `d̂(m) = d‴(m)·⌈2⁷‖f‖²/ε²⌉`.
    pub fn search_window(&self, m: u64) -> BigUint {
        self.average_difference_window(m) * self.window_count()
    }
}

pub fn d_fns(norm_sq: &BigRational, eps: &BigRational) -> Result<WindowLengths> {
    WindowLengths::new(norm_sq, eps)
}

/// `K̂(i) = i + 2¹³ρ⁴·K((i+1)·K(1)·ρ²)`, the isometry-case step.
pub fn khat_isometry(k: &GrowthFunction, rho: &BigUint) -> GrowthFunction {
    let k = k.clone();
    let rho2 = rho * rho;
    let lead = pow2(13) * &rho2 * &rho2;
    let name = format!("i + 2^13*{rho}^4*K((i+1)*K(1)*{rho}^2), K(n) = {}", k.describe());
    GrowthFunction::custom(name, move |i, budget| {
        let k1 = k.eval(&BigUint::one(), budget)?;
        let arg = (i + 1u32) * k1 * &rho2;
        Ok(i + &lead * k.eval(&arg, budget)?)
    })
}

/// `K̄(i) = i + 2¹³ρ⁴·K((i+1)·K(2iρ)·ρ²)`, the nonexpansive-case step.
pub fn kbar_nonexpansive(k: &GrowthFunction, rho: &BigUint) -> GrowthFunction {
    let k = k.clone();
    let rho = rho.clone();
    let rho2 = &rho * &rho;
    let lead = pow2(13) * &rho2 * &rho2;
    let name = format!("i + 2^13*{rho}^4*K((i+1)*K(2*i*{rho})*{rho}^2), K(n) = {}", k.describe());
    GrowthFunction::custom(name, move |i, budget| {
        let inner = k.eval(&(i * 2u32 * &rho), budget)?;
        let arg = (i + 1u32) * inner * &rho2;
        Ok(i + &lead * k.eval(&arg, budget)?)
    })
}

/// Result of iterating the bound step `e` times from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetBound {
    pub params: MeanBoundParams,
    pub step: String,
    pub run: IterationRun,
}

impl MetBound {
    pub fn value(&self) -> Option<&BigUint> {
        self.run.is_complete().then_some(&self.run.value)
    }

    pub fn into_result(self) -> Result<BigUint> {
        self.run.into_result()
    }
}

/// The bound `K̂ᵉ(1)` (isometries) or `K̄ᵉ(1)` (nonexpansive maps) below
/// which a witness must exist.
pub fn met_bound(params: &MeanBoundParams, k: &GrowthFunction, budget: &DigitBudget) -> MetBound {
    let step = match params.mode {
        BoundMode::Isometry => khat_isometry(k, &params.rho),
        BoundMode::Nonexpansive => kbar_nonexpansive(k, &params.rho),
    };
    let run = step.iterate(&BigUint::one(), &params.e, budget);
    MetBound {
        params: params.clone(),
        step: step.describe(),
        run,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityWitness<F> {
    pub n: usize,
    pub interval_end: usize,
    pub max_deviation: F,
    pub argmax_m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theoretical_bound: Option<String>,
}

impl<F: Real> StabilityWitness<F> {
    pub fn is_valid(&self, eps: F) -> bool {
        self.max_deviation <= eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySearch<F> {
    pub found: bool,
    /// The least witness, or the candidate with the smallest deviation.
    pub witness: StabilityWitness<F>,
    pub horizon: usize,
    pub candidates_checked: usize,
    /// Some intervals ran past the cached averages and were streamed.
    pub cache_limited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub horizon: usize,
    /// Maximum number of cached coordinates (averages × dimension).
    pub cache_coordinates: usize,
}

impl SearchOptions {
    pub fn with_horizon(horizon: usize) -> Self {
        SearchOptions {
            horizon,
            cache_coordinates: 1 << 22,
        }
    }
}

/// A₁f, A₂f, … stored flat, with a resumable stream past the cache limit.
struct AverageCache<'a, F> {
    stream: AverageStream<'a, F>,
    data: Vec<F>,
    dim: usize,
    limit: usize,
    weights: Vec<F>,
}

impl<'a, F: Real> AverageCache<'a, F> {
    fn new(op: &'a Operator<F>, f: &Element<F>, cache_coordinates: usize) -> Result<Self> {
        let dim = f.dim();
        Ok(AverageCache {
            stream: AverageStream::new(op, f)?,
            data: Vec::new(),
            dim,
            limit: (cache_coordinates / dim).max(1),
            weights: f.space().weights().to_vec(),
        })
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn extend_to(&mut self, m: usize) {
        let m = m.min(self.limit);
        while self.len() < m {
            let a = self.stream.next().expect("average stream is unbounded");
            self.data.extend_from_slice(a.coords());
        }
    }

    fn get(&self, m: usize) -> &[F] {
        &self.data[(m - 1) * self.dim..m * self.dim]
    }

    fn dist_sq(&self, a: &[F], b: &[F]) -> F {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .fold(F::zero(), |acc, (w, (x, y))| acc + *w * (*x - *y) * (*x - *y))
    }

    /// Max of ‖Aₘ − Aₙ‖² over `m ∈ [n, end]`, stopping early once it
    /// reaches `stop_at`. Returns (max, argmax, completed, streamed).
    fn scan(&mut self, n: usize, end: usize, stop_at: Option<F>) -> (F, usize, bool, bool) {
        self.extend_to(end);
        let base: Vec<F> = if n <= self.len() {
            self.get(n).to_vec()
        } else {
            let mut s = self.stream.clone();
            let mut idx = self.len();
            let mut last = None;
            while idx < n {
                last = s.next();
                idx += 1;
            }
            last.expect("n beyond cache").into_coords()
        };
        let mut best = F::zero();
        let mut arg = n;
        let cached_end = end.min(self.len());
        let mut m = n;
        while m <= cached_end {
            let d = self.dist_sq(self.get(m), &base);
            if d > best {
                best = d;
                arg = m;
                if stop_at.is_some_and(|s| best >= s) {
                    return (best, arg, false, false);
                }
            }
            m += 1;
        }
        if m > end {
            return (best, arg, true, false);
        }
        let mut s = self.stream.clone();
        let mut idx = self.len();
        while idx + 1 < m {
            s.next();
            idx += 1;
        }
        for mm in m..=end {
            let a = s.next().expect("average stream is unbounded");
            let d = self.dist_sq(a.coords(), &base);
            if d > best {
                best = d;
                arg = mm;
                if stop_at.is_some_and(|s| best >= s) {
                    return (best, arg, false, true);
                }
            }
        }
        (best, arg, true, true)
    }
}

fn interval_end(k: &GrowthFunction, n: usize) -> Result<usize> {
    let end = k
        .eval_usize(n)?
        .ok_or_else(|| Error::CapExceeded(format!("K({n}) does not fit a machine index")))?;
    if end < n {
        return Err(Error::invalid(format!("K({n}) = {end} is below {n}")));
    }
    Ok(end)
}

/// Least `n ≤ horizon` whose averages are `ε`-stable on `[n, K(n)]`.
pub fn find_stable_n<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    eps: F,
    k: &GrowthFunction,
    horizon: usize,
) -> Result<StabilitySearch<F>> {
    find_stable_n_with(op, f, eps, k, SearchOptions::with_horizon(horizon))
}

pub fn find_stable_n_with<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    eps: F,
    k: &GrowthFunction,
    opts: SearchOptions,
) -> Result<StabilitySearch<F>> {
    if opts.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if !(eps > F::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut cache = AverageCache::new(op, f, opts.cache_coordinates)?;
    let eps_sq = eps * eps;
    let mut best: Option<(F, usize, usize, usize)> = None;
    let mut streamed_any = false;
    for n in 1..=opts.horizon {
        let end = interval_end(k, n)?;
        let stop = best.map(|b| b.0);
        let (max_sq, arg, complete, streamed) = cache.scan(n, end, stop);
        streamed_any |= streamed;
        if complete && max_sq <= eps_sq {
            return Ok(StabilitySearch {
                found: true,
                witness: StabilityWitness {
                    n,
                    interval_end: end,
                    max_deviation: max_sq.sqrt(),
                    argmax_m: arg,
                    theoretical_bound: None,
                },
                horizon: opts.horizon,
                candidates_checked: n,
                cache_limited: streamed_any,
            });
        }
        if complete && best.is_none_or(|b| max_sq < b.0) {
            best = Some((max_sq, n, end, arg));
        }
    }
    let (max_sq, n, end, arg) = best.expect("horizon is at least 1");
    Ok(StabilitySearch {
        found: false,
        witness: StabilityWitness {
            n,
            interval_end: end,
            max_deviation: max_sq.sqrt(),
            argmax_m: arg,
            theoretical_bound: None,
        },
        horizon: opts.horizon,
        candidates_checked: opts.horizon,
        cache_limited: streamed_any,
    })
}

/// `max_{m ∈ [n, end]} ‖Aₘf − Aₙf‖` and its argmax, from a fresh stream.
pub fn max_deviation<F: Real>(op: &Operator<F>, f: &Element<F>, n: usize, end: usize) -> Result<(F, usize)> {
    if n == 0 || end < n {
        return Err(Error::invalid("need 1 <= n <= end"));
    }
    let mut stream = AverageStream::new(op, f)?;
    let base = stream.nth(n - 1).expect("unbounded stream");
    let mut best = F::zero();
    let mut arg = n;
    for m in n + 1..=end {
        let a = stream.next().expect("unbounded stream");
        let d = a.sub(&base)?.norm();
        if d > best {
            best = d;
            arg = m;
        }
    }
    Ok((best, arg))
}

/// Re-checks a witness against the system.
pub fn verify_witness<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    eps: F,
    k: &GrowthFunction,
    w: &StabilityWitness<F>,
) -> Result<bool> {
    let end = interval_end(k, w.n)?;
    if end != w.interval_end {
        return Ok(false);
    }
    let (dev, _) = max_deviation(op, f, w.n, end)?;
    Ok(dev <= eps && (dev - w.max_deviation).abs() <= F::from(1e-12).unwrap_or(F::zero()) * (F::one() + dev))
}

/// Longest average index the recursion checks directly.
pub const VERIFY_LIMIT: usize = 1 << 22;

/// One step `(iₖ, nₖ)` of the index recursion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceStep {
    pub k: usize,
    pub i: String,
    pub n: u64,
    pub u_norm: f64,
    /// `‖A_{M(n)}f − Aₙf‖ ≤ ε`
    pub endpoint_stable: bool,
    /// `‖Aₘf − Aₙf‖ ≤ ε` for all `m ∈ [n, M(n)]`
    pub interval_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRun {
    pub steps: Vec<SequenceStep>,
    /// Number of recursion steps the argument needs, `⌈2⁹‖f‖²/ε²⌉`.
    pub e: String,
    /// First `k` whose `nₖ` passes the endpoint check.
    pub witness_k: Option<usize>,
    pub cap_reached: bool,
}

/// The schedule `i₀ = 1`, `nₖ = max(⌈2‖u_{iₖ}‖/ε⌉, 1)`,
/// `iₖ₊₁ = iₖ + ⌈2¹³M(nₖ)⁴‖f‖⁴/ε⁴⌉`, with each `nₖ` checked on the system.
/// Stops early once a witness is found or the next `iₖ` exceeds `cap`.
pub fn iterate_index_sequences<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    eps: F,
    m: &GrowthFunction,
    cap: usize,
) -> Result<SequenceRun> {
    if !(eps > F::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let to_q = |x: F| -> Result<BigRational> {
        Scalar::to_rational(&x).ok_or_else(|| Error::invalid("non-finite value"))
    };
    let norm_sq = to_q(f.norm_sq())?;
    let eps_q = to_q(eps)?;
    if norm_sq.is_zero() {
        return Err(Error::invalid("f must be nonzero"));
    }
    let ratio_sq = &norm_sq / (&eps_q * &eps_q);
    let ratio_4 = &ratio_sq * &ratio_sq;
    let e = ceil_to_biguint(&(biguint_to_rational(&pow2(9)) * &ratio_sq))?;
    let e_steps = e.to_usize().unwrap_or(usize::MAX);
    let mut builder = TraceBuilder::new(op, f, F::from(DEFAULT_DELTA_MIN).unwrap_or(F::epsilon()))?;
    let mut steps = Vec::new();
    let mut i = BigUint::one();
    let mut cap_reached = false;
    let mut witness_k = None;
    for k in 0..e_steps {
        let Some(iu) = i.to_usize().filter(|&iu| iu <= cap) else {
            cap_reached = true;
            break;
        };
        builder.extend_to(iu)?;
        let u_norm = builder.trace().u_norm(iu);
        let n = (F::from(2.0).unwrap() * u_norm / eps).ceil().to_u64().unwrap_or(u64::MAX).max(1);
        let nu = usize::try_from(n).map_err(|_| Error::CapExceeded(format!("n_{k} = {n}")))?;
        let mn = interval_end(m, nu)?;
        if mn > VERIFY_LIMIT {
            return Err(Error::CapExceeded(format!("M(n_{k}) = {mn} too large to verify")));
        }
        let (dev, _) = max_deviation(op, f, nu, mn)?;
        let an = crate::hilbert::ergodic_average(op, f, nu)?;
        let amn = crate::hilbert::ergodic_average(op, f, mn)?;
        let endpoint = amn.sub(&an)?.norm() <= eps;
        steps.push(SequenceStep {
            k,
            i: i.to_string(),
            n,
            u_norm: Scalar::to_f64(&u_norm),
            endpoint_stable: endpoint,
            interval_stable: dev <= eps,
        });
        if endpoint && witness_k.is_none() {
            witness_k = Some(k);
            break;
        }
        let mq = biguint_to_rational(&BigUint::from(mn as u64).pow(4));
        let inc = ceil_to_biguint(&(biguint_to_rational(&pow2(13)) * mq * &ratio_4))?;
        i += inc;
    }
    Ok(SequenceRun {
        steps,
        e: e.to_string(),
        witness_k,
        cap_reached,
    })
}

/// One row of the growth table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub growth: String,
    pub rho: u64,
    pub e: String,
    /// Iterations completed before the budget ran out (all `e` when complete).
    pub iterations: String,
    pub complete: bool,
    pub log2_bound: Option<f64>,
    pub digits: Option<u64>,
}

/// `log₂ x`, accurate for arbitrarily large `x`.
pub fn log2_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.log2() + shift as f64
}

/// `log₂` of the bound for each growth function and each `ρ` (with `‖f‖ = ρ`,
/// `ε = 1`).
pub fn asymptotic_table(
    regimes: &[GrowthSpec],
    rhos: &[u64],
    mode: BoundMode,
    budget: &DigitBudget,
) -> Result<Vec<AsymptoticRow>> {
    let mut rows = Vec::new();
    for spec in regimes {
        let k = spec.build()?;
        for &rho in rhos {
            if rho == 0 {
                return Err(Error::invalid("rho must be at least 1"));
            }
            let params = MeanBoundParams::from_norm(
                BigRational::from_integer(rho.into()),
                BigRational::one(),
                mode,
            )?;
            let bound = met_bound(&params, &k, budget);
            let complete = bound.run.status == IterationStatus::Complete;
            rows.push(AsymptoticRow {
                growth: k.describe(),
                rho,
                e: params.e.to_string(),
                iterations: bound.run.completed.to_string(),
                complete,
                log2_bound: complete.then(|| log2_big(&bound.run.value)),
                digits: complete.then(|| crate::scalar::decimal_digits(&bound.run.value)),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SystemRecipe;
    use crate::scalar::{decimal_digits, ratio};

    fn q(n: i64) -> BigRational {
        ratio(n, 1)
    }

    fn b(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn window_lengths_at_unit_ratio() {
        let w = d_fns(&q(1), &q(1)).unwrap();
        assert_eq!(w.fixed_point_window(), b(32));
        assert_eq!(w.single_average_window(1), b(2));
        assert_eq!(w.all_averages_window(1), b(32));
        assert_eq!(w.average_difference_window(1), b(512));
        assert_eq!(w.window_count(), b(128));
        assert_eq!(w.search_window(1), b(65536));
        assert_eq!(w.average_difference_window(2), b(512 * 16));
        assert!(d_fns(&q(1), &q(0)).is_err());
    }

    #[test]
    fn window_lengths_round_up() {
        // ‖f‖² = 1, ε = 3: 32/81 rounds up to 1.
        let w = d_fns(&q(1), &q(3)).unwrap();
        assert_eq!(w.fixed_point_window(), b(1));
        assert_eq!(w.window_count(), b(15));
    }

    #[test]
    fn params_use_exact_ceiling() {
        let p = MeanBoundParams::from_norm(q(1), q(1), BoundMode::Isometry).unwrap();
        assert_eq!((p.rho.clone(), p.e.clone()), (b(1), b(512)));
        let p = MeanBoundParams::from_norm_sq(q(2), q(1), BoundMode::Isometry).unwrap();
        assert_eq!(p.rho, b(2));
        let p = MeanBoundParams::from_norm(q(1), ratio(1, 3), BoundMode::Nonexpansive).unwrap();
        assert_eq!((p.rho, p.e), (b(3), b(4608)));
        assert!(MeanBoundParams::from_norm_sq(q(0), q(1), BoundMode::Isometry).is_err());
    }

    #[test]
    fn khat_and_kbar_values() {
        let budget = DigitBudget::default();
        let id = GrowthFunction::identity();
        let kh = khat_isometry(&id, &b(1));
        assert_eq!(kh.eval(&b(1), &budget).unwrap(), b(16385));
        assert_eq!(kh.eval(&b(0), &budget).unwrap(), b(8192));
        let kb = kbar_nonexpansive(&id, &b(1));
        assert_eq!(kb.eval(&b(1), &budget).unwrap(), b(32769));
        assert_eq!(kb.eval(&b(0), &budget).unwrap(), b(0));
        for i in 1..50u64 {
            let (h, h1) = (kh.eval(&b(i), &budget).unwrap(), kh.eval(&b(i + 1), &budget).unwrap());
            assert!(h1 > h);
            assert!(kb.eval(&b(i), &budget).unwrap() >= h);
        }
    }

    #[test]
    fn isometry_bound_for_identity_growth_matches_frozen_value() {
        let params = MeanBoundParams::from_norm(q(1), q(1), BoundMode::Isometry).unwrap();
        let v = met_bound(&params, &GrowthFunction::identity(), &DigitBudget::default())
            .into_result()
            .unwrap();
        let s = v.to_string();
        assert_eq!(decimal_digits(&v), 2004);
        assert_eq!(v.bits(), 6658);
        assert_eq!(&s[..20], "96343602979856857565");
        assert_eq!(&s[s.len() - 20..], "58655572069711872001");
    }

    #[test]
    fn bound_reports_budget_exhaustion() {
        let params = MeanBoundParams::from_norm(q(1), q(1), BoundMode::Isometry).unwrap();
        let run = met_bound(&params, &GrowthFunction::identity(), &DigitBudget::new(100)).run;
        assert_eq!(run.status, IterationStatus::BudgetExceeded { budget: 100 });
        let done = run.completed.to_u64().unwrap();
        assert!(done > 0 && done < 512);
        assert!(decimal_digits(&run.value) <= 100);
    }

    fn two_cycle() -> (Operator<f64>, Element<f64>) {
        let sys = SystemRecipe::CyclicPermutation { period: 2 }.build::<f64>().unwrap();
        let f = Element::from_f64s(sys.space.clone(), &[1.0, -1.0]).unwrap();
        (sys.operator, f)
    }

    #[test]
    fn identity_witness_is_one() {
        let sys = SystemRecipe::Identity { dim: 3 }.build::<f64>().unwrap();
        let f = Element::from_f64s(sys.space.clone(), &[1.0, 2.0, 3.0]).unwrap();
        let k = GrowthFunction::affine(2u32, 0u32).unwrap();
        let s = find_stable_n(&sys.operator, &f, 0.1, &k, 10).unwrap();
        assert!(s.found);
        assert_eq!((s.witness.n, s.witness.max_deviation), (1, 0.0));
    }

    #[test]
    fn two_cycle_witness_is_two() {
        let (op, f) = two_cycle();
        let k = GrowthFunction::affine(2u32, 0u32).unwrap();
        let s = find_stable_n(&op, &f, 0.6, &k, 100).unwrap();
        assert!(s.found);
        assert_eq!(s.witness.n, 2);
        assert_eq!(s.witness.interval_end, 4);
        assert_eq!(s.witness.argmax_m, 3);
        assert!((s.witness.max_deviation - 1.0 / 3.0).abs() < 1e-15);
        assert!(verify_witness(&op, &f, 0.6, &k, &s.witness).unwrap());
    }

    #[test]
    fn two_cycle_not_found_at_horizon_one() {
        let (op, f) = two_cycle();
        let k = GrowthFunction::affine(2u32, 0u32).unwrap();
        let s = find_stable_n(&op, &f, 0.6, &k, 1).unwrap();
        assert!(!s.found);
        assert_eq!(s.witness.n, 1);
        assert!((s.witness.max_deviation - 1.0).abs() < 1e-15);
    }

    #[test]
    fn streaming_past_cache_agrees() {
        let sys = SystemRecipe::DiscretizedRotation { numerator: 1, denominator: 8, atoms: 8 }
            .build::<f64>()
            .unwrap();
        let f = crate::operators::FunctionPattern::CenteredHalfIndicator.build(&sys.space).unwrap();
        let k = GrowthFunction::affine(16u32, 0u32).unwrap();
        let full = find_stable_n(&sys.operator, &f, 0.1, &k, 1000).unwrap();
        let tiny = find_stable_n_with(
            &sys.operator,
            &f,
            0.1,
            &k,
            SearchOptions {
                horizon: 1000,
                cache_coordinates: 64,
            },
        )
        .unwrap();
        assert!(full.found && tiny.found && tiny.cache_limited, "{full:?} {tiny:?}");
        assert_eq!(full.witness.n, tiny.witness.n);
        assert!((full.witness.max_deviation - tiny.witness.max_deviation).abs() < 1e-12);
        let (dev, _) = max_deviation(&sys.operator, &f, full.witness.n, full.witness.interval_end).unwrap();
        assert!((dev - full.witness.max_deviation).abs() < 1e-12);
    }

    #[test]
    fn index_sequences_on_identity() {
        let sys = SystemRecipe::Identity { dim: 2 }.build::<f64>().unwrap();
        let f = Element::from_f64s(sys.space.clone(), &[1.0, -1.0]).unwrap();
        let run = iterate_index_sequences(&sys.operator, &f, 0.5, &GrowthFunction::identity(), 100).unwrap();
        assert_eq!(run.witness_k, Some(0));
        assert_eq!(run.steps[0].n, 1);
        assert_eq!(run.steps[0].i, "1");
    }

    #[test]
    fn index_sequences_on_two_cycle() {
        let (op, f) = two_cycle();
        let run = iterate_index_sequences(&op, &f, 0.5, &GrowthFunction::identity(), 100).unwrap();
        // u₁ = f/2 has norm 1/2, so n₀ = ⌈2·(1/2)/0.5⌉ = 2, and A₂f = 0.
        assert_eq!(run.steps[0].n, 2);
        assert!((run.steps[0].u_norm - 0.5).abs() < 1e-15);
        assert_eq!(run.witness_k, Some(0));
    }

    #[test]
    fn table_rows() {
        let rows = asymptotic_table(
            &[GrowthSpec::Identity, GrowthSpec::Shift { c: 4 }],
            &[1],
            BoundMode::Isometry,
            &DigitBudget::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.complete));
        assert!((rows[0].log2_bound.unwrap() - 6657.0).abs() < 1.0);
        assert!(rows[1].log2_bound.unwrap() > rows[0].log2_bound.unwrap());
    }
}
