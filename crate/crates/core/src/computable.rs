//! Convergence rates computed from the norm of the limit, and a block-rotation
//! system whose limit norm encodes a table of halting times.
//!
//! Given `‖f*‖`, the distance `a = ‖f − f*‖ = √(‖f‖² − ‖f*‖²)` is known, and
//! the projection trace `aᵢ ↑ a` says when `gᵢ` is close enough to `f − f*`
//! for a single average index to serve every larger one.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{ergodic_average, AverageStream, BlockRotation, Element, MeasureSpace, Operator, RotationBlock};
use crate::projection::{TraceBuilder, DEFAULT_DELTA_MIN};
use crate::scalar::{Real, Scalar};

/// Largest average index probed when checking a certificate.
pub const DEFAULT_PROBE_LIMIT: usize = 10_000;

/// Trace steps tried before giving up on closing the gap `a − aᵢ`.
pub const DEFAULT_TRACE_CAP: usize = 4096;

/// A rate for one `ε`: every `n ≥ m` has `‖Aₘf − Aₙf‖ ≤ ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCertificate {
    pub eps: f64,
    /// Trace index whose `gᵢ` is within the gap bound of `f − f*`.
    pub index: usize,
    pub m: usize,
    /// `√(‖f‖² − ‖f*‖²)`
    pub a: f64,
    pub a_i: f64,
    pub u_norm: f64,
    /// `2√(2(a − aᵢ)‖f‖)`, below `ε/2`.
    pub gap_term: f64,
    /// Largest `‖Aₘf − Aₙf‖` seen over `n ∈ [m, probe_end]`.
    pub max_deviation: f64,
    pub probe_end: usize,
    pub verified: bool,
}

/// Certificate for `ε` from `‖f*‖`, checked over `n ∈ [m, min(10m, probe_limit)]`.
pub fn rate_from_limit_norm<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    norm_fstar: F,
    eps: F,
    trace_cap: usize,
    probe_limit: usize,
) -> Result<RateCertificate> {
    if !(eps > F::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let norm_f = f.norm();
    if norm_fstar < F::zero() || norm_fstar > norm_f * (F::one() + F::slack()) + F::slack() {
        return Err(Error::invalid("need 0 <= ‖f*‖ <= ‖f‖"));
    }
    let tol = F::from(1e-8).unwrap_or(F::epsilon());
    let ef = Scalar::to_f64(&eps);
    let fixed = op.apply(f)?.sub(f)?.norm() <= F::slack() * (F::one() + norm_f);
    let a = (norm_f * norm_f - norm_fstar * norm_fstar).max(F::zero()).sqrt();
    if fixed {
        return Ok(RateCertificate {
            eps: ef,
            index: 0,
            m: 1,
            a: Scalar::to_f64(&a),
            a_i: 0.0,
            u_norm: 0.0,
            gap_term: 0.0,
            max_deviation: 0.0,
            probe_end: 1,
            verified: true,
        });
    }
    let two = F::from(2.0).unwrap();
    let half_eps = eps / two;
    let mut builder = TraceBuilder::new(op, f, F::from(DEFAULT_DELTA_MIN).unwrap_or(F::epsilon()))?;
    let mut found = None;
    for i in 0..=trace_cap {
        builder.extend_to(i)?;
        let a_i = builder.trace().a(i);
        let gap = two * (two * (a - a_i).max(F::zero()) * norm_f).sqrt();
        if gap < half_eps {
            found = Some((i, a_i, gap));
            break;
        }
    }
    let Some((index, a_i, gap)) = found else {
        let last = builder.trace().a(trace_cap);
        return Err(Error::CapExceeded(format!(
            "trace reached a_{trace_cap} = {} without closing the gap to a = {}; is ‖f*‖ consistent with the system?",
            Scalar::to_f64(&last),
            Scalar::to_f64(&a)
        )));
    };
    let u_norm = builder.trace().u_norm(index);
    let m = (F::from(8.0).unwrap() * u_norm / eps)
        .ceil()
        .to_usize()
        .ok_or_else(|| Error::CapExceeded("m does not fit in memory".into()))?
        .max(1);
    let probe_end = m.saturating_mul(10).min(probe_limit.max(m));
    let (max_dev, _) = crate::mean_bounds::max_deviation(op, f, m, probe_end)?;
    let max_deviation = Scalar::to_f64(&max_dev);
    Ok(RateCertificate {
        eps: ef,
        index,
        m,
        a: Scalar::to_f64(&a),
        a_i: Scalar::to_f64(&a_i),
        u_norm: Scalar::to_f64(&u_norm),
        gap_term: Scalar::to_f64(&gap),
        max_deviation,
        probe_end,
        verified: max_dev <= eps + tol,
    })
}

/// `|∫f dμ|`, which is `‖f*‖` when the system is ergodic.
pub fn limit_norm_ergodic<S: Scalar>(f: &Element<S>) -> S {
    f.integral().abs()
}

/// [`limit_norm_ergodic`] after confirming that the point map is a single cycle.
pub fn limit_norm_ergodic_checked<S: Scalar>(op: &Operator<S>, f: &Element<S>) -> Result<S> {
    let map = op.point_map().ok_or(Error::NotPointwise)?;
    match map.cycles() {
        Some(c) if c.len() == 1 => Ok(limit_norm_ergodic(f)),
        Some(c) => Err(Error::invalid(format!("system has {} orbits, not one", c.len()))),
        None => Err(Error::invalid("point map is not a permutation")),
    }
}

/// `f*` for a permutation: on each cycle, the weighted mean of `f` over it.
pub fn orbit_limit<S: Scalar>(op: &Operator<S>, f: &Element<S>) -> Result<Element<S>> {
    let map = op.point_map().ok_or(Error::NotPointwise)?;
    let cycles = map
        .cycles()
        .ok_or_else(|| Error::invalid("point map is not a permutation"))?;
    let space = f.space();
    let mut limit = vec![S::zero(); f.dim()];
    for cycle in cycles {
        let mass = space.measure_of(cycle.iter().copied());
        let total = cycle
            .iter()
            .fold(S::zero(), |acc, &x| acc + space.weight(x).clone() * f.coords()[x].clone());
        let mean = total / mass;
        for x in cycle {
            limit[x] = mean.clone();
        }
    }
    Element::new(space.clone(), limit)
}

/// Halting times `i ↦ j` of finitely many machines; absent means never halts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HaltingTable {
    entries: BTreeMap<usize, u64>,
}

impl HaltingTable {
    pub fn new(entries: BTreeMap<usize, u64>) -> Self {
        HaltingTable { entries }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, u64> = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (k, v) in raw {
            let i = k
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("machine index {k:?} is not a natural number")))?;
            entries.insert(i, v);
        }
        Ok(HaltingTable { entries })
    }

    pub fn halts_at(&self, i: usize) -> Option<u64> {
        self.entries.get(&i).copied()
    }

    pub fn entries(&self) -> &BTreeMap<usize, u64> {
        &self.entries
    }

    /// Halting bits of machines `0..n`.
    pub fn bits(&self, n: usize) -> Vec<bool> {
        (0..n).map(|i| self.entries.contains_key(&i)).collect()
    }
}

/// Most atoms a halting-table system may use.
pub const MAX_SPECKER_ATOMS: usize = 1 << 20;

/// Blocks `[1 − 2⁻ⁱ, 1 − 2⁻⁽ⁱ⁺¹⁾)`, `i < N`, each rotated by `2⁻ʲ` of its
/// length when machine `i` halts at step `j`, plus a fixed tail
/// `[1 − 2⁻ᴺ, 1)`. `f` is 1 on the left half of every block.
#[derive(Debug, Clone)]
pub struct SpeckerSystem {
    pub blocks: usize,
    pub table: HaltingTable,
    pub space: Arc<MeasureSpace<BigRational>>,
    pub operator: Operator<BigRational>,
    pub f: Element<BigRational>,
    /// Atom count of each block, the tail last.
    pub orders: Vec<usize>,
}

fn dyadic(k: u64) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << k)
}

pub fn build_specker_system(table: &HaltingTable, blocks: usize) -> Result<SpeckerSystem> {
    if let Some((&i, _)) = table.entries.range(blocks..).next() {
        return Err(Error::invalid(format!("table has machine {i}, beyond the {blocks} blocks")));
    }
    // (order, shift, length) per block, the tail last.
    let mut layout = Vec::with_capacity(blocks + 1);
    for i in 0..blocks {
        let length = dyadic(i as u64 + 1);
        match table.halts_at(i) {
            Some(0) => return Err(Error::invalid(format!("machine {i} halts at step 0; steps start at 1"))),
            Some(j) => {
                let order = 1usize
                    .checked_shl(j as u32 + 1)
                    .filter(|&o| j < 63 && o <= MAX_SPECKER_ATOMS)
                    .ok_or_else(|| Error::CapExceeded(format!("halting step {j} needs too many atoms")))?;
                layout.push((order, 2, length));
            }
            None => layout.push((2, 0, length)),
        }
    }
    layout.push((2, 0, dyadic(blocks as u64)));
    let atoms: usize = layout.iter().map(|b| b.0).sum();
    if atoms > MAX_SPECKER_ATOMS {
        return Err(Error::CapExceeded(format!("system needs {atoms} atoms")));
    }
    let mut rotation = Vec::with_capacity(layout.len());
    let mut weights = Vec::with_capacity(atoms);
    let mut values = Vec::with_capacity(atoms);
    let mut start = 0;
    for (order, shift, length) in &layout {
        rotation.push(RotationBlock { start, order: *order, shift: *shift });
        let w = length / BigRational::from_integer((*order).into());
        for local in 0..*order {
            weights.push(w.clone());
            values.push(if local < order / 2 { BigRational::one() } else { BigRational::zero() });
        }
        start += order;
    }
    let orders = layout.iter().map(|b| b.0).collect();
    let space = Arc::new(MeasureSpace::new(weights)?);
    let operator = Operator::block_rotation(space.clone(), BlockRotation::new(rotation))?;
    let f = Element::new(space.clone(), values)?;
    Ok(SpeckerSystem {
        blocks,
        table: table.clone(),
        space,
        operator,
        f,
        orders,
    })
}

/// `‖f*‖²` from the halting table: a quarter of each halting block's length,
/// half of every other block and of the tail.
pub fn specker_norm(system: &SpeckerSystem) -> BigRational {
    let quarter = BigRational::new(1.into(), 4.into());
    let half = BigRational::new(1.into(), 2.into());
    let mut total = &half * dyadic(system.blocks as u64);
    for i in 0..system.blocks {
        let length = dyadic(i as u64 + 1);
        let share = if system.table.halts_at(i).is_some() { &quarter } else { &half };
        total += share * length;
    }
    total
}

/// `‖f*‖²` by averaging `f` over each orbit of the finite system.
pub fn specker_norm_by_orbits(system: &SpeckerSystem) -> Result<BigRational> {
    Ok(orbit_limit(&system.operator, &system.f)?.norm_sq())
}

/// `r = Σ_{halting i < N} 2⁻⁽ⁱ⁺³⁾`, which equals `1/2 − ‖f*‖²`.
pub fn halting_sum(table: &HaltingTable, blocks: usize) -> BigRational {
    halting_sum_by(table, blocks, u64::MAX)
}

/// `rₙ`: the same sum over machines that halt by step `n`.
pub fn halting_sum_by(table: &HaltingTable, blocks: usize, n: u64) -> BigRational {
    table
        .entries
        .range(..blocks)
        .filter(|(_, &j)| j <= n)
        .fold(BigRational::zero(), |acc, (&i, _)| acc + dyadic(i as u64 + 3))
}

/// Recovers halting bits `0..N` from approximations to `r`: for machine `i`,
/// ask for `r` within `δ = 2⁻⁽ⁱ⁺⁵⁾`, find `n` with `|r − rₙ| < 2⁻⁽ⁱ⁺³⁾`,
/// and read off whether `i` halts by step `n`. `oracle(δ)` must return a
/// value within `δ` of `r`.
pub fn recover_halting_bits<O>(oracle: O, table: &HaltingTable, blocks: usize) -> Result<Vec<bool>>
where
    O: Fn(&BigRational) -> Result<BigRational>,
{
    let last_step = table.entries.range(..blocks).map(|(_, &j)| j).max().unwrap_or(0);
    let mut bits = Vec::with_capacity(blocks);
    for i in 0..blocks {
        let delta = dyadic(i as u64 + 5);
        let q = oracle(&delta)?;
        let target = dyadic(i as u64 + 3) - &delta;
        let n = (0..=last_step)
            .find(|&n| (&q - halting_sum_by(table, blocks, n)).abs() < target)
            .ok_or_else(|| {
                Error::invalid(format!("no r_n is close to the oracle value for machine {i}; the oracle is inconsistent"))
            })?;
        bits.push(table.halts_at(i).is_some_and(|j| j <= n));
    }
    Ok(bits)
}

/// Oracle that rounds the exact `r` down to a multiple of `δ/2`.
pub fn rounding_oracle(r: BigRational) -> impl Fn(&BigRational) -> Result<BigRational> {
    move |delta: &BigRational| {
        if !delta.is_positive() {
            return Err(Error::invalid("precision must be positive"));
        }
        let step = delta / BigRational::from_integer(2.into());
        Ok((&r / &step).floor() * step)
    }
}

/// `‖Aₙf‖²` for the system, for spot checks of the limit.
pub fn average_norm_sq(system: &SpeckerSystem, n: usize) -> Result<BigRational> {
    Ok(ergodic_average(&system.operator, &system.f, n)?.norm_sq())
}

/// Smallest `N` with `‖Aₙf − f*‖² ≤ tol` for every listed `n ≥ N` up to `horizon`.
pub fn settled_index(system: &SpeckerSystem, tol: &BigRational, horizon: usize) -> Result<Option<usize>> {
    let limit = orbit_limit(&system.operator, &system.f)?;
    let mut settled = None;
    for (k, avg) in AverageStream::new(&system.operator, &system.f)?.take(horizon).enumerate() {
        let d = avg.sub(&limit)?.norm_sq();
        if d <= *tol {
            settled.get_or_insert(k + 1);
        } else {
            settled = None;
        }
    }
    Ok(settled)
}

/// Exact bits as 0/1 for reports.
pub fn bits_as_u8(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| u8::from(b)).collect()
}
