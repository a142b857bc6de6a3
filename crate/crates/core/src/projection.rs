//! Projections of `f` onto spans of difference vectors `vₖ = Tᵏf − Tᵏ⁺¹f`.
//!
//! For each `i`, `gᵢ` is the orthogonal projection of `f` onto
//! `span{v₀, …, vᵢ}`. Writing `gᵢ = Σ cₖ vₖ` and `uᵢ = Σ cₖ Tᵏf` gives
//! `gᵢ = uᵢ − Tuᵢ` by linearity, and `aᵢ = ‖gᵢ‖` is nondecreasing.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{Element, Operator};
use crate::scalar::{Real, Scalar};

pub const DEFAULT_DELTA_MIN: f64 = 1e-10;

/// Largest index the dense Gram solve accepts.
pub const ORACLE_MAX_INDEX: usize = 200;

/// `vₖ = Tᵏf − Tᵏ⁺¹f`.
pub fn difference_vector<F: Real>(op: &Operator<F>, f: &Element<F>, k: usize) -> Result<Element<F>> {
    let tk = op.power_apply(f, k)?;
    let tk1 = op.apply(&tk)?;
    tk.sub(&tk1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStep<F> {
    pub index: usize,
    pub a: F,
    pub u_norm: F,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
struct Snapshot<F> {
    index: usize,
    coeffs: Vec<F>,
    g: Element<F>,
    u: Element<F>,
}

/// The sequences `gᵢ`, `uᵢ`, `aᵢ` for `i = 0..=max_index`.
///
/// Full vectors are stored only at steps that enlarge the span; a skipped
/// step has the same projection as the step before it.
#[derive(Debug, Clone)]
pub struct ProjectionTrace<F> {
    norm_f: F,
    steps: Vec<TraceStep<F>>,
    snapshots: Vec<Snapshot<F>>,
    skipped: Vec<usize>,
}

impl<F: Real> ProjectionTrace<F> {
    pub fn norm_f(&self) -> F {
        self.norm_f
    }

    pub fn max_index(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn steps(&self) -> &[TraceStep<F>] {
        &self.steps
    }

    pub fn a(&self, i: usize) -> F {
        self.steps[i].a
    }

    pub fn u_norm(&self, i: usize) -> F {
        self.steps[i].u_norm
    }

    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn is_skipped(&self, i: usize) -> bool {
        self.steps[i].skipped
    }

    fn snapshot(&self, i: usize) -> &Snapshot<F> {
        assert!(i <= self.max_index(), "trace index {i} beyond {}", self.max_index());
        let pos = self.snapshots.partition_point(|s| s.index <= i);
        &self.snapshots[pos - 1]
    }

    pub fn g(&self, i: usize) -> &Element<F> {
        &self.snapshot(i).g
    }

    pub fn u(&self, i: usize) -> &Element<F> {
        &self.snapshot(i).u
    }

    /// `c₀..cᵢ` with `gᵢ = Σ cₖ vₖ`.
    pub fn coefficients(&self, i: usize) -> Vec<F> {
        let mut c = self.snapshot(i).coeffs.clone();
        c.resize(i + 1, F::zero());
        c
    }

    /// CSV with columns `i,a_i,u_norm,skipped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "a_i", "u_norm", "skipped"])?;
        for s in &self.steps {
            w.write_record([
                s.index.to_string(),
                Scalar::to_f64(&s.a).to_string(),
                Scalar::to_f64(&s.u_norm).to_string(),
                s.skipped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Incremental trace construction with cached iterates.
#[derive(Debug, Clone)]
pub struct TraceBuilder<'a, F> {
    op: &'a Operator<F>,
    f: Element<F>,
    delta_min: F,
    /// `Tᵏf`, k = 0..=next+1
    iterates: Vec<Element<F>>,
    /// Orthonormal basis of the current span.
    basis: Vec<Element<F>>,
    /// `basis[j] = Σₖ basis_coeffs[j][k] vₖ`
    basis_coeffs: Vec<Vec<F>>,
    coeffs: Vec<F>,
    g: Element<F>,
    u: Element<F>,
    trace: ProjectionTrace<F>,
    next: usize,
}

impl<'a, F: Real> TraceBuilder<'a, F> {
    pub fn new(op: &'a Operator<F>, f: &Element<F>, delta_min: F) -> Result<Self> {
        if !(delta_min > F::zero()) {
            return Err(Error::invalid("delta_min must be positive"));
        }
        let tf = op.apply(f)?;
        let norm_f = f.norm();
        if norm_f == F::zero() {
            return Err(Error::invalid("f must be nonzero"));
        }
        let zero = Element::zero(f.space().clone());
        Ok(TraceBuilder {
            op,
            f: f.clone(),
            delta_min,
            iterates: vec![f.clone(), tf],
            basis: Vec::new(),
            basis_coeffs: Vec::new(),
            coeffs: Vec::new(),
            g: zero.clone(),
            u: zero.clone(),
            trace: ProjectionTrace {
                norm_f,
                steps: Vec::new(),
                snapshots: vec![Snapshot {
                    index: 0,
                    coeffs: Vec::new(),
                    g: zero.clone(),
                    u: zero,
                }],
                skipped: Vec::new(),
            },
            next: 0,
        })
    }

    /// Number of computed steps.
    pub fn len(&self) -> usize {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.next == 0
    }

    /// Dimension of the span reached so far.
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn trace(&self) -> &ProjectionTrace<F> {
        &self.trace
    }

    pub fn into_trace(self) -> ProjectionTrace<F> {
        self.trace
    }

    /// Computes steps up to and including index `i`.
    pub fn extend_to(&mut self, i: usize) -> Result<()> {
        while self.next <= i {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let k = self.next;
        while self.iterates.len() < k + 2 {
            let last = self.iterates.last().expect("iterates start nonempty");
            let nxt = self.op.apply_unchecked(last);
            self.iterates.push(nxt);
        }
        let mut w = self.iterates[k].sub(&self.iterates[k + 1])?;
        let mut wc = vec![F::zero(); k + 1];
        wc[k] = F::one();
        for _pass in 0..2 {
            for (q, qc) in self.basis.iter().zip(&self.basis_coeffs) {
                let r = w.inner_unchecked(q);
                w.axpy(&-r, q)?;
                for (x, y) in wc.iter_mut().zip(qc) {
                    *x = *x - r * *y;
                }
            }
        }
        let wn = w.norm();
        let skipped = wn <= self.delta_min * self.trace.norm_f;
        if skipped {
            self.trace.skipped.push(k);
        } else {
            let inv = F::one() / wn;
            let q = w.scale(&inv);
            wc.iter_mut().for_each(|x| *x = *x * inv);
            let residual = self.f.sub(&self.g)?;
            let alpha = residual.inner_unchecked(&q);
            self.g.axpy(&alpha, &q)?;
            self.coeffs.resize(k + 1, F::zero());
            for (c, b) in self.coeffs.iter_mut().zip(&wc) {
                *c = *c + alpha * *b;
            }
            for (b, it) in wc.iter().zip(&self.iterates) {
                if *b != F::zero() {
                    self.u.axpy(&(alpha * *b), it)?;
                }
            }
            self.basis.push(q);
            self.basis_coeffs.push(wc);
            self.trace.snapshots.push(Snapshot {
                index: k,
                coeffs: self.coeffs.clone(),
                g: self.g.clone(),
                u: self.u.clone(),
            });
        }
        self.trace.steps.push(TraceStep {
            index: k,
            a: self.g.norm(),
            u_norm: self.u.norm(),
            skipped,
        });
        self.next += 1;
        Ok(())
    }
}

pub fn compute_trace<F: Real>(
    op: &Operator<F>,
    f: &Element<F>,
    imax: usize,
    delta_min: F,
) -> Result<ProjectionTrace<F>> {
    let mut b = TraceBuilder::new(op, f, delta_min)?;
    b.extend_to(imax)?;
    Ok(b.into_trace())
}

/// Ridge-refinement passes in [`projection_oracle`].
const REFINEMENT_PASSES: usize = 64;

/// Projection onto `span{v₀..vᵢ}` from the Gram normal equations, solved by
/// Cholesky with a ridge of `1e-12` times the largest diagonal entry and
/// then refined against the unridged system.
pub fn projection_oracle<F: Real>(op: &Operator<F>, f: &Element<F>, i: usize) -> Result<Element<F>> {
    if i > ORACLE_MAX_INDEX {
        return Err(Error::invalid(format!(
            "oracle index {i} exceeds the dense-solve limit {ORACLE_MAX_INDEX}"
        )));
    }
    let mut vs = Vec::with_capacity(i + 1);
    let mut x = f.clone();
    for _ in 0..=i {
        let tx = op.apply(&x)?;
        vs.push(x.sub(&tx)?);
        x = tx;
    }
    let to64 = |v: &F| Scalar::to_f64(v);
    let n = i + 1;
    let gram: DMatrix<f64> = DMatrix::from_fn(n, n, |r, c| to64(&vs[r].inner_unchecked(&vs[c])));
    let rhs = DVector::from_fn(n, |r, _| to64(&f.inner_unchecked(&vs[r])));
    let scale = gram.diagonal().max();
    if scale == 0.0 {
        return Ok(Element::zero(f.space().clone()));
    }
    let ridged = &gram + DMatrix::identity(n, n) * (1e-12 * scale);
    let chol = ridged
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("Gram matrix of {n} difference vectors")))?;
    // Iterated refinement removes the ridge bias: each pass solves for the
    // residual of the unridged equations, so directions with Gram eigenvalue μ
    // keep a factor (λ/(μ+λ))ᵏ of error while tiny noise directions stay damped.
    let mut c = chol.solve(&rhs);
    for _ in 0..REFINEMENT_PASSES {
        let step = chol.solve(&(&rhs - &gram * &c));
        let done = step.norm() <= f64::EPSILON * c.norm();
        c += step;
        if done {
            break;
        }
    }
    let mut out = Element::zero(f.space().clone());
    for (ck, v) in c.iter().zip(&vs) {
        let coef = F::from(*ck).ok_or_else(|| Error::Singular("non-finite solution".into()))?;
        out.axpy(&coef, v)?;
    }
    Ok(out)
}

/// The one-step update `gᵢ₊₁ = gᵢ + ⟨f − gᵢ, vᵢ₊₁⟩/‖vᵢ₊₁‖² · vᵢ₊₁`.
///
/// It is a projection only when each new direction is orthogonal to the
/// previous span or parallel to it (as for `T = λI`); kept for comparison.
pub fn recursive_trace<F: Real>(op: &Operator<F>, f: &Element<F>, imax: usize) -> Result<Vec<Element<F>>> {
    let mut out = Vec::with_capacity(imax + 1);
    let mut g = Element::zero(f.space().clone());
    let mut x = f.clone();
    for _ in 0..=imax {
        let tx = op.apply(&x)?;
        let v = x.sub(&tx)?;
        let vv = v.norm_sq();
        if vv > F::zero() {
            let coef = f.sub(&g)?.inner_unchecked(&v) / vv;
            g.axpy(&coef, &v)?;
        }
        out.push(g.clone());
        x = tx;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::hilbert::{DenseMatrix, MeasureSpace, OperatorClass, SpaceRef};
    use crate::operators::{random_element, SystemRecipe};

    fn two_cycle() -> (SpaceRef<f64>, Operator<f64>, Element<f64>) {
        let sys = SystemRecipe::CyclicPermutation { period: 2 }.build::<f64>().unwrap();
        let f = Element::from_f64s(sys.space.clone(), &[1.0, -1.0]).unwrap();
        (sys.space, sys.operator, f)
    }

    #[test]
    fn difference_vector_examples() {
        let (s, op, f) = two_cycle();
        assert_eq!(difference_vector(&op, &f, 0).unwrap().coords(), &[2.0, -2.0]);
        assert_eq!(difference_vector(&op, &f, 1).unwrap().coords(), &[-2.0, 2.0]);
        let id = Operator::identity(s);
        assert_eq!(difference_vector(&id, &f, 3).unwrap().norm(), 0.0);
    }

    #[test]
    fn identity_trace_is_all_skipped() {
        let (s, _, f) = two_cycle();
        let id = Operator::identity(s);
        let t = compute_trace(&id, &f, 5, DEFAULT_DELTA_MIN).unwrap();
        assert_eq!(t.skipped(), &[0, 1, 2, 3, 4, 5]);
        for i in 0..=5 {
            assert_eq!(t.a(i), 0.0);
            assert_eq!(t.g(i).norm(), 0.0);
            assert_eq!(t.u(i).norm(), 0.0);
            assert_eq!(t.coefficients(i), vec![0.0; i + 1]);
        }
        assert_eq!(projection_oracle(&id, &f, 3).unwrap().norm(), 0.0);
    }

    #[test]
    fn two_cycle_first_projection_is_f() {
        let (_, op, f) = two_cycle();
        let t = compute_trace(&op, &f, 3, DEFAULT_DELTA_MIN).unwrap();
        assert!((t.a(0) - 1.0).abs() < 1e-15);
        assert!(t.g(0).distance(&f).unwrap() < 1e-15);
        assert!((t.coefficients(0)[0] - 0.5).abs() < 1e-15);
        assert!(t.u(0).distance(&f.scale(&0.5)).unwrap() < 1e-15);
        assert_eq!(t.skipped(), &[1, 2, 3]);
        let o = projection_oracle(&op, &f, 0).unwrap();
        assert!(o.distance(&f).unwrap() < 1e-9);
    }

    #[test]
    fn rejects_zero_f() {
        let (s, op, _) = two_cycle();
        let z = Element::zero(s);
        assert!(compute_trace(&op, &z, 2, DEFAULT_DELTA_MIN).is_err());
    }

    #[test]
    fn oracle_matches_trace_on_random_orthogonal() {
        let sys = SystemRecipe::RandomOrthogonal { dim: 6, seed: 7 }.build::<f64>().unwrap();
        let f = random_element(&sys.space, 11).unwrap();
        let t = compute_trace(&sys.operator, &f, 3, DEFAULT_DELTA_MIN).unwrap();
        let o = projection_oracle(&sys.operator, &f, 3).unwrap();
        assert!(t.g(3).distance(&o).unwrap() <= 1e-6 * f.norm());
    }

    #[test]
    fn coboundary_and_orthogonality() {
        let sys = SystemRecipe::RandomContraction { dim: 5, seed: 3 }.build::<f64>().unwrap();
        let f = random_element(&sys.space, 4).unwrap();
        let t = compute_trace(&sys.operator, &f, 12, DEFAULT_DELTA_MIN).unwrap();
        let nf = f.norm();
        for i in 0..=12 {
            let u = t.u(i);
            let cob = u.sub(&sys.operator.apply(u).unwrap()).unwrap();
            assert!(cob.distance(t.g(i)).unwrap() <= 1e-8 * nf, "step {i}");
            let r = f.sub(t.g(i)).unwrap();
            for k in 0..=i {
                if !t.is_skipped(k) {
                    let v = difference_vector(&sys.operator, &f, k).unwrap();
                    assert!(r.inner(&v).unwrap().abs() <= 1e-8 * nf * nf);
                }
            }
            if i > 0 {
                assert!(t.a(i) >= t.a(i - 1) - 1e-9 * nf);
            }
        }
    }

    #[test]
    fn recursion_is_exact_for_scalar_multiples_of_identity() {
        let space: SpaceRef<f64> = Arc::new(MeasureSpace::uniform(3).unwrap());
        let m = DenseMatrix::from_rows(vec![
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.0],
            vec![0.0, 0.0, 0.5],
        ])
        .unwrap();
        let op = Operator::dense(space.clone(), m, OperatorClass::Nonexpansive).unwrap();
        let f = Element::from_f64s(space, &[1.0, 2.0, -1.0]).unwrap();
        let rec = recursive_trace(&op, &f, 4).unwrap();
        let t = compute_trace(&op, &f, 4, DEFAULT_DELTA_MIN).unwrap();
        for (i, g) in rec.iter().enumerate() {
            assert!(g.distance(t.g(i)).unwrap() < 1e-12);
            assert!(g.distance(&f).unwrap() < 1e-12);
        }
    }

    #[test]
    fn csv_export() {
        let (_, op, f) = two_cycle();
        let t = compute_trace(&op, &f, 1, DEFAULT_DELTA_MIN).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,a_i,u_norm,skipped");
        assert_eq!(lines[1], "0,1,0.5,false");
        assert_eq!(lines[2], "1,1,0.5,true");
    }
}
