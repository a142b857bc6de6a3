//! Finite-dimensional weighted inner-product spaces, the operators acting on
//! them, and ergodic averaging.
//!
//! A [`MeasureSpace`] is a list of atom weights. With uniform weights `1/d`
//! it is just `R^d` with a rescaled Euclidean norm; with general weights the
//! same vectors are functions on a finite probability space, and the L¹, L²
//! and L∞ norms are exact finite sums.

use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Relative slack for the nonexpansive and isometry checks on dense matrices.
pub const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpace<S> {
    weights: Vec<S>,
}

impl<S: Scalar> MeasureSpace<S> {
    pub fn new(weights: Vec<S>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        if let Some(i) = weights
            .iter()
            .position(|w| !w.is_finite_value() || *w <= S::zero())
        {
            return Err(Error::InvalidSpace(format!(
                "weight {i} is not positive: {:?}",
                weights[i]
            )));
        }
        let total = weights.iter().fold(S::zero(), |acc, w| acc + w.clone());
        let tol = if S::EXACT {
            S::zero()
        } else {
            S::from_f64(1e-12).unwrap_or_else(S::slack)
        };
        if (total.clone() - S::one()).abs() > tol {
            return Err(Error::InvalidSpace(format!(
                "weights sum to {total:?}, not 1"
            )));
        }
        Ok(MeasureSpace { weights })
    }

    pub fn uniform(atoms: usize) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        let w = S::one() / S::from_usize(atoms);
        Ok(MeasureSpace {
            weights: vec![w; atoms],
        })
    }

    pub fn atom_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn weight(&self, atom: usize) -> &S {
        &self.weights[atom]
    }

    /// μ of a set of atoms.
    pub fn measure_of<I: IntoIterator<Item = usize>>(&self, atoms: I) -> S {
        atoms
            .into_iter()
            .fold(S::zero(), |acc, i| acc + self.weights[i].clone())
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.windows(2).all(|p| p[0] == p[1])
    }
}

pub type SpaceRef<S> = Arc<MeasureSpace<S>>;

fn same_space<S: Scalar>(a: &SpaceRef<S>, b: &SpaceRef<S>) -> bool {
    Arc::ptr_eq(a, b) || a.weights == b.weights
}

/// A vector of the space: one coordinate per atom.
#[derive(Debug, Clone)]
pub struct Element<S> {
    coords: Vec<S>,
    space: SpaceRef<S>,
}

impl<S: Scalar> PartialEq for Element<S> {
    fn eq(&self, other: &Self) -> bool {
        self.coords == other.coords && same_space(&self.space, &other.space)
    }
}

impl<S: Scalar> Element<S> {
    pub fn new(space: SpaceRef<S>, coords: Vec<S>) -> Result<Self> {
        if coords.len() != space.atom_count() {
            return Err(Error::DimensionMismatch {
                expected: space.atom_count(),
                found: coords.len(),
            });
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite_value()) {
            return Err(Error::invalid(format!("coordinate {i} is not finite")));
        }
        Ok(Element { coords, space })
    }

    pub fn from_f64s(space: SpaceRef<S>, values: &[f64]) -> Result<Self> {
        let coords = values
            .iter()
            .map(|&x| S::from_f64(x).ok_or_else(|| Error::invalid("non-finite coordinate")))
            .collect::<Result<Vec<_>>>()?;
        Element::new(space, coords)
    }

    pub fn zero(space: SpaceRef<S>) -> Self {
        let coords = vec![S::zero(); space.atom_count()];
        Element { coords, space }
    }

    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<S> {
        self.coords
    }

    pub fn space(&self) -> &SpaceRef<S> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn check_compatible(&self, other: &Element<S>) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    /// ⟨f, g⟩ = Σ wᵢ fᵢ gᵢ.
    pub fn inner(&self, other: &Element<S>) -> Result<S> {
        self.check_compatible(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Element<S>) -> S {
        self.space
            .weights
            .iter()
            .zip(self.coords.iter().zip(&other.coords))
            .fold(S::zero(), |acc, (w, (a, b))| {
                acc + w.clone() * a.clone() * b.clone()
            })
    }

    pub fn norm_sq(&self) -> S {
        self.inner_unchecked(self)
    }

    pub fn norm_l1(&self) -> S {
        self.space
            .weights
            .iter()
            .zip(&self.coords)
            .fold(S::zero(), |acc, (w, c)| acc + w.clone() * c.abs())
    }

    pub fn norm_inf(&self) -> S {
        self.coords
            .iter()
            .fold(S::zero(), |acc, c| S::max_of(acc, c.abs()))
    }

    /// ∫ f dμ.
    pub fn integral(&self) -> S {
        self.space
            .weights
            .iter()
            .zip(&self.coords)
            .fold(S::zero(), |acc, (w, c)| acc + w.clone() * c.clone())
    }

    pub fn add(&self, other: &Element<S>) -> Result<Element<S>> {
        self.check_compatible(other)?;
        Ok(self.zip_with(other, |a, b| a.clone() + b.clone()))
    }

    pub fn sub(&self, other: &Element<S>) -> Result<Element<S>> {
        self.check_compatible(other)?;
        Ok(self.zip_with(other, |a, b| a.clone() - b.clone()))
    }

    pub fn scale(&self, factor: &S) -> Element<S> {
        let coords = self.coords.iter().map(|c| c.clone() * factor.clone()).collect();
        Element {
            coords,
            space: self.space.clone(),
        }
    }

    /// self += a·x
    pub fn axpy(&mut self, a: &S, x: &Element<S>) -> Result<()> {
        self.check_compatible(x)?;
        for (c, xi) in self.coords.iter_mut().zip(&x.coords) {
            *c = c.clone() + a.clone() * xi.clone();
        }
        Ok(())
    }

    fn zip_with(&self, other: &Element<S>, op: impl Fn(&S, &S) -> S) -> Element<S> {
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| op(a, b))
            .collect();
        Element {
            coords,
            space: self.space.clone(),
        }
    }

    pub fn map_coords(&self, op: impl Fn(&S) -> S) -> Element<S> {
        Element {
            coords: self.coords.iter().map(op).collect(),
            space: self.space.clone(),
        }
    }
}

impl<F: Real> Element<F> {
    pub fn norm(&self) -> F {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &Element<F>) -> Result<F> {
        Ok(self.sub(other)?.norm())
    }
}

/// Free-function form of [`Element::inner`].
pub fn inner<S: Scalar>(f: &Element<S>, g: &Element<S>) -> Result<S> {
    f.inner(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorClass {
    #[default]
    Nonexpansive,
    Isometry,
}

/// Square matrix acting on coordinates: `(Tf)ᵢ = Σⱼ Mᵢⱼ fⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    dim: usize,
    entries: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidOperator("empty matrix".into()));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidOperator(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite_value()) {
                return Err(Error::InvalidOperator(format!("row {i} has a non-finite entry")));
            }
            entries.extend(row);
        }
        Ok(DenseMatrix { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> &S {
        &self.entries[row * self.dim + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.entries.chunks(self.dim)
    }

    fn mul_vec(&self, x: &[S]) -> Vec<S> {
        self.entries
            .chunks(self.dim)
            .map(|row| {
                row.iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (m, v)| acc + m.clone() * v.clone())
            })
            .collect()
    }

    fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(Scalar::to_f64).collect()
    }
}

/// Composition with an atom map: `(Tf)(x) = f(τ(x))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KoopmanMap {
    map: Vec<usize>,
}

impl KoopmanMap {
    pub fn new(map: Vec<usize>) -> Self {
        KoopmanMap { map }
    }

    pub fn identity(atoms: usize) -> Self {
        KoopmanMap {
            map: (0..atoms).collect(),
        }
    }

    pub fn image(&self, atom: usize) -> usize {
        self.map[atom]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.map.len()];
        for &y in &self.map {
            if y >= seen.len() || seen[y] {
                return false;
            }
            seen[y] = true;
        }
        true
    }

    /// Orbits of a permutation map, each listed from its smallest atom.
    pub fn cycles(&self) -> Option<Vec<Vec<usize>>> {
        if !self.is_permutation() {
            return None;
        }
        let mut seen = vec![false; self.map.len()];
        let mut out = Vec::new();
        for start in 0..self.map.len() {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut x = start;
            while !seen[x] {
                seen[x] = true;
                cycle.push(x);
                x = self.map[x];
            }
            out.push(cycle);
        }
        Some(out)
    }

    fn compose_apply<S: Clone>(&self, coords: &[S]) -> Vec<S> {
        self.map.iter().map(|&y| coords[y].clone()).collect()
    }
}

/// One cyclic block of a [`BlockRotation`]: atoms `start..start+order`,
/// rotated by `shift` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationBlock {
    pub start: usize,
    pub order: usize,
    pub shift: usize,
}

/// A map that rotates each block of atoms independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRotation {
    blocks: Vec<RotationBlock>,
}

impl BlockRotation {
    pub fn new(blocks: Vec<RotationBlock>) -> Self {
        BlockRotation { blocks }
    }

    pub fn blocks(&self) -> &[RotationBlock] {
        &self.blocks
    }

    pub fn atom_count(&self) -> usize {
        self.blocks.iter().map(|b| b.order).sum()
    }

    pub fn to_koopman(&self) -> KoopmanMap {
        let mut map = Vec::with_capacity(self.atom_count());
        for b in &self.blocks {
            for local in 0..b.order {
                map.push(b.start + (local + b.shift) % b.order);
            }
        }
        KoopmanMap::new(map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind<S> {
    Dense(DenseMatrix<S>),
    Koopman(KoopmanMap),
    BlockRotation(BlockRotation),
}

/// A validated nonexpansive linear operator on a fixed space.
#[derive(Debug, Clone)]
pub struct Operator<S> {
    kind: OperatorKind<S>,
    class: OperatorClass,
    space: SpaceRef<S>,
}

impl<S: Scalar> Operator<S> {
    /// Builds a dense operator, failing if the matrix is not nonexpansive
    /// (or, when claimed, not an isometry) for the space's inner product.
    pub fn dense(space: SpaceRef<S>, matrix: DenseMatrix<S>, class: OperatorClass) -> Result<Self> {
        if matrix.dim() != space.atom_count() {
            return Err(Error::DimensionMismatch {
                expected: space.atom_count(),
                found: matrix.dim(),
            });
        }
        let weights: Vec<f64> = space.weights().iter().map(Scalar::to_f64).collect();
        let m = matrix.to_f64();
        let norm = dense_norm_estimate(&m, &weights, 2000, 1e-14).value;
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::InvalidOperator(format!(
                "operator norm {norm} exceeds 1"
            )));
        }
        if class == OperatorClass::Isometry {
            check_isometry(&m, &weights)?;
        }
        Ok(Operator {
            kind: OperatorKind::Dense(matrix),
            class,
            space,
        })
    }

    /// Builds the Koopman operator of an atom map, which must preserve the
    /// weights: μ(τ⁻¹{y}) = w_y for every atom y.
    pub fn koopman(space: SpaceRef<S>, map: KoopmanMap) -> Result<Self> {
        check_atom_map(&space, &map)?;
        Ok(Operator {
            kind: OperatorKind::Koopman(map),
            class: OperatorClass::Isometry,
            space,
        })
    }

    pub fn block_rotation(space: SpaceRef<S>, rotation: BlockRotation) -> Result<Self> {
        let mut next = 0;
        for (i, b) in rotation.blocks.iter().enumerate() {
            if b.start != next || b.order == 0 {
                return Err(Error::InvalidOperator(format!(
                    "block {i} does not continue the partition at atom {next}"
                )));
            }
            if b.shift >= b.order {
                return Err(Error::InvalidOperator(format!(
                    "block {i} shift {} not below its order {}",
                    b.shift, b.order
                )));
            }
            next += b.order;
        }
        if next != space.atom_count() {
            return Err(Error::DimensionMismatch {
                expected: space.atom_count(),
                found: next,
            });
        }
        check_atom_map(&space, &rotation.to_koopman())?;
        Ok(Operator {
            kind: OperatorKind::BlockRotation(rotation),
            class: OperatorClass::Isometry,
            space,
        })
    }

    pub fn identity(space: SpaceRef<S>) -> Self {
        let map = KoopmanMap::identity(space.atom_count());
        Operator {
            kind: OperatorKind::Koopman(map),
            class: OperatorClass::Isometry,
            space,
        }
    }

    pub fn kind(&self) -> &OperatorKind<S> {
        &self.kind
    }

    pub fn class(&self) -> OperatorClass {
        self.class
    }

    pub fn space(&self) -> &SpaceRef<S> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.atom_count()
    }

    /// The underlying atom map, when the operator has pointwise meaning.
    pub fn point_map(&self) -> Option<Cow<'_, KoopmanMap>> {
        match &self.kind {
            OperatorKind::Dense(_) => None,
            OperatorKind::Koopman(m) => Some(Cow::Borrowed(m)),
            OperatorKind::BlockRotation(r) => Some(Cow::Owned(r.to_koopman())),
        }
    }

    pub fn is_pointwise(&self) -> bool {
        !matches!(self.kind, OperatorKind::Dense(_))
    }

    pub fn apply(&self, f: &Element<S>) -> Result<Element<S>> {
        if f.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: f.dim(),
            });
        }
        if !same_space(&self.space, &f.space) {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.apply_unchecked(f))
    }

    pub(crate) fn apply_unchecked(&self, f: &Element<S>) -> Element<S> {
        let coords = match &self.kind {
            OperatorKind::Dense(m) => m.mul_vec(&f.coords),
            OperatorKind::Koopman(map) => map.compose_apply(&f.coords),
            OperatorKind::BlockRotation(r) => {
                let mut out = Vec::with_capacity(f.coords.len());
                for b in &r.blocks {
                    for local in 0..b.order {
                        out.push(f.coords[b.start + (local + b.shift) % b.order].clone());
                    }
                }
                out
            }
        };
        Element {
            coords,
            space: f.space.clone(),
        }
    }

    /// Tᵏf.
    pub fn power_apply(&self, f: &Element<S>, k: usize) -> Result<Element<S>> {
        let mut x = f.clone();
        for _ in 0..k {
            x = self.apply(&x)?;
        }
        Ok(x)
    }
}

fn check_atom_map<S: Scalar>(space: &MeasureSpace<S>, map: &KoopmanMap) -> Result<()> {
    let n = space.atom_count();
    if map.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: map.len(),
        });
    }
    let mut preimage = vec![S::zero(); n];
    for (x, &y) in map.map.iter().enumerate() {
        if y >= n {
            return Err(Error::InvalidOperator(format!(
                "atom {x} maps outside the space ({y})"
            )));
        }
        preimage[y] = preimage[y].clone() + space.weights[x].clone();
    }
    let tol = if S::EXACT { S::zero() } else { S::slack() };
    for (y, mass) in preimage.iter().enumerate() {
        if (mass.clone() - space.weights[y].clone()).abs() > tol {
            return Err(Error::InvalidOperator(format!(
                "map does not preserve the weight of atom {y}: preimage mass {mass:?}"
            )));
        }
    }
    Ok(())
}

fn check_isometry(m: &[f64], w: &[f64]) -> Result<()> {
    // ‖Tf‖ = ‖f‖ for all f  ⇔  Mᵀ W M = W.
    let n = w.len();
    for i in 0..n {
        for j in 0..n {
            let g: f64 = (0..n).map(|k| m[k * n + i] * w[k] * m[k * n + j]).sum();
            let target = if i == j { w[i] } else { 0.0 };
            let scale = (w[i] * w[j]).sqrt();
            if (g - target).abs() > NORM_SLACK * scale {
                return Err(Error::InvalidOperator(format!(
                    "matrix is not an isometry: Gram entry ({i},{j}) = {g}, expected {target}"
                )));
            }
        }
    }
    Ok(())
}

/// Result of the operator-norm power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Estimates sup ‖Tf‖/‖f‖. Koopman maps of weight-preserving atom maps are
/// isometries, so the answer is exactly 1; dense matrices use power
/// iteration on T*T, where T* is the adjoint for the weighted inner product.
pub fn operator_norm_estimate<S: Scalar>(
    op: &Operator<S>,
    iterations: usize,
    tol: f64,
) -> Result<NormEstimate> {
    if iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    match &op.kind {
        OperatorKind::Koopman(_) | OperatorKind::BlockRotation(_) => Ok(NormEstimate {
            value: 1.0,
            converged: true,
            iterations: 0,
        }),
        OperatorKind::Dense(m) => {
            let w: Vec<f64> = op.space.weights().iter().map(Scalar::to_f64).collect();
            Ok(dense_norm_estimate(&m.to_f64(), &w, iterations, tol))
        }
    }
}

fn dense_norm_estimate(m: &[f64], w: &[f64], iterations: usize, tol: f64) -> NormEstimate {
    let n = w.len();
    let wnorm = |x: &[f64]| -> f64 { x.iter().zip(w).map(|(a, wi)| wi * a * a).sum::<f64>().sqrt() };
    // Irregular start so it is not orthogonal to a top singular vector of a
    // structured matrix.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64 + 1.0).sqrt().fract())).collect();
    let nx = wnorm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    for it in 1..=iterations {
        // y = M x
        let y: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m[i * n + j] * x[j]).sum())
            .collect();
        estimate = wnorm(&y);
        // z = T* y = W⁻¹ Mᵀ W y
        let z: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| m[i * n + j] * w[i] * y[i]).sum::<f64>() / w[j])
            .collect();
        let nz = wnorm(&z);
        if nz == 0.0 {
            return NormEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        x = z.into_iter().map(|v| v / nz).collect();
        if (estimate - prev).abs() <= tol {
            return NormEstimate {
                value: estimate,
                converged: true,
                iterations: it,
            };
        }
        prev = estimate;
    }
    NormEstimate {
        value: estimate,
        converged: false,
        iterations,
    }
}

/// Running sum with Neumaier compensation (plain addition for exact types).
#[derive(Debug, Clone)]
pub(crate) struct CompensatedSum<S> {
    sum: Vec<S>,
    comp: Vec<S>,
}

impl<S: Scalar> CompensatedSum<S> {
    pub(crate) fn new(dim: usize) -> Self {
        CompensatedSum {
            sum: vec![S::zero(); dim],
            comp: if S::EXACT { Vec::new() } else { vec![S::zero(); dim] },
        }
    }

    pub(crate) fn add(&mut self, x: &[S]) {
        if S::EXACT {
            for (s, v) in self.sum.iter_mut().zip(x) {
                *s = s.clone() + v.clone();
            }
            return;
        }
        for ((s, c), v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(x) {
            let t = s.clone() + v.clone();
            if s.abs() >= v.abs() {
                *c = c.clone() + ((s.clone() - t.clone()) + v.clone());
            } else {
                *c = c.clone() + ((v.clone() - t.clone()) + s.clone());
            }
            *s = t;
        }
    }

    pub(crate) fn scaled_total(&self, factor: &S) -> Vec<S> {
        if S::EXACT {
            return self.sum.iter().map(|s| s.clone() * factor.clone()).collect();
        }
        self.sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| (s.clone() + c.clone()) * factor.clone())
            .collect()
    }
}

/// Yields A₁f, A₂f, … one application of T per step.
#[derive(Debug, Clone)]
pub struct AverageStream<'a, S> {
    op: &'a Operator<S>,
    current: Element<S>,
    sum: CompensatedSum<S>,
    count: usize,
}

impl<'a, S: Scalar> AverageStream<'a, S> {
    pub fn new(op: &'a Operator<S>, f: &Element<S>) -> Result<Self> {
        if f.dim() != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                found: f.dim(),
            });
        }
        if !same_space(&op.space, &f.space) {
            return Err(Error::SpaceMismatch);
        }
        Ok(AverageStream {
            op,
            current: f.clone(),
            sum: CompensatedSum::new(f.dim()),
            count: 0,
        })
    }

    /// Index of the next average to be produced.
    pub fn next_index(&self) -> usize {
        self.count + 1
    }
}

impl<S: Scalar> Iterator for AverageStream<'_, S> {
    type Item = Element<S>;

    fn next(&mut self) -> Option<Element<S>> {
        if self.count > 0 {
            self.current = self.op.apply_unchecked(&self.current);
        }
        self.sum.add(&self.current.coords);
        self.count += 1;
        let inv = S::one() / S::from_usize(self.count);
        Some(Element {
            coords: self.sum.scaled_total(&inv),
            space: self.current.space.clone(),
        })
    }
}

/// Aₙf = (1/n) Σ_{i<n} Tⁱf, accumulated in one pass.
pub fn ergodic_average<S: Scalar>(op: &Operator<S>, f: &Element<S>, n: usize) -> Result<Element<S>> {
    if n == 0 {
        return Err(Error::invalid("ergodic average needs n >= 1"));
    }
    let mut x = f.clone();
    op.apply(&x)?;
    let mut sum = CompensatedSum::new(f.dim());
    for i in 0..n {
        if i > 0 {
            x = op.apply_unchecked(&x);
        }
        sum.add(&x.coords);
    }
    let inv = S::one() / S::from_usize(n);
    Ok(Element {
        coords: sum.scaled_total(&inv),
        space: f.space.clone(),
    })
}

/// [A₁f, …, A_N f].
pub fn averages_prefix<S: Scalar>(op: &Operator<S>, f: &Element<S>, count: usize) -> Result<Vec<Element<S>>> {
    if count == 0 {
        return Err(Error::invalid("prefix length must be at least 1"));
    }
    Ok(AverageStream::new(op, f)?.take(count).collect())
}
