//! Seeded test systems and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use ergodic_core::operators::{random_element, random_orthogonal_rows, SystemRecipe};
use ergodic_core::{DenseMatrix, Element, MeasureSpace, Operator, OperatorClass, SpaceRef};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A seeded nonexpansive system (contraction, orthogonal matrix or weighted
/// permutation) with dimension at most `max_dim`, and a seeded `f`.
pub fn random_system(seed: u64, max_dim: usize) -> (Operator<f64>, Element<f64>) {
    let dim = 1 + (seed as usize * 7 + 3) % max_dim;
    let recipe = match seed % 3 {
        0 => SystemRecipe::RandomContraction { dim, seed },
        1 => SystemRecipe::RandomOrthogonal { dim, seed },
        _ => SystemRecipe::RandomPermutation { atoms: dim, seed },
    };
    let system = recipe.build::<f64>().expect("recipe builds");
    let f = random_element(&system.space, seed.wrapping_add(1)).expect("element");
    (system.operator, f)
}

/// `Q·diag(I_k, R)·Qᵀ` on uniform atoms, where `R` is a direct sum of plane
/// rotations with angles in `[0.3, π − 0.3]` (plus `−1` for an odd leftover).
/// The fixed space is spanned by the first `k` columns of `Q`.
pub fn isometry_with_fixed_space(dim: usize, fixed: usize, seed: u64) -> Operator<f64> {
    assert!(fixed <= dim);
    let q = random_orthogonal_rows(dim, seed).expect("orthogonal");
    let mut r = rng(seed ^ 0x5eed);
    let mut core = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..fixed {
        core[(i, i)] = 1.0;
    }
    let mut i = fixed;
    while i + 1 < dim {
        let theta: f64 = r.random_range(0.3..std::f64::consts::PI - 0.3);
        let (s, c) = theta.sin_cos();
        core[(i, i)] = c;
        core[(i, i + 1)] = -s;
        core[(i + 1, i)] = s;
        core[(i + 1, i + 1)] = c;
        i += 2;
    }
    if i < dim {
        core[(i, i)] = -1.0;
    }
    let qm = DMatrix::from_fn(dim, dim, |a, b| q[a][b]);
    let t = &qm * core * qm.transpose();
    let rows = (0..dim).map(|a| (0..dim).map(|b| t[(a, b)]).collect()).collect();
    let space: SpaceRef<f64> = Arc::new(MeasureSpace::uniform(dim).expect("space"));
    Operator::dense(space, DenseMatrix::from_rows(rows).expect("square"), OperatorClass::Isometry)
        .expect("isometry validates")
}

/// Matrix of `T` in the √weight-scaled coordinates, where the weighted inner
/// product becomes the Euclidean one.
fn whitened_matrix(op: &Operator<f64>) -> DMatrix<f64> {
    let dim = op.dim();
    let space = op.space().clone();
    let root: Vec<f64> = space.weights().iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = op.apply(&Element::new(space.clone(), e).unwrap()).unwrap();
        for i in 0..dim {
            m[(i, j)] = root[i] * col.coords()[i] / root[j];
        }
    }
    m
}

/// Orthogonal projection of `y` onto the span of the eigenvectors of the
/// symmetric matrix `m` whose eigenvalues satisfy `keep`.
fn eigen_projection(m: DMatrix<f64>, y: &DVector<f64>, keep: impl Fn(f64, f64) -> bool) -> DVector<f64> {
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut p = DVector::zeros(y.len());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if keep(lambda, top) {
            let v = eig.eigenvectors.column(k);
            p += v * v.dot(y);
        }
    }
    p
}

fn whiten(f: &Element<f64>) -> (Vec<f64>, DVector<f64>) {
    let root: Vec<f64> = f.space().weights().iter().map(|w| w.sqrt()).collect();
    let y = DVector::from_fn(f.dim(), |i, _| root[i] * f.coords()[i]);
    (root, y)
}

fn unwhiten(f: &Element<f64>, root: &[f64], p: &DVector<f64>) -> Element<f64> {
    let coords = (0..f.dim()).map(|i| p[i] / root[i]).collect();
    Element::new(f.space().clone(), coords).unwrap()
}

/// Projection of `f` onto the fixed space of `T`: the eigenvectors of
/// `(I − T)ᵀ(I − T)` with eigenvalue below `1e-12` (singular value `1e-6`).
/// `nalgebra`'s SVD is avoided here: it returns wrong factors on some
/// rank-deficient inputs.
pub fn fixed_space_projection(op: &Operator<f64>, f: &Element<f64>) -> Element<f64> {
    let dim = op.dim();
    let a = DMatrix::identity(dim, dim) - whitened_matrix(op);
    let (root, y) = whiten(f);
    let p = eigen_projection(a.transpose() * &a, &y, |lambda, _| lambda < 1e-12);
    unwhiten(f, &root, &p)
}

/// Projection of `f` onto `span{v₀..vᵢ}`, `vₖ = Tᵏf − Tᵏ⁺¹f`, from the range
/// of `VVᵀ` (eigenvalues above `1e-14` of the largest, i.e. singular values
/// above `1e-7` of the largest; squaring puts eigen roundoff near `1e-16`).
pub fn span_projection(op: &Operator<f64>, f: &Element<f64>, i: usize) -> Element<f64> {
    let dim = op.dim();
    let (root, y) = whiten(f);
    let mut cols = Vec::with_capacity(i + 1);
    let mut x = f.clone();
    for _ in 0..=i {
        let tx = op.apply(&x).unwrap();
        cols.push(x.sub(&tx).unwrap());
        x = tx;
    }
    let v = DMatrix::from_fn(dim, i + 1, |r, c| root[r] * cols[c].coords()[r]);
    let p = eigen_projection(&v * v.transpose(), &y, |lambda, top| top > 0.0 && lambda > 1e-14 * top);
    unwhiten(f, &root, &p)
}

/// Largest number of disjoint transits `s < t` with `x_s < α` and `x_t > β`,
/// by exhaustive search over all choices (memoized on the start index).
pub fn exhaustive_upcrossings(xs: &[f64], alpha: f64, beta: f64) -> usize {
    let n = xs.len();
    let mut best_from = vec![0usize; n + 2];
    for from in (0..n).rev() {
        let mut best = 0;
        for s in from..n {
            if xs[s] < alpha {
                for t in s + 1..n {
                    if xs[t] > beta {
                        best = best.max(1 + best_from[t + 1]);
                    }
                }
            }
        }
        best_from[from] = best;
    }
    best_from[0]
}

pub fn exhaustive_downcrossings(xs: &[f64], alpha: f64, beta: f64) -> usize {
    let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
    exhaustive_upcrossings(&flipped, -beta, -alpha)
}

/// Largest number of pairs `m₁ < n₁ ≤ m₂ < n₂ ≤ …` with `|x_m − x_n| ≥ ε`,
/// by exhaustive search (memoized on the start index).
pub fn exhaustive_fluctuations(xs: &[f64], eps: f64) -> usize {
    let len = xs.len();
    let mut best_from = vec![0usize; len + 1];
    for from in (0..len).rev() {
        let mut best = 0;
        for m in from..len {
            for n in m + 1..len {
                if (xs[m] - xs[n]).abs() >= eps {
                    best = best.max(1 + best_from[n]);
                }
            }
        }
        best_from[from] = best;
    }
    best_from[0]
}

/// Running means of a series.
pub fn running_averages(xs: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    xs.iter()
        .enumerate()
        .map(|(k, x)| {
            total += x;
            total / (k + 1) as f64
        })
        .collect()
}
