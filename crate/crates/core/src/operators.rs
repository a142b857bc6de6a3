//! Concrete dynamical systems: permutations, exact rotations on cyclic atom
//! groups, the doubling map, and seeded random matrices.
//!
//! Random recipes draw matrix entries uniformly from `[-1, 1)` using ChaCha8
//! seeded through `seed_from_u64`, so a `(dim, seed)` pair names the same
//! matrix on every platform.

use std::sync::Arc;

use num_integer::Integer;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    DenseMatrix, Element, KoopmanMap, MeasureSpace, Operator, OperatorClass, SpaceRef,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemRecipe {
    Identity { dim: usize },
    CyclicPermutation { period: usize },
    DiscretizedRotation { numerator: u64, denominator: u64, atoms: usize },
    RandomOrthogonal { dim: usize, seed: u64 },
    RandomContraction { dim: usize, seed: u64 },
    DoublingMap { atoms: usize },
    /// Random weight-preserving permutation on atoms with unequal weights.
    RandomPermutation { atoms: usize, seed: u64 },
}

/// A space together with an operator on it.
#[derive(Debug, Clone)]
pub struct System<S> {
    pub space: SpaceRef<S>,
    pub operator: Operator<S>,
}

impl SystemRecipe {
    pub fn build<S: Scalar>(&self) -> Result<System<S>> {
        match *self {
            SystemRecipe::Identity { dim } => {
                let space = uniform_space(dim)?;
                let operator = Operator::identity(space.clone());
                Ok(System { space, operator })
            }
            SystemRecipe::CyclicPermutation { period } => {
                let space = uniform_space(period)?;
                let map = (0..period).map(|x| (x + 1) % period).collect();
                let operator = Operator::koopman(space.clone(), KoopmanMap::new(map))?;
                Ok(System { space, operator })
            }
            SystemRecipe::DiscretizedRotation {
                numerator,
                denominator,
                atoms,
            } => {
                let map = rotation_map(numerator, denominator, atoms)?;
                let space = uniform_space(atoms)?;
                let operator = Operator::koopman(space.clone(), map)?;
                Ok(System { space, operator })
            }
            SystemRecipe::RandomOrthogonal { dim, seed } => {
                let space = uniform_space(dim)?;
                let rows = random_orthogonal_rows(dim, seed)?;
                let operator = dense_from_f64(space.clone(), rows, OperatorClass::Isometry)?;
                Ok(System { space, operator })
            }
            SystemRecipe::RandomContraction { dim, seed } => {
                let space = uniform_space(dim)?;
                let rows = random_contraction_rows(dim, seed)?;
                let operator = dense_from_f64(space.clone(), rows, OperatorClass::Nonexpansive)?;
                Ok(System { space, operator })
            }
            SystemRecipe::DoublingMap { atoms } => {
                let map = doubling_map(atoms)?;
                let space = uniform_space(atoms)?;
                let operator = Operator::koopman(space.clone(), map)?;
                Ok(System { space, operator })
            }
            SystemRecipe::RandomPermutation { atoms, seed } => {
                let (weights, map) = random_weighted_permutation(atoms, seed)?;
                let weights = weights.iter().map(S::from_rational).collect();
                let space = Arc::new(MeasureSpace::new(weights)?);
                let operator = Operator::koopman(space.clone(), map)?;
                Ok(System { space, operator })
            }
        }
    }

    pub fn atom_count(&self) -> usize {
        match *self {
            SystemRecipe::Identity { dim }
            | SystemRecipe::RandomOrthogonal { dim, .. }
            | SystemRecipe::RandomContraction { dim, .. } => dim,
            SystemRecipe::CyclicPermutation { period } => period,
            SystemRecipe::DiscretizedRotation { atoms, .. }
            | SystemRecipe::DoublingMap { atoms }
            | SystemRecipe::RandomPermutation { atoms, .. } => atoms,
        }
    }

    /// True when the system has a single orbit through all atoms, which is
    /// ergodicity for a finite uniform model.
    pub fn is_ergodic(&self) -> bool {
        match *self {
            SystemRecipe::Identity { dim } => dim == 1,
            SystemRecipe::CyclicPermutation { .. } => true,
            SystemRecipe::DiscretizedRotation {
                numerator,
                denominator,
                atoms,
            } => rotation_map(numerator, denominator, atoms)
                .ok()
                .and_then(|m| m.cycles())
                .is_some_and(|c| c.len() == 1),
            SystemRecipe::DoublingMap { atoms } => atoms <= 2,
            SystemRecipe::RandomPermutation { atoms, seed } => random_weighted_permutation(atoms, seed)
                .ok()
                .and_then(|(_, m)| m.cycles())
                .is_some_and(|c| c.len() == 1),
            SystemRecipe::RandomOrthogonal { .. } | SystemRecipe::RandomContraction { .. } => false,
        }
    }
}

fn uniform_space<S: Scalar>(atoms: usize) -> Result<SpaceRef<S>> {
    if atoms == 0 {
        return Err(Error::invalid("system needs at least one atom"));
    }
    Ok(Arc::new(MeasureSpace::uniform(atoms)?))
}

/// Shift by `m·p` atoms on a cycle of `m·q` atoms: rotation by `p/q`.
pub fn rotation_map(numerator: u64, denominator: u64, atoms: usize) -> Result<KoopmanMap> {
    if denominator == 0 {
        return Err(Error::invalid("rotation denominator must be positive"));
    }
    if atoms == 0 || !(atoms as u64).is_multiple_of(denominator) {
        return Err(Error::invalid(format!(
            "atom count {atoms} is not a positive multiple of the denominator {denominator}"
        )));
    }
    let per_unit = atoms as u64 / denominator;
    let shift = ((numerator % denominator) * per_unit) as usize;
    Ok(KoopmanMap::new((0..atoms).map(|x| (x + shift) % atoms).collect()))
}

/// Doubling map x ↦ 2x mod 1 on 2ᵏ dyadic atoms.
///
/// The literal index map i ↦ 2i mod 2ᵏ is two-to-one onto the even atoms and
/// loses mass, so the atom model uses the binary-digit shift that rotates the
/// k-bit index left by one. It is measure preserving and follows the same
/// leading-digit dynamics on cylinder sets.
pub fn doubling_map(atoms: usize) -> Result<KoopmanMap> {
    if atoms == 0 || !atoms.is_power_of_two() {
        return Err(Error::invalid(format!(
            "doubling map needs a power-of-two atom count, got {atoms}"
        )));
    }
    let bits = atoms.trailing_zeros();
    if bits == 0 {
        return Ok(KoopmanMap::identity(1));
    }
    let mask = atoms - 1;
    Ok(KoopmanMap::new(
        (0..atoms)
            .map(|i| ((i << 1) | (i >> (bits - 1))) & mask)
            .collect(),
    ))
}

/// Atoms get one of four weight classes with weights proportional to 1..=4;
/// the map shuffles each class into a random permutation of itself, so it
/// preserves the weights exactly.
pub fn random_weighted_permutation(atoms: usize, seed: u64) -> Result<(Vec<BigRational>, KoopmanMap)> {
    if atoms == 0 {
        return Err(Error::invalid("system needs at least one atom"));
    }
    let mut rng = seeded_rng(seed);
    let classes: Vec<u64> = (0..atoms).map(|_| rng.random_range(1..=4)).collect();
    let total: u64 = classes.iter().sum();
    let weights = classes
        .iter()
        .map(|&c| BigRational::new(c.into(), total.into()))
        .collect();
    let mut map = vec![0; atoms];
    for class in 1..=4 {
        let members: Vec<usize> = (0..atoms).filter(|&x| classes[x] == class).collect();
        let mut images = members.clone();
        images.shuffle(&mut rng);
        for (x, y) in members.into_iter().zip(images) {
            map[x] = y;
        }
    }
    Ok((weights, KoopmanMap::new(map)))
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_square(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Orthonormalizes the columns with two passes of modified Gram–Schmidt.
fn orthonormal_columns(mut cols: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let dim = cols.len();
    for j in 0..dim {
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, q) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= dot * q;
                }
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::Singular(format!(
                "random matrix column {j} is numerically dependent"
            )));
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(cols)
}

pub fn random_orthogonal_rows(dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut rng = seeded_rng(seed);
    let q = orthonormal_columns(random_square(dim, &mut rng))?;
    // Columns of q are orthonormal, so q itself (rows = transposed columns)
    // is orthogonal as well.
    Ok((0..dim).map(|i| (0..dim).map(|j| q[j][i]).collect()).collect())
}

pub fn random_contraction_rows(dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rows = random_orthogonal_rows(dim, seed)?;
    // Independent stream for the row factors so they do not depend on how
    // many draws the orthogonalization consumed.
    let mut rng = seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    for row in &mut rows {
        let factor = 1.0 - rng.random_range(0.0..1.0);
        row.iter_mut().for_each(|x| *x *= factor);
    }
    Ok(rows)
}

fn dense_from_f64<S: Scalar>(
    space: SpaceRef<S>,
    rows: Vec<Vec<f64>>,
    class: OperatorClass,
) -> Result<Operator<S>> {
    let rows = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|x| S::from_f64(x).ok_or_else(|| Error::invalid("non-finite entry")))
                .collect::<Result<Vec<S>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Operator::dense(space, DenseMatrix::from_rows(rows)?, class)
}

/// Seeded random contraction on `dim` uniform atoms.
pub fn random_contraction(dim: usize, seed: u64) -> Result<Operator<f64>> {
    Ok(SystemRecipe::RandomContraction { dim, seed }.build::<f64>()?.operator)
}

/// Seeded element with coordinates uniform in `[-1, 1)`.
pub fn random_element<S: Scalar>(space: &SpaceRef<S>, seed: u64) -> Result<Element<S>> {
    let mut rng = seeded_rng(seed);
    let values: Vec<f64> = (0..space.atom_count())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Element::from_f64s(space.clone(), &values)
}

/// Named shapes for the function `f` in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionPattern {
    /// 1 on the first half of the atoms, 0 elsewhere.
    HalfIndicator,
    /// The half indicator minus its mean.
    CenteredHalfIndicator,
    /// (1, −1, 1, −1, …)
    Alternating,
    /// 1 on one atom.
    Delta { atom: usize },
    Constant { value: f64 },
    Random { seed: u64 },
}

impl FunctionPattern {
    pub fn build<S: Scalar>(&self, space: &SpaceRef<S>) -> Result<Element<S>> {
        let n = space.atom_count();
        let half = n.div_ceil(2);
        let coords: Vec<S> = match self {
            FunctionPattern::HalfIndicator => {
                (0..n).map(|i| if i < half { S::one() } else { S::zero() }).collect()
            }
            FunctionPattern::CenteredHalfIndicator => {
                let ind: Vec<S> =
                    (0..n).map(|i| if i < half { S::one() } else { S::zero() }).collect();
                let mean = space
                    .weights()
                    .iter()
                    .zip(&ind)
                    .fold(S::zero(), |acc, (w, v)| acc + w.clone() * v.clone());
                ind.into_iter().map(|v| v - mean.clone()).collect()
            }
            FunctionPattern::Alternating => (0..n)
                .map(|i| if i.is_even() { S::one() } else { -S::one() })
                .collect(),
            FunctionPattern::Delta { atom } => {
                if *atom >= n {
                    return Err(Error::invalid(format!("atom {atom} outside {n} atoms")));
                }
                (0..n).map(|i| if i == *atom { S::one() } else { S::zero() }).collect()
            }
            FunctionPattern::Constant { value } => {
                let v = S::from_f64(*value).ok_or_else(|| Error::invalid("non-finite constant"))?;
                vec![v; n]
            }
            FunctionPattern::Random { seed } => return random_element(space, *seed),
        };
        Element::new(space.clone(), coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{ergodic_average, operator_norm_estimate, OperatorKind};
    use crate::Rational;

    #[test]
    fn identity_recipe() {
        let sys = SystemRecipe::Identity { dim: 3 }.build::<f64>().unwrap();
        assert_eq!(sys.space.atom_count(), 3);
        let f = Element::from_f64s(sys.space.clone(), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sys.operator.apply(&f).unwrap(), f);
    }

    #[test]
    fn two_cycle_is_swap() {
        let sys = SystemRecipe::CyclicPermutation { period: 2 }.build::<f64>().unwrap();
        let f = Element::from_f64s(sys.space.clone(), &[1.0, -1.0]).unwrap();
        assert_eq!(sys.operator.apply(&f).unwrap().coords(), &[-1.0, 1.0]);
    }

    #[test]
    fn quarter_rotation_on_eight_atoms_shifts_by_two() {
        let map = rotation_map(1, 4, 8).unwrap();
        assert_eq!(map.as_slice(), &[2, 3, 4, 5, 6, 7, 0, 1]);
        assert!(rotation_map(1, 3, 8).is_err());
        assert!(rotation_map(1, 0, 8).is_err());
    }

    #[test]
    fn rotation_orbit_closes() {
        for (p, q) in [(1u64, 4u64), (2, 6), (3, 8), (5, 12), (0, 3)] {
            let sys = SystemRecipe::DiscretizedRotation {
                numerator: p,
                denominator: q,
                atoms: q as usize,
            }
            .build::<Rational>()
            .unwrap();
            let order = (q / num_integer::gcd(p, q)) as usize;
            let f = random_element(&sys.space, 3).unwrap();
            assert_eq!(sys.operator.power_apply(&f, order).unwrap(), f);
        }
    }

    #[test]
    fn doubling_map_is_measure_preserving_rotation_of_bits() {
        let m = doubling_map(8).unwrap();
        assert_eq!(m.as_slice(), &[0, 2, 4, 6, 1, 3, 5, 7]);
        assert!(m.is_permutation());
        assert!(doubling_map(6).is_err());
        let sys = SystemRecipe::DoublingMap { atoms: 256 }.build::<Rational>().unwrap();
        assert!(sys.operator.is_pointwise());
    }

    #[test]
    fn random_contraction_examples() {
        let op = random_contraction(1, 5).unwrap();
        match op.kind() {
            OperatorKind::Dense(m) => assert!(m.get(0, 0).abs() <= 1.0),
            other => panic!("unexpected kind {other:?}"),
        }
        let a = random_contraction(8, 42).unwrap();
        let b = random_contraction(8, 42).unwrap();
        assert_eq!(a.kind(), b.kind());
        let est = operator_norm_estimate(&a, 5000, 1e-14).unwrap();
        assert!(est.value <= 1.0 + 1e-9 && est.value > 0.0);
    }

    #[test]
    fn random_orthogonal_is_isometry() {
        let sys = SystemRecipe::RandomOrthogonal { dim: 6, seed: 7 }.build::<f64>().unwrap();
        let f = random_element(&sys.space, 1).unwrap();
        let tf = sys.operator.apply(&f).unwrap();
        assert!((tf.norm() - f.norm()).abs() < 1e-12);
    }

    #[test]
    fn patterns() {
        let space: SpaceRef<Rational> = Arc::new(MeasureSpace::uniform(4).unwrap());
        let f = FunctionPattern::CenteredHalfIndicator.build(&space).unwrap();
        assert_eq!(f.integral(), Rational::from_integer(0.into()));
        let g = FunctionPattern::Alternating.build(&space).unwrap();
        assert_eq!(g.norm_sq(), Rational::from_integer(1.into()));
        assert!(FunctionPattern::Delta { atom: 4 }.build(&space).is_err());
    }

    #[test]
    fn ergodicity_flags() {
        assert!(SystemRecipe::DiscretizedRotation { numerator: 1, denominator: 8, atoms: 8 }.is_ergodic());
        assert!(!SystemRecipe::DiscretizedRotation { numerator: 1, denominator: 4, atoms: 8 }.is_ergodic());
        let sys = SystemRecipe::CyclicPermutation { period: 5 }.build::<f64>().unwrap();
        let f = FunctionPattern::Delta { atom: 0 }.build(&sys.space).unwrap();
        let avg = ergodic_average(&sys.operator, &f, 5).unwrap();
        assert!(avg.coords().iter().all(|c| (c - 0.2).abs() < 1e-15));
    }

    #[test]
    fn random_permutations_preserve_unequal_weights() {
        for seed in 0..20 {
            let sys = SystemRecipe::RandomPermutation { atoms: 17, seed }.build::<Rational>().unwrap();
            assert!(sys.operator.point_map().unwrap().is_permutation());
            let total = sys.space.weights().iter().fold(Rational::from_integer(0.into()), |a, w| a + w);
            assert_eq!(total, Rational::from_integer(1.into()));
        }
        let sys = SystemRecipe::RandomPermutation { atoms: 40, seed: 1 }.build::<Rational>().unwrap();
        assert!(!sys.space.is_uniform());
    }

    #[test]
    fn recipes_round_trip_through_json() {
        let r: SystemRecipe =
            serde_json::from_str(r#"{"kind":"discretized_rotation","numerator":1,"denominator":4,"atoms":8}"#)
                .unwrap();
        assert_eq!(r, SystemRecipe::DiscretizedRotation { numerator: 1, denominator: 4, atoms: 8 });
        assert!(serde_json::from_str::<SystemRecipe>(r#"{"kind":"identity","dim":2,"x":1}"#).is_err());
    }
}
