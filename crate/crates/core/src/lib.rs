//! Quantitative mean and pointwise ergodic theorems on finite systems.
//!
//! Vector arithmetic, operators and measure computations are generic over
//! [`Scalar`]; the aliases below fix the two scalar types used in practice.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod computable;
pub mod error;
pub mod growth;
pub mod hilbert;
pub mod mean_bounds;
pub mod operators;
pub mod pointwise;
pub mod projection;
pub mod scalar;
pub mod upcrossings;

pub use error::{Error, Result};
pub use hilbert::{
    averages_prefix, ergodic_average, inner, operator_norm_estimate, AverageStream, BlockRotation,
    DenseMatrix, Element, KoopmanMap, MeasureSpace, NormEstimate, Operator, OperatorClass,
    OperatorKind, RotationBlock, SpaceRef,
};
pub use scalar::{Real, Scalar, ScalarRepr};

pub type Rational = num_rational::BigRational;
pub type BigUint = num_bigint::BigUint;

pub type Element64 = Element<f64>;
pub type ElementQ = Element<Rational>;
pub type Operator64 = Operator<f64>;
pub type OperatorQ = Operator<Rational>;
pub type Space64 = MeasureSpace<f64>;
pub type SpaceQ = MeasureSpace<Rational>;
