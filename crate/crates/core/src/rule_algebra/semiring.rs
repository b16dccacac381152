//! Operator algebras for the single-source recursion.
//!
//! Every carrier supplies a zero that is the identity of `plus` and
//! annihilates `times`. The recursion only needs those two laws.

use std::fmt;

use num_bigint::BigInt;
use num_traits::Zero;

use super::polynomial::Polynomial;
use crate::error::{Error, Result};

pub trait Semiring {
    type Elem: Clone + PartialEq + fmt::Debug;

    fn name(&self) -> &str;
    fn zero(&self) -> Self::Elem;
    fn plus(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn times(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;

    /// Check `0 ⊕ a = a` and `0 ⊗ a = 0` on the given samples (both argument orders).
    fn check_identities(&self, samples: &[Self::Elem]) -> Result<()> {
        let zero = self.zero();
        for a in samples.iter().chain(std::iter::once(&zero)) {
            if &self.plus(&zero, a) != a || &self.plus(a, &zero) != a {
                return Err(self.reject(format!("0 ⊕ {a:?} != {a:?}")));
            }
            if self.times(&zero, a) != zero || self.times(a, &zero) != zero {
                return Err(self.reject(format!("0 ⊗ {a:?} != 0")));
            }
        }
        Ok(())
    }

    /// Check `a ⊕ a = a` on the samples.
    fn check_idempotent(&self, samples: &[Self::Elem]) -> Result<()> {
        for a in samples {
            if &self.plus(a, a) != a {
                return Err(self.reject(format!("{a:?} ⊕ {a:?} != {a:?}")));
            }
        }
        Ok(())
    }

    fn reject(&self, reason: String) -> Error {
        Error::SemiringRejected {
            name: self.name().to_string(),
            reason,
        }
    }
}

/// Integers under (+, ×).
#[derive(Debug, Clone, Copy, Default)]
pub struct Counting;

impl Semiring for Counting {
    type Elem = BigInt;

    fn name(&self) -> &str {
        "counting(+,x)"
    }
    fn zero(&self) -> BigInt {
        BigInt::zero()
    }
    fn plus(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a + b
    }
    fn times(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a * b
    }
}

/// Integer polynomials under (+, ×); exposes the coefficients the recursion builds.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolynomialSemiring;

impl Semiring for PolynomialSemiring {
    type Elem = Polynomial;

    fn name(&self) -> &str {
        "polynomial(+,x)"
    }
    fn zero(&self) -> Polynomial {
        Polynomial::zero()
    }
    fn plus(&self, a: &Polynomial, b: &Polynomial) -> Polynomial {
        a.add(b)
    }
    fn times(&self, a: &Polynomial, b: &Polynomial) -> Polynomial {
        a.mul(b)
    }
}

/// Element of the max-plus semiring over the integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tropical {
    NegInf,
    Fin(i64),
}

impl Tropical {
    pub fn value(self) -> Option<i64> {
        match self {
            Tropical::NegInf => None,
            Tropical::Fin(x) => Some(x),
        }
    }
}

impl PartialOrd for Tropical {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Tropical {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Tropical::NegInf, Tropical::NegInf) => Equal,
            (Tropical::NegInf, _) => Less,
            (_, Tropical::NegInf) => Greater,
            (Tropical::Fin(a), Tropical::Fin(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for Tropical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tropical::NegInf => f.write_str("-inf"),
            Tropical::Fin(x) => write!(f, "{x}"),
        }
    }
}

/// (max, +, −∞).
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPlus;

impl Semiring for MaxPlus {
    type Elem = Tropical;

    fn name(&self) -> &str {
        "max-plus"
    }
    fn zero(&self) -> Tropical {
        Tropical::NegInf
    }
    fn plus(&self, a: &Tropical, b: &Tropical) -> Tropical {
        *a.max(b)
    }
    fn times(&self, a: &Tropical, b: &Tropical) -> Tropical {
        match (a, b) {
            (Tropical::Fin(x), Tropical::Fin(y)) => Tropical::Fin(x + y),
            _ => Tropical::NegInf,
        }
    }
}

type BinOp<T> = Box<dyn Fn(&T, &T) -> T + Send + Sync>;

/// A semiring assembled from closures: zero, plus, times and a descriptor.
pub struct SemiringSpec<T> {
    pub descriptor: String,
    pub zero: T,
    pub plus: BinOp<T>,
    pub times: BinOp<T>,
}

impl<T> SemiringSpec<T> {
    pub fn new(
        descriptor: impl Into<String>,
        zero: T,
        plus: impl Fn(&T, &T) -> T + Send + Sync + 'static,
        times: impl Fn(&T, &T) -> T + Send + Sync + 'static,
    ) -> Self {
        SemiringSpec {
            descriptor: descriptor.into(),
            zero,
            plus: Box::new(plus),
            times: Box::new(times),
        }
    }
}

impl<T: Clone + PartialEq + fmt::Debug> Semiring for SemiringSpec<T> {
    type Elem = T;

    fn name(&self) -> &str {
        &self.descriptor
    }
    fn zero(&self) -> T {
        self.zero.clone()
    }
    fn plus(&self, a: &T, b: &T) -> T {
        (self.plus)(a, b)
    }
    fn times(&self, a: &T, b: &T) -> T {
        (self.times)(a, b)
    }
}
