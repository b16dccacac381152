//! Sparse multivariate polynomials with arbitrary-precision integer
//! coefficients, one indeterminate per relation id.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

/// Exponent vector. Trailing zero exponents are trimmed so that equal
/// monomials compare equal regardless of how many indeterminates exist.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn from_exponents(mut exps: Vec<u32>) -> Self {
        while exps.last() == Some(&0) {
            exps.pop();
        }
        Monomial(exps)
    }

    pub fn var(index: usize) -> Self {
        let mut e = vec![0; index + 1];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponent(&self, index: usize) -> u32 {
        self.0.get(index).copied().unwrap_or(0)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (long, short) = if self.0.len() >= other.0.len() {
            (&self.0, &other.0)
        } else {
            (&other.0, &self.0)
        };
        let mut e = long.clone();
        for (i, x) in short.iter().enumerate() {
            e[i] += x;
        }
        Monomial(e)
    }

    /// Multiply in one more power of indeterminate `index`.
    pub fn bump(&mut self, index: usize) {
        if self.0.len() <= index {
            self.0.resize(index + 1, 0);
        }
        self.0[index] += 1;
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "r{i}")?;
            } else {
                write!(f, "r{i}^{e}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, BigInt>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: impl Into<BigInt>) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn var(index: usize) -> Self {
        Self::term(Monomial::var(index), 1)
    }

    pub fn term(m: Monomial, c: impl Into<BigInt>) -> Self {
        let c = c.into();
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Polynomial { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigInt)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> BigInt {
        self.terms.get(m).cloned().unwrap_or_else(BigInt::zero)
    }

    pub fn support(&self) -> std::collections::BTreeSet<Monomial> {
        self.terms.keys().cloned().collect()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            let entry = terms.entry(m.clone()).or_insert_with(BigInt::zero);
            *entry += c;
            if entry.is_zero() {
                terms.remove(m);
            }
        }
        Polynomial { terms }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms: BTreeMap<Monomial, BigInt> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert_with(BigInt::zero) += ca * cb;
            }
        }
        terms.retain(|_, c| !c.is_zero());
        Polynomial { terms }
    }

    /// Evaluate at integer points, one value per indeterminate.
    pub fn evaluate(&self, values: &[BigInt]) -> BigInt {
        let mut total = BigInt::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (i, &e) in m.exponents().iter().enumerate() {
                for _ in 0..e {
                    t *= &values[i];
                }
            }
            total += t;
        }
        total
    }

    pub fn all_coefficients_positive(&self) -> bool {
        self.terms.values().all(|c| c.is_positive())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if c.is_one() {
                write!(f, "{m}")?;
            } else if m.degree() == 0 {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}*{m}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let x = Polynomial::var(0);
        let y = Polynomial::var(1);
        let s = x.add(&y);
        let sq = s.mul(&s);
        assert_eq!(sq.num_terms(), 3);
        assert_eq!(sq.coefficient(&Monomial::from_exponents(vec![1, 1])), BigInt::from(2));
        let neg = Polynomial::term(Monomial::var(0), -1);
        assert!(x.add(&neg).is_zero());
    }

    #[test]
    fn trims_trailing_zeros() {
        assert_eq!(Monomial::from_exponents(vec![1, 0, 0]), Monomial::var(0));
        assert_eq!(Monomial::from_exponents(vec![2, 1]).to_string(), "r0^2*r1");
    }

    #[test]
    fn no_overflow_on_large_coefficients() {
        let mut p = Polynomial::constant(2);
        for _ in 0..100 {
            p = p.mul(&Polynomial::constant(2));
        }
        assert_eq!(p.coefficient(&Monomial::one()), BigInt::from(2).pow(101));
    }
}
