//! Array-valued multivariable polynomials: evaluation, products with
//! monomial filtering, and coefficient-wise linear maps.

use crate::linalg::{ComplexMatrix, LinalgError};
use crate::multiset::{canonical_cmp, Multiset};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("coefficient vector has {got} entries but variable index {needed} is used")]
    Arity { got: usize, needed: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `constant + sum_I c_I coeff_I` with `c_I = prod_{i in I} c_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrayPolynomial {
    constant: Option<ComplexMatrix>,
    monomials: Vec<(Multiset, ComplexMatrix)>,
}

impl ArrayPolynomial {
    pub fn new(constant: Option<ComplexMatrix>, monomials: Vec<(Multiset, ComplexMatrix)>) -> Self {
        let mut map: BTreeMap<Multiset, ComplexMatrix> = BTreeMap::new();
        for (label, coeff) in monomials {
            assert!(!label.is_empty(), "monomial labels must be nonempty; use the constant");
            match map.get_mut(&label) {
                Some(existing) => *existing = &*existing + &coeff,
                None => {
                    map.insert(label, coeff);
                }
            }
        }
        let poly = ArrayPolynomial { constant, monomials: map.into_iter().collect() };
        if let Some((rows, cols)) = poly.shape() {
            assert!(
                poly.coefficients().all(|m| m.rows() == rows && m.cols() == cols),
                "all coefficients must share one shape"
            );
        }
        poly
    }

    pub fn constant(&self) -> Option<&ComplexMatrix> {
        self.constant.as_ref()
    }

    pub fn monomials(&self) -> &[(Multiset, ComplexMatrix)] {
        &self.monomials
    }

    fn coefficients(&self) -> impl Iterator<Item = &ComplexMatrix> {
        self.constant.iter().chain(self.monomials.iter().map(|(_, m)| m))
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.coefficients().next().map(|m| (m.rows(), m.cols()))
    }

    /// Highest variable index appearing in any monomial.
    pub fn max_variable(&self) -> Option<usize> {
        self.monomials.iter().filter_map(|(l, _)| l.max_index()).max()
    }

    /// Evaluates at real variable values: `constant + sum_I (prod c_i) coeff_I`.
    pub fn eval(&self, c: &[f64]) -> Result<ComplexMatrix, PolyError> {
        self.eval_complex(&c.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>())
    }

    pub fn eval_complex(&self, c: &[Complex64]) -> Result<ComplexMatrix, PolyError> {
        if let Some(needed) = self.max_variable() {
            if needed >= c.len() {
                return Err(PolyError::Arity { got: c.len(), needed });
            }
        }
        let (rows, cols) = self.shape().unwrap_or((0, 0));
        let mut out = match &self.constant {
            Some(k) => k.clone(),
            None => ComplexMatrix::zeros(rows, cols),
        };
        for (label, coeff) in &self.monomials {
            let scalar: Complex64 =
                label.elements().iter().map(|&i| c[i]).product();
            out.axpy(scalar, coeff);
        }
        Ok(out)
    }

    /// Polynomial matrix product. Pairs of monomials combine under multiset
    /// sum; products whose label fails `keep` are dropped; like monomials
    /// accumulate. The constant acts as the order-zero term on either side.
    pub fn mul(
        &self,
        other: &ArrayPolynomial,
        keep: impl Fn(&Multiset) -> bool,
    ) -> Result<ArrayPolynomial, PolyError> {
        let mut constant = None;
        let mut acc: BTreeMap<Multiset, ComplexMatrix> = BTreeMap::new();
        let left = self.term_iter();
        let right: Vec<_> = other.term_iter().collect();
        for (la, ma) in left {
            for (lb, mb) in &right {
                let label = match (la, *lb) {
                    (None, None) => None,
                    (Some(l), None) | (None, Some(l)) => Some((*l).clone()),
                    (Some(a), Some(b)) => Some(a.msum(b)),
                };
                if let Some(ref l) = label {
                    if !keep(l) {
                        continue;
                    }
                }
                let product = ma.matmul(mb)?;
                match label {
                    None => {
                        constant = Some(match constant {
                            Some(k) => &k + &product,
                            None => product,
                        })
                    }
                    Some(l) => match acc.get_mut(&l) {
                        Some(existing) => *existing = &*existing + &product,
                        None => {
                            acc.insert(l, product);
                        }
                    },
                }
            }
        }
        Ok(ArrayPolynomial { constant, monomials: acc.into_iter().collect() })
    }

    fn term_iter(&self) -> impl Iterator<Item = (Option<&Multiset>, &ComplexMatrix)> {
        self.constant
            .iter()
            .map(|m| (None, m))
            .chain(self.monomials.iter().map(|(l, m)| (Some(l), m)))
    }

    /// Applies a linear map to every coefficient, including the constant.
    pub fn map_coefficients(&self, f: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> ArrayPolynomial {
        ArrayPolynomial {
            constant: self.constant.as_ref().map(&f),
            monomials: self.monomials.iter().map(|(l, m)| (l.clone(), f(m))).collect(),
        }
    }

    pub fn restrict_columns(&self, k: usize) -> ArrayPolynomial {
        self.map_coefficients(|m| m.restrict_columns(k))
    }

    /// Coefficient-wise trace, yielding 1x1 coefficients.
    pub fn trace(&self) -> ArrayPolynomial {
        self.map_coefficients(|m| {
            ComplexMatrix::from_raw(1, 1, vec![m.trace()])
        })
    }

    /// Coefficient-wise entrywise conjugation (antilinear).
    pub fn conj(&self) -> ArrayPolynomial {
        self.map_coefficients(ComplexMatrix::conj)
    }

    /// Coefficient-wise conjugate transpose (antilinear).
    pub fn adjoint(&self) -> ArrayPolynomial {
        self.map_coefficients(ComplexMatrix::adjoint)
    }

    pub fn scale(&self, factor: Complex64) -> ArrayPolynomial {
        self.map_coefficients(|m| m.scale(factor))
    }

    /// Coefficient-wise sum of entries, yielding 1x1 coefficients.
    pub fn sum_entries(&self) -> ArrayPolynomial {
        self.map_coefficients(|m| ComplexMatrix::from_raw(1, 1, vec![m.sum_entries()]))
    }

    pub fn add(&self, other: &ArrayPolynomial) -> ArrayPolynomial {
        let constant = match (&self.constant, &other.constant) {
            (Some(a), Some(b)) => Some(a + b),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        let mut acc: BTreeMap<Multiset, ComplexMatrix> = self.monomials.iter().cloned().collect();
        for (l, m) in &other.monomials {
            match acc.get_mut(l) {
                Some(existing) => *existing = &*existing + m,
                None => {
                    acc.insert(l.clone(), m.clone());
                }
            }
        }
        ArrayPolynomial { constant, monomials: acc.into_iter().collect() }
    }

    pub fn sub(&self, other: &ArrayPolynomial) -> ArrayPolynomial {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Coefficients sorted canonically by label, as `(label, matrix)` pairs.
    pub fn sorted_monomials(&self) -> Vec<(Multiset, ComplexMatrix)> {
        let mut out = self.monomials.clone();
        out.sort_by(|a, b| canonical_cmp(&a.0, &b.0));
        out
    }
}
