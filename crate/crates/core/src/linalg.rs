//! Dense complex matrix arithmetic: products, LU solves, norms, and the
//! scaling-and-squaring matrix exponential.

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("shape mismatch: ({0}, {1}) incompatible with ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix is singular or ill-conditioned (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("operation requires a square matrix, got ({0}, {1})")]
    NotSquare(usize, usize),
}

/// Row-major dense matrix of `Complex64` entries.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch(rows, cols, data.len(), 1));
        }
        let m = ComplexMatrix { rows, cols, data };
        if !m.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        Ok(m)
    }

    /// Internal constructor for results of arithmetic; shape is trusted.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        ComplexMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds from nested rows of `(re, im)` pairs; convenient in tests.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        ComplexMatrix { rows: r, cols: c, data }
    }

    /// Real diagonal matrix from a slice.
    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        ComplexMatrix::from_raw(self.rows, self.cols, self.data.iter().map(|z| z * factor).collect())
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(Complex64::new(factor, 0.0))
    }

    /// In-place `self += factor * other`; the workhorse of the ODE stepping.
    pub fn axpy(&mut self, factor: Complex64, other: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Checked matrix product.
    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch(self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == Complex64::ZERO {
                    continue;
                }
                let row_b = &other.data[k * other.cols..(k + 1) * other.cols];
                let row_out = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in row_out.iter_mut().zip(row_b) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn conj(&self) -> ComplexMatrix {
        ComplexMatrix::from_raw(self.rows, self.cols, self.data.iter().map(|z| z.conj()).collect())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        self.transpose().conj()
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm `sqrt(sum |a_ij|^2)`.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn sum_entries(&self) -> Complex64 {
        self.data.iter().sum()
    }

    /// Copy of the first `k` columns.
    pub fn restrict_columns(&self, k: usize) -> ComplexMatrix {
        assert!(k <= self.cols, "cannot restrict to more columns than present");
        let mut out = ComplexMatrix::zeros(self.rows, k);
        for i in 0..self.rows {
            for j in 0..k {
                out[(i, j)] = self[(i, j)];
            }
        }
        out
    }

    /// Kronecker product `self (x) other`.
    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == Complex64::ZERO {
                    continue;
                }
                for p in 0..other.rows {
                    for q in 0..other.cols {
                        out[(i * other.rows + p, j * other.cols + q)] = a * other[(p, q)];
                    }
                }
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape mismatch");
        ComplexMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        )
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub shape mismatch");
        ComplexMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, other: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(other).expect("matmul shape mismatch")
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:+.4e}{:+.4e}i", self[(i, j)].re, self[(i, j)].im))
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

// JSON form: nested arrays of [re, im] pairs.
impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<[f64; 2]>> = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| [self[(i, j)].re, self[(i, j)].im]).collect())
            .collect();
        nested.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let nested = Vec::<Vec<[f64; 2]>>::deserialize(deserializer)?;
        let rows = nested.len();
        let cols = nested.first().map_or(0, |r| r.len());
        if nested.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let data = nested.iter().flatten().map(|&[re, im]| Complex64::new(re, im)).collect();
        ComplexMatrix::new(rows, cols, data).map_err(D::Error::custom)
    }
}

/// LU decomposition with partial pivoting, the backend of [`solve_linear`].
struct Lu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

fn lu_decompose(a: &ComplexMatrix) -> Result<Lu, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows, a.cols));
    }
    let n = a.rows;
    let mut lu = a.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, lu[r * n + col].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot_mag == 0.0 {
            return Err(LinalgError::Singular { cond: f64::INFINITY });
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot_row * n + j);
            }
            perm.swap(col, pivot_row);
        }
        let pivot = lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            lu[r * n + col] = factor;
            for j in col + 1..n {
                let sub = factor * lu[col * n + j];
                lu[r * n + j] -= sub;
            }
        }
    }
    Ok(Lu { n, lu, perm })
}

impl Lu {
    fn solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let n = self.n;
        let k = b.cols;
        let mut x = ComplexMatrix::zeros(n, k);
        for j in 0..k {
            // forward substitution on permuted rhs
            let mut y = vec![Complex64::ZERO; n];
            for i in 0..n {
                let mut acc = b[(self.perm[i], j)];
                for c in 0..i {
                    acc -= self.lu[i * n + c] * y[c];
                }
                y[i] = acc;
            }
            // back substitution
            for i in (0..n).rev() {
                let mut acc = y[i];
                for c in i + 1..n {
                    acc -= self.lu[i * n + c] * x[(c, j)];
                }
                x[(i, j)] = acc / self.lu[i * n + i];
            }
        }
        x
    }

    /// Crude condition estimate from the U-diagonal magnitude spread.
    fn condition_estimate(&self) -> f64 {
        let n = self.n;
        let mags: Vec<f64> = (0..n).map(|i| self.lu[i * n + i].norm()).collect();
        let max = mags.iter().fold(0.0f64, |a, &b| a.max(b));
        let min = mags.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Condition-estimate threshold above which a solve is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve_linear(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    if a.rows != b.rows {
        return Err(LinalgError::ShapeMismatch(a.rows, a.cols, b.rows, b.cols));
    }
    let lu = lu_decompose(a)?;
    let cond = lu.condition_estimate();
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(LinalgError::Singular { cond });
    }
    Ok(lu.solve(b))
}

// 1-norm thresholds for the order-(3,5,7,9,13) Pade approximants, from
// Higham's scaling-and-squaring analysis.
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by Pade approximation with scaling and squaring.
pub fn expm(a: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows, a.cols));
    }
    let norm = a.norm_1();
    let a2 = a * a;
    let (u, v) = if norm <= THETA_3 {
        pade_low(a, &a2, &[120.0, 60.0, 12.0, 1.0])
    } else if norm <= THETA_5 {
        pade_low(a, &a2, &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0])
    } else if norm <= THETA_7 {
        pade_low(a, &a2, &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0])
    } else if norm <= THETA_9 {
        pade_low(
            a,
            &a2,
            &[
                17643225600.0,
                8821612800.0,
                2075673600.0,
                302702400.0,
                30270240.0,
                2162160.0,
                110880.0,
                3960.0,
                90.0,
                1.0,
            ],
        )
    } else {
        let squarings = ((norm / THETA_13).log2().ceil().max(0.0)) as u32;
        let scaled = a.scale_real(0.5f64.powi(squarings as i32));
        let (u, v) = pade_13(&scaled);
        let mut r = solve_pade(&u, &v)?;
        for _ in 0..squarings {
            r = &r * &r;
        }
        if !r.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        return Ok(r);
    };
    let r = solve_pade(&u, &v)?;
    if !r.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    Ok(r)
}

fn pade_low(a: &ComplexMatrix, a2: &ComplexMatrix, coeffs: &[f64]) -> (ComplexMatrix, ComplexMatrix) {
    // u = a * (sum of odd coefficient powers), v = sum of even ones
    let n = a.rows;
    let mut even = ComplexMatrix::identity(n).scale_real(coeffs[0]);
    let mut odd_poly = ComplexMatrix::identity(n).scale_real(coeffs[1]);
    let mut power = ComplexMatrix::identity(n);
    for pair in (2..coeffs.len()).step_by(2) {
        power = &power * a2;
        even.axpy(Complex64::new(coeffs[pair], 0.0), &power);
        if pair + 1 < coeffs.len() {
            odd_poly.axpy(Complex64::new(coeffs[pair + 1], 0.0), &power);
        }
    }
    (a * &odd_poly, even)
}

fn pade_13(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let b = &PADE_13;
    let n = a.rows;
    let id = ComplexMatrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    // u = a (a6 (b13 a6 + b11 a4 + b9 a2) + b7 a6 + b5 a4 + b3 a2 + b1 I)
    let mut inner_u = a6.scale_real(b[13]);
    inner_u.axpy(Complex64::new(b[11], 0.0), &a4);
    inner_u.axpy(Complex64::new(b[9], 0.0), &a2);
    let mut u_poly = &a6 * &inner_u;
    u_poly.axpy(Complex64::new(b[7], 0.0), &a6);
    u_poly.axpy(Complex64::new(b[5], 0.0), &a4);
    u_poly.axpy(Complex64::new(b[3], 0.0), &a2);
    u_poly.axpy(Complex64::new(b[1], 0.0), &id);
    let u = a * &u_poly;
    // v = a6 (b12 a6 + b10 a4 + b8 a2) + b6 a6 + b4 a4 + b2 a2 + b0 I
    let mut inner_v = a6.scale_real(b[12]);
    inner_v.axpy(Complex64::new(b[10], 0.0), &a4);
    inner_v.axpy(Complex64::new(b[8], 0.0), &a2);
    let mut v = &a6 * &inner_v;
    v.axpy(Complex64::new(b[6], 0.0), &a6);
    v.axpy(Complex64::new(b[4], 0.0), &a4);
    v.axpy(Complex64::new(b[2], 0.0), &a2);
    v.axpy(Complex64::new(b[0], 0.0), &id);
    (u, v)
}

fn solve_pade(u: &ComplexMatrix, v: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let denom = v - u;
    let numer = v + u;
    let lu = lu_decompose(&denom)?;
    Ok(lu.solve(&numer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    pub(crate) fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]])
    }

    #[test]
    fn matmul_examples() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, 2.0), c(3.0, 0.0)], vec![c(0.0, -1.0), c(2.0, 2.0)]]);
        let id = ComplexMatrix::identity(2);
        assert_eq!(&id * &m, m);

        let nilpotent =
            ComplexMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]]);
        assert_eq!((&nilpotent * &nilpotent).frobenius_norm(), 0.0);

        // (-i sigma_x)^2 = -I
        let m = sigma_x().scale(c(0.0, -1.0));
        let sq = &m * &m;
        let minus_id = ComplexMatrix::identity(2).scale_real(-1.0);
        assert!((&sq - &minus_id).frobenius_norm() < 1e-15);
    }

    #[test]
    fn expm_examples() {
        let z = ComplexMatrix::zeros(3, 3);
        assert!((&expm(&z).unwrap() - &ComplexMatrix::identity(3)).frobenius_norm() < 1e-15);

        let d = ComplexMatrix::from_rows(&[
            vec![c(0.0, std::f64::consts::PI), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 0.0)],
        ]);
        let e = expm(&d).unwrap();
        let expected = ComplexMatrix::diag_real(&[-1.0, 1.0]);
        assert!((&e - &expected).frobenius_norm() < 1e-13);

        // exp(-i (pi/2) sigma_x) = [[0, -i], [-i, 0]]
        let a = sigma_x().scale(c(0.0, -std::f64::consts::FRAC_PI_2));
        let e = expm(&a).unwrap();
        let expected =
            ComplexMatrix::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, -1.0), c(0.0, 0.0)]]);
        assert!((&e - &expected).frobenius_norm() < 1e-13);
    }

    #[test]
    fn solve_examples() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0), c(2.0, 0.0)], vec![c(0.5, 0.0), c(-1.0, 3.0)]]);
        let id = ComplexMatrix::identity(2);
        let x = solve_linear(&id, &m).unwrap();
        assert!((&x - &m).frobenius_norm() < 1e-14);

        let two_id = ComplexMatrix::identity(2).scale_real(2.0);
        let x = solve_linear(&two_id, &id).unwrap();
        assert!((&x - &ComplexMatrix::identity(2).scale_real(0.5)).frobenius_norm() < 1e-14);

        // construct b = exp(-i sigma_x) m, recover m
        let a = expm(&sigma_x().scale(c(0.0, -1.0))).unwrap();
        let b = &a * &m;
        let x = solve_linear(&a, &b).unwrap();
        assert!((&x - &m).frobenius_norm() < 1e-10);
    }

    #[test]
    fn singular_solve_reports_condition() {
        let a = ComplexMatrix::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(4.0, 0.0)]]);
        let b = ComplexMatrix::identity(2);
        match solve_linear(&a, &b) {
            Err(LinalgError::Singular { .. }) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(ComplexMatrix::zeros(4, 4).frobenius_norm(), 0.0);
        assert!((ComplexMatrix::identity(3).frobenius_norm() - 3f64.sqrt()).abs() < 1e-15);
        let m = ComplexMatrix::from_rows(&[vec![c(3.0, 0.0), c(4.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]]);
        assert!((m.frobenius_norm() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let bad = vec![c(f64::NAN, 0.0)];
        assert!(matches!(ComplexMatrix::new(1, 1, bad), Err(LinalgError::NonFinite)));
    }

    #[test]
    fn matrix_json_roundtrip() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, -2.0), c(0.0, 0.5)], vec![c(3.0, 0.0), c(0.0, 0.0)]]);
        let json = serde_json::to_string(&m).unwrap();
        let back: ComplexMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
