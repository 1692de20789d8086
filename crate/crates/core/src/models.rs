//! Transmon model builders and control objectives: the single-transmon
//! Hamiltonian with six perturbation channels, the smooth bounded control
//! parameterization, gate infidelity, a moment-weighted robustness objective,
//! the two-transmon Duffing model, and the Direct CX pulse envelopes.
//!
//! All times are ns, all frequencies GHz, so angular quantities carry
//! explicit `2 pi` factors.

use crate::linalg::{expm, ComplexMatrix, LinalgError};
use crate::multiset::Multiset;
use crate::perturbation::{ArrayPolynomial, Expansion, GeneratorFn, PerturbationProblem, PolyError};
use crate::signal::{EnvelopeFn, PiecewiseConstantEnvelope, Signal};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    Params(String),
    #[error("parameter array has {got} columns, basis has {expected} vectors")]
    BasisMismatch { expected: usize, got: usize },
    #[error("no moment supplied for label {0:?}")]
    MissingMoment(Multiset),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Single transmon truncated to `dim` levels.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonParams {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
    pub dim: usize,
}

impl TransmonParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim < 2 {
            return Err(ModelError::Params(format!("dim must be >= 2, got {}", self.dim)));
        }
        Ok(())
    }
}

/// Two coupled transmons in the Duffing approximation, `dim` levels each.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTransmonParams {
    pub nu0: f64,
    pub nu1: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    #[serde(rename = "j")]
    pub coupling: f64,
    pub dim: usize,
}

impl TwoTransmonParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim < 2 {
            return Err(ModelError::Params(format!("dim must be >= 2, got {}", self.dim)));
        }
        Ok(())
    }
}

/// Direct CX pulse shape parameters: amplitude scale `A`, gate time `T`,
/// risetime multiplier `r`, and risetime width `sigma`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CxPulseParams {
    #[serde(rename = "A")]
    pub amp: f64,
    #[serde(rename = "T")]
    pub gate_time: f64,
    #[serde(rename = "r")]
    pub risetime: f64,
    pub sigma: f64,
}

impl CxPulseParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.sigma > 0.0) {
            return Err(ModelError::Params(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.gate_time > 2.0 * self.risetime * self.sigma) {
            return Err(ModelError::Params(format!(
                "gate time {} leaves no plateau for risetime window {}",
                self.gate_time,
                2.0 * self.risetime * self.sigma
            )));
        }
        Ok(())
    }
}

/// Number operator `diag(0, 1, ..., dim-1)`.
pub fn number_op(dim: usize) -> ComplexMatrix {
    ComplexMatrix::diag_real(&(0..dim).map(|n| n as f64).collect::<Vec<_>>())
}

/// Truncated annihilation operator with `sqrt(n)` on the superdiagonal.
pub fn annihilation_op(dim: usize) -> ComplexMatrix {
    let mut a = ComplexMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Projector onto the levels above the first two (the leakage levels).
pub fn projector_high(dim: usize) -> ComplexMatrix {
    ComplexMatrix::diag_real(&(0..dim).map(|n| if n >= 2 { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

/// Projector onto the first two levels (the computational subspace).
pub fn projector_low(dim: usize) -> ComplexMatrix {
    ComplexMatrix::diag_real(&(0..dim).map(|n| if n < 2 { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

fn minus_i() -> Complex64 {
    Complex64::new(0.0, -1.0)
}

/// The static (drive-independent) part of the single-transmon Hamiltonian:
/// `2 pi nu N + pi alpha N(N-1) + (pi/3) beta N(N-1)(N-2)`, diagonal.
pub fn transmon_static_hamiltonian(p: &TransmonParams) -> ComplexMatrix {
    let diag: Vec<f64> = (0..p.dim)
        .map(|level| {
            let n = level as f64;
            TAU * p.nu * n
                + PI * p.alpha * n * (n - 1.0)
                + (PI / 3.0) * p.beta * n * (n - 1.0) * (n - 2.0)
        })
        .collect();
    ComplexMatrix::diag_real(&diag)
}

/// Builds the perturbation problem for the driven transmon with its six
/// uncertainty channels. The control field is
/// `s(t) = Re[envelope(t) e^{i 2 pi mu t}]`; variables `0..6` stand for the
/// relative frequency, anharmonicity, drive-strength, drive-nonlinearity,
/// level-spacing, and leakage-drive perturbations, in that order.
pub fn build_transmon_perturbation_problem(
    p: &TransmonParams,
    envelope: EnvelopeFn,
    mu: f64,
    t_span: [f64; 2],
    requested: Vec<Multiset>,
    expansion: Expansion,
) -> Result<PerturbationProblem, ModelError> {
    p.validate()?;
    let signal = Signal::new(envelope, mu, 0.0);
    let n_op = number_op(p.dim);
    let a_op = annihilation_op(p.dim);
    let drive_op = &a_op + &a_op.adjoint();
    let p_high = projector_high(p.dim);

    let h_static = transmon_static_hamiltonian(p);
    let h_freq = n_op.scale_real(TAU * p.nu);
    let h_anharm = {
        let shifted = &n_op - &ComplexMatrix::identity(p.dim);
        (&n_op * &shifted).scale_real(PI * p.alpha)
    };
    let h_beta = {
        let s1 = &n_op - &ComplexMatrix::identity(p.dim);
        let s2 = &n_op - &ComplexMatrix::identity(p.dim).scale_real(2.0);
        (&(&n_op * &s1) * &s2).scale_real((PI / 3.0) * p.beta)
    };
    let h_drive = drive_op.scale_real(TAU * p.r);
    let h_leak = (&(&p_high * &drive_op) * &p_high).scale_real(TAU * p.r);

    let frame: GeneratorFn = {
        let signal = signal.clone();
        let h_static = h_static.clone();
        let h_drive = h_drive.clone();
        Arc::new(move |t: f64| {
            let mut h = h_static.clone();
            h.axpy(Complex64::new(signal.value(t), 0.0), &h_drive);
            h.scale(minus_i())
        })
    };

    let constant_gen = |h: ComplexMatrix| -> GeneratorFn {
        let g = h.scale(minus_i());
        Arc::new(move |_| g.clone())
    };
    let driven_gen = |h: ComplexMatrix, square: bool| -> GeneratorFn {
        let signal = signal.clone();
        let g = h.scale(minus_i());
        Arc::new(move |t: f64| {
            let s = signal.value(t);
            g.scale_real(if square { s * s } else { s })
        })
    };

    let perturbations: Vec<(Multiset, GeneratorFn)> = vec![
        (Multiset::new(vec![0]), constant_gen(h_freq)),
        (Multiset::new(vec![1]), constant_gen(h_anharm)),
        (Multiset::new(vec![2]), driven_gen(h_drive.clone(), false)),
        (Multiset::new(vec![3]), driven_gen(h_drive, true)),
        (Multiset::new(vec![4]), constant_gen(h_beta)),
        (Multiset::new(vec![5]), driven_gen(h_leak, false)),
    ];

    Ok(PerturbationProblem::new(frame, perturbations, t_span, requested, expansion))
}

/// Control basis vectors sampled on a uniform coarse grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlBasis {
    pub coarse_dt: f64,
    pub vectors: Vec<Vec<f64>>,
}

/// Discretized Chebyshev basis: `T_j` sampled at the midpoints of
/// `n_samples` cells of width `coarse_dt`, for `j = 0..k`.
pub fn chebyshev_control_basis(coarse_dt: f64, n_samples: usize, k: usize) -> ControlBasis {
    let vectors = (0..k)
        .map(|j| {
            (0..n_samples)
                .map(|i| {
                    let x = 2.0 * (i as f64 + 0.5) / n_samples as f64 - 1.0;
                    crate::signal::chebyshev_t(j, x)
                })
                .collect()
        })
        .collect();
    ControlBasis { coarse_dt, vectors }
}

/// Smooth bounded envelope from unbounded parameters: linear combination of
/// basis vectors, squashed entrywise through `arctan(x)/(pi/2)`, resampled to
/// `fine_dt` by sample-and-hold, and convolved ("same", zero-padded) with a
/// unit-sum Gaussian kernel of width `kernel_sigma` and `kernel_len` samples.
/// Every output sample stays inside the unit box.
pub fn smooth_envelope(
    b_real: &[f64],
    b_imag: &[f64],
    basis: &ControlBasis,
    fine_dt: f64,
    kernel_sigma: f64,
    kernel_len: usize,
) -> Result<PiecewiseConstantEnvelope, ModelError> {
    let k = basis.vectors.len();
    if b_real.len() != k || b_imag.len() != k {
        return Err(ModelError::BasisMismatch {
            expected: k,
            got: b_real.len().max(b_imag.len()),
        });
    }
    assert!(fine_dt > 0.0 && kernel_sigma > 0.0 && kernel_len > 0);
    let n_coarse = basis.vectors.first().map_or(0, Vec::len);

    let combine = |weights: &[f64]| -> Vec<f64> {
        (0..n_coarse)
            .map(|i| weights.iter().zip(&basis.vectors).map(|(w, d)| w * d[i]).sum())
            .collect()
    };
    let bound = |x: f64| x.atan() / (PI / 2.0);

    let ratio = (basis.coarse_dt / fine_dt).round() as usize;
    assert!(ratio >= 1, "fine_dt must not exceed the coarse sample width");
    let resample = |coarse: Vec<f64>| -> Vec<f64> {
        coarse.iter().flat_map(|&v| std::iter::repeat(v).take(ratio)).collect()
    };

    let kernel: Vec<f64> = {
        let center = (kernel_len as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..kernel_len)
            .map(|m| {
                let t = (m as f64 - center) * fine_dt;
                (-t * t / (2.0 * kernel_sigma * kernel_sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    };
    let convolve_same = |x: Vec<f64>| -> Vec<f64> {
        let offset = kernel_len / 2;
        (0..x.len())
            .map(|i| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(m, &w)| {
                        let idx = i as isize - m as isize + offset as isize;
                        if idx >= 0 && (idx as usize) < x.len() {
                            w * x[idx as usize]
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect()
    };

    let y_real = convolve_same(resample(combine(b_real).into_iter().map(bound).collect()));
    let y_imag = convolve_same(resample(combine(b_imag).into_iter().map(bound).collect()));
    let samples = y_real
        .into_iter()
        .zip(y_imag)
        .map(|(re, im)| Complex64::new(re, im))
        .collect();
    Ok(PiecewiseConstantEnvelope::new(fine_dt, 0.0, samples))
}

/// `1 - |Tr(target^dag u|_2)|^2 / 4` with `u|_2` the top-left 2x2 block;
/// invariant under a global phase of that block.
pub fn infidelity(u: &ComplexMatrix, target: &ComplexMatrix) -> f64 {
    assert!(u.rows() >= 2 && u.cols() >= 2, "state must contain the 2x2 computational block");
    assert!(target.rows() == 2 && target.cols() == 2, "target must be 2x2");
    let mut overlap = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            overlap += target[(i, j)].conj() * u[(i, j)];
        }
    }
    1.0 - overlap.norm_sqr() / 4.0
}

/// `v * expm(poly(c))`: the frame propagator composed with the exponential
/// of an evaluated Magnus truncation.
pub fn approx_unitary(
    v: &ComplexMatrix,
    magnus_poly: &ArrayPolynomial,
    c: &[f64],
) -> Result<ComplexMatrix, ModelError> {
    if magnus_poly.shape().is_none() {
        // empty truncation: exp(0) = identity
        return Ok(v.clone());
    }
    let omega = magnus_poly.eval(c)?;
    Ok(v * &expm(&omega)?)
}

/// Moment-weighted robustness objective
/// `g = sum_I moment_I h_I` for
/// `h(c) = || Omega(c) P - Tr(Omega(c) P)/2 P ||_2^2`, with `P` the projector
/// onto the first two levels. Labels with a supplied zero moment are pruned
/// during the polynomial product; a surviving label with no supplied moment
/// is an error.
pub fn robustness_objective(
    magnus_poly: &ArrayPolynomial,
    moments: &[(Multiset, f64)],
) -> Result<f64, ModelError> {
    Ok(robustness_breakdown(magnus_poly, moments)?.total)
}

/// One surviving monomial of the robustness objective.
#[derive(Clone, Debug, Serialize)]
pub struct RobustnessTerm {
    pub label: Multiset,
    /// Coefficient of the defect polynomial `h(c)`.
    pub h: f64,
    pub moment: f64,
    pub contribution: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessBreakdown {
    pub total: f64,
    pub terms: Vec<RobustnessTerm>,
}

/// Same computation as [`robustness_objective`], but reporting the surviving
/// monomials individually.
pub fn robustness_breakdown(
    magnus_poly: &ArrayPolynomial,
    moments: &[(Multiset, f64)],
) -> Result<RobustnessBreakdown, ModelError> {
    let moment_map: HashMap<&Multiset, f64> = moments.iter().map(|(l, v)| (l, *v)).collect();

    // Omega(c) P lives in the first two columns; subtracting the half-trace
    // along P keeps the same d x 2 shape
    let x = magnus_poly.restrict_columns(2);
    let x_traceless = x.map_coefficients(|m| {
        let half_trace = (m[(0, 0)] + m[(1, 1)]) / 2.0;
        let mut out = m.clone();
        out[(0, 0)] -= half_trace;
        out[(1, 1)] -= half_trace;
        out
    });

    // || X ||_2^2 = Tr(X^dag X) as a polynomial, dropping products whose
    // monomial is known to integrate to zero
    let keep = |label: &Multiset| moment_map.get(label).map_or(true, |&v| v != 0.0);
    let gram = x_traceless.adjoint().mul(&x_traceless, keep)?;
    let h = gram.trace();

    let mut total = 0.0;
    let mut terms = Vec::new();
    for (label, coeff) in h.sorted_monomials() {
        let moment =
            *moment_map.get(&label).ok_or_else(|| ModelError::MissingMoment(label.clone()))?;
        let h_value = coeff[(0, 0)].re;
        let contribution = moment * h_value;
        total += contribution;
        terms.push(RobustnessTerm { label, h: h_value, moment, contribution });
    }
    Ok(RobustnessBreakdown { total, terms })
}

/// Per-label moments of a product of centered Gaussians truncated to the
/// symmetric box `[-bound_i, bound_i]`: exactly zero whenever any variable
/// carries an odd power, otherwise a product of 1-D truncated moments
/// computed by adaptive quadrature.
pub fn gaussian_moments(
    labels: &[Multiset],
    sigmas: &[f64],
    bounds: &[f64],
) -> Result<Vec<(Multiset, f64)>, ModelError> {
    assert_eq!(sigmas.len(), bounds.len());
    let mut one_dim_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let mults = label.multiplicities();
        if let Some(&(i, _)) = mults.iter().find(|&&(i, _)| i >= sigmas.len()) {
            return Err(ModelError::Params(format!(
                "label {label:?} uses variable {i}, but only {} sigmas given",
                sigmas.len()
            )));
        }
        let value = if mults.iter().any(|&(_, k)| k % 2 == 1) {
            0.0
        } else {
            mults
                .iter()
                .map(|&(i, k)| {
                    *one_dim_cache
                        .entry((i, k))
                        .or_insert_with(|| truncated_gaussian_moment(k, sigmas[i], bounds[i]))
                })
                .product()
        };
        out.push((label.clone(), value));
    }
    Ok(out)
}

/// `E[x^k]` for a centered Gaussian truncated (and renormalized) to
/// `[-bound, bound]`; `k` must be even.
fn truncated_gaussian_moment(k: usize, sigma: f64, bound: f64) -> f64 {
    assert!(k % 2 == 0);
    assert!(sigma > 0.0 && bound > 0.0);
    let density = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
    // mass has the closed form sigma sqrt(2 pi) erf(b / (sigma sqrt 2))
    let mass = sigma * (2.0 * PI).sqrt() * erf(bound / (sigma * std::f64::consts::SQRT_2));
    if k == 0 {
        return 1.0;
    }
    // even integrand: integrate the half-interval
    let unnormalized =
        2.0 * adaptive_simpson(&|x: f64| x.powi(k as i32) * density(x), 0.0, bound, 1e-13, 30);
    unnormalized / mass
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, depth)
}

/// The Direct CX pulse shape: Gaussian rise to a flat top and symmetric
/// Gaussian fall, offset so the endpoints are exactly zero and normalized by
/// `D(r, sigma)`.
pub fn cx_pulse_shape(p: &CxPulseParams, t: f64) -> f64 {
    let CxPulseParams { amp, gate_time: tg, risetime: r, sigma } = *p;
    let c = (-r * r / 2.0).exp();
    let d = sigma * ((2.0 * PI).sqrt() * erf(r / std::f64::consts::SQRT_2) - 2.0 * r * c);
    let rise = r * sigma;
    let gaussian = |u: f64| (-0.5 * ((u - rise) / sigma).powi(2)).exp();
    let shape = if t < rise {
        gaussian(t) - c
    } else if t <= tg - rise {
        1.0 - c
    } else {
        gaussian(tg - t) - c
    };
    amp * shape / d
}

/// The antisymmetric variant: the shape compressed to `[0, T/2]`, then
/// negated and repeated on `[T/2, T]`.
pub fn cx_antisymmetric_shape(p: &CxPulseParams, t: f64) -> f64 {
    let half = CxPulseParams { gate_time: p.gate_time / 2.0, ..*p };
    if t < p.gate_time / 2.0 {
        cx_pulse_shape(&half, t)
    } else {
        -cx_pulse_shape(&half, t - p.gate_time / 2.0)
    }
}

/// The three Direct CX drive envelopes. The control qubit sees the plain
/// shape; the target qubit sees the sum of the symmetric and antisymmetric
/// envelopes. Complex amplitudes set each tone's magnitude and phase.
pub struct CxEnvelopes {
    pub control: EnvelopeFn,
    pub target_symmetric: EnvelopeFn,
    pub target_antisymmetric: EnvelopeFn,
}

impl CxEnvelopes {
    /// The combined target-drive envelope.
    pub fn target(&self) -> EnvelopeFn {
        let sym = self.target_symmetric.clone();
        let asym = self.target_antisymmetric.clone();
        Arc::new(move |t| sym(t) + asym(t))
    }
}

pub fn cx_envelopes(
    p: &CxPulseParams,
    amp_sym: Complex64,
    amp_asym: Complex64,
    amp_ctrl: Complex64,
) -> Result<CxEnvelopes, ModelError> {
    p.validate()?;
    let window = move |t: f64, tg: f64| t >= 0.0 && t <= tg;
    let make_sym = |amp: Complex64| -> EnvelopeFn {
        let p = *p;
        Arc::new(move |t| {
            if window(t, p.gate_time) {
                amp * cx_pulse_shape(&p, t)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    };
    let control = make_sym(amp_ctrl);
    let target_symmetric = make_sym(amp_sym);
    let target_antisymmetric: EnvelopeFn = {
        let p = *p;
        Arc::new(move |t| {
            if window(t, p.gate_time) {
                amp_asym * cx_antisymmetric_shape(&p, t)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    };
    Ok(CxEnvelopes { control, target_symmetric, target_antisymmetric })
}

/// Builds the two-transmon frame operator and drive operators on the tensor
/// product space (transmon 0 is the left factor):
/// `F = -i(2 pi nu_0 N_0 + pi alpha_0 N_0(N_0 - 1) + (same for 1)
///       + 2 pi J (a_0 a_1^dag + a_0^dag a_1))`, `A_j = -i 2 pi (a_j + a_j^dag)`.
pub fn build_two_transmon_generator(
    p: &TwoTransmonParams,
) -> Result<(ComplexMatrix, [ComplexMatrix; 2]), ModelError> {
    p.validate()?;
    let dim = p.dim;
    let eye = ComplexMatrix::identity(dim);
    let n = number_op(dim);
    let a = annihilation_op(dim);

    let n0 = n.kron(&eye);
    let n1 = eye.kron(&n);
    let a0 = a.kron(&eye);
    let a1 = eye.kron(&a);
    let eye2 = ComplexMatrix::identity(dim * dim);

    let duffing = |num: &ComplexMatrix, nu: f64, alpha: f64| {
        let mut h = num.scale_real(TAU * nu);
        let shifted = num - &eye2;
        h.axpy(Complex64::new(PI * alpha, 0.0), &(num * &shifted));
        h
    };
    let mut h_static = duffing(&n0, p.nu0, p.alpha0);
    h_static = &h_static + &duffing(&n1, p.nu1, p.alpha1);
    let exchange = &(&a0 * &a1.adjoint()) + &(&a0.adjoint() * &a1);
    h_static.axpy(Complex64::new(TAU * p.coupling, 0.0), &exchange);

    let f = h_static.scale(minus_i());
    let drive = |a_j: &ComplexMatrix| (a_j + &a_j.adjoint()).scale(minus_i().scale(TAU));
    Ok((f, [drive(&a0), drive(&a1)]))
}
