//! Independent cross-check for the Dyson engine: evaluates the explicit
//! time-ordered integral representation
//!
//! ```text
//! D_I(T) = sum_k sum_{(I1,...,Ik) partitioning I}
//!          int_{t0 <= tk <= ... <= t1 <= T} Gt_{I1}(t1) ... Gt_{Ik}(tk)
//! ```
//!
//! with `Gt_I(t) = V(t)^-1 G_I(t) V(t)`, by nested cumulative quadrature on a
//! uniform grid. Shares no code path with the coupled-ODE formulation beyond
//! basic matrix arithmetic.

use super::{GeneratorFn, PerturbationError};
use crate::linalg::{solve_linear, ComplexMatrix};
use crate::multiset::Multiset;
use crate::ode::{self, OdeMethod, OdeProblem};
use num_complex::Complex64;
use std::collections::HashMap;

/// Evaluates `D_I(T)` (or `E_I(T) = V(T) D_I(T)` when `remove_frame` is
/// false) for each requested label. `quad_points` must be odd and >= 3; it is
/// the number of uniform grid points, so resolution is `span / (n - 1)`.
pub fn dyson_oracle(
    frame_generator: &GeneratorFn,
    perturbations: &[(Multiset, GeneratorFn)],
    t_span: [f64; 2],
    labels: &[Multiset],
    quad_points: usize,
    remove_frame: bool,
) -> Result<Vec<ComplexMatrix>, PerturbationError> {
    assert!(quad_points >= 3 && quad_points % 2 == 1, "quad_points must be odd and >= 3");
    let [t0, t1] = t_span;
    let n = quad_points;
    let h = (t1 - t0) / (n - 1) as f64;
    let dim = frame_generator(t0).rows();

    // V at every grid point, integrated segment by segment
    let mut frames = Vec::with_capacity(n);
    frames.push(ComplexMatrix::identity(dim));
    for k in 1..n {
        let start = frames.last().unwrap().clone();
        let g = frame_generator.clone();
        let rhs = move |t: f64, y: &Vec<ComplexMatrix>| vec![&g(t) * &y[0]];
        let problem =
            OdeProblem::new(rhs, [t0 + (k - 1) as f64 * h, t0 + k as f64 * h], vec![start]);
        let sol = ode::solve(&problem, OdeMethod::Dopri { rtol: 1e-13, atol: 1e-13 })?;
        frames.push(sol.y_final.into_iter().next().unwrap());
    }

    // toggled generators at every grid point, per perturbation label
    let mut toggled: HashMap<&Multiset, Vec<ComplexMatrix>> = HashMap::new();
    for (label, f) in perturbations {
        let mut values = Vec::with_capacity(n);
        for (k, v) in frames.iter().enumerate() {
            let t = t0 + k as f64 * h;
            let gv = &f(t) * v;
            values.push(solve_linear(v, &gv)?);
        }
        toggled.insert(label, values);
    }
    let zero_series = vec![ComplexMatrix::zeros(dim, dim); n];

    let mut results = Vec::with_capacity(labels.len());
    for label in labels {
        let mut total = ComplexMatrix::zeros(dim, dim);
        for k in 1..=label.size() {
            for tuple in label.ordered_partitions(k) {
                // innermost (last tuple entry, earliest time) first; each
                // level left-multiplies its generator and integrates again
                let mut cumulative: Option<Vec<ComplexMatrix>> = None;
                for part in tuple.iter().rev() {
                    let g_series = toggled.get(part).map(|v| v.as_slice()).unwrap_or(&zero_series);
                    let integrand: Vec<ComplexMatrix> = match &cumulative {
                        None => g_series.to_vec(),
                        Some(c) => g_series.iter().zip(c).map(|(g, ck)| g * ck).collect(),
                    };
                    cumulative = Some(cumulative_integral(&integrand, h));
                }
                total.axpy(Complex64::new(1.0, 0.0), cumulative.unwrap().last().unwrap());
            }
        }
        if remove_frame {
            results.push(total);
        } else {
            results.push(frames.last().unwrap() * &total);
        }
    }
    Ok(results)
}

/// Cumulative integral on a uniform grid with an odd number of points:
/// Simpson's rule across each panel, with the quadratic interpolant supplying
/// the half-panel value at the interior point.
fn cumulative_integral(f: &[ComplexMatrix], h: f64) -> Vec<ComplexMatrix> {
    let n = f.len();
    let dim = f[0].rows();
    let mut c = Vec::with_capacity(n);
    c.push(ComplexMatrix::zeros(dim, dim));
    let mut k = 0;
    while k + 2 < n {
        let mut mid = c[k].clone();
        mid.axpy(Complex64::new(5.0 * h / 12.0, 0.0), &f[k]);
        mid.axpy(Complex64::new(8.0 * h / 12.0, 0.0), &f[k + 1]);
        mid.axpy(Complex64::new(-h / 12.0, 0.0), &f[k + 2]);
        let mut full = c[k].clone();
        full.axpy(Complex64::new(h / 3.0, 0.0), &f[k]);
        full.axpy(Complex64::new(4.0 * h / 3.0, 0.0), &f[k + 1]);
        full.axpy(Complex64::new(h / 3.0, 0.0), &f[k + 2]);
        c.push(mid);
        c.push(full);
        k += 2;
    }
    c
}
