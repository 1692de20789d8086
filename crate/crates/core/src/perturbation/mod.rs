//! Multivariable Dyson and Magnus expansion terms for linear matrix
//! differential equations with a power-series generator decomposition.
//!
//! The Dyson engine phrases the requested terms, together with the
//! interaction-frame propagator, as one coupled linear matrix ODE and
//! integrates it. The Magnus engine post-processes Dyson terms through the
//! Q-matrix recursion.

mod oracle;
mod poly;

pub use oracle::dyson_oracle;
pub use poly::{ArrayPolynomial, PolyError};

use crate::linalg::{solve_linear, ComplexMatrix, LinalgError};
use crate::multiset::{complete, Multiset};
use crate::ode::{self, BlockState, OdeError, OdeMethod, OdeProblem};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

/// Shared matrix-valued function of time.
pub type GeneratorFn = Arc<dyn Fn(f64) -> ComplexMatrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    Dyson,
    Magnus,
}

#[derive(Debug, Error)]
pub enum PerturbationError {
    #[error("operator dimension mismatch: expected {expected}x{expected}, got {got_rows}x{got_cols}")]
    DimensionMismatch { expected: usize, got_rows: usize, got_cols: usize },
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("frame removal failed: {0}")]
    Linalg(#[from] LinalgError),
}

/// Description of the generator power series and which terms to compute.
#[derive(Clone)]
pub struct PerturbationProblem {
    /// `G_empty(t)`, the interaction frame generator.
    pub frame_generator: GeneratorFn,
    /// Nonzero power-series terms `(I, G_I(t))`; any label not listed is 0.
    pub perturbations: Vec<(Multiset, GeneratorFn)>,
    pub t_span: [f64; 2],
    /// Labels of the requested terms. Completion is applied automatically.
    pub requested: Vec<Multiset>,
    pub expansion: Expansion,
    /// Return `D_I(T) = V(T)^-1 E_I(T)` instead of `E_I(T)`. Forced on for
    /// the Magnus expansion, whose recursion consumes `D_I`.
    pub remove_frame: bool,
    pub method: OdeMethod,
}

impl PerturbationProblem {
    pub fn new(
        frame_generator: GeneratorFn,
        perturbations: Vec<(Multiset, GeneratorFn)>,
        t_span: [f64; 2],
        requested: Vec<Multiset>,
        expansion: Expansion,
    ) -> Self {
        // E_I is what the stepping solvers consume, so Dyson keeps the frame
        // by default; the Magnus recursion needs D_I.
        let remove_frame = matches!(expansion, Expansion::Magnus);
        PerturbationProblem {
            frame_generator,
            perturbations,
            t_span,
            requested,
            expansion,
            remove_frame,
            method: OdeMethod::default(),
        }
    }

    pub fn with_method(mut self, method: OdeMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_remove_frame(mut self, remove_frame: bool) -> Self {
        self.remove_frame = remove_frame;
        self
    }
}

/// Computed expansion terms aligned with the completed, canonically ordered
/// label list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationResult {
    /// Interaction frame propagator `V(T)`.
    pub frame_solution: ComplexMatrix,
    pub labels: Vec<Multiset>,
    /// `E_I(T)`, `D_I(T)`, or `O_I(T)` depending on expansion and flags.
    pub terms: Vec<ComplexMatrix>,
}

impl PerturbationResult {
    pub fn term(&self, label: &Multiset) -> Option<&ComplexMatrix> {
        self.labels.iter().position(|l| l == label).map(|i| &self.terms[i])
    }

    /// Packages the terms as an evaluable polynomial (no constant part).
    pub fn to_polynomial(&self) -> ArrayPolynomial {
        ArrayPolynomial::new(
            None,
            self.labels.iter().cloned().zip(self.terms.iter().cloned()).collect(),
        )
    }
}

/// Entry point dispatching on the requested expansion.
pub fn compute_perturbation_terms(
    problem: &PerturbationProblem,
) -> Result<PerturbationResult, PerturbationError> {
    match problem.expansion {
        Expansion::Dyson => compute_dyson_terms(problem),
        Expansion::Magnus => compute_magnus_terms(problem),
    }
}

/// Computes multivariable Dyson terms by integrating the coupled system
/// `y = (V, E_I1, ..., E_Im)` with
/// `E_I' = G_empty E_I + G_I V + sum_{J proper subset I} G_J E_{I \ J}`.
pub fn compute_dyson_terms(
    problem: &PerturbationProblem,
) -> Result<PerturbationResult, PerturbationError> {
    let labels = complete(&problem.requested);
    let dim = infer_dimension(problem)?;

    let pert_index: HashMap<&Multiset, usize> =
        problem.perturbations.iter().enumerate().map(|(i, (l, _))| (l, i)).collect();
    let label_index: HashMap<&Multiset, usize> =
        labels.iter().enumerate().map(|(i, l)| (l, i)).collect();

    // For each E_I, the couplings (perturbation j, source block) contributing
    // G_j(t) * y[source]; block 0 is V. Unsupplied G_J are simply absent.
    let mut couplings: Vec<Vec<(usize, usize)>> = Vec::with_capacity(labels.len());
    for label in &labels {
        let mut list = Vec::new();
        if let Some(&j) = pert_index.get(label) {
            list.push((j, 0));
        }
        for sub in label.submultisets_proper() {
            if let Some(&j) = pert_index.get(&sub) {
                let rest = label.difference(&sub);
                list.push((j, 1 + label_index[&rest]));
            }
        }
        couplings.push(list);
    }

    let mut y0: BlockState = vec![ComplexMatrix::zeros(dim, dim); labels.len() + 1];
    y0[0] = ComplexMatrix::identity(dim);

    let frame = problem.frame_generator.clone();
    let perts: Vec<GeneratorFn> = problem.perturbations.iter().map(|(_, f)| f.clone()).collect();
    let couplings_ref = &couplings;
    let rhs = move |t: f64, y: &BlockState| -> BlockState {
        let g0 = frame(t);
        let g: Vec<ComplexMatrix> = perts.iter().map(|f| f(t)).collect();
        let mut dy: BlockState = Vec::with_capacity(y.len());
        dy.push(&g0 * &y[0]);
        for (block, list) in couplings_ref.iter().enumerate() {
            let mut d = &g0 * &y[block + 1];
            for &(j, source) in list {
                let product = &g[j] * &y[source];
                d.axpy(num_complex::Complex64::new(1.0, 0.0), &product);
            }
            dy.push(d);
        }
        dy
    };

    let ode_problem = OdeProblem::new(rhs, problem.t_span, y0);
    let solution = ode::solve(&ode_problem, problem.method)?;
    let mut state = solution.y_final;
    let frame_solution = state.remove(0);

    let terms = if problem.remove_frame {
        state
            .iter()
            .map(|e| solve_linear(&frame_solution, e))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        state
    };

    Ok(PerturbationResult { frame_solution, labels, terms })
}

/// Computes multivariable Magnus terms: Dyson terms with the frame removed,
/// then the recursion `O_I = D_I - sum_{m=2}^{|I|} Q_I^(m) / m!` with
/// `Q_I^(m) = sum_{J proper subset I, |J| <= |I|-(m-1)} Q_J^(1) Q_{I\J}^(m-1)`.
pub fn compute_magnus_terms(
    problem: &PerturbationProblem,
) -> Result<PerturbationResult, PerturbationError> {
    let dyson = compute_dyson_terms(&problem.clone().with_remove_frame(true))?;
    let terms = magnus_from_dyson(&dyson.labels, &dyson.terms);
    Ok(PerturbationResult { frame_solution: dyson.frame_solution, labels: dyson.labels, terms })
}

/// The Q-matrix recursion. `labels` must be complete and sorted in
/// non-decreasing length so every dependency appears earlier.
pub fn magnus_from_dyson(labels: &[Multiset], dyson_terms: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    assert_eq!(labels.len(), dyson_terms.len());
    let mut q: HashMap<(Multiset, usize), ComplexMatrix> = HashMap::new();
    for (label, d_term) in labels.iter().zip(dyson_terms) {
        let size = label.size();
        // m descending so Q_I^(1) sees all higher-m values for this label
        for m in (1..=size).rev() {
            let value = if m == 1 {
                if size == 1 {
                    d_term.clone()
                } else {
                    let mut acc = d_term.clone();
                    let mut factorial = 1.0;
                    for k in 2..=size {
                        factorial *= k as f64;
                        acc.axpy(
                            num_complex::Complex64::new(-1.0 / factorial, 0.0),
                            &q[&(label.clone(), k)],
                        );
                    }
                    acc
                }
            } else {
                let mut acc: Option<ComplexMatrix> = None;
                for sub in label.submultisets_proper() {
                    if sub.size() > size - (m - 1) {
                        continue;
                    }
                    let rest = label.difference(&sub);
                    let product = &q[&(sub.clone(), 1)] * &q[&(rest, m - 1)];
                    acc = Some(match acc {
                        Some(a) => &a + &product,
                        None => product,
                    });
                }
                acc.unwrap_or_else(|| {
                    let d = d_term.rows();
                    ComplexMatrix::zeros(d, d)
                })
            };
            q.insert((label.clone(), m), value);
        }
    }
    labels.iter().map(|l| q.remove(&(l.clone(), 1)).unwrap()).collect()
}

fn infer_dimension(problem: &PerturbationProblem) -> Result<usize, PerturbationError> {
    let t0 = problem.t_span[0];
    let g0 = (problem.frame_generator)(t0);
    let dim = g0.rows();
    if g0.cols() != dim {
        return Err(PerturbationError::DimensionMismatch {
            expected: dim,
            got_rows: g0.rows(),
            got_cols: g0.cols(),
        });
    }
    for (_, f) in &problem.perturbations {
        let g = f(t0);
        if g.rows() != dim || g.cols() != dim {
            return Err(PerturbationError::DimensionMismatch {
                expected: dim,
                got_rows: g.rows(),
                got_cols: g.cols(),
            });
        }
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use num_complex::Complex64 as C;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn ms(v: &[usize]) -> Multiset {
        Multiset::new(v.to_vec())
    }

    fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]])
    }

    fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::diag_real(&[1.0, -1.0])
    }

    fn constant(m: ComplexMatrix) -> GeneratorFn {
        Arc::new(move |_| m.clone())
    }

    fn zero(dim: usize) -> GeneratorFn {
        Arc::new(move |_| ComplexMatrix::zeros(dim, dim))
    }

    #[test]
    fn frame_only_problem() {
        let g = sigma_z().scale(c(0.0, -PI));
        let p = PerturbationProblem::new(constant(g.clone()), vec![], [0.0, 1.0], vec![], Expansion::Dyson);
        let result = compute_dyson_terms(&p).unwrap();
        assert!(result.labels.is_empty());
        let expected = expm(&g).unwrap();
        assert!((&result.frame_solution - &expected).frobenius_norm() < 1e-10);
    }

    #[test]
    fn first_order_constant_term() {
        // zero frame, constant perturbation A: D_(0) = A T
        let a = sigma_x().scale(c(0.0, -0.7));
        let t_final = 1.3;
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(a.clone()))],
            [0.0, t_final],
            vec![ms(&[0])],
            Expansion::Dyson,
        );
        let result = compute_dyson_terms(&p).unwrap();
        let expected = a.scale_real(t_final);
        assert!((result.term(&ms(&[0])).unwrap() - &expected).frobenius_norm() < 1e-10);
    }

    #[test]
    fn second_order_constant_term() {
        // D_(0,0) = A^2 T^2 / 2 for constant A and zero frame
        let a = sigma_x().scale(c(0.0, -0.5));
        let t_final = 2.0;
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(a.clone()))],
            [0.0, t_final],
            vec![ms(&[0, 0])],
            Expansion::Dyson,
        );
        let result = compute_dyson_terms(&p).unwrap();
        let expected = (&a * &a).scale_real(t_final * t_final / 2.0);
        assert!((result.term(&ms(&[0, 0])).unwrap() - &expected).frobenius_norm() < 1e-9);
        // completion pulled in the first-order label
        assert_eq!(result.labels, vec![ms(&[0]), ms(&[0, 0])]);
    }

    #[test]
    fn factorization_v_times_d_equals_e() {
        let frame = sigma_z().scale(c(0.0, -1.1));
        let a = sigma_x().scale(c(0.0, -0.4));
        let build = |remove: bool| {
            let p = PerturbationProblem::new(
                constant(frame.clone()),
                vec![(ms(&[0]), constant(a.clone()))],
                [0.0, 1.0],
                vec![ms(&[0, 0])],
                Expansion::Dyson,
            )
            .with_remove_frame(remove);
            compute_dyson_terms(&p).unwrap()
        };
        let e_form = build(false);
        let d_form = build(true);
        for (e, d) in e_form.terms.iter().zip(&d_form.terms) {
            let recomposed = &e_form.frame_solution * d;
            assert!((&recomposed - e).frobenius_norm() < 1e-10);
        }
    }

    #[test]
    fn magnus_first_order_equals_dyson() {
        let a: GeneratorFn = Arc::new(|t: f64| sigma_x().scale(c(0.0, -t.cos())));
        let b: GeneratorFn = Arc::new(|t: f64| sigma_z().scale(c(0.0, -0.3 * t)));
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), a), (ms(&[1]), b)],
            [0.0, 1.0],
            vec![ms(&[0, 1])],
            Expansion::Magnus,
        );
        let magnus = compute_magnus_terms(&p).unwrap();
        let dyson = compute_dyson_terms(&p.clone().with_remove_frame(true)).unwrap();
        for (label, (o, d)) in magnus.labels.iter().zip(magnus.terms.iter().zip(&dyson.terms)) {
            if label.size() == 1 {
                assert_eq!(o.data(), d.data(), "O and D must agree bitwise at order 1");
            }
        }
    }

    #[test]
    fn magnus_second_order_vanishes_for_constant_generator() {
        let a = sigma_x().scale(c(0.0, -0.6));
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(a))],
            [0.0, 1.5],
            vec![ms(&[0, 0])],
            Expansion::Magnus,
        );
        let result = compute_magnus_terms(&p).unwrap();
        assert!(result.term(&ms(&[0, 0])).unwrap().frobenius_norm() < 1e-9);
    }

    fn two_variable_problem(expansion: Expansion) -> PerturbationProblem {
        let g0: GeneratorFn = Arc::new(|t: f64| sigma_x().scale(c(0.0, -t.cos())));
        let g1: GeneratorFn = Arc::new(|_t: f64| sigma_z().scale(c(0.0, -1.0)));
        PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), g0), (ms(&[1]), g1)],
            [0.0, 1.0],
            crate::multiset::all_up_to_order(2, 2),
            expansion,
        )
    }

    /// Reference propagator for the c-parameterized generator.
    fn reference_propagator(p: &PerturbationProblem, coeffs: &[f64]) -> ComplexMatrix {
        let perts = p.perturbations.clone();
        let frame = p.frame_generator.clone();
        let coeffs = coeffs.to_vec();
        let rhs = move |t: f64, y: &BlockState| -> BlockState {
            let mut g = frame(t);
            for ((label, f), &_c0) in perts.iter().zip(&coeffs) {
                let scalar: f64 = label.elements().iter().map(|&i| coeffs[i]).product();
                g.axpy(c(scalar, 0.0), &f(t));
            }
            vec![&g * &y[0]]
        };
        let problem = OdeProblem::new(rhs, p.t_span, vec![ComplexMatrix::identity(2)]);
        ode::solve(&problem, OdeMethod::Dopri { rtol: 1e-13, atol: 1e-13 }).unwrap().y_final[0].clone()
    }

    #[test]
    fn magnus_series_self_convergence() {
        // error of exp(sum c_I O_I) vs the true propagator is O(|c|^3) for a
        // second-order truncation: halving c shrinks it by about 8
        let p = two_variable_problem(Expansion::Magnus);
        let result = compute_magnus_terms(&p).unwrap();
        let poly = result.to_polynomial();
        let err_at = |scale: f64| {
            let coeffs = [0.08 * scale, 0.06 * scale];
            let omega = poly.eval(&coeffs).unwrap();
            let approx = expm(&omega).unwrap();
            let reference = reference_propagator(&p, &coeffs);
            (&approx - &reference).frobenius_norm()
        };
        let e1 = err_at(1.0);
        let e2 = err_at(0.5);
        let ratio = e1 / e2;
        assert!(ratio > 2f64.powf(2.5), "convergence ratio {ratio} too small (e1={e1}, e2={e2})");
    }

    #[test]
    fn dyson_series_self_convergence() {
        let p = two_variable_problem(Expansion::Dyson);
        let result = compute_dyson_terms(&p).unwrap();
        let poly = result.to_polynomial();
        let err_at = |scale: f64| {
            let coeffs = [0.08 * scale, 0.06 * scale];
            let mut approx = poly.eval(&coeffs).unwrap();
            approx.axpy(c(1.0, 0.0), &ComplexMatrix::identity(2));
            let reference = reference_propagator(&p, &coeffs);
            (&approx - &reference).frobenius_norm()
        };
        let ratio = err_at(1.0) / err_at(0.5);
        assert!(ratio > 2f64.powf(2.5), "convergence ratio {ratio} too small");
    }

    #[test]
    fn unsupplied_variable_yields_zero_terms() {
        // requesting labels over a variable with no supplied generator
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(sigma_x().scale(c(0.0, -1.0))))],
            [0.0, 1.0],
            vec![ms(&[1, 1])],
            Expansion::Dyson,
        );
        let result = compute_dyson_terms(&p).unwrap();
        for label in [ms(&[1]), ms(&[1, 1])] {
            assert!(result.term(&label).unwrap().frobenius_norm() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(ComplexMatrix::identity(3)))],
            [0.0, 1.0],
            vec![ms(&[0])],
            Expansion::Dyson,
        );
        assert!(matches!(
            compute_dyson_terms(&p),
            Err(PerturbationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn result_json_roundtrip() {
        let a = sigma_x().scale(c(0.0, -0.7));
        let p = PerturbationProblem::new(
            zero(2),
            vec![(ms(&[0]), constant(a))],
            [0.0, 1.0],
            vec![ms(&[0])],
            Expansion::Dyson,
        );
        let result = compute_dyson_terms(&p).unwrap();
        let json = serde_json::to_string(&result).unwrap();
        let back: PerturbationResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.labels, result.labels);
        assert_eq!(back.terms.len(), result.terms.len());
    }
}
