//! Initial-value-problem integrators over block-matrix states: fixed-step
//! RK4 and adaptive Dormand-Prince 5(4) with PI step-size control.

use crate::linalg::ComplexMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// State of the coupled system: an ordered block of matrices.
pub type BlockState = Vec<ComplexMatrix>;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("non-finite state encountered at t = {t}")]
    Divergence { t: f64 },
    #[error("step size underflow at t = {t}; the problem appears stiff")]
    StepUnderflow { t: f64 },
    #[error("invalid tolerance: rtol and atol must be positive")]
    InvalidTolerance,
}

/// An initial value problem `y' = rhs(t, y)` over `t_span`.
pub struct OdeProblem<'a> {
    pub rhs: Box<dyn Fn(f64, &BlockState) -> BlockState + 'a>,
    pub t_span: [f64; 2],
    pub y0: BlockState,
}

impl<'a> OdeProblem<'a> {
    pub fn new<F>(rhs: F, t_span: [f64; 2], y0: BlockState) -> Self
    where
        F: Fn(f64, &BlockState) -> BlockState + 'a,
    {
        assert!(t_span[1] >= t_span[0], "t_span must be ordered");
        OdeProblem { rhs: Box::new(rhs), t_span, y0 }
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t_final: f64,
    pub y_final: BlockState,
    pub n_steps: usize,
    pub n_rejected: usize,
}

/// Method selector carried around by higher-level configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OdeMethod {
    Rk4 { dt: f64 },
    Dopri { rtol: f64, atol: f64 },
}

impl Default for OdeMethod {
    // the demos run at rtol = atol = 1e-12
    fn default() -> Self {
        OdeMethod::Dopri { rtol: 1e-12, atol: 1e-12 }
    }
}

pub fn solve(problem: &OdeProblem, method: OdeMethod) -> Result<OdeSolution, OdeError> {
    match method {
        OdeMethod::Rk4 { dt } => solve_rk4(problem, dt),
        OdeMethod::Dopri { rtol, atol } => solve_dopri(problem, rtol, atol),
    }
}

fn state_axpy(y: &mut BlockState, factor: f64, k: &BlockState) {
    let f = Complex64::new(factor, 0.0);
    for (a, b) in y.iter_mut().zip(k) {
        a.axpy(f, b);
    }
}

fn state_is_finite(y: &BlockState) -> bool {
    y.iter().all(ComplexMatrix::is_finite)
}

/// Classical RK4 with uniform steps; the final partial step is shortened to
/// land exactly on `tf`.
pub fn solve_rk4(problem: &OdeProblem, dt: f64) -> Result<OdeSolution, OdeError> {
    assert!(dt > 0.0, "dt must be positive");
    let [t0, tf] = problem.t_span;
    let mut t = t0;
    let mut y = problem.y0.clone();
    let mut n_steps = 0;
    while t < tf - 1e-14 * (tf - t0).max(1.0) {
        let h = dt.min(tf - t);
        let k1 = (problem.rhs)(t, &y);
        let mut y2 = y.clone();
        state_axpy(&mut y2, h / 2.0, &k1);
        let k2 = (problem.rhs)(t + h / 2.0, &y2);
        let mut y3 = y.clone();
        state_axpy(&mut y3, h / 2.0, &k2);
        let k3 = (problem.rhs)(t + h / 2.0, &y3);
        let mut y4 = y.clone();
        state_axpy(&mut y4, h, &k3);
        let k4 = (problem.rhs)(t + h, &y4);
        state_axpy(&mut y, h / 6.0, &k1);
        state_axpy(&mut y, h / 3.0, &k2);
        state_axpy(&mut y, h / 3.0, &k3);
        state_axpy(&mut y, h / 6.0, &k4);
        t += h;
        n_steps += 1;
        if !state_is_finite(&y) {
            return Err(OdeError::Divergence { t });
        }
    }
    Ok(OdeSolution { t_final: tf, y_final: y, n_steps, n_rejected: 0 })
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Dormand-Prince 5(4) embedded pair. The local error per step is controlled
/// by `atol + rtol * |y|` elementwise in the max norm; step sizes follow a PI
/// controller.
pub fn solve_dopri(problem: &OdeProblem, rtol: f64, atol: f64) -> Result<OdeSolution, OdeError> {
    if rtol <= 0.0 || atol <= 0.0 {
        return Err(OdeError::InvalidTolerance);
    }
    let [t0, tf] = problem.t_span;
    let span = tf - t0;
    if span == 0.0 {
        return Ok(OdeSolution { t_final: tf, y_final: problem.y0.clone(), n_steps: 0, n_rejected: 0 });
    }
    let mut t = t0;
    let mut y = problem.y0.clone();
    let mut k0 = (problem.rhs)(t, &y);
    let mut h = initial_step(problem, &y, &k0, rtol, atol);
    let mut n_steps = 0;
    let mut n_rejected = 0;
    let mut err_prev: f64 = 1.0;
    loop {
        if t >= tf - 1e-14 * span.max(1.0) {
            break;
        }
        h = h.min(tf - t);
        if h < 1e-14 * span {
            return Err(OdeError::StepUnderflow { t });
        }
        // stages; k[0] reused from the previous step (FSAL)
        let mut k: Vec<BlockState> = Vec::with_capacity(7);
        k.push(k0.clone());
        for stage in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    state_axpy(&mut ys, h * a, kj);
                }
            }
            k.push((problem.rhs)(t + DP_C[stage] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if DP_B5[j] != 0.0 {
                state_axpy(&mut y5, h * DP_B5[j], kj);
            }
            if DP_B4[j] != 0.0 {
                state_axpy(&mut y4, h * DP_B4[j], kj);
            }
        }
        if !state_is_finite(&y5) {
            return Err(OdeError::Divergence { t: t + h });
        }
        // max over elementwise scaled errors
        let mut err: f64 = 0.0;
        for ((b5, b4), yb) in y5.iter().zip(&y4).zip(&y) {
            for ((e5, e4), e0) in b5.data().iter().zip(b4.data()).zip(yb.data()) {
                let scale = atol + rtol * e0.norm().max(e5.norm());
                err = err.max((e5 - e4).norm() / scale);
            }
        }
        if err <= 1.0 {
            t += h;
            k0 = k.pop().unwrap();
            y = y5;
            n_steps += 1;
            // PI controller (order 5: exponents 0.7/5 and 0.4/5)
            let err = err.max(1e-10);
            let factor = 0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= factor.clamp(0.2, 5.0);
            err_prev = err;
        } else {
            n_rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    Ok(OdeSolution { t_final: tf, y_final: y, n_steps, n_rejected })
}

/// Initial step: 1/100 of the span, capped by a curvature estimate from the
/// initial derivative magnitude.
fn initial_step(problem: &OdeProblem, y: &BlockState, k0: &BlockState, rtol: f64, atol: f64) -> f64 {
    let span = problem.t_span[1] - problem.t_span[0];
    let base = span / 100.0;
    let y_norm: f64 = y.iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    let d_norm: f64 = k0.iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    if d_norm <= 1e-30 {
        return base;
    }
    let tol = atol + rtol * y_norm.max(1.0);
    // cap so the first explicit Euler move is on the order of the tolerance^(1/5)
    let cap = 0.01 * (y_norm.max(tol) / d_norm);
    base.min(cap.max(1e-10 * span))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, ComplexMatrix};
    use num_complex::Complex64 as C;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn block_diff(a: &BlockState, b: &BlockState) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).frobenius_norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rk4_constant_state() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, 2.0)]]);
        let p = OdeProblem::new(
            |_t, y: &BlockState| y.iter().map(|b| b.scale_real(0.0)).collect(),
            [0.0, 1.0],
            vec![m.clone()],
        );
        let sol = solve_rk4(&p, 0.1).unwrap();
        assert!(block_diff(&sol.y_final, &vec![m]) < 1e-15);
    }

    #[test]
    fn rk4_periodic_return() {
        // scalar y' = -i w y returns to start after one period
        let w = 3.0;
        let y0 = vec![ComplexMatrix::from_rows(&[vec![c(1.0, 0.0)]])];
        let p = OdeProblem::new(
            move |_t, y: &BlockState| vec![y[0].scale(c(0.0, -w))],
            [0.0, 2.0 * std::f64::consts::PI / w],
            y0.clone(),
        );
        let sol = solve_rk4(&p, 2.0 * std::f64::consts::PI / w / 400.0).unwrap();
        assert!(block_diff(&sol.y_final, &y0) < 1e-7);
    }

    fn random_generator() -> ComplexMatrix {
        // fixed non-normal 2x2 with norm around 1
        ComplexMatrix::from_rows(&[
            vec![c(0.3, -0.2), c(0.5, 0.4)],
            vec![c(-0.4, 0.1), c(-0.1, 0.6)],
        ])
    }

    #[test]
    fn rk4_matches_expm_for_constant_generator() {
        let a = random_generator();
        let p = OdeProblem::new(
            {
                let a = a.clone();
                move |_t, y: &BlockState| vec![&a * &y[0]]
            },
            [0.0, 1.0],
            vec![ComplexMatrix::identity(2)],
        );
        let sol = solve_rk4(&p, 1e-3).unwrap();
        let expected = expm(&a).unwrap();
        assert!((&sol.y_final[0] - &expected).frobenius_norm() < 1e-8);
    }

    #[test]
    fn dopri_trivial_and_expm_oracle() {
        let y0 = vec![ComplexMatrix::identity(2)];
        let p = OdeProblem::new(
            |_t, y: &BlockState| y.iter().map(|b| b.scale_real(0.0)).collect(),
            [0.0, 1.0],
            y0.clone(),
        );
        let sol = solve_dopri(&p, 1e-10, 1e-10).unwrap();
        assert!(block_diff(&sol.y_final, &y0) < 1e-15);

        let a = random_generator();
        let p = OdeProblem::new(
            {
                let a = a.clone();
                move |_t, y: &BlockState| vec![&a * &y[0]]
            },
            [0.0, 1.0],
            vec![ComplexMatrix::identity(2)],
        );
        let sol = solve_dopri(&p, 1e-12, 1e-12).unwrap();
        let expected = expm(&a).unwrap();
        assert!((&sol.y_final[0] - &expected).frobenius_norm() < 1e-10);
    }

    fn driven_problem<'a>(t_span: [f64; 2]) -> OdeProblem<'a> {
        OdeProblem::new(
            |t: f64, y: &BlockState| {
                let sx = ComplexMatrix::from_rows(&[
                    vec![c(0.0, 0.0), c(0.0, -(2.0 * t).cos())],
                    vec![c(0.0, -(2.0 * t).cos()), c(0.0, 0.0)],
                ]);
                vec![&sx * &y[0]]
            },
            t_span,
            vec![ComplexMatrix::identity(2)],
        )
    }

    #[test]
    fn dopri_self_convergence() {
        let reference = solve_dopri(&driven_problem([0.0, 3.0]), 1e-14, 1e-14).unwrap();
        let mut errors = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let sol = solve_dopri(&driven_problem([0.0, 3.0]), tol, tol).unwrap();
            errors.push(block_diff(&sol.y_final, &reference.y_final));
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "errors {errors:?}");
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let reference = solve_dopri(&driven_problem([0.0, 3.0]), 1e-14, 1e-14).unwrap();
        let coarse = solve_rk4(&driven_problem([0.0, 3.0]), 3.0 / 200.0).unwrap();
        let fine = solve_rk4(&driven_problem([0.0, 3.0]), 3.0 / 400.0).unwrap();
        let e_coarse = block_diff(&coarse.y_final, &reference.y_final);
        let e_fine = block_diff(&fine.y_final, &reference.y_final);
        let ratio = e_coarse / e_fine;
        assert!((12.0..=20.0).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn dopri_unitary_propagator_for_antihermitian_generator() {
        let sol = solve_dopri(&driven_problem([0.0, 5.0]), 1e-12, 1e-12).unwrap();
        let u = &sol.y_final[0];
        let defect = (&(&u.adjoint() * u) - &ComplexMatrix::identity(2)).frobenius_norm();
        assert!(defect < 1e-9, "unitarity defect {defect}");
    }
}
