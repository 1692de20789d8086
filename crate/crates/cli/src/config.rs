//! JSON config schemas and shared model-building helpers. Unknown keys are
//! rejected everywhere so typos fail loudly instead of silently using
//! defaults.

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use perturbdyn::models::{
    build_transmon_perturbation_problem, build_two_transmon_generator, chebyshev_control_basis,
    cx_envelopes, smooth_envelope, CxPulseParams, TransmonParams, TwoTransmonParams,
};
use perturbdyn::multiset::all_up_to_order;
use perturbdyn::ode::{self, OdeMethod, OdeProblem};
use perturbdyn::pertsolver::PertSolverConfig;
use perturbdyn::signal::{EnvelopeFn, PiecewiseConstantEnvelope, Signal};
use perturbdyn::{ComplexMatrix, Expansion, Multiset, PerturbationProblem};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::Arc;

pub const NUM_TRANSMON_CHANNELS: usize = 6;

/// How the drive envelope is produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ControlSpec {
    /// Fixed complex envelope value.
    Constant { re: f64, im: f64 },
    /// The smooth bounded parameterization with seeded random coefficients
    /// drawn uniformly from `[-scale, scale]` (8 Chebyshev basis vectors over
    /// 50 ns, resampled at 0.125 ns, Gaussian-smoothed).
    SmoothRandom { scale: f64 },
    /// Explicit piecewise-constant samples.
    Samples { dt: f64, t_start: f64, samples: Vec<[f64; 2]> },
}

pub fn build_envelope(spec: &ControlSpec, seed: u64) -> Result<EnvelopeFn> {
    Ok(match spec {
        ControlSpec::Constant { re, im } => {
            let value = Complex64::new(*re, *im);
            Arc::new(move |_| value)
        }
        ControlSpec::SmoothRandom { scale } => {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let k = 8;
            let mut draw = |_| rng.gen_range(-*scale..=*scale);
            let b_real: Vec<f64> = (0..k).map(&mut draw).collect();
            let b_imag: Vec<f64> = (0..k).map(&mut draw).collect();
            let basis = chebyshev_control_basis(1.0, 50, k);
            smooth_envelope(&b_real, &b_imag, &basis, 0.125, 0.5, 24)?.as_fn()
        }
        ControlSpec::Samples { dt, t_start, samples } => {
            let values = samples.iter().map(|&[re, im]| Complex64::new(re, im)).collect();
            PiecewiseConstantEnvelope::new(*dt, *t_start, values).as_fn()
        }
    })
}

/// The single-transmon model block shared by several commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonSection {
    pub params: TransmonParams,
    /// Carrier frequency of the drive (GHz).
    pub mu: f64,
    pub control: ControlSpec,
}

fn default_channels() -> Vec<usize> {
    (0..NUM_TRANSMON_CHANNELS).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeTermsConfig {
    pub transmon: TransmonSection,
    pub t_span: [f64; 2],
    pub expansion: Expansion,
    /// Compute every label up to this order over the selected channels...
    #[serde(default)]
    pub order: Option<usize>,
    /// ...unless an explicit label list is given instead.
    #[serde(default)]
    pub labels: Option<Vec<Multiset>>,
    /// Perturbation channels (0..6) to include.
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default)]
    pub method: OdeMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityScanConfig {
    pub transmon: TransmonSection,
    pub t_span: [f64; 2],
    /// Perturbation channels scanned one at a time.
    pub axes: Vec<usize>,
    pub scan_values: Vec<f64>,
    /// Magnus truncation orders to compare.
    pub orders: Vec<usize>,
    #[serde(default)]
    pub method: OdeMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SweepProblem {
    /// 2-level Rabi problem with a constant real envelope.
    Rabi { nu: f64, r: f64, envelope_amp: f64, t_final: f64 },
    /// Two-transmon Direct CX drive, both signals at the target frequency.
    TwoTransmonCx {
        params: TwoTransmonParams,
        pulse: CxPulseParams,
        amp_sym: [f64; 2],
        amp_asym: [f64; 2],
        amp_ctrl: [f64; 2],
    },
}

fn default_reference_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSweepConfig {
    pub problem: SweepProblem,
    pub modes: Vec<Expansion>,
    pub expansion_orders: Vec<usize>,
    pub chebyshev_orders: Vec<usize>,
    pub step_counts: Vec<usize>,
    /// Integration method for the precomputation step.
    #[serde(default)]
    pub method: OdeMethod,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub transmon: TransmonSection,
    pub t_span: [f64; 2],
    pub order: usize,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    /// Gaussian std dev per channel (index up to the largest channel used).
    pub sigmas: Vec<f64>,
    /// Symmetric integration bound per channel.
    pub bounds: Vec<f64>,
    #[serde(default)]
    pub method: OdeMethod,
}

/// All labels over the selected channels up to the given order.
pub fn labels_for_channels(channels: &[usize], order: usize) -> Vec<Multiset> {
    all_up_to_order(NUM_TRANSMON_CHANNELS, order)
        .into_iter()
        .filter(|l| l.elements().iter().all(|i| channels.contains(i)))
        .collect()
}

/// Builds the transmon perturbation problem restricted to the selected
/// channels, with either an explicit or an order-generated label list.
pub fn build_transmon_problem(
    section: &TransmonSection,
    t_span: [f64; 2],
    labels: Vec<Multiset>,
    channels: &[usize],
    expansion: Expansion,
    method: OdeMethod,
    seed: u64,
) -> Result<PerturbationProblem> {
    if let Some(&bad) = channels.iter().find(|&&i| i >= NUM_TRANSMON_CHANNELS) {
        bail!("channel index {bad} out of range (have {NUM_TRANSMON_CHANNELS} channels)");
    }
    let envelope = build_envelope(&section.control, seed)?;
    let mut problem = build_transmon_perturbation_problem(
        &section.params,
        envelope,
        section.mu,
        t_span,
        labels,
        expansion,
    )
    .context("building transmon model")?;
    problem.perturbations.retain(|(l, _)| channels.contains(&l.elements()[0]));
    Ok(problem.with_method(method))
}

/// Integrates the full perturbed generator `G_empty + sum_j c_j G_j` from an
/// identity initial condition: the reference propagator for a concrete `c`.
pub fn reference_perturbed_propagator(
    problem: &PerturbationProblem,
    c: &[f64],
    method: OdeMethod,
) -> Result<ComplexMatrix> {
    let dim = (problem.frame_generator)(problem.t_span[0]).rows();
    let frame = problem.frame_generator.clone();
    let perts = problem.perturbations.clone();
    let c = c.to_vec();
    let rhs = move |t: f64, y: &Vec<ComplexMatrix>| {
        let mut g = frame(t);
        for (label, gen) in &perts {
            let scalar: f64 = label.elements().iter().map(|&i| c[i]).product();
            if scalar != 0.0 {
                g.axpy(Complex64::new(scalar, 0.0), &gen(t));
            }
        }
        vec![&g * &y[0]]
    };
    let ode_problem = OdeProblem::new(rhs, problem.t_span, vec![ComplexMatrix::identity(dim)]);
    let solution = ode::solve(&ode_problem, method).context("reference integration")?;
    Ok(solution.y_final.into_iter().next().unwrap())
}

/// A solver-sweep problem lowered to concrete matrices and signals.
pub struct SweepInstance {
    pub operators: Vec<ComplexMatrix>,
    pub frame_op: ComplexMatrix,
    pub carrier_freqs: Vec<f64>,
    pub signals: Vec<Signal>,
    pub t_final: f64,
}

impl SweepInstance {
    pub fn from_spec(problem: &SweepProblem) -> Result<SweepInstance> {
        Ok(match problem {
            SweepProblem::Rabi { nu, r, envelope_amp, t_final } => {
                let sigma_z = ComplexMatrix::diag_real(&[1.0, -1.0]);
                let mut sigma_x = ComplexMatrix::zeros(2, 2);
                sigma_x[(0, 1)] = Complex64::new(1.0, 0.0);
                sigma_x[(1, 0)] = Complex64::new(1.0, 0.0);
                let frame_op = sigma_z.scale(Complex64::new(0.0, -TAU * nu / 2.0));
                let drive = sigma_x.scale(Complex64::new(0.0, -TAU * r));
                let amp = Complex64::new(*envelope_amp, 0.0);
                let signal = Signal::new(Arc::new(move |_| amp), *nu, 0.0);
                SweepInstance {
                    operators: vec![drive],
                    frame_op,
                    carrier_freqs: vec![*nu],
                    signals: vec![signal],
                    t_final: *t_final,
                }
            }
            SweepProblem::TwoTransmonCx { params, pulse, amp_sym, amp_asym, amp_ctrl } => {
                let (frame_op, [a0, a1]) = build_two_transmon_generator(params)?;
                let envs = cx_envelopes(
                    pulse,
                    Complex64::new(amp_sym[0], amp_sym[1]),
                    Complex64::new(amp_asym[0], amp_asym[1]),
                    Complex64::new(amp_ctrl[0], amp_ctrl[1]),
                )?;
                let nu1 = params.nu1;
                SweepInstance {
                    operators: vec![a0, a1],
                    frame_op,
                    carrier_freqs: vec![nu1, nu1],
                    signals: vec![
                        Signal::new(envs.control.clone(), nu1, 0.0),
                        Signal::new(envs.target(), nu1, 0.0),
                    ],
                    t_final: pulse.gate_time,
                }
            }
        })
    }

    pub fn solver_config(
        &self,
        dt: f64,
        chebyshev_order: usize,
        expansion_order: usize,
        method: OdeMethod,
    ) -> PertSolverConfig {
        PertSolverConfig::new(
            self.operators.clone(),
            self.frame_op.clone(),
            dt,
            self.carrier_freqs.clone(),
            vec![chebyshev_order; self.operators.len()],
            expansion_order,
        )
        .with_method(method)
    }

    /// Reference propagator in the frame of `F`: adaptive lab-frame solve,
    /// then one frame transformation at the final time.
    pub fn reference(&self, tol: f64) -> Result<ComplexMatrix> {
        let dim = self.frame_op.rows();
        let frame_op = self.frame_op.clone();
        let operators = self.operators.clone();
        let signals = self.signals.clone();
        let rhs = move |t: f64, y: &Vec<ComplexMatrix>| {
            let mut g = frame_op.clone();
            for (op, sig) in operators.iter().zip(&signals) {
                g.axpy(Complex64::new(sig.value(t), 0.0), op);
            }
            vec![&g * &y[0]]
        };
        let ode_problem =
            OdeProblem::new(rhs, [0.0, self.t_final], vec![ComplexMatrix::identity(dim)]);
        let lab = ode::solve(&ode_problem, OdeMethod::Dopri { rtol: tol, atol: tol })
            .context("sweep reference integration")?
            .y_final
            .swap_remove(0);
        let exit = perturbdyn::linalg::expm(&self.frame_op.scale_real(-self.t_final))?;
        Ok(&exit * &lab)
    }
}

/// `||u - v||_2 / sqrt(d)`: the distance metric used for accuracy reporting.
pub fn solution_distance(u: &ComplexMatrix, v: &ComplexMatrix) -> f64 {
    (u - v).frobenius_norm() / (u.rows() as f64).sqrt()
}
