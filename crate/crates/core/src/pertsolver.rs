//! Fixed-step perturbative LMDE solvers.
//!
//! The generator is `G(t) = F + sum_j Re[f_j(t) e^{i w_j t}] A_j` with fast
//! frame `F` and slowly varying envelopes `f_j`. In the frame of `F` the
//! perturbation becomes `sum_j Re[f_j e^{i w_j t}] At_j(t)` with
//! `At_j(t) = e^{-tF} A_j e^{tF}`. Expanding each envelope in Chebyshev
//! polynomials over one step of width `dt` turns the in-frame propagator over
//! any step into a fixed multivariable expansion evaluated at step-dependent
//! scalar coefficients: the expensive term integrals are computed once over
//! `[0, dt]` and reused for every step via the time-translation identity
//! `D_I(t0, t0 + dt) = e^{-t0 F} D_I(0, dt) e^{t0 F}`.
//!
//! Stepping telescopes the per-step frame conjugations so that only three
//! frame exponentials are ever formed explicitly: `e^{t0 F}`, `e^{dt F}`
//! (precomputed), and `e^{-tM F}`.

use crate::linalg::{expm, ComplexMatrix, LinalgError};
use crate::multiset::{self, Multiset};
use crate::ode::OdeMethod;
use crate::perturbation::{
    compute_perturbation_terms, ArrayPolynomial, Expansion, GeneratorFn, PerturbationError,
    PerturbationProblem, PolyError,
};
use crate::signal::{chebyshev_fit, chebyshev_t, Signal};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const EXPANSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PertSolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expected {expected} signals, got {got}")]
    SignalCount { expected: usize, got: usize },
    #[error("state has {got} rows, operators have dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("non-finite values encountered during stepping")]
    Divergence,
    #[error("unsupported expansion bundle version {got} (expected {expected})")]
    Version { expected: u32, got: u32 },
    #[error("failed to decode expansion bundle: {0}")]
    Decode(#[from] serde_json::Error),
}

/// Static description of the solver: operators, frame, step width, carrier
/// frequencies, and expansion truncation.
#[derive(Clone, Serialize, Deserialize)]
pub struct PertSolverConfig {
    pub operators: Vec<ComplexMatrix>,
    pub frame_op: ComplexMatrix,
    /// Step width (ns).
    pub dt: f64,
    /// Reference carrier frequencies (GHz), one per signal.
    pub carrier_freqs: Vec<f64>,
    /// Chebyshev approximation order per signal; signal `j` uses
    /// `chebyshev_orders[j] + 1` coefficients.
    pub chebyshev_orders: Vec<usize>,
    pub expansion_order: usize,
    /// Labels beyond the full grading, e.g. selected higher cross terms.
    #[serde(default)]
    pub extra_labels: Vec<Multiset>,
    /// Whether the `Im[f_{j,m} e^{i w_j t0}]` variables are included; safe to
    /// drop only when the envelope phase is specially constrained.
    pub include_imag: Vec<bool>,
    #[serde(default)]
    pub method: OdeMethod,
}

impl PertSolverConfig {
    pub fn new(
        operators: Vec<ComplexMatrix>,
        frame_op: ComplexMatrix,
        dt: f64,
        carrier_freqs: Vec<f64>,
        chebyshev_orders: Vec<usize>,
        expansion_order: usize,
    ) -> Self {
        let s = operators.len();
        PertSolverConfig {
            operators,
            frame_op,
            dt,
            carrier_freqs,
            chebyshev_orders,
            expansion_order,
            extra_labels: Vec::new(),
            include_imag: vec![true; s],
            method: OdeMethod::default(),
        }
    }

    pub fn with_include_imag(mut self, include_imag: Vec<bool>) -> Self {
        self.include_imag = include_imag;
        self
    }

    pub fn with_extra_labels(mut self, extra_labels: Vec<Multiset>) -> Self {
        self.extra_labels = extra_labels;
        self
    }

    pub fn with_method(mut self, method: OdeMethod) -> Self {
        self.method = method;
        self
    }

    pub fn num_signals(&self) -> usize {
        self.operators.len()
    }

    pub fn dim(&self) -> usize {
        self.frame_op.rows()
    }

    /// Expansion variable count `r = sum_j (1 or 2) * (chebyshev_orders[j]+1)`.
    pub fn num_variables(&self) -> usize {
        self.chebyshev_orders
            .iter()
            .zip(&self.include_imag)
            .map(|(&ord, &imag)| (ord + 1) * if imag { 2 } else { 1 })
            .sum()
    }

    pub fn validate(&self) -> Result<(), PertSolverError> {
        let s = self.operators.len();
        if self.carrier_freqs.len() != s
            || self.chebyshev_orders.len() != s
            || self.include_imag.len() != s
        {
            return Err(PertSolverError::Config(format!(
                "per-signal lists disagree in length: {} operators, {} carrier_freqs, {} chebyshev_orders, {} include_imag",
                s,
                self.carrier_freqs.len(),
                self.chebyshev_orders.len(),
                self.include_imag.len()
            )));
        }
        if !self.frame_op.is_square() {
            return Err(PertSolverError::Config("frame operator must be square".into()));
        }
        let d = self.frame_op.rows();
        for (j, a) in self.operators.iter().enumerate() {
            if a.rows() != d || a.cols() != d {
                return Err(PertSolverError::Config(format!(
                    "operator {j} is {}x{}, frame operator is {d}x{d}",
                    a.rows(),
                    a.cols()
                )));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PertSolverError::Config(format!("step width must be positive, got {}", self.dt)));
        }
        if self.expansion_order == 0 {
            return Err(PertSolverError::Config("expansion order must be at least 1".into()));
        }
        for label in &self.extra_labels {
            if let Some(&i) = label.elements().iter().find(|&&i| i >= self.num_variables()) {
                return Err(PertSolverError::Config(format!(
                    "extra label references variable {i}, but only {} exist",
                    self.num_variables()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Re,
    Im,
}

/// Maps one expansion variable to the coefficient it stands for:
/// `Re/Im[f_{signal, cheb_index} e^{i w_signal t0}]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableAssignment {
    pub signal: usize,
    pub cheb_index: usize,
    pub part: Part,
}

/// Builds the variable ordering: per signal, the real parts for
/// `m = 0..=order`, then the imaginary parts when included.
pub fn variable_map(cfg: &PertSolverConfig) -> Vec<VariableAssignment> {
    let mut map = Vec::with_capacity(cfg.num_variables());
    for (j, (&ord, &imag)) in cfg.chebyshev_orders.iter().zip(&cfg.include_imag).enumerate() {
        for m in 0..=ord {
            map.push(VariableAssignment { signal: j, cheb_index: m, part: Part::Re });
        }
        if imag {
            for m in 0..=ord {
                map.push(VariableAssignment { signal: j, cheb_index: m, part: Part::Im });
            }
        }
    }
    map
}

/// The completed label list the expansion will carry, without running any
/// integration: everything up to `expansion_order` over the configuration's
/// variables, plus the completion of `extra_labels`.
pub fn expansion_labels(cfg: &PertSolverConfig) -> Vec<Multiset> {
    let mut requested = multiset::all_up_to_order(cfg.num_variables(), cfg.expansion_order);
    requested.extend(cfg.extra_labels.iter().cloned());
    multiset::complete(&requested)
}

/// One-time expansion over a single step `[0, dt]` in the frame of `F`,
/// reusable for every step of every envelope.
#[derive(Clone, Serialize, Deserialize)]
pub struct PrecomputedExpansion {
    pub version: u32,
    pub config: PertSolverConfig,
    pub mode: Expansion,
    pub variable_map: Vec<VariableAssignment>,
    pub labels: Vec<Multiset>,
    /// Dyson: `e^{dt F} D_I(0, dt)` — the step frame factor is folded in so
    /// stepping is a bare polynomial evaluation. Magnus: `O_I(0, dt)`.
    pub terms: Vec<ComplexMatrix>,
    /// `expm(dt * F)`.
    pub frame_step: ComplexMatrix,
}

impl PrecomputedExpansion {
    pub fn to_json(&self) -> Result<String, PertSolverError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PertSolverError> {
        let bundle: PrecomputedExpansion = serde_json::from_str(text)?;
        if bundle.version != EXPANSION_FORMAT_VERSION {
            return Err(PertSolverError::Version {
                expected: EXPANSION_FORMAT_VERSION,
                got: bundle.version,
            });
        }
        Ok(bundle)
    }

    /// The step polynomial: constant part present (folded frame factor) in
    /// Dyson mode, absent in Magnus mode.
    fn step_polynomial(&self) -> ArrayPolynomial {
        let constant = match self.mode {
            Expansion::Dyson => Some(self.frame_step.clone()),
            Expansion::Magnus => None,
        };
        ArrayPolynomial::new(
            constant,
            self.labels.iter().cloned().zip(self.terms.iter().cloned()).collect(),
        )
    }
}

/// Caches `e^{-tF} A_j e^{tF}` for all operators at the most recent `t`: the
/// integrator evaluates every basis operator at the same times, so two matrix
/// exponentials per distinct time suffice.
struct ToggleCache {
    frame_op: ComplexMatrix,
    operators: Vec<ComplexMatrix>,
    memo: Mutex<Option<(f64, Vec<ComplexMatrix>)>>,
}

impl ToggleCache {
    fn new(frame_op: ComplexMatrix, operators: Vec<ComplexMatrix>) -> Arc<Self> {
        Arc::new(ToggleCache { frame_op, operators, memo: Mutex::new(None) })
    }

    fn toggled(&self, t: f64, j: usize) -> ComplexMatrix {
        let mut memo = self.memo.lock().unwrap();
        let stale = memo.as_ref().map_or(true, |(cached_t, _)| *cached_t != t);
        if stale {
            let backward = expm(&self.frame_op.scale_real(-t)).expect("frame exponential");
            let forward = expm(&self.frame_op.scale_real(t)).expect("frame exponential");
            let values =
                self.operators.iter().map(|a| &(&backward * a) * &forward).collect::<Vec<_>>();
            *memo = Some((t, values));
        }
        memo.as_ref().unwrap().1[j].clone()
    }
}

/// Basis-operator generator functions for one step starting at `t_start`:
/// variable `i = (j, m, part)` gets
/// `cos(w_j (t - t_start)) T_m(x) At_j(t)` or
/// `sin(-w_j (t - t_start)) T_m(x) At_j(t)` with `x = 2 (t - t_start)/dt - 1`.
fn basis_generators(cfg: &PertSolverConfig, t_start: f64) -> Vec<(Multiset, GeneratorFn)> {
    let cache = ToggleCache::new(cfg.frame_op.clone(), cfg.operators.clone());
    let dt = cfg.dt;
    variable_map(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, va)| {
            let omega = TAU * cfg.carrier_freqs[va.signal];
            let cache = cache.clone();
            let f: GeneratorFn = Arc::new(move |t: f64| {
                let tau = t - t_start;
                let phase = omega * tau;
                let trig = match va.part {
                    Part::Re => phase.cos(),
                    Part::Im => (-phase).sin(),
                };
                let x = 2.0 * tau / dt - 1.0;
                let scalar = trig * chebyshev_t(va.cheb_index, x);
                cache.toggled(t, va.signal).scale_real(scalar)
            });
            (Multiset::new(vec![i]), f)
        })
        .collect()
}

/// Runs the expansion over `[t_start, t_start + dt]` with basis functions
/// centered at `t_start`, returning the raw (unfolded) terms.
fn raw_terms(
    cfg: &PertSolverConfig,
    mode: Expansion,
    t_start: f64,
) -> Result<(Vec<Multiset>, Vec<ComplexMatrix>), PertSolverError> {
    let dim = cfg.dim();
    let zero_frame: GeneratorFn = Arc::new(move |_| ComplexMatrix::zeros(dim, dim));
    let problem = PerturbationProblem::new(
        zero_frame,
        basis_generators(cfg, t_start),
        [t_start, t_start + cfg.dt],
        expansion_labels(cfg),
        mode,
    )
    .with_method(cfg.method);
    let result = compute_perturbation_terms(&problem)?;
    Ok((result.labels, result.terms))
}

/// Computes the expansion terms over one step. Dyson terms are stored with
/// the step frame factor `e^{dt F}` folded in; Magnus terms are stored as-is
/// because the exponential blocks any such folding.
pub fn precompute(
    cfg: &PertSolverConfig,
    mode: Expansion,
) -> Result<PrecomputedExpansion, PertSolverError> {
    cfg.validate()?;
    let (labels, terms) = raw_terms(cfg, mode, 0.0)?;
    let frame_step = expm(&cfg.frame_op.scale_real(cfg.dt))?;
    let terms = match mode {
        Expansion::Dyson => terms.iter().map(|d| &frame_step * d).collect(),
        Expansion::Magnus => terms,
    };
    Ok(PrecomputedExpansion {
        version: EXPANSION_FORMAT_VERSION,
        config: cfg.clone(),
        mode,
        variable_map: variable_map(cfg),
        labels,
        terms,
        frame_step,
    })
}

/// Expansion variable values for the step `[t0, t0 + dt]`: fits each signal's
/// envelope in the Chebyshev basis over the step and emits
/// `Re/Im[f_{j,m} e^{i w_j t0}]` in `variable_map` order. Signals must
/// already be carrier-shifted to the configured reference frequencies.
pub fn step_coefficients(
    exp: &PrecomputedExpansion,
    signals: &[Signal],
    t0: f64,
) -> Result<Vec<f64>, PertSolverError> {
    let cfg = &exp.config;
    if signals.len() != cfg.num_signals() {
        return Err(PertSolverError::SignalCount {
            expected: cfg.num_signals(),
            got: signals.len(),
        });
    }
    let fits: Vec<_> = signals
        .iter()
        .zip(&cfg.chebyshev_orders)
        .map(|(sig, &ord)| chebyshev_fit(&sig.envelope_fn(), t0, cfg.dt, ord))
        .collect();
    let coeffs = exp
        .variable_map
        .iter()
        .map(|va| {
            let rotation = Complex64::from_polar(1.0, TAU * cfg.carrier_freqs[va.signal] * t0);
            let c = fits[va.signal].coeffs[va.cheb_index] * rotation;
            match va.part {
                Part::Re => c.re,
                Part::Im => c.im,
            }
        })
        .collect();
    Ok(coeffs)
}

/// Propagates `y0` over `n_steps` steps of width `dt` starting at `t0`,
/// returning the result in the frame of `F`. Per-step work is a coefficient
/// fit plus a polynomial evaluation (Dyson) or polynomial evaluation plus one
/// small `expm` (Magnus); the per-step frame conjugations telescope into the
/// three explicit frame exponentials.
pub fn solve(
    exp: &PrecomputedExpansion,
    signals: &[Signal],
    t0: f64,
    n_steps: usize,
    y0: &ComplexMatrix,
    parallel: bool,
) -> Result<ComplexMatrix, PertSolverError> {
    let cfg = &exp.config;
    if y0.rows() != cfg.dim() {
        return Err(PertSolverError::Dimension { expected: cfg.dim(), got: y0.rows() });
    }
    let shifted = shift_signals(cfg, signals)?;
    let poly = exp.step_polynomial();

    let step = |k: usize| -> Result<ComplexMatrix, PertSolverError> {
        let t_k = t0 + k as f64 * cfg.dt;
        let coeffs = step_coefficients(exp, &shifted, t_k)?;
        let evaluated = poly.eval(&coeffs)?;
        let p = match exp.mode {
            Expansion::Dyson => evaluated,
            Expansion::Magnus => &exp.frame_step * &expm(&evaluated)?,
        };
        if !p.frobenius_norm().is_finite() {
            return Err(PertSolverError::Divergence);
        }
        Ok(p)
    };

    // product ordered latest-step leftmost; combining later-chunk * earlier-
    // chunk is associative, so the parallel reduction matches the sequential
    // fold up to floating-point reassociation
    let product = if parallel {
        (0..n_steps)
            .into_par_iter()
            .map(step)
            .try_reduce_with(|earlier, later| Ok(&later * &earlier))
            .transpose()?
    } else {
        let mut acc: Option<ComplexMatrix> = None;
        for k in 0..n_steps {
            let p = step(k)?;
            acc = Some(match acc {
                Some(a) => &p * &a,
                None => p,
            });
        }
        acc
    };
    let product = product.unwrap_or_else(|| ComplexMatrix::identity(cfg.dim()));

    let t_final = t0 + n_steps as f64 * cfg.dt;
    let enter_frame = expm(&cfg.frame_op.scale_real(t0))?;
    let exit_frame = expm(&cfg.frame_op.scale_real(-t_final))?;
    let total = &(&exit_frame * &product) * &enter_frame;
    if !total.frobenius_norm().is_finite() {
        return Err(PertSolverError::Divergence);
    }
    Ok(&total * y0)
}

/// Reference stepping without the telescoping simplification: conjugates
/// every step by its own pair of frame exponentials. Only useful for
/// validating `solve`; quadratically more `expm` calls.
pub fn solve_naive(
    exp: &PrecomputedExpansion,
    signals: &[Signal],
    t0: f64,
    n_steps: usize,
    y0: &ComplexMatrix,
) -> Result<ComplexMatrix, PertSolverError> {
    let cfg = &exp.config;
    if y0.rows() != cfg.dim() {
        return Err(PertSolverError::Dimension { expected: cfg.dim(), got: y0.rows() });
    }
    let shifted = shift_signals(cfg, signals)?;
    let poly = exp.step_polynomial();
    let unfold = expm(&cfg.frame_op.scale_real(-cfg.dt))?;

    let mut acc = ComplexMatrix::identity(cfg.dim());
    for k in 0..n_steps {
        let t_k = t0 + k as f64 * cfg.dt;
        let coeffs = step_coefficients(exp, &shifted, t_k)?;
        let evaluated = poly.eval(&coeffs)?;
        // in-frame step propagator without any e^{dt F} factor
        let w = match exp.mode {
            Expansion::Dyson => &unfold * &evaluated,
            Expansion::Magnus => expm(&evaluated)?,
        };
        let backward = expm(&cfg.frame_op.scale_real(-t_k))?;
        let forward = expm(&cfg.frame_op.scale_real(t_k))?;
        acc = &(&(&backward * &w) * &forward) * &acc;
    }
    Ok(&acc * y0)
}

/// Defect of the time-translation identity for one label:
/// `|| D_I(t0, t0+dt) - e^{-t0 F} D_I(0, dt) e^{t0 F} ||_F`, with the left
/// side recomputed from scratch with basis functions re-centered at `t0`.
pub fn verify_time_translation(
    cfg: &PertSolverConfig,
    mode: Expansion,
    label: &Multiset,
    t0: f64,
) -> Result<f64, PertSolverError> {
    cfg.validate()?;
    let (labels, base) = raw_terms(cfg, mode, 0.0)?;
    let (_, direct) = raw_terms(cfg, mode, t0)?;
    let index = labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| PertSolverError::Config(format!("label {label:?} not in expansion")))?;
    let backward = expm(&cfg.frame_op.scale_real(-t0))?;
    let forward = expm(&cfg.frame_op.scale_real(t0))?;
    let translated = &(&backward * &base[index]) * &forward;
    Ok((&direct[index] - &translated).frobenius_norm())
}

fn shift_signals(
    cfg: &PertSolverConfig,
    signals: &[Signal],
) -> Result<Vec<Signal>, PertSolverError> {
    if signals.len() != cfg.num_signals() {
        return Err(PertSolverError::SignalCount {
            expected: cfg.num_signals(),
            got: signals.len(),
        });
    }
    Ok(signals
        .iter()
        .zip(&cfg.carrier_freqs)
        .map(|(sig, &freq)| sig.shift_carrier(freq))
        .collect())
}
