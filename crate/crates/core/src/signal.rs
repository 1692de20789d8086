//! Carrier-modulated scalar signals, piecewise-constant envelopes, and
//! Chebyshev envelope fits via the discrete Chebyshev transform.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

/// Shared complex envelope function of time (ns).
pub type EnvelopeFn = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// A real signal `s(t) = Re[f(t) e^{i(2 pi nu t + phi)}]` with envelope `f`,
/// carrier frequency `nu` (GHz), and phase `phi` (radians).
#[derive(Clone)]
pub struct Signal {
    envelope: EnvelopeFn,
    carrier_freq: f64,
    phase: f64,
}

impl Signal {
    pub fn new(envelope: EnvelopeFn, carrier_freq: f64, phase: f64) -> Self {
        Signal { envelope, carrier_freq, phase }
    }

    pub fn constant(value: Complex64) -> Self {
        Signal { envelope: Arc::new(move |_| value), carrier_freq: 0.0, phase: 0.0 }
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn envelope(&self, t: f64) -> Complex64 {
        (self.envelope)(t)
    }

    pub fn envelope_fn(&self) -> EnvelopeFn {
        self.envelope.clone()
    }

    /// `Re[f(t) e^{i(2 pi nu t + phi)}]`.
    pub fn value(&self, t: f64) -> f64 {
        let rotation = Complex64::from_polar(1.0, TAU * self.carrier_freq * t + self.phase);
        ((self.envelope)(t) * rotation).re
    }

    /// Re-expresses the signal relative to `reference_freq`: the leftover
    /// frequency and the phase are absorbed into the envelope so that
    /// `value(t)` is unchanged for all `t`.
    pub fn shift_carrier(&self, reference_freq: f64) -> Signal {
        let delta = self.carrier_freq - reference_freq;
        let phase = self.phase;
        let inner = self.envelope.clone();
        Signal {
            envelope: Arc::new(move |t| {
                inner(t) * Complex64::from_polar(1.0, TAU * delta * t + phase)
            }),
            carrier_freq: reference_freq,
            phase: 0.0,
        }
    }
}

/// Complex samples on a uniform grid; evaluates by sample-and-hold and is 0
/// outside the sampled window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantEnvelope {
    pub dt: f64,
    pub t_start: f64,
    #[serde(with = "samples_serde")]
    pub samples: Vec<Complex64>,
}

impl PiecewiseConstantEnvelope {
    pub fn new(dt: f64, t_start: f64, samples: Vec<Complex64>) -> Self {
        assert!(dt > 0.0, "sample width must be positive");
        PiecewiseConstantEnvelope { dt, t_start, samples }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let idx = ((t - self.t_start) / self.dt).floor();
        if idx < 0.0 || idx >= self.samples.len() as f64 {
            Complex64::new(0.0, 0.0)
        } else {
            self.samples[idx as usize]
        }
    }

    pub fn as_fn(&self) -> EnvelopeFn {
        let env = self.clone();
        Arc::new(move |t| env.eval(t))
    }
}

// JSON form: {dt, t_start, samples: [[re, im], ...]}
mod samples_serde {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(samples: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        samples.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?
            .into_iter()
            .map(|[re, im]| Complex64::new(re, im))
            .collect())
    }
}

/// Chebyshev coefficients of an envelope fit on `[t0, t0 + width]`:
/// `f(t) ~ sum_m coeffs[m] T_m(x(t))` with `x(t) = 2 (t - t0) / width - 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChebyshevCoefficients {
    pub t0: f64,
    pub width: f64,
    #[serde(with = "samples_serde")]
    pub coeffs: Vec<Complex64>,
}

impl ChebyshevCoefficients {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Clenshaw evaluation of the fitted polynomial at time `t`.
    pub fn reconstruct(&self, t: f64) -> Complex64 {
        let x = 2.0 * (t - self.t0) / self.width - 1.0;
        clenshaw(&self.coeffs, x)
    }
}

fn clenshaw(coeffs: &[Complex64], x: f64) -> Complex64 {
    if coeffs.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    if coeffs.len() == 1 {
        return coeffs[0];
    }
    let mut b2 = Complex64::new(0.0, 0.0);
    let mut b1 = *coeffs.last().unwrap();
    for &a in coeffs[1..coeffs.len() - 1].iter().rev() {
        let tmp = 2.0 * x * b1 - b2 + a;
        b2 = b1;
        b1 = tmp;
    }
    x * b1 - b2 + coeffs[0]
}

/// Fits `env` on `[t0, t0 + width]` with `order + 1` Chebyshev coefficients
/// by sampling at the Chebyshev-Gauss nodes and applying the discrete
/// Chebyshev transform. The reconstruction interpolates `env` at the nodes.
pub fn chebyshev_fit(env: &EnvelopeFn, t0: f64, width: f64, order: usize) -> ChebyshevCoefficients {
    assert!(width > 0.0, "interval width must be positive");
    let n = order + 1;
    let nodes: Vec<f64> = (0..n).map(|k| (PI * (k as f64 + 0.5) / n as f64).cos()).collect();
    let values: Vec<Complex64> =
        nodes.iter().map(|&x| env(t0 + 0.5 * width * (x + 1.0))).collect();
    let mut coeffs = Vec::with_capacity(n);
    for m in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &v) in values.iter().enumerate() {
            let theta = PI * (k as f64 + 0.5) / n as f64;
            acc += v * (m as f64 * theta).cos();
        }
        let weight = if m == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
        coeffs.push(acc * weight);
    }
    ChebyshevCoefficients { t0, width, coeffs }
}

/// `T_m(x)` by recurrence; used for building the solver basis operators.
pub fn chebyshev_t(m: usize, x: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for _ in 2..=m {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}
