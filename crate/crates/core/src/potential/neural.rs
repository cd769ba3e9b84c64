use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{quadrature, OmegaPotential, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::rng;

/// Hidden units per activation family.
pub const UNITS_PER_ACTIVATION: usize = 21;
/// `x^3`, `(x)_+^2`, `(x)_+^{1/2}`, `(x)_+^{1/3}`, `ln((x)_+ + 1e-3)`, `e^x`.
pub const NUM_ACTIVATIONS: usize = 6;
pub const HIDDEN_UNITS: usize = UNITS_PER_ACTIVATION * NUM_ACTIVATIONS;
/// Hidden kernels, hidden biases, output weights, then `a` and `b`.
pub const NUM_PARAMS: usize = 3 * HIDDEN_UNITS + 2;

const FRACTIONAL_POWER_CUTOFF: f64 = 1e-12;
const INVERSION_TOL: f64 = 1e-10;

fn activate(kind: usize, x: f64) -> f64 {
    let pos = x.max(0.0);
    match kind {
        0 => x * x * x,
        1 => pos * pos,
        2 => {
            if pos < FRACTIONAL_POWER_CUTOFF {
                0.0
            } else {
                pos.sqrt()
            }
        }
        3 => {
            if pos < FRACTIONAL_POWER_CUTOFF {
                0.0
            } else {
                pos.cbrt()
            }
        }
        4 => (pos + 1e-3).ln(),
        _ => x.exp(),
    }
}

/// One-hidden-layer monotone network parameterizing `phi^{-1}` directly:
///
/// `phi^{-1}(p) = sum_k |v_k| act_k(|w_k| p + c_k) + |a| p + |b| ln p`
///
/// Raw parameters are unconstrained; kernels and the residual coefficients are
/// mapped through `abs` at evaluation, so every parameter vector gives a
/// nondecreasing map. Probabilities are clamped to `PROB_FLOOR` first.
/// `phi` is recovered by bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneNetPotentialInv {
    raw: Vec<f64>,
    /// `phi^{-1}` at the probability floor and at one.
    range: (f64, f64),
}

impl MonotoneNetPotentialInv {
    pub fn from_params(raw: Vec<f64>) -> Result<Self> {
        if raw.len() != NUM_PARAMS {
            return Err(Error::Dimension(format!(
                "neural potential expects {NUM_PARAMS} parameters, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("neural potential parameters must be finite".into()));
        }
        let mut net = Self { raw, range: (0.0, 0.0) };
        net.range = (net.eval(PROB_FLOOR), net.eval(1.0));
        if !(net.range.0.is_finite() && net.range.1.is_finite()) {
            return Err(Error::Numerical("neural potential is not finite on (0, 1]".into()));
        }
        Ok(net)
    }

    /// Initialization close to the negative entropy: `b = 1`, `a = 0` and
    /// hidden output weights of order `output_scale`.
    pub fn near_negentropy(seed: u64, output_scale: f64) -> Self {
        let mut rng = rng::stream(seed, &[0x4E45_5552]);
        let mut raw = Vec::with_capacity(NUM_PARAMS);
        for _ in 0..2 * HIDDEN_UNITS {
            raw.push(rng.sample::<f64, _>(StandardNormal));
        }
        for _ in 0..HIDDEN_UNITS {
            raw.push(output_scale * rng.sample::<f64, _>(StandardNormal));
        }
        raw.push(0.0);
        raw.push(1.0);
        Self::from_params(raw).expect("initialization is finite")
    }

    pub fn params(&self) -> &[f64] {
        &self.raw
    }

    fn eval(&self, p: f64) -> f64 {
        let p = p.max(PROB_FLOOR);
        let h = HIDDEN_UNITS;
        let (kernels, rest) = self.raw.split_at(h);
        let (biases, rest) = rest.split_at(h);
        let (outputs, residual) = rest.split_at(h);
        let mut total = 0.0;
        for k in 0..h {
            let v = outputs[k].abs();
            if v == 0.0 {
                continue;
            }
            total += v * activate(k / UNITS_PER_ACTIVATION, kernels[k].abs() * p + biases[k]);
        }
        total + residual[0].abs() * p + residual[1].abs() * p.ln()
    }

    /// Inverts `phi^{-1}` on `[PROB_FLOOR, 1]` by bisection.
    fn invert(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = (PROB_FLOOR, 1.0);
        while hi - lo > INVERSION_TOL * 1e-3 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl OmegaPotential for MonotoneNetPotentialInv {
    fn name(&self) -> String {
        "neural".into()
    }

    /// Numeric inverse on the probability range, with an exponential left tail
    /// below the floor and a unit-slope right tail past one.
    fn phi(&self, x: f64) -> f64 {
        let (x0, x1) = self.range;
        if x <= x0 {
            PROB_FLOOR * (x - x0).exp()
        } else if x >= x1 {
            1.0 + (x - x1)
        } else {
            self.invert(x)
        }
    }

    fn phi_inv(&self, p: f64) -> f64 {
        self.eval(p)
    }

    fn phi_inv_at_zero(&self) -> f64 {
        self.range.0
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        quadrature::integrate(|p| self.eval(p), lo, hi, super::QUADRATURE_TOL)
    }
}
