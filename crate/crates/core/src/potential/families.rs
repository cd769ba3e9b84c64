use super::OmegaPotential;
use crate::error::Result;

/// `phi(x) = e^x`, `phi^{-1}(p) = ln p`. Induces the negative entropy
/// `h(p) = sum_a p_a ln p_a + |A| - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NegEntropyPotential;

fn x_ln_x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl OmegaPotential for NegEntropyPotential {
    fn name(&self) -> String {
        "negentropy".into()
    }

    fn phi(&self, x: f64) -> f64 {
        x.exp()
    }

    fn phi_inv(&self, p: f64) -> f64 {
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln()
        }
    }

    fn phi_inv_at_zero(&self) -> f64 {
        f64::NEG_INFINITY
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok((x_ln_x(hi) - hi) - (x_ln_x(lo) - lo))
    }

    fn has_closed_form_integral(&self) -> bool {
        true
    }

    fn bregman_term(&self, x: f64, y: f64) -> Option<f64> {
        // x ln(x/y) - x + y, written to avoid cancellation when x ~ y.
        if y <= 0.0 {
            return None;
        }
        Some(if x == 0.0 { y } else { x * (x / y).ln() - x + y })
    }
}

/// `phi(x) = x`. Induces the squared Euclidean norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct L2Potential;

impl OmegaPotential for L2Potential {
    fn name(&self) -> String {
        "l2".into()
    }

    fn phi(&self, x: f64) -> f64 {
        x
    }

    fn phi_inv(&self, p: f64) -> f64 {
        p
    }

    fn phi_inv_at_zero(&self) -> f64 {
        0.0
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok(0.5 * (hi * hi - lo * lo))
    }

    fn has_closed_form_integral(&self) -> bool {
        true
    }

    fn bregman_term(&self, x: f64, y: f64) -> Option<f64> {
        Some(0.5 * (x - y) * (x - y))
    }
}
