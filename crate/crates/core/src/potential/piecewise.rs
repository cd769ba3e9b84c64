use super::OmegaPotential;
use crate::error::{Error, Result};

/// Piecewise-linear potential with `n` segments of widths `psi`:
/// `phi(x) = 0` for `x <= 0`, `phi(sum_{i<=j} psi_i) = j/n`, `phi(x) = 1`
/// past the last knot, linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePotential {
    psi: Vec<f64>,
    /// `knots[j] = sum_{i<j} psi_i`, `knots[0] = 0`.
    knots: Vec<f64>,
    /// `area[j] = int_0^{j/n} phi^{-1}`.
    area: Vec<f64>,
}

impl PiecewisePotential {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        if psi.is_empty() {
            return Err(Error::InvalidInput("piecewise potential needs at least one segment".into()));
        }
        if let Some(w) = psi.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("segment widths must be positive and finite, got {w}")));
        }
        let n = psi.len() as f64;
        let mut knots = Vec::with_capacity(psi.len() + 1);
        let mut area = Vec::with_capacity(psi.len() + 1);
        knots.push(0.0);
        area.push(0.0);
        for (j, w) in psi.iter().enumerate() {
            // phi^{-1} rises linearly from knots[j] to knots[j] + w over a probability step 1/n.
            area.push(area[j] + (knots[j] + 0.5 * w) / n);
            knots.push(knots[j] + w);
        }
        Ok(Self { psi, knots, area })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn num_segments(&self) -> usize {
        self.psi.len()
    }

    /// Right end of the knot range, `sum_i psi_i`.
    pub fn span(&self) -> f64 {
        self.knots[self.psi.len()]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `phi` restricted to the knot range `[0, span]`.
    fn phi_on_knots(&self, x: f64) -> f64 {
        let n = self.psi.len();
        match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(j) => j as f64 / n as f64,
            Err(idx) => {
                // knots[idx - 1] < x < knots[idx]
                let j = idx - 1;
                (j as f64 + (x - self.knots[j]) / self.psi[j]) / n as f64
            }
        }
    }

    /// Segment containing probability `p` in `(0, 1]` and the offset into it.
    fn segment(&self, p: f64) -> (usize, f64) {
        let n = self.psi.len();
        let scaled = p * n as f64;
        let j = ((scaled.ceil() as usize).max(1) - 1).min(n - 1);
        (j, (scaled - j as f64).clamp(0.0, 1.0))
    }

    fn primitive(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if p == 0.0 {
            return 0.0;
        }
        let n = self.psi.len() as f64;
        let (j, t) = self.segment(p);
        self.area[j] + (self.knots[j] + 0.5 * t * self.psi[j]) * t / n
    }
}

impl OmegaPotential for PiecewisePotential {
    fn name(&self) -> String {
        "piecewise".into()
    }

    fn phi(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= self.span() {
            1.0
        } else {
            self.phi_on_knots(x)
        }
    }

    fn phi_inv(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return self.span();
        }
        let (j, t) = self.segment(p);
        self.knots[j] + t * self.psi[j]
    }

    fn phi_inv_at_zero(&self) -> f64 {
        0.0
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok(self.primitive(hi) - self.primitive(lo))
    }

    fn has_closed_form_integral(&self) -> bool {
        true
    }
}

/// Strictly increasing extension of [`PiecewisePotential`]:
/// `e^x - 1` below zero, the same segments on the knot range and a unit-slope
/// tail `1 + (x - span)` past the last knot (equal to `x` when `span = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPiecewisePotential {
    inner: PiecewisePotential,
}

impl AugmentedPiecewisePotential {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        Ok(Self {
            inner: PiecewisePotential::new(psi)?,
        })
    }

    pub fn from_piecewise(inner: PiecewisePotential) -> Self {
        Self { inner }
    }

    pub fn psi(&self) -> &[f64] {
        self.inner.psi()
    }

    pub fn base(&self) -> &PiecewisePotential {
        &self.inner
    }
}

impl OmegaPotential for AugmentedPiecewisePotential {
    fn name(&self) -> String {
        "augmented-piecewise".into()
    }

    fn phi(&self, x: f64) -> f64 {
        let span = self.inner.span();
        if x <= 0.0 {
            x.exp_m1()
        } else if x > span {
            1.0 + (x - span)
        } else {
            self.inner.phi_on_knots(x)
        }
    }

    fn phi_inv(&self, p: f64) -> f64 {
        if p < 0.0 {
            (p.max(-1.0 + f64::EPSILON)).ln_1p()
        } else if p > 1.0 {
            self.inner.span() + (p - 1.0)
        } else {
            self.inner.phi_inv(p)
        }
    }

    fn phi_inv_at_zero(&self) -> f64 {
        0.0
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        self.inner.phi_inv_integral(lo, hi)
    }

    fn has_closed_form_integral(&self) -> bool {
        true
    }
}
