//! Omega-potential mirror maps.
//!
//! A potential is an increasing scalar map `phi`; the mirror map it induces is
//! `h(p) = sum_a int_1^{p_a} phi^{-1}(x) dx`, whose gradient is
//! `phi^{-1}` applied coordinate-wise. Four families ship here: the negative
//! entropy, the squared Euclidean norm, the piecewise-linear class (and its
//! strictly increasing augmentation) and a monotone network for `phi^{-1}`.

mod families;
mod neural;
mod piecewise;
pub mod quadrature;

use std::fmt;
use std::str::FromStr;

pub use families::{L2Potential, NegEntropyPotential};
pub use neural::{MonotoneNetPotentialInv, HIDDEN_UNITS, NUM_ACTIVATIONS, NUM_PARAMS as NEURAL_NUM_PARAMS};
pub use piecewise::{AugmentedPiecewisePotential, PiecewisePotential};

use crate::error::{Error, Result};
use crate::kv;

/// Probabilities are clamped to at least this value before evaluating a
/// potential whose inverse is singular at zero.
pub const PROB_FLOOR: f64 = 1e-8;
/// Absolute tolerance for quadrature of `phi^{-1}`.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Default number of segments for the piecewise family.
pub const DEFAULT_SEGMENTS: usize = 100;

pub trait OmegaPotential: Send + Sync {
    fn name(&self) -> String;

    /// The potential itself. For parameterizations of `phi^{-1}` this is a
    /// numeric inverse.
    fn phi(&self, x: f64) -> f64;

    /// `phi^{-1}(p)` for `p` in `[0, 1]`; `p = 0` gives
    /// [`phi_inv_at_zero`](Self::phi_inv_at_zero).
    fn phi_inv(&self, p: f64) -> f64;

    /// Extended-real value of `phi^{-1}(0)`; `-inf` for barrier potentials.
    fn phi_inv_at_zero(&self) -> f64;

    /// Oriented integral `int_lo^hi phi^{-1}(x) dx` over probabilities.
    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        quadrature::integrate(|x| self.phi_inv(x), lo, hi, QUADRATURE_TOL)
    }

    fn has_closed_form_integral(&self) -> bool {
        false
    }

    /// Closed-form per-coordinate Bregman term, if one exists.
    fn bregman_term(&self, _x: f64, _y: f64) -> Option<f64> {
        None
    }

    /// Central-difference derivative of `phi^{-1}`, the diagonal of the
    /// Hessian of `h`.
    fn phi_inv_derivative(&self, p: f64) -> f64 {
        let step = 1e-5 * p.max(1e-3);
        (self.phi_inv(p + step) - self.phi_inv(p - step)) / (2.0 * step)
    }
}

/// Potential families known to the serializer and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    NegEntropy,
    L2,
    Piecewise,
    AugmentedPiecewise,
    Neural,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::NegEntropy,
        Family::L2,
        Family::Piecewise,
        Family::AugmentedPiecewise,
        Family::Neural,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::NegEntropy => "negentropy",
            Family::L2 => "l2",
            Family::Piecewise => "piecewise",
            Family::AugmentedPiecewise => "augmented-piecewise",
            Family::Neural => "neural",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown potential family {s:?}")))
    }
}

/// A concrete potential from one of the shipped families.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    NegEntropy(NegEntropyPotential),
    L2(L2Potential),
    Piecewise(PiecewisePotential),
    AugmentedPiecewise(AugmentedPiecewisePotential),
    Neural(MonotoneNetPotentialInv),
}

impl Potential {
    pub fn negentropy() -> Self {
        Potential::NegEntropy(NegEntropyPotential)
    }

    pub fn l2() -> Self {
        Potential::L2(L2Potential)
    }

    pub fn family(&self) -> Family {
        match self {
            Potential::NegEntropy(_) => Family::NegEntropy,
            Potential::L2(_) => Family::L2,
            Potential::Piecewise(_) => Family::Piecewise,
            Potential::AugmentedPiecewise(_) => Family::AugmentedPiecewise,
            Potential::Neural(_) => Family::Neural,
        }
    }

    /// The family's parameter vector: segment widths for the piecewise
    /// families, raw network weights for the neural family, empty otherwise.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Potential::NegEntropy(_) | Potential::L2(_) => Vec::new(),
            Potential::Piecewise(p) => p.psi().to_vec(),
            Potential::AugmentedPiecewise(p) => p.psi().to_vec(),
            Potential::Neural(n) => n.params().to_vec(),
        }
    }

    pub fn from_params(family: Family, params: Vec<f64>) -> Result<Self> {
        match family {
            Family::NegEntropy | Family::L2 if !params.is_empty() => Err(Error::InvalidInput(format!(
                "family {family} takes no parameters, got {}",
                params.len()
            ))),
            Family::NegEntropy => Ok(Potential::negentropy()),
            Family::L2 => Ok(Potential::l2()),
            Family::Piecewise => Ok(Potential::Piecewise(PiecewisePotential::new(params)?)),
            Family::AugmentedPiecewise => Ok(Potential::AugmentedPiecewise(AugmentedPiecewisePotential::new(params)?)),
            Family::Neural => Ok(Potential::Neural(MonotoneNetPotentialInv::from_params(params)?)),
        }
    }

    /// Built-in potentials by name: `negentropy`, `l2`, and the
    /// negative-entropy initializations `piecewise`, `augmented-piecewise`
    /// and `neural`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name.parse::<Family>()? {
            Family::NegEntropy => Ok(Potential::negentropy()),
            Family::L2 => Ok(Potential::l2()),
            Family::Piecewise => Ok(Potential::Piecewise(PiecewisePotential::new(unit_negentropy_psi(
                DEFAULT_SEGMENTS,
            )?)?)),
            Family::AugmentedPiecewise => Ok(Potential::AugmentedPiecewise(AugmentedPiecewisePotential::new(
                unit_negentropy_psi(DEFAULT_SEGMENTS)?,
            )?)),
            Family::Neural => Ok(Potential::Neural(MonotoneNetPotentialInv::near_negentropy(0, 1e-4))),
        }
    }

    pub fn as_dyn(&self) -> &dyn OmegaPotential {
        match self {
            Potential::NegEntropy(p) => p,
            Potential::L2(p) => p,
            Potential::Piecewise(p) => p,
            Potential::AugmentedPiecewise(p) => p,
            Potential::Neural(p) => p,
        }
    }

    /// Serializes as a versioned key-value record. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let params = self.params();
        format!(
            "# mirror-pmd potential\nschema_version = {POTENTIAL_SCHEMA_VERSION}\nfamily = {}\nnum_params = {}\nparams = {}\n",
            self.family(),
            params.len(),
            kv::format_f64_list(&params)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = kv::parse(text, &[])?;
        Self::from_section(doc.root())
    }

    pub(crate) fn from_section(section: &kv::Section) -> Result<Self> {
        let version = section.require("schema_version")?;
        let major: u32 = version.parse()?;
        if major != POTENTIAL_SCHEMA_VERSION {
            return Err(Error::Version {
                found: version.value.clone(),
                expected: POTENTIAL_SCHEMA_VERSION,
            });
        }
        let family_entry = section.require("family")?;
        let family: Family = family_entry
            .value
            .parse()
            .map_err(|_| Error::parse(family_entry.offset, format!("unknown family {:?}", family_entry.value)))?;
        let count_entry = section.require("num_params")?;
        let count: usize = count_entry.parse()?;
        let params_entry = section.require("params")?;
        let params: Vec<f64> = params_entry.parse_list()?;
        if params.len() != count {
            return Err(Error::parse(
                params_entry.offset,
                format!("expected {count} parameters, found {}", params.len()),
            ));
        }
        Self::from_params(family, params).map_err(|e| Error::parse(params_entry.offset, e.to_string()))
    }
}

pub const POTENTIAL_SCHEMA_VERSION: u32 = 1;

impl OmegaPotential for Potential {
    fn name(&self) -> String {
        self.as_dyn().name()
    }

    fn phi(&self, x: f64) -> f64 {
        self.as_dyn().phi(x)
    }

    fn phi_inv(&self, p: f64) -> f64 {
        self.as_dyn().phi_inv(p)
    }

    fn phi_inv_at_zero(&self) -> f64 {
        self.as_dyn().phi_inv_at_zero()
    }

    fn phi_inv_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        self.as_dyn().phi_inv_integral(lo, hi)
    }

    fn has_closed_form_integral(&self) -> bool {
        self.as_dyn().has_closed_form_integral()
    }

    fn bregman_term(&self, x: f64, y: f64) -> Option<f64> {
        self.as_dyn().bregman_term(x, y)
    }

    fn phi_inv_derivative(&self, p: f64) -> f64 {
        self.as_dyn().phi_inv_derivative(p)
    }
}

/// `h(p) = sum_a int_1^{p_a} phi^{-1}`. Uses the family's closed form where
/// it has one and adaptive quadrature otherwise.
pub fn mirror_map_value<P: OmegaPotential + ?Sized>(pot: &P, p: &[f64]) -> Result<f64> {
    p.iter().map(|&x| pot.phi_inv_integral(1.0, x)).sum()
}

/// `h(p)` by adaptive quadrature of `phi^{-1}`, regardless of closed forms.
pub fn mirror_map_value_quadrature<P: OmegaPotential + ?Sized>(pot: &P, p: &[f64]) -> Result<f64> {
    p.iter()
        .map(|&x| quadrature::integrate(|t| pot.phi_inv(t), 1.0, x, QUADRATURE_TOL))
        .sum()
}

/// `D_h(x, y) = h(x) - h(y) - <phi^{-1}(y), x - y>`, computed per coordinate
/// as `int_y^x (phi^{-1}(t) - phi^{-1}(y)) dt`.
pub fn bregman<P: OmegaPotential + ?Sized>(pot: &P, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("bregman arguments have lengths {} and {}", x.len(), y.len())));
    }
    let mut total = 0.0;
    for (&xa, &ya) in x.iter().zip(y) {
        if let Some(term) = pot.bregman_term(xa, ya) {
            total += term;
            continue;
        }
        let grad = pot.phi_inv(ya);
        if !grad.is_finite() {
            return Err(Error::Domain(format!("gradient of the mirror map is infinite at {ya}")));
        }
        total += pot.phi_inv_integral(ya, xa)? - grad * (xa - ya);
    }
    if total.is_nan() {
        return Err(Error::Domain("Bregman divergence is undefined at the boundary".into()));
    }
    Ok(total)
}

/// Exact `D_h(y + eps d, y)` against its local quadratic model
/// `eps^2 / 2 sum_a (phi^{-1})'(y_a) d_a^2`.
pub fn bregman_local_quadratic_check<P: OmegaPotential + ?Sized>(
    pot: &P,
    y: &[f64],
    direction: &[f64],
    epsilon: f64,
) -> Result<(f64, f64)> {
    if y.len() != direction.len() {
        return Err(Error::Dimension("direction length differs from the base point".into()));
    }
    let x: Vec<f64> = y.iter().zip(direction).map(|(y, d)| y + epsilon * d).collect();
    let lhs = bregman(pot, &x, y)?;
    let rhs = 0.5
        * epsilon
        * epsilon
        * y.iter()
            .zip(direction)
            .map(|(&ya, &da)| pot.phi_inv_derivative(ya) * da * da)
            .sum::<f64>();
    Ok((lhs, rhs))
}

/// Segment widths making the piecewise class approximate an exponential
/// potential: `psi_1 = c 3 ln 10`, `psi_i = c ln(i / (i - 1))` for `i >= 2`.
/// Since the tail telescopes to `ln n`, `c = span / (3 ln 10 + ln n)` makes the
/// widths sum to `span`. The resulting knots satisfy
/// `phi(x) = exp(x / c) / (1000 n)` at every knot past the first.
pub fn negentropy_init_psi(n: usize, span: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidInput("negentropy initialization needs n >= 2".into()));
    }
    if !(span > 0.0) {
        return Err(Error::InvalidInput("knot span must be positive".into()));
    }
    let head = 3.0 * 10f64.ln();
    let scale = span / (head + (n as f64).ln());
    let mut psi = Vec::with_capacity(n);
    psi.push(scale * head);
    for i in 2..=n {
        psi.push(scale * (i as f64 / (i - 1) as f64).ln());
    }
    Ok(psi)
}

/// [`negentropy_init_psi`] with unit scale `c = 1`: `psi_1 = 3 ln 10`,
/// `psi_i = ln(i / (i - 1))`. The knots then follow `exp(x) / (1000 n)`, the
/// same curvature as the negative entropy.
pub fn unit_negentropy_psi(n: usize) -> Result<Vec<f64>> {
    negentropy_init_psi(n, 3.0 * 10f64.ln() + (n.max(1) as f64).ln())
}

#[cfg(test)]
mod tests;
