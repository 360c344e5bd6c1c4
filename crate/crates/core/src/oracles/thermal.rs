//! Finite-temperature coherence references at the Toulouse point `α = 1/2`.
//!
//! The exact curve follows from the resonant-level free energy with
//! `ρ(ε) = (T_K/π)/(ε² + T_K²)`, `T_K = Δ²/ω_c` and bandwidth `D = 4ω_c/π`:
//!
//! ```text
//! ⟨σx⟩ = (4Δ/(πD)) T ∫_{−D}^{D} dε ln(1 + e^{−ε/T}) (ε² − T_K²)/(ε² + T_K²)²
//! ```
//!
//! Values are reported as magnitudes (positive for a coherent spin).

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToulouseParams {
    pub delta: f64,
    pub omega_c: f64,
    pub temperature: f64,
}

impl ToulouseParams {
    pub fn new(delta: f64, omega_c: f64, temperature: f64) -> Result<Self> {
        if !(delta > 0.0) || !(omega_c > 0.0) {
            return Err(Error::Parameter("delta and omega_c must be > 0".into()));
        }
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        Ok(Self {
            delta,
            omega_c,
            temperature,
        })
    }

    /// Kondo scale `Δ²/ω_c`.
    pub fn kondo_scale(&self) -> f64 {
        self.delta * self.delta / self.omega_c
    }

    /// Fermionic half-bandwidth `4ω_c/π`.
    pub fn bandwidth(&self) -> f64 {
        4.0 * self.omega_c / std::f64::consts::PI
    }
}

/// Absolute tolerance on the returned coherence.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;
const QUADRATURE_ORDER: usize = 30;
const MAX_BISECTIONS: usize = 60;

fn weight(eps: f64, tk: f64) -> f64 {
    let s = eps * eps + tk * tk;
    (eps * eps - tk * tk) / (s * s)
}

/// `T ln(1 + e^{−|ε|/T}) − T ln 2`; the constant is integrated in closed form.
fn thermal_part(eps: f64, t: f64) -> f64 {
    t * (0.5 * (-(eps.abs()) / t).exp_m1()).ln_1p()
}

/// `∫_0^u w(ε) dε`, with antiderivative `−ε/(ε² + T_K²)`.
fn weight_integral(u: f64, tk: f64) -> f64 {
    -u / (u * u + tk * tk)
}

/// `∫_{−D}^{0} (−ε) w(ε) dε`, the zero-temperature integral.
fn ground_integral(d: f64, tk: f64) -> f64 {
    let r = d * d / (tk * tk);
    0.5 * r.ln_1p() + tk * tk / (d * d + tk * tk) - 1.0
}

struct Adaptive<'a, F> {
    rule: &'a GaussLegendre,
    f: F,
    budget: usize,
}

impl<F: FnMut(f64) -> f64> Adaptive<'_, F> {
    fn panel(&mut self, a: f64, b: f64) -> f64 {
        self.rule.integrate(a, b, &mut self.f)
    }

    fn refine(&mut self, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
        let mid = 0.5 * (a + b);
        let left = self.panel(a, mid);
        let right = self.panel(mid, b);
        let error = (left + right - whole).abs();
        let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if error <= tol.max(floor) {
            return Ok(left + right);
        }
        if depth >= MAX_BISECTIONS || self.budget == 0 {
            return Err(Error::Convergence {
                what: "Toulouse quadrature",
                iterations: depth,
                last: left + right,
            });
        }
        self.budget -= 1;
        Ok(self.refine(a, mid, left, 0.5 * tol, depth + 1)?
            + self.refine(mid, b, right, 0.5 * tol, depth + 1)?)
    }

    fn integrate(&mut self, breakpoints: &[f64], tol: f64) -> Result<f64> {
        let panels = breakpoints.len() - 1;
        let mut total = 0.0;
        for w in breakpoints.windows(2) {
            let whole = self.panel(w[0], w[1]);
            total += self.refine(w[0], w[1], whole, tol / panels as f64, 0)?;
        }
        Ok(total)
    }
}

/// Exact Toulouse-line coherence magnitude at temperature `T`.
pub fn toulouse_coherence(p: &ToulouseParams) -> Result<f64> {
    let tk = p.kondo_scale();
    let d = p.bandwidth();
    let prefactor = 4.0 * p.delta / (std::f64::consts::PI * d);
    let ground = ground_integral(d, tk);
    if p.temperature == 0.0 {
        return Ok(prefactor * ground);
    }
    let t = p.temperature;
    // T ln(1 + e^{−|ε|/T}) is even in ε and negligible beyond ~60 T
    let upper = d.min(60.0 * t);
    let mut breakpoints = vec![0.0, upper];
    for scale in [0.1 * tk, tk, 10.0 * tk, 0.1 * t, t, 10.0 * t] {
        if scale > 0.0 && scale < upper {
            breakpoints.push(scale);
        }
    }
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let rule = GaussLegendre::new(QUADRATURE_ORDER).expect("order >= 2");
    let mut adaptive = Adaptive {
        rule: &rule,
        f: |eps: f64| thermal_part(eps, t) * weight(eps, tk),
        budget: 100_000,
    };
    // remainder enters as prefactor · 2 · ∫, so scale the tolerance accordingly
    let tol = QUADRATURE_TOLERANCE / (2.0 * prefactor);
    let remainder = adaptive.integrate(&breakpoints, tol)?
        + t * std::f64::consts::LN_2 * weight_integral(upper, tk);
    Ok(prefactor * (ground + 2.0 * remainder))
}

/// One-polaron thermal coherence `(Δ_R/Δ) tanh(Δ_R/(2T))`; `T = 0` gives `Δ_R/Δ`.
pub fn onepolaron_thermal(delta_r: f64, delta: f64, temperature: f64) -> Result<f64> {
    if !(temperature >= 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be >= 0, got {temperature}"
        )));
    }
    let ratio = delta_r / delta;
    if temperature == 0.0 {
        return Ok(ratio);
    }
    Ok(ratio * (delta_r / (2.0 * temperature)).tanh())
}
