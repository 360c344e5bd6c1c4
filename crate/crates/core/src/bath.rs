//! Ohmic spectral density and its logarithmic (Wilson-shell) discretization.
//!
//! Shell `n` covers `[ω_c Λ^{-n-1}, ω_c Λ^{-n}]`. Its coupling is fixed by the
//! spectral weight of the shell, `g_n² = ∫ J(ω) dω`, and its frequency is the
//! J-weighted mean of ω over the shell, so both the zeroth and the first moment
//! of J are preserved shell by shell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub alpha: f64,
    pub omega_c: f64,
}

impl SpectralDensity {
    pub fn new(alpha: f64, omega_c: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(omega_c > 0.0) || !omega_c.is_finite() {
            return Err(Error::Parameter(format!("omega_c must be > 0, got {omega_c}")));
        }
        Ok(Self { alpha, omega_c })
    }

    /// `J(ω) = 2αω θ(ω_c − ω)`.
    pub fn evaluate(&self, omega: f64) -> Result<f64> {
        if omega < 0.0 || omega.is_nan() {
            return Err(Error::Domain(format!(
                "spectral density needs omega >= 0, got {omega}"
            )));
        }
        Ok(if omega <= self.omega_c {
            2.0 * self.alpha * omega
        } else {
            0.0
        })
    }

    /// `∫_a^b J(ω) dω` for `0 <= a <= b <= ω_c`.
    fn weight(&self, a: f64, b: f64) -> f64 {
        self.alpha * (b * b - a * a)
    }

    /// `∫_a^b ω J(ω) dω` for `0 <= a <= b <= ω_c`.
    fn first_moment(&self, a: f64, b: f64) -> f64 {
        2.0 * self.alpha / 3.0 * (b * b * b - a * a * a)
    }

    /// Continuum estimate `Δ (Δ e / ω_c)^{α/(1-α)}` of the renormalized tunneling.
    /// Only meaningful for `α < 1`.
    pub fn renormalized_tunneling_estimate(&self, delta: f64) -> Option<f64> {
        if self.alpha >= 1.0 {
            return None;
        }
        let exponent = self.alpha / (1.0 - self.alpha);
        Some(delta * (delta * std::f64::consts::E / self.omega_c).powf(exponent))
    }
}

/// Free-function form of [`SpectralDensity::evaluate`].
pub fn spectral_density(sd: &SpectralDensity, omega: f64) -> Result<f64> {
    sd.evaluate(omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub omega: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedBath {
    pub alpha: f64,
    pub omega_c: f64,
    pub lambda: f64,
    pub modes: Vec<Mode>,
}

impl DiscretizedBath {
    /// Builds a bath from an explicit mode list. Frequencies must be strictly
    /// decreasing and positive; couplings non-negative.
    pub fn from_modes(alpha: f64, omega_c: f64, lambda: f64, modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Parameter("bath needs at least one mode".into()));
        }
        for (k, m) in modes.iter().enumerate() {
            if !(m.omega > 0.0) || !m.omega.is_finite() {
                return Err(Error::Parameter(format!("mode {k}: omega must be > 0")));
            }
            if !(m.g >= 0.0) || !m.g.is_finite() {
                return Err(Error::Parameter(format!("mode {k}: g must be >= 0")));
            }
        }
        if modes.windows(2).any(|w| w[1].omega >= w[0].omega) {
            return Err(Error::Parameter(
                "mode frequencies must be strictly decreasing".into(),
            ));
        }
        Ok(Self {
            alpha,
            omega_c,
            lambda,
            modes,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn omegas(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.omega)
    }

    pub fn couplings(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.g)
    }

    /// Lowest frequency edge covered by the Wilson shells, `ω_c Λ^{-M}`.
    pub fn infrared_edge(&self) -> f64 {
        self.omega_c * self.lambda.powi(-(self.num_modes() as i32))
    }

    /// `Σ_k g_k²`.
    pub fn total_weight(&self) -> f64 {
        self.modes.iter().map(|m| m.g * m.g).sum()
    }

    /// Classical (Δ = 0) displacement `g_k / (2 ω_k)` of every mode.
    pub fn classical_displacements(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.g / (2.0 * m.omega)).collect()
    }

    /// Same bath with the couplings scaled to zero. Handy for decoupled checks.
    pub fn decoupled(&self) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| Mode { omega: m.omega, g: 0.0 })
            .collect();
        Self {
            modes,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DiscretizedBath = serde_json::from_str(text)?;
        Self::from_modes(raw.alpha, raw.omega_c, raw.lambda, raw.modes)
    }
}

/// Collapses each logarithmic shell `[ω_c Λ^{-n-1}, ω_c Λ^{-n}]`, `n = 0..num_modes`,
/// onto a single mode.
pub fn discretize(sd: &SpectralDensity, lambda: f64, num_modes: usize) -> Result<DiscretizedBath> {
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be > 1, got {lambda}")));
    }
    if num_modes < 1 {
        return Err(Error::Parameter("num_modes must be >= 1".into()));
    }
    let modes = (0..num_modes)
        .map(|n| {
            let upper = sd.omega_c * lambda.powi(-(n as i32));
            let lower = upper / lambda;
            let weight = sd.weight(lower, upper);
            Mode {
                omega: sd.first_moment(lower, upper) / weight,
                g: weight.sqrt(),
            }
        })
        .collect();
    DiscretizedBath::from_modes(sd.alpha, sd.omega_c, lambda, modes)
}

/// Number of shells needed so that the infrared edge `ω_c Λ^{-M}` lies below
/// `fraction` times the continuum estimate of `Δ_R`.
pub fn auto_num_modes(sd: &SpectralDensity, lambda: f64, delta: f64, fraction: f64) -> Result<usize> {
    if !(lambda > 1.0) {
        return Err(Error::Parameter(format!("lambda must be > 1, got {lambda}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be > 0, got {delta}")));
    }
    let delta_r = sd.renormalized_tunneling_estimate(delta).ok_or_else(|| {
        Error::Parameter(format!(
            "automatic mode count needs alpha < 1, got {}",
            sd.alpha
        ))
    })?;
    let target = fraction * delta_r;
    let m = ((sd.omega_c / target).ln() / lambda.ln()).ceil();
    Ok(m.max(1.0) as usize)
}

/// Default infrared fraction for [`auto_num_modes`].
pub const DEFAULT_IR_FRACTION: f64 = 0.01;
