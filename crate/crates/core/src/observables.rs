//! Ground-state observables of a [`VariationalState`]: spin expectations,
//! single-mode Wigner slices along the real displacement axis, and normal-ordered
//! moments of one bath mode.
//!
//! Two Wigner normalizations are in use and are never mixed silently:
//!
//! * [`WignerConvention::ClosedForm`] is the Gaussian-sum form with prefactor
//!   `1/(π⟨Ψ|Ψ⟩)`, used by [`wigner_diag`] and [`wigner_offdiag`].
//! * [`WignerConvention::MomentSeries`] is the moment expansion with prefactor
//!   `2/π`, used by [`wigner_from_moments`].
//!
//! For the same state, `wigner_diag = ½ · series(SpinUp moments)` and
//! `wigner_offdiag = −½ · series(σx moments)`.

use serde::{Deserialize, Serialize};

use crate::ansatz::{kernel, PairKernels, VariationalState, NORM_FLOOR};
use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};

use std::f64::consts::PI;

/// `⟨σx⟩ = −Σ C_n C_m K⁺_nm / Σ C_n C_m K⁻_nm`.
pub fn coherence(state: &VariationalState) -> Result<f64> {
    let kernels = PairKernels::new(state);
    let same = kernels.weighted_sum(state, &kernels.minus);
    if !(2.0 * same > NORM_FLOOR) {
        return Err(Error::DegenerateState(2.0 * same));
    }
    Ok(-kernels.weighted_sum(state, &kernels.plus) / same)
}

/// Coherence recovered from the tunneling part of the energy,
/// `⟨σx⟩ = 2 ⟨Ψ|Δ/2 σx|Ψ⟩ / (Δ ⟨Ψ|Ψ⟩)`.
pub fn coherence_from_energy(
    state: &VariationalState,
    bath: &DiscretizedBath,
    params: &crate::ansatz::ModelParams,
) -> Result<f64> {
    let terms = crate::ansatz::energy_terms(state, bath, params)?;
    Ok(2.0 * terms.tunneling / (params.delta * terms.norm))
}

/// `⟨σz⟩`, from the weights of the two spin branches.
pub fn sigma_z(state: &VariationalState) -> Result<f64> {
    let n = state.num_polarons();
    let c = state.weights();
    let flipped: Vec<Vec<f64>> = state
        .rows()
        .map(|r| r.iter().map(|f| -f).collect())
        .collect();
    let mut up = 0.0;
    let mut down = 0.0;
    for a in 0..n {
        for b in 0..n {
            let cc = c[a] * c[b];
            up += cc * crate::ansatz::overlap(state.row(a), state.row(b))?;
            down += cc * crate::ansatz::overlap(&flipped[a], &flipped[b])?;
        }
    }
    let norm = up + down;
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateState(norm));
    }
    Ok((up - down) / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WignerChannel {
    /// `↑↑`, spin projected onto `|↑⟩`.
    Diagonal,
    /// `↑↓`, with σx inserted.
    OffDiagonal,
    /// Series built from a moment table of the given channel.
    Moments(MomentChannel),
}

impl WignerChannel {
    pub fn label(&self) -> String {
        match self {
            WignerChannel::Diagonal => "diag".into(),
            WignerChannel::OffDiagonal => "offdiag".into(),
            WignerChannel::Moments(c) => format!("moments_{}", c.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WignerConvention {
    /// Prefactor `1/(π⟨Ψ|Ψ⟩)`.
    ClosedForm,
    /// Prefactor `2/π` on normalized moments.
    MomentSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerCurve {
    pub mode_index: usize,
    pub omega_k: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub channel: WignerChannel,
    pub convention: WignerConvention,
    /// Largest contribution of the highest retained moment order relative to
    /// the curve's peak; only set for moment series.
    pub series_tail: Option<f64>,
}

impl WignerCurve {
    pub fn peak(&self) -> (f64, f64) {
        self.x
            .iter()
            .zip(&self.values)
            .fold((f64::NAN, f64::NEG_INFINITY), |best, (&x, &v)| {
                if v > best.1 {
                    (x, v)
                } else {
                    best
                }
            })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Truncation of the moment series looks unreliable.
    pub fn series_unconverged(&self, tol: f64) -> bool {
        self.series_tail.map_or(false, |t| !(t <= tol))
    }
}

/// `count` points spanning `[-half_width, half_width]`, mirrored exactly about 0.
pub fn symmetric_grid(half_width: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2, "grid needs at least two points");
    let step = 2.0 * half_width / (count - 1) as f64;
    let mut grid = vec![0.0; count];
    for i in 0..count / 2 {
        let x = -half_width + step * i as f64;
        grid[i] = x;
        grid[count - 1 - i] = -x;
    }
    grid
}

pub const DEFAULT_GRID_POINTS: usize = 301;

/// Default grid for mode `k`: 301 points over `±(1.5 max_n |f⁽ⁿ⁾_k| + 1)`.
pub fn default_grid(state: &VariationalState, k: usize) -> Vec<f64> {
    let reach = state.rows().map(|r| r[k].abs()).fold(0.0, f64::max);
    symmetric_grid(1.5 * reach + 1.0, DEFAULT_GRID_POINTS)
}

fn check_mode(state: &VariationalState, bath: &DiscretizedBath, k: usize) -> Result<()> {
    state.check_bath(bath)?;
    if k >= bath.num_modes() {
        return Err(Error::Parameter(format!(
            "mode index {k} out of range (bath has {} modes)",
            bath.num_modes()
        )));
    }
    Ok(())
}

fn check_grid(x: &[f64]) -> Result<()> {
    if x.is_empty() || x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("grid must be non-empty and strictly increasing".into()));
    }
    Ok(())
}

/// Exponents `−½ Σ_{q≠k} (f⁽ⁿ⁾_q ∓ f⁽ᵐ⁾_q)²` for all pairs.
fn excluded_mode_exponent(state: &VariationalState, k: usize, plus: bool) -> Vec<f64> {
    let n = state.num_polarons();
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let (fa, fb) = (state.row(a), state.row(b));
            let mut s = 0.0;
            for q in 0..fa.len() {
                if q == k {
                    continue;
                }
                let d = if plus { fa[q] + fb[q] } else { fa[q] - fb[q] };
                s += d * d;
            }
            out[a * n + b] = -0.5 * s;
        }
    }
    out
}

/// Spin-diagonal slice
/// `W↑↑(X) = 1/(π⟨Ψ|Ψ⟩) Σ C_n C_m e^{−½Σ_{q≠k}(f⁽ⁿ⁾_q−f⁽ᵐ⁾_q)²} e^{−2(X−(f⁽ⁿ⁾_k+f⁽ᵐ⁾_k)/2)²}`.
pub fn wigner_diag(
    state: &VariationalState,
    bath: &DiscretizedBath,
    k: usize,
    x: &[f64],
) -> Result<WignerCurve> {
    check_mode(state, bath, k)?;
    check_grid(x)?;
    let n = state.num_polarons();
    let c = state.weights();
    let norm = state.norm();
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateState(norm));
    }
    let exps = excluded_mode_exponent(state, k, false);
    let values = x
        .iter()
        .map(|&xv| {
            let mut w = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let mid = 0.5 * (state.row(a)[k] + state.row(b)[k]);
                    let d = xv - mid;
                    w += c[a] * c[b] * kernel(exps[a * n + b] - 2.0 * d * d);
                }
            }
            w / (PI * norm)
        })
        .collect();
    Ok(WignerCurve {
        mode_index: k,
        omega_k: bath.modes[k].omega,
        x: x.to_vec(),
        values,
        channel: WignerChannel::Diagonal,
        convention: WignerConvention::ClosedForm,
        series_tail: None,
    })
}

/// Spin-off-diagonal slice
/// `W↑↓(X) = 1/(π⟨Ψ|Ψ⟩) Σ C_n C_m e^{−½Σ_{q≠k}(f⁽ⁿ⁾_q+f⁽ᵐ⁾_q)²} [e^{−2(X−δ)²} + e^{−2(X+δ)²}]`
/// with `δ = (f⁽ⁿ⁾_k − f⁽ᵐ⁾_k)/2`.
pub fn wigner_offdiag(
    state: &VariationalState,
    bath: &DiscretizedBath,
    k: usize,
    x: &[f64],
) -> Result<WignerCurve> {
    check_mode(state, bath, k)?;
    check_grid(x)?;
    let n = state.num_polarons();
    let c = state.weights();
    let norm = state.norm();
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateState(norm));
    }
    let exps = excluded_mode_exponent(state, k, true);
    let values = x
        .iter()
        .map(|&xv| {
            let mut w = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let shift = 0.5 * (state.row(a)[k] - state.row(b)[k]);
                    let (l, r) = (xv - shift, xv + shift);
                    let e = exps[a * n + b];
                    w += c[a] * c[b] * (kernel(e - 2.0 * l * l) + kernel(e - 2.0 * r * r));
                }
            }
            w / (PI * norm)
        })
        .collect();
    Ok(WignerCurve {
        mode_index: k,
        omega_k: bath.modes[k].omega,
        x: x.to_vec(),
        values,
        channel: WignerChannel::OffDiagonal,
        convention: WignerConvention::ClosedForm,
        series_tail: None,
    })
}

/// Spin operator inserted in a moment `⟨Ψ|σ (a†_k)^m (a_k)^{m'}|Ψ⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentChannel {
    Identity,
    SigmaX,
    /// Moments with σy are purely imaginary for real states; the table holds
    /// their imaginary parts.
    SigmaY,
    SigmaZ,
    /// Projector `(1 + σz)/2`.
    SpinUp,
}

impl MomentChannel {
    pub fn label(&self) -> &'static str {
        match self {
            MomentChannel::Identity => "identity",
            MomentChannel::SigmaX => "sigma_x",
            MomentChannel::SigmaY => "sigma_y",
            MomentChannel::SigmaZ => "sigma_z",
            MomentChannel::SpinUp => "spin_up",
        }
    }
}

impl std::str::FromStr for MomentChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" | "0" => MomentChannel::Identity,
            "sigma_x" | "x" => MomentChannel::SigmaX,
            "sigma_y" | "y" => MomentChannel::SigmaY,
            "sigma_z" | "z" => MomentChannel::SigmaZ,
            "spin_up" | "up" => MomentChannel::SpinUp,
            other => return Err(Error::Parameter(format!("unknown moment channel '{other}'"))),
        })
    }
}

/// Normalized moments `A_{m,m'}` for `0 <= m, m' < m_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub mode_index: usize,
    pub omega_k: f64,
    pub channel: MomentChannel,
    pub m_max: usize,
    /// Row-major `m_max × m_max`.
    pub entries: Vec<f64>,
}

impl MomentTable {
    pub fn get(&self, m: usize, mp: usize) -> f64 {
        self.entries[m * self.m_max + mp]
    }

    pub fn max_abs_difference(&self, other: &MomentTable) -> Result<f64> {
        if self.m_max != other.m_max {
            return Err(Error::Dimension {
                expected: self.m_max,
                got: other.m_max,
            });
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

/// Per-branch factors of a moment between displaced vacua of one mode:
/// returns `(same-branch weight, cross-branch weight)` multipliers for the
/// requested channel, given `x = f⁽ⁿ⁾_k`, `y = f⁽ᵐ⁾_k` and the orders.
fn branch_terms(channel: MomentChannel, x: f64, y: f64, m: i32, mp: i32) -> (f64, f64) {
    // ⟨+x|(a†)^m a^{m'}|+y⟩ ∝ x^m y^{m'},  ⟨−x|…|−y⟩ ∝ (−x)^m (−y)^{m'}
    let up = x.powi(m) * y.powi(mp);
    let down = (-x).powi(m) * (-y).powi(mp);
    // ⟨+x|…|−y⟩ ∝ x^m (−y)^{m'},  ⟨−x|…|+y⟩ ∝ (−x)^m y^{m'}
    let up_down = x.powi(m) * (-y).powi(mp);
    let down_up = (-x).powi(m) * y.powi(mp);
    match channel {
        MomentChannel::Identity => (up + down, 0.0),
        MomentChannel::SigmaZ => (up - down, 0.0),
        MomentChannel::SpinUp => (up, 0.0),
        MomentChannel::SigmaX => (0.0, -(up_down + down_up)),
        MomentChannel::SigmaY => (0.0, up_down - down_up),
    }
}

/// Closed-form moments of mode `k` on the coherent-state expansion,
/// normalized by `⟨Ψ|Ψ⟩`.
pub fn mode_moments(
    state: &VariationalState,
    bath: &DiscretizedBath,
    k: usize,
    m_max: usize,
    channel: MomentChannel,
) -> Result<MomentTable> {
    check_mode(state, bath, k)?;
    if m_max < 1 {
        return Err(Error::Parameter("m_max must be >= 1".into()));
    }
    let n = state.num_polarons();
    let c = state.weights();
    let kernels = PairKernels::new(state);
    let norm = state.norm();
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateState(norm));
    }
    let mut entries = vec![0.0; m_max * m_max];
    for m in 0..m_max {
        for mp in 0..m_max {
            let mut total = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let idx = a * n + b;
                    let (same, cross) =
                        branch_terms(channel, state.row(a)[k], state.row(b)[k], m as i32, mp as i32);
                    total += c[a] * c[b] * (same * kernels.minus[idx] + cross * kernels.plus[idx]);
                }
            }
            entries[m * m_max + mp] = total / norm;
        }
    }
    Ok(MomentTable {
        mode_index: k,
        omega_k: bath.modes[k].omega,
        channel,
        m_max,
        entries,
    })
}

fn factorials(n: usize) -> Vec<f64> {
    let mut out = vec![1.0; n + 1];
    for i in 1..=n {
        out[i] = out[i - 1] * i as f64;
    }
    out
}

/// `e^{2X²} ∂_β̄^m ∂_β^{m'} e^{−2ββ̄}` on the real axis `β = β̄ = X`, a
/// two-variable Hermite polynomial in `X`.
fn mixed_derivative_polynomial(m: usize, mp: usize, x: f64, fact: &[f64]) -> f64 {
    // ∂_β^{m'} e^{−2ββ̄} = (−2β̄)^{m'} e^{−2ββ̄}; then Leibniz in β̄
    let mut total = 0.0;
    for j in 0..=m.min(mp) {
        let binom = fact[m] / (fact[j] * fact[m - j]);
        let falling = fact[mp] / fact[mp - j];
        total += binom * falling * x.powi((mp - j) as i32) * (-2.0 * x).powi((m - j) as i32);
    }
    (-2.0f64).powi(mp as i32) * total
}

/// Wigner slice from a moment table,
/// `W(X) = (2/π) Σ A_{m,m'} (−1)^{m+m'}/(m! m'!) ∂_β̄^m ∂_β^{m'} e^{−2ββ̄}|_{β=X}`,
/// truncated at the table size.
pub fn wigner_from_moments(table: &MomentTable, x: &[f64]) -> Result<WignerCurve> {
    check_grid(x)?;
    let mm = table.m_max;
    if table.entries.len() != mm * mm {
        return Err(Error::Dimension {
            expected: mm * mm,
            got: table.entries.len(),
        });
    }
    let fact = factorials(mm);
    let mut values = Vec::with_capacity(x.len());
    let mut tail: f64 = 0.0;
    for &xv in x {
        let gauss = (-2.0 * xv * xv).exp();
        let mut w = 0.0;
        let mut last_shell = 0.0;
        for m in 0..mm {
            for mp in 0..mm {
                let a = table.get(m, mp);
                if a == 0.0 {
                    continue;
                }
                let sign = if (m + mp) % 2 == 0 { 1.0 } else { -1.0 };
                let term = a * sign / (fact[m] * fact[mp])
                    * mixed_derivative_polynomial(m, mp, xv, &fact);
                w += term;
                if m.max(mp) + 1 == mm {
                    last_shell += term;
                }
            }
        }
        values.push(2.0 / PI * gauss * w);
        tail = tail.max((2.0 / PI * gauss * last_shell).abs());
    }
    let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(WignerCurve {
        mode_index: table.mode_index,
        omega_k: table.omega_k,
        x: x.to_vec(),
        values,
        channel: WignerChannel::Moments(table.channel),
        convention: WignerConvention::MomentSeries,
        series_tail: Some(if peak > 0.0 { tail / peak } else { tail }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{sh_solve, ModelParams};
    use crate::bath::{discretize, SpectralDensity};
    use approx::assert_relative_eq;

    fn bath(m: usize) -> DiscretizedBath {
        discretize(&SpectralDensity::new(0.5, 1.0).unwrap(), 2.0, m).unwrap()
    }

    fn two_polaron_state() -> VariationalState {
        VariationalState::from_rows(
            vec![0.9, 0.3],
            vec![vec![0.25, 0.2, 0.1, -0.05], vec![0.2, -0.1, -0.15, 0.05]],
        )
        .unwrap()
    }

    #[test]
    fn coherence_of_bare_state_is_minus_one() {
        let s = VariationalState::undisplaced(5).unwrap();
        assert_eq!(coherence(&s).unwrap(), -1.0);
    }

    #[test]
    fn coherence_of_sh_state_is_delta_r_ratio() {
        let b = discretize(&SpectralDensity::new(0.5, 1.0).unwrap(), 1.1, 120).unwrap();
        let p = ModelParams::new(0.01).unwrap();
        let sh = sh_solve(&b, &p).unwrap();
        assert_relative_eq!(coherence(&sh.state()).unwrap(), -sh.delta_r / p.delta, max_relative = 1e-11);
    }

    #[test]
    fn coherence_two_routes_agree() {
        let b = bath(4);
        let p = ModelParams::new(0.3).unwrap();
        let s = two_polaron_state();
        let direct = coherence(&s).unwrap();
        let via_energy = coherence_from_energy(&s, &b, &p).unwrap();
        assert!((direct - via_energy).abs() < 1e-12);
    }

    #[test]
    fn sigma_z_vanishes() {
        assert_eq!(sigma_z(&two_polaron_state()).unwrap(), 0.0);
        let b = discretize(&SpectralDensity::new(0.5, 1.0).unwrap(), 1.5, 30).unwrap();
        let sh = sh_solve(&b, &ModelParams::new(0.05).unwrap()).unwrap();
        assert!(sigma_z(&sh.state()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn single_polaron_diag_peak() {
        let b = bath(4);
        let s = VariationalState::single(vec![0.4, 0.1, -0.3, 0.2]).unwrap();
        let grid = symmetric_grid(2.0, 401);
        let curve = wigner_diag(&s, &b, 0, &grid).unwrap();
        let (x, w) = curve.peak();
        assert_relative_eq!(x, 0.4, epsilon = 1e-12);
        assert_relative_eq!(w, 1.0 / (2.0 * PI), max_relative = 1e-12);
    }

    #[test]
    fn undisplaced_diag_centered() {
        let b = bath(3);
        let s = VariationalState::undisplaced(3).unwrap();
        let curve = wigner_diag(&s, &b, 1, &symmetric_grid(1.0, 11)).unwrap();
        assert_eq!(curve.peak().0, 0.0);
        assert_relative_eq!(curve.peak().1, 1.0 / (2.0 * PI), max_relative = 1e-14);
    }

    #[test]
    fn offdiag_is_even() {
        let b = bath(4);
        let s = two_polaron_state();
        let grid = symmetric_grid(1.7, 301);
        let curve = wigner_offdiag(&s, &b, 2, &grid).unwrap();
        let n = grid.len();
        for i in 0..n {
            assert_eq!(curve.values[i], curve.values[n - 1 - i]);
        }
    }

    #[test]
    fn offdiag_single_polaron_prefactor() {
        let b = bath(4);
        let f = vec![0.4, 0.3, -0.2, 0.5];
        let s = VariationalState::single(f.clone()).unwrap();
        let curve = wigner_offdiag(&s, &b, 0, &symmetric_grid(1.0, 3)).unwrap();
        let rest: f64 = f[1..].iter().map(|x| x * x).sum();
        assert_relative_eq!(curve.values[1], (-2.0 * rest).exp() / PI, max_relative = 1e-13);
    }

    #[test]
    fn bad_mode_and_grid_are_rejected() {
        let b = bath(3);
        let s = VariationalState::undisplaced(3).unwrap();
        assert!(wigner_diag(&s, &b, 3, &[0.0, 1.0]).is_err());
        assert!(wigner_offdiag(&s, &b, 0, &[1.0, 0.0]).is_err());
        assert!(mode_moments(&s, &b, 0, 0, MomentChannel::Identity).is_err());
    }

    #[test]
    fn moment_examples() {
        let b = bath(4);
        let s = VariationalState::single(vec![0.35, 0.1, -0.2, 0.05]).unwrap();
        let id = mode_moments(&s, &b, 0, 4, MomentChannel::Identity).unwrap();
        assert_relative_eq!(id.get(0, 0), 1.0, max_relative = 1e-14);
        assert_eq!(id.get(0, 1), 0.0);
        let z = mode_moments(&s, &b, 0, 4, MomentChannel::SigmaZ).unwrap();
        assert_relative_eq!(z.get(0, 1), 0.35, max_relative = 1e-14);
        let x = mode_moments(&s, &b, 0, 4, MomentChannel::SigmaX).unwrap();
        assert_relative_eq!(x.get(0, 0), coherence(&s).unwrap(), max_relative = 1e-14);
        let t = mode_moments(&two_polaron_state(), &b, 1, 5, MomentChannel::Identity).unwrap();
        for m in 0..5 {
            for mp in 0..5 {
                assert_relative_eq!(t.get(m, mp), t.get(mp, m), max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn vacuum_series_is_plain_gaussian() {
        let mut entries = vec![0.0; 100];
        entries[0] = 1.0;
        let table = MomentTable {
            mode_index: 0,
            omega_k: 1.0,
            channel: MomentChannel::Identity,
            m_max: 10,
            entries,
        };
        let grid = symmetric_grid(2.0, 41);
        let curve = wigner_from_moments(&table, &grid).unwrap();
        for (x, w) in grid.iter().zip(&curve.values) {
            assert_relative_eq!(*w, 2.0 / PI * (-2.0 * x * x).exp(), max_relative = 1e-14);
        }
    }

    #[test]
    fn series_reproduces_closed_forms_for_small_displacements() {
        let b = bath(4);
        let s = two_polaron_state();
        let grid = symmetric_grid(2.5, 201);
        for k in 0..4 {
            let up = mode_moments(&s, &b, k, 10, MomentChannel::SpinUp).unwrap();
            let diag = wigner_diag(&s, &b, k, &grid).unwrap();
            let series = wigner_from_moments(&up, &grid).unwrap();
            for (a, c) in diag.values.iter().zip(&series.values) {
                assert!((a - 0.5 * c).abs() < 1e-10, "mode {k}: {a} vs {}", 0.5 * c);
            }
            let sx = mode_moments(&s, &b, k, 10, MomentChannel::SigmaX).unwrap();
            let off = wigner_offdiag(&s, &b, k, &grid).unwrap();
            let series = wigner_from_moments(&sx, &grid).unwrap();
            for (a, c) in off.values.iter().zip(&series.values) {
                assert!((a + 0.5 * c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn large_displacement_series_flags_its_tail() {
        let b = bath(2);
        let s = VariationalState::single(vec![2.0, 0.1]).unwrap();
        let grid = symmetric_grid(4.0, 161);
        let up = mode_moments(&s, &b, 0, 10, MomentChannel::SpinUp).unwrap();
        let series = wigner_from_moments(&up, &grid).unwrap();
        let exact = wigner_diag(&s, &b, 0, &grid).unwrap();
        let dev = exact
            .values
            .iter()
            .zip(&series.values)
            .fold(0.0f64, |acc, (a, c)| acc.max((a - 0.5 * c).abs()));
        assert!(dev > 1e-3, "series unexpectedly converged: {dev}");
        assert!(series.series_unconverged(1e-3));

        let small = VariationalState::single(vec![0.2, 0.1]).unwrap();
        let up = mode_moments(&small, &b, 0, 10, MomentChannel::SpinUp).unwrap();
        assert!(!wigner_from_moments(&up, &grid).unwrap().series_unconverged(1e-6));
    }

    #[test]
    fn symmetric_grid_is_mirrored() {
        let g = symmetric_grid(1.3, 301);
        assert_eq!(g[150], 0.0);
        for i in 0..301 {
            assert_eq!(g[i], -g[300 - i]);
        }
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
