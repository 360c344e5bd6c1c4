//! Multi-polaron coherent-state expansion of the spin-boson ground state,
//!
//! ```text
//! |Ψ⟩ = Σ_n C_n [ |↑⟩ ⊗ |+f⁽ⁿ⁾⟩ − |↓⟩ ⊗ |−f⁽ⁿ⁾⟩ ],
//! ```
//!
//! for `H = Δ/2 σx + Σ_k ω_k a†_k a_k − σz Σ_k g_k/2 (a†_k + a_k)`.
//!
//! Every matrix element reduces to Gaussian overlaps of real coherent states,
//! `⟨f|g⟩ = exp(−½ Σ_k (f_k − g_k)²)`. Pair kernels come in two flavours: the
//! "minus" kernel on `f⁽ⁿ⁾ − f⁽ᵐ⁾` (same spin branch) and the "plus" kernel on
//! `f⁽ⁿ⁾ + f⁽ᵐ⁾` (opposite branches, reached through the σx tunneling term).

use serde::{Deserialize, Serialize};

use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};

/// Kernel exponents below this are treated as exact zeros.
pub const KERNEL_EXPONENT_FLOOR: f64 = -700.0;

/// Norms below this are rejected as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn kernel(exponent: f64) -> f64 {
    if exponent < KERNEL_EXPONENT_FLOOR {
        0.0
    } else {
        exponent.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub delta: f64,
}

impl ModelParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Parameter(format!("delta must be > 0, got {delta}")));
        }
        Ok(Self { delta })
    }
}

/// Weights `C_n` and displacements `f⁽ⁿ⁾_k`, stored unnormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct VariationalState {
    weights: Vec<f64>,
    // row-major, N rows of M displacements
    displacements: Vec<f64>,
    num_modes: usize,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    #[serde(rename = "C")]
    weights: Vec<f64>,
    f: Vec<Vec<f64>>,
}

impl TryFrom<StateRepr> for VariationalState {
    type Error = Error;

    fn try_from(repr: StateRepr) -> Result<Self> {
        VariationalState::from_rows(repr.weights, repr.f)
    }
}

impl From<VariationalState> for StateRepr {
    fn from(state: VariationalState) -> Self {
        let f = state.rows().map(<[f64]>::to_vec).collect();
        StateRepr {
            weights: state.weights,
            f,
        }
    }
}

impl VariationalState {
    pub fn from_rows(weights: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("state needs at least one polaron".into()));
        }
        if rows.len() != weights.len() {
            return Err(Error::Dimension {
                expected: weights.len(),
                got: rows.len(),
            });
        }
        let num_modes = rows[0].len();
        if num_modes == 0 {
            return Err(Error::Parameter("state needs at least one mode".into()));
        }
        let mut displacements = Vec::with_capacity(num_modes * rows.len());
        for row in &rows {
            if row.len() != num_modes {
                return Err(Error::Dimension {
                    expected: num_modes,
                    got: row.len(),
                });
            }
            displacements.extend_from_slice(row);
        }
        if weights.iter().chain(&displacements).any(|x| !x.is_finite()) {
            return Err(Error::Parameter("state contains non-finite entries".into()));
        }
        Ok(Self {
            weights,
            displacements,
            num_modes,
        })
    }

    /// Single coherent state (Silbey-Harris form) with unit weight.
    pub fn single(displacements: Vec<f64>) -> Result<Self> {
        Self::from_rows(vec![1.0], vec![displacements])
    }

    /// `N = 1`, all displacements zero: the bare tunneling ground state.
    pub fn undisplaced(num_modes: usize) -> Result<Self> {
        Self::single(vec![0.0; num_modes])
    }

    pub fn num_polarons(&self) -> usize {
        self.weights.len()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.displacements[n * self.num_modes..(n + 1) * self.num_modes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.displacements.chunks_exact(self.num_modes)
    }

    /// Flat parameter vector `[C_1..C_N, f⁽¹⁾, .., f⁽ᴺ⁾]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.displacements);
        p
    }

    pub fn from_params(params: &[f64], num_polarons: usize, num_modes: usize) -> Result<Self> {
        let expected = num_polarons * (num_modes + 1);
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            weights: params[..num_polarons].to_vec(),
            displacements: params[num_polarons..].to_vec(),
            num_modes,
        })
    }

    pub fn with_polaron(&self, weight: f64, row: &[f64]) -> Result<Self> {
        if row.len() != self.num_modes {
            return Err(Error::Dimension {
                expected: self.num_modes,
                got: row.len(),
            });
        }
        let mut next = self.clone();
        next.weights.push(weight);
        next.displacements.extend_from_slice(row);
        Ok(next)
    }

    pub fn without_polaron(&self, n: usize) -> Result<Self> {
        if self.num_polarons() == 1 || n >= self.num_polarons() {
            return Err(Error::Parameter(format!(
                "cannot drop polaron {n} from a state with {} polarons",
                self.num_polarons()
            )));
        }
        let mut next = self.clone();
        next.weights.remove(n);
        next.displacements
            .drain(n * self.num_modes..(n + 1) * self.num_modes);
        Ok(next)
    }

    /// Reorders polarons; `order[i]` is the old index placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.num_polarons()];
        if order.len() != self.num_polarons() {
            return Err(Error::Dimension {
                expected: self.num_polarons(),
                got: order.len(),
            });
        }
        for &i in order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parameter("not a permutation".into()));
            }
        }
        let weights = order.iter().map(|&i| self.weights[i]).collect();
        let rows = order.iter().map(|&i| self.row(i).to_vec()).collect();
        Self::from_rows(weights, rows)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut next = self.clone();
        next.weights.iter_mut().for_each(|c| *c *= factor);
        next
    }

    pub fn check_bath(&self, bath: &DiscretizedBath) -> Result<()> {
        if self.num_modes != bath.num_modes() {
            return Err(Error::Dimension {
                expected: bath.num_modes(),
                got: self.num_modes,
            });
        }
        Ok(())
    }

    /// `⟨Ψ|Ψ⟩ = 2 Σ_{n,m} C_n C_m ⟨f⁽ⁿ⁾|f⁽ᵐ⁾⟩`.
    pub fn norm(&self) -> f64 {
        let kernels = PairKernels::new(self);
        2.0 * kernels.weighted_sum(self, &kernels.minus)
    }

    /// Rescales to `⟨Ψ|Ψ⟩ = 1` and flips the global sign so that `C_1 > 0`.
    pub fn canonical(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > NORM_FLOOR) {
            return Err(Error::DegenerateState(norm));
        }
        let sign = if self.weights[0] < 0.0 { -1.0 } else { 1.0 };
        Ok(self.scaled(sign / norm.sqrt()))
    }
}

/// Gaussian overlap `exp(−½ Σ_k (f_k − g_k)²)` of two real coherent states.
pub fn overlap(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::Dimension {
            expected: f.len(),
            got: g.len(),
        });
    }
    Ok(kernel(minus_exponent(f, g)))
}

fn minus_exponent(f: &[f64], g: &[f64]) -> f64 {
    -0.5 * f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn plus_exponent(f: &[f64], g: &[f64]) -> f64 {
    -0.5 * f.iter().zip(g).map(|(a, b)| (a + b) * (a + b)).sum::<f64>()
}

/// Symmetric `N × N` tables of the minus and plus kernels.
#[derive(Debug, Clone)]
pub(crate) struct PairKernels {
    pub n: usize,
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
}

impl PairKernels {
    pub fn new(state: &VariationalState) -> Self {
        let n = state.num_polarons();
        let mut minus = vec![0.0; n * n];
        let mut plus = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let (fa, fb) = (state.row(a), state.row(b));
                let km = if a == b { 1.0 } else { kernel(minus_exponent(fa, fb)) };
                let kp = kernel(plus_exponent(fa, fb));
                minus[a * n + b] = km;
                minus[b * n + a] = km;
                plus[a * n + b] = kp;
                plus[b * n + a] = kp;
            }
        }
        Self { n, minus, plus }
    }

    pub fn weighted_sum(&self, state: &VariationalState, table: &[f64]) -> f64 {
        let c = state.weights();
        let mut total = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                total += c[a] * c[b] * table[a * self.n + b];
            }
        }
        total
    }
}

/// The separate pieces of `⟨Ψ|H|Ψ⟩` together with `⟨Ψ|Ψ⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    /// `−Δ Σ C_n C_m K⁺_nm`
    pub tunneling: f64,
    /// `Σ C_n C_m K⁻_nm Σ_k 2 ω_k f⁽ⁿ⁾_k f⁽ᵐ⁾_k`
    pub oscillator: f64,
    /// `−Σ C_n C_m K⁻_nm Σ_k g_k (f⁽ⁿ⁾_k + f⁽ᵐ⁾_k)`
    pub coupling: f64,
    pub norm: f64,
}

impl EnergyTerms {
    pub fn energy(&self) -> f64 {
        (self.tunneling + self.oscillator + self.coupling) / self.norm
    }
}

fn pair_field_terms(fa: &[f64], fb: &[f64], bath: &DiscretizedBath) -> (f64, f64) {
    let mut osc = 0.0;
    let mut cpl = 0.0;
    for ((x, y), mode) in fa.iter().zip(fb).zip(&bath.modes) {
        osc += 2.0 * mode.omega * x * y;
        cpl -= mode.g * (x + y);
    }
    (osc, cpl)
}

pub fn energy_terms(
    state: &VariationalState,
    bath: &DiscretizedBath,
    params: &ModelParams,
) -> Result<EnergyTerms> {
    state.check_bath(bath)?;
    let kernels = PairKernels::new(state);
    let n = state.num_polarons();
    let c = state.weights();
    let mut terms = EnergyTerms {
        tunneling: 0.0,
        oscillator: 0.0,
        coupling: 0.0,
        norm: 0.0,
    };
    for a in 0..n {
        for b in 0..n {
            let cc = c[a] * c[b];
            let km = kernels.minus[a * n + b];
            terms.tunneling -= params.delta * cc * kernels.plus[a * n + b];
            terms.norm += 2.0 * cc * km;
            if km != 0.0 {
                let (osc, cpl) = pair_field_terms(state.row(a), state.row(b), bath);
                terms.oscillator += cc * km * osc;
                terms.coupling += cc * km * cpl;
            }
        }
    }
    if !(terms.norm > NORM_FLOOR) {
        return Err(Error::DegenerateState(terms.norm));
    }
    Ok(terms)
}

/// Rayleigh quotient `⟨Ψ|H|Ψ⟩ / ⟨Ψ|Ψ⟩`.
pub fn energy(state: &VariationalState, bath: &DiscretizedBath, params: &ModelParams) -> Result<f64> {
    Ok(energy_terms(state, bath, params)?.energy())
}

/// Partial derivatives of the energy with respect to every weight and displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    /// Row-major, same layout as the state's displacement rows.
    pub displacements: Vec<f64>,
    pub num_modes: usize,
}

impl Gradient {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.displacements[n * self.num_modes..(n + 1) * self.num_modes]
    }

    pub fn max_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.displacements)
            .fold(0.0, |acc, g| acc.max(g.abs()))
    }

    /// Same flat layout as [`VariationalState::to_params`].
    pub fn into_flat(self) -> Vec<f64> {
        let mut flat = self.weights;
        flat.extend(self.displacements);
        flat
    }
}

/// Energy and its exact gradient in one pass.
pub fn energy_and_gradient(
    state: &VariationalState,
    bath: &DiscretizedBath,
    params: &ModelParams,
) -> Result<(f64, Gradient)> {
    state.check_bath(bath)?;
    let n = state.num_polarons();
    let m = state.num_modes();
    let c = state.weights();
    let kernels = PairKernels::new(state);

    // h_ab = Σ_k [2 ω_k f_a f_b − g_k (f_a + f_b)]
    let mut field = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let (osc, cpl) = pair_field_terms(state.row(a), state.row(b), bath);
            field[a * n + b] = osc + cpl;
            field[b * n + a] = osc + cpl;
        }
    }

    let mut h = 0.0;
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            let idx = a * n + b;
            let cc = c[a] * c[b];
            h += cc * (-params.delta * kernels.plus[idx] + kernels.minus[idx] * field[idx]);
            s += 2.0 * cc * kernels.minus[idx];
        }
    }
    if !(s > NORM_FLOOR) {
        return Err(Error::DegenerateState(s));
    }
    let e = h / s;

    let mut grad_c = vec![0.0; n];
    for a in 0..n {
        let mut dh = 0.0;
        let mut ds = 0.0;
        for b in 0..n {
            let idx = a * n + b;
            dh += c[b] * (-params.delta * kernels.plus[idx] + kernels.minus[idx] * field[idx]);
            ds += c[b] * kernels.minus[idx];
        }
        grad_c[a] = (2.0 * dh - e * 4.0 * ds) / s;
    }

    let mut grad_f = vec![0.0; n * m];
    for a in 0..n {
        let fa = state.row(a);
        let out = &mut grad_f[a * m..(a + 1) * m];
        for b in 0..n {
            let idx = a * n + b;
            let cc = c[a] * c[b];
            let kp = kernels.plus[idx];
            let km = kernels.minus[idx];
            if kp == 0.0 && km == 0.0 {
                continue;
            }
            let fb = state.row(b);
            // dH/df_ak − E dS/df_ak, summed over partners b
            let tunnel = 2.0 * cc * params.delta * kp;
            let same = 2.0 * cc * km;
            let same_field = same * (field[idx] - 2.0 * e);
            for (k, mode) in bath.modes.iter().enumerate() {
                let (x, y) = (fa[k], fb[k]);
                out[k] += tunnel * (x + y) - same_field * (x - y)
                    + same * (2.0 * mode.omega * y - mode.g);
            }
        }
        out.iter_mut().for_each(|g| *g /= s);
    }

    Ok((
        e,
        Gradient {
            weights: grad_c,
            displacements: grad_f,
            num_modes: m,
        },
    ))
}

pub fn gradient(
    state: &VariationalState,
    bath: &DiscretizedBath,
    params: &ModelParams,
) -> Result<Gradient> {
    Ok(energy_and_gradient(state, bath, params)?.1)
}

/// Self-consistent Silbey-Harris solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilbeyHarris {
    pub displacements: Vec<f64>,
    pub delta_r: f64,
    pub iterations: usize,
}

impl SilbeyHarris {
    pub fn state(&self) -> VariationalState {
        VariationalState::single(self.displacements.clone())
            .expect("bath has at least one mode")
    }
}

pub const SH_MAX_ITERATIONS: usize = 100_000;
pub const SH_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Fixed point of `Δ_R = Δ exp(−2 Σ_k f_k²)` with `f_k = (g_k/2)/(ω_k + Δ_R)`,
/// iterated from `Δ_R = Δ`.
pub fn sh_solve(bath: &DiscretizedBath, params: &ModelParams) -> Result<SilbeyHarris> {
    let delta = params.delta;
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be > 0, got {delta}")));
    }
    let displaced_weight = |delta_r: f64| -> f64 {
        bath.modes
            .iter()
            .map(|m| {
                let f = 0.5 * m.g / (m.omega + delta_r);
                f * f
            })
            .sum()
    };
    let mut delta_r = delta;
    for iteration in 1..=SH_MAX_ITERATIONS {
        let next = delta * (-2.0 * displaced_weight(delta_r)).exp();
        let change = (next - delta_r).abs();
        delta_r = next;
        if change <= SH_RELATIVE_TOLERANCE * delta_r || delta_r == 0.0 {
            let displacements = bath
                .modes
                .iter()
                .map(|m| 0.5 * m.g / (m.omega + delta_r))
                .collect();
            return Ok(SilbeyHarris {
                displacements,
                delta_r,
                iterations: iteration,
            });
        }
    }
    Err(Error::Convergence {
        what: "Silbey-Harris iteration",
        iterations: SH_MAX_ITERATIONS,
        last: delta_r,
    })
}
