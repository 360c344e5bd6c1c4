//! Exact diagonalization of few-mode spin-boson instances in a truncated Fock
//! basis (each mode capped at `n_max` quanta), by restarted Lanczos with full
//! reorthogonalization and a matrix-free Hamiltonian.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bath::Mode;
use crate::error::{Error, Result};
use crate::observables::{MomentChannel, MomentTable};

pub const MAX_ED_MODES: usize = 4;
pub const MAX_ED_DIMENSION: usize = 2_000_000;
pub const MIN_FOCK_CUTOFF: usize = 8;
/// Cutoff check: raising `n_max` by this must move the energy by less than
/// [`CUTOFF_ENERGY_TOLERANCE`].
pub const CUTOFF_CHECK_STEP: usize = 4;
pub const CUTOFF_ENERGY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdProblem {
    pub modes: Vec<Mode>,
    pub fock_cutoff: usize,
    pub delta: f64,
}

impl EdProblem {
    pub fn dimension_for(num_modes: usize, cutoff: usize) -> Option<usize> {
        (cutoff + 1)
            .checked_pow(num_modes as u32)
            .and_then(|d| d.checked_mul(2))
    }

    pub fn dimension(&self) -> usize {
        Self::dimension_for(self.modes.len(), self.fock_cutoff).unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() > MAX_ED_MODES {
            return Err(Error::Parameter(format!(
                "exact diagonalization supports 1..={MAX_ED_MODES} modes, got {}",
                self.modes.len()
            )));
        }
        if self.fock_cutoff < MIN_FOCK_CUTOFF {
            return Err(Error::Parameter(format!(
                "fock_cutoff must be >= {MIN_FOCK_CUTOFF}, got {}",
                self.fock_cutoff
            )));
        }
        if self.dimension() > MAX_ED_DIMENSION {
            return Err(Error::Parameter(format!(
                "Hilbert dimension {} exceeds {MAX_ED_DIMENSION}",
                self.dimension()
            )));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Parameter("delta must be >= 0".into()));
        }
        if self.modes.iter().any(|m| !(m.omega > 0.0) || !m.g.is_finite()) {
            return Err(Error::Parameter("modes need omega > 0 and finite g".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Basis `|s⟩ ⊗ |n_1 … n_M⟩`, spin block outermost (`s = 0` is `|↑⟩`), then
/// mode 0 as the most significant occupation digit.
struct FockSpace<'a> {
    modes: &'a [Mode],
    delta: f64,
    base: usize,
    block: usize,
    strides: Vec<usize>,
}

impl<'a> FockSpace<'a> {
    fn new(modes: &'a [Mode], delta: f64, cutoff: usize) -> Self {
        let base = cutoff + 1;
        let m = modes.len();
        let mut strides = vec![1; m];
        for k in (0..m.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * base;
        }
        Self {
            modes,
            delta,
            base,
            block: base.pow(m as u32),
            strides,
        }
    }

    fn dim(&self) -> usize {
        2 * self.block
    }

    fn occupation(&self, index: usize, k: usize) -> usize {
        (index / self.strides[k]) % self.base
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let half_delta = 0.5 * self.delta;
        for spin in 0..2 {
            let sz = if spin == 0 { 1.0 } else { -1.0 };
            let offset = spin * self.block;
            let other = (1 - spin) * self.block;
            for i in 0..self.block {
                let mut acc = half_delta * v[other + i];
                let mut diag = 0.0;
                for (k, mode) in self.modes.iter().enumerate() {
                    let n = self.occupation(i, k);
                    diag += mode.omega * n as f64;
                    let c = -sz * 0.5 * mode.g;
                    if n > 0 {
                        // a† from n−1 to n, and a from n to n−1 are the same element
                        acc += c * (n as f64).sqrt() * v[offset + i - self.strides[k]];
                    }
                    if n + 1 < self.base {
                        acc += c * ((n + 1) as f64).sqrt() * v[offset + i + self.strides[k]];
                    }
                }
                out[offset + i] = acc + diag * v[offset + i];
            }
        }
    }

    /// `a_k v`, in place into `out`.
    fn lower(&self, k: usize, v: &[f64], out: &mut [f64]) {
        for spin in 0..2 {
            let offset = spin * self.block;
            for i in 0..self.block {
                let n = self.occupation(i, k);
                out[offset + i] = if n + 1 < self.base {
                    ((n + 1) as f64).sqrt() * v[offset + i + self.strides[k]]
                } else {
                    0.0
                };
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosSettings {
    pub krylov_size: usize,
    pub max_restarts: usize,
    /// Residual norm `‖Hx − θx‖` accepted as converged.
    pub residual_tol: f64,
}

impl Default for LanczosSettings {
    fn default() -> Self {
        Self {
            krylov_size: 60,
            max_restarts: 400,
            residual_tol: 1e-9,
        }
    }
}

struct Eigenpair {
    value: f64,
    vector: Vec<f64>,
    matvecs: usize,
}

fn lowest_eigenpair(space: &FockSpace, settings: &LanczosSettings, start: Vec<f64>) -> Result<Eigenpair> {
    let dim = space.dim();
    let k_max = settings.krylov_size.min(dim).max(1);
    let mut x = start;
    normalize(&mut x);
    let mut hv = vec![0.0; dim];
    let mut matvecs = 0;
    let mut theta = f64::NAN;
    for _ in 0..settings.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::with_capacity(k_max);
        let mut beta: Vec<f64> = Vec::with_capacity(k_max);
        for j in 0..k_max {
            space.apply(&basis[j], &mut hv);
            matvecs += 1;
            let a = dot(&basis[j], &hv);
            alpha.push(a);
            let mut w = hv.clone();
            // full reorthogonalization, twice for stability
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
            }
            let b = dot(&w, &w).sqrt();
            if j + 1 == k_max || b < 1e-13 {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|wi| *wi /= b);
            basis.push(w);
        }
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, &value) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        theta = value;
        let y = eig.eigenvectors.column(imin);
        x.iter_mut().for_each(|xi| *xi = 0.0);
        for (coef, q) in y.iter().zip(&basis) {
            x.iter_mut().zip(q).for_each(|(xi, qi)| *xi += coef * qi);
        }
        normalize(&mut x);
        space.apply(&x, &mut hv);
        matvecs += 1;
        let residual = hv
            .iter()
            .zip(&x)
            .map(|(h, xi)| (h - theta * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= settings.residual_tol {
            return Ok(Eigenpair {
                value: theta,
                vector: x,
                matvecs,
            });
        }
    }
    Err(Error::Convergence {
        what: "Lanczos eigensolver",
        iterations: settings.max_restarts,
        last: theta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMoments {
    pub mode_index: usize,
    pub tables: Vec<MomentTable>,
}

impl ModeMoments {
    pub fn channel(&self, channel: MomentChannel) -> Option<&MomentTable> {
        self.tables.iter().find(|t| t.channel == channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdResult {
    pub energy: f64,
    /// `⟨σx⟩` of the ground state (negative for a coherent spin).
    pub coherence: f64,
    pub sigma_z: f64,
    pub dimension: usize,
    pub matvecs: usize,
    pub moments: Vec<ModeMoments>,
    /// Energy with `n_max + 4`, when that space fits the dimension bound.
    pub check_energy: Option<f64>,
    /// True when the cutoff check ran and moved the energy by more than 1e-8.
    pub cutoff_sensitive: bool,
}

/// Default moment order for ED tables.
pub const ED_MOMENT_ORDER: usize = 10;

fn moment_tables(space: &FockSpace, psi: &[f64], k: usize, m_max: usize) -> Vec<MomentTable> {
    // lowered[j] = a_k^j ψ
    let mut lowered = vec![psi.to_vec()];
    for j in 1..m_max {
        let mut next = vec![0.0; psi.len()];
        space.lower(k, &lowered[j - 1], &mut next);
        lowered.push(next);
    }
    let block = space.block;
    let channels = [
        MomentChannel::Identity,
        MomentChannel::SigmaX,
        MomentChannel::SigmaY,
        MomentChannel::SigmaZ,
        MomentChannel::SpinUp,
    ];
    channels
        .iter()
        .map(|&channel| {
            let mut entries = vec![0.0; m_max * m_max];
            for m in 0..m_max {
                for mp in 0..m_max {
                    let (l, r) = (&lowered[m], &lowered[mp]);
                    let (lu, ld) = l.split_at(block);
                    let (ru, rd) = r.split_at(block);
                    entries[m * m_max + mp] = match channel {
                        MomentChannel::Identity => dot(lu, ru) + dot(ld, rd),
                        MomentChannel::SigmaZ => dot(lu, ru) - dot(ld, rd),
                        MomentChannel::SpinUp => dot(lu, ru),
                        // σx|↑⟩ = |↓⟩
                        MomentChannel::SigmaX => dot(lu, rd) + dot(ld, ru),
                        // ⟨ψ|σy …|ψ⟩ = i(⟨↑|…|↓⟩ − ⟨↓|…|↑⟩) for real ψ; imaginary part kept
                        MomentChannel::SigmaY => -(dot(lu, rd) - dot(ld, ru)),
                    };
                }
            }
            MomentTable {
                mode_index: k,
                omega_k: space.modes[k].omega,
                channel,
                m_max,
                entries,
            }
        })
        .collect()
}

fn start_vector(space: &FockSpace) -> Vec<f64> {
    // antisymmetric spin combination on the vacuum, lightly randomized
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..space.dim()).map(|_| 1e-3 * rng.gen_range(-1.0..1.0)).collect();
    v[0] += 1.0;
    v[space.block] -= 1.0;
    v
}

fn solve_at(problem: &EdProblem, cutoff: usize, settings: &LanczosSettings) -> Result<(Eigenpair, usize)> {
    let space = FockSpace::new(&problem.modes, problem.delta, cutoff);
    let pair = lowest_eigenpair(&space, settings, start_vector(&space))?;
    Ok((pair, space.dim()))
}

/// Ground state of the truncated problem, its observables, and a cutoff check.
pub fn ed_ground(problem: &EdProblem) -> Result<EdResult> {
    ed_ground_with(problem, &LanczosSettings::default(), ED_MOMENT_ORDER)
}

pub fn ed_ground_with(problem: &EdProblem, settings: &LanczosSettings, m_max: usize) -> Result<EdResult> {
    problem.validate()?;
    let (pair, dimension) = solve_at(problem, problem.fock_cutoff, settings)?;
    let space = FockSpace::new(&problem.modes, problem.delta, problem.fock_cutoff);
    let psi = &pair.vector;
    let (up, down) = psi.split_at(space.block);
    let coherence = 2.0 * dot(up, down);
    let sigma_z = dot(up, up) - dot(down, down);
    let moments = (0..problem.modes.len())
        .map(|k| ModeMoments {
            mode_index: k,
            tables: moment_tables(&space, psi, k, m_max.max(1)),
        })
        .collect();

    let check_cutoff = problem.fock_cutoff + CUTOFF_CHECK_STEP;
    let check_energy = match EdProblem::dimension_for(problem.modes.len(), check_cutoff) {
        Some(d) if d <= MAX_ED_DIMENSION => Some(solve_at(problem, check_cutoff, settings)?.0.value),
        _ => None,
    };
    let cutoff_sensitive =
        check_energy.map_or(false, |e| (e - pair.value).abs() >= CUTOFF_ENERGY_TOLERANCE);

    Ok(EdResult {
        energy: pair.value,
        coherence,
        sigma_z,
        dimension,
        matvecs: pair.matvecs,
        moments,
        check_energy,
        cutoff_sensitive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense_hamiltonian(problem: &EdProblem, cutoff: usize) -> DMatrix<f64> {
        let space = FockSpace::new(&problem.modes, problem.delta, cutoff);
        let dim = space.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            space.apply(&e, &mut col);
            for i in 0..dim {
                h[(i, j)] = col[i];
            }
        }
        h
    }

    #[test]
    fn matvec_is_symmetric_and_matches_dense_ground_state() {
        let problem = EdProblem {
            modes: vec![Mode { omega: 1.0, g: 0.6 }, Mode { omega: 0.3, g: 0.2 }],
            fock_cutoff: 8,
            delta: 0.4,
        };
        let h = dense_hamiltonian(&problem, 8);
        assert_eq!(h.clone(), h.transpose());
        let lowest = SymmetricEigen::new(h).eigenvalues.min();
        let res = ed_ground(&problem).unwrap();
        assert_relative_eq!(res.energy, lowest, max_relative = 1e-10);
    }

    #[test]
    fn decoupled_spin() {
        let problem = EdProblem {
            modes: vec![Mode { omega: 0.7, g: 0.0 }, Mode { omega: 0.2, g: 0.0 }],
            fock_cutoff: 8,
            delta: 0.3,
        };
        let res = ed_ground(&problem).unwrap();
        assert_relative_eq!(res.energy, -0.15, max_relative = 1e-10);
        assert_relative_eq!(res.coherence, -1.0, max_relative = 1e-9);
        assert!(!res.cutoff_sensitive);
    }

    #[test]
    fn displaced_oscillator_without_tunneling() {
        let (omega, g) = (0.5, 0.4);
        let problem = EdProblem {
            modes: vec![Mode { omega, g }],
            fock_cutoff: 20,
            delta: 0.0,
        };
        let res = ed_ground(&problem).unwrap();
        assert_relative_eq!(res.energy, -g * g / (4.0 * omega), max_relative = 1e-10);
    }

    #[test]
    fn moments_are_normalized_and_hermitian() {
        let problem = EdProblem {
            modes: vec![Mode { omega: 1.0, g: 0.5 }, Mode { omega: 0.2, g: 0.15 }],
            fock_cutoff: 16,
            delta: 0.1,
        };
        let res = ed_ground(&problem).unwrap();
        assert!(res.sigma_z.abs() < 1e-8);
        for mm in &res.moments {
            let id = mm.channel(MomentChannel::Identity).unwrap();
            assert_relative_eq!(id.get(0, 0), 1.0, max_relative = 1e-12);
            for m in 0..id.m_max {
                for mp in 0..id.m_max {
                    assert_relative_eq!(id.get(m, mp), id.get(mp, m), epsilon = 1e-10);
                }
            }
            let sx = mm.channel(MomentChannel::SigmaX).unwrap();
            assert_relative_eq!(sx.get(0, 0), res.coherence, epsilon = 1e-12);
        }
    }

    #[test]
    fn bounds_are_enforced() {
        let mode = Mode { omega: 1.0, g: 0.1 };
        let too_many = EdProblem {
            modes: vec![mode; 5],
            fock_cutoff: 8,
            delta: 0.1,
        };
        assert!(ed_ground(&too_many).is_err());
        let low_cutoff = EdProblem {
            modes: vec![mode],
            fock_cutoff: 4,
            delta: 0.1,
        };
        assert!(ed_ground(&low_cutoff).is_err());
        let huge = EdProblem {
            modes: vec![mode; 4],
            fock_cutoff: 40,
            delta: 0.1,
        };
        assert!(huge.validate().is_err());
    }

    #[test]
    fn problem_json_round_trip() {
        let problem = EdProblem {
            modes: vec![Mode { omega: 1.0, g: 0.6847 }],
            fock_cutoff: 12,
            delta: 0.1,
        };
        assert_eq!(EdProblem::from_json(&problem.to_json().unwrap()).unwrap(), problem);
    }
}
