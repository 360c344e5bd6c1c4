//! Energy minimization at fixed polaron number, and growth `N → N+1` seeded
//! with antipolarons.
//!
//! A new polaron starts as a copy of the main one with the sign flipped below
//! a crossover frequency `ω_x`. Several crossovers, log-spaced between `Δ_R`
//! and `Δ`, are tried independently and the lowest re-optimized energy wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{self, ModelParams, PairKernels, VariationalState};
use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};
use crate::lbfgs::{self, IterationRecord, LbfgsSettings, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Crossover seeds tried per growth step when no explicit grid is given.
    pub num_restarts: usize,
    /// Explicit crossover frequencies; `None` means log-spaced in `[Δ_R, Δ]`.
    pub crossover_grid: Option<Vec<f64>>,
    /// Relative weight of a freshly seeded polaron, `C_{N+1} = seed_weight · C_1`.
    pub seed_weight: f64,
    /// Relative jitter applied to seeded displacements.
    pub seed_jitter: f64,
    pub seed: u64,
    pub memory: usize,
    /// Rows whose share of the norm falls below this are dropped.
    pub prune_tol: f64,
    pub record_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 50_000,
            num_restarts: 4,
            crossover_grid: None,
            seed_weight: 0.05,
            seed_jitter: 1e-3,
            seed: 0,
            memory: 20,
            prune_tol: 1e-10,
            record_trace: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::Parameter("grad_tol must be > 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Parameter("max_iters must be >= 1".into()));
        }
        if self.num_restarts < 1 && self.crossover_grid.is_none() {
            return Err(Error::Parameter("num_restarts must be >= 1".into()));
        }
        if let Some(grid) = &self.crossover_grid {
            if grid.is_empty() || grid.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::Parameter(
                    "crossover_grid must hold positive frequencies".into(),
                ));
            }
        }
        if self.memory < 1 {
            return Err(Error::Parameter("memory must be >= 1".into()));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsSettings {
        LbfgsSettings {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            memory: self.memory,
            ..LbfgsSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub state: VariationalState,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best energy reached at each polaron number so far, `N = 1, 2, ...`.
    pub energy_history_per_n: Vec<f64>,
    /// Crossover frequency of the winning seed, for grown states.
    pub crossover: Option<f64>,
    /// Why the minimizer stopped, when it did not converge.
    pub diagnostics: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
}

impl From<IterationRecord> for TracePoint {
    fn from(r: IterationRecord) -> Self {
        Self {
            iter: r.iteration,
            energy: r.value,
            grad_norm: r.grad_norm,
        }
    }
}

impl SolveReport {
    pub fn num_polarons(&self) -> usize {
        self.state.num_polarons()
    }

    /// Per-iteration trace as CSV with columns `iter,energy,grad_norm`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,energy,grad_norm\n");
        for p in &self.trace {
            out.push_str(&format!("{},{:.17e},{:.17e}\n", p.iter, p.energy, p.grad_norm));
        }
        out
    }
}

/// Iterations between refreshes of the diagonal preconditioner.
/// Largest factor by which the estimated energy noise is widened on a stall.
const MAX_NOISE_WIDENING: f64 = 1e4;
const PASS_ITERATIONS: usize = 2_000;

/// `1/√|H_ii|` from central differences of the analytic gradient, in the layout
/// of [`VariationalState::to_params`]. Curvature spans many decades (it goes as
/// `C_n² (ω_k + Δ_R)` for displacements), which plain L-BFGS handles badly.
fn diagonal_scale(state: &VariationalState, bath: &DiscretizedBath, params: &ModelParams) -> Result<Vec<f64>> {
    let (n, m) = (state.num_polarons(), state.num_modes());
    let mut x = state.to_params();
    let mut curvature = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x0 = x[i];
        let h = 1e-6 * x0.abs().max(1.0);
        x[i] = x0 + h;
        let gp = ansatz::gradient(&VariationalState::from_params(&x, n, m)?, bath, params)?;
        x[i] = x0 - h;
        let gm = ansatz::gradient(&VariationalState::from_params(&x, n, m)?, bath, params)?;
        x[i] = x0;
        let flat = |g: ansatz::Gradient| g.into_flat()[i];
        curvature[i] = ((flat(gp) - flat(gm)) / (2.0 * h)).abs();
    }
    let top = curvature.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-12 * top).max(f64::MIN_POSITIVE);
    Ok(curvature.iter().map(|c| 1.0 / c.max(floor).sqrt()).collect())
}

/// Rounding noise of the energy: sums over `N²M` terms of the size of the
/// individual contributions, accumulated like a random walk.
fn energy_noise(state: &VariationalState, bath: &DiscretizedBath, params: &ModelParams) -> Result<f64> {
    let t = ansatz::energy_terms(state, bath, params)?;
    let magnitude = (t.tunneling.abs() + t.oscillator.abs() + t.coupling.abs()) / t.norm;
    let count = (state.num_polarons().pow(2) * state.num_modes()) as f64;
    Ok(4.0 * f64::EPSILON * count.sqrt() * magnitude)
}

/// Minimizes the energy over all weights and displacements at fixed `N`.
pub fn optimize(
    initial: &VariationalState,
    bath: &DiscretizedBath,
    params: &ModelParams,
    config: &OptimizerConfig,
) -> Result<SolveReport> {
    config.validate()?;
    initial.check_bath(bath)?;
    let start = initial.canonical()?;
    let initial_energy = ansatz::energy(&start, bath, params)?;
    let (n, m) = (start.num_polarons(), start.num_modes());
    let start_grad = ansatz::gradient(&start, bath, params)?.max_norm();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut best = (start.clone(), initial_energy, start_grad);
    let mut termination = Termination::Converged;
    let mut stalled = false;
    let mut widening = 1.0;
    // Runs in passes: each pass refreshes the preconditioner and restarts from
    // the renormalized state (E is invariant under C → sC, so renormalizing
    // rescales the weight gradient by 1/s).
    while best.2 > config.grad_tol && iterations < config.max_iters {
        let scale = diagonal_scale(&best.0, bath, params)?;
        let noise = widening * energy_noise(&best.0, bath, params)?;
        let settings = LbfgsSettings {
            max_iters: PASS_ITERATIONS.min(config.max_iters - iterations),
            value_noise: noise,
            ..config.lbfgs()
        };
        let outcome = lbfgs::minimize_scaled(
            best.0.to_params(),
            &scale,
            &settings,
            |x, grad| {
                let state = VariationalState::from_params(x, n, m).map_err(|e| e.to_string())?;
                let (e, g) =
                    ansatz::energy_and_gradient(&state, bath, params).map_err(|e| e.to_string())?;
                grad.copy_from_slice(&g.into_flat());
                Ok(e)
            },
            |record| {
                if config.record_trace {
                    trace.push(TracePoint::from(IterationRecord {
                        iteration: iterations + record.iteration,
                        ..record
                    }));
                }
            },
        );
        iterations += outcome.iterations;
        termination = outcome.termination.clone();

        let improved = match VariationalState::from_params(&outcome.x, n, m)?.canonical() {
            Ok(state) => {
                let (e, g) = ansatz::energy_and_gradient(&state, bath, params)?;
                let g = g.max_norm();
                // equal up to noise still counts when the gradient dropped
                let rounding = (8.0 * f64::EPSILON * best.1.abs()).max(noise);
                if e < best.1 || (e <= best.1 + rounding && g < best.2) {
                    best = (state, e, g);
                    true
                } else {
                    false
                }
            }
            Err(_) => false,
        };
        if matches!(termination, Termination::Evaluation(_)) {
            break;
        }
        if outcome.iterations == 0 || !improved {
            // energy differences are unresolvable here; let the slope
            // conditions alone drive the last stretch
            if widening < MAX_NOISE_WIDENING {
                widening *= 100.0;
                continue;
            }
            stalled = true;
            break;
        }
    }
    let (state, energy, grad_norm) = best;

    // `best` moves downhill up to the energy noise floor
    let converged = grad_norm <= config.grad_tol;
    let diagnostics = if converged {
        None
    } else if let Termination::Evaluation(msg) = &termination {
        Some(format!("evaluation failed: {msg}"))
    } else if stalled {
        Some(format!("no further decrease at gradient {grad_norm:e}"))
    } else {
        Some(format!(
            "iteration cap {} reached with gradient {grad_norm:e}",
            config.max_iters
        ))
    };

    let mut history = Vec::with_capacity(n);
    history.resize(n, energy);
    Ok(SolveReport {
        state,
        energy,
        grad_norm,
        iterations,
        converged,
        energy_history_per_n: history,
        crossover: None,
        diagnostics,
        trace,
    })
}

/// Renormalized tunneling implied by the main polaron, `Δ exp(−2 Σ_k (f⁽¹⁾_k)²)`.
pub fn main_polaron_delta_r(state: &VariationalState, params: &ModelParams) -> f64 {
    let sq: f64 = state.row(0).iter().map(|f| f * f).sum();
    params.delta * (-2.0 * sq).exp()
}

/// `count` log-spaced frequencies covering `[low, high]`, descending.
pub fn log_grid(low: f64, high: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![(low * high).sqrt()];
    }
    let (a, b) = (high.ln(), low.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn crossover_candidates(report: &SolveReport, params: &ModelParams, config: &OptimizerConfig) -> Vec<f64> {
    match &config.crossover_grid {
        Some(grid) => grid.clone(),
        None => {
            let delta_r = main_polaron_delta_r(&report.state, params).min(params.delta);
            log_grid(delta_r, params.delta, config.num_restarts)
        }
    }
}

/// Antipolaron seed: `f⁽¹⁾_k · sign(ω_k − ω_x)`.
pub fn antipolaron_seed(main: &[f64], bath: &DiscretizedBath, crossover: f64) -> Vec<f64> {
    main.iter()
        .zip(bath.omegas())
        .map(|(f, w)| if w > crossover { *f } else { -*f })
        .collect()
}

/// Adds one polaron and re-optimizes jointly. The returned energy is never
/// above the input energy.
pub fn grow(
    report: &SolveReport,
    bath: &DiscretizedBath,
    params: &ModelParams,
    config: &OptimizerConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let state = &report.state;
    state.check_bath(bath)?;
    let n = state.num_polarons();
    let lead = state.weights()[0];
    let crossovers = crossover_candidates(report, params, config);

    let candidates: Vec<Result<SolveReport>> = crossovers
        .par_iter()
        .enumerate()
        .map(|(i, &wx)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((n as u64) << 32) ^ i as u64);
            let mut row = antipolaron_seed(state.row(0), bath, wx);
            if config.seed_jitter > 0.0 {
                for f in row.iter_mut() {
                    *f *= 1.0 + config.seed_jitter * rng.gen_range(-1.0..1.0);
                }
            }
            let seeded = state.with_polaron(config.seed_weight * lead, &row)?;
            let mut out = optimize(&seeded, bath, params, config)?;
            out.crossover = Some(wx);
            Ok(out)
        })
        .collect();

    let mut best: Option<SolveReport> = None;
    let mut first_error = None;
    for candidate in candidates {
        match candidate {
            Ok(c) => {
                // strict comparison keeps the earliest index on ties
                if best.as_ref().map_or(true, |b| c.energy < b.energy) {
                    best = Some(c);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }

    let mut history = report.energy_history_per_n.clone();
    let mut next = match best {
        Some(b) if b.energy <= report.energy => b,
        _ => {
            // fallback: keep the old state, padded with an idle polaron
            let padded = state.with_polaron(0.0, state.row(0))?;
            SolveReport {
                state: padded,
                energy: report.energy,
                grad_norm: report.grad_norm,
                iterations: 0,
                converged: report.converged,
                energy_history_per_n: Vec::new(),
                crossover: None,
                diagnostics: Some(match first_error {
                    Some(e) => format!("all growth candidates failed: {e}"),
                    None => "no growth candidate lowered the energy".into(),
                }),
                trace: Vec::new(),
            }
        }
    };
    history.push(next.energy);
    next.energy_history_per_n = history;
    Ok(next)
}

/// Share of `⟨Ψ|Ψ⟩` and of the tunneling sum carried by each polaron row.
pub fn row_contributions(state: &VariationalState) -> Vec<f64> {
    let kernels = PairKernels::new(state);
    let c = state.weights();
    let n = state.num_polarons();
    let norm = state.norm();
    (0..n)
        .map(|a| {
            let share: f64 = (0..n)
                .map(|b| {
                    let k = kernels.minus[a * n + b].max(kernels.plus[a * n + b]);
                    (c[a] * c[b]).abs() * k
                })
                .sum();
            2.0 * share / norm
        })
        .collect()
}

/// Drops rows whose contribution is below `tol`, keeping at least one.
pub fn prune(state: &VariationalState, tol: f64) -> Result<VariationalState> {
    let mut current = state.clone();
    loop {
        if current.num_polarons() == 1 {
            return Ok(current);
        }
        let shares = row_contributions(&current);
        let weakest = shares
            .iter()
            .enumerate()
            .skip(1)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, s)| (i, *s));
        match weakest {
            Some((i, s)) if s < tol => current = current.without_polaron(i)?,
            _ => return Ok(current),
        }
    }
}

/// Solves `N = 1 ..= n_max`, starting from the Silbey-Harris state and growing
/// one polaron at a time. Entry `i` holds the `N = i + 1` result.
pub fn solve_ladder(
    bath: &DiscretizedBath,
    params: &ModelParams,
    config: &OptimizerConfig,
    n_max: usize,
) -> Result<Vec<SolveReport>> {
    if n_max < 1 {
        return Err(Error::Parameter("n_max must be >= 1".into()));
    }
    let sh = ansatz::sh_solve(bath, params)?;
    let mut reports = vec![optimize(&sh.state(), bath, params, config)?];
    while reports.len() < n_max {
        let next = grow(reports.last().expect("non-empty"), bath, params, config)?;
        reports.push(next);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{discretize, SpectralDensity};

    fn small_bath(alpha: f64) -> DiscretizedBath {
        discretize(&SpectralDensity::new(alpha, 1.0).unwrap(), 2.0, 8).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::default();
        assert!(c.validate().is_ok());
        c.grad_tol = 0.0;
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            crossover_grid: Some(vec![]),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e-2, 3);
        assert!((g[0] - 1e-2).abs() < 1e-15 && (g[1] - 1e-3).abs() < 1e-15 && (g[2] - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn seed_flips_below_crossover() {
        let bath = small_bath(0.5);
        let main = bath.classical_displacements();
        let seed = antipolaron_seed(&main, &bath, 0.05);
        for ((s, f), w) in seed.iter().zip(&main).zip(bath.omegas()) {
            assert_eq!(*s, if w > 0.05 { *f } else { -*f });
        }
    }

    #[test]
    fn optimize_from_zero_reaches_sh_point() {
        let bath = small_bath(0.4);
        let params = ModelParams::new(0.1).unwrap();
        let sh = ansatz::sh_solve(&bath, &params).unwrap();
        let report = optimize(
            &VariationalState::undisplaced(bath.num_modes()).unwrap(),
            &bath,
            &params,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(report.converged, "{report:?}");
        let dr = main_polaron_delta_r(&report.state, &params);
        assert!((dr - sh.delta_r).abs() <= 1e-6 * sh.delta_r);
        assert!(report.state.weights()[0] > 0.0);
    }

    #[test]
    fn grow_never_raises_energy_and_prune_drops_idle_rows() {
        let bath = small_bath(0.5);
        let params = ModelParams::new(0.05).unwrap();
        let config = OptimizerConfig::default();
        let ladder = solve_ladder(&bath, &params, &config, 3).unwrap();
        for pair in ladder.windows(2) {
            assert!(pair[1].energy <= pair[0].energy);
        }
        let last = ladder.last().unwrap();
        assert_eq!(last.energy_history_per_n.len(), 3);

        let padded = ladder[0].state.with_polaron(0.0, ladder[0].state.row(0)).unwrap();
        let pruned = prune(&padded, 1e-10).unwrap();
        assert_eq!(pruned.num_polarons(), 1);
        let e0 = ansatz::energy(&padded, &bath, &params).unwrap();
        let e1 = ansatz::energy(&pruned, &bath, &params).unwrap();
        assert!((e0 - e1).abs() < 1e-9);
    }

    #[test]
    fn trace_is_recorded_on_request() {
        let bath = small_bath(0.3);
        let params = ModelParams::new(0.1).unwrap();
        let config = OptimizerConfig {
            record_trace: true,
            ..Default::default()
        };
        let report = optimize(
            &VariationalState::undisplaced(bath.num_modes()).unwrap(),
            &bath,
            &params,
            &config,
        )
        .unwrap();
        assert!(!report.trace.is_empty());
        let csv = report.trace_csv();
        assert!(csv.starts_with("iter,energy,grad_norm\n0,"));
        assert!(report.trace.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-15));
    }
}
