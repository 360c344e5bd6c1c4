//! The `polaron` command line: figure datasets from a JSON config.
//!
//! Every CSV starts with a `#` comment block holding the fully resolved
//! configuration, so outputs are self-describing. Nothing time- or
//! machine-dependent is written, and reruns reproduce files byte for byte.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::ansatz::{self, ModelParams, SilbeyHarris, VariationalState};
use crate::bath::{DiscretizedBath, Mode};
use crate::error::{Error, Result};
use crate::observables::{self, MomentChannel, WignerCurve};
use crate::optimizer::{self, SolveReport};
use crate::oracles::ed::{self, EdProblem, EdResult};
use crate::oracles::thermal::{self, ToulouseParams};

pub use config::RunConfig;
use config::ConventionChoice;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "polaron",
    version,
    about = "Multi-polaron ground states of the Ohmic spin-boson model",
    after_help = "Any config key can be overridden with --section.key=value, e.g. --bath.alpha=0.5"
)]
pub struct Cli {
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, env = "POLARON_JOBS", global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config file; unset keys take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory (same as --outputs.directory).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coherence and displacements for each alpha and N = 1..n_max.
    Solve(Common),
    /// Wigner slices of selected modes for each N.
    Wigner(Common),
    /// Exact Toulouse-line coherence vs temperature, against the one-polaron formula.
    Thermal(Common),
    /// Variational ladder against exact diagonalization on a few-mode bath.
    EdCheck(Common),
    /// Dump the discretized bath.
    Discretize(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Wigner(_) => "wigner",
            Command::Thermal(_) => "thermal",
            Command::EdCheck(_) => "ed-check",
            Command::Discretize(_) => "discretize",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Wigner(c)
            | Command::Thermal(c)
            | Command::EdCheck(c)
            | Command::Discretize(c) => c,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) | Error::DegenerateState(_) => EXIT_DOMAIN,
        Error::Convergence { .. } => EXIT_CONVERGENCE,
        Error::Parameter(_)
        | Error::Dimension { .. }
        | Error::Config(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
    }
}

/// What a subcommand wrote, and whether any point failed to converge.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub unconverged: usize,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = match config::extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli, &overrides) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            if summary.unconverged > 0 {
                eprintln!(
                    "warning: {} point(s) did not reach the gradient tolerance; see the flag column",
                    summary.unconverged
                );
                EXIT_CONVERGENCE
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli, overrides: &[(String, String)]) -> Result<RunSummary> {
    let common = cli.command.common();
    let document = match &common.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?),
        None => None,
    };
    let mut overrides = overrides.to_vec();
    if let Some(out) = &common.out {
        overrides.push(("outputs.directory".into(), out.display().to_string()));
    }
    let config = RunConfig::resolve(document.as_deref(), &overrides)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let out = Output::new(&config, cli.command.name())?;
    pool.install(|| match &cli.command {
        Command::Solve(_) => cmd_solve(&config, &out),
        Command::Wigner(_) => cmd_wigner(&config, &out),
        Command::Thermal(_) => cmd_thermal(&config, &out),
        Command::EdCheck(_) => cmd_ed_check(&config, &out),
        Command::Discretize(_) => cmd_discretize(&config, &out),
    })
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

struct Output {
    dir: PathBuf,
    preamble: String,
}

impl Output {
    fn new(config: &RunConfig, command: &str) -> Result<Self> {
        let dir = PathBuf::from(&config.outputs.directory);
        fs::create_dir_all(&dir).map_err(|e| {
            Error::Config(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        let mut preamble = format!(
            "# polaron {} {command}\n# config:\n",
            env!("CARGO_PKG_VERSION")
        );
        for line in config.to_pretty_json().lines() {
            preamble.push_str("#   ");
            preamble.push_str(line);
            preamble.push('\n');
        }
        Ok(Self { dir, preamble })
    }

    fn csv(
        &self,
        name: &str,
        meta: &[(&str, String)],
        columns: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut buf = self.preamble.clone().into_bytes();
        for (k, v) in meta {
            writeln!(buf, "# {k}: {v}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(columns).map_err(io)?;
            for row in rows {
                w.write_record(row).map_err(io)?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// One sweep point: bath, Silbey-Harris baseline and the N ladder.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaRun {
    pub alpha: f64,
    pub num_modes: usize,
    pub delta_r_sh: f64,
    pub reports: Vec<SolveReport>,
    #[serde(skip)]
    pub bath: DiscretizedBath,
}

fn solve_alpha(config: &RunConfig, alpha: f64) -> Result<AlphaRun> {
    let params = ModelParams::new(config.model.delta)?;
    let bath = config.bath.discretize(alpha, params.delta)?;
    let sh: SilbeyHarris = ansatz::sh_solve(&bath, &params)?;
    let reports =
        optimizer::solve_ladder(&bath, &params, &config.solver.optimizer(), config.solver.n_max)?;
    Ok(AlphaRun {
        alpha,
        num_modes: bath.num_modes(),
        delta_r_sh: sh.delta_r,
        reports,
        bath,
    })
}

/// Solves every alpha of the sweep in parallel; results stay in config order.
pub fn solve_sweep(config: &RunConfig) -> Result<Vec<AlphaRun>> {
    let alphas = config.bath.alphas()?;
    alphas
        .par_iter()
        .map(|&a| solve_alpha(config, a))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn flag(report: &SolveReport) -> String {
    match (&report.diagnostics, report.converged) {
        (_, true) => "ok".into(),
        (Some(d), false) => format!("unconverged: {d}"),
        (None, false) => "unconverged".into(),
    }
}

fn cmd_solve(config: &RunConfig, out: &Output) -> Result<RunSummary> {
    let runs = solve_sweep(config)?;
    let mut summary = RunSummary::default();
    let mut coherence_rows = Vec::new();
    let mut displacement_rows = Vec::new();
    for run in &runs {
        for (i, report) in run.reports.iter().enumerate() {
            if !report.converged {
                summary.unconverged += 1;
            }
            coherence_rows.push(vec![
                num(run.alpha),
                (i + 1).to_string(),
                num(report.energy),
                num(observables::coherence(&report.state)?),
                num(run.delta_r_sh),
                num(report.grad_norm),
                flag(report),
            ]);
            let state = &report.state;
            for (n, row) in state.rows().enumerate() {
                for (k, (f, mode)) in row.iter().zip(&run.bath.modes).enumerate() {
                    displacement_rows.push(vec![
                        num(run.alpha),
                        (i + 1).to_string(),
                        (n + 1).to_string(),
                        num(state.weights()[n]),
                        k.to_string(),
                        num(mode.omega),
                        num(*f),
                    ]);
                }
            }
        }
    }
    let meta = [("coherence", "<sigma_x> of the normalized state (negative)".to_string())];
    if config.outputs.wants("coherence") {
        summary.files.push(out.csv(
            "coherence.csv",
            &meta,
            &["alpha", "N", "energy", "coherence", "delta_R_SH", "grad_norm", "flag"],
            &coherence_rows,
        )?);
    }
    if config.outputs.wants("displacements") {
        summary.files.push(out.csv(
            "displacements.csv",
            &[],
            &["alpha", "N", "n", "C_n", "k", "omega_k", "f_nk"],
            &displacement_rows,
        )?);
    }
    summary.files.push(out.json("solve.json", &runs)?);
    Ok(summary)
}

fn select_modes(config: &RunConfig, bath: &DiscretizedBath) -> Result<Vec<usize>> {
    let m = bath.num_modes();
    let mut picked: Vec<usize> = config.wigner.modes.clone();
    for &target in &config.wigner.mode_omegas {
        let k = (0..m)
            .min_by(|&a, &b| {
                let da = (bath.modes[a].omega.ln() - target.ln()).abs();
                let db = (bath.modes[b].omega.ln() - target.ln()).abs();
                da.total_cmp(&db)
            })
            .expect("bath has modes");
        picked.push(k);
    }
    if picked.is_empty() {
        picked.push(0);
    }
    if let Some(&bad) = picked.iter().find(|&&k| k >= m) {
        return Err(Error::Config(format!(
            "wigner mode index {bad} out of range (bath has {m} modes)"
        )));
    }
    picked.sort_unstable();
    picked.dedup();
    Ok(picked)
}

fn cmd_wigner(config: &RunConfig, out: &Output) -> Result<RunSummary> {
    let runs = solve_sweep(config)?;
    let mut summary = RunSummary::default();
    let wc = &config.wigner;
    for (ai, run) in runs.iter().enumerate() {
        let modes = select_modes(config, &run.bath)?;
        summary.unconverged += run.reports.iter().filter(|r| !r.converged).count();
        for &k in &modes {
            let reach = run
                .reports
                .iter()
                .flat_map(|r| r.state.rows().map(move |row| row[k].abs()))
                .fold(0.0, f64::max);
            let grid = observables::symmetric_grid(1.5 * reach + 1.0, wc.grid_points);
            for (i, report) in run.reports.iter().enumerate() {
                let state = &report.state;
                let mut curves: Vec<(WignerCurve, &str)> = Vec::new();
                if wc.convention != ConventionChoice::MomentSeries {
                    for ch in &wc.channels {
                        let curve = match ch.as_str() {
                            "diag" => observables::wigner_diag(state, &run.bath, k, &grid)?,
                            _ => observables::wigner_offdiag(state, &run.bath, k, &grid)?,
                        };
                        curves.push((curve, "1/(pi <Psi|Psi>) closed form"));
                    }
                }
                if wc.convention != ConventionChoice::ClosedForm {
                    for ch in &wc.channels {
                        let (channel, note) = match ch.as_str() {
                            "diag" => (MomentChannel::SpinUp, "2/pi series; diag closed form = 1/2 of this"),
                            _ => (MomentChannel::SigmaX, "2/pi series; offdiag closed form = -1/2 of this"),
                        };
                        let table = observables::mode_moments(state, &run.bath, k, wc.m_max, channel)?;
                        curves.push((observables::wigner_from_moments(&table, &grid)?, note));
                    }
                }
                for (curve, note) in curves {
                    let label = curve.channel.label();
                    let name = format!("wigner_a{ai}_N{}_k{k}_{label}.csv", i + 1);
                    let mut meta = vec![
                        ("alpha", num(run.alpha)),
                        ("delta", num(config.model.delta)),
                        ("lambda", num(run.bath.lambda)),
                        ("M", run.num_modes.to_string()),
                        ("N", (i + 1).to_string()),
                        ("k", k.to_string()),
                        ("omega_k", num(curve.omega_k)),
                        ("channel", label.clone()),
                        ("convention", note.to_string()),
                    ];
                    if let Some(tail) = curve.series_tail {
                        meta.push(("series_tail", num(tail)));
                    }
                    let rows: Vec<Vec<String>> = curve
                        .x
                        .iter()
                        .zip(&curve.values)
                        .map(|(x, w)| vec![num(*x), num(*w)])
                        .collect();
                    summary.files.push(out.csv(&name, &meta, &["X", "W"], &rows)?);
                }
            }
        }
    }
    Ok(summary)
}

const TOULOUSE_ALPHA: f64 = 0.5;

fn cmd_thermal(config: &RunConfig, out: &Output) -> Result<RunSummary> {
    let tc = &config.thermal;
    if tc.delta_list.is_empty() {
        return Err(Error::Config("thermal.delta_list must be nonempty".into()));
    }
    if !(tc.t_min > 0.0) || !(tc.t_max > tc.t_min) || tc.points < 2 {
        return Err(Error::Config(
            "thermal grid needs 0 < t_min < t_max and points >= 2".into(),
        ));
    }
    let alphas = match (config.bath.alpha, &config.bath.alpha_list) {
        (None, None) => vec![TOULOUSE_ALPHA],
        _ => config.bath.alphas()?,
    };
    if let Some(a) = alphas.iter().find(|&&a| a != TOULOUSE_ALPHA) {
        return Err(Error::Domain(format!(
            "thermal references exist only on the Toulouse line alpha = 0.5, got alpha = {a}"
        )));
    }
    let temps: Vec<f64> = optimizer::log_grid(tc.t_min, tc.t_max, tc.points)
        .into_iter()
        .rev()
        .collect();
    let mut rows = Vec::new();
    for &delta in &tc.delta_list {
        let params = ModelParams::new(delta)?;
        let bath = config.bath.discretize(TOULOUSE_ALPHA, delta)?;
        let delta_r = ansatz::sh_solve(&bath, &params)?.delta_r;
        let values: Vec<(f64, f64)> = temps
            .par_iter()
            .map(|&t| {
                let exact = thermal::toulouse_coherence(&ToulouseParams::new(
                    delta,
                    config.bath.omega_c,
                    t,
                )?)?;
                Ok((exact, thermal::onepolaron_thermal(delta_r, delta, t)?))
            })
            .collect::<Result<_>>()?;
        for (&t, (exact, one)) in temps.iter().zip(values) {
            rows.push(vec![num(delta), num(delta_r), num(t), num(exact), num(one)]);
        }
    }
    let meta = [
        ("exact", "Toulouse-line -<sigma_x>".to_string()),
        ("one_polaron", "(delta_R/delta) tanh(delta_R/2T), delta_R from the discretized bath".to_string()),
        ("T", "units of omega_c".to_string()),
    ];
    let path = out.csv(
        "thermal.csv",
        &meta,
        &["delta", "delta_R_SH", "T", "exact", "one_polaron"],
        &rows,
    )?;
    Ok(RunSummary {
        files: vec![path],
        unconverged: 0,
    })
}

#[derive(Debug, Serialize)]
struct EdCheckRecord<'a> {
    problem: &'a EdProblem,
    ed: &'a EdResult,
    variational: Vec<&'a SolveReport>,
}

fn ed_bath(config: &RunConfig) -> Result<DiscretizedBath> {
    match &config.ed.modes {
        Some(modes) => {
            let alpha = config.bath.alpha.unwrap_or(f64::NAN);
            DiscretizedBath::from_modes(alpha, config.bath.omega_c, config.bath.lambda, modes.clone())
        }
        None => {
            let alphas = config.bath.alphas()?;
            if alphas.len() != 1 {
                return Err(Error::Config("ed-check needs a single bath.alpha".into()));
            }
            config.bath.discretize(alphas[0], config.model.delta)
        }
    }
}

fn cmd_ed_check(config: &RunConfig, out: &Output) -> Result<RunSummary> {
    let bath = ed_bath(config)?;
    let delta = config.model.delta;
    let problem = EdProblem {
        modes: bath.modes.clone(),
        fock_cutoff: config.ed.fock_cutoff,
        delta,
    };
    problem.validate()?;
    let ed = ed::ed_ground(&problem)?;

    let reports = if delta == 0.0 {
        // no tunneling: the classical displacement is exact and only N = 1 is meaningful
        let state = VariationalState::single(bath.classical_displacements())?;
        let params = ModelParams { delta: 0.0 };
        let (energy, grad) = ansatz::energy_and_gradient(&state, &bath, &params)?;
        vec![SolveReport {
            state,
            energy,
            grad_norm: grad.max_norm(),
            iterations: 0,
            converged: true,
            energy_history_per_n: vec![energy],
            crossover: None,
            diagnostics: None,
            trace: vec![],
        }]
    } else {
        let params = ModelParams::new(delta)?;
        optimizer::solve_ladder(&bath, &params, &config.solver.optimizer(), config.solver.n_max)?
    };

    let mut summary = RunSummary::default();
    let mut rows = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        if !r.converged {
            summary.unconverged += 1;
        }
        let gap = (r.energy - ed.energy) / ed.energy.abs().max(f64::MIN_POSITIVE);
        rows.push(vec![
            (i + 1).to_string(),
            num(r.energy),
            num(ed.energy),
            num(observables::coherence(&r.state)?),
            num(ed.coherence),
            num(gap),
            flag(r),
        ]);
    }
    let meta = [
        ("reference", "exact diagonalization, truncated Fock basis".to_string()),
        ("fock_cutoff", problem.fock_cutoff.to_string()),
        ("ed_dimension", ed.dimension.to_string()),
        ("ed_cutoff_sensitive", ed.cutoff_sensitive.to_string()),
    ];
    if config.outputs.wants("ed_check") {
        summary.files.push(out.csv(
            "ed_check.csv",
            &meta,
            &["N", "E_var", "E_ed", "coherence_var", "coherence_ed", "gap_rel", "flag"],
            &rows,
        )?);
    }
    let record = EdCheckRecord {
        problem: &problem,
        ed: &ed,
        variational: reports.iter().collect(),
    };
    summary.files.push(out.json("ed_check.json", &record)?);
    Ok(summary)
}

fn cmd_discretize(config: &RunConfig, out: &Output) -> Result<RunSummary> {
    let alphas = config.bath.alphas()?;
    let mut summary = RunSummary::default();
    for (ai, &alpha) in alphas.iter().enumerate() {
        let bath = config.bath.discretize(alpha, config.model.delta)?;
        let rows: Vec<Vec<String>> = bath
            .modes
            .iter()
            .zip(bath.classical_displacements())
            .enumerate()
            .map(|(k, (Mode { omega, g }, f))| vec![k.to_string(), num(*omega), num(*g), num(f)])
            .collect();
        let stem = if alphas.len() == 1 {
            "bath".to_string()
        } else {
            format!("bath_a{ai}")
        };
        let meta = [("alpha", num(alpha)), ("M", bath.num_modes().to_string())];
        summary
            .files
            .push(out.csv(&format!("{stem}.csv"), &meta, &["k", "omega", "g", "f_classical"], &rows)?);
        let json_path = out.dir.join(format!("{stem}.json"));
        fs::write(&json_path, bath.to_json()? + "\n")?;
        summary.files.push(json_path);
    }
    Ok(summary)
}
