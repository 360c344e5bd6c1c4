use std::path::Path;
use std::process::{Command, Output};

fn polaron(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec![args[0], "--out", dir.to_str().unwrap()];
    all.extend(&args[1..]);
    Command::new(env!("CARGO_BIN_EXE_polaron"))
        .args(&all)
        .env("POLARON_JOBS", "1")
        .output()
        .expect("binary runs")
}

/// Data rows of a CSV written by the CLI, header line first.
fn table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn discretize_writes_bath_with_config_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = polaron(dir.path(), &["discretize", "--bath.alpha=0.5", "--bath.num_modes=5", "--bath.lambda=2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("bath.csv")).unwrap();
    assert!(text.starts_with("# polaron"));
    assert!(text.contains("\"lambda\": 2.0"));
    let rows = table(&dir.path().join("bath.csv"));
    assert_eq!(rows[0], ["k", "omega", "g", "f_classical"]);
    let omega = column(&rows, "omega");
    let g = column(&rows, "g");
    assert_eq!(omega.len(), 5);
    // top shell [1/2, 1]: g² = α(b² − a²), ω = (2α/3)(b³ − a³)/g²
    assert!((g[0] * g[0] - 0.5 * 0.75).abs() < 1e-14);
    assert!((omega[0] - 7.0 / 9.0).abs() < 1e-14);
    assert!(omega.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn solve_reports_every_rung() {
    let dir = tempfile::tempdir().unwrap();
    let out = polaron(
        dir.path(),
        &["solve", "--bath.alpha=0.5", "--bath.num_modes=20", "--bath.lambda=1.5", "--model.delta=0.05", "--solver.n_max=3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&dir.path().join("coherence.csv"));
    let n = column(&rows, "N");
    assert_eq!(n, [1.0, 2.0, 3.0]);
    let energy = column(&rows, "energy");
    assert!(energy.windows(2).all(|w| w[1] <= w[0]));
    let coherence = column(&rows, "coherence");
    // N = 1 is the Silbey-Harris state: ⟨σx⟩ = −Δ_R/Δ
    let dr = column(&rows, "delta_R_SH")[0];
    assert!((coherence[0] + dr / 0.05).abs() < 1e-6);
    assert!(coherence.iter().all(|c| (-1.0..0.0).contains(c)));

    let disp = table(&dir.path().join("displacements.csv"));
    assert_eq!(disp.len() - 1, 20 * (1 + 2 + 3));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    let runs = json.as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["reports"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"bath": {"alpha": 0.3, "num_modes": 4, "lambda": 3.0}}"#).unwrap();
    let out = polaron(dir.path(), &["discretize", "--config", config.to_str().unwrap(), "--bath.num_modes", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&dir.path().join("bath.csv"));
    assert_eq!(rows.len() - 1, 6);
    let g = column(&rows, "g");
    let top = 0.3 * (1.0 - 1.0 / 9.0);
    assert!((g[0] * g[0] - top).abs() < 1e-14);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| polaron(dir.path(), args).status.code();
    assert_eq!(code(&["discretize", "--bath.alpha=0.5", "--bath.nonsense=1"]), Some(2));
    assert_eq!(code(&["discretize", "--bath.alpha=0.5", "--bath.alpha_list=[0.3]"]), Some(2));
    assert_eq!(code(&["thermal", "--thermal.delta_list=[]"]), Some(2));
    assert_eq!(code(&["thermal", "--bath.alpha=0.7"]), Some(3));
    assert_eq!(code(&["discretize", "--bath.alpha=0.5", "--bath.lambda=0.9", "--bath.num_modes=3"]), Some(2));
    assert_eq!(
        code(&["solve", "--bath.alpha=0.5", "--bath.num_modes=20", "--bath.lambda=1.5", "--solver.max_iters=1"]),
        Some(4)
    );
}

#[test]
fn thermal_curve_stays_above_one_polaron() {
    let dir = tempfile::tempdir().unwrap();
    let out = polaron(dir.path(), &["thermal", "--thermal.delta_list=[0.01]", "--thermal.points=9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&dir.path().join("thermal.csv"));
    let exact = column(&rows, "exact");
    let one = column(&rows, "one_polaron");
    assert_eq!(exact.len(), 9);
    assert!(exact.iter().zip(&one).all(|(e, o)| e > o));
}

#[test]
fn ed_check_without_tunneling_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = polaron(
        dir.path(),
        &["ed-check", "--model.delta=0", "--ed.modes=[{\"omega\":1.0,\"g\":0.4}]", "--ed.fock_cutoff=12"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = table(&dir.path().join("ed_check.csv"));
    let (var, ed) = (column(&rows, "E_var")[0], column(&rows, "E_ed")[0]);
    assert!((var + 0.04).abs() < 1e-12 && (ed + 0.04).abs() < 1e-10);
}

#[test]
fn wigner_files_per_rung_and_channel() {
    let dir = tempfile::tempdir().unwrap();
    let out = polaron(
        dir.path(),
        &[
            "wigner",
            "--bath.alpha=0.5",
            "--bath.num_modes=10",
            "--bath.lambda=2",
            "--solver.n_max=2",
            "--wigner.modes=[0]",
            "--wigner.grid_points=11",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for n in 1..=2 {
        for label in ["diag", "offdiag"] {
            let rows = table(&dir.path().join(format!("wigner_a0_N{n}_k0_{label}.csv")));
            assert_eq!(rows[0], ["X", "W"]);
            let x = column(&rows, "X");
            assert_eq!(x.len(), 11);
            assert!((x[0] + x[10]).abs() < 1e-15);
        }
    }
}
