//! Run configuration: one JSON document, with `--section.key=value` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bath::{self, DiscretizedBath, Mode, SpectralDensity};
use crate::error::{Error, Result};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub bath: BathConfig,
    pub solver: SolverConfig,
    pub wigner: WignerConfig,
    pub thermal: ThermalConfig,
    pub ed: EdConfig,
    pub outputs: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            bath: BathConfig::default(),
            solver: SolverConfig::default(),
            wigner: WignerConfig::default(),
            thermal: ThermalConfig::default(),
            ed: EdConfig::default(),
            outputs: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub delta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { delta: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumModes {
    Count(usize),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// Single coupling strength; exclusive with `alpha_list`.
    pub alpha: Option<f64>,
    pub alpha_list: Option<Vec<f64>>,
    pub omega_c: f64,
    pub lambda: f64,
    pub num_modes: NumModes,
    /// For `auto`: the infrared edge sits below this fraction of `Δ_R`.
    pub ir_fraction: f64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            alpha_list: None,
            omega_c: 1.0,
            lambda: 1.05,
            num_modes: NumModes::Auto(AutoKeyword::Auto),
            ir_fraction: bath::DEFAULT_IR_FRACTION,
        }
    }
}

impl BathConfig {
    pub fn alphas(&self) -> Result<Vec<f64>> {
        match (self.alpha, &self.alpha_list) {
            (Some(_), Some(_)) => Err(Error::Config(
                "bath.alpha and bath.alpha_list are exclusive".into(),
            )),
            (None, None) => Err(Error::Config("set bath.alpha or bath.alpha_list".into())),
            (Some(a), None) => Ok(vec![a]),
            (None, Some(list)) if list.is_empty() => {
                Err(Error::Config("bath.alpha_list must be nonempty".into()))
            }
            (None, Some(list)) => Ok(list.clone()),
        }
    }

    pub fn discretize(&self, alpha: f64, delta: f64) -> Result<DiscretizedBath> {
        let sd = SpectralDensity::new(alpha, self.omega_c)?;
        let m = match self.num_modes {
            NumModes::Count(m) => m,
            NumModes::Auto(_) => bath::auto_num_modes(&sd, self.lambda, delta, self.ir_fraction)?,
        };
        bath::discretize(&sd, self.lambda, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_max: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            n_max: 4,
            grad_tol: d.grad_tol,
            max_iters: d.max_iters,
            restarts: d.num_restarts,
            seed: d.seed,
        }
    }
}

impl SolverConfig {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            num_restarts: self.restarts,
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    ClosedForm,
    MomentSeries,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerConfig {
    /// Mode indices (0 is the highest frequency).
    pub modes: Vec<usize>,
    /// Picks the mode whose frequency is closest to each entry.
    pub mode_omegas: Vec<f64>,
    /// Any of `diag`, `offdiag`.
    pub channels: Vec<String>,
    pub grid_points: usize,
    pub convention: ConventionChoice,
    pub m_max: usize,
}

impl Default for WignerConfig {
    fn default() -> Self {
        Self {
            modes: vec![],
            mode_omegas: vec![],
            channels: vec!["diag".into(), "offdiag".into()],
            grid_points: crate::observables::DEFAULT_GRID_POINTS,
            convention: ConventionChoice::ClosedForm,
            m_max: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    pub delta_list: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self {
            delta_list: vec![0.001, 0.01],
            t_min: 1e-7,
            t_max: 1e-1,
            points: 61,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdConfig {
    pub fock_cutoff: usize,
    /// Explicit few-mode bath; when absent the discretized bath is used.
    pub modes: Option<Vec<Mode>>,
}

impl Default for EdConfig {
    fn default() -> Self {
        Self {
            fock_cutoff: 30,
            modes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// Subset of `coherence`, `displacements`, `wigner`, `thermal`, `ed_check`;
    /// empty writes everything the subcommand produces.
    pub which: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "polaron-out".into(),
            which: vec![],
        }
    }
}

const OUTPUT_KINDS: [&str; 5] = ["coherence", "displacements", "wigner", "thermal", "ed_check"];

impl OutputConfig {
    pub fn wants(&self, kind: &str) -> bool {
        self.which.is_empty() || self.which.iter().any(|w| w == kind)
    }
}

impl RunConfig {
    /// Defaults, overlaid with `document` and then with each `(path, value)`.
    pub fn resolve(document: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(text) = document {
            let doc: Value = serde_json::from_str(text)
                .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
            if !doc.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut value, doc);
        }
        for (path, raw) in overrides {
            set_path(&mut value, path, parse_scalar(raw))?;
        }
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solver.n_max < 1 {
            return Err(Error::Config("solver.n_max must be >= 1".into()));
        }
        if let Some(bad) = self.outputs.which.iter().find(|w| !OUTPUT_KINDS.contains(&w.as_str())) {
            return Err(Error::Config(format!(
                "unknown output '{bad}', expected one of {OUTPUT_KINDS:?}"
            )));
        }
        if self.wigner.grid_points < 3 {
            return Err(Error::Config("wigner.grid_points must be >= 3".into()));
        }
        if let Some(bad) = self
            .wigner
            .channels
            .iter()
            .find(|c| !matches!(c.as_str(), "diag" | "offdiag"))
        {
            return Err(Error::Config(format!("unknown wigner channel '{bad}'")));
        }
        self.solver.optimizer().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON literal when it parses as one, otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a section", keys[..i].join("."))))?;
        let slot = obj
            .get_mut(*key)
            .ok_or_else(|| Error::Config(format!("unknown config key '{path}'")))?;
        if i + 1 == keys.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one key")
}

/// Splits `--a.b=v` / `--a.b v` overrides from the remaining arguments.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_an_alpha() {
        let c = RunConfig::resolve(None, &[]).unwrap();
        assert!(c.bath.alphas().is_err());
        let c = RunConfig::resolve(None, &[("bath.alpha".into(), "0.5".into())]).unwrap();
        assert_eq!(c.bath.alphas().unwrap(), vec![0.5]);
    }

    #[test]
    fn document_then_overrides() {
        let doc = r#"{"model": {"delta": 0.02}, "bath": {"alpha_list": [0.1, 0.2], "num_modes": 12}}"#;
        let c = RunConfig::resolve(
            Some(doc),
            &[
                ("bath.lambda".into(), "2".into()),
                ("outputs.directory".into(), "somewhere".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.model.delta, 0.02);
        assert_eq!(c.bath.lambda, 2.0);
        assert_eq!(c.bath.num_modes, NumModes::Count(12));
        assert_eq!(c.bath.omega_c, 1.0);
        assert_eq!(c.outputs.directory, "somewhere");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::resolve(None, &[("bath.alfa".into(), "0.5".into())]).is_err());
        assert!(RunConfig::resolve(Some(r#"{"bath": {"alfa": 1}}"#), &[]).is_err());
        assert!(RunConfig::resolve(Some("[1]"), &[]).is_err());
        assert!(RunConfig::resolve(None, &[("solver.n_max".into(), "0".into())]).is_err());
        assert!(RunConfig::resolve(None, &[("model.delta".into(), "abc".into())]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::resolve(None, &[("bath.alpha_list".into(), "[0.3,0.5]".into())]).unwrap();
        let again = RunConfig::resolve(Some(&c.to_pretty_json()), &[]).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn override_extraction() {
        let args = ["solve", "--config", "c.json", "--bath.alpha=0.5", "--solver.n_max", "2"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = extract_overrides(args).unwrap();
        assert_eq!(rest, ["solve", "--config", "c.json"]);
        assert_eq!(
            ov,
            vec![
                ("bath.alpha".to_string(), "0.5".to_string()),
                ("solver.n_max".to_string(), "2".to_string())
            ]
        );
        assert!(extract_overrides(vec!["--bath.alpha".into()]).is_err());
    }
}
