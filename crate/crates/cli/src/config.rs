use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slowfast::models::epidemic::Secant;
use slowfast::{ChemostatParams, CmOptions, EpidemicParams, HeteroclinicSettings, Parameterization, Tolerance, VerifySettings};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Chemostat,
    Epidemic,
    Toy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyParams {
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub k: f64,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default = "d_m_orbits")]
    pub m_orbits: usize,
    #[serde(default = "d_d_i")]
    pub d_i: f64,
    #[serde(default = "d_d_n")]
    pub d_n: f64,
    pub delta: Option<f64>,
    pub seed_max: Option<f64>,
    #[serde(default = "d_t_horizon")]
    pub t_horizon: f64,
    #[serde(default = "d_i_stop")]
    pub i_stop: f64,
    #[serde(default = "d_secant")]
    pub secant: Secant,
    /// Load a previously written table instead of building one.
    pub file: Option<PathBuf>,
}

fn d_m_orbits() -> usize {
    200
}
fn d_d_i() -> f64 {
    0.05
}
fn d_d_n() -> f64 {
    1.0
}
fn d_t_horizon() -> f64 {
    1e6
}
fn d_i_stop() -> f64 {
    1e-8
}
fn d_secant() -> Secant {
    Secant::SameColumn
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            m_orbits: d_m_orbits(),
            d_i: d_d_i(),
            d_n: d_d_n(),
            delta: None,
            seed_max: None,
            t_horizon: d_t_horizon(),
            i_stop: d_i_stop(),
            secant: d_secant(),
            file: None,
        }
    }
}

impl TableConfig {
    pub fn options(&self) -> CmOptions {
        CmOptions {
            delta: self.delta,
            seed_max: self.seed_max,
            m_orbits: self.m_orbits,
            t_horizon: self.t_horizon,
            d_i: self.d_i,
            d_n: self.d_n,
            i_stop: self.i_stop,
            secant: self.secant,
            ..CmOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub chemostat: Option<ChemostatParams>,
    pub epidemic: Option<EpidemicParams>,
    pub table: Option<TableConfig>,
    pub toy: Option<ToyParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub window: (f64, f64),
    #[serde(default = "d_n_grid")]
    pub n_grid: usize,
    pub parameterization: Option<Parameterization>,
}

fn d_n_grid() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_rel")]
    pub rel: f64,
    #[serde(default = "d_abs")]
    pub abs: f64,
    pub root_tol: Option<f64>,
    #[serde(default = "d_lambda_tol")]
    pub lambda_tol: f64,
    pub delta: Option<f64>,
    pub b_stop: Option<f64>,
    pub delta1: Option<f64>,
}

fn d_rel() -> f64 {
    1e-11
}
fn d_abs() -> f64 {
    1e-13
}
fn d_lambda_tol() -> f64 {
    1e-4
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rel: d_rel(),
            abs: d_abs(),
            root_tol: None,
            lambda_tol: d_lambda_tol(),
            delta: None,
            b_stop: None,
            delta1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicRunConfig {
    pub epsilon: f64,
    /// (S, I, N)
    pub initial: [f64; 3],
    #[serde(default = "d_section_i")]
    pub section_i: f64,
    #[serde(default = "d_run_t_max")]
    pub t_max: f64,
}

fn d_section_i() -> f64 {
    0.5
}
fn d_run_t_max() -> f64 {
    3e6
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_xtol")]
    pub xtol: f64,
    #[serde(default)]
    pub epidemic_runs: Vec<EpidemicRunConfig>,
}

fn d_max_iter() -> usize {
    40
}
fn d_xtol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scan: ScanConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Reserved; the numerics are deterministic and do not draw random numbers.
    #[serde(default)]
    pub seed: u64,
}

fn bad(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config { path: Some(path.to_string()), message: message.into() }
}

impl RunConfig {
    pub fn from_value(value: toml::Value) -> Result<Self, CliError> {
        let text = toml::to_string(&value).map_err(|e| CliError::Config { path: None, message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config { path: (path != ".").then_some(path), message: e.into_inner().message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config { path: None, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::from_toml(&text)
    }

    pub fn load_value(path: &Path) -> Result<toml::Value, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config { path: None, message: format!("cannot read {}: {e}", path.display()) })?;
        text.parse::<toml::Value>().map_err(|e| CliError::Config { path: None, message: e.to_string() })
    }

    fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(bad(&format!("model.{key}"), format!("model kind requires a [model.{key}] block")))
            }
        };
        match m.kind {
            ModelKind::Chemostat => {
                need(m.chemostat.is_some(), "chemostat")?;
                m.chemostat.unwrap().validate().map_err(|e| bad("model.chemostat", e.to_string()))?;
            }
            ModelKind::Epidemic => {
                need(m.epidemic.is_some(), "epidemic")?;
                m.epidemic.unwrap().validate().map_err(|e| bad("model.epidemic", e.to_string()))?;
                if let Some(t) = &m.table {
                    if t.m_orbits < 50 {
                        return Err(bad("model.table.m_orbits", "at least 50 orbits are needed"));
                    }
                    for (k, v) in [("d_i", t.d_i), ("d_n", t.d_n), ("t_horizon", t.t_horizon), ("i_stop", t.i_stop)] {
                        if !(v > 0.0) {
                            return Err(bad(&format!("model.table.{k}"), "must be positive"));
                        }
                    }
                }
            }
            ModelKind::Toy => {
                need(m.toy.is_some(), "toy")?;
                if !(m.toy.unwrap().half_width > 0.0) {
                    return Err(bad("model.toy.half_width", "must be positive"));
                }
            }
        }
        let (lo, hi) = self.scan.window;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(bad("scan.window", format!("window [{lo}, {hi}] is empty")));
        }
        if self.scan.n_grid < 8 {
            return Err(bad("scan.n_grid", "at least 8 grid points are needed"));
        }
        let t = &self.tolerances;
        for (k, v) in [("rel", Some(t.rel)), ("abs", Some(t.abs)), ("lambda_tol", Some(t.lambda_tol)), ("root_tol", t.root_tol), ("delta", t.delta), ("b_stop", t.b_stop), ("delta1", t.delta1)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad(&format!("tolerances.{k}"), "must be positive"));
                }
            }
        }
        let eps = &self.verify.epsilons;
        if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(bad("verify.epsilons", "values must be positive"));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("verify.epsilons", "list must be sorted descending"));
        }
        if !self.verify.epidemic_runs.is_empty() && m.kind != ModelKind::Epidemic {
            return Err(bad("verify.epidemic_runs", "only valid for the epidemic model"));
        }
        for (k, r) in self.verify.epidemic_runs.iter().enumerate() {
            if !(r.epsilon > 0.0 && r.initial[1] > 0.0 && r.section_i > 0.0 && r.t_max > 0.0) {
                return Err(bad(&format!("verify.epidemic_runs[{k}]"), "epsilon, initial I, section_i and t_max must be positive"));
            }
        }
        Ok(())
    }

    /// Fills every default so the manifest describes the run completely.
    fn resolved(mut self) -> Self {
        if self.scan.parameterization.is_none() {
            self.scan.parameterization = Some(match self.model.kind {
                ModelKind::Chemostat => Parameterization::PeakHeight,
                _ => Parameterization::AlphaPoint,
            });
        }
        if self.model.kind == ModelKind::Epidemic && self.model.table.is_none() {
            self.model.table = Some(TableConfig::default());
        }
        if let (ModelKind::Epidemic, Some(p), Some(t)) = (self.model.kind, self.model.epidemic, self.model.table.as_mut()) {
            t.delta.get_or_insert(1e-4 * p.n_max);
            t.seed_max.get_or_insert(1.1 * p.n_max);
        }
        self
    }

    pub fn parameterization(&self) -> Parameterization {
        self.scan.parameterization.unwrap_or(Parameterization::AlphaPoint)
    }

    pub fn heteroclinic_settings(&self) -> HeteroclinicSettings {
        HeteroclinicSettings {
            tol: Tolerance { rel: self.tolerances.rel, abs: self.tolerances.abs },
            delta: self.tolerances.delta,
            b_stop: self.tolerances.b_stop,
            ..HeteroclinicSettings::default()
        }
    }

    pub fn verify_settings(&self) -> VerifySettings {
        VerifySettings {
            delta1: self.tolerances.delta1,
            max_iter: self.verify.max_iter,
            xtol: self.verify.xtol,
            ..VerifySettings::default()
        }
    }
}

/// Sets a dotted key path (e.g. `model.chemostat.response.a`) in a TOML tree.
pub fn set_path(root: &mut toml::Value, path: &str, value: f64) -> Result<(), CliError> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| bad(path, format!("`{}` is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            if !table.contains_key(*key) {
                return Err(bad(path, "no such key in the config"));
            }
            table.insert(key.to_string(), toml::Value::Float(value));
            return Ok(());
        }
        node = table.get_mut(*key).ok_or_else(|| bad(path, format!("missing `{key}`")))?;
    }
    Err(bad(path, "empty key path"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
[model]
kind = "chemostat"
[model.chemostat]
s0 = 10.0
m = 1.0
rho = 1.0
c = 1.0
response = { type = "holling_ii", a = 1.5, b = 3.0 }
[scan]
window = [5.0, 9.5]
"#;

    #[test]
    fn defaults_are_filled() {
        let c = RunConfig::from_toml(MIN).unwrap();
        assert_eq!(c.scan.n_grid, 32);
        assert_eq!(c.scan.parameterization, Some(Parameterization::PeakHeight));
        assert!(c.verify.epsilons.is_empty());
    }

    #[test]
    fn errors_carry_paths() {
        let e = RunConfig::from_toml(&MIN.replace("rho = 1.0", "rho = \"x\"")).unwrap_err();
        assert!(matches!(e, CliError::Config { path: Some(ref p), .. } if p == "model.chemostat.rho"), "{e:?}");
        let e = RunConfig::from_toml(&MIN.replace("window = [5.0, 9.5]", "window = [5.0, 9.5]\nbogus = 1")).unwrap_err();
        assert!(matches!(e, CliError::Config { path: Some(ref p), .. } if p.starts_with("scan")), "{e:?}");
        let e = RunConfig::from_toml(&MIN.replace("[5.0, 9.5]", "[9.5, 5.0]")).unwrap_err();
        assert!(matches!(e, CliError::Config { path: Some(ref p), .. } if p == "scan.window"), "{e:?}");
        let e = RunConfig::from_toml(&format!("{MIN}\n[verify]\nepsilons = [0.05, 0.1]\n")).unwrap_err();
        assert!(matches!(e, CliError::Config { path: Some(ref p), .. } if p == "verify.epsilons"), "{e:?}");
        let e = RunConfig::from_toml(&MIN.replace("kind = \"chemostat\"", "kind = \"toy\"")).unwrap_err();
        assert!(matches!(e, CliError::Config { path: Some(ref p), .. } if p == "model.toy"), "{e:?}");
    }

    #[test]
    fn dotted_set() {
        let mut v: toml::Value = MIN.parse().unwrap();
        set_path(&mut v, "model.chemostat.response.a", 2.0).unwrap();
        let c = RunConfig::from_value(v.clone()).unwrap();
        assert_eq!(c.model.chemostat.unwrap().response, slowfast::Response::HollingII { a: 2.0, b: 3.0 });
        assert!(set_path(&mut v, "model.chemostat.nope", 1.0).is_err());
    }
}
