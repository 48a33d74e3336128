use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slowfast::analysis::{find_candidates, scan_chi, Analyzer, CandidateOptions, CycleCandidate, Scan};
use slowfast::characteristics::{self, LambdaForm};
use slowfast::models::chemostat::{chemostat_reduced, ChemostatModel};
use slowfast::models::epidemic::{build_center_manifold, epidemic_lambda, epidemic_reduced, CenterManifoldTable, EpidemicReduced};
use slowfast::models::toy::toy;
use slowfast::verification::{epidemic_run, find_periodic_orbit, return_map_path, EpidemicRun, VerificationReport};
use slowfast::{
    CandidateSummary, FnModel, HeteroclinicOrbit, Parameterization, SingularCycle, SlowFastModel, Tolerance,
};

use crate::config::{EpidemicRunConfig, ModelKind, RunConfig};
use crate::error::CliError;
use crate::output::{read_json, write_json, write_with};

pub enum BuiltModel {
    Chemostat(ChemostatModel),
    Epidemic(EpidemicReduced),
    Toy(FnModel),
}

impl BuiltModel {
    pub fn model(&self) -> &dyn SlowFastModel {
        match self {
            BuiltModel::Chemostat(m) => m,
            BuiltModel::Epidemic(m) => m,
            BuiltModel::Toy(m) => m,
        }
    }

    pub fn analyzer<'a>(&'a self, cfg: &RunConfig) -> Analyzer<'a> {
        let an = Analyzer::new(self.model(), cfg.parameterization(), cfg.heteroclinic_settings());
        match self {
            BuiltModel::Epidemic(m) => an.with_lambda(LambdaForm::HIndependent, move |o| epidemic_lambda(m, o)),
            _ => an,
        }
    }
}

/// Builds the configured model; for the epidemic the center-manifold table is
/// built (or loaded) and written to `out/table.csv`.
pub fn build_model(cfg: &RunConfig, out: Option<&Path>) -> Result<BuiltModel, CliError> {
    let m = &cfg.model;
    Ok(match m.kind {
        ModelKind::Chemostat => BuiltModel::Chemostat(chemostat_reduced(m.chemostat.unwrap())?),
        ModelKind::Toy => {
            let t = m.toy.unwrap();
            BuiltModel::Toy(toy(t.shift, t.k, t.half_width))
        }
        ModelKind::Epidemic => {
            let params = m.epidemic.unwrap();
            let tcfg = m.table.clone().unwrap_or_default();
            let table = match &tcfg.file {
                Some(path) => {
                    let f = File::open(path).map_err(|e| CliError::Config {
                        path: Some("model.table.file".into()),
                        message: format!("{}: {e}", path.display()),
                    })?;
                    CenterManifoldTable::read_csv(BufReader::new(f))?
                }
                None => build_center_manifold(&params, &tcfg.options())?,
            };
            if let Some(dir) = out {
                write_with(&dir.join("table.csv"), |w| table.write_csv(w))?;
            }
            BuiltModel::Epidemic(epidemic_reduced(params, Arc::new(table))?)
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
}

pub fn write_manifest(cfg: &RunConfig, out: &Path, command: &str) -> Result<(), CliError> {
    let m = Manifest {
        tool: "slowfast".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: cfg.clone(),
    };
    write_json(&out.join("manifest.json"), &m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateEntry {
    #[serde(flatten)]
    pub summary: CandidateSummary,
    pub orbit_file: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidatesFile {
    pub model: ModelKind,
    pub parameterization: Parameterization,
    pub window: (f64, f64),
    pub n_grid: usize,
    pub valid_window: Option<(f64, f64)>,
    pub scan_failures: usize,
    pub sign_changes: usize,
    pub candidates: Vec<CandidateEntry>,
    pub warnings: Vec<String>,
}

impl CandidatesFile {
    pub fn classified(&self) -> impl Iterator<Item = (usize, &CandidateEntry)> {
        self.candidates.iter().enumerate().filter(|(_, c)| c.summary.stability != slowfast::Stability::Degenerate)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub candidate_index: usize,
    pub s0: f64,
    pub epsilon: f64,
    pub report: Option<VerificationReport>,
    pub error: Option<String>,
    pub orbit_file: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpidemicRunEntry {
    pub config: EpidemicRunConfig,
    pub run: Option<EpidemicRun>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationFile {
    pub reports: Vec<VerifyEntry>,
    pub epidemic_runs: Vec<EpidemicRunEntry>,
}

fn csv_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_scan_csv(path: &Path, scan: &Scan) -> Result<(), CliError> {
    write_with(path, |w| {
        writeln!(w, "s,status,chi,chi_err,lambda,lambda_err,a_alpha,a_omega")?;
        for p in &scan.points {
            let v = p.values.as_ref();
            let status = match &p.error {
                Some(e) => format!("error: {}", e.replace([',', '\n'], ";")),
                None => "ok".into(),
            };
            writeln!(
                w,
                "{},{status},{},{},{},{},{},{}",
                p.s,
                csv_field(v.map(|v| v.chi)),
                csv_field(v.map(|v| v.chi_err)),
                csv_field(v.map(|v| v.lambda)),
                csv_field(v.map(|v| v.lambda_err)),
                csv_field(v.map(|v| v.endpoint_data.a_alpha)),
                csv_field(v.map(|v| v.endpoint_data.a_omega)),
            )?;
        }
        Ok(())
    })
}

pub struct AnalyzeOutcome {
    pub candidates: CandidatesFile,
}

/// Full pipeline: model, scan, candidates, verification.
pub fn analyze(cfg: &RunConfig, out: &Path) -> Result<AnalyzeOutcome, CliError> {
    std::fs::create_dir_all(out)?;
    write_manifest(cfg, out, "analyze")?;
    let built = build_model(cfg, Some(out))?;
    let an = built.analyzer(cfg);
    let scan = scan_chi(&an, cfg.scan.window, cfg.scan.n_grid)?;
    write_scan_csv(&out.join("scan.csv"), &scan)?;
    let opts = CandidateOptions { root_tol: cfg.tolerances.root_tol, lambda_tol: cfg.tolerances.lambda_tol, ..Default::default() };
    let report = find_candidates(&an, &scan, &opts)?;
    let mut entries = Vec::new();
    for (k, c) in report.candidates.iter().enumerate() {
        let name = format!("orbits/candidate_{k}.csv");
        write_with(&out.join(&name), |w| c.gamma.path.write_csv(w))?;
        entries.push(CandidateEntry { summary: c.summary(), orbit_file: Some(name) });
    }
    let file = CandidatesFile {
        model: cfg.model.kind,
        parameterization: cfg.parameterization(),
        window: cfg.scan.window,
        n_grid: cfg.scan.n_grid,
        valid_window: scan.valid_window(),
        scan_failures: scan.points.iter().filter(|p| p.values.is_none()).count(),
        sign_changes: scan.sign_changes(),
        candidates: entries,
        warnings: report.warnings.clone(),
    };
    write_json(&out.join("candidates.json"), &file)?;

    let classified: Vec<(usize, CycleCandidate)> =
        report.candidates.iter().cloned().enumerate().filter(|(_, c)| c.is_classified()).collect();
    if wants_verification(cfg) {
        let v = verify_candidates(cfg, &built, &classified, out)?;
        write_json(&out.join("verification.json"), &v)?;
    }
    if classified.is_empty() {
        return Err(CliError::NoCandidates);
    }
    Ok(AnalyzeOutcome { candidates: file })
}

fn wants_verification(cfg: &RunConfig) -> bool {
    !cfg.verify.epsilons.is_empty() || !cfg.verify.epidemic_runs.is_empty()
}

pub fn verify_candidates(
    cfg: &RunConfig,
    built: &BuiltModel,
    candidates: &[(usize, CycleCandidate)],
    out: &Path,
) -> Result<VerificationFile, CliError> {
    let settings = cfg.verify_settings();
    let jobs: Vec<(usize, &CycleCandidate, usize, f64)> = candidates
        .iter()
        .flat_map(|(k, c)| cfg.verify.epsilons.iter().enumerate().map(move |(j, &e)| (*k, c, j, e)))
        .collect();
    let model = built.model();
    let results: Vec<Result<VerifyEntry, CliError>> = jobs
        .par_iter()
        .map(|&(k, c, j, eps)| {
            let mut entry = VerifyEntry { candidate_index: k, s0: c.s0, epsilon: eps, report: None, error: None, orbit_file: None };
            match find_periodic_orbit(model, eps, c, &settings) {
                Ok(r) => {
                    if r.converged {
                        if let Ok(ret) = return_map_path(model, eps, r.delta1, r.fixed_point_a, &settings) {
                            let name = format!("orbits/periodic_{k}_{j}.csv");
                            write_with(&out.join(&name), |w| ret.path.write_csv(w))?;
                            entry.orbit_file = Some(name);
                        }
                    }
                    entry.report = Some(r);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            Ok(entry)
        })
        .collect();
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let epidemic_runs = match (built, cfg.model.epidemic) {
        (BuiltModel::Epidemic(_), Some(p)) => cfg
            .verify
            .epidemic_runs
            .par_iter()
            .map(|rc| match epidemic_run(&p, rc.epsilon, rc.initial, rc.section_i, rc.t_max, Tolerance { rel: 1e-10, abs: 1e-12 }) {
                Ok(run) => EpidemicRunEntry { config: rc.clone(), run: Some(run), error: None },
                Err(e) => EpidemicRunEntry { config: rc.clone(), run: None, error: Some(e.to_string()) },
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(VerificationFile { reports, epidemic_runs })
}

/// Rebuilds a candidate from its JSON summary by recomputing gamma(s0).
pub fn candidate_from_summary(an: &Analyzer, s: &CandidateSummary) -> Result<CycleCandidate, CliError> {
    let gamma = an.orbit(s.s0)?;
    Ok(CycleCandidate {
        s0: s.s0,
        chi0: s.chi,
        lambda0: s.lambda,
        lambda_err: s.lambda_err,
        lambda_form: s.lambda_form,
        stability: s.stability,
        singular_cycle: SingularCycle { a_alpha: gamma.a_alpha, a_omega: gamma.a_omega },
        gamma,
        predicted_period_coeff: s.period_coeff,
        chi_prime: s.chi_prime,
        bracket: s.bracket,
        warning: s.warning.clone(),
    })
}

pub fn verify_command(cfg: &RunConfig, candidates_path: &Path, out: &Path) -> Result<VerificationFile, CliError> {
    let file: CandidatesFile = read_json(candidates_path, "analyze")?;
    if file.model != cfg.model.kind {
        return Err(CliError::Config {
            path: Some("model.kind".into()),
            message: format!("candidates were produced for {:?}", file.model),
        });
    }
    std::fs::create_dir_all(out)?;
    write_manifest(cfg, out, "verify")?;
    let built = build_model(cfg, Some(out))?;
    let an = built.analyzer(cfg);
    let cands = file
        .classified()
        .map(|(k, c)| candidate_from_summary(&an, &c.summary).map(|c| (k, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let v = verify_candidates(cfg, &built, &cands, out)?;
    write_json(&out.join("verification.json"), &v)?;
    Ok(v)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub s: f64,
    pub parameterization: Parameterization,
    pub a_alpha: f64,
    pub a_omega: f64,
    pub endpoint_err: f64,
    pub peak_b: f64,
    pub t_peak: f64,
    pub seed_offset: f64,
    pub tail_cut: f64,
    pub path_file: String,
}

impl OrbitRecord {
    fn of(o: &HeteroclinicOrbit, path_file: String) -> Self {
        OrbitRecord {
            s: o.s,
            parameterization: o.parameterization,
            a_alpha: o.a_alpha,
            a_omega: o.a_omega,
            endpoint_err: o.endpoint_err,
            peak_b: o.peak_b,
            t_peak: o.t_peak,
            seed_offset: o.seed_offset,
            tail_cut: o.tail_cut,
            path_file,
        }
    }
}

pub fn orbit_command(cfg: &RunConfig, s: f64, out: &Path) -> Result<OrbitRecord, CliError> {
    std::fs::create_dir_all(out)?;
    let built = build_model(cfg, Some(out))?;
    let an = built.analyzer(cfg);
    let o = an.orbit(s)?;
    let name = "orbit.csv".to_string();
    write_with(&out.join(&name), |w| o.path.write_csv(w))?;
    let rec = OrbitRecord::of(&o, name);
    write_json(&out.join("orbit.json"), &rec)?;
    Ok(rec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChiRecord {
    pub s: f64,
    pub chi: f64,
    pub chi_err: f64,
    pub a_alpha: f64,
    pub a_omega: f64,
}

/// chi from the endpoints stored by `orbit`.
pub fn chi_command(cfg: &RunConfig, orbit_json: &Path, out: &Path) -> Result<ChiRecord, CliError> {
    let rec: OrbitRecord = read_json(orbit_json, "orbit")?;
    let built = build_model(cfg, None)?;
    let (chi, chi_err) = characteristics::chi_between(built.model(), rec.a_omega, rec.a_alpha, rec.endpoint_err)?;
    let r = ChiRecord { s: rec.s, chi, chi_err, a_alpha: rec.a_alpha, a_omega: rec.a_omega };
    write_json(&out.join("chi.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub s: f64,
    pub lambda: f64,
    pub lambda_err: f64,
    pub lambda_form: LambdaForm,
}

/// lambda needs the whole path; the orbit is recomputed deterministically from
/// the stored s and checked against the stored endpoints.
pub fn lambda_command(cfg: &RunConfig, orbit_json: &Path, out: &Path) -> Result<LambdaRecord, CliError> {
    let rec: OrbitRecord = read_json(orbit_json, "orbit")?;
    if rec.parameterization != cfg.parameterization() {
        return Err(CliError::Config { path: Some("scan.parameterization".into()), message: "differs from the stored orbit".into() });
    }
    let built = build_model(cfg, None)?;
    let an = built.analyzer(cfg);
    let o = an.orbit(rec.s)?;
    let tol = 1e-9 * (1.0 + rec.a_alpha.abs().max(rec.a_omega.abs()));
    if (o.a_alpha - rec.a_alpha).abs() > tol || (o.a_omega - rec.a_omega).abs() > tol {
        return Err(CliError::Config {
            path: None,
            message: format!("{} does not match this config; rerun `slowfast orbit`", orbit_json.display()),
        });
    }
    let (lambda_form, lambda, lambda_err) = an.lambda_of(&o)?;
    let r = LambdaRecord { s: rec.s, lambda, lambda_err, lambda_form };
    write_json(&out.join("lambda.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub dir: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub candidates: Vec<CandidateSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFile {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

/// One analyze run per value of the dotted `param` key.
pub fn sweep_command(config_path: &Path, param: &str, values: &[f64], out: &Path) -> Result<SweepFile, CliError> {
    if values.is_empty() {
        return Err(CliError::Config { path: None, message: "sweep needs at least one value".into() });
    }
    let base = RunConfig::load_value(config_path)?;
    let cfgs = values
        .iter()
        .map(|&v| {
            let mut t = base.clone();
            crate::config::set_path(&mut t, param, v)?;
            RunConfig::from_value(t)
        })
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (k, (cfg, &v)) in cfgs.iter().zip(values).enumerate() {
        let dir: PathBuf = out.join(format!("sweep_{k}"));
        let (exit_code, error, candidates) = match analyze(cfg, &dir) {
            Ok(o) => (0, None, o.candidates.candidates.into_iter().map(|c| c.summary).collect()),
            Err(e) => {
                let cands = read_json::<CandidatesFile>(&dir.join("candidates.json"), "analyze")
                    .map(|f| f.candidates.into_iter().map(|c| c.summary).collect())
                    .unwrap_or_default();
                (e.exit_code(), Some(e.to_string()), cands)
            }
        };
        rows.push(SweepRow { value: v, dir: format!("sweep_{k}"), exit_code, error, candidates });
    }
    let file = SweepFile { param: param.into(), rows };
    write_json(&out.join("sweep.json"), &file)?;
    Ok(file)
}
