//! Configuration parsing and result serialization.
//!
//! Config files are strict TOML: unknown keys are rejected, angles are
//! degrees, powers are dB where the field name says so. Results serialize
//! to a fixed-header CSV (one row per trial) and a JSON envelope carrying
//! the manifest, the resolved config, and per-value summaries.

use crate::combining::{SolverOpts, TraceRow};
use crate::metrics::MetricRecord;
use crate::simulator::{
    ComplexityReport, SimConfig, SimError, SummaryRow, SweepFamily, SweepSpec, TriggerTau,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed CSV schema: one row per trial, constant column count.
pub const CSV_HEADER: &str = "trial_id,sweep_var,sweep_value,sum_rate_bpshz,worst_sinr_db,interference_db,ber,est_error,s_theta,s_phi,s_joint_quad,s_joint_eq21,s_cond,converged,iterations";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("result parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<SimError> for ConfigError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(msg) => ConfigError::Invalid(msg),
            other => ConfigError::Invalid(other.to_string()),
        }
    }
}

/// `snr_db` accepts a scalar (fixed operating point) or a list (implicit
/// SNR sweep axis).
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SnrField {
    One(f64),
    Many(Vec<f64>),
}

/// Partial model table: absent fields keep the base config's values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    mu_theta_deg: Option<f64>,
    mu_phi_deg: Option<f64>,
    sigma_theta_deg: Option<f64>,
    sigma_phi_deg: Option<f64>,
    rho: Option<f64>,
}

impl RawModel {
    fn apply(self, m: &mut crate::simulator::ModelConfig) {
        if let Some(v) = self.mu_theta_deg {
            m.mu_theta_deg = v;
        }
        if let Some(v) = self.mu_phi_deg {
            m.mu_phi_deg = v;
        }
        if let Some(v) = self.sigma_theta_deg {
            m.sigma_theta_deg = v;
        }
        if let Some(v) = self.sigma_phi_deg {
            m.sigma_phi_deg = v;
        }
        if let Some(v) = self.rho {
            m.rho = v;
        }
    }
}

/// Partial solver table: absent fields keep the base config's values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    step0: Option<f64>,
    shrink: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

impl RawSolver {
    fn apply(self, s: &mut SolverOpts) {
        if let Some(v) = self.step0 {
            s.step0 = v;
        }
        if let Some(v) = self.shrink {
            s.shrink = v;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        if let Some(v) = self.max_iter {
            s.max_iter = v;
        }
    }
}

/// Every settable configuration key, all optional. Used both for the
/// top-level document and for `[sweep.fixed]` override tables.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOverride {
    n_tx: Option<usize>,
    n_rf: Option<usize>,
    n_rx: Option<usize>,
    k_users: Option<usize>,
    n_paths: Option<usize>,
    spacing_wavelengths: Option<f64>,
    p_max_db: Option<f64>,
    sigma_n2: Option<f64>,
    snr_db: Option<SnrField>,
    inr_db: Option<f64>,
    interferer_angles_deg: Option<Vec<f64>>,
    mismatch_theta_deg: Option<f64>,
    distance_m: Option<f64>,
    interferer_distance_m: Option<f64>,
    path_loss_alpha: Option<f64>,
    carrier_ghz: Option<f64>,
    bandwidth_ghz: Option<f64>,
    model: Option<RawModel>,
    n_trials: Option<usize>,
    seed: Option<u64>,
    ber_symbols: Option<usize>,
    solver: Option<RawSolver>,
    entropy_trigger_tau: Option<TriggerTau>,
}

impl RawOverride {
    /// Apply onto `cfg`; returns the SNR list when the list form was used
    /// (allowed only at the top level, where it defines a sweep).
    fn apply(self, cfg: &mut SimConfig, allow_snr_list: bool) -> Result<Option<Vec<f64>>, ConfigError> {
        macro_rules! set {
            ($f:ident) => {
                if let Some(v) = self.$f {
                    cfg.$f = v;
                }
            };
        }
        set!(n_tx);
        set!(n_rf);
        set!(n_rx);
        set!(k_users);
        set!(n_paths);
        set!(spacing_wavelengths);
        set!(p_max_db);
        set!(sigma_n2);
        set!(inr_db);
        set!(interferer_angles_deg);
        set!(mismatch_theta_deg);
        set!(distance_m);
        set!(interferer_distance_m);
        set!(path_loss_alpha);
        set!(carrier_ghz);
        set!(n_trials);
        set!(seed);
        set!(ber_symbols);
        set!(entropy_trigger_tau);
        if let Some(v) = self.bandwidth_ghz {
            cfg.bandwidth_ghz = Some(v);
        }
        let mut snr_list = None;
        match self.snr_db {
            Some(SnrField::One(v)) => cfg.snr_db = Some(v),
            Some(SnrField::Many(vs)) => {
                if allow_snr_list {
                    snr_list = Some(vs);
                } else {
                    return Err(ConfigError::Invalid(
                        "snr_db list form is only valid at the top level, where it defines a sweep".into(),
                    ));
                }
            }
            None => {}
        }
        if let Some(m) = self.model {
            m.apply(&mut cfg.model);
        }
        if let Some(s) = self.solver {
            s.apply(&mut cfg.solver);
        }
        Ok(snr_list)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    family: String,
    variable: Option<String>,
    values: Option<Vec<f64>>,
    fixed: Option<toml::Table>,
}

impl RawSweep {
    fn resolve(self, base: &SimConfig) -> Result<SweepSpec, ConfigError> {
        let family = SweepFamily::from_name(&self.family).ok_or_else(|| {
            let names: Vec<&str> = SweepFamily::ALL.iter().map(|f| f.name()).collect();
            ConfigError::Invalid(format!(
                "unknown sweep family \"{}\"; expected one of {}",
                self.family,
                names.join(", ")
            ))
        })?;
        let variable = self.variable.unwrap_or_else(|| family.variable().to_string());
        let values = self.values.unwrap_or_else(|| family.default_values());
        let fixed = match self.fixed {
            None => None,
            Some(table) => {
                if table.contains_key(family.variable()) {
                    return Err(ConfigError::Invalid(format!(
                        "sweep {}: fixed must not set the swept variable {}",
                        family.name(),
                        family.variable()
                    )));
                }
                let raw: RawOverride = toml::Value::Table(table).try_into()?;
                let mut cfg = base.clone();
                raw.apply(&mut cfg, false)?;
                Some(Box::new(cfg))
            }
        };
        Ok(SweepSpec { family, variable, values, fixed })
    }
}

/// Parse a config document. Empty input yields the full defaults. An
/// `snr_db` list becomes an implicit SNR sweep; `[[sweep]]` blocks add
/// explicit ones.
pub fn parse_config(text: &str) -> Result<(SimConfig, Vec<SweepSpec>), ConfigError> {
    let mut table: toml::Table = toml::from_str(text)?;
    let sweep_val = table.remove("sweep");
    let raw: RawOverride = toml::Value::Table(table).try_into()?;
    let mut cfg = SimConfig::default();
    let snr_list = raw.apply(&mut cfg, true)?;
    let mut sweeps = Vec::new();
    if let Some(values) = snr_list {
        sweeps.push(SweepSpec {
            family: SweepFamily::SnrSumrate,
            variable: SweepFamily::SnrSumrate.variable().to_string(),
            values,
            fixed: None,
        });
    }
    if let Some(v) = sweep_val {
        let raws: Vec<RawSweep> = v.try_into()?;
        for r in raws {
            sweeps.push(r.resolve(&cfg)?);
        }
    }
    cfg.validate()?;
    for s in &sweeps {
        s.validate()?;
    }
    Ok((cfg, sweeps))
}

pub fn parse_config_file(path: &Path) -> Result<(SimConfig, Vec<SweepSpec>), ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Recursive value diff: the subtree of `new` that differs from `old`.
fn diff_value(old: &toml::Value, new: &toml::Value) -> Option<toml::Value> {
    match (old, new) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            let mut out = toml::Table::new();
            for (k, vb) in b {
                match a.get(k) {
                    Some(va) => {
                        if let Some(d) = diff_value(va, vb) {
                            out.insert(k.clone(), d);
                        }
                    }
                    None => {
                        out.insert(k.clone(), vb.clone());
                    }
                }
            }
            if out.is_empty() {
                None
            } else {
                Some(toml::Value::Table(out))
            }
        }
        _ => (old != new).then(|| new.clone()),
    }
}

#[derive(Serialize)]
struct SweepOut {
    family: SweepFamily,
    variable: String,
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed: Option<toml::Table>,
}

/// Render a config document that parses back to exactly (`cfg`, `sweeps`):
/// `parse(render(parse(x)))` = `parse(x)` for any valid `x`. Sweep
/// overrides are written as diffs against the base config.
pub fn render_config_toml(cfg: &SimConfig, sweeps: &[SweepSpec]) -> Result<String, ConfigError> {
    let base_v = toml::Value::try_from(cfg)?;
    let mut doc = match &base_v {
        toml::Value::Table(t) => t.clone(),
        _ => unreachable!("struct serializes to a table"),
    };
    if !sweeps.is_empty() {
        let mut rows = Vec::with_capacity(sweeps.len());
        for s in sweeps {
            let fixed = match &s.fixed {
                None => None,
                Some(f) => {
                    let fv = toml::Value::try_from(f.as_ref())?;
                    diff_value(&base_v, &fv).map(|d| match d {
                        toml::Value::Table(t) => t,
                        _ => unreachable!("diff of tables is a table"),
                    })
                }
            };
            rows.push(SweepOut {
                family: s.family,
                variable: s.variable.clone(),
                values: s.values.clone(),
                fixed,
            });
        }
        doc.insert("sweep".into(), toml::Value::try_from(rows)?);
    }
    Ok(toml::to_string_pretty(&doc)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Digest of the canonicalized resolved config: independent of key order
/// or formatting in the source file.
pub fn config_hash(cfg: &SimConfig, sweeps: &[SweepSpec]) -> String {
    let canonical = serde_json::to_vec(&(cfg, sweeps)).expect("config serializes");
    sha256_hex(&canonical)
}

/// Provenance sidecar for every output file set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_utc: String,
    pub finished_utc: String,
    pub n_workers: usize,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            config_hash,
            seed,
            started_utc: now_utc(),
            finished_utc: String::new(),
            n_workers: rayon::current_num_threads(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_utc = now_utc();
    }
}

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// 9-significant-digit scientific notation; non-finite values print their
/// standard names.
fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Render trial records to the fixed-header CSV. Deterministic: no
/// timestamps, no environment-dependent fields.
pub fn render_csv(records: &[MetricRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let e = &r.entropy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.sweep_var,
            fmt_f(r.sweep_value),
            fmt_f(r.sum_rate),
            fmt_f(r.worst_case_sinr),
            fmt_f(r.interference_power),
            fmt_f(r.ber),
            fmt_f(r.est_error),
            fmt_f(e.s_theta),
            fmt_f(e.s_phi),
            fmt_f(e.s_joint_quadrature),
            fmt_f(e.s_joint_legacy),
            fmt_f(e.s_cond_phi_given_theta),
            r.converged,
            r.iterations
        );
    }
    out
}

/// Per-iteration solver trace rows, one block per trial.
pub fn render_trace_csv(traces: &[(String, f64, u64, Vec<TraceRow>)]) -> String {
    let mut out = String::from("sweep_var,sweep_value,trial_id,iteration,objective,step,feasible\n");
    for (var, value, trial, rows) in traces {
        for row in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                var,
                fmt_f(*value),
                trial,
                row.iteration,
                fmt_f(row.objective),
                fmt_f(row.step),
                row.feasible
            );
        }
    }
    out
}

/// Everything one run or sweep produced, as serialized to JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsEnvelope {
    pub manifest: RunManifest,
    pub config: SimConfig,
    pub sweeps: Vec<SweepSpec>,
    pub summary: Vec<SummaryRow>,
    pub records: Vec<MetricRecord>,
}

pub fn render_results_json(env: &ResultsEnvelope) -> String {
    let mut s = serde_json::to_string_pretty(env).expect("envelope serializes");
    s.push('\n');
    s
}

pub fn parse_results_json(text: &str) -> Result<ResultsEnvelope, ConfigError> {
    Ok(serde_json::from_str(text)?)
}

/// Complexity-probe output envelope.
#[derive(Debug, Serialize, Deserialize)]
pub struct ComplexityEnvelope {
    pub manifest: RunManifest,
    pub config: SimConfig,
    pub n_tx_values: Vec<usize>,
    pub report: ComplexityReport,
}

pub fn render_complexity_csv(report: &ComplexityReport) -> String {
    let mut out = String::from("n_tx,seconds_per_trial\n");
    for row in &report.rows {
        let _ = writeln!(out, "{},{}", row.n_tx, fmt_f(row.seconds_per_trial));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(format!("unknown format \"{other}\"; expected csv, json, or both")),
        }
    }
}

impl OutputFormat {
    pub fn wants_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    pub fn wants_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// Write the result set under `out_base` (extensions are appended),
/// filling `manifest.outputs` and the finish timestamp. Returns the paths
/// written. The manifest sidecar `<out_base>.manifest.json` is always
/// written.
pub fn write_results(
    env: &mut ResultsEnvelope,
    out_base: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, ConfigError> {
    if let Some(dir) = out_base.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let with_ext = |ext: &str| -> PathBuf {
        let mut s = out_base.as_os_str().to_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    let mut paths = Vec::new();
    if format.wants_csv() {
        paths.push(with_ext(".csv"));
    }
    if format.wants_json() {
        paths.push(with_ext(".json"));
    }
    let manifest_path = with_ext(".manifest.json");
    paths.push(manifest_path.clone());
    env.manifest.outputs = paths.iter().map(|p| p.display().to_string()).collect();
    env.manifest.finish();

    if format.wants_csv() {
        std::fs::write(with_ext(".csv"), render_csv(&env.records))?;
    }
    if format.wants_json() {
        std::fs::write(with_ext(".json"), render_results_json(env))?;
    }
    let mut manifest_json = serde_json::to_string_pretty(&env.manifest)?;
    manifest_json.push('\n');
    std::fs::write(manifest_path, manifest_json)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EntropyReport;
    use crate::simulator::run_batch;

    #[test]
    fn empty_config_gives_defaults() {
        let (cfg, sweeps) = parse_config("").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert!(sweeps.is_empty());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(matches!(parse_config("n_txx = 4\n"), Err(ConfigError::Toml(_))));
        assert!(matches!(parse_config("[model]\nmu = 1.0\n"), Err(ConfigError::Toml(_))));
        assert!(matches!(
            parse_config("[[sweep]]\nfamily = \"spacing\"\nbogus = 1\n"),
            Err(ConfigError::Toml(_))
        ));
        let err = parse_config("n_txx = 4\n").unwrap_err().to_string();
        assert!(err.contains("n_txx"), "error should name the key: {err}");
    }

    #[test]
    fn snr_scalar_sets_operating_point() {
        let (cfg, sweeps) = parse_config("snr_db = 20\n").unwrap();
        assert_eq!(cfg.snr_db, Some(20.0));
        assert!(sweeps.is_empty());
    }

    #[test]
    fn snr_list_becomes_sweep() {
        let (cfg, sweeps) = parse_config("snr_db = [0, 10, 20]\n").unwrap();
        assert_eq!(cfg.snr_db, None);
        assert_eq!(sweeps.len(), 1);
        assert_eq!(sweeps[0].family, SweepFamily::SnrSumrate);
        assert_eq!(sweeps[0].variable, "snr_db");
        assert_eq!(sweeps[0].values, vec![0.0, 10.0, 20.0]);
    }

    #[test]
    fn sweep_family_alone_gets_canonical_axis_and_grid() {
        let (_, sweeps) = parse_config("[[sweep]]\nfamily = \"mismatch_ber\"\n").unwrap();
        assert_eq!(sweeps[0].variable, "mismatch_theta_deg");
        assert_eq!(sweeps[0].values, SweepFamily::MismatchBer.default_values());
        assert!(sweeps[0].fixed.is_none());
    }

    #[test]
    fn sweep_variable_mismatch_rejected() {
        let err = parse_config("[[sweep]]\nfamily = \"spacing\"\nvariable = \"snr_db\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("spacing_wavelengths"), "{err}");
    }

    #[test]
    fn unknown_family_lists_valid_names() {
        let err = parse_config("[[sweep]]\nfamily = \"nope\"\n").unwrap_err().to_string();
        assert!(err.contains("est_error_cdf") && err.contains("snr_sumrate"), "{err}");
    }

    #[test]
    fn sweep_fixed_overrides_and_guards() {
        let text = "\
[[sweep]]
family = \"mismatch_sinr\"
values = [0.0, 7.0, 13.0]
[sweep.fixed]
inr_db = -10.0
";
        let (cfg, sweeps) = parse_config(text).unwrap();
        let fixed = sweeps[0].fixed.as_ref().unwrap();
        assert_eq!(fixed.inr_db, -10.0);
        assert_eq!(fixed.n_tx, cfg.n_tx);

        let err = parse_config(
            "[[sweep]]\nfamily = \"spacing\"\n[sweep.fixed]\nspacing_wavelengths = 0.7\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("swept variable"), "{err}");

        let err2 = parse_config("[[sweep]]\nfamily = \"spacing\"\n[sweep.fixed]\nsnr_db = [1, 2]\n")
            .unwrap_err()
            .to_string();
        assert!(err2.contains("top level"), "{err2}");
    }

    #[test]
    fn validation_cites_invariant() {
        let err = parse_config("k_users = 20\n").unwrap_err().to_string();
        assert!(err.contains("K ≤ N_RF"), "{err}");
    }

    #[test]
    fn partial_model_table_merges_fieldwise() {
        let (cfg, _) = parse_config("[model]\nrho = 0.9\n").unwrap();
        assert_eq!(cfg.model.rho, 0.9);
        assert_eq!(cfg.model.mu_phi_deg, 180.0);
    }

    #[test]
    fn config_roundtrip_is_fixed_point() {
        let text = "\
n_tx = 32
n_rf = 8
k_users = 3
sigma_n2 = 0.003
p_max_db = 27.5
entropy_trigger_tau = 4.25
bandwidth_ghz = 0.1
[model]
rho = -0.35
sigma_theta_deg = 2.86
[solver]
tol = 1e-7
[[sweep]]
family = \"mismatch_sinr\"
values = [0.0, 7.0, 13.0]
[sweep.fixed]
inr_db = -10.0
[[sweep]]
family = \"est_error_cdf\"
";
        let (cfg1, sw1) = parse_config(text).unwrap();
        let rendered = render_config_toml(&cfg1, &sw1).unwrap();
        let (cfg2, sw2) = parse_config(&rendered).unwrap();
        assert_eq!(cfg1, cfg2);
        assert_eq!(sw1, sw2);
        let rendered2 = render_config_toml(&cfg2, &sw2).unwrap();
        assert_eq!(rendered, rendered2);
    }

    #[test]
    fn trigger_off_roundtrips() {
        let (cfg, _) = parse_config("entropy_trigger_tau = \"off\"\n").unwrap();
        assert_eq!(cfg.entropy_trigger_tau, TriggerTau::Off);
        let rendered = render_config_toml(&cfg, &[]).unwrap();
        let (cfg2, _) = parse_config(&rendered).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn hash_stable_under_key_reorder_and_sensitive_to_values() {
        let (a, sa) = parse_config("n_tx = 32\nn_rf = 8\nseed = 9\nk_users = 8\n").unwrap();
        let (b, sb) = parse_config("seed = 9\nk_users = 8\nn_rf = 8\nn_tx = 32\n").unwrap();
        assert_eq!(config_hash(&a, &sa), config_hash(&b, &sb));
        let (c, sc) = parse_config("n_tx = 32\nn_rf = 8\nseed = 10\nk_users = 8\n").unwrap();
        assert_ne!(config_hash(&a, &sa), config_hash(&c, &sc));
    }

    #[test]
    fn float_formatting_is_nine_significant_digits() {
        assert_eq!(fmt_f(35.0), "3.50000000e1");
        assert_eq!(fmt_f(0.0), "0.00000000e0");
        assert_eq!(fmt_f(-0.25), "-2.50000000e-1");
        assert_eq!(fmt_f(f64::NAN), "NaN");
    }

    #[test]
    fn csv_header_and_shape() {
        assert_eq!(CSV_HEADER.split(',').count(), 15);
        let empty = render_csv(&[]);
        assert_eq!(empty, format!("{CSV_HEADER}\n"));

        let mut cfg = SimConfig::default();
        cfg.n_tx = 8;
        cfg.n_rf = 4;
        cfg.k_users = 2;
        cfg.n_paths = 3;
        cfg.n_trials = 3;
        cfg.ber_symbols = 200;
        let result = run_batch(&cfg).unwrap();
        let csv = render_csv(&result.records);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 4);
        for line in &lines {
            assert_eq!(line.split(',').count(), 15, "ragged row: {line}");
        }
        assert!(lines[1].starts_with("0,none,0.00000000e0,"));
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn failed_record_renders_as_nan_row() {
        let rec = MetricRecord::failed(7, "none", 0.0, "synthetic failure".into());
        let csv = render_csv(&[rec]);
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("7,none,"));
        assert!(row.contains("NaN"));
        assert_eq!(row.split(',').count(), 15);
    }

    #[test]
    fn json_envelope_roundtrip() {
        let mut cfg = SimConfig::default();
        cfg.n_tx = 8;
        cfg.n_rf = 4;
        cfg.k_users = 2;
        cfg.n_paths = 3;
        cfg.n_trials = 2;
        cfg.ber_symbols = 200;
        let result = run_batch(&cfg).unwrap();
        let env = ResultsEnvelope {
            manifest: RunManifest::new("run", config_hash(&cfg, &[]), cfg.seed),
            config: cfg,
            sweeps: vec![],
            summary: result.summary,
            records: result.records,
        };
        let text = render_results_json(&env);
        let back = parse_results_json(&text).unwrap();
        assert_eq!(render_results_json(&back), text);
        assert_eq!(back.records.len(), 2);
    }

    #[test]
    fn write_results_creates_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("nested/out");
        let mut cfg = SimConfig::default();
        cfg.n_tx = 8;
        cfg.n_rf = 4;
        cfg.k_users = 2;
        cfg.n_paths = 3;
        cfg.n_trials = 1;
        cfg.ber_symbols = 100;
        let result = run_batch(&cfg).unwrap();
        let mut env = ResultsEnvelope {
            manifest: RunManifest::new("run", config_hash(&cfg, &[]), cfg.seed),
            config: cfg,
            sweeps: vec![],
            summary: result.summary,
            records: result.records,
        };
        let paths = write_results(&mut env, &base, OutputFormat::Both).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            assert!(p.exists(), "missing {p:?}");
        }
        assert!(!env.manifest.finished_utc.is_empty());
        assert_eq!(env.manifest.outputs.len(), 3);
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(csv.starts_with(CSV_HEADER));
    }

    #[test]
    fn trace_csv_renders_rows() {
        let rows = vec![(
            "none".to_string(),
            0.0,
            3u64,
            vec![TraceRow { iteration: 1, objective: 2.0, step: 0.5, feasible: true }],
        )];
        let text = render_trace_csv(&rows);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sweep_var,sweep_value,trial_id,iteration,objective,step,feasible"
        );
        assert_eq!(lines.next().unwrap(), "none,0.00000000e0,3,1,2.00000000e0,5.00000000e-1,true");
    }

    #[test]
    fn nan_entropy_report_available_for_failures() {
        let r = EntropyReport::nan();
        assert!(r.s_theta.is_nan() && r.s_joint_quadrature.is_nan());
    }
}
