//! Command-line batch simulator: seeded Monte-Carlo runs, experiment
//! sweeps, runtime probing, and config validation.

use clap::{Args, Parser, Subcommand};
use hybeam::cli_io::{
    self, config_hash, parse_config, parse_config_file, ComplexityEnvelope, ConfigError,
    OutputFormat, ResultsEnvelope, RunManifest,
};
use hybeam::simulator::{
    complexity_probe, run_batch, run_sweep, run_trial_traced, SimConfig, SweepFamily, SweepSpec,
    SweepResult, SummaryRow,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hybeam",
    version,
    about = "Batch simulator for hybrid beamforming under correlated angle/phase statistics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured number of trials at a single operating point.
    Run(RunArgs),
    /// Run experiment-family sweeps from the config or --family flags.
    Sweep(SweepArgs),
    /// Measure per-trial wall time across transmit antenna counts.
    ProbeComplexity(ProbeArgs),
    /// Parse a config, check every invariant, and print its hash.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; omitted means built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output base path; .csv/.json/.manifest.json are appended.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats to write.
    #[arg(long, default_value = "both")]
    format: OutputFormat,
    /// Worker threads for trial execution (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write a per-iteration solver trace CSV to this path
    /// (re-executes the trials serially; results are unchanged).
    #[arg(long)]
    debug_dump: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Trials to run, overriding the config.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment family to run (repeatable); defaults to the config's
    /// [[sweep]] blocks.
    #[arg(long)]
    family: Vec<String>,
    /// Trials per sweep value, overriding the config.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated transmit antenna counts.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
    n_tx: Vec<usize>,
    /// Trials timed per antenna count.
    #[arg(long, default_value_t = 3)]
    trials: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(a) => run_cmd(a),
        Cmd::Sweep(a) => sweep_cmd(a),
        Cmd::ProbeComplexity(a) => probe_cmd(a),
        Cmd::Validate(a) => validate_cmd(a),
    }
}

fn fail(code: u8, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn load_config(common: &Common) -> Result<(SimConfig, Vec<SweepSpec>), ConfigError> {
    match &common.config {
        Some(path) => parse_config_file(path),
        None => parse_config(""),
    }
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // Ignore the error when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn print_summary(rows: &[SummaryRow]) {
    for s in rows {
        println!(
            "{}={:<12} sum-rate mean {:8.3} bits/s/Hz | worst-SINR median {:7.2} dB | BER mean {:9.3e} | est-err mean {:6.3} | failed {}/{}",
            s.sweep_var,
            format!("{}", s.sweep_value),
            s.sum_rate.mean,
            s.worst_sinr_db.median,
            s.ber.mean,
            s.est_error.mean,
            s.n_failed,
            s.n_trials
        );
    }
}

fn n_failed(result: &SweepResult) -> usize {
    result.records.iter().filter(|r| r.failure.is_some()).count()
}

fn write_debug_dump(
    path: &Path,
    points: &[(String, f64, SimConfig)],
) -> Result<(), ConfigError> {
    let mut traces = Vec::new();
    for (var, value, cfg) in points {
        for t in 0..cfg.n_trials as u64 {
            let (_, trace) = run_trial_traced(cfg, t);
            if let Some(rows) = trace {
                traces.push((var.clone(), *value, t, rows));
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, cli_io::render_trace_csv(&traces))?;
    Ok(())
}

fn run_cmd(args: RunArgs) -> ExitCode {
    let (mut cfg, sweeps) = match load_config(&args.common) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if !sweeps.is_empty() {
        eprintln!("note: config defines {} sweep(s); `run` executes the base config only (use `sweep`)", sweeps.len());
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }
    init_workers(args.common.workers);

    let result = match run_batch(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let failed = n_failed(&result);
    let mut env = ResultsEnvelope {
        manifest: RunManifest::new("run", config_hash(&cfg, &[]), cfg.seed),
        config: cfg.clone(),
        sweeps: vec![],
        summary: result.summary,
        records: result.records,
    };
    let out = args.common.out.unwrap_or_else(|| PathBuf::from("results/run"));
    let paths = match cli_io::write_results(&mut env, &out, args.common.format) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Some(dump) = &args.common.debug_dump {
        let points = vec![("none".to_string(), 0.0, cfg.clone())];
        if let Err(e) = write_debug_dump(dump, &points) {
            return fail(EXIT_RUNTIME, e);
        }
        println!("solver trace: {}", dump.display());
    }
    print_summary(&env.summary);
    for p in &paths {
        println!("wrote {}", p.display());
    }
    if failed > 0 {
        eprintln!("{failed} of {} trials failed; rows kept with failure tags", env.records.len());
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}

fn sweep_cmd(args: SweepArgs) -> ExitCode {
    let (mut cfg, mut specs) = match load_config(&args.common) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if !args.family.is_empty() {
        let mut chosen = Vec::new();
        for name in &args.family {
            let Some(family) = SweepFamily::from_name(name) else {
                let names: Vec<&str> = SweepFamily::ALL.iter().map(|f| f.name()).collect();
                return fail(
                    EXIT_CONFIG,
                    format!("unknown sweep family \"{name}\"; expected one of {}", names.join(", ")),
                );
            };
            match specs.iter().find(|s| s.family == family) {
                Some(s) => chosen.push(s.clone()),
                None => chosen.push(SweepSpec::for_family(family)),
            }
        }
        specs = chosen;
    }
    if specs.is_empty() {
        let names: Vec<&str> = SweepFamily::ALL.iter().map(|f| f.name()).collect();
        return fail(
            EXIT_CONFIG,
            format!("no sweep specified: pass --family or add [[sweep]] blocks; families: {}", names.join(", ")),
        );
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    for spec in &mut specs {
        if let Some(fixed) = &mut spec.fixed {
            if let Some(s) = args.common.seed {
                fixed.seed = s;
            }
            if let Some(t) = args.trials {
                fixed.n_trials = t;
            }
        }
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }
    init_workers(args.common.workers);

    let out = args.common.out.unwrap_or_else(|| PathBuf::from("results/sweep"));
    let mut total_failed = 0usize;
    let mut all_paths = Vec::new();
    let mut dump_points: Vec<(String, f64, SimConfig)> = Vec::new();
    let mut seen: Vec<SweepFamily> = Vec::new();
    for spec in &specs {
        let result = match run_sweep(spec, &cfg) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_CONFIG, e),
        };
        total_failed += n_failed(&result);
        let repeat = seen.iter().filter(|f| **f == spec.family).count();
        seen.push(spec.family);
        let suffix = if repeat == 0 {
            spec.family.name().to_string()
        } else {
            format!("{}.{}", spec.family.name(), repeat + 1)
        };
        let base = PathBuf::from(format!("{}.{}", out.display(), suffix));
        let mut env = ResultsEnvelope {
            manifest: RunManifest::new("sweep", config_hash(&cfg, std::slice::from_ref(spec)), cfg.seed),
            config: cfg.clone(),
            sweeps: vec![spec.clone()],
            summary: result.summary,
            records: result.records,
        };
        match cli_io::write_results(&mut env, &base, args.common.format) {
            Ok(p) => all_paths.extend(p),
            Err(e) => return fail(EXIT_RUNTIME, e),
        }
        println!("[{}]", suffix);
        print_summary(&env.summary);
        if args.common.debug_dump.is_some() {
            let point_cfg = spec.fixed.as_deref().unwrap_or(&cfg);
            for &v in &spec.values {
                dump_points.push((spec.variable.clone(), v, spec.family.apply(point_cfg, v)));
            }
        }
    }
    if let Some(dump) = &args.common.debug_dump {
        if let Err(e) = write_debug_dump(dump, &dump_points) {
            return fail(EXIT_RUNTIME, e);
        }
        println!("solver trace: {}", dump.display());
    }
    for p in &all_paths {
        println!("wrote {}", p.display());
    }
    if total_failed > 0 {
        eprintln!("{total_failed} trial(s) failed; rows kept with failure tags");
        return ExitCode::from(EXIT_RUNTIME);
    }
    ExitCode::SUCCESS
}

fn probe_cmd(args: ProbeArgs) -> ExitCode {
    let (mut cfg, _sweeps) = match load_config(&args.common) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    init_workers(args.common.workers);
    let report = match complexity_probe(&args.n_tx, &cfg, args.trials) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    for row in &report.rows {
        println!("n_tx {:>5}: {:.6} s/trial", row.n_tx, row.seconds_per_trial);
    }
    match report.log_log_slope {
        Some(s) => println!("log-log slope: {s:.3}"),
        None => println!("log-log slope: n/a (fewer than two distinct antenna counts)"),
    }

    let out = args.common.out.unwrap_or_else(|| PathBuf::from("results/probe"));
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            if let Err(e) = std::fs::create_dir_all(dir) {
                return fail(EXIT_RUNTIME, e);
            }
        }
    }
    let with_ext = |ext: &str| PathBuf::from(format!("{}{ext}", out.display()));
    let mut manifest = RunManifest::new("probe-complexity", config_hash(&cfg, &[]), cfg.seed);
    let mut paths = Vec::new();
    if args.common.format.wants_csv() {
        paths.push(with_ext(".csv"));
    }
    if args.common.format.wants_json() {
        paths.push(with_ext(".json"));
    }
    paths.push(with_ext(".manifest.json"));
    manifest.outputs = paths.iter().map(|p| p.display().to_string()).collect();
    manifest.finish();
    if args.common.format.wants_csv() {
        if let Err(e) = std::fs::write(with_ext(".csv"), cli_io::render_complexity_csv(&report)) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    if args.common.format.wants_json() {
        let env = ComplexityEnvelope {
            manifest: manifest.clone(),
            config: cfg,
            n_tx_values: args.n_tx.clone(),
            report,
        };
        let mut text = match serde_json::to_string_pretty(&env) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_RUNTIME, e),
        };
        text.push('\n');
        if let Err(e) = std::fs::write(with_ext(".json"), text) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    let manifest_text = match serde_json::to_string_pretty(&manifest) {
        Ok(mut t) => {
            t.push('\n');
            t
        }
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Err(e) = std::fs::write(with_ext(".manifest.json"), manifest_text) {
        return fail(EXIT_RUNTIME, e);
    }
    for p in &paths {
        println!("wrote {}", p.display());
    }
    ExitCode::SUCCESS
}

fn validate_cmd(args: ValidateArgs) -> ExitCode {
    match load_config(&args.common) {
        Ok((cfg, sweeps)) => {
            println!("config valid");
            println!("hash: {}", config_hash(&cfg, &sweeps));
            println!(
                "n_tx={} n_rf={} n_rx={} k_users={} n_paths={} trials={} seed={}",
                cfg.n_tx, cfg.n_rf, cfg.n_rx, cfg.k_users, cfg.n_paths, cfg.n_trials, cfg.seed
            );
            println!(
                "p_max={:.4} (linear) noise={} inr={:.4} (linear) spacing={}λ",
                cfg.p_max_linear(),
                cfg.noise_power(),
                cfg.inr_linear(),
                cfg.spacing_wavelengths
            );
            if sweeps.is_empty() {
                println!("sweeps: none");
            } else {
                for s in &sweeps {
                    println!(
                        "sweep {}: {} over {:?}{}",
                        s.family.name(),
                        s.variable,
                        s.values,
                        if s.fixed.is_some() { " (with fixed overrides)" } else { "" }
                    );
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}
