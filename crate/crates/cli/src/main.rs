//! Batch driver for the slow-fast Burgers laboratory.
//!
//! Subcommands cover the working loop of a convergence campaign: `validate`
//! checks the standing assumptions, `simulate` writes coupled trajectories,
//! `fbar` tabulates the averaged drift, and the four `study-*` commands run
//! the error, moment, and refinement experiments, each leaving a run
//! directory with a manifest that pins the exact configuration.
//!
//! Exit codes are a stable scheduler contract: 0 success, 1 failed check or
//! out-of-band result, 2 config error, 3 step-bias abort (stderr carries the
//! suggested macro step), 4 degenerate study.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msbl_core::{
    config_digest, default_burn_in, estimate_fbar_ergodic, fbar_analytic,
    galerkin_refinement_check, moment_check, simulate_coupled, strong_error_study,
    validate_assumptions, weak_error_study, Channel, CoreError, ErrorReport, FbarMode, Manifest,
    NoiseStream, RunDir, SineField, TestFunctional,
};

use config::{load_config, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "msbl",
    version,
    about = "Slow-fast stochastic Burgers laboratory"
)]
struct Cli {
    /// Config file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base directory for run outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Dotted-path config override, repeatable (e.g. --set params.eps=0.125).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shorthand for --set params.n_paths=N.
    #[arg(long, global = true, value_name = "N")]
    paths: Option<usize>,

    /// Master seed; beats the MSBL_SEED environment variable, which beats
    /// the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the dissipativity and covariance assumptions.
    Validate,
    /// Write coupled slow/fast trajectories for every path.
    Simulate,
    /// Tabulate the averaged drift at a state read from a coefficient CSV.
    Fbar {
        /// CSV of sine coefficients: either one value per line, or
        /// `mode,value` rows.
        x_input: PathBuf,
    },
    /// Strong-error sweep over the eps grid with an order fit.
    StudyStrong,
    /// Weak-error sweep over the eps grid with an order fit.
    StudyWeak,
    /// Uniform-in-eps moment flatness check.
    StudyMoments,
    /// Truncation refinement against a doubled reference.
    StudyGalerkin,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let mut config = load_config(cli.config.as_deref(), &cli.set)?;
    if let Some(n) = cli.paths {
        config.params.n_paths = n;
    }
    apply_seed(&mut config, cli.seed)?;

    match &cli.command {
        Command::Validate => cmd_validate(cli, &config),
        Command::Simulate => cmd_simulate(cli, &config),
        Command::Fbar { x_input } => cmd_fbar(cli, &config, x_input),
        Command::StudyStrong => cmd_study_strong(cli, &config),
        Command::StudyWeak => cmd_study_weak(cli, &config),
        Command::StudyMoments => cmd_study_moments(cli, &config),
        Command::StudyGalerkin => cmd_study_galerkin(cli, &config),
    }
}

/// Seed precedence: --seed, then MSBL_SEED, then the config value.
fn apply_seed(config: &mut RunConfig, flag: Option<u64>) -> Result<(), CliError> {
    if let Some(seed) = flag {
        config.params.master_seed = seed;
        return Ok(());
    }
    if let Ok(raw) = std::env::var("MSBL_SEED") {
        let seed = raw
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("MSBL_SEED is not a u64: '{raw}'")))?;
        config.params.master_seed = seed;
    }
    Ok(())
}

fn cmd_validate(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let report = validate_assumptions(&resolved.model, &config.cov1, &config.cov2);
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(json_err)?
        );
    } else {
        for check in &report.checks {
            let verdict = if check.pass { "pass" } else { "FAIL" };
            println!("{}: {verdict} ({})", check.name, check.detail);
        }
        println!("overall: {}", if report.overall { "pass" } else { "fail" });
    }
    Ok(if report.overall { 0 } else { 1 })
}

fn cmd_simulate(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let run = open_run_dir(cli, config, None)?;
    let mut written = 0usize;
    for path_id in 0..config.params.n_paths as u64 {
        let (slow, fast) = simulate_coupled(
            &resolved.x0,
            &resolved.y0,
            &resolved.model,
            &config.cov1,
            &config.cov2,
            &config.params,
            path_id,
        )?;
        run.write_trajectory(&slow, path_id)?;
        run.write_trajectory(&fast, path_id)?;
        written += 2;
    }
    if cli.json {
        println!(
            "{}",
            serde_json::json!({
                "run_dir": run.path(),
                "paths": config.params.n_paths,
                "files": written,
            })
        );
    } else {
        println!("run dir: {}", run.path().display());
        println!(
            "wrote {written} trajectory files over {} paths",
            config.params.n_paths
        );
    }
    Ok(0)
}

fn cmd_fbar(cli: &Cli, config: &RunConfig, x_input: &Path) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let x = read_coeff_csv(x_input, config.params.m)?;

    let analytic = match fbar_analytic(&resolved.model, &x) {
        Ok(field) => Some(field),
        Err(CoreError::NoClosedForm(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let ergodic = match &config.fbar {
        Some(settings) => {
            let burn_in = settings
                .burn_in
                .unwrap_or_else(|| default_burn_in(resolved.model.lip_g));
            let stream = NoiseStream::new(config.params.master_seed, 0, Channel::W2);
            Some(estimate_fbar_ergodic(
                &resolved.model,
                &config.cov2,
                &x,
                &resolved.y0,
                settings.micro_dt,
                burn_in,
                settings.window,
                &stream,
            )?)
        }
        None => None,
    };
    if analytic.is_none() && ergodic.is_none() {
        return Err(CoreError::NoClosedForm(resolved.model.id.clone()).into());
    }

    if cli.json {
        let m = config.params.m;
        println!(
            "{}",
            serde_json::json!({
                "modes": (1..=m).collect::<Vec<_>>(),
                "fbar_ergodic": ergodic.as_ref().map(|e| e.mean.coeffs().to_vec()),
                "std_err": ergodic.as_ref().map(|e| e.std_err.coeffs().to_vec()),
                "fbar_analytic": analytic.as_ref().map(|a| a.coeffs().to_vec()),
            })
        );
    } else {
        println!("mode,fbar_ergodic,std_err,fbar_analytic");
        for k in 1..=config.params.m {
            let (erg, se) = match &ergodic {
                Some(e) => (
                    format!("{}", e.mean.coeff(k)),
                    format!("{}", e.std_err.coeff(k)),
                ),
                None => (String::new(), String::new()),
            };
            let ana = match &analytic {
                Some(a) => format!("{}", a.coeff(k)),
                None => String::new(),
            };
            println!("{k},{erg},{se},{ana}");
        }
    }
    Ok(0)
}

fn cmd_study_strong(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let grid = config
        .study
        .eps_grid
        .clone()
        .unwrap_or_else(|| (3..=8).map(|j| 2f64.powi(-j)).collect());
    let p = config.study.p.unwrap_or(2.0);
    let band = config.study.acceptance_band.unwrap_or((0.4, 0.6));
    let report = strong_error_study(
        &resolved.model,
        &config.cov1,
        &config.cov2,
        &resolved.x0,
        &resolved.y0,
        &grid,
        &config.params,
        p,
        FbarMode::Analytic,
    )?;
    let run = open_run_dir(cli, config, Some("strong"))?;
    let files = run.write_error_report(&report)?;
    finish_order_study(cli, "strong", &report, band, &run, &files)
}

fn cmd_study_weak(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let grid = config
        .study
        .eps_grid
        .clone()
        .unwrap_or_else(|| (2..=6).map(|j| 2f64.powi(-j)).collect());
    let phi = TestFunctional::by_id(config.study.functional.as_deref().unwrap_or("sin_e1"))?;
    let band = config.study.acceptance_band.unwrap_or((0.8, 1.2));
    let report = weak_error_study(
        &resolved.model,
        &config.cov1,
        &config.cov2,
        &resolved.x0,
        &resolved.y0,
        &phi,
        &grid,
        &config.params,
        FbarMode::Analytic,
    )?;
    let run = open_run_dir(cli, config, Some("weak"))?;
    let files = run.write_error_report(&report)?;
    finish_order_study(cli, "weak", &report, band, &run, &files)
}

fn cmd_study_moments(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let resolved = config.resolve()?;
    let grid = config
        .study
        .eps_grid
        .clone()
        .unwrap_or_else(|| vec![0.25, 0.0625, 0.015625]);
    let p = config.study.p.unwrap_or(2.0);
    let report = moment_check(
        &resolved.model,
        &config.cov1,
        &config.cov2,
        &resolved.x0,
        &resolved.y0,
        &grid,
        &config.params,
        p,
    )?;
    let run = open_run_dir(cli, config, Some("moments"))?;
    let file = run.write_moment_report(&report)?;
    if cli.json {
        println!(
            "{}",
            serde_json::json!({
                "run_dir": run.path(),
                "slow_ratio": report.slow_ratio,
                "fast_ratio": report.fast_ratio,
                "pass": report.pass,
                "report": file,
            })
        );
    } else {
        println!("run dir: {}", run.path().display());
        println!(
            "moment flatness: slow ratio {:.4}, fast ratio {:.4} (bound 1.2)",
            report.slow_ratio, report.fast_ratio
        );
        println!("wrote {}", file.display());
        println!("pass: {}", report.pass);
    }
    Ok(if report.pass { 0 } else { 1 })
}

fn cmd_study_galerkin(cli: &Cli, config: &RunConfig) -> Result<u8, CliError> {
    let m_list = config
        .study
        .m_list
        .clone()
        .unwrap_or_else(|| vec![8, 16, 32]);
    let m_min = *m_list.first().ok_or_else(|| {
        CliError::Config("study.m_list must name at least two truncations".into())
    })?;
    let model = config.model.resolve()?;
    let x0 = config.x0.build(m_min, "x0")?;
    let y0 = config.y0.build(m_min, "y0")?;
    let eps = config.study.galerkin_eps.unwrap_or(config.params.eps);
    let report = galerkin_refinement_check(
        &model,
        &config.cov1,
        &config.cov2,
        &x0,
        &y0,
        eps,
        &config.params,
        &m_list,
    )?;
    let run = open_run_dir(cli, config, Some("galerkin"))?;
    let file = run.write_galerkin_report(&report)?;
    if cli.json {
        println!(
            "{}",
            serde_json::json!({
                "run_dir": run.path(),
                "m_list": report.m_list,
                "m_ref": report.m_ref,
                "errors": report.errors,
                "pass": report.pass,
                "report": file,
            })
        );
    } else {
        println!("run dir: {}", run.path().display());
        for (m, err) in report.m_list.iter().zip(&report.errors) {
            println!(
                "m = {m:>3}: error {err:.6e} (reference m = {})",
                report.m_ref
            );
        }
        println!("wrote {}", file.display());
        println!("pass: {}", report.pass);
    }
    Ok(if report.pass { 0 } else { 1 })
}

/// Creates the run directory and writes the manifest that pins the effective
/// configuration, so a run can be reproduced from its outputs alone.
fn open_run_dir(cli: &Cli, config: &RunConfig, study: Option<&str>) -> Result<RunDir, CliError> {
    let base = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let canonical = config.canonical_text();
    let run = RunDir::create(&base, &canonical)?;
    let model = config.model.resolve()?;
    run.write_manifest(&Manifest {
        model_id: model.id.clone(),
        params: config.params.clone(),
        cov1: config.cov1.clone(),
        cov2: config.cov2.clone(),
        config_sha256: config_digest(&canonical),
        study: study.map(|s| s.to_string()),
    })?;
    run.write_config(&canonical)?;
    Ok(run)
}

fn finish_order_study(
    cli: &Cli,
    kind: &str,
    report: &ErrorReport,
    band: (f64, f64),
    run: &RunDir,
    files: &[PathBuf],
) -> Result<u8, CliError> {
    let in_band = report.fitted_order >= band.0 && report.fitted_order <= band.1;
    if cli.json {
        println!(
            "{}",
            serde_json::json!({
                "run_dir": run.path(),
                "study": kind,
                "fitted_order": report.fitted_order,
                "ci": [report.order_ci.0, report.order_ci.1],
                "band": [band.0, band.1],
                "dt_bias": report.bias_probe.dt_bias,
                "dt_bias_reference": report.bias_probe.reference,
                "pass": in_band,
                "files": files,
            })
        );
    } else {
        println!("run dir: {}", run.path().display());
        println!(
            "{kind} study: fitted order {:.4}, 95% ci [{:.4}, {:.4}]",
            report.fitted_order, report.order_ci.0, report.order_ci.1
        );
        println!(
            "step-halving shift {:.3e} against reference {:.3e}",
            report.bias_probe.dt_bias, report.bias_probe.reference
        );
        for file in files {
            println!("wrote {}", file.display());
        }
        println!("pass: {in_band} (band [{:.2}, {:.2}])", band.0, band.1);
    }
    Ok(if in_band { 0 } else { 1 })
}

/// Reads a coefficient CSV: one value per line in mode order, or `mode,value`
/// rows (1-based modes, any order).  A non-numeric first line is treated as a
/// header.
fn read_coeff_csv(path: &Path, m: usize) -> Result<SineField, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut coeffs = vec![0.0f64; m];
    let mut sequential = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| -> Option<f64> { s.parse::<f64>().ok() };
        match fields.as_slice() {
            [value] => {
                let Some(v) = parse(value) else {
                    if lineno == 0 {
                        continue;
                    }
                    return Err(bad_csv(path, lineno, line));
                };
                if sequential >= m {
                    return Err(CliError::Config(format!(
                        "{}: more than {m} coefficient rows",
                        path.display()
                    )));
                }
                coeffs[sequential] = v;
                sequential += 1;
            }
            [mode, value] => {
                let (Some(k), Some(v)) = (mode.parse::<usize>().ok(), parse(value)) else {
                    if lineno == 0 {
                        continue;
                    }
                    return Err(bad_csv(path, lineno, line));
                };
                if k == 0 || k > m {
                    return Err(CliError::Config(format!(
                        "{}: mode {k} outside 1..={m}",
                        path.display()
                    )));
                }
                coeffs[k - 1] = v;
            }
            _ => return Err(bad_csv(path, lineno, line)),
        }
    }
    Ok(SineField::new(coeffs)?)
}

fn bad_csv(path: &Path, lineno: usize, line: &str) -> CliError {
    CliError::Config(format!(
        "{} line {}: expected 'value' or 'mode,value', got '{line}'",
        path.display(),
        lineno + 1
    ))
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Core(CoreError::Json(e))
}
