//! The three subcommands. Each writes human output to `out` and returns an
//! error whose [`CliError::exit_code`] is the process status.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use orthodc_core::decouple::report::{energy_ordering_holds, suite_json};
use orthodc_core::decouple::{run_arms, Arm, StiefelOptimizer, TrainOptions, UpdateMode};
use orthodc_core::linalg::csv::format_f64;
use orthodc_core::rayleigh::{run_rayleigh, RayleighConfig, RayleighReport};
use orthodc_core::verify::{run_suite, CheckResult, VerifyOptions};
use orthodc_core::{ExperimentReport, SyntheticConfig};
use serde_json::json;

use crate::config::{key_error, RunConfig, DECOUPLE_KEYS, RAYLEIGH_KEYS, VERIFY_KEYS};
use crate::error::{CliError, CliResult};

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

fn load(path: Option<&Path>, keys: &[crate::config::KeySpec]) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p, keys))
}

// ---- verify ----

#[derive(Debug, Clone, Default)]
pub struct VerifyArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cases: Option<usize>,
    pub grad_cases: Option<usize>,
}

pub fn verify_options(args: &VerifyArgs) -> CliResult<VerifyOptions> {
    let file = load(args.config.as_deref(), VERIFY_KEYS)?;
    let mut opts = VerifyOptions::default();
    opts.seed = args.seed.or(file.u64("seed")?).unwrap_or(opts.seed);
    opts.cases = args.cases.or(file.usize("cases")?).unwrap_or(opts.cases);
    opts.grad_cases = args.grad_cases.or(file.usize("grad_cases")?).unwrap_or(opts.grad_cases);
    if opts.cases == 0 || opts.grad_cases == 0 {
        return Err(CliError::Usage("cases and grad_cases must be positive".into()));
    }
    Ok(opts)
}

pub fn format_checks(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<26} {:>6} {:>12} {:>10}  {}\n",
        "check", "cases", "worst", "tolerance", "result"
    );
    for r in results {
        s.push_str(&format!(
            "{:<26} {:>6} {:>12.3e} {:>10.1e}  {}{}\n",
            r.name,
            r.cases,
            r.worst,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" },
            if r.note.is_empty() {
                String::new()
            } else {
                format!("  ({})", r.note)
            }
        ));
    }
    s
}

/// Runs the invariant suite; fails with the names of the failing checks.
pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> CliResult<Vec<CheckResult>> {
    let opts = verify_options(args)?;
    let start = Instant::now();
    let results = run_suite(&opts);
    emit(out, &format_checks(&results))?;
    emit(
        out,
        &format!(
            "seed {} finished in {:.1} s\n",
            opts.seed,
            start.elapsed().as_secs_f64()
        ),
    )?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.to_string())
        .collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Verification(failed))
    }
}

// ---- rayleigh ----

#[derive(Debug, Clone, Default)]
pub struct RayleighArgs {
    pub config: Option<PathBuf>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub optimizer: Option<String>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub diag: Option<String>,
}

fn parse_diag(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| key_error("diag", format!("not a real number: {t:?}")))
        })
        .collect()
}

pub fn rayleigh_config(args: &RayleighArgs) -> CliResult<RayleighConfig> {
    let file = load(args.config.as_deref(), RAYLEIGH_KEYS)?;
    let d = RayleighConfig::default();
    let optimizer = match args.optimizer.as_deref().or(file.str("optimizer")) {
        Some(s) => StiefelOptimizer::parse(s).map_err(|e| key_error("optimizer", e))?,
        None => d.optimizer,
    };
    let diag = match args.diag.as_deref().or(file.str("diag")) {
        Some(s) => Some(parse_diag(s)?),
        None => None,
    };
    Ok(RayleighConfig {
        n: args.n.or(file.usize("n")?).unwrap_or(d.n),
        p: args.p.or(file.usize("p")?).unwrap_or(d.p),
        steps: args.steps.or(file.usize("steps")?).unwrap_or(d.steps),
        gamma: args.gamma.or(file.real("gamma")).unwrap_or(d.gamma),
        optimizer,
        seed: args.seed.or(file.u64("seed")?).unwrap_or(d.seed),
        tol: args.tol.or(file.real("tol")).unwrap_or(d.tol),
        diag,
    })
}

pub fn rayleigh_json(r: &RayleighReport, tol: f64) -> serde_json::Value {
    json!({
        "n": r.n,
        "p": r.p,
        "optimizer": r.optimizer.name(),
        "steps": r.steps,
        "initial_objective": r.initial_objective,
        "final_objective": r.final_objective,
        "optimum": r.optimum,
        "gap": r.gap,
        "steps_to_tol": r.steps_to_tol,
        "tol": tol,
        "converged": r.converged(tol),
        "drift": r.drift,
    })
}

/// Minimizes `−tr(Θ^T A Θ)` and prints a JSON report.
pub fn cmd_rayleigh(args: &RayleighArgs, out: &mut dyn Write) -> CliResult<RayleighReport> {
    let cfg = rayleigh_config(args)?;
    let report = run_rayleigh(&cfg)?;
    let text = serde_json::to_string_pretty(&rayleigh_json(&report, cfg.tol)).expect("json");
    emit(out, &text)?;
    emit(out, "\n")?;
    Ok(report)
}

// ---- decouple ----

#[derive(Debug, Clone, Default)]
pub struct DecoupleArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub arms: Option<String>,
    pub optimizer: Option<String>,
    pub seed: Option<u64>,
}

pub fn parse_arms(text: &str) -> CliResult<Vec<Arm>> {
    let mut arms = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let arm = Arm::parse(part).map_err(|e| key_error("arms", e))?;
        if !arms.contains(&arm) {
            arms.push(arm);
        }
    }
    if arms.is_empty() {
        return Err(key_error("arms", "no arm selected"));
    }
    Ok(arms)
}

/// Resolves the benchmark config: defaults, then the file, then flags.
pub fn decouple_config(args: &DecoupleArgs) -> CliResult<(SyntheticConfig, Vec<Arm>)> {
    let f = load(args.config.as_deref(), DECOUPLE_KEYS)?;
    let d = SyntheticConfig::default();
    let optimizer = match args.optimizer.as_deref().or(f.str("optimizer")) {
        Some(s) => StiefelOptimizer::parse(s).map_err(|e| key_error("optimizer", e))?,
        None => d.optimizer,
    };
    let update = match f.str("update") {
        Some(s) => UpdateMode::parse(s).map_err(|e| key_error("update", e))?,
        None => d.update,
    };
    let cfg = SyntheticConfig {
        channels: f.usize("channels")?.unwrap_or(d.channels),
        positions: f.usize("positions")?.unwrap_or(d.positions),
        related: f.usize("related")?.unwrap_or(d.related),
        samples: f.usize("samples")?.unwrap_or(d.samples),
        mixing: f.real("mixing").unwrap_or(d.mixing),
        noise: f.real("noise").unwrap_or(d.noise),
        signal: f.real("signal").unwrap_or(d.signal),
        seed: args.seed.or(f.u64("seed")?).unwrap_or(d.seed),
        epochs: f.usize("epochs")?.unwrap_or(d.epochs),
        batch_size: f.usize("batch_size")?.unwrap_or(d.batch_size),
        layers: f.usize("layers")?.unwrap_or(d.layers),
        optimizer,
        lr: f.real("lr").unwrap_or(d.lr),
        dwfc_lr: f.real("dwfc_lr").unwrap_or(d.dwfc_lr),
        penalty_lambda: f.real("penalty_lambda").unwrap_or(d.penalty_lambda),
        tau: f.real("tau").unwrap_or(d.tau),
        detach_weights: f.bool("detach_weights").unwrap_or(d.detach_weights),
        update,
    };
    cfg.validate()?;
    let arms = match args.arms.as_deref().or(f.str("arms")) {
        Some(s) => parse_arms(s)?,
        None => Arm::ALL.to_vec(),
    };
    Ok((cfg, arms))
}

fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        if !entries.is_empty() && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        // Drop outputs of an earlier run so a failed run leaves none behind.
        for path in entries.iter().filter(|p| is_output(p)) {
            let removed = if path.is_dir() {
                fs::remove_dir_all(path)
            } else {
                fs::remove_file(path)
            };
            removed.map_err(|e| CliError::io(path, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn is_output(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    matches!(name, "report.json" | "loss_trace.csv" | "checkpoints")
        || (name.starts_with("cosine_sim") && name.ends_with(".csv"))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// All arms in one table: `arm,step,l_wpnce,l_ce`.
pub fn loss_trace_csv(reports: &[ExperimentReport]) -> String {
    let mut s = String::from("arm,step,l_wpnce,l_ce\n");
    for r in reports {
        for p in &r.loss_trace {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.arm.name(),
                p.step,
                format_f64(p.wpnce),
                format_f64(p.ce)
            ));
        }
    }
    s
}

pub fn summary_line(r: &ExperimentReport) -> String {
    format!(
        "{:<14} offdiag_energy {:.4} (init {:.4})  dwfc_accuracy {:.4}  heat_mass_ratio {:.3}  residual {:.1e}",
        r.arm.name(),
        r.offdiag_energy,
        r.initial_offdiag_energy,
        r.dwfc_accuracy,
        r.heat_mass_ratio,
        r.orthonormality_residual
    )
}

/// Trains the selected arms and writes `report.json`, `cosine_sim.csv`
/// (first arm), `cosine_sim_<arm>.csv` and `loss_trace.csv` into `args.out`.
pub fn cmd_decouple(args: &DecoupleArgs, out: &mut dyn Write) -> CliResult<Vec<ExperimentReport>> {
    let (cfg, arms) = decouple_config(args)?;
    prepare_out_dir(&args.out, args.force)?;
    let opts = TrainOptions {
        checkpoint_dir: Some(args.out.join("checkpoints")),
    };
    log::info!("training arms {:?} for {} epochs", arms, cfg.epochs);
    let reports = run_arms(&cfg, &arms, &opts)?;

    let mut json = serde_json::to_string_pretty(&suite_json(&cfg, &reports)).expect("json");
    json.push('\n');
    write_file(&args.out.join("report.json"), &json)?;
    write_file(&args.out.join("cosine_sim.csv"), &reports[0].cosine_csv())?;
    for r in &reports {
        write_file(
            &args.out.join(format!("cosine_sim_{}.csv", r.arm.name())),
            &r.cosine_csv(),
        )?;
    }
    write_file(&args.out.join("loss_trace.csv"), &loss_trace_csv(&reports))?;

    for r in &reports {
        emit(out, &format!("{}\n", summary_line(r)))?;
    }
    let order = match energy_ordering_holds(&reports) {
        Some(true) => "holds",
        Some(false) => "violated",
        None => "n/a (needs all three arms)",
    };
    emit(
        out,
        &format!("energy ordering omlp < penalty < unconstrained: {order}\n"),
    )?;
    emit(out, &format!("wrote {}\n", args.out.display()))?;
    Ok(reports)
}
