//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.

use std::fs;
use std::io;
use std::time::{Duration, Instant};

use orthodc_cli::{cmd_decouple, cmd_rayleigh, DecoupleArgs, RayleighArgs};
use orthodc_core::decouple::report::energy_ordering_holds;
use orthodc_core::decouple::Arm;
use orthodc_core::linalg::{sym_eig, Matrix};
use orthodc_core::verify::{
    gradient_dwfc, gradient_omlp, gradient_wpnce, library_retract, theorem1_projection, theorem1_tangency,
    theorem2_orthonormality,
};
use orthodc_core::wpnce::{wpnce_loss, EmbeddingBatch, WeightPair};
use orthodc_core::ExperimentReport;

const SEED: u64 = 20_251_015;

struct Outcome {
    passed: bool,
    detail: String,
}

fn within(passed: bool, elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let fast = elapsed.as_secs_f64() < limit_s;
    Outcome {
        passed: passed && fast,
        detail: format!("{detail}; {:.2} s (limit {limit_s} s)", elapsed.as_secs_f64()),
    }
}

fn projection_suite() -> Outcome {
    let start = Instant::now();
    let proj = theorem1_projection(SEED, 1000).expect("projection suite");
    let tang = theorem1_tangency(SEED + 1, 1000).expect("tangency suite");
    within(
        proj.passed && tang.passed && proj.cases == 1000 && tang.cases == 1000,
        start.elapsed(),
        5.0,
        format!(
            "1000 cases, worst |tr((grad-G)^T grad)|/(1+|G|^2) {:.2e}, worst tangency {:.2e}",
            proj.worst, tang.worst
        ),
    )
}

fn retraction_suite() -> Outcome {
    let start = Instant::now();
    let r = theorem2_orthonormality(SEED + 2, 1000, library_retract).expect("retraction suite");
    within(
        r.passed && r.cases == 1000,
        start.elapsed(),
        5.0,
        format!("1000 cases, worst |R^T R - I|_F {:.2e}", r.worst),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = [
        gradient_omlp(SEED, 50),
        gradient_dwfc(SEED, 50),
        gradient_wpnce(SEED, 50),
    ];
    let ok = checks.iter().all(|c| c.passed && c.cases == 50);
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.2e}", c.name, c.worst))
        .collect::<Vec<_>>()
        .join(", ");
    within(
        ok,
        start.elapsed(),
        30.0,
        format!("50 instances each, worst relative error: {detail}"),
    )
}

fn rayleigh() -> Outcome {
    let start = Instant::now();
    // Optimum from the eigensolver, not hard-coded.
    let eig = sym_eig(&Matrix::from_diag(&[5.0, 3.0, 1.0])).expect("eig");
    let optimum = -eig.values.iter().rev().take(2).sum::<f64>();
    let mut ok = (optimum + 8.0).abs() < 1e-12;
    let mut parts = vec![format!("oracle optimum {optimum}")];
    for opt in ["rsgd", "radam"] {
        let args = RayleighArgs {
            p: Some(2),
            steps: Some(10_000),
            gamma: Some(1e-2),
            optimizer: Some(opt.into()),
            diag: Some("5,3,1".into()),
            ..Default::default()
        };
        let r = cmd_rayleigh(&args, &mut io::sink()).expect("rayleigh run");
        let reached = (r.final_objective - optimum).abs() <= 1e-6 && r.steps_to_tol.is_some_and(|s| s <= 10_000);
        ok &= reached && r.drift < 1e-8;
        parts.push(format!(
            "{opt}: final {:.9}, within 1e-6 from step {:?}, drift {:.1e}",
            r.final_objective, r.steps_to_tol, r.drift
        ));
    }
    within(ok, start.elapsed(), 10.0, parts.join("; "))
}

fn hand_value() -> Outcome {
    let e = std::f64::consts::E;
    let oracle = -((e + 1.0) / ((e + 1.0) + (2.0 + e))).ln();
    let batch = EmbeddingBatch::new(
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        Matrix::from_rows(&[[1.0, 0.0]]),
        Matrix::from_rows(&[[0.0, 1.0]]),
    )
    .expect("batch");
    let w = WeightPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).expect("weights");
    let loss = wpnce_loss(&batch, &w, 1.0).expect("loss");
    Outcome {
        passed: (loss - oracle).abs() < 1e-5,
        detail: format!(
            "loss {loss:.7}, oracle -ln((e+1)/(3+2e)) = {oracle:.7}, |loss - oracle| {:.1e}; |loss - 0.81930| = {:.2e}",
            (loss - oracle).abs(),
            (loss - 0.81930).abs()
        ),
    }
}

fn decouple_run(dir: &std::path::Path) -> io::Result<Vec<ExperimentReport>> {
    let args = DecoupleArgs {
        out: dir.to_path_buf(),
        ..Default::default()
    };
    cmd_decouple(&args, &mut io::sink()).map_err(|e| io::Error::other(e.to_string()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "projection suite", projection_suite()),
        (2, "retraction suite", retraction_suite()),
        (3, "gradient oracle", gradients()),
        (4, "Rayleigh convergence", rayleigh()),
        (5, "WPNCE hand value", hand_value()),
    ];

    let first_dir = tmp.path().join("run_a");
    let start = Instant::now();
    let first = decouple_run(&first_dir);
    let first_time = start.elapsed();
    let reports = first.as_ref().map(Vec::as_slice).unwrap_or(&[]);
    let energy = |arm: Arm| {
        reports
            .iter()
            .find(|r| r.arm == arm)
            .map_or(f64::NAN, |r| r.offdiag_energy)
    };
    results.push((
        6,
        "decoupling ablation ordering",
        within(
            energy_ordering_holds(reports) == Some(true),
            first_time,
            120.0,
            format!(
                "offdiag_energy omlp {:.4} < penalty {:.4} < unconstrained {:.4}",
                energy(Arm::Omlp),
                energy(Arm::Penalty),
                energy(Arm::Unconstrained)
            ),
        ),
    ));

    results.push((
        7,
        "classifier self-supervision",
        match reports.iter().find(|r| r.arm == Arm::Omlp) {
            Some(r) => Outcome {
                passed: r.dwfc_accuracy >= 0.9 && r.heat_mass_ratio >= 2.0,
                detail: format!(
                    "omlp arm: dwfc_accuracy {:.4} (>= 0.9), heat_mass_ratio {:.3} (>= 2.0)",
                    r.dwfc_accuracy, r.heat_mass_ratio
                ),
            },
            None => Outcome {
                passed: false,
                detail: format!("benchmark did not run: {:?}", first.as_ref().err()),
            },
        },
    ));

    let second_dir = tmp.path().join("run_b");
    let identical = first.is_ok()
        && decouple_run(&second_dir).is_ok()
        && fs::read(first_dir.join("report.json")).ok() == fs::read(second_dir.join("report.json")).ok();
    results.push((
        8,
        "determinism",
        Outcome {
            passed: identical,
            detail: if identical {
                "two runs produced byte-identical report.json".into()
            } else {
                "report.json differs between runs".into()
            },
        },
    ));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n} {}: {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
