//! Invariant suite behind the `verify` command.
//!
//! Every check draws its own seeded instances and reports the worst observed
//! value against a fixed tolerance.

pub mod gradcheck;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::optim::{AdamConfig, ParamSlot};
use crate::rng::{derive_seed, Rng};
use crate::stiefel::{
    orthonormality_residual, project_to_tangent, random_point, random_tangent, retract, tangency_residual,
    StiefelPoint, TangentVector,
};

/// A retraction returning the raw matrix, so faulty ones can be measured.
pub type RetractFn = fn(&StiefelPoint, &TangentVector) -> Result<Matrix>;

pub fn library_retract(theta: &StiefelPoint, xi: &TangentVector) -> Result<Matrix> {
    Ok(retract(theta, xi)?.into_matrix())
}

pub const MAX_N: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub note: String,
}

impl CheckResult {
    fn from_worst(name: &'static str, cases: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: worst < tolerance,
            cases,
            worst,
            tolerance,
            note: String::new(),
        }
    }

    fn failed(name: &'static str, cases: usize, tolerance: f64, note: String) -> Self {
        Self {
            name,
            passed: false,
            cases,
            worst: f64::INFINITY,
            tolerance,
            note,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Instances for the manifold checks.
    pub cases: usize,
    /// Instances per gradient check.
    pub grad_cases: usize,
    pub retract: RetractFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 1000,
            grad_cases: 50,
            retract: library_retract,
        }
    }
}

fn random_shape(rng: &mut Rng) -> (usize, usize) {
    let n = 1 + rng.below(MAX_N);
    let p = 1 + rng.below(n);
    (n, p)
}

/// `10^u` with `u` uniform in `[lo, hi)`.
fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(lo + (hi - lo) * rng.uniform())
}

/// Projection orthogonality: `|tr((grad − G)^T grad)| / (1 + ‖G‖²)`.
pub fn theorem1_projection(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let g = rng.normal_matrix(n, p).scale(log_uniform(&mut rng, -1.0, 1.0));
        let grad = project_to_tangent(&theta, &g)?.into_matrix();
        let v = grad.sub(&g)?.frob_dot(&grad)?.abs() / (1.0 + g.frob_norm().powi(2));
        worst = worst.max(v);
    }
    Ok(CheckResult::from_worst("theorem1_projection", cases, worst, 1e-8))
}

/// `‖Θ^T grad + grad^T Θ‖_F`.
pub fn theorem1_tangency(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let g = rng.normal_matrix(n, p).scale(log_uniform(&mut rng, -1.0, 1.0));
        let grad = project_to_tangent(&theta, &g)?;
        worst = worst.max(tangency_residual(theta.matrix(), grad.matrix())?);
    }
    Ok(CheckResult::from_worst("theorem1_tangency", cases, worst, 1e-10))
}

/// `‖P(aG1 + bG2) − aP(G1) − bP(G2)‖ / (1 + |a|‖G1‖ + |b|‖G2‖)`.
pub fn projection_linearity(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let (g1, g2) = (rng.normal_matrix(n, p), rng.normal_matrix(n, p));
        let (a, b) = (3.0 * rng.normal(), 3.0 * rng.normal());
        let combo = g1.scale(a).add(&g2.scale(b))?;
        let lhs = project_to_tangent(&theta, &combo)?.into_matrix();
        let rhs = project_to_tangent(&theta, &g1)?
            .into_matrix()
            .scale(a)
            .add(&project_to_tangent(&theta, &g2)?.into_matrix().scale(b))?;
        let scale = 1.0 + a.abs() * g1.frob_norm() + b.abs() * g2.frob_norm();
        worst = worst.max(lhs.sub(&rhs)?.frob_norm() / scale);
    }
    Ok(CheckResult::from_worst("projection_linearity", cases, worst, 1e-10))
}

/// `‖P(P(G)) − P(G)‖ / (1 + ‖G‖)`.
pub fn projection_idempotence(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let g = rng.normal_matrix(n, p);
        let once = project_to_tangent(&theta, &g)?.into_matrix();
        let twice = project_to_tangent(&theta, &once)?.into_matrix();
        worst = worst.max(twice.sub(&once)?.frob_norm() / (1.0 + g.frob_norm()));
    }
    Ok(CheckResult::from_worst("projection_idempotence", cases, worst, 1e-10))
}

/// `‖R^T R − I‖_F` for retractions of random tangents of varied length.
pub fn theorem2_orthonormality(seed: u64, cases: usize, retract_fn: RetractFn) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let xi = random_tangent(&theta, &mut rng)?.scaled(log_uniform(&mut rng, -3.0, 1.0));
        match retract_fn(&theta, &xi) {
            Ok(r) => worst = worst.max(orthonormality_residual(&r)),
            Err(e) => {
                return Ok(CheckResult::failed(
                    "theorem2_orthonormality",
                    cases,
                    1e-10,
                    e.to_string(),
                ))
            }
        }
    }
    let mut r = CheckResult::from_worst("theorem2_orthonormality", cases, worst, 1e-10);
    r.passed &= worst.is_finite();
    Ok(r)
}

/// `‖R(tΞ) − (Θ + tΞ)‖ / t²` at `t = 1e-2, 1e-3, 1e-4`; reports the largest
/// max/min ratio over instances, which must stay below 4.
pub fn retraction_first_order(seed: u64, cases: usize, retract_fn: RetractFn) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, p) = random_shape(&mut rng);
        let theta = random_point(n, p, &mut rng)?;
        let xi = random_tangent(&theta, &mut rng)?;
        let mut ratios = Vec::with_capacity(3);
        for t in [1e-2, 1e-3, 1e-4] {
            let step = xi.scaled(t);
            let r = match retract_fn(&theta, &step) {
                Ok(r) => r,
                Err(e) => return Ok(CheckResult::failed("retraction_first_order", cases, 4.0, e.to_string())),
            };
            let linear = theta.matrix().add(step.matrix())?;
            ratios.push(r.sub(&linear)?.frob_norm() / (t * t));
        }
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        // A tangent with Ξ^TΞ = 0 has no second-order term at all.
        let spread = if hi == 0.0 { 1.0 } else { hi / lo };
        worst = worst.max(spread);
    }
    Ok(CheckResult::from_worst("retraction_first_order", cases, worst, 4.0))
}

/// Drift `‖Θ^TΘ − I‖_F` after 1000 random-gradient steps of each optimizer.
pub fn optimizer_drift(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for radam in [false, true] {
        let mut slot = ParamSlot::stiefel(random_point(12, 5, &mut rng)?);
        for _ in 0..1000 {
            let g = rng.normal_matrix(12, 5);
            let res = if radam {
                slot.riemannian_adam_step(&g, 0.05, AdamConfig::default())
            } else {
                slot.rsgd_step(&g, 0.05)
            };
            if let Err(e) = res {
                return Ok(CheckResult::failed("optimizer_drift", 2000, 1e-8, e.to_string()));
            }
        }
        worst = worst.max(orthonormality_residual(slot.value()));
    }
    Ok(CheckResult::from_worst("optimizer_drift", 2000, worst, 1e-8))
}

/// One small Riemannian step on `−tr(Θ^T A Θ)` never increases the objective.
/// Reports the largest increase seen (must be below 0).
pub fn rsgd_descent(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cases {
        let n = 2 + rng.below(10);
        let p = 1 + rng.below(n - 1);
        let g = rng.normal_matrix(n, n);
        let a = g.add(&g.transpose())?.scale(0.5);
        let f = |t: &Matrix| -> Result<f64> { Ok(-t.t_matmul(&a.matmul(t)?)?.trace()?) };
        let mut slot = ParamSlot::stiefel(random_point(n, p, &mut rng)?);
        let before = f(slot.value())?;
        slot.rsgd_step(&a.matmul(slot.value())?.scale(-2.0), 1e-3)?;
        worst = worst.max(f(slot.value())? - before);
    }
    let mut r = CheckResult::from_worst("rsgd_descent", cases, worst, 0.0);
    r.note = "largest objective change after one step".into();
    Ok(r)
}

fn gradient_result(name: &'static str, checks: Result<Vec<gradcheck::InstanceCheck>>) -> CheckResult {
    match checks {
        Ok(c) => {
            let worst = c.iter().map(|i| i.worst()).fold(0.0, f64::max);
            let mut r = CheckResult::from_worst(name, c.len(), worst, gradcheck::FD_TOL);
            if let Some(bad) = c.iter().find(|i| i.worst() >= gradcheck::FD_TOL) {
                r.note = bad.label.clone();
            }
            r
        }
        Err(e) => CheckResult::failed(name, 0, gradcheck::FD_TOL, e.to_string()),
    }
}

pub fn gradient_omlp(seed: u64, cases: usize) -> CheckResult {
    gradient_result("gradient_omlp", gradcheck::omlp_instances(seed, cases))
}

pub fn gradient_dwfc(seed: u64, cases: usize) -> CheckResult {
    gradient_result("gradient_dwfc", gradcheck::dwfc_instances(seed, cases))
}

pub fn gradient_wpnce(seed: u64, cases: usize) -> CheckResult {
    gradient_result("gradient_wpnce", gradcheck::wpnce_instances(seed, cases))
}

/// Runs every check. Sub-seeds are derived from `opts.seed`.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let s = |k: u64| derive_seed(opts.seed, k);
    let wrap = |name: &'static str, tolerance: f64, r: Result<CheckResult>| {
        r.unwrap_or_else(|e| CheckResult::failed(name, 0, tolerance, e.to_string()))
    };
    vec![
        wrap("theorem1_projection", 1e-8, theorem1_projection(s(1), opts.cases)),
        wrap("theorem1_tangency", 1e-10, theorem1_tangency(s(2), opts.cases)),
        wrap(
            "projection_linearity",
            1e-10,
            projection_linearity(s(3), opts.cases / 10),
        ),
        wrap(
            "projection_idempotence",
            1e-10,
            projection_idempotence(s(4), opts.cases / 10),
        ),
        wrap(
            "theorem2_orthonormality",
            1e-10,
            theorem2_orthonormality(s(5), opts.cases, opts.retract),
        ),
        wrap(
            "retraction_first_order",
            4.0,
            retraction_first_order(s(6), opts.cases / 10, opts.retract),
        ),
        wrap("optimizer_drift", 1e-8, optimizer_drift(s(7))),
        wrap("rsgd_descent", 0.0, rsgd_descent(s(8), opts.cases / 10)),
        gradient_omlp(s(9), opts.grad_cases),
        gradient_dwfc(s(10), opts.grad_cases),
        gradient_wpnce(s(11), opts.grad_cases),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_retraction(theta: &StiefelPoint, xi: &TangentVector) -> Result<Matrix> {
        theta.matrix().add(xi.matrix())
    }

    #[test]
    fn small_suite_passes() {
        let opts = VerifyOptions {
            cases: 100,
            grad_cases: 6,
            ..Default::default()
        };
        for r in run_suite(&opts) {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn skipped_retraction_fails_orthonormality() {
        let r = theorem2_orthonormality(1, 50, no_retraction).unwrap();
        assert!(!r.passed);
        assert_eq!(r.name, "theorem2_orthonormality");
    }
}
