//! Leading-subspace demo: minimize `f(Θ) = −tr(Θ^T A Θ)` over St(p, n).
//!
//! The optimum is minus the sum of the `p` largest eigenvalues of `A`, which
//! the symmetric eigensolver provides independently.

use crate::decouple::StiefelOptimizer;
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::optim::{AdamConfig, ParamSlot};
use crate::rng::Rng;
use crate::stiefel::{orthonormality_residual, random_point};

pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RayleighConfig {
    pub n: usize,
    pub p: usize,
    pub steps: usize,
    pub gamma: f64,
    pub optimizer: StiefelOptimizer,
    pub seed: u64,
    /// Use `diag(values)` instead of a random symmetric matrix; fixes `n`.
    pub diag: Option<Vec<f64>>,
    pub tol: f64,
}

impl Default for RayleighConfig {
    fn default() -> Self {
        Self {
            n: 8,
            p: 3,
            steps: 10_000,
            gamma: 1e-2,
            optimizer: StiefelOptimizer::Rsgd,
            seed: 0,
            diag: None,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayleighReport {
    pub n: usize,
    pub p: usize,
    pub optimizer: StiefelOptimizer,
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub optimum: f64,
    /// `final_objective − optimum`, nonnegative up to rounding.
    pub gap: f64,
    /// First step after which the gap was within `tol`.
    pub steps_to_tol: Option<usize>,
    pub drift: f64,
}

impl RayleighReport {
    pub fn converged(&self, tol: f64) -> bool {
        self.gap.abs() <= tol
    }
}

pub fn objective(a: &Matrix, theta: &Matrix) -> Result<f64> {
    Ok(-theta.t_matmul(&a.matmul(theta)?)?.trace()?)
}

/// Minus the sum of the `p` largest eigenvalues.
pub fn optimum(a: &Matrix, p: usize) -> Result<f64> {
    let eig = sym_eig(a)?;
    Ok(-eig.values.iter().rev().take(p).sum::<f64>())
}

fn problem_matrix(cfg: &RayleighConfig, rng: &mut Rng) -> Matrix {
    match &cfg.diag {
        Some(d) => Matrix::from_diag(d),
        None => {
            let g = rng.normal_matrix(cfg.n, cfg.n);
            let mut a = g.add(&g.transpose()).expect("square").scale(0.5);
            // exact symmetry
            for i in 0..cfg.n {
                for j in 0..i {
                    a.set(i, j, a.get(j, i));
                }
            }
            a
        }
    }
}

pub fn run_rayleigh(cfg: &RayleighConfig) -> Result<RayleighReport> {
    let n = cfg.diag.as_ref().map_or(cfg.n, |d| d.len());
    let p = cfg.p;
    if p == 0 || n < p {
        return Err(Error::Parameter(format!("need 1 <= p <= n, got n = {n}, p = {p}")));
    }
    if !(cfg.gamma > 0.0) || !cfg.gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be positive, got {}", cfg.gamma)));
    }
    let cfg = RayleighConfig { n, ..cfg.clone() };
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let a = problem_matrix(&cfg, &mut rng);
    let best = optimum(&a, p)?;
    let mut slot = ParamSlot::stiefel(random_point(n, p, &mut rng)?);
    let initial = objective(&a, slot.value())?;
    let mut steps_to_tol = ((initial - best).abs() <= cfg.tol).then_some(0);
    let adam = AdamConfig::default();

    for step in 1..=cfg.steps {
        let grad = a.matmul(slot.value())?.scale(-2.0);
        match cfg.optimizer {
            StiefelOptimizer::Rsgd => slot.rsgd_step(&grad, cfg.gamma)?,
            StiefelOptimizer::Radam => slot.riemannian_adam_step(&grad, cfg.gamma, adam)?,
        }
        let f = objective(&a, slot.value())?;
        if !f.is_finite() {
            return Err(Error::NonFinite("rayleigh objective"));
        }
        if (f - best).abs() <= cfg.tol {
            steps_to_tol.get_or_insert(step);
        } else {
            steps_to_tol = None;
        }
    }
    let final_objective = objective(&a, slot.value())?;
    Ok(RayleighReport {
        n,
        p,
        optimizer: cfg.optimizer,
        steps: cfg.steps,
        initial_objective: initial,
        final_objective,
        optimum: best,
        gap: final_objective - best,
        steps_to_tol,
        drift: orthonormality_residual(slot.value()),
    })
}
