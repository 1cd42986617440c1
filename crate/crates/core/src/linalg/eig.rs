//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the SPD
//! inverse square root built on it.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const OFF_DIAG_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;
const SPD_MIN_EIGENVALUE: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix: `a = V diag(values) V^T`, values ascending,
/// eigenvectors in the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEig {
    /// `V f(Λ) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, &l) in mapped.iter().enumerate() {
                    s += self.vectors.get(i, k) * l * self.vectors.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }
}

fn off_diag_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm drops
/// below `1e-14 * |a|_F`, giving up after 100 sweeps.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::Dimension {
            op: "sym_eig",
            expected: (a.rows(), a.rows()),
            got: a.shape(),
        });
    }
    let n = a.rows();
    let scale = a.frob_norm();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Shape(format!(
            "sym_eig requires a symmetric matrix (max asymmetry {asym:e})"
        )));
    }

    let mut m = a.symmetric_part()?;
    let mut v = Matrix::identity(n);
    let threshold = OFF_DIAG_TOL * scale;

    let mut sweeps = 0;
    loop {
        let off = off_diag_norm(&m);
        if off <= threshold {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::Convergence { sweeps, off_norm: off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                // Golub & Van Loan sym.schur2: rotation zeroing (p, q).
                let tau = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_c, v.get(r, old_c));
        }
    }
    Ok(SymEig { values, vectors })
}

/// Applies `J^T m J` and `v J` for the Givens rotation in the `(p, q)` plane.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m.get(k, p);
        let mkq = m.get(k, q);
        m.set(k, p, c * mkp - s * mkq);
        m.set(k, q, s * mkp + c * mkq);
    }
    for k in 0..n {
        let mpk = m.get(p, k);
        let mqk = m.get(q, k);
        m.set(p, k, c * mpk - s * mqk);
        m.set(q, k, s * mpk + c * mqk);
    }
    m.set(p, q, 0.0);
    m.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// `a^{-1/2}` for symmetric positive definite `a`, as `V Λ^{-1/2} V^T`.
pub fn spd_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    let min = eig.values.first().copied().unwrap_or(1.0);
    if min <= SPD_MIN_EIGENVALUE {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}
