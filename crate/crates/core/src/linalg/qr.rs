use super::{dot, Matrix};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;

/// Orthonormal basis `Q` of the column span of `a` (thin QR with `diag(R) >= 0`).
///
/// Modified Gram-Schmidt with one re-orthogonalization pass per column, which
/// keeps `|Q^TQ - I|` at roundoff level. A pivot below `1e-12 * |a|_F` is
/// reported as rank deficiency.
pub fn qr_orthonormalize(a: &Matrix) -> Result<Matrix> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::Dimension {
            op: "qr_orthonormalize",
            expected: (p, p),
            got: (n, p),
        });
    }
    let scale = a.frob_norm();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let mut v = a.col(j);
        for _pass in 0..2 {
            for q in &cols {
                let r = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= r * qi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(norm > PIVOT_TOL * scale) {
            return Err(Error::Rank { column: j, pivot: norm });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    let mut q = Matrix::zeros(n, p);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            q.set(i, j, x);
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn ortho_residual(q: &Matrix) -> f64 {
        q.t_matmul(q)
            .unwrap()
            .sub(&Matrix::identity(q.cols()))
            .unwrap()
            .frob_norm()
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let e = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(qr_orthonormalize(&e).unwrap(), e);
    }

    #[test]
    fn gram_schmidt_hand_case() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let q = qr_orthonormalize(&a).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expect = Matrix::from_rows(&[[h, 0.0], [h, 0.0], [0.0, 1.0]]);
        assert!(q.sub(&expect).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn random_tall_matrix() {
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rng.normal_matrix(16, 4);
            let q = qr_orthonormalize(&a).unwrap();
            assert!(ortho_residual(&q) < 1e-12);
            // Span preserved and diag(R) = diag(Q^T A) nonnegative.
            let r = q.t_matmul(&a).unwrap();
            let back = q.matmul(&r).unwrap();
            assert!(back.sub(&a).unwrap().frob_norm() < 1e-12 * a.frob_norm());
            for i in 0..4 {
                assert!(r.get(i, i) > 0.0);
            }
        }
    }

    #[test]
    fn rank_deficient() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        assert!(matches!(qr_orthonormalize(&a), Err(Error::Rank { column: 1, .. })));
        assert!(matches!(
            qr_orthonormalize(&Matrix::zeros(3, 1)),
            Err(Error::Rank { column: 0, .. })
        ));
    }

    #[test]
    fn wide_rejected() {
        assert!(matches!(
            qr_orthonormalize(&Matrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }
}
