//! The Stiefel manifold `St(p, n) = { Θ ∈ R^{n×p} : Θ^TΘ = I_p }`.
//!
//! Tangent space at Θ: `{ Z : Θ^TZ + Z^TΘ = 0 }`, with the embedded metric
//! `<Z1, Z2> = tr(Z1^T Z2)`.
//!
//! * [`project_to_tangent`] maps a Euclidean gradient `G` to
//!   `G - ½ΘΘ^TG - ½ΘG^TΘ`, its orthogonal projection onto the tangent space.
//! * [`retract`] maps a tangent displacement `Ξ` back to the manifold with
//!   `(Θ + Ξ)(I + Ξ^TΞ)^{-1/2}`. Since `Θ^TΞ` is skew,
//!   `(Θ+Ξ)^T(Θ+Ξ) = I + Ξ^TΞ`, so the result has orthonormal columns.

use crate::error::{Error, Result};
use crate::linalg::{qr_orthonormalize, spd_inv_sqrt, Matrix};
use crate::rng::Rng;

/// Orthonormality tolerance enforced when constructing a point.
pub const POINT_TOL: f64 = 1e-8;
/// Tangency tolerance enforced when constructing a tangent vector.
pub const TANGENT_TOL: f64 = 1e-8;

/// `|Θ^TΘ - I|_F`.
pub fn orthonormality_residual(theta: &Matrix) -> f64 {
    let gram = theta.t_matmul(theta).expect("Θ^TΘ is always conformable");
    gram.sub(&Matrix::identity(theta.cols()))
        .expect("square gram")
        .frob_norm()
}

/// `|Θ^TZ + Z^TΘ|_F`.
pub fn tangency_residual(theta: &Matrix, z: &Matrix) -> Result<f64> {
    let a = theta.t_matmul(z)?;
    Ok(a.add(&a.transpose())?.frob_norm())
}

/// An `n × p` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    theta: Matrix,
}

impl StiefelPoint {
    /// Checked constructor: rejects points farther than `1e-8` from the manifold.
    pub fn new(theta: Matrix) -> Result<Self> {
        Self::with_repair(theta, false)
    }

    /// Like [`StiefelPoint::new`], but when `repair` is set an off-manifold
    /// input is re-orthonormalized with QR instead of rejected.
    pub fn with_repair(theta: Matrix, repair: bool) -> Result<Self> {
        if theta.rows() < theta.cols() || theta.cols() == 0 {
            return Err(Error::Dimension {
                op: "StiefelPoint::new",
                expected: (theta.cols().max(1), theta.cols().max(1)),
                got: theta.shape(),
            });
        }
        let residual = orthonormality_residual(&theta);
        if residual < POINT_TOL {
            return Ok(Self { theta });
        }
        if repair {
            return Ok(Self {
                theta: qr_orthonormalize(&theta)?,
            });
        }
        Err(Error::NotOnManifold { residual })
    }

    /// First `p` columns of the `n × n` identity.
    pub fn canonical(n: usize, p: usize) -> Result<Self> {
        if p == 0 || n < p {
            return Err(Error::Dimension {
                op: "StiefelPoint::canonical",
                expected: (p, p),
                got: (n, p),
            });
        }
        let mut m = Matrix::zeros(n, p);
        for i in 0..p {
            m.set(i, i, 1.0);
        }
        Ok(Self { theta: m })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.theta
    }

    pub fn into_matrix(self) -> Matrix {
        self.theta
    }

    /// `(n, p)`.
    pub fn dims(&self) -> (usize, usize) {
        self.theta.shape()
    }

    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.theta)
    }
}

/// A tangent vector `Z` at a base point `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    at: StiefelPoint,
    z: Matrix,
}

impl TangentVector {
    /// Checked constructor: `|Θ^TZ + Z^TΘ|_F < 1e-8`.
    pub fn new(at: StiefelPoint, z: Matrix) -> Result<Self> {
        if z.shape() != at.dims() {
            return Err(Error::Dimension {
                op: "TangentVector::new",
                expected: at.dims(),
                got: z.shape(),
            });
        }
        let residual = tangency_residual(at.matrix(), &z)?;
        if residual >= TANGENT_TOL {
            return Err(Error::NotTangent { residual });
        }
        Ok(Self { at, z })
    }

    pub fn zero(at: &StiefelPoint) -> Self {
        let (n, p) = at.dims();
        Self {
            at: at.clone(),
            z: Matrix::zeros(n, p),
        }
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.at
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }

    pub fn into_matrix(self) -> Matrix {
        self.z
    }

    /// `s · Z` at the same base point.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            at: self.at.clone(),
            z: self.z.scale(s),
        }
    }
}

/// Riemannian gradient `G - ½ΘΘ^TG - ½ΘG^TΘ`.
pub fn project_to_tangent(theta: &StiefelPoint, euclid_grad: &Matrix) -> Result<TangentVector> {
    let th = theta.matrix();
    if euclid_grad.shape() != th.shape() {
        return Err(Error::Dimension {
            op: "project_to_tangent",
            expected: th.shape(),
            got: euclid_grad.shape(),
        });
    }
    // ΘΘ^TG + ΘG^TΘ = Θ (Θ^TG + G^TΘ) = 2 Θ sym(Θ^TG)
    let tg = th.t_matmul(euclid_grad)?;
    let sym = tg.symmetric_part()?;
    let mut z = euclid_grad.clone();
    z.axpy(-1.0, &th.matmul(&sym)?)?;
    Ok(TangentVector { at: theta.clone(), z })
}

/// Retraction `(Θ + Ξ)(I + Ξ^TΞ)^{-1/2}`.
///
/// `xi` must be based at `theta`. The normalizer is formed from the Gram
/// matrix of `Θ + Ξ` itself, which equals `I + Ξ^TΞ` when `Θ^TΘ = I` and
/// `Ξ` is tangent, and keeps rounding errors from compounding over steps.
pub fn retract(theta: &StiefelPoint, xi: &TangentVector) -> Result<StiefelPoint> {
    if xi.at != *theta {
        return Err(Error::BasePoint);
    }
    if xi.z.max_abs() == 0.0 {
        return Ok(theta.clone());
    }
    let displaced = theta.matrix().add(&xi.z)?;
    if cfg!(feature = "skip-retraction") {
        return Ok(StiefelPoint { theta: displaced });
    }
    let gram = displaced.t_matmul(&displaced)?.symmetric_part()?;
    let factor = spd_inv_sqrt(&gram)?;
    Ok(StiefelPoint {
        theta: displaced.matmul(&factor)?,
    })
}

/// Embedded metric `tr(Z1^T Z2)`.
pub fn inner(z1: &TangentVector, z2: &TangentVector) -> Result<f64> {
    if z1.at != z2.at {
        return Err(Error::BasePoint);
    }
    z1.z.frob_dot(&z2.z)
}

/// QR orthonormalization of an i.i.d. standard normal `n × p` matrix.
pub fn random_point(n: usize, p: usize, rng: &mut Rng) -> Result<StiefelPoint> {
    if p == 0 || n < p {
        return Err(Error::Dimension {
            op: "random_point",
            expected: (p.max(1), p.max(1)),
            got: (n, p),
        });
    }
    let g = rng.normal_matrix(n, p);
    StiefelPoint::new(qr_orthonormalize(&g)?)
}

/// Projection of an i.i.d. standard normal matrix onto the tangent space at `theta`.
pub fn random_tangent(theta: &StiefelPoint, rng: &mut Rng) -> Result<TangentVector> {
    let (n, p) = theta.dims();
    project_to_tangent(theta, &rng.normal_matrix(n, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(rows: &[&[f64]]) -> StiefelPoint {
        StiefelPoint::new(Matrix::from_rows(rows)).unwrap()
    }

    fn det(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut d = 1.0;
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&i, &j| a.get(i, c).abs().total_cmp(&a.get(j, c).abs()))
                .unwrap();
            if piv != c {
                for k in 0..n {
                    let t = a.get(c, k);
                    a.set(c, k, a.get(piv, k));
                    a.set(piv, k, t);
                }
                d = -d;
            }
            let p = a.get(c, c);
            d *= p;
            for r in (c + 1)..n {
                let f = a.get(r, c) / p;
                for k in c..n {
                    a.set(r, k, a.get(r, k) - f * a.get(c, k));
                }
            }
        }
        d
    }

    #[test]
    fn square_projection_is_skew_part() {
        let mut rng = Rng::seed_from_u64(1);
        let theta = StiefelPoint::canonical(4, 4).unwrap();
        let g = rng.normal_matrix(4, 4);
        let z = project_to_tangent(&theta, &g).unwrap();
        let skew = g.sub(&g.transpose()).unwrap().scale(0.5);
        assert!(z.matrix().sub(&skew).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn radial_component_removed() {
        let theta = point(&[&[1.0], &[0.0]]);
        let z = project_to_tangent(&theta, &Matrix::from_rows(&[[3.0], [4.0]])).unwrap();
        assert_eq!(z.matrix(), &Matrix::from_rows(&[[0.0], [4.0]]));
    }

    #[test]
    fn projection_idempotent() {
        let mut rng = Rng::seed_from_u64(2);
        let theta = random_point(9, 4, &mut rng).unwrap();
        let z = random_tangent(&theta, &mut rng).unwrap();
        let again = project_to_tangent(&theta, z.matrix()).unwrap();
        assert!(again.matrix().sub(z.matrix()).unwrap().frob_norm() < 1e-12);
    }

    #[test]
    fn projection_shape_mismatch() {
        let theta = StiefelPoint::canonical(3, 2).unwrap();
        assert!(matches!(
            project_to_tangent(&theta, &Matrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn retract_zero_is_identity() {
        let mut rng = Rng::seed_from_u64(3);
        let theta = random_point(6, 3, &mut rng).unwrap();
        let r = retract(&theta, &TangentVector::zero(&theta)).unwrap();
        assert_eq!(r, theta);
    }

    #[test]
    fn retract_p1_normalizes() {
        let theta = point(&[&[1.0], &[0.0]]);
        let xi = TangentVector::new(theta.clone(), Matrix::from_rows(&[[0.0], [1.0]])).unwrap();
        let r = retract(&theta, &xi).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(r.matrix().sub(&Matrix::from_rows(&[[h], [h]])).unwrap().max_abs() < 1e-15);
    }

    #[cfg(not(feature = "skip-retraction"))]
    #[test]
    fn retract_random_orthonormal() {
        let mut rng = Rng::seed_from_u64(4);
        let theta = random_point(12, 5, &mut rng).unwrap();
        let xi = random_tangent(&theta, &mut rng).unwrap();
        let r = retract(&theta, &xi).unwrap();
        assert!(r.residual() < 1e-10);
    }

    #[test]
    fn retract_wrong_base() {
        let mut rng = Rng::seed_from_u64(5);
        let a = random_point(5, 2, &mut rng).unwrap();
        let b = random_point(5, 2, &mut rng).unwrap();
        let xi = random_tangent(&b, &mut rng).unwrap();
        assert!(matches!(retract(&a, &xi), Err(Error::BasePoint)));
    }

    #[test]
    fn inner_examples() {
        let theta = point(&[&[1.0], &[0.0]]);
        let z1 = TangentVector::new(theta.clone(), Matrix::from_rows(&[[0.0], [1.0]])).unwrap();
        let z2 = TangentVector::new(theta.clone(), Matrix::from_rows(&[[0.0], [3.0]])).unwrap();
        assert_eq!(inner(&z1, &z2).unwrap(), 3.0);
        assert_eq!(inner(&z1, &TangentVector::zero(&theta)).unwrap(), 0.0);

        let mut rng = Rng::seed_from_u64(6);
        let t = random_point(7, 3, &mut rng).unwrap();
        let a = random_tangent(&t, &mut rng).unwrap();
        let b = random_tangent(&t, &mut rng).unwrap();
        assert_eq!(inner(&a, &b).unwrap(), inner(&b, &a).unwrap());
        assert!(inner(&a, &a).unwrap() >= 0.0);

        let other = random_point(7, 3, &mut rng).unwrap();
        let c = random_tangent(&other, &mut rng).unwrap();
        assert!(matches!(inner(&a, &c), Err(Error::BasePoint)));
    }

    #[test]
    fn random_point_square_is_orthogonal() {
        let mut rng = Rng::seed_from_u64(7);
        for n in 1..8 {
            let q = random_point(n, n, &mut rng).unwrap();
            assert!((det(q.matrix()).abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn random_point_deterministic() {
        let a = random_point(10, 3, &mut Rng::seed_from_u64(42)).unwrap();
        let b = random_point(10, 3, &mut Rng::seed_from_u64(42)).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.matrix()), bits(b.matrix()));
    }

    #[test]
    fn random_point_bad_dims() {
        let mut rng = Rng::seed_from_u64(8);
        assert!(matches!(random_point(2, 3, &mut rng), Err(Error::Dimension { .. })));
    }

    #[test]
    fn constructor_checks_and_repair() {
        let off = Matrix::from_rows(&[[1.0, 0.1], [0.0, 1.0], [0.0, 0.0]]);
        assert!(matches!(
            StiefelPoint::new(off.clone()),
            Err(Error::NotOnManifold { .. })
        ));
        let fixed = StiefelPoint::with_repair(off, true).unwrap();
        assert!(fixed.residual() < 1e-12);

        let theta = StiefelPoint::canonical(3, 2).unwrap();
        let not_tangent = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            TangentVector::new(theta, not_tangent),
            Err(Error::NotTangent { .. })
        ));
    }
}
