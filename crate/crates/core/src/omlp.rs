//! Orthogonally constrained MLP projection head.
//!
//! Each layer computes `x W + b` with `W` stored `d_in × d_out` and, for the
//! constrained head, `W^T W = I`. ReLU sits between layers; the last layer is
//! linear. The same network type also serves the unconstrained ablation arms,
//! where weights are free Euclidean parameters.

use crate::error::{Error, Result};
use crate::linalg::{qr_orthonormalize, Matrix};
use crate::optim::{ParamSlot, SlotKind};
use crate::rng::Rng;
use crate::stiefel::{orthonormality_residual, StiefelPoint};

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_WIDTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightConstraint {
    /// Weights live on the Stiefel manifold.
    Stiefel,
    /// Unconstrained weights (Gaussian init, variance `1/d_in`).
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoLinearLayer {
    pub weight: ParamSlot,
    pub bias: ParamSlot,
}

impl OrthoLinearLayer {
    pub fn d_in(&self) -> usize {
        self.weight.value().rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value().cols()
    }
}

/// Activations recorded by [`Omlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationTape {
    /// Input to each layer (after the previous ReLU).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

impl ActivationTape {
    /// Smallest `|pre-activation|` feeding a ReLU; infinite for one layer.
    pub fn min_abs_preactivation(&self) -> f64 {
        let n = self.pre.len();
        self.pre[..n.saturating_sub(1)]
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Euclidean gradients, one entry per layer, plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct OmlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Omlp {
    layers: Vec<OrthoLinearLayer>,
}

impl Omlp {
    /// Builds a head with layer widths `widths = [d_in, h_1, ..., d_out]`.
    ///
    /// Both constraint kinds consume the same Gaussian draws, so a Stiefel
    /// head and a free head built from equal seeds start from the same
    /// matrices (QR-orthonormalized vs. scaled).
    pub fn init(widths: &[usize], constraint: WeightConstraint, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let g = rng.normal_matrix(d_in, d_out);
            let weight = match constraint {
                WeightConstraint::Stiefel => {
                    if d_out > d_in {
                        return Err(Error::Parameter(format!(
                            "Stiefel layers need non-increasing widths, got {d_in} -> {d_out}"
                        )));
                    }
                    ParamSlot::stiefel(StiefelPoint::new(qr_orthonormalize(&g)?)?)
                }
                WeightConstraint::Free => ParamSlot::euclidean(g.scale(1.0 / (d_in as f64).sqrt())),
            };
            layers.push(OrthoLinearLayer {
                weight,
                bias: ParamSlot::euclidean(Matrix::zeros(1, d_out)),
            });
        }
        Ok(Self { layers })
    }

    /// The default `DEFAULT_LAYERS`-layer, `DEFAULT_WIDTH`-unit constrained head.
    pub fn default_head(d_in: usize, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![d_in];
        widths.extend([DEFAULT_WIDTH; DEFAULT_LAYERS]);
        Self::init(&widths, WeightConstraint::Stiefel, rng)
    }

    pub fn from_layers(layers: Vec<OrthoLinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("an O-MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.value().shape() != (1, l.d_out()) {
                return Err(Error::Dimension {
                    op: "Omlp::from_layers (bias)",
                    expected: (1, l.d_out()),
                    got: l.bias.value().shape(),
                });
            }
            if l.bias.kind() != SlotKind::Euclidean {
                return Err(Error::Kind {
                    expected: SlotKind::Euclidean.name(),
                    found: l.bias.kind().name(),
                });
            }
            if i > 0 && layers[i - 1].d_out() != l.d_in() {
                return Err(Error::Dimension {
                    op: "Omlp::from_layers",
                    expected: (layers[i - 1].d_out(), l.d_out()),
                    got: (l.d_in(), l.d_out()),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[OrthoLinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [OrthoLinearLayer] {
        &mut self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// Largest `|W^TW - I|_F` over all layers (constrained or not).
    pub fn max_orthonormality_residual(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| orthonormality_residual(l.weight.value()))
            .fold(0.0, f64::max)
    }

    /// Forward pass on a `batch × d_in` feature matrix.
    pub fn forward(&self, features: &Matrix) -> Result<(Matrix, ActivationTape)> {
        if features.cols() != self.d_in() {
            return Err(Error::Dimension {
                op: "Omlp::forward",
                expected: (features.rows(), self.d_in()),
                got: features.shape(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.matmul(layer.weight.value())?.add_row_broadcast(layer.bias.value())?;
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                z.map(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((h, ActivationTape { inputs, pre }))
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, tape: &ActivationTape, output_grad: &Matrix) -> Result<OmlpGrads> {
        let n = self.layers.len();
        if tape.pre.len() != n || tape.inputs.len() != n {
            return Err(Error::Tape(format!(
                "tape has {} layers, network has {n}",
                tape.pre.len()
            )));
        }
        for (l, (x, z)) in self.layers.iter().zip(tape.inputs.iter().zip(&tape.pre)) {
            if x.cols() != l.d_in() || z.cols() != l.d_out() || x.rows() != z.rows() {
                return Err(Error::Tape("recorded activation shapes do not match layers".into()));
            }
        }
        if output_grad.shape() != tape.pre[n - 1].shape() {
            return Err(Error::Tape(format!(
                "output gradient is {:?}, forward output was {:?}",
                output_grad.shape(),
                tape.pre[n - 1].shape()
            )));
        }

        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Matrix::zeros(0, 0); n];
        let mut grad = output_grad.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                // ReLU; subgradient 0 at the kink.
                grad = grad.zip_with(&tape.pre[i], "relu backward", |g, z| if z > 0.0 { g } else { 0.0 })?;
            }
            weights[i] = tape.inputs[i].t_matmul(&grad)?;
            biases[i] = grad.sum_rows();
            grad = grad.matmul_t(self.layers[i].weight.value())?;
        }
        Ok(OmlpGrads {
            weights,
            biases,
            input: grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(weight: Matrix, bias: &[f64]) -> Omlp {
        let w = ParamSlot::stiefel(StiefelPoint::new(weight).unwrap());
        Omlp::from_layers(vec![OrthoLinearLayer {
            weight: w,
            bias: ParamSlot::euclidean(Matrix::row_vector(bias)),
        }])
        .unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let net = Omlp::init(&[5, 4, 3], WeightConstraint::Stiefel, &mut Rng::seed_from_u64(1)).unwrap();
        let (y, _) = net.forward(&Matrix::zeros(2, 5)).unwrap();
        assert_eq!(y, Matrix::zeros(2, 3));
    }

    #[test]
    fn identity_layer_passes_negatives_through() {
        let net = single_layer(Matrix::identity(3), &[0.0; 3]);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]);
        assert_eq!(net.forward(&x).unwrap().0, x);
    }

    #[test]
    fn hand_affine() {
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let net = single_layer(w, &[0.5, -0.5]);
        let (y, _) = net.forward(&Matrix::from_rows(&[[1.0, 2.0, 7.0]])).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[1.5, 1.5]]));
    }

    #[test]
    fn forward_dimension_error() {
        let net = Omlp::init(&[4, 4], WeightConstraint::Stiefel, &mut Rng::seed_from_u64(2)).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn increasing_width_rejected_for_stiefel() {
        let mut rng = Rng::seed_from_u64(3);
        assert!(Omlp::init(&[3, 5], WeightConstraint::Stiefel, &mut rng).is_err());
        assert!(Omlp::init(&[3, 5], WeightConstraint::Free, &mut rng).is_ok());
    }

    #[test]
    fn default_head_shape() {
        let net = Omlp::default_head(256, &mut Rng::seed_from_u64(4)).unwrap();
        assert_eq!(net.layers().len(), 2);
        assert_eq!(net.d_out(), 256);
        assert!(net.max_orthonormality_residual() < 1e-12);
    }

    #[test]
    fn zero_output_grad() {
        let mut rng = Rng::seed_from_u64(5);
        let net = Omlp::init(&[6, 5, 4], WeightConstraint::Stiefel, &mut rng).unwrap();
        let (_, tape) = net.forward(&rng.normal_matrix(3, 6)).unwrap();
        let g = net.backward(&tape, &Matrix::zeros(3, 4)).unwrap();
        assert!(g.weights.iter().chain(&g.biases).all(|m| m.max_abs() == 0.0));
        assert_eq!(g.input.max_abs(), 0.0);
    }

    #[test]
    fn linear_layer_weight_grad() {
        let mut rng = Rng::seed_from_u64(6);
        let net = Omlp::init(&[5, 3], WeightConstraint::Stiefel, &mut rng).unwrap();
        let x = rng.normal_matrix(4, 5);
        let dy = rng.normal_matrix(4, 3);
        let (_, tape) = net.forward(&x).unwrap();
        let g = net.backward(&tape, &dy).unwrap();
        assert!(g.weights[0].sub(&x.t_matmul(&dy).unwrap()).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn stale_tape_rejected() {
        let mut rng = Rng::seed_from_u64(7);
        let a = Omlp::init(&[5, 4, 3], WeightConstraint::Stiefel, &mut rng).unwrap();
        let b = Omlp::init(&[5, 3], WeightConstraint::Stiefel, &mut rng).unwrap();
        let (_, tape) = a.forward(&rng.normal_matrix(2, 5)).unwrap();
        assert!(matches!(b.backward(&tape, &Matrix::zeros(2, 3)), Err(Error::Tape(_))));
        assert!(matches!(a.backward(&tape, &Matrix::zeros(3, 3)), Err(Error::Tape(_))));
    }

    #[test]
    fn orthogonal_isometry() {
        let mut rng = Rng::seed_from_u64(8);
        let square = Omlp::init(&[7, 7], WeightConstraint::Stiefel, &mut rng).unwrap();
        let tall = Omlp::init(&[7, 3], WeightConstraint::Stiefel, &mut rng).unwrap();
        for _ in 0..50 {
            let x = rng.normal_matrix(1, 7);
            let nx = x.frob_norm();
            let (y, _) = square.forward(&x).unwrap();
            assert!((y.frob_norm() - nx).abs() < 1e-10 * nx);
            let (y, _) = tall.forward(&x).unwrap();
            assert!(y.frob_norm() <= nx * (1.0 + 1e-12));
        }
        // x in the column space of W is preserved exactly.
        let w = tall.layers()[0].weight.value();
        let c = rng.normal_matrix(1, 3);
        let x = c.matmul_t(w).unwrap();
        let (y, _) = tall.forward(&x).unwrap();
        assert!((y.frob_norm() - x.frob_norm()).abs() < 1e-10);
    }
}
