//! Seeded inputs shared by the kernel benchmarks.

use orthodc_core::dwfc::{softmax, ChannelFeature, DwfcNet};
use orthodc_core::linalg::Matrix;
use orthodc_core::omlp::{Omlp, WeightConstraint};
use orthodc_core::stiefel::{project_to_tangent, random_point};
use orthodc_core::{EmbeddingBatch, Rng, StiefelPoint, TangentVector, WeightPair};

/// A random symmetric `n × n` matrix.
pub fn symmetric(n: usize, seed: u64) -> Matrix {
    let g = Rng::seed_from_u64(seed).normal_matrix(n, n);
    g.add(&g.transpose()).expect("square").scale(0.5)
}

/// A point on St(p, n) and a tangent step of norm `0.1`.
pub fn stiefel_step(n: usize, p: usize, seed: u64) -> (StiefelPoint, TangentVector) {
    let mut rng = Rng::seed_from_u64(seed);
    let theta = random_point(n, p, &mut rng).expect("valid sizes");
    let z = project_to_tangent(&theta, &rng.normal_matrix(n, p)).expect("same shape");
    let norm = z.matrix().frob_norm();
    (theta, z.scaled(0.1 / norm))
}

pub fn omlp(width: usize, layers: usize, batch: usize, seed: u64) -> (Omlp, Matrix) {
    let mut rng = Rng::seed_from_u64(seed);
    let net = Omlp::init(&vec![width; layers + 1], WeightConstraint::Stiefel, &mut rng).expect("valid widths");
    (net, rng.normal_matrix(batch, width))
}

fn unit_rows(rng: &mut Rng, rows: usize, d: usize) -> Matrix {
    let mut m = rng.normal_matrix(rows, d);
    for r in 0..rows {
        let n = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    m
}

/// One query with `clear` clear keys and `negatives` other hazy keys.
pub fn wpnce(d: usize, clear: usize, negatives: usize, seed: u64) -> (EmbeddingBatch, WeightPair) {
    let mut rng = Rng::seed_from_u64(seed);
    let pair = unit_rows(&mut rng, 2, d);
    let batch = EmbeddingBatch::new(
        pair.row(0).to_vec(),
        pair.row(1).to_vec(),
        unit_rows(&mut rng, clear, d),
        unit_rows(&mut rng, negatives, d),
    )
    .expect("unit vectors");
    let raw_h: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let raw_c: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    (
        batch,
        WeightPair::new(softmax(&raw_h), softmax(&raw_c)).expect("simplex"),
    )
}

pub fn dwfc(channels: usize, positions: usize, seed: u64) -> (DwfcNet, ChannelFeature) {
    let mut rng = Rng::seed_from_u64(seed);
    let net = DwfcNet::init(channels, positions, &mut rng).expect("valid sizes");
    let feat = ChannelFeature::new(rng.normal_matrix(channels, positions)).expect("finite");
    (net, feat)
}
