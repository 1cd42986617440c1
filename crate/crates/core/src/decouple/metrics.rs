//! Decoupling and classifier metrics.

use super::data::{ChannelLabel, Dataset};
use crate::dwfc::{Domain, DwfcNet};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::omlp::Omlp;

/// Cosine between channel columns of `embeddings` (`batch × D`). Zero columns
/// give zero rows and columns, diagonal included.
pub fn cosine_similarity_matrix(embeddings: &Matrix) -> Matrix {
    let d = embeddings.cols();
    let gram = embeddings.t_matmul(embeddings).expect("shapes agree by construction");
    let norms: Vec<f64> = (0..d).map(|i| gram.get(i, i).sqrt()).collect();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        if norms[i] == 0.0 {
            continue;
        }
        out.set(i, i, 1.0);
        for j in (i + 1)..d {
            if norms[j] == 0.0 {
                continue;
            }
            let c = (gram.get(i, j) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    out
}

/// Mean `|cos|` over off-diagonal entries.
pub fn offdiag_energy(cos: &Matrix) -> f64 {
    let d = cos.rows();
    if d < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                sum += cos.get(i, j).abs();
            }
        }
    }
    sum / (d * (d - 1)) as f64
}

/// Fraction of `(logit_h, logit_c)` pairs whose argmax names the true domain.
pub fn accuracy_from_logits(logits: &[(f64, f64)], truth: &[Domain]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let correct = logits
        .iter()
        .zip(truth)
        .filter(|((h, c), t)| {
            let pred = if h > c { Domain::Hazy } else { Domain::Clear };
            pred == **t
        })
        .count();
    correct as f64 / logits.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub cosine_sim: Matrix,
    pub offdiag_energy: f64,
    pub dwfc_accuracy: f64,
    /// Mean `w_h` mass on related channels over hazy samples, divided by `k / C`.
    pub heat_mass_ratio: f64,
    /// Same for `w_c` over clear samples.
    pub clear_heat_mass_ratio: f64,
}

/// Every patch of every sample, hazy first, one row per patch.
pub fn all_patches(dataset: &Dataset) -> Result<Matrix> {
    let parts: Vec<Matrix> = dataset.hazy.iter().chain(&dataset.clear).map(|f| f.patches()).collect();
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::vstack(&refs)
}

pub fn evaluate(head: &Omlp, dwfc: &DwfcNet, dataset: &Dataset) -> Result<Metrics> {
    let (emb, _) = head.forward(&all_patches(dataset)?)?;
    let cosine_sim = cosine_similarity_matrix(&emb);
    let energy = offdiag_energy(&cosine_sim);

    let related: Vec<usize> = dataset
        .channel_labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == ChannelLabel::Related)
        .map(|(i, _)| i)
        .collect();
    let share = related.len() as f64 / dataset.channel_labels.len() as f64;

    let mut logits = Vec::with_capacity(dataset.hazy.len() + dataset.clear.len());
    let mut truth = Vec::with_capacity(logits.capacity());
    let mut mass_h = 0.0;
    let mut mass_c = 0.0;
    for (set, domain) in [(&dataset.hazy, Domain::Hazy), (&dataset.clear, Domain::Clear)] {
        for f in set {
            let (out, _) = dwfc.forward(f)?;
            let w = dwfc.heat_vectors(&out.x)?;
            match domain {
                Domain::Hazy => mass_h += related.iter().map(|&c| w.w_h[c]).sum::<f64>(),
                Domain::Clear => mass_c += related.iter().map(|&c| w.w_c[c]).sum::<f64>(),
            }
            logits.push((out.logit_h, out.logit_c));
            truth.push(domain);
        }
    }
    let ratio = |mass: f64, n: usize| if n == 0 { 0.0 } else { mass / n as f64 / share };
    Ok(Metrics {
        cosine_sim,
        offdiag_energy: energy,
        dwfc_accuracy: accuracy_from_logits(&logits, &truth),
        heat_mass_ratio: ratio(mass_h, dataset.hazy.len()),
        clear_heat_mass_ratio: ratio(mass_c, dataset.clear.len()),
    })
}
