//! Sample repartition and the weighted patch contrastive loss.
//!
//! Roles relative to a query `z`:
//! - `z₊₋`: the hazy patch at the query's position,
//! - `z₋₊`: every clear patch,
//! - `z₋₋`: every other hazy patch.
//!
//! `l(w, a, b) = exp(Σ_d w_d a_d b_d / τ)`. The positive mass is
//! `l(w_h, z, z₊₋) + Σ l(w_c, z, z₋₊)` and the negative mass is
//! `l(1 − w_h, z, z₊₋) + Σ l(1, z, z₋₋) + Σ l(1 − w_c, z, z₋₊)`.
//! Everything is evaluated in log space.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_TAU: f64 = 0.07;
pub const UNIT_TOL: f64 = 1e-10;
const SIMPLEX_TOL: f64 = 1e-12;

/// Heat vectors for hazy-source and clear-source features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    pub w_h: Vec<f64>,
    pub w_c: Vec<f64>,
}

impl WeightPair {
    /// Checked constructor: both vectors must be simplex points.
    pub fn new(w_h: Vec<f64>, w_c: Vec<f64>) -> Result<Self> {
        if w_h.len() != w_c.len() {
            return Err(Error::Dimension {
                op: "WeightPair",
                expected: (1, w_h.len()),
                got: (1, w_c.len()),
            });
        }
        for w in [&w_h, &w_c] {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Parameter(format!(
                    "heat vector must be a simplex point (sum {sum})"
                )));
            }
        }
        Ok(Self { w_h, w_c })
    }

    pub fn uniform(d: usize) -> Self {
        let w = vec![1.0 / d as f64; d];
        Self { w_h: w.clone(), w_c: w }
    }

    pub fn dim(&self) -> usize {
        self.w_h.len()
    }
}

/// A query and its keys, one key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    query: Vec<f64>,
    key_pos_hazy: Vec<f64>,
    keys_clear: Matrix,
    keys_neg_hazy: Matrix,
}

impl EmbeddingBatch {
    /// Checked constructor: at least one clear key, every vector unit-norm.
    pub fn new(query: Vec<f64>, key_pos_hazy: Vec<f64>, keys_clear: Matrix, keys_neg_hazy: Matrix) -> Result<Self> {
        let b = Self::from_raw(query, key_pos_hazy, keys_clear, keys_neg_hazy)?;
        let check = |v: &[f64], what: &str| -> Result<()> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::Parameter(format!("{what} has norm {n}, expected 1")));
            }
            Ok(())
        };
        check(&b.query, "query")?;
        check(&b.key_pos_hazy, "positive hazy key")?;
        for r in 0..b.keys_clear.rows() {
            check(b.keys_clear.row(r), "clear key")?;
        }
        for r in 0..b.keys_neg_hazy.rows() {
            check(b.keys_neg_hazy.row(r), "negative hazy key")?;
        }
        Ok(b)
    }

    /// Shape checks only. Used where vectors are perturbed off the sphere,
    /// e.g. finite-difference checks.
    pub fn from_raw(
        query: Vec<f64>,
        key_pos_hazy: Vec<f64>,
        keys_clear: Matrix,
        keys_neg_hazy: Matrix,
    ) -> Result<Self> {
        let d = query.len();
        if d == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if key_pos_hazy.len() != d {
            return Err(Error::Dimension {
                op: "EmbeddingBatch",
                expected: (1, d),
                got: (1, key_pos_hazy.len()),
            });
        }
        if keys_clear.rows() == 0 {
            return Err(Error::Parameter("at least one clear key is required".into()));
        }
        for m in [&keys_clear, &keys_neg_hazy] {
            if m.cols() != d && m.rows() > 0 {
                return Err(Error::Dimension {
                    op: "EmbeddingBatch",
                    expected: (m.rows(), d),
                    got: m.shape(),
                });
            }
        }
        let keys_neg_hazy = if keys_neg_hazy.rows() == 0 {
            Matrix::zeros(0, d)
        } else {
            keys_neg_hazy
        };
        Ok(Self {
            query,
            key_pos_hazy,
            keys_clear,
            keys_neg_hazy,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.len()
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    pub fn key_pos_hazy(&self) -> &[f64] {
        &self.key_pos_hazy
    }

    pub fn keys_clear(&self) -> &Matrix {
        &self.keys_clear
    }

    pub fn keys_neg_hazy(&self) -> &Matrix {
        &self.keys_neg_hazy
    }
}

/// Index roles from [`repartition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub pos_hazy: usize,
    pub neg_hazy: Vec<usize>,
    pub clear: Vec<usize>,
}

impl Roles {
    /// Gathers the keys for `query` from patch matrices (one patch per row).
    pub fn batch(&self, query: Vec<f64>, hazy: &Matrix, clear: &Matrix) -> Result<EmbeddingBatch> {
        let (q, kp, kc, kn) = self.gather(query, hazy, clear)?;
        EmbeddingBatch::new(q, kp, kc, kn)
    }

    /// As [`Roles::batch`] but without the unit-norm check.
    pub fn batch_unchecked(&self, query: Vec<f64>, hazy: &Matrix, clear: &Matrix) -> Result<EmbeddingBatch> {
        let (q, kp, kc, kn) = self.gather(query, hazy, clear)?;
        EmbeddingBatch::from_raw(q, kp, kc, kn)
    }

    #[allow(clippy::type_complexity)]
    fn gather(&self, query: Vec<f64>, hazy: &Matrix, clear: &Matrix) -> Result<(Vec<f64>, Vec<f64>, Matrix, Matrix)> {
        if self.pos_hazy >= hazy.rows() {
            return Err(Error::Index {
                index: self.pos_hazy,
                set: "hazy patches",
            });
        }
        let gather = |m: &Matrix, idx: &[usize]| -> Result<Matrix> {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Matrix::from_vec(idx.len(), m.cols(), data)
        };
        Ok((
            query,
            hazy.row(self.pos_hazy).to_vec(),
            gather(clear, &self.clear)?,
            gather(hazy, &self.neg_hazy)?,
        ))
    }
}

/// Splits patch positions into roles for the query at `query_index`.
pub fn repartition(query_index: usize, hazy_count: usize, clear_count: usize) -> Result<Roles> {
    if query_index >= hazy_count {
        return Err(Error::Index {
            index: query_index,
            set: "hazy patches",
        });
    }
    if clear_count == 0 {
        return Err(Error::Parameter("repartition needs at least one clear patch".into()));
    }
    Ok(Roles {
        pos_hazy: query_index,
        neg_hazy: (0..hazy_count).filter(|&i| i != query_index).collect(),
        clear: (0..clear_count).collect(),
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

#[inline]
fn weighted_score(w: impl Iterator<Item = f64>, a: &[f64], b: &[f64], tau: f64) -> f64 {
    w.zip(a).zip(b).map(|((w, a), b)| w * a * b).sum::<f64>() / tau
}

/// `exp(Σ w_d z1_d z2_d / τ)`.
pub fn weighted_mi(w: &[f64], z1: &[f64], z2: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if w.len() != z1.len() || z1.len() != z2.len() {
        return Err(Error::Dimension {
            op: "weighted_mi",
            expected: (1, w.len()),
            got: (1, if z1.len() != w.len() { z1.len() } else { z2.len() }),
        });
    }
    Ok(weighted_score(w.iter().copied(), z1, z2, tau).exp())
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-space scores of every term. The first `1 + N₋₊` are positive.
struct Scores {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

fn check_weights(batch: &EmbeddingBatch, w: &WeightPair) -> Result<()> {
    let d = batch.dim();
    if w.w_h.len() != d || w.w_c.len() != d {
        return Err(Error::Dimension {
            op: "wpnce weights",
            expected: (1, d),
            got: (1, if w.w_h.len() != d { w.w_h.len() } else { w.w_c.len() }),
        });
    }
    Ok(())
}

fn scores(batch: &EmbeddingBatch, w: &WeightPair, tau: f64) -> Result<Scores> {
    check_tau(tau)?;
    check_weights(batch, w)?;
    let z = &batch.query;
    let kp = &batch.key_pos_hazy;
    let wh = || w.w_h.iter().copied();
    let wc = || w.w_c.iter().copied();
    let ones = || std::iter::repeat(1.0);

    let mut pos = Vec::with_capacity(1 + batch.keys_clear.rows());
    pos.push(weighted_score(wh(), z, kp, tau));
    for r in 0..batch.keys_clear.rows() {
        pos.push(weighted_score(wc(), z, batch.keys_clear.row(r), tau));
    }

    let mut neg = Vec::with_capacity(1 + batch.keys_neg_hazy.rows() + batch.keys_clear.rows());
    neg.push(weighted_score(wh().map(|v| 1.0 - v), z, kp, tau));
    for r in 0..batch.keys_neg_hazy.rows() {
        neg.push(weighted_score(ones(), z, batch.keys_neg_hazy.row(r), tau));
    }
    for r in 0..batch.keys_clear.rows() {
        neg.push(weighted_score(wc().map(|v| 1.0 - v), z, batch.keys_clear.row(r), tau));
    }
    Ok(Scores { pos, neg })
}

pub fn positive_mass(batch: &EmbeddingBatch, weights: &WeightPair, tau: f64) -> Result<f64> {
    Ok(logsumexp(&scores(batch, weights, tau)?.pos).exp())
}

pub fn negative_mass(batch: &EmbeddingBatch, weights: &WeightPair, tau: f64) -> Result<f64> {
    Ok(logsumexp(&scores(batch, weights, tau)?.neg).exp())
}

/// `−log(P / (P + N))`.
pub fn wpnce_loss(batch: &EmbeddingBatch, weights: &WeightPair, tau: f64) -> Result<f64> {
    let s = scores(batch, weights, tau)?;
    let all: Vec<f64> = s.pos.iter().chain(&s.neg).copied().collect();
    Ok(logsumexp(&all) - logsumexp(&s.pos))
}

/// Unweighted InfoNCE: `−log(e^{z·z₊/τ} / (e^{z·z₊/τ} + Σ e^{z·z₋/τ}))`.
pub fn patchnce_loss(z: &[f64], z_pos: &[f64], z_negs: &Matrix, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let d = z.len();
    if z_pos.len() != d || (z_negs.rows() > 0 && z_negs.cols() != d) {
        return Err(Error::Dimension {
            op: "patchnce_loss",
            expected: (1, d),
            got: (1, if z_pos.len() != d { z_pos.len() } else { z_negs.cols() }),
        });
    }
    if z_negs.rows() == 0 {
        log::warn!("patchnce_loss called with no negatives, loss is 0");
        return Ok(0.0);
    }
    let ones = || std::iter::repeat(1.0);
    let pos = weighted_score(ones(), z, z_pos, tau);
    let mut all = vec![pos];
    for r in 0..z_negs.rows() {
        all.push(weighted_score(ones(), z, z_negs.row(r), tau));
    }
    Ok(logsumexp(&all) - pos)
}

/// Analytic gradient of [`wpnce_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct WpnceGrads {
    pub loss: f64,
    pub query: Vec<f64>,
    pub key_pos_hazy: Vec<f64>,
    pub keys_clear: Matrix,
    pub keys_neg_hazy: Matrix,
    pub w_h: Vec<f64>,
    pub w_c: Vec<f64>,
}

pub fn wpnce_gradients(batch: &EmbeddingBatch, weights: &WeightPair, tau: f64) -> Result<WpnceGrads> {
    let s = scores(batch, weights, tau)?;
    let d = batch.dim();
    let nc = batch.keys_clear.rows();
    let nn = batch.keys_neg_hazy.rows();

    // dL/ds_i = softmax_all(i) − [i positive]·softmax_pos(i)
    let lse_pos = logsumexp(&s.pos);
    let all: Vec<f64> = s.pos.iter().chain(&s.neg).copied().collect();
    let lse_all = logsumexp(&all);
    let gpos: Vec<f64> = s
        .pos
        .iter()
        .map(|&v| (v - lse_all).exp() - (v - lse_pos).exp())
        .collect();
    let gneg: Vec<f64> = s.neg.iter().map(|&v| (v - lse_all).exp()).collect();

    let z = &batch.query;
    let mut g = WpnceGrads {
        loss: lse_all - lse_pos,
        query: vec![0.0; d],
        key_pos_hazy: vec![0.0; d],
        keys_clear: Matrix::zeros(nc, d),
        keys_neg_hazy: Matrix::zeros(nn, d),
        w_h: vec![0.0; d],
        w_c: vec![0.0; d],
    };

    // Score s = Σ v_d z_d k_d / τ with weight v; v = a + b·w for w ∈ {w_h, w_c}.
    let kp = &batch.key_pos_hazy;
    for i in 0..d {
        let zk = z[i] * kp[i] / tau;
        let v_eff = gpos[0] * weights.w_h[i] + gneg[0] * (1.0 - weights.w_h[i]);
        g.query[i] += v_eff * kp[i] / tau;
        g.key_pos_hazy[i] = v_eff * z[i] / tau;
        g.w_h[i] = (gpos[0] - gneg[0]) * zk;
    }
    for r in 0..nc {
        let k = batch.keys_clear.row(r);
        let (gp, gn) = (gpos[1 + r], gneg[1 + nn + r]);
        let out = g.keys_clear.row_mut(r);
        for i in 0..d {
            let v_eff = gp * weights.w_c[i] + gn * (1.0 - weights.w_c[i]);
            g.query[i] += v_eff * k[i] / tau;
            out[i] = v_eff * z[i] / tau;
            g.w_c[i] += (gp - gn) * z[i] * k[i] / tau;
        }
    }
    for r in 0..nn {
        let k = batch.keys_neg_hazy.row(r);
        let gn = gneg[1 + r];
        let out = g.keys_neg_hazy.row_mut(r);
        for i in 0..d {
            g.query[i] += gn * k[i] / tau;
            out[i] = gn * z[i] / tau;
        }
    }
    Ok(g)
}
