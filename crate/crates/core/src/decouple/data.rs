//! Planted-structure feature maps.
//!
//! Channel `c < k` of a hazy map holds `+signal` at every position, of a clear
//! map `-signal`. The remaining channels hold i.i.d. `N(0, 1)` content in both
//! domains. A fixed leakage matrix `L` with zero diagonal and unit-norm rows
//! then mixes channels, `x = base + ε L base`, and `σ N(0, 1)` noise is added.

use super::{streams, SyntheticConfig};
use crate::dwfc::ChannelFeature;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLabel {
    Related,
    Unrelated,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub hazy: Vec<ChannelFeature>,
    pub clear: Vec<ChannelFeature>,
    pub channel_labels: Vec<ChannelLabel>,
}

impl Dataset {
    pub fn related_count(&self) -> usize {
        self.channel_labels
            .iter()
            .filter(|l| **l == ChannelLabel::Related)
            .count()
    }
}

fn leakage_matrix(c: usize, rng: &mut Rng) -> Matrix {
    let mut l = rng.normal_matrix(c, c);
    for i in 0..c {
        l.set(i, i, 0.0);
        let n = l.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in l.row_mut(i) {
                *v /= n;
            }
        }
    }
    l
}

fn sample(cfg: &SyntheticConfig, sign: f64, leak: &Matrix, rng: &mut Rng) -> Result<ChannelFeature> {
    let (c, s) = (cfg.channels, cfg.positions);
    let mut base = Matrix::zeros(c, s);
    for ch in 0..c {
        for pos in 0..s {
            let v = if ch < cfg.related {
                sign * cfg.signal
            } else {
                rng.normal()
            };
            base.set(ch, pos, v);
        }
    }
    let mut x = base.clone();
    if cfg.mixing > 0.0 {
        x.axpy(cfg.mixing, &leak.matmul(&base)?)?;
    }
    if cfg.noise > 0.0 {
        for v in x.as_mut_slice() {
            *v += cfg.noise * rng.normal();
        }
    }
    ChannelFeature::new(x)
}

/// Hazy and clear maps plus the planted channel labels. Deterministic in `cfg.seed`.
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let leak = leakage_matrix(cfg.channels, &mut Rng::stream(cfg.seed, streams::LEAKAGE));
    let mut rng = Rng::stream(cfg.seed, streams::DATA);
    let hazy = (0..cfg.samples)
        .map(|_| sample(cfg, 1.0, &leak, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let clear = (0..cfg.samples)
        .map(|_| sample(cfg, -1.0, &leak, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let channel_labels = (0..cfg.channels)
        .map(|c| {
            if c < cfg.related {
                ChannelLabel::Related
            } else {
                ChannelLabel::Unrelated
            }
        })
        .collect();
    Ok(Dataset {
        hazy,
        clear,
        channel_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_data_separates_by_two_signal() {
        let cfg = SyntheticConfig {
            mixing: 0.0,
            noise: 0.0,
            samples: 20,
            ..Default::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        for (h, c) in d.hazy.iter().zip(&d.clear) {
            for ch in 0..cfg.related {
                for pos in 0..cfg.positions {
                    assert_eq!(h.values().get(ch, pos) - c.values().get(ch, pos), 2.0 * cfg.signal);
                }
            }
        }
        assert_eq!(d.related_count(), cfg.related);
        assert_eq!(d.channel_labels[cfg.related], ChannelLabel::Unrelated);
    }

    #[test]
    fn unrelated_channels_match_in_distribution() {
        let cfg = SyntheticConfig {
            mixing: 0.0,
            noise: 0.0,
            ..Default::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let moments = |set: &[ChannelFeature]| {
            let vals: Vec<f64> = set
                .iter()
                .flat_map(|f| (cfg.related..cfg.channels).flat_map(move |c| f.values().row(c).to_vec()))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        };
        let (mh, vh) = moments(&d.hazy);
        let (mc, vc) = moments(&d.clear);
        // 49152 draws each: standard error of the mean is about 0.0045
        assert!((mh - mc).abs() < 0.03);
        assert!((vh - vc).abs() < 0.05);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig {
            samples: 16,
            ..Default::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.hazy, b.hazy);
        assert_eq!(a.clear, b.clear);
        let c = generate_dataset(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.hazy, c.hazy);
    }

    #[test]
    fn first_channel_threshold_separates() {
        let cfg = SyntheticConfig::default();
        let d = generate_dataset(&cfg).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for (set, sign) in [(&d.hazy, 1.0), (&d.clear, -1.0)] {
            for f in set {
                for pos in 0..cfg.positions {
                    total += 1;
                    if f.values().get(0, pos) * sign > 0.0 {
                        correct += 1;
                    }
                }
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.95, "threshold accuracy {acc}");
    }

    #[test]
    fn leakage_rows_are_unit_with_zero_diagonal() {
        let l = leakage_matrix(7, &mut Rng::seed_from_u64(3));
        for i in 0..7 {
            assert_eq!(l.get(i, i), 0.0);
            let n: f64 = l.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
