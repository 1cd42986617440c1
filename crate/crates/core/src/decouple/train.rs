//! Training loop for one ablation arm.
//!
//! Each batch pairs hazy samples with shuffled clear samples. The query map
//! takes its related channels from the clear sample and its unrelated
//! channels from the hazy one. Every position of the query is contrasted
//! against the same-position hazy patch, all clear patches and the remaining
//! hazy patches, weighted by the classifier's heat vectors.

use std::path::{Path, PathBuf};

use super::data::Dataset;
use super::metrics::{all_patches, cosine_similarity_matrix, evaluate, offdiag_energy};
use super::report::{ExperimentReport, LossPoint};
use super::{generate_dataset, streams, Arm, StiefelOptimizer, SyntheticConfig, UpdateMode};
use crate::dwfc::{bce_grad, bce_loss, heat_vector_backward, ChannelFeature, DwfcGrads, DwfcNet, DwfcUpstream};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::omlp::{Omlp, WeightConstraint};
use crate::optim::{save_checkpoint, AdamConfig, ParamSlot};
use crate::rng::Rng;
use crate::wpnce::{repartition, wpnce_gradients, WeightPair};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// When set, the state after every finished epoch is written here.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainedArm {
    pub arm: Arm,
    pub head: Omlp,
    pub dwfc: DwfcNet,
    pub loss_trace: Vec<LossPoint>,
    pub initial_offdiag_energy: f64,
}

pub fn init_head(cfg: &SyntheticConfig, arm: Arm) -> Result<Omlp> {
    let constraint = match arm {
        Arm::Omlp => WeightConstraint::Stiefel,
        Arm::Penalty | Arm::Unconstrained => WeightConstraint::Free,
    };
    Omlp::init(
        &cfg.widths(),
        constraint,
        &mut Rng::stream(cfg.seed, streams::HEAD_INIT),
    )
}

pub fn init_dwfc(cfg: &SyntheticConfig) -> Result<DwfcNet> {
    DwfcNet::init(
        cfg.channels,
        cfg.positions,
        &mut Rng::stream(cfg.seed, streams::DWFC_INIT),
    )
}

/// `λ‖W^T W − I‖_F²` and its gradient `4λ W (W^T W − I)`.
pub fn orthogonality_penalty(w: &Matrix, lambda: f64) -> Result<(f64, Matrix)> {
    let mut gram = w.t_matmul(w)?;
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) - 1.0);
    }
    let value = lambda * gram.frob_norm().powi(2);
    let grad = w.matmul(&gram)?.scale(4.0 * lambda);
    Ok((value, grad))
}

const NORM_FLOOR: f64 = 1e-12;

/// Rows scaled to unit length. Rows shorter than `NORM_FLOOR` (a hidden
/// layer fully cut by ReLU, say) become zero and pass no gradient.
fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = if n < NORM_FLOOR { 0.0 } else { 1.0 / n };
        for v in row.iter_mut() {
            *v *= inv;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Backward of `u = v / ‖v‖`: `(du − u (u·du)) / ‖v‖`.
fn normalize_backward(unit: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (r, &n) in norms.iter().enumerate() {
        if n < NORM_FLOOR {
            out.row_mut(r).fill(0.0);
            continue;
        }
        let u = unit.row(r);
        let proj: f64 = u.iter().zip(grad.row(r)).map(|(a, b)| a * b).sum();
        for (o, &ui) in out.row_mut(r).iter_mut().zip(u) {
            *o = (*o - ui * proj) / n;
        }
    }
    out
}

fn composite(cfg: &SyntheticConfig, hazy: &ChannelFeature, clear: &ChannelFeature) -> Result<ChannelFeature> {
    let mut q = hazy.values().clone();
    for c in 0..cfg.related {
        q.row_mut(c).copy_from_slice(clear.values().row(c));
    }
    ChannelFeature::new(q)
}

fn stack_patches(features: &[ChannelFeature]) -> Result<Matrix> {
    let parts: Vec<Matrix> = features.iter().map(|f| f.patches()).collect();
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::vstack(&refs)
}

fn add_row(m: &mut Matrix, r: usize, v: &[f64], s: f64) {
    for (o, x) in m.row_mut(r).iter_mut().zip(v) {
        *o += s * x;
    }
}

fn add_dwfc_grads(acc: &mut Option<DwfcGrads>, g: DwfcGrads) -> Result<()> {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.kernels.iter_mut().zip(&g.kernels) {
                x.axpy(1.0, y)?;
            }
            for (x, y) in a.biases.iter_mut().zip(&g.biases) {
                x.axpy(1.0, y)?;
            }
            a.head_h.axpy(1.0, &g.head_h)?;
            a.head_c.axpy(1.0, &g.head_c)?;
        }
    }
    Ok(())
}

struct Arms<'a> {
    cfg: &'a SyntheticConfig,
    arm: Arm,
}

impl Arms<'_> {
    fn step_weight(&self, slot: &mut ParamSlot, grad: &Matrix, lr: f64) -> Result<()> {
        let adam = AdamConfig::default();
        match (self.arm, self.cfg.optimizer) {
            (Arm::Omlp, StiefelOptimizer::Rsgd) => slot.rsgd_step(grad, lr),
            (Arm::Omlp, StiefelOptimizer::Radam) => slot.riemannian_adam_step(grad, lr, adam),
            (Arm::Penalty, _) => {
                let (_, pen) = orthogonality_penalty(slot.value(), self.cfg.penalty_lambda)?;
                slot.adam_step(&grad.add(&pen)?, lr, adam)
            }
            (Arm::Unconstrained, _) => slot.adam_step(grad, lr, adam),
        }
    }

    /// One optimizer step on a batch of pairs. Returns mean `(L_WPNCE, L_CE)`.
    fn batch_step(
        &self,
        head: &mut Omlp,
        dwfc: &mut DwfcNet,
        pairs: &[(&ChannelFeature, &ChannelFeature)],
        lr: f64,
        update_head: bool,
        update_dwfc: bool,
    ) -> Result<(f64, f64)> {
        let cfg = self.cfg;
        let b = pairs.len();
        let s = cfg.positions;

        // classifier forward and heat vectors
        let mut outs = Vec::with_capacity(2 * b);
        let mut ce = 0.0;
        for &(h, c) in pairs {
            let (oh, th) = dwfc.forward(h)?;
            let (oc, tc) = dwfc.forward(c)?;
            ce += bce_loss(oh.logit_h, oh.logit_c, 1, 0)? + bce_loss(oc.logit_h, oc.logit_c, 0, 1)?;
            outs.push(((oh, th), (oc, tc)));
        }
        let ce = ce / (2 * b) as f64;
        let weights: Vec<WeightPair> = outs
            .iter()
            .map(|((oh, _), (oc, _))| {
                Ok(WeightPair {
                    w_h: dwfc.heat_vectors(&oh.x)?.w_h,
                    w_c: dwfc.heat_vectors(&oc.x)?.w_c,
                })
            })
            .collect::<Result<_>>()?;

        // head forward
        let queries = pairs
            .iter()
            .map(|&(h, c)| composite(cfg, h, c))
            .collect::<Result<Vec<_>>>()?;
        let hazy: Vec<ChannelFeature> = pairs.iter().map(|&(h, _)| h.clone()).collect();
        let clear: Vec<ChannelFeature> = pairs.iter().map(|&(_, c)| c.clone()).collect();
        let (q_raw, q_tape) = head.forward(&stack_patches(&queries)?)?;
        let (h_raw, h_tape) = head.forward(&stack_patches(&hazy)?)?;
        let (c_raw, c_tape) = head.forward(&stack_patches(&clear)?)?;
        if !(q_raw.is_finite() && h_raw.is_finite() && c_raw.is_finite()) {
            return Err(Error::NonFinite("head output"));
        }
        let (q_unit, q_norm) = normalize_rows(&q_raw);
        let (h_unit, h_norm) = normalize_rows(&h_raw);
        let (c_unit, c_norm) = normalize_rows(&c_raw);

        let d = head.d_out();
        let scale = 1.0 / (b * s) as f64;
        let mut dq = Matrix::zeros(b * s, d);
        let mut dh = Matrix::zeros(b * s, d);
        let mut dc = Matrix::zeros(b * s, d);
        let mut dw: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![0.0; d], vec![0.0; d]); b];
        let mut wpnce = 0.0;
        for i in 0..b {
            let base = i * s;
            let hz = h_unit.row_block(base, base + s);
            let cl = c_unit.row_block(base, base + s);
            for pos in 0..s {
                let roles = repartition(pos, s, s)?;
                let batch = roles.batch_unchecked(q_unit.row(base + pos).to_vec(), &hz, &cl)?;
                let g = wpnce_gradients(&batch, &weights[i], cfg.tau)?;
                wpnce += g.loss;
                add_row(&mut dq, base + pos, &g.query, scale);
                add_row(&mut dh, base + roles.pos_hazy, &g.key_pos_hazy, scale);
                for (r, &idx) in roles.neg_hazy.iter().enumerate() {
                    add_row(&mut dh, base + idx, g.keys_neg_hazy.row(r), scale);
                }
                for (r, &idx) in roles.clear.iter().enumerate() {
                    add_row(&mut dc, base + idx, g.keys_clear.row(r), scale);
                }
                for k in 0..d {
                    dw[i].0[k] += scale * g.w_h[k];
                    dw[i].1[k] += scale * g.w_c[k];
                }
            }
        }
        let wpnce = wpnce * scale;
        if !wpnce.is_finite() || !ce.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }

        if update_head {
            let gq = head.backward(&q_tape, &normalize_backward(&q_unit, &q_norm, &dq))?;
            let gh = head.backward(&h_tape, &normalize_backward(&h_unit, &h_norm, &dh))?;
            let gc = head.backward(&c_tape, &normalize_backward(&c_unit, &c_norm, &dc))?;
            for (l, layer) in head.layers_mut().iter_mut().enumerate() {
                let gw = gq.weights[l].add(&gh.weights[l])?.add(&gc.weights[l])?;
                let gb = gq.biases[l].add(&gh.biases[l])?.add(&gc.biases[l])?;
                self.step_weight(&mut layer.weight, &gw, lr)?;
                layer.bias.adam_step(&gb, lr, AdamConfig::default())?;
            }
        }

        if update_dwfc {
            let mut acc = None;
            let inv = 1.0 / (2 * b) as f64;
            for (i, ((oh, th), (oc, tc))) in outs.iter().enumerate() {
                for (out, tape, domain_hazy) in [(oh, th, true), (oc, tc, false)] {
                    let (yh, yc) = if domain_hazy { (1, 0) } else { (0, 1) };
                    let (gl_h, gl_c) = bce_grad(out.logit_h, out.logit_c, yh, yc)?;
                    let mut up = DwfcUpstream {
                        logit_h: gl_h * inv,
                        logit_c: gl_c * inv,
                        x: None,
                    };
                    let mut head_extra = None;
                    if !cfg.detach_weights {
                        let (theta, w, dwv) = if domain_hazy {
                            (dwfc.head_h.value().as_slice(), &weights[i].w_h, &dw[i].0)
                        } else {
                            (dwfc.head_c.value().as_slice(), &weights[i].w_c, &dw[i].1)
                        };
                        let (dtheta, dx) = heat_vector_backward(theta, &out.x, w, dwv);
                        up.x = Some(dx);
                        head_extra = Some(Matrix::row_vector(&dtheta));
                    }
                    let mut g = dwfc.backward(tape, &up)?;
                    if let Some(extra) = head_extra {
                        if domain_hazy {
                            g.head_h.axpy(1.0, &extra)?;
                        } else {
                            g.head_c.axpy(1.0, &extra)?;
                        }
                    }
                    add_dwfc_grads(&mut acc, g)?;
                }
            }
            if let Some(g) = acc {
                let adam = AdamConfig::default();
                for (i, block) in dwfc.blocks_mut().iter_mut().enumerate() {
                    block.kernel.adam_step(&g.kernels[i], cfg.dwfc_lr, adam)?;
                    block.bias.adam_step(&g.biases[i], cfg.dwfc_lr, adam)?;
                }
                dwfc.head_h.adam_step(&g.head_h, cfg.dwfc_lr, adam)?;
                dwfc.head_c.adam_step(&g.head_c, cfg.dwfc_lr, adam)?;
            }
        }
        Ok((wpnce, ce))
    }
}

fn head_energy(head: &Omlp, dataset: &Dataset) -> Result<f64> {
    let (emb, _) = head.forward(&all_patches(dataset)?)?;
    Ok(offdiag_energy(&cosine_similarity_matrix(&emb)))
}

fn write_state(dir: &Path, head: &Omlp, dwfc: &DwfcNet) -> Result<()> {
    let mut named: Vec<(String, &ParamSlot)> = Vec::new();
    for (i, l) in head.layers().iter().enumerate() {
        named.push((format!("head_{i}_weight"), &l.weight));
        named.push((format!("head_{i}_bias"), &l.bias));
    }
    for (i, b) in dwfc.blocks().iter().enumerate() {
        named.push((format!("dwfc_{i}_kernel"), &b.kernel));
        named.push((format!("dwfc_{i}_bias"), &b.bias));
    }
    named.push(("dwfc_head_h".into(), &dwfc.head_h));
    named.push(("dwfc_head_c".into(), &dwfc.head_c));
    save_checkpoint(dir, named.iter().map(|(n, s)| (n.as_str(), *s)))
}

pub fn train_arm(cfg: &SyntheticConfig, arm: Arm, dataset: &Dataset, opts: &TrainOptions) -> Result<TrainedArm> {
    cfg.validate()?;
    let mut head = init_head(cfg, arm)?;
    let mut dwfc = init_dwfc(cfg)?;
    let initial_offdiag_energy = head_energy(&head, dataset)?;
    let ctx = Arms { cfg, arm };
    let schedule = cfg.schedule();
    let n = dataset.hazy.len().min(dataset.clear.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut partner: Vec<usize> = (0..n).collect();
    let mut rng = Rng::stream(cfg.seed, streams::SHUFFLE);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut last_good: Option<PathBuf> = None;
    let mut steps: u64 = 0;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at_epoch(epoch);
        rng.shuffle(&mut order);
        rng.shuffle(&mut partner);
        let (mut sum_w, mut sum_c, mut batches) = (0.0, 0.0, 0usize);
        for (oi, pi) in order.chunks(cfg.batch_size).zip(partner.chunks(cfg.batch_size)) {
            let pairs: Vec<_> = oi
                .iter()
                .zip(pi)
                .map(|(&h, &c)| (&dataset.hazy[h], &dataset.clear[c]))
                .collect();
            let (update_head, update_dwfc) = match cfg.update {
                UpdateMode::Joint => (true, true),
                UpdateMode::Alternating => (steps % 2 == 0, steps % 2 == 1),
            };
            let result = ctx.batch_step(&mut head, &mut dwfc, &pairs, lr, update_head && lr > 0.0, update_dwfc);
            let (w, c) = match result {
                Err(Error::NonFinite(_)) => {
                    return Err(Error::TrainingDiverged { epoch, last_good });
                }
                other => other?,
            };
            sum_w += w;
            sum_c += c;
            batches += 1;
            steps += 1;
        }
        trace.push(LossPoint {
            step: steps,
            wpnce: sum_w / batches as f64,
            ce: sum_c / batches as f64,
        });
        log::debug!(
            "{} epoch {epoch}: l_wpnce {:.5} l_ce {:.5}",
            arm.name(),
            sum_w / batches as f64,
            sum_c / batches as f64
        );
        if let Some(dir) = &opts.checkpoint_dir {
            let path = dir.join("last_good");
            write_state(&path, &head, &dwfc)?;
            last_good = Some(path);
        }
    }
    Ok(TrainedArm {
        arm,
        head,
        dwfc,
        loss_trace: trace,
        initial_offdiag_energy,
    })
}

fn report_for(trained: TrainedArm, dataset: &Dataset) -> Result<ExperimentReport> {
    let metrics = evaluate(&trained.head, &trained.dwfc, dataset)?;
    Ok(ExperimentReport::from_metrics(
        trained.arm,
        metrics,
        trained.initial_offdiag_energy,
        trained.head.max_orthonormality_residual(),
        trained.loss_trace,
    ))
}

/// Trains the Stiefel-constrained arm and reports on the training data.
pub fn train(cfg: &SyntheticConfig) -> Result<ExperimentReport> {
    let data = generate_dataset(cfg)?;
    report_for(train_arm(cfg, Arm::Omlp, &data, &TrainOptions::default())?, &data)
}

/// Trains each arm on the same data and initial draws.
pub fn run_arms(cfg: &SyntheticConfig, arms: &[Arm], opts: &TrainOptions) -> Result<Vec<ExperimentReport>> {
    let data = generate_dataset(cfg)?;
    arms.iter()
        .map(|&arm| {
            let arm_opts = TrainOptions {
                checkpoint_dir: opts.checkpoint_dir.as_ref().map(|d| d.join(arm.name())),
            };
            report_for(train_arm(cfg, arm, &data, &arm_opts)?, &data)
        })
        .collect()
}
