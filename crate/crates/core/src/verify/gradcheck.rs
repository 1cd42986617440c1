//! Central finite-difference checks of the analytic gradients.
//!
//! Error is measured per parameter block as `‖g_analytic − g_fd‖ / scale`
//! over the checked entries, with `scale` the larger of the two norms but at
//! least `NOISE_FLOOR · (1 + |loss|)`: below that the difference quotient is
//! dominated by rounding (it grows as `1/h`), so tiny blocks are held to an
//! absolute bound instead. Blocks up to `FULL_LIMIT` entries are checked
//! exhaustively; larger blocks on `SAMPLED_ENTRIES` random entries plus one
//! random direction. Instances with a pre-activation closer than
//! `KINK_MARGIN` to a ReLU/LeakyReLU kink are redrawn.

use std::cell::RefCell;

use crate::dwfc::{bce_grad, bce_loss, heat_vector_backward, ChannelFeature, Domain, DwfcNet, DwfcUpstream};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::omlp::{Omlp, OrthoLinearLayer};
use crate::optim::ParamSlot;
use crate::rng::Rng;
use crate::stiefel::random_point;
use crate::wpnce::{wpnce_gradients, wpnce_loss, EmbeddingBatch, WeightPair};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-4;
pub const NOISE_FLOOR: f64 = 1e-3;
const FULL_LIMIT: usize = 128;
const SAMPLED_ENTRIES: usize = 48;
const MAX_REDRAWS: usize = 1000;

/// Widths and depths cycled through by [`omlp_instances`].
pub const OMLP_WIDTHS: [usize; 3] = [4, 16, 256];
pub const OMLP_DEPTHS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub rel_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCheck {
    pub label: String,
    pub blocks: Vec<BlockError>,
}

impl InstanceCheck {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }
}

fn rel_error(a: &[f64], b: &[f64], loss: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(NOISE_FLOOR * (1.0 + loss.abs()))
}

/// Compares `analytic` against finite differences of `loss`, which receives
/// a perturbed copy of the block.
fn check_block(
    name: &str,
    base: &[f64],
    analytic: &[f64],
    rng: &mut Rng,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<BlockError>> {
    let n = base.len();
    if analytic.len() != n {
        return Err(Error::Shape(format!(
            "{name}: gradient has {} entries, block {n}",
            analytic.len()
        )));
    }
    let entries: Vec<usize> = if n <= FULL_LIMIT {
        (0..n).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(SAMPLED_ENTRIES);
        idx
    };
    let center = loss(base)?;
    let mut buf = base.to_vec();
    let mut fd = Vec::with_capacity(entries.len());
    for &i in &entries {
        buf[i] = base[i] + FD_STEP;
        let up = loss(&buf)?;
        buf[i] = base[i] - FD_STEP;
        let down = loss(&buf)?;
        buf[i] = base[i];
        fd.push((up - down) / (2.0 * FD_STEP));
    }
    let picked: Vec<f64> = entries.iter().map(|&i| analytic[i]).collect();
    let mut out = vec![BlockError {
        name: name.to_string(),
        rel_error: rel_error(&picked, &fd, center),
        entries: entries.len(),
    }];
    if n > FULL_LIMIT {
        let dir: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let shifted = |s: f64| -> Vec<f64> { base.iter().zip(&dir).map(|(b, d)| b + s * d).collect() };
        let fd_dir = (loss(&shifted(FD_STEP))? - loss(&shifted(-FD_STEP))?) / (2.0 * FD_STEP);
        out.push(BlockError {
            name: format!("{name}[direction]"),
            rel_error: rel_error(&[dot(analytic, &dir)], &[fd_dir], center),
            entries: 1,
        });
    }
    Ok(out)
}

fn with_values(m: &Matrix, data: &[f64]) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), data.to_vec()).expect("same shape")
}

/// Evaluates `net` with one parameter block overwritten, then restores it.
fn with_omlp_block(
    net: &RefCell<Omlp>,
    layer: usize,
    weight: bool,
    data: &[f64],
    eval: impl Fn(&Omlp) -> Result<f64>,
) -> Result<f64> {
    let set = |vals: Matrix| -> Result<Matrix> {
        let mut n = net.borrow_mut();
        let l = &mut n.layers_mut()[layer];
        let slot = if weight { &mut l.weight } else { &mut l.bias };
        let old = slot.value().clone();
        slot.set_value(vals)?;
        Ok(old)
    };
    let shape = {
        let n = net.borrow();
        let l = &n.layers()[layer];
        if weight {
            l.weight.value().shape()
        } else {
            l.bias.value().shape()
        }
    };
    let old = set(Matrix::from_vec(shape.0, shape.1, data.to_vec())?)?;
    let value = eval(&net.borrow());
    set(old)?;
    value
}

/// One O-MLP instance: loss `⟨forward(x), R⟩`.
pub fn omlp_instance(depth: usize, width: usize, rng: &mut Rng) -> Result<InstanceCheck> {
    let batch = 3;
    for _ in 0..MAX_REDRAWS {
        let layers = (0..depth)
            .map(|_| {
                Ok(OrthoLinearLayer {
                    weight: ParamSlot::euclidean(random_point(width, width, rng)?.into_matrix()),
                    bias: ParamSlot::euclidean(rng.normal_matrix(1, width).scale(0.1)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Omlp::from_layers(layers)?;
        let x = rng.normal_matrix(batch, width);
        let r = rng.normal_matrix(batch, width);
        let (_, tape) = net.forward(&x)?;
        if tape.min_abs_preactivation() < KINK_MARGIN {
            continue;
        }
        let grads = net.backward(&tape, &r)?;
        let eval = |n: &Omlp, x: &Matrix| -> Result<f64> { n.forward(x)?.0.frob_dot(&r) };
        let mut blocks = Vec::new();
        let scratch = RefCell::new(net.clone());
        for l in 0..depth {
            let w = net.layers()[l].weight.value();
            blocks.extend(check_block(
                &format!("weight{l}"),
                w.as_slice(),
                grads.weights[l].as_slice(),
                rng,
                |d| with_omlp_block(&scratch, l, true, d, |n| eval(n, &x)),
            )?);
            let b = net.layers()[l].bias.value();
            blocks.extend(check_block(
                &format!("bias{l}"),
                b.as_slice(),
                grads.biases[l].as_slice(),
                rng,
                |d| with_omlp_block(&scratch, l, false, d, |n| eval(n, &x)),
            )?);
        }
        blocks.extend(check_block("input", x.as_slice(), grads.input.as_slice(), rng, |d| {
            eval(&net, &with_values(&x, d))
        })?);
        return Ok(InstanceCheck {
            label: format!("depth {depth} width {width}"),
            blocks,
        });
    }
    Err(Error::Parameter("could not draw a kink-free O-MLP instance".into()))
}

/// `count` instances cycling through every depth and width.
pub fn omlp_instances(seed: u64, count: usize) -> Result<Vec<InstanceCheck>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let depth = OMLP_DEPTHS[i % 3];
            let width = OMLP_WIDTHS[(i / 3) % 3];
            omlp_instance(depth, width, &mut rng)
        })
        .collect()
}

enum DwfcBlock {
    Kernel(usize),
    Bias(usize),
    HeadH,
    HeadC,
}

fn dwfc_replace(net: &DwfcNet, which: &DwfcBlock, data: &[f64]) -> DwfcNet {
    let mut n = net.clone();
    let slot = match which {
        DwfcBlock::Kernel(i) => &mut n.blocks_mut()[*i].kernel,
        DwfcBlock::Bias(i) => &mut n.blocks_mut()[*i].bias,
        DwfcBlock::HeadH => &mut n.head_h,
        DwfcBlock::HeadC => &mut n.head_c,
    };
    *slot = ParamSlot::euclidean(with_values(slot.value(), data));
    n
}

fn abs_softmax_min(theta: &[f64], x: &[f64]) -> f64 {
    theta
        .iter()
        .zip(x)
        .map(|(t, v)| (t * v).abs())
        .fold(f64::INFINITY, f64::min)
}

/// One classifier instance. Loss `bce(logits) + ⟨x, r⟩` for the network
/// blocks, and `⟨w_h, a⟩ + ⟨w_c, b⟩` for the heat-vector backward.
pub fn dwfc_instance(rng: &mut Rng) -> Result<InstanceCheck> {
    for _ in 0..MAX_REDRAWS {
        let c = 2 + rng.below(7);
        let s = 1 + rng.below(6);
        let mut net = DwfcNet::init(c, s, rng)?;
        for b in net.blocks_mut() {
            b.kernel = ParamSlot::euclidean(rng.normal_matrix(c, s).scale(0.7));
            b.bias = ParamSlot::euclidean(rng.normal_matrix(1, c).scale(0.1));
        }
        let feat = ChannelFeature::new(rng.normal_matrix(c, s))?;
        let domain = if rng.below(2) == 0 { Domain::Hazy } else { Domain::Clear };
        let (yh, yc) = domain.labels();
        let r: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let (out, tape) = net.forward(&feat)?;
        let th = net.head_h.value().as_slice().to_vec();
        let tc = net.head_c.value().as_slice().to_vec();
        if tape.min_abs_preactivation() < KINK_MARGIN
            || abs_softmax_min(&th, &out.x) < KINK_MARGIN
            || abs_softmax_min(&tc, &out.x) < KINK_MARGIN
        {
            continue;
        }
        let (gh, gc) = bce_grad(out.logit_h, out.logit_c, yh, yc)?;
        let grads = net.backward(
            &tape,
            &DwfcUpstream {
                logit_h: gh,
                logit_c: gc,
                x: Some(r.clone()),
            },
        )?;
        let eval = |n: &DwfcNet, f: &ChannelFeature| -> Result<f64> {
            let (o, _) = n.forward(f)?;
            Ok(bce_loss(o.logit_h, o.logit_c, yh, yc)? + dot(&o.x, &r))
        };

        let mut blocks = Vec::new();
        let nb = net.blocks().len();
        let mut targets: Vec<(String, DwfcBlock, Vec<f64>, Vec<f64>)> = Vec::new();
        for i in 0..nb {
            targets.push((
                format!("kernel{i}"),
                DwfcBlock::Kernel(i),
                net.blocks()[i].kernel.value().as_slice().to_vec(),
                grads.kernels[i].as_slice().to_vec(),
            ));
            targets.push((
                format!("bias{i}"),
                DwfcBlock::Bias(i),
                net.blocks()[i].bias.value().as_slice().to_vec(),
                grads.biases[i].as_slice().to_vec(),
            ));
        }
        targets.push((
            "head_h".into(),
            DwfcBlock::HeadH,
            th.clone(),
            grads.head_h.as_slice().to_vec(),
        ));
        targets.push((
            "head_c".into(),
            DwfcBlock::HeadC,
            tc.clone(),
            grads.head_c.as_slice().to_vec(),
        ));
        for (name, which, base, g) in &targets {
            blocks.extend(check_block(name, base, g, rng, |d| {
                eval(&dwfc_replace(&net, which, d), &feat)
            })?);
        }
        blocks.extend(check_block(
            "input",
            feat.values().as_slice(),
            grads.input.as_slice(),
            rng,
            |d| eval(&net, &ChannelFeature::new(with_values(feat.values(), d))?),
        )?);

        // heat vectors as functions of (θ, x)
        let a: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let w = net.heat_vectors(&out.x)?;
        let (dth, dxh) = heat_vector_backward(&th, &out.x, &w.w_h, &a);
        let (dtc, dxc) = heat_vector_backward(&tc, &out.x, &w.w_c, &b);
        let heat = |th: &[f64], tc: &[f64], x: &[f64]| -> Result<f64> {
            let n = dwfc_replace(&dwfc_replace(&net, &DwfcBlock::HeadH, th), &DwfcBlock::HeadC, tc);
            let w = n.heat_vectors(x)?;
            Ok(dot(&w.w_h, &a) + dot(&w.w_c, &b))
        };
        blocks.extend(check_block("heat_head_h", &th, &dth, rng, |d| heat(d, &tc, &out.x))?);
        blocks.extend(check_block("heat_head_c", &tc, &dtc, rng, |d| heat(&th, d, &out.x))?);
        let dx: Vec<f64> = dxh.iter().zip(&dxc).map(|(p, q)| p + q).collect();
        blocks.extend(check_block("heat_x", &out.x, &dx, rng, |d| heat(&th, &tc, d))?);
        return Ok(InstanceCheck {
            label: format!("channels {c} positions {s}"),
            blocks,
        });
    }
    Err(Error::Parameter(
        "could not draw a kink-free classifier instance".into(),
    ))
}

pub fn dwfc_instances(seed: u64, count: usize) -> Result<Vec<InstanceCheck>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count).map(|_| dwfc_instance(&mut rng)).collect()
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn unit_rows(rng: &mut Rng, rows: usize, d: usize) -> Matrix {
    let data: Vec<f64> = (0..rows).flat_map(|_| unit(rng, d)).collect();
    Matrix::from_vec(rows, d, data).expect("finite")
}

fn simplex(rng: &mut Rng, d: usize) -> Vec<f64> {
    crate::dwfc::softmax(&(0..d).map(|_| rng.normal()).collect::<Vec<_>>())
}

/// One loss instance: random unit embeddings, random simplex weights.
pub fn wpnce_instance(rng: &mut Rng) -> Result<InstanceCheck> {
    let d = 2 + rng.below(15);
    let nc = 1 + rng.below(8);
    let nn = rng.below(9);
    let tau = if rng.below(2) == 0 {
        crate::wpnce::DEFAULT_TAU
    } else {
        0.05 + rng.uniform()
    };
    let batch = EmbeddingBatch::new(unit(rng, d), unit(rng, d), unit_rows(rng, nc, d), unit_rows(rng, nn, d))?;
    let weights = WeightPair::new(simplex(rng, d), simplex(rng, d))?;
    let g = wpnce_gradients(&batch, &weights, tau)?;

    let q = batch.query().to_vec();
    let kp = batch.key_pos_hazy().to_vec();
    let kc = batch.keys_clear().clone();
    let kn = batch.keys_neg_hazy().clone();
    let loss = |q: &[f64], kp: &[f64], kc: &Matrix, kn: &Matrix, w: &WeightPair| -> Result<f64> {
        wpnce_loss(
            &EmbeddingBatch::from_raw(q.to_vec(), kp.to_vec(), kc.clone(), kn.clone())?,
            w,
            tau,
        )
    };
    let mut blocks = Vec::new();
    blocks.extend(check_block("query", &q, &g.query, rng, |v| {
        loss(v, &kp, &kc, &kn, &weights)
    })?);
    blocks.extend(check_block("key_pos_hazy", &kp, &g.key_pos_hazy, rng, |v| {
        loss(&q, v, &kc, &kn, &weights)
    })?);
    blocks.extend(check_block(
        "keys_clear",
        kc.as_slice(),
        g.keys_clear.as_slice(),
        rng,
        |v| loss(&q, &kp, &with_values(&kc, v), &kn, &weights),
    )?);
    if nn > 0 {
        blocks.extend(check_block(
            "keys_neg_hazy",
            kn.as_slice(),
            g.keys_neg_hazy.as_slice(),
            rng,
            |v| loss(&q, &kp, &kc, &with_values(&kn, v), &weights),
        )?);
    }
    blocks.extend(check_block("w_h", &weights.w_h, &g.w_h, rng, |v| {
        loss(
            &q,
            &kp,
            &kc,
            &kn,
            &WeightPair {
                w_h: v.to_vec(),
                w_c: weights.w_c.clone(),
            },
        )
    })?);
    blocks.extend(check_block("w_c", &weights.w_c, &g.w_c, rng, |v| {
        loss(
            &q,
            &kp,
            &kc,
            &kn,
            &WeightPair {
                w_h: weights.w_h.clone(),
                w_c: v.to_vec(),
            },
        )
    })?);
    Ok(InstanceCheck {
        label: format!("dim {d} clear {nc} negatives {nn} tau {tau}"),
        blocks,
    })
}

pub fn wpnce_instances(seed: u64, count: usize) -> Result<Vec<InstanceCheck>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count).map(|_| wpnce_instance(&mut rng)).collect()
}
