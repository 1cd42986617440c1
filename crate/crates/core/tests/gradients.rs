//! Analytic gradients against central differences.

use orthodc_core::dwfc::{bce_loss, heat_vector_backward, softmax, ChannelFeature, Domain, DwfcNet, DwfcUpstream};
use orthodc_core::linalg::Matrix;
use orthodc_core::omlp::{Omlp, OrthoLinearLayer};
use orthodc_core::optim::ParamSlot;
use orthodc_core::rng::Rng;
use orthodc_core::stiefel::random_point;
use orthodc_core::verify::gradcheck::{self, FD_TOL};
use orthodc_core::wpnce::{wpnce_gradients, wpnce_loss, EmbeddingBatch, WeightPair};

const H: f64 = 1e-6;

fn central(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let mut buf = at.to_vec();
    (0..at.len())
        .map(|i| {
            buf[i] = at[i] + H;
            let up = f(&buf);
            buf[i] = at[i] - H;
            let down = f(&buf);
            buf[i] = at[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n(a).max(n(b)).max(1e-3)
}

#[test]
fn omlp_weights_and_biases_every_depth() {
    let mut rng = Rng::seed_from_u64(11);
    for depth in 1..=3 {
        for width in [4, 16] {
            let mut checked = 0;
            while checked < 3 {
                let layers: Vec<OrthoLinearLayer> = (0..depth)
                    .map(|_| OrthoLinearLayer {
                        weight: ParamSlot::stiefel(random_point(width, width, &mut rng).unwrap()),
                        bias: ParamSlot::euclidean(rng.normal_matrix(1, width).scale(0.1)),
                    })
                    .collect();
                let net = Omlp::from_layers(layers).unwrap();
                let x = rng.normal_matrix(5, width);
                let r = rng.normal_matrix(5, width);
                let (_, tape) = net.forward(&x).unwrap();
                if tape.min_abs_preactivation() < 1e-4 {
                    continue;
                }
                let grads = net.backward(&tape, &r).unwrap();
                for l in 0..depth {
                    // Perturb through a free copy so off-manifold points are allowed.
                    let loss = |vals: &[f64], bias: bool| {
                        let mut layers = net.layers().to_vec();
                        let slot = if bias {
                            &mut layers[l].bias
                        } else {
                            &mut layers[l].weight
                        };
                        let shape = slot.value().shape();
                        *slot = ParamSlot::euclidean(Matrix::from_vec(shape.0, shape.1, vals.to_vec()).unwrap());
                        let n = Omlp::from_layers(layers).unwrap();
                        n.forward(&x).unwrap().0.frob_dot(&r).unwrap()
                    };
                    let w = net.layers()[l].weight.value().as_slice();
                    let fd = central(|v| loss(v, false), w);
                    assert!(
                        rel(grads.weights[l].as_slice(), &fd) < FD_TOL,
                        "depth {depth} width {width} layer {l}"
                    );
                    let b = net.layers()[l].bias.value().as_slice();
                    let fd = central(|v| loss(v, true), b);
                    assert!(rel(grads.biases[l].as_slice(), &fd) < FD_TOL);
                }
                checked += 1;
            }
        }
    }
}

#[test]
fn oracle_instances_cover_all_shapes() {
    let omlp = gradcheck::omlp_instances(5, 50).unwrap();
    for depth in 1..=3 {
        for width in [4, 16, 256] {
            let label = format!("depth {depth} width {width}");
            assert!(omlp.iter().any(|c| c.label == label), "{label} missing");
        }
    }
    for inst in omlp
        .iter()
        .chain(&gradcheck::dwfc_instances(5, 50).unwrap())
        .chain(&gradcheck::wpnce_instances(5, 50).unwrap())
    {
        assert!(inst.worst() < FD_TOL, "{}: {:?}", inst.label, inst.blocks);
    }
}

/// Plain-sum WPNCE with no log-space tricks.
fn naive_wpnce(z: &[f64], pos: &[f64], clear: &[Vec<f64>], negs: &[Vec<f64>], w: &WeightPair, tau: f64) -> f64 {
    let l = |wt: &dyn Fn(usize) -> f64, a: &[f64], b: &[f64]| {
        ((0..a.len()).map(|d| wt(d) * a[d] * b[d]).sum::<f64>() / tau).exp()
    };
    let mut p = l(&|d| w.w_h[d], z, pos);
    let mut n = l(&|d| 1.0 - w.w_h[d], z, pos);
    for k in clear {
        p += l(&|d| w.w_c[d], z, k);
        n += l(&|d| 1.0 - w.w_c[d], z, k);
    }
    for k in negs {
        n += l(&|_| 1.0, z, k);
    }
    -(p / (p + n)).ln()
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn wpnce_matches_naive_sum_and_its_derivative() {
    let mut rng = Rng::seed_from_u64(12);
    for _ in 0..50 {
        let d = 2 + rng.below(6);
        let tau = 0.2 + rng.uniform();
        let z = unit(&mut rng, d);
        let pos = unit(&mut rng, d);
        let clear: Vec<Vec<f64>> = (0..1 + rng.below(4)).map(|_| unit(&mut rng, d)).collect();
        let negs: Vec<Vec<f64>> = (0..rng.below(4)).map(|_| unit(&mut rng, d)).collect();
        let raw_h: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let raw_c: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let w = WeightPair::new(softmax(&raw_h), softmax(&raw_c)).unwrap();

        let neg_m = if negs.is_empty() {
            Matrix::zeros(0, d)
        } else {
            Matrix::from_rows(&negs)
        };
        let batch = EmbeddingBatch::new(z.clone(), pos.clone(), Matrix::from_rows(&clear), neg_m).unwrap();
        let lib = wpnce_loss(&batch, &w, tau).unwrap();
        let naive = naive_wpnce(&z, &pos, &clear, &negs, &w, tau);
        assert!((lib - naive).abs() < 1e-12 * (1.0 + naive.abs()));

        let g = wpnce_gradients(&batch, &w, tau).unwrap();
        assert!((g.loss - naive).abs() < 1e-12 * (1.0 + naive.abs()));
        let fd = central(|q| naive_wpnce(q, &pos, &clear, &negs, &w, tau), &z);
        assert!(rel(&g.query, &fd) < FD_TOL);
        let fd = central(|p| naive_wpnce(&z, p, &clear, &negs, &w, tau), &pos);
        assert!(rel(&g.key_pos_hazy, &fd) < FD_TOL);
        let fd = central(
            |wh| {
                naive_wpnce(
                    &z,
                    &pos,
                    &clear,
                    &negs,
                    &WeightPair {
                        w_h: wh.to_vec(),
                        w_c: w.w_c.clone(),
                    },
                    tau,
                )
            },
            &w.w_h,
        );
        assert!(rel(&g.w_h, &fd) < FD_TOL);
    }
}

#[test]
fn dwfc_heads_and_heat_backward() {
    let mut rng = Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 10 {
        let c = 2 + rng.below(6);
        let s = 1 + rng.below(5);
        let net = DwfcNet::init(c, s, &mut rng).unwrap();
        let feat = ChannelFeature::new(rng.normal_matrix(c, s)).unwrap();
        let (out, tape) = net.forward(&feat).unwrap();
        if tape.min_abs_preactivation() < 1e-4 {
            continue;
        }
        let (yh, yc) = Domain::Hazy.labels();
        let eps = 1e-7;
        let dh = (bce_loss(out.logit_h + eps, out.logit_c, yh, yc).unwrap()
            - bce_loss(out.logit_h - eps, out.logit_c, yh, yc).unwrap())
            / (2.0 * eps);
        let grads = net
            .backward(
                &tape,
                &DwfcUpstream {
                    logit_h: dh,
                    logit_c: 0.0,
                    x: None,
                },
            )
            .unwrap();
        let head_loss = |theta: &[f64]| {
            let logit: f64 = theta.iter().zip(&out.x).map(|(t, x)| t * x).sum();
            bce_loss(logit, out.logit_c, yh, yc).unwrap()
        };
        let fd = central(head_loss, net.head_h.value().as_slice());
        assert!(rel(grads.head_h.as_slice(), &fd) < FD_TOL);
        assert!(grads.head_c.max_abs() == 0.0);

        // Heat vector: loss ⟨softmax(|θ⊙x|), r⟩.
        let r: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let theta = net.head_h.value().as_slice().to_vec();
        let heat = |t: &[f64], x: &[f64]| -> f64 {
            let a: Vec<f64> = t.iter().zip(x).map(|(t, x)| (t * x).abs()).collect();
            softmax(&a).iter().zip(&r).map(|(w, r)| w * r).sum()
        };
        let w = net.heat_vectors(&out.x).unwrap().w_h;
        let (dt, dx) = heat_vector_backward(&theta, &out.x, &w, &r);
        assert!(rel(&dt, &central(|t| heat(t, &out.x), &theta)) < FD_TOL);
        assert!(rel(&dx, &central(|x| heat(&theta, x), &out.x)) < FD_TOL);
        checked += 1;
    }
}
