//! Central finite-difference checks of every backward pass.
//!
//! Each check draws a random input and a random upstream gradient `g`,
//! forms the scalar `L = sum(g * forward(x))` and compares the analytic
//! gradient against `(L(x + h) - L(x - h)) / 2h`. Stochastic layers are
//! checked with a frozen mask or noise draw.

use alloc::vec;
use alloc::vec::Vec;

use crate::layers::{Affine, BatchNorm, Dense, Dropout, Relu, SoftmaxCrossEntropy, Uout};
use crate::network::{build_network, ArchSpec, Network, Placement};
use crate::stats::AveragePolicy;
use crate::{LayerMode, Result, RngStream, Tensor};

pub const STEP: f64 = 1e-5;

/// Largest absolute deviation between the analytic and numerical gradient
/// of one quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub entries: usize,
    pub max_abs_dev: f64,
}

fn numeric(at: &[f64], mut loss: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut x = at.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = loss(&x)?;
        x[i] = orig - STEP;
        let down = loss(&x)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * STEP));
    }
    Ok(out)
}

fn compare(name: &'static str, analytic: &[f64], numerical: &[f64]) -> GradCheck {
    assert_eq!(
        analytic.len(),
        numerical.len(),
        "{name}: gradient sizes differ"
    );
    let max_abs_dev = analytic
        .iter()
        .zip(numerical)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    GradCheck {
        name,
        entries: analytic.len(),
        max_abs_dev,
    }
}

fn normals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("sizes match")
}

fn weighted_sum(g: &[f64], y: &Tensor) -> f64 {
    g.iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Dense gradients for the input and each parameter.
pub fn check_dense(rng: &mut RngStream) -> Result<Vec<GradCheck>> {
    let (m, d_in, d_out) = (4, 5, 3);
    let w = normals(rng, d_in * d_out);
    let b = normals(rng, d_out);
    let x = normals(rng, m * d_in);
    let g = normals(rng, m * d_out);
    let mut layer = Dense::new(d_in, d_out, w.clone(), Some(b.clone()))?;
    layer.forward(&matrix(m, d_in, x.clone()))?;
    let dx = layer.backward(&matrix(m, d_out, g.clone()))?;

    let loss = |w: &[f64], b: &[f64], x: &[f64]| -> Result<f64> {
        let y = Dense::new(d_in, d_out, w.to_vec(), Some(b.to_vec()))?.apply(&matrix(
            m,
            d_in,
            x.to_vec(),
        ))?;
        Ok(weighted_sum(&g, &y))
    };
    Ok(vec![
        compare("dense input", dx.data(), &numeric(&x, |x| loss(&w, &b, x))?),
        compare(
            "dense weight",
            layer.grad_weights(),
            &numeric(&w, |w| loss(w, &b, &x))?,
        ),
        compare(
            "dense bias",
            layer.grad_bias().expect("bias present"),
            &numeric(&b, |b| loss(&w, b, &x))?,
        ),
    ])
}

/// ReLU input gradient, with inputs kept away from the kink.
pub fn check_relu(rng: &mut RngStream) -> Result<GradCheck> {
    let (m, d) = (4, 6);
    let x: Vec<f64> = normals(rng, m * d)
        .into_iter()
        .map(|v| {
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    let g = normals(rng, m * d);
    let mut layer = Relu::new();
    layer.forward(&matrix(m, d, x.clone()));
    let dx = layer.backward(&matrix(m, d, g.clone()))?;
    let num = numeric(&x, |x| {
        Ok(weighted_sum(
            &g,
            &Relu::new().forward(&matrix(m, d, x.to_vec())),
        ))
    })?;
    Ok(compare("relu input", dx.data(), &num))
}

/// Dropout input gradient under a fixed mask.
pub fn check_dropout(rng: &mut RngStream) -> Result<GradCheck> {
    let (m, d, p) = (4, 6, 0.7);
    let x = normals(rng, m * d);
    let g = normals(rng, m * d);
    let mask = matrix(
        m,
        d,
        (0..m * d)
            .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
            .collect(),
    );
    let mut layer = Dropout::new(p)?;
    layer.forward_with_mask(&matrix(m, d, x.clone()), &mask)?;
    let dx = layer.backward(&matrix(m, d, g.clone()))?;
    let num = numeric(&x, |x| {
        let y = Dropout::new(p)?.forward_with_mask(&matrix(m, d, x.to_vec()), &mask)?;
        Ok(weighted_sum(&g, &y))
    })?;
    Ok(compare("dropout input", dx.data(), &num))
}

/// Uout input gradient under fixed noise.
pub fn check_uout(rng: &mut RngStream) -> Result<GradCheck> {
    let (m, d, beta) = (4, 6, 0.5);
    let x = normals(rng, m * d);
    let g = normals(rng, m * d);
    let noise = matrix(
        m,
        d,
        (0..m * d).map(|_| rng.uniform_in(-beta, beta)).collect(),
    );
    let mut layer = Uout::new(beta)?;
    layer.forward_with_noise(&matrix(m, d, x.clone()), &noise)?;
    let dx = layer.backward(&matrix(m, d, g.clone()))?;
    let num = numeric(&x, |x| {
        let y = Uout::new(beta)?.forward_with_noise(&matrix(m, d, x.to_vec()), &noise)?;
        Ok(weighted_sum(&g, &y))
    })?;
    Ok(compare("uout input", dx.data(), &num))
}

/// Train-mode batch norm on an 8x4 batch: the batch-coupled input
/// gradient and the scale and shift gradients.
pub fn check_batchnorm(rng: &mut RngStream) -> Result<Vec<GradCheck>> {
    let (m, d) = (8, 4);
    let x: Vec<f64> = normals(rng, m * d)
        .into_iter()
        .map(|v| 2.0 * v + 0.5)
        .collect();
    let g = normals(rng, m * d);
    let gamma: Vec<f64> = normals(rng, d).into_iter().map(|v| 1.0 + 0.3 * v).collect();
    let beta = normals(rng, d);
    let make = |gamma: &[f64], beta: &[f64]| -> Result<BatchNorm> {
        let mut bn = BatchNorm::with_options(
            d,
            AveragePolicy::Exponential { momentum: 0.1 },
            BatchNorm::DEFAULT_EPSILON,
            true,
        )?;
        *bn.affine_mut().expect("affine") = Affine::new(gamma.to_vec(), beta.to_vec());
        Ok(bn)
    };
    let loss = |gamma: &[f64], beta: &[f64], x: &[f64]| -> Result<f64> {
        let y = make(gamma, beta)?.forward(&matrix(m, d, x.to_vec()), LayerMode::Train)?;
        Ok(weighted_sum(&g, &y))
    };
    let mut bn = make(&gamma, &beta)?;
    bn.forward(&matrix(m, d, x.clone()), LayerMode::Train)?;
    let dx = bn.backward(&matrix(m, d, g.clone()))?;
    let affine = bn.affine().expect("affine");
    Ok(vec![
        compare(
            "batchnorm input",
            dx.data(),
            &numeric(&x, |x| loss(&gamma, &beta, x))?,
        ),
        compare(
            "batchnorm gamma",
            affine.grad_gamma(),
            &numeric(&gamma, |gm| loss(gm, &beta, &x))?,
        ),
        compare(
            "batchnorm beta",
            affine.grad_beta(),
            &numeric(&beta, |bt| loss(&gamma, bt, &x))?,
        ),
    ])
}

/// Mean softmax cross-entropy gradient with respect to the logits.
pub fn check_softmax_xent(rng: &mut RngStream) -> Result<GradCheck> {
    let (m, k) = (6, 4);
    let logits = normals(rng, m * k);
    let labels: Vec<usize> = (0..m).map(|_| rng.index(k)).collect();
    let mut head = SoftmaxCrossEntropy::new();
    head.forward(&matrix(m, k, logits.clone()), &labels)?;
    let grad = head.backward()?;
    let num = numeric(&logits, |z| {
        SoftmaxCrossEntropy::new().forward(&matrix(m, k, z.to_vec()), &labels)
    })?;
    Ok(compare("softmax cross-entropy logits", grad.data(), &num))
}

fn network_loss(net: &Network, x: &Tensor, labels: &[usize], noise: &RngStream) -> Result<f64> {
    let mut copy = net.clone();
    let logits = copy.forward(x, LayerMode::Train, &mut noise.clone())?;
    SoftmaxCrossEntropy::new().forward(&logits, labels)
}

/// Every parameter of a small Train-mode network with affine batch norm
/// and the given stochastic placement, against the cross-entropy loss. The noise stream is replayed for every
/// evaluation, which freezes masks and noise.
pub fn check_network(placement: Placement, rng: &mut RngStream) -> Result<GradCheck> {
    let arch = ArchSpec {
        input_dim: 3,
        hidden: vec![4],
        num_blocks: 2,
        num_classes: 3,
        placement,
        drop_ratio: if placement == Placement::UoutB {
            0.0
        } else {
            0.3
        },
        beta: if placement == Placement::UoutB {
            0.5
        } else {
            0.0
        },
        bn_affine: true,
        ..Default::default()
    };
    let mut net = build_network(&arch, rng)?;
    let m = 8;
    let x = matrix(m, 3, normals(rng, m * 3));
    let labels: Vec<usize> = (0..m).map(|_| rng.index(3)).collect();
    let noise = rng.substream(0);

    let logits = net.forward(&x, LayerMode::Train, &mut noise.clone())?;
    let mut head = SoftmaxCrossEntropy::new();
    head.forward(&logits, &labels)?;
    net.backward(&head.backward()?)?;
    let mut analytic = Vec::new();
    net.for_each_param(|_, g| analytic.extend_from_slice(g));

    let mut numerical = Vec::new();
    let mut block = 0;
    loop {
        let mut probe = net.clone();
        let mut values: Option<Vec<f64>> = None;
        let mut idx = 0;
        probe.for_each_param(|p, _| {
            if idx == block {
                values = Some(p.to_vec());
            }
            idx += 1;
        });
        let Some(values) = values else { break };
        let grads = numeric(&values, |v| {
            let mut moved = net.clone();
            let mut idx = 0;
            moved.for_each_param(|p, _| {
                if idx == block {
                    p.copy_from_slice(v);
                }
                idx += 1;
            });
            network_loss(&moved, &x, &labels, &noise)
        })?;
        numerical.extend(grads);
        block += 1;
    }
    Ok(compare(
        match placement {
            Placement::None => "network (no stochastic layer)",
            Placement::DropA => "network (dropout before bn)",
            Placement::DropB => "network (dropout before dense)",
            Placement::LastLayer => "network (dropout before classifier)",
            Placement::UoutB => "network (uout before dense)",
        },
        &analytic,
        &numerical,
    ))
}

/// Every check, each drawing from its own substream of `rng`.
pub fn run_all(rng: &RngStream) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    out.extend(check_dense(&mut rng.substream(0))?);
    out.push(check_relu(&mut rng.substream(1))?);
    out.push(check_dropout(&mut rng.substream(2))?);
    out.push(check_uout(&mut rng.substream(3))?);
    out.extend(check_batchnorm(&mut rng.substream(4))?);
    out.push(check_softmax_xent(&mut rng.substream(5))?);
    for (i, placement) in Placement::ALL.iter().enumerate() {
        out.push(check_network(*placement, &mut rng.substream(6 + i as u64))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_backward_matches_finite_differences() {
        for seed in 0..3 {
            for c in run_all(&RngStream::new(seed, 77)).unwrap() {
                assert!(c.entries > 0, "{c:?}");
                assert!(c.max_abs_dev < 1e-5, "seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let c = compare("x", &[1.0, 2.0], &[1.0, 2.1]);
        assert!((c.max_abs_dev - 0.1).abs() < 1e-12);
    }
}
