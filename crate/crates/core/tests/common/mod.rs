//! Direct-summation layer oracles and finite-difference helpers shared by
//! the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raman_n2n::autoencoder::{backward, forward, Architecture, Batch, LayerKind, ModelParams};

/// x: [channel][position]; weight (out, in, k); "same" padding k/2.
pub fn naive_conv(x: &[Vec<f64>], w: &[f64], b: &[f64], out_ch: usize, k: usize) -> Vec<Vec<f64>> {
    let in_ch = x.len();
    let len = x[0].len();
    let pad = (k / 2) as isize;
    (0..out_ch)
        .map(|o| {
            (0..len)
                .map(|l| {
                    let mut acc = b[o];
                    for i in 0..in_ch {
                        for t in 0..k {
                            let src = l as isize + t as isize - pad;
                            if src >= 0 && (src as usize) < len {
                                acc += w[(o * in_ch + i) * k + t] * x[i][src as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Transposed convolution by its scatter definition: input position l with
/// tap t contributes to output j = l*stride + t - pad. Weight (in, out, k).
pub fn naive_conv_t(
    x: &[Vec<f64>],
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    k: usize,
    stride: usize,
    output_padding: usize,
) -> Vec<Vec<f64>> {
    let in_ch = x.len();
    let len = x[0].len();
    let pad = k / 2;
    let out_len = (len - 1) * stride + k + output_padding - 2 * pad;
    let mut y: Vec<Vec<f64>> = (0..out_ch).map(|o| vec![b[o]; out_len]).collect();
    for i in 0..in_ch {
        for o in 0..out_ch {
            for l in 0..len {
                for t in 0..k {
                    let j = (l * stride + t) as isize - pad as isize;
                    if j >= 0 && (j as usize) < out_len {
                        y[o][j as usize] += w[(i * out_ch + o) * k + t] * x[i][l];
                    }
                }
            }
        }
    }
    y
}

pub fn naive_relu(x: &mut [Vec<f64>]) {
    x.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
}

pub fn naive_pool(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|c| c.chunks(2).map(|p| p[0].max(p[1])).collect()).collect()
}

/// Full network composed from the single-layer oracles, one spectrum.
/// Returns the output and the length at every stage.
pub fn naive_network(params: &ModelParams<f64>, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let arch = params.arch();
    let mut x = vec![input.to_vec()];
    let mut lens = vec![input.len()];
    for (spec, p) in arch.layers().iter().zip(params.layers()) {
        x = match spec.kind {
            LayerKind::Encoder | LayerKind::Latent => naive_conv(&x, &p.weight, &p.bias, spec.out_ch, spec.kernel),
            LayerKind::Decoder => naive_conv_t(&x, &p.weight, &p.bias, spec.out_ch, spec.kernel, 2, 1),
            LayerKind::Output => naive_conv_t(&x, &p.weight, &p.bias, spec.out_ch, spec.kernel, 1, 0),
        };
        if spec.kind != LayerKind::Output {
            naive_relu(&mut x);
        }
        if spec.kind == LayerKind::Encoder {
            x = naive_pool(&x);
        }
        lens.push(x[0].len());
    }
    (x.pop().unwrap(), lens)
}

pub fn random_params(arch: &Architecture, seed: u64, bias_scale: f64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::build(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in p.layers_mut() {
        for b in &mut l.bias {
            *b = bias_scale * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    p
}

pub fn random_rows(rows: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..len).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()).collect()
}

pub fn tiny_arch(kernel: usize) -> Architecture {
    Architecture { encoder_filters: vec![2, 3], latent_filters: 3, decoder_filters: vec![3, 2], kernel }
}

/// Half squared error against a fixed target; gradient wrt output is the residual.
pub fn loss_and_grad(out: &Batch<f64>, target: &[f64]) -> (f64, Batch<f64>) {
    let resid: Vec<f64> = out.data().iter().zip(target).map(|(o, t)| o - t).collect();
    let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
    (loss, Batch::new(out.rows(), out.len(), resid).unwrap())
}

pub fn eval_loss(params: &ModelParams<f64>, batch: &Batch<f64>, target: &[f64]) -> f64 {
    let (out, _) = forward(params, batch, false).unwrap();
    loss_and_grad(&out, target).0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks every parameter (and every input element) of a small network.
pub fn check_all_gradients(arch: &Architecture, len: usize, seed: u64) -> f64 {
    let params = random_params(arch, seed, 0.1);
    let input = random_rows(1, len, seed + 100);
    let target = random_rows(1, len, seed + 200).concat();
    let batch = Batch::<f64>::from_rows(&input).unwrap();
    let (out, cache) = forward(&params, &batch, true).unwrap();
    let (_, dout) = loss_and_grad(&out, &target);
    let (grads, dinput) = backward(&params, cache.as_ref().unwrap(), &dout).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let analytic = grads.to_flat();
    for idx in 0..params.count() {
        let mut plus = params.clone();
        *plus.iter_mut().nth(idx).unwrap() += h;
        let mut minus = params.clone();
        *minus.iter_mut().nth(idx).unwrap() -= h;
        let fd = (eval_loss(&plus, &batch, &target) - eval_loss(&minus, &batch, &target)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[idx], fd));
    }
    for idx in 0..len {
        let mut plus = input.clone();
        plus[0][idx] += h;
        let mut minus = input.clone();
        minus[0][idx] -= h;
        let fp = eval_loss(&params, &Batch::from_rows(&plus).unwrap(), &target);
        let fm = eval_loss(&params, &Batch::from_rows(&minus).unwrap(), &target);
        worst = worst.max(rel_err(dinput.data()[idx], (fp - fm) / (2.0 * h)));
    }
    worst
}
