//! Independent direct-summation oracles for every layer of the autoencoder,
//! and central finite-difference checks of the analytic backward pass.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raman_n2n::autoencoder::{backward, count_params, forward, Architecture, Batch, ModelParams};

#[test]
fn default_network_matches_composed_oracles_on_736() {
    let arch = Architecture::default();
    let params = random_params(&arch, 5, 0.05);
    let rows = random_rows(2, 736, 17);
    let batch = Batch::<f64>::from_rows(&rows).unwrap();
    let (out, _) = forward(&params, &batch, false).unwrap();
    assert_eq!(out.len(), 736);
    for (i, r) in rows.iter().enumerate() {
        let (want, lens) = naive_network(&params, r);
        assert_eq!(lens, vec![736, 368, 184, 92, 46, 23, 23, 46, 92, 184, 368, 736, 736]);
        let got = out.row(i);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10 * scale, "{g} vs {w}");
        }
    }
}

#[test]
fn shape_preserved_for_multiples_of_32() {
    let arch = Architecture::default();
    let params = ModelParams::<f32>::build(&arch, 1).unwrap();
    for len in [32, 64, 736, 1024] {
        let batch = Batch::<f32>::zeros(2, len);
        let (out, _) = forward(&params, &batch, false).unwrap();
        assert_eq!((out.rows(), out.len()), (2, len));
    }
    assert!(forward(&params, &Batch::<f32>::zeros(1, 100), false).is_err());
}

#[test]
fn zero_input_zero_bias_gives_zero_output() {
    let params = ModelParams::<f64>::build(&Architecture::default(), 3).unwrap();
    let (out, _) = forward(&params, &Batch::zeros(1, 64), false).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_independent_of_batch_composition() {
    let params = random_params(&Architecture::default(), 8, 0.01).cast::<f32>();
    let rows = random_rows(5, 128, 3);
    let all = Batch::<f32>::from_rows(&rows).unwrap();
    let (full, _) = forward(&params, &all, false).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let single = Batch::<f32>::from_rows(std::slice::from_ref(r)).unwrap();
        let (one, _) = forward(&params, &single, false).unwrap();
        assert_eq!(one.row(0), full.row(i));
    }
}

#[test]
fn every_parameter_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let worst = check_all_gradients(&tiny_arch(5), 32, seed);
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
    }
    let worst = check_all_gradients(&tiny_arch(11), 32, 99);
    assert!(worst < 1e-4, "kernel 11: worst relative error {worst}");
}

#[test]
fn sampled_gradients_of_default_network() {
    let arch = Architecture::default();
    let params = random_params(&arch, 21, 0.05);
    let input = random_rows(1, 64, 7);
    let target = random_rows(1, 64, 8).concat();
    let batch = Batch::<f64>::from_rows(&input).unwrap();
    let (out, cache) = forward(&params, &batch, true).unwrap();
    let (_, dout) = loss_and_grad(&out, &target);
    let (grads, _) = backward(&params, cache.as_ref().unwrap(), &dout).unwrap();
    let analytic = grads.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let total = count_params(&arch);
    let mut offset = 0;
    // Eight coordinates per layer (weights and bias).
    for l in params.layers() {
        let n = l.weight.len() + l.bias.len();
        let mut picks: Vec<usize> = (0..6).map(|_| offset + rng.random_range(0..l.weight.len())).collect();
        picks.push(offset + l.weight.len());
        picks.push(offset + n - 1);
        for idx in picks {
            let mut plus = params.clone();
            *plus.iter_mut().nth(idx).unwrap() += h;
            let mut minus = params.clone();
            *minus.iter_mut().nth(idx).unwrap() -= h;
            let fd = (eval_loss(&plus, &batch, &target) - eval_loss(&minus, &batch, &target)) / (2.0 * h);
            assert!(rel_err(analytic[idx], fd) < 1e-4, "param {idx}: {} vs {fd}", analytic[idx]);
        }
        offset += n;
    }
    assert_eq!(offset, total);
}

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let params = random_params(&tiny_arch(5), 1, 0.1);
    let batch = Batch::<f64>::from_rows(&random_rows(3, 32, 2)).unwrap();
    let (_, cache) = forward(&params, &batch, true).unwrap();
    let (g, dx) = backward(&params, cache.as_ref().unwrap(), &Batch::zeros(3, 32)).unwrap();
    assert!(g.iter().all(|v| v == 0.0));
    assert!(dx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_input_gradients_flow_only_through_biases() {
    // With x = 0 every first-layer im2col column is zero, so the first layer's
    // weight gradient vanishes while bias gradients generally do not.
    let params = random_params(&tiny_arch(5), 2, 0.3);
    let batch = Batch::<f64>::zeros(1, 32);
    let (out, cache) = forward(&params, &batch, true).unwrap();
    let (g, _) = backward(&params, cache.as_ref().unwrap(), &out).unwrap();
    assert!(g.layers()[0].weight.iter().all(|&v| v == 0.0));
    assert!(g.layers().iter().any(|l| l.bias.iter().any(|&v| v != 0.0)));
}

#[test]
fn stale_cache_rejected() {
    let mut params = random_params(&tiny_arch(5), 1, 0.1);
    let batch = Batch::<f64>::from_rows(&random_rows(1, 32, 2)).unwrap();
    let (out, cache) = forward(&params, &batch, true).unwrap();
    params.layers_mut()[0].bias[0] += 1.0;
    assert!(backward(&params, cache.as_ref().unwrap(), &out).is_err());
    assert!(backward(&params, cache.as_ref().unwrap(), &Batch::zeros(2, 32)).is_err());
}
