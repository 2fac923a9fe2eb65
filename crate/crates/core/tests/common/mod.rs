#![allow(dead_code)]

use ndarray::Array3;
use scalevit::model::{HeadKind, Mode, ModelConfig, ModelParams};
use scalevit::rng;
use scalevit::training::{batch_loss_and_grad, Loss, Target};
use scalevit::Exec;

/// embed 16, depth 1, one head, 8x8 images, patch 4.
pub fn tiny_config(n_channels: usize, head: HeadKind) -> ModelConfig {
    ModelConfig {
        image_height: 8,
        image_width: 8,
        patch_size: 4,
        embed_dim: 16,
        depth: 1,
        n_heads: 1,
        linformer_k: 4,
        mlp_dim: 24,
        n_channels,
        head,
        dropout_rate: 0.0,
    }
}

pub fn random_images(seed: u64, n: usize, cfg: &ModelConfig) -> Vec<Array3<f32>> {
    let mut r = rng::rng_from(seed, &[]);
    (0..n)
        .map(|_| {
            Array3::from_shape_simple_fn((cfg.n_channels, cfg.image_height, cfg.image_width), || {
                rng::unit_f64(&mut r) as f32
            })
        })
        .collect()
}

/// Initial parameters plus N(0, spread²) noise everywhere, so that every
/// path through the network carries a non-trivial gradient.
pub fn spread_params(cfg: &ModelConfig, seed: u64, spread: f64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed).unwrap();
    let mut r = rng::rng_from(seed, &[99]);
    p.for_each_mut(|t| {
        for v in t.iter_mut() {
            *v += spread * rng::normal(&mut r);
        }
    });
    p
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares the analytic gradient with central differences for every
/// parameter. Relative error uses `max(|a|, |n|, floor)` as denominator.
pub fn gradient_check(
    cfg: &ModelConfig,
    params: &ModelParams,
    images: &[Array3<f32>],
    targets: &[Target],
    loss: Loss,
    mode: Mode,
    eps: f64,
    floor: f64,
) -> GradCheck {
    let views: Vec<_> = images.iter().map(|a| a.view()).collect();
    let (_, analytic) = batch_loss_and_grad(params, cfg, &views, targets, loss, mode, Exec::Sequential).unwrap();
    let eval = |p: &ModelParams| batch_loss_and_grad(p, cfg, &views, targets, loss, mode, Exec::Sequential).unwrap().0;
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut probe = params.clone();
    let n_tensors = grads.len();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for ti in 0..n_tensors {
        for i in 0..grads[ti].len() {
            let orig = probe.tensors_mut()[ti][i];
            probe.tensors_mut()[ti][i] = orig + eps;
            let plus = eval(&probe);
            probe.tensors_mut()[ti][i] = orig - eps;
            let minus = eval(&probe);
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[ti][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            out.max_abs_error = out.max_abs_error.max(abs);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    out
}

use ndarray::Array2;
use scalevit::signal::{Labels, Quadrant, Trial};

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch{}", i + 1)).collect()
}

/// Channel 0 is a shared source amplified `gain` times plus small noise;
/// the remaining channels are iid unit noise.
pub fn amplified_trials(n_trials: usize, n_channels: usize, n_samples: usize, gain: f64, seed: u64) -> Vec<Trial> {
    let labels = Labels::new(Quadrant::Q1, 7.0, 7.0).unwrap();
    (0..n_trials)
        .map(|t| {
            let mut r = rng::rng_from(seed, &[t as u64]);
            let mut samples = Array2::<f32>::zeros((n_channels, n_samples));
            for s in 0..n_samples {
                let source = rng::normal(&mut r);
                samples[[0, s]] = (gain * source + 0.1 * rng::normal(&mut r)) as f32;
                for c in 1..n_channels {
                    samples[[c, s]] = rng::normal(&mut r) as f32;
                }
            }
            Trial::new(1, t as u16 + 1, samples, 128.0, names(n_channels), labels).unwrap()
        })
        .collect()
}

pub fn iid_trials(n_trials: usize, n_channels: usize, n_samples: usize, seed: u64) -> Vec<Trial> {
    amplified_trials(n_trials, n_channels, n_samples, 0.0, seed)
        .into_iter()
        .map(|mut t| {
            // replace the near-silent channel 0 with unit noise too
            let mut r = rng::rng_from(seed, &[1000 + t.video_id as u64]);
            t.samples.row_mut(0).iter_mut().for_each(|v| *v = rng::normal(&mut r) as f32);
            t
        })
        .collect()
}
