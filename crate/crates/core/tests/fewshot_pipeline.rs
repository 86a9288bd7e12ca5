//! End-to-end few-shot behaviour: fine-tuning improves reconstruction,
//! memorized supports render back, and feature disturbance trades quality
//! for diversity monotonically.

use weightforge_core::diffusion::{DenoiserConfig, Normalizer, TrainState};
use weightforge_core::encoder::{EncoderConfig, EquivariantEncoder};
use weightforge_core::fewshot::{finetune, generate, generate_with_steps, SupportSet};
use weightforge_core::inr::{
    fit, render_image, Activation, MlpArchitecture, Tag, WeightVector, DEFAULT_OMEGA0,
};
use weightforge_core::metrics::intra_diversity;
use weightforge_core::rng::rng_stream;
use weightforge_core::synth::{SignalKind, SignalSpec};
use rand::Rng;

fn sine_arch(hidden: usize) -> MlpArchitecture {
    MlpArchitecture::new(
        vec![2, hidden, 1],
        Activation::Sine { omega0: DEFAULT_OMEGA0 },
        None,
        2,
    )
    .unwrap()
}

fn encoder_for(arch: &MlpArchitecture, feature_dim: usize, seed: u64) -> EquivariantEncoder {
    let config = EncoderConfig {
        channels: 4,
        layers: 2,
        feature_dim,
        head_hidden: 8,
        tau: 0.5,
    };
    EquivariantEncoder::new(arch, &config, seed)
}

fn fitted_class(arch: &MlpArchitecture, class: usize, count: usize, seed0: u64) -> Vec<WeightVector> {
    let spec = SignalSpec::new(SignalKind::Blobs2d, class, 23);
    (0..count)
        .map(|item| {
            let signal = spec.sample(item, 16, 1).unwrap();
            fit(&signal, arch, 500, 3e-3, seed0 + item as u64).unwrap().weights
        })
        .collect()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn single_support_finetune_improves_reconstruction() {
    let arch = sine_arch(6);
    let mut rng = rng_stream(81, 0);
    let w = WeightVector::new(
        arch.clone(),
        (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        Tag::Raw,
    )
    .unwrap();
    let enc = encoder_for(&arch, 6, 82);
    let support = SupportSet::new(std::slice::from_ref(&w), &enc, 2, 83).unwrap();

    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 6);
    let nz = Normalizer::fit(&support.items).unwrap();
    let mut state = TrainState::new(&arch, &config, nz, 100, 0.0, 2e-3, 0.0, 84).unwrap();

    let before = generate(&state, &support, 1, 0.0, 85).unwrap();
    let d_before = rms(&before[0].values, &support.items[0].values);
    finetune(&mut state, &support, 300, None).unwrap();
    let after = generate(&state, &support, 1, 0.0, 85).unwrap();
    let d_after = rms(&after[0].values, &support.items[0].values);
    assert!(
        d_after < d_before,
        "fine-tuning should pull samples toward the support: {d_before:.4} -> {d_after:.4}"
    );
}

#[test]
fn ten_shot_finetune_halves_reconstruction_loss() {
    let arch = sine_arch(8);
    let raw = fitted_class(&arch, 4, 10, 300);
    let enc = encoder_for(&arch, 8, 91);
    let support = SupportSet::new(&raw, &enc, 2, 92).unwrap();

    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 8);
    let nz = Normalizer::fit(&support.items).unwrap();
    let mut state = TrainState::new(&arch, &config, nz, 200, 0.1, 1.5e-3, 0.0, 93).unwrap();
    let history = finetune(&mut state, &support, 250, Some(&enc)).unwrap();
    assert_eq!(history.len(), 250);
    let first = history[0].recon;
    let last = history.last().unwrap().recon;
    assert!(
        last <= 0.5 * first,
        "per-sample reconstruction loss should drop by half: {first:.4} -> {last:.4}"
    );
    assert!(history.iter().all(|l| l.eq.is_finite() && l.eq >= 0.0));
}

#[test]
fn memorized_support_renders_back() {
    let arch = sine_arch(8);
    let spec = SignalSpec::new(SignalKind::Blobs2d, 1, 23);
    let signal = spec.sample(0, 16, 1).unwrap();
    let w = fit(&signal, &arch, 800, 3e-3, 7).unwrap().weights;
    let enc = encoder_for(&arch, 6, 71);
    let support = SupportSet::new(std::slice::from_ref(&w), &enc, 2, 72).unwrap();

    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 6);
    let nz = Normalizer::fit(&support.items).unwrap();
    let mut state = TrainState::new(&arch, &config, nz, 100, 0.0, 2e-3, 0.0, 73).unwrap();
    finetune(&mut state, &support, 500, None).unwrap();

    let outputs = generate_with_steps(&state, &support, 1, 0.0, 100, 74).unwrap();
    let render = render_image(&outputs[0], 24).unwrap();
    let reference = render_image(&support.items[0], 24).unwrap();
    let mae = render
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / render.numel() as f64;
    assert!(mae < 0.1, "memorized render should match the support: mae {mae:.4}");
}

#[test]
fn disturbance_increases_render_diversity_monotonically() {
    let arch = sine_arch(8);
    let raw = fitted_class(&arch, 2, 3, 400);
    let enc = encoder_for(&arch, 8, 61);
    let support = SupportSet::new(&raw, &enc, 2, 62).unwrap();

    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 8);
    let nz = Normalizer::fit(&support.items).unwrap();
    let mut state = TrainState::new(&arch, &config, nz, 100, 0.0, 1.5e-3, 0.0, 63).unwrap();
    finetune(&mut state, &support, 250, None).unwrap();

    let gammas = [0.0, 0.15, 0.3, 0.6];
    let mut means = Vec::new();
    for &gamma in &gammas {
        let mut total = 0.0;
        for seed in 0..3u64 {
            let samples = generate(&state, &support, 6, gamma, 500 + seed).unwrap();
            let renders: Vec<_> =
                samples.iter().map(|w| render_image(w, 16).unwrap()).collect();
            total += intra_diversity(&renders).unwrap();
        }
        means.push(total / 3.0);
    }
    for pair in means.windows(2) {
        assert!(
            pair[1] >= pair[0],
            "diversity should not decrease with gamma: {means:?}"
        );
    }
    assert!(
        means[3] > means[0],
        "highest disturbance should be strictly more diverse: {means:?}"
    );
}
