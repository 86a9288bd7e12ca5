//! Diffusion training behaviour: gradient correctness of the denoiser and
//! of the composite objective, single-item memorization, and conditional
//! recovery of the right dataset item from its feature.

mod common;

use common::assert_grads_match;
use weightforge_core::diffusion::{
    ddim_sample, denoise_on_tape, forward_noise, make_schedule, train_diffusion, train_step,
    DenoiserConfig, DiffusionTrainOptions, Normalizer, TrainState,
};
use weightforge_core::encoder::{
    encode_on_tape, lift_var_on_tape, EncoderConfig, EquivariantEncoder,
};
use weightforge_core::inr::{Activation, MlpArchitecture, Tag, WeightVector};
use weightforge_core::rng::rng_stream;
use weightforge_core::tensor::{Tape, Tensor, Var};
use rand::Rng;

fn tiny_arch() -> MlpArchitecture {
    MlpArchitecture::new(vec![2, 3, 1], Activation::Relu, None, 2).unwrap()
}

fn random_weights(arch: &MlpArchitecture, seed: u64) -> WeightVector {
    let mut rng = rng_stream(seed, 3);
    let data = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    WeightVector::new(arch.clone(), data, Tag::Raw).unwrap()
}

#[test]
fn denoiser_mse_gradient_matches_finite_differences() {
    let arch = tiny_arch();
    let config = DenoiserConfig::for_arch(&arch, 2, 2, 8, 4);
    let model = weightforge_core::diffusion::Denoiser::new(config.clone(), 21).unwrap();
    let d = arch.param_count();
    let mut rng = rng_stream(22, 0);
    let x_t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let psi: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

    let template = model.params.clone();
    let inputs: Vec<Tensor> = template.flat().into_iter().cloned().collect();
    let loss_fn = move |tape: &mut Tape, vars: &[Var]| {
        let mut it = vars.iter();
        let params = template.map(|_| *it.next().expect("var count"));
        let xv = tape.constant(Tensor::new(vec![1, d], x_t.clone()).unwrap());
        let pv = tape.constant(Tensor::new(vec![1, 4], psi.clone()).unwrap());
        let pred = denoise_on_tape(tape, &config, &params, xv, 5, pv).unwrap();
        let target = tape.constant(Tensor::new(vec![1, d], x0.clone()).unwrap());
        let diff = tape.sub(pred, target).unwrap();
        tape.sumsq(diff)
    };
    assert_grads_match("denoiser mse", &loss_fn, &inputs, 1e-4);
}

#[test]
fn composite_objective_gradient_matches_finite_differences() {
    let arch = tiny_arch();
    let config = DenoiserConfig::for_arch(&arch, 1, 2, 8, 4);
    let model = weightforge_core::diffusion::Denoiser::new(config.clone(), 31).unwrap();
    let enc_config = EncoderConfig {
        channels: 3,
        layers: 2,
        feature_dim: 4,
        head_hidden: 5,
        tau: 0.5,
    };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 32);
    let d = arch.param_count();
    let mut rng = rng_stream(33, 0);
    let x_t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let psi: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
    let std: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    let lambda = 0.1;

    let template = model.params.clone();
    let inputs: Vec<Tensor> = template.flat().into_iter().cloned().collect();
    let arch2 = arch.clone();
    let loss_fn = move |tape: &mut Tape, vars: &[Var]| {
        let mut it = vars.iter();
        let params = template.map(|_| *it.next().expect("var count"));
        let enc_vars = encoder.params.map(|p| tape.constant(p.clone()));
        let xv = tape.constant(Tensor::new(vec![1, d], x_t.clone()).unwrap());
        let pv = tape.constant(Tensor::new(vec![1, 4], psi.clone()).unwrap());
        let pred = denoise_on_tape(tape, &config, &params, xv, 3, pv).unwrap();

        let target = tape.constant(Tensor::new(vec![1, d], x0.clone()).unwrap());
        let diff = tape.sub(pred, target).unwrap();
        let recon = tape.sumsq(diff);

        let std_c = tape.constant(Tensor::new(vec![1, d], std.clone()).unwrap());
        let mean_c = tape.constant(Tensor::new(vec![1, d], mean.clone()).unwrap());
        let scaled = tape.mul(pred, std_c).unwrap();
        let orig = tape.add(scaled, mean_c).unwrap();
        let blocks = lift_var_on_tape(tape, &arch2, orig).unwrap();
        let feat = encode_on_tape(tape, &enc_vars, &blocks, &enc_config).unwrap();
        let fdiff = tape.sub(feat, pv).unwrap();
        let eq = tape.sumsq(fdiff);
        let eq = tape.scale(eq, lambda);
        tape.add(recon, eq).unwrap()
    };
    assert_grads_match("composite objective", &loss_fn, &inputs, 1e-4);
}

#[test]
fn single_item_memorization() {
    let arch = tiny_arch();
    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 4);
    let w = random_weights(&arch, 50);
    let enc_config = EncoderConfig {
        channels: 3,
        layers: 2,
        feature_dim: 4,
        head_hidden: 5,
        tau: 0.5,
    };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 51);
    let psi = encoder.encode(&w).unwrap();

    let normalizer = Normalizer::fit(std::slice::from_ref(&w)).unwrap();
    let mut state =
        TrainState::new(&arch, &config, normalizer, 100, 0.0, 2e-3, 0.0, 52).unwrap();
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..500 {
        let losses = train_step(&mut state, &[(&w, &psi)], None).unwrap();
        first.get_or_insert(losses.recon);
        last = losses.recon;
    }
    let first = first.unwrap();
    assert!(
        last < 0.1 * first,
        "reconstruction loss should collapse: first {first:.5}, last {last:.5}"
    );

    let sample = ddim_sample(&state, &psi, 50, 0.0, 53).unwrap();
    assert_eq!(sample.tag, Tag::Generated);
    let num: f64 = sample
        .values
        .iter()
        .zip(&w.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = w.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num / den < 0.1, "relative recovery error {:.4}", num / den);
}

#[test]
fn conditioning_selects_the_matching_item() {
    let arch = tiny_arch();
    let config = DenoiserConfig::for_arch(&arch, 2, 2, 16, 4);
    let a = random_weights(&arch, 60);
    let b = random_weights(&arch, 61);
    let enc_config = EncoderConfig {
        channels: 3,
        layers: 2,
        feature_dim: 4,
        head_hidden: 5,
        tau: 0.5,
    };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 62);
    let psi_a = encoder.encode(&a).unwrap();
    let psi_b = encoder.encode(&b).unwrap();

    let normalizer = Normalizer::fit(&[a.clone(), b.clone()]).unwrap();
    let mut state =
        TrainState::new(&arch, &config, normalizer, 200, 0.0, 1.5e-3, 0.0, 63).unwrap();
    for _ in 0..1500 {
        train_step(&mut state, &[(&a, &psi_a), (&b, &psi_b)], None).unwrap();
    }

    let rms = |x: &[f64], y: &[f64]| -> f64 {
        (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64).sqrt()
    };
    for (psi, own, other) in [(&psi_a, &a, &b), (&psi_b, &b, &a)] {
        let sample = ddim_sample(&state, psi, 40, 0.0, 64).unwrap();
        let d_own = rms(&sample.values, &own.values);
        let d_other = rms(&sample.values, &other.values);
        assert!(
            d_own < d_other,
            "sample should sit nearer its conditioning item: own {d_own:.4} vs other {d_other:.4}"
        );
    }
}

#[test]
fn train_diffusion_end_to_end_smoke() {
    let arch = tiny_arch();
    let config = DenoiserConfig::for_arch(&arch, 1, 2, 8, 4);
    let dataset: Vec<WeightVector> = (0..3).map(|i| random_weights(&arch, 70 + i)).collect();
    let enc_config = EncoderConfig {
        channels: 3,
        layers: 2,
        feature_dim: 4,
        head_hidden: 5,
        tau: 0.5,
    };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 71);
    let opts =
        DiffusionTrainOptions { steps: 20, batch: 2, t_max: 50, lambda: 0.1, seed: 72, ..Default::default() };
    let (state, history) = train_diffusion(&dataset, &encoder, &config, &opts).unwrap();
    assert_eq!(history.len(), 20);
    assert!(history.iter().all(|l| l.total.is_finite() && l.eq >= 0.0));
    assert_eq!(state.step, 20);

    // noising a dataset item and asking the trained model for x̂₀ returns
    // something finite of the right length
    let s = make_schedule(50).unwrap();
    let x0 = state.normalizer.normalize(&dataset[0].values);
    let eps = vec![0.1; x0.len()];
    let x_t = forward_noise(&x0, 25, &eps, &s).unwrap();
    let psi = encoder.encode(&dataset[0]).unwrap();
    let pred = state.denoiser.predict(&x_t, 25, &psi.psi).unwrap();
    assert_eq!(pred.len(), x0.len());
    assert!(pred.iter().all(|v| v.is_finite()));
}
