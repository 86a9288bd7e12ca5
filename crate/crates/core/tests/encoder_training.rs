//! Contrastive pre-training behaviour: gradient correctness through the
//! whole encoder, loss descent on a two-class dataset, and the learned
//! feature geometry (same-class nets closer than cross-class).

mod common;

use common::assert_grads_match;
use weightforge_core::augment::{random_augmentation, AugmentPolicy};
use weightforge_core::encoder::{
    encode_on_tape, lift_on_tape, nt_xent_on_tape, pretrain, EncoderConfig, EquivariantEncoder,
    PretrainOptions,
};
use weightforge_core::inr::{fit, Activation, MlpArchitecture, Tag, WeightVector, DEFAULT_OMEGA0};
use weightforge_core::rng::rng_stream;
use weightforge_core::synth::{SignalKind, SignalSpec};
use weightforge_core::tensor::{Tape, Tensor};
use rand::Rng;

fn small_arch(hidden: usize) -> MlpArchitecture {
    MlpArchitecture::new(
        vec![2, hidden, 1],
        Activation::Sine { omega0: DEFAULT_OMEGA0 },
        None,
        2,
    )
    .unwrap()
}

fn random_weights(arch: &MlpArchitecture, seed: u64) -> WeightVector {
    let mut rng = rng_stream(seed, 0);
    let data: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    WeightVector::new(arch.clone(), data, Tag::Raw).unwrap()
}

#[test]
fn nt_xent_gradient_matches_finite_differences() {
    let mut rng = rng_stream(41, 0);
    let z = Tensor::new(
        vec![6, 5],
        (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    assert_grads_match(
        "nt_xent",
        &|tape: &mut Tape, vars: &[weightforge_core::tensor::Var]| {
            nt_xent_on_tape(tape, vars[0], 0.7).unwrap()
        },
        &[z],
        1e-4,
    );
}

#[test]
fn contrastive_loss_gradient_through_encoder_matches_finite_differences() {
    let arch = small_arch(4);
    let config = EncoderConfig {
        channels: 3,
        layers: 2,
        feature_dim: 5,
        head_hidden: 6,
        tau: 0.7,
    };
    let encoder = EquivariantEncoder::new(&arch, &config, 7);
    let policy = AugmentPolicy::default_for(&arch);
    let items: Vec<WeightVector> = (0..2).map(|i| random_weights(&arch, 100 + i)).collect();
    let views: Vec<WeightVector> = items
        .iter()
        .enumerate()
        .map(|(i, w)| random_augmentation(w, &policy, 900 + i as u64).unwrap())
        .collect();

    let template = encoder.params.clone();
    let inputs: Vec<Tensor> = template.flat().into_iter().cloned().collect();
    let loss_fn = move |tape: &mut Tape, vars: &[weightforge_core::tensor::Var]| {
        let mut it = vars.iter();
        let params = template.map(|_| *it.next().expect("var count"));
        let mut feats = Vec::new();
        for w in items.iter().chain(views.iter()) {
            let stack = lift_on_tape(tape, w);
            feats.push(encode_on_tape(tape, &params, &stack, &config).unwrap());
        }
        let z = tape.concat(&feats, 0).unwrap();
        nt_xent_on_tape(tape, z, config.tau).unwrap()
    };
    assert_grads_match("encoder contrastive", &loss_fn, &inputs, 1e-4);
}

/// Fit `per_class` INRs to jittered members of each of two blob classes.
fn two_class_dataset(arch: &MlpArchitecture, per_class: usize) -> Vec<WeightVector> {
    let mut out = Vec::with_capacity(2 * per_class);
    for class in 0..2usize {
        let spec = SignalSpec::new(SignalKind::Blobs2d, class, 11);
        for item in 0..per_class {
            let signal = spec.sample(item, 16, 1).unwrap();
            let seed = (class * per_class + item) as u64;
            let outcome = fit(&signal, arch, 500, 3e-3, seed).unwrap();
            let mut w = outcome.weights;
            w.class_label = Some(class.to_string());
            out.push(w);
        }
    }
    out
}

#[test]
fn pretraining_reduces_loss_and_separates_classes() {
    let arch = small_arch(12);
    let dataset = two_class_dataset(&arch, 32);
    let config = EncoderConfig {
        channels: 6,
        layers: 2,
        feature_dim: 16,
        head_hidden: 16,
        tau: 0.5,
    };
    let opts = PretrainOptions {
        epochs: 40,
        batch: 16,
        lr: 3e-3,
        weight_decay: 1e-4,
        seed: 5,
        use_smoothing: true,
        smooth_restarts: 2,
    };
    let policy = AugmentPolicy::default_for(&arch);
    let (encoder, history) = pretrain(&dataset, &policy, &config, &opts).unwrap();

    assert_eq!(history.len(), opts.epochs);
    assert!(history.iter().all(|l| l.is_finite()));
    let first = history[0];
    let last = *history.last().unwrap();
    assert!(
        last < first,
        "contrastive loss should fall: first {first:.4}, last {last:.4}"
    );
    // better than the uniform-similarity plateau log(2N-1)
    assert!(last < (2.0 * 16.0 - 1.0f64).ln(), "last {last:.4}");

    let feats: Vec<Vec<f64>> = dataset.iter().map(|w| encoder.encode(w).unwrap().psi).collect();
    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    };
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..dataset.len() {
        for j in (i + 1)..dataset.len() {
            let c = cosine(&feats[i], &feats[j]);
            if dataset[i].class_label == dataset[j].class_label {
                intra = (intra.0 + c, intra.1 + 1);
            } else {
                inter = (inter.0 + c, inter.1 + 1);
            }
        }
    }
    let intra_mean = intra.0 / intra.1 as f64;
    let inter_mean = inter.0 / inter.1 as f64;
    assert!(
        intra_mean > inter_mean,
        "intra-class cosine {intra_mean:.4} should exceed inter-class {inter_mean:.4}"
    );
}

#[test]
fn pretraining_handles_one_item_per_class() {
    let arch = small_arch(6);
    let dataset = vec![random_weights(&arch, 1), random_weights(&arch, 2)];
    let opts = PretrainOptions {
        epochs: 2,
        batch: 16,
        lr: 1e-3,
        ..PretrainOptions::default()
    };
    let config = EncoderConfig {
        channels: 4,
        layers: 2,
        feature_dim: 8,
        head_hidden: 8,
        tau: 0.5,
    };
    let (_, history) =
        pretrain(&dataset, &AugmentPolicy::default_for(&arch), &config, &opts).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|l| l.is_finite()));
}

#[test]
fn pretraining_rejects_degenerate_datasets() {
    let arch = small_arch(6);
    let config = EncoderConfig {
        channels: 4,
        layers: 2,
        feature_dim: 8,
        head_hidden: 8,
        tau: 0.5,
    };
    let opts = PretrainOptions::default();
    let policy = AugmentPolicy::default_for(&arch);
    assert!(pretrain(&[random_weights(&arch, 1)], &policy, &config, &opts).is_err());

    let other = MlpArchitecture::new(
        vec![2, 7, 1],
        Activation::Sine { omega0: DEFAULT_OMEGA0 },
        None,
        2,
    )
    .unwrap();
    let mixed = vec![random_weights(&arch, 1), random_weights(&other, 2)];
    assert!(pretrain(&mixed, &policy, &config, &opts).is_err());
}
