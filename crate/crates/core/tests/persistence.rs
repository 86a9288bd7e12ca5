//! Checkpoint round-trips: everything a file stores must come back
//! bitwise, and a resumed training run must be indistinguishable from
//! one that never stopped.

use weightforge_core::diffusion::{train_step, DenoiserConfig, TrainState};
use weightforge_core::encoder::{EncoderConfig, EquivariantEncoder};
use weightforge_core::inr::{flatten, MlpArchitecture, Tag, WeightVector};
use weightforge_core::persist::{
    diffusion_from_checkpoint, diffusion_to_checkpoint, load_encoder, load_weights, save_encoder,
    save_weights, Checkpoint,
};
use weightforge_core::rng::rng_stream;

use rand::Rng;

fn random_weights(arch: &MlpArchitecture, seed: u64) -> WeightVector {
    let layers = arch.init_params(seed);
    flatten(arch, &layers, Tag::Raw).unwrap()
}

#[test]
fn weight_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.wfg");
    let arch = MlpArchitecture::parse("sine:2-7-1").unwrap();
    let w = random_weights(&arch, 3).with_class("giraffe");
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, w);

    // identical content writes identical bytes
    let path2 = dir.path().join("w2.wfg");
    save_weights(&back, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn encoder_files_round_trip_and_encode_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.wfg");
    let arch = MlpArchitecture::parse("sine:2-5-1").unwrap();
    let config =
        EncoderConfig { channels: 4, layers: 2, feature_dim: 6, head_hidden: 8, tau: 0.37 };
    let encoder = EquivariantEncoder::new(&arch, &config, 21);
    save_encoder(&encoder, &path).unwrap();
    let back = load_encoder(&path).unwrap();

    assert_eq!(back.config, config);
    let w = random_weights(&arch, 4);
    let a = encoder.encode(&w).unwrap();
    let b = back.encode(&w).unwrap();
    assert_eq!(a.psi, b.psi, "loaded encoder must reproduce features bitwise");
}

#[test]
fn missing_sections_are_reported_by_name() {
    let arch = MlpArchitecture::parse("sine:2-4-1").unwrap();
    let mut ckpt = Checkpoint::new();
    ckpt.push_text("kind", "encoder");
    ckpt.push_text("arch", arch.to_string());
    ckpt.push_text(
        "config",
        "channels=2\nlayers=1\nfeature_dim=3\nhead_hidden=4\ntau=0.5",
    );
    let err = weightforge_core::persist::encoder_from_sections(&ckpt, "").unwrap_err();
    assert!(err.to_string().contains("param.0"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trunc.wfg");
    let config = EncoderConfig { channels: 2, layers: 1, feature_dim: 3, head_hidden: 4, tau: 0.5 };
    let encoder = EquivariantEncoder::new(&arch, &config, 0);
    save_encoder(&encoder, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
    assert!(err.to_string().contains("unexpected end of file"), "{err}");
}

#[test]
fn diffusion_checkpoint_resumes_training_exactly() {
    let arch = MlpArchitecture::parse("relu:2-3-1").unwrap();
    let enc_config =
        EncoderConfig { channels: 3, layers: 2, feature_dim: 4, head_hidden: 5, tau: 0.5 };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 31);
    let dataset: Vec<WeightVector> =
        (0..2).map(|i| random_weights(&arch, 40 + i).with_class("c")).collect();

    let config = DenoiserConfig::for_arch(&arch, 1, 2, 8, enc_config.feature_dim);
    let normalizer = weightforge_core::diffusion::Normalizer::fit(&dataset).unwrap();
    let mut state =
        TrainState::new(&arch, &config, normalizer, 50, 0.1, 2e-3, 0.01, 77).unwrap();

    let mut rng = rng_stream(99, 0);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for _ in 0..7 {
        batches.push((0..2).map(|_| rng.random_range(0..dataset.len())).collect());
    }
    let run =
        |state: &mut TrainState, idx: &[Vec<usize>], enc: &EquivariantEncoder| {
            let feats: Vec<_> = dataset.iter().map(|w| enc.encode(w).unwrap()).collect();
            for b in idx {
                let batch: Vec<_> = b.iter().map(|&i| (&dataset[i], &feats[i])).collect();
                train_step(state, &batch, Some(enc)).unwrap();
            }
        };

    // 4 steps, checkpoint, 3 more
    run(&mut state, &batches[..4], &encoder);
    let ckpt = diffusion_to_checkpoint(&state, &encoder).unwrap();
    let bytes = ckpt.to_bytes();
    run(&mut state, &batches[4..], &encoder);

    // load and replay the same tail
    let (mut resumed, loaded_encoder) =
        diffusion_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.step, 4);
    assert_eq!(resumed.opt.step_count(), 4);
    run(&mut resumed, &batches[4..], &loaded_encoder);

    assert_eq!(state.step, resumed.step);
    for (a, b) in state.denoiser.params.flat().iter().zip(resumed.denoiser.params.flat()) {
        assert_eq!(a.data(), b.data(), "resumed run diverged from the uninterrupted one");
    }
    for (a, b) in state.ema.flat().iter().zip(resumed.ema.flat()) {
        assert_eq!(a.data(), b.data(), "EMA shadow diverged");
    }

    // and the serialized forms agree too
    let again = diffusion_to_checkpoint(&resumed, &loaded_encoder).unwrap();
    let direct = diffusion_to_checkpoint(&state, &encoder).unwrap();
    assert_eq!(again.to_bytes(), direct.to_bytes());
}

#[test]
fn diffusion_checkpoint_is_stable_under_reload() {
    let arch = MlpArchitecture::parse("sine:2-3-1").unwrap();
    let enc_config =
        EncoderConfig { channels: 2, layers: 1, feature_dim: 3, head_hidden: 4, tau: 0.5 };
    let encoder = EquivariantEncoder::new(&arch, &enc_config, 1);
    let dataset = vec![random_weights(&arch, 2)];
    let config = DenoiserConfig::for_arch(&arch, 1, 1, 4, 3);
    let normalizer = weightforge_core::diffusion::Normalizer::fit(&dataset).unwrap();
    let state = TrainState::new(&arch, &config, normalizer, 20, 0.0, 1e-3, 0.0, 5).unwrap();

    // untrained state: optimizer moments are absent by design
    let ckpt = diffusion_to_checkpoint(&state, &encoder).unwrap();
    assert!(!ckpt.has("opt.m.0"));
    let bytes = ckpt.to_bytes();
    let (loaded, enc2) = diffusion_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(loaded.opt.step_count(), 0);
    assert_eq!(diffusion_to_checkpoint(&loaded, &enc2).unwrap().to_bytes(), bytes);
}
