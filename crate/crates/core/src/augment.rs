//! Weight-space augmentations. Each one is an exact transform of the
//! parameter vector whose effect on the represented signal is known in
//! closed form, so positive pairs for contrastive training never leave
//! weight space. Architectures with positional encoding only admit the
//! coordinate-free augmentations (bias noise, color jitter) — the encoding
//! is non-linear in the coordinates, so rotate/translate/scale have no
//! exact weight-space form there.

use crate::error::{Error, Result};
use crate::inr::{flatten, Tag, WeightVector};
use crate::rng::rng_stream;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Rec.601 luma weights, used by saturation adjustment.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn coordinate_linear_only(w: &WeightVector, what: &str) -> Result<()> {
    if w.arch.positional_encoding.is_some() {
        return Err(Error::Unsupported(format!(
            "{what} requires a linear coordinate map; positional encoding is non-linear"
        )));
    }
    Ok(())
}

fn retag(mut layers_out: WeightVector, src: &WeightVector) -> WeightVector {
    layers_out.tag = Tag::Augmented;
    layers_out.class_label = src.class_label.clone();
    layers_out
}

/// Φ̂(x) = Φ(R(angle)·x): right-multiply the first-layer weights by the
/// rotation matrix. 2-D signals only.
pub fn rotate(w: &WeightVector, angle: f64) -> Result<WeightVector> {
    if w.arch.coord_dim != 2 {
        return Err(Error::Unsupported("rotate requires a 2-D signal".into()));
    }
    coordinate_linear_only(w, "rotate")?;
    let (c, s) = (angle.cos(), angle.sin());
    let r = [[c, -s], [s, c]];
    let mut layers = w.layers();
    let (w1, b1) = &layers[0];
    let rows = w1.shape()[0];
    let mut new = vec![0.0; rows * 2];
    for i in 0..rows {
        for j in 0..2 {
            new[i * 2 + j] = w1.data()[i * 2] * r[0][j] + w1.data()[i * 2 + 1] * r[1][j];
        }
    }
    layers[0] = (Tensor::new(vec![rows, 2], new)?, b1.clone());
    Ok(retag(flatten(&w.arch, &layers, w.tag)?, w))
}

/// Φ̂(x) = Φ(x + offset): fold W₁·offset into the first-layer bias.
pub fn translate(w: &WeightVector, offset: &[f64]) -> Result<WeightVector> {
    coordinate_linear_only(w, "translate")?;
    if offset.len() != w.arch.coord_dim {
        return Err(Error::dimension(format!(
            "offset has {} entries for coord_dim {}",
            offset.len(),
            w.arch.coord_dim
        )));
    }
    let mut layers = w.layers();
    let (w1, b1) = &layers[0];
    let (rows, cols) = (w1.shape()[0], w1.shape()[1]);
    let mut new_b = b1.data().to_vec();
    for i in 0..rows {
        for (j, &t) in offset.iter().enumerate() {
            new_b[i] += w1.data()[i * cols + j] * t;
        }
    }
    layers[0] = (w1.clone(), Tensor::new(vec![rows], new_b)?);
    Ok(retag(flatten(&w.arch, &layers, w.tag)?, w))
}

/// Φ̂(x) = Φ(factor·x): zooms the represented signal.
pub fn scale(w: &WeightVector, factor: f64) -> Result<WeightVector> {
    coordinate_linear_only(w, "scale")?;
    let mut layers = w.layers();
    let (w1, b1) = &layers[0];
    let scaled: Vec<f64> = w1.data().iter().map(|v| v * factor).collect();
    layers[0] = (Tensor::new(w1.shape().to_vec(), scaled)?, b1.clone());
    Ok(retag(flatten(&w.arch, &layers, w.tag)?, w))
}

/// Affine adjustment of the final linear layer. Saturation (≠ 1) mixes the
/// RGB output rows toward their luma combination and needs out_dim 3;
/// brightness and contrast apply to any output width. Applied as
/// saturation, then contrast (recentering about 0.5), then brightness.
pub fn color_jitter(
    w: &WeightVector,
    brightness: f64,
    contrast: f64,
    saturation: f64,
) -> Result<WeightVector> {
    let out = w.arch.out_dim();
    if saturation != 1.0 && out != 3 {
        return Err(Error::Unsupported(
            "saturation adjustment requires an RGB (out_dim 3) signal".into(),
        ));
    }
    let mut layers = w.layers();
    let last = layers.len() - 1;
    let (wl, bl) = &layers[last];
    let cols = wl.shape()[1];
    let mut wv = wl.data().to_vec();
    let mut bv = bl.data().to_vec();

    if saturation != 1.0 {
        let mix_rows = |v: &[f64], width: usize| -> Vec<f64> {
            let mut luma = vec![0.0; width];
            for (c, &l) in LUMA.iter().enumerate() {
                for k in 0..width {
                    luma[k] += l * v[c * width + k];
                }
            }
            let mut mixed = vec![0.0; 3 * width];
            for c in 0..3 {
                for k in 0..width {
                    mixed[c * width + k] =
                        saturation * v[c * width + k] + (1.0 - saturation) * luma[k];
                }
            }
            mixed
        };
        wv = mix_rows(&wv, cols);
        bv = mix_rows(&bv, 1);
    }
    if contrast != 1.0 {
        for v in &mut wv {
            *v *= contrast;
        }
        for v in &mut bv {
            *v = contrast * *v + 0.5 * (1.0 - contrast);
        }
    }
    if brightness != 0.0 {
        for v in &mut bv {
            *v += brightness;
        }
    }
    layers[last] = (
        Tensor::new(wl.shape().to_vec(), wv)?,
        Tensor::new(bl.shape().to_vec(), bv)?,
    );
    Ok(retag(flatten(&w.arch, &layers, w.tag)?, w))
}

/// Add N(0, σ²) noise to every bias entry; weight matrices are untouched.
pub fn bias_perturb(w: &WeightVector, sigma: f64, seed: u64) -> Result<WeightVector> {
    if sigma < 0.0 {
        return Err(Error::contract("bias_perturb needs sigma >= 0"));
    }
    let mut rng = rng_stream(seed, 0xB1A5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut layers = w.layers();
    for (_, bm) in &mut layers {
        let noisy: Vec<f64> = bm
            .data()
            .iter()
            .map(|b| b + sigma * normal.sample(&mut rng))
            .collect();
        *bm = Tensor::new(bm.shape().to_vec(), noisy)?;
    }
    Ok(retag(flatten(&w.arch, &layers, w.tag)?, w))
}

/// Ranges for the stochastic augmentation used during contrastive
/// pre-training. A `None` disables that transform; identity-valued ranges
/// keep it enabled but inert.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    /// angle sampled from (lo, hi), radians
    pub rotate: Option<(f64, f64)>,
    /// each offset coordinate sampled from ±max
    pub translate_max: Option<f64>,
    /// zoom factor range
    pub scale: Option<(f64, f64)>,
    /// additive brightness range
    pub brightness: Option<(f64, f64)>,
    /// contrast factor range
    pub contrast: Option<(f64, f64)>,
    /// saturation factor range (RGB only)
    pub saturation: Option<(f64, f64)>,
    /// bias noise standard deviation
    pub bias_sigma: Option<f64>,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            rotate: None,
            translate_max: None,
            scale: None,
            brightness: None,
            contrast: None,
            saturation: None,
            bias_sigma: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rotate.is_none()
            && self.translate_max.is_none()
            && self.scale.is_none()
            && self.brightness.is_none()
            && self.contrast.is_none()
            && self.saturation.is_none()
            && self.bias_sigma.is_none()
    }

    /// Default policy for an architecture: geometric + photometric for
    /// plain 2-D sine nets, bias noise + color jitter when positional
    /// encoding rules the coordinate transforms out.
    pub fn default_for(arch: &crate::inr::MlpArchitecture) -> Self {
        use std::f64::consts::PI;
        let mut p = AugmentPolicy::none();
        p.bias_sigma = Some(0.01);
        p.brightness = Some((-0.1, 0.1));
        p.contrast = Some((0.9, 1.1));
        if arch.out_dim() == 3 {
            p.saturation = Some((0.8, 1.2));
        }
        if arch.positional_encoding.is_none() && arch.coord_dim == 2 {
            p.rotate = Some((-PI / 6.0, PI / 6.0));
            p.translate_max = Some(0.2);
            p.scale = Some((0.8, 1.2));
        }
        p
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Sample one composed augmentation. The composition order is fixed:
/// rotate, translate, scale, color jitter, bias noise.
pub fn random_augmentation(w: &WeightVector, policy: &AugmentPolicy, seed: u64) -> Result<WeightVector> {
    if policy.is_empty() {
        return Err(Error::contract("augmentation policy enables nothing"));
    }
    let mut rng = rng_stream(seed, 0xA06);
    let mut out = w.clone();
    if let Some(range) = policy.rotate {
        out = rotate(&out, draw(&mut rng, range))?;
    }
    if let Some(max) = policy.translate_max {
        let offset: Vec<f64> = (0..w.arch.coord_dim)
            .map(|_| draw(&mut rng, (-max, max)))
            .collect();
        out = translate(&out, &offset)?;
    }
    if let Some(range) = policy.scale {
        out = scale(&out, draw(&mut rng, range))?;
    }
    if policy.brightness.is_some() || policy.contrast.is_some() || policy.saturation.is_some() {
        let b = policy.brightness.map_or(0.0, |r| draw(&mut rng, r));
        let c = policy.contrast.map_or(1.0, |r| draw(&mut rng, r));
        let s = policy.saturation.map_or(1.0, |r| draw(&mut rng, r));
        out = color_jitter(&out, b, c, s)?;
    }
    if let Some(sigma) = policy.bias_sigma {
        let noise_seed = rng.random::<u64>();
        out = bias_perturb(&out, sigma, noise_seed)?;
    }
    out.tag = Tag::Augmented;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::{flatten, Activation, MlpArchitecture, WeightVector, DEFAULT_OMEGA0};
    use std::f64::consts::PI;

    fn sine_net(seed: u64) -> WeightVector {
        let arch =
            MlpArchitecture::new(vec![2, 8, 1], Activation::Sine { omega0: DEFAULT_OMEGA0 }, None, 2)
                .unwrap();
        flatten(&arch, &arch.init_params(seed), Tag::Raw).unwrap()
    }

    fn rgb_net(seed: u64) -> WeightVector {
        let arch =
            MlpArchitecture::new(vec![2, 8, 3], Activation::Sine { omega0: DEFAULT_OMEGA0 }, None, 2)
                .unwrap();
        flatten(&arch, &arch.init_params(seed), Tag::Raw).unwrap()
    }

    fn max_diff(a: &WeightVector, b: &WeightVector) -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_parameters_are_exact() {
        let w = sine_net(1);
        assert_eq!(rotate(&w, 0.0).unwrap().values, w.values);
        assert_eq!(translate(&w, &[0.0, 0.0]).unwrap().values, w.values);
        assert_eq!(scale(&w, 1.0).unwrap().values, w.values);
        assert_eq!(color_jitter(&w, 0.0, 1.0, 1.0).unwrap().values, w.values);
        assert_eq!(bias_perturb(&w, 0.0, 7).unwrap().values, w.values);
        let rgb = rgb_net(2);
        assert_eq!(color_jitter(&rgb, 0.0, 1.0, 1.0).unwrap().values, rgb.values);
    }

    #[test]
    fn full_turn_is_near_identity() {
        let w = sine_net(3);
        assert!(max_diff(&rotate(&w, 2.0 * PI).unwrap(), &w) < 1e-12);
    }

    #[test]
    fn rotations_compose_in_weight_space() {
        let w = sine_net(4);
        let (a, b) = (0.37, -1.21);
        let once = rotate(&w, a + b).unwrap();
        let twice = rotate(&rotate(&w, a).unwrap(), b).unwrap();
        assert!(max_diff(&once, &twice) < 1e-9);
    }

    #[test]
    fn translate_round_trip() {
        let w = sine_net(5);
        let t = [0.3, -0.15];
        let back = translate(&translate(&w, &t).unwrap(), &[-t[0], -t[1]]).unwrap();
        assert!(max_diff(&back, &w) < 1e-12);
    }

    #[test]
    fn contrast_round_trip() {
        let w = rgb_net(6);
        let back = color_jitter(&color_jitter(&w, 0.0, 2.0, 1.0).unwrap(), 0.0, 0.5, 1.0).unwrap();
        assert!(max_diff(&back, &w) < 1e-12);
    }

    #[test]
    fn brightness_shifts_a_constant_net() {
        // all-zero weights with final bias 0.5 represents the constant 0.5
        let arch =
            MlpArchitecture::new(vec![2, 4, 1], Activation::Sine { omega0: DEFAULT_OMEGA0 }, None, 2)
                .unwrap();
        let mut values = vec![0.0; arch.param_count()];
        *values.last_mut().unwrap() = 0.5;
        let w = WeightVector::new(arch, values, Tag::Raw).unwrap();
        let bright = color_jitter(&w, 0.1, 1.0, 1.0).unwrap();
        let img = crate::inr::render_image(&bright, 4).unwrap();
        for &v in img.data() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn saturation_zero_makes_gray() {
        let w = rgb_net(7);
        let gray = color_jitter(&w, 0.0, 1.0, 0.0).unwrap();
        let img = crate::inr::render_image(&gray, 6).unwrap();
        for px in img.data().chunks(3) {
            assert!((px[0] - px[1]).abs() < 1e-12 && (px[1] - px[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_combinations_error() {
        let w3 = {
            let arch = MlpArchitecture::new(
                vec![3, 4, 1],
                Activation::Sine { omega0: DEFAULT_OMEGA0 },
                None,
                3,
            )
            .unwrap();
            flatten(&arch, &arch.init_params(0), Tag::Raw).unwrap()
        };
        assert!(matches!(rotate(&w3, 0.1), Err(Error::Unsupported(_))));

        let pe = {
            let arch = MlpArchitecture::new(
                vec![34, 8, 1],
                Activation::Relu,
                Some(8),
                2,
            )
            .unwrap();
            flatten(&arch, &arch.init_params(0), Tag::Raw).unwrap()
        };
        assert!(matches!(rotate(&pe, 0.1), Err(Error::Unsupported(_))));
        assert!(matches!(translate(&pe, &[0.1, 0.0]), Err(Error::Unsupported(_))));
        assert!(matches!(scale(&pe, 1.1), Err(Error::Unsupported(_))));

        let gray = sine_net(8);
        assert!(matches!(color_jitter(&gray, 0.0, 1.0, 0.9), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bias_perturb_touches_only_biases() {
        let w = sine_net(9);
        let noisy = bias_perturb(&w, 0.05, 11).unwrap();
        let (orig, pert) = (w.layers(), noisy.layers());
        let mut bias_changed = 0;
        for ((wm, bm), (wn, bn)) in orig.iter().zip(&pert) {
            assert_eq!(wm.data(), wn.data(), "weight block modified");
            bias_changed += bm.data().iter().zip(bn.data()).filter(|(a, b)| a != b).count();
        }
        assert_eq!(bias_changed, 8 + 1);
    }

    #[test]
    fn random_augmentation_contract() {
        let w = sine_net(10);
        assert!(matches!(
            random_augmentation(&w, &AugmentPolicy::none(), 0),
            Err(Error::Contract(_))
        ));

        let mut inert = AugmentPolicy::none();
        inert.rotate = Some((0.0, 0.0));
        inert.translate_max = Some(0.0);
        inert.scale = Some((1.0, 1.0));
        inert.contrast = Some((1.0, 1.0));
        inert.bias_sigma = Some(0.0);
        let out = random_augmentation(&w, &inert, 3).unwrap();
        assert_eq!(out.values, w.values);
        assert_eq!(out.tag, Tag::Augmented);

        let policy = AugmentPolicy::default_for(&w.arch);
        let a = random_augmentation(&w, &policy, 42).unwrap();
        let b = random_augmentation(&w, &policy, 42).unwrap();
        let c = random_augmentation(&w, &policy, 43).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn default_policy_respects_positional_encoding() {
        let pe_arch = MlpArchitecture::shapenet();
        let p = AugmentPolicy::default_for(&pe_arch);
        assert!(p.rotate.is_none() && p.translate_max.is_none() && p.scale.is_none());
        assert!(p.bias_sigma.is_some());
        // and the sampled augmentation actually runs on the PE arch
        let w = flatten(&pe_arch, &pe_arch.init_params(1), Tag::Raw).unwrap();
        random_augmentation(&w, &p, 5).unwrap();
    }
}
