//! INR architectures and the weight space they define: evaluation Φ(w),
//! signal fitting, flatten/unflatten, and image rendering.
//!
//! The canonical coordinate domain is [−1,1]^coord_dim; image grids sample
//! pixel centers x = −1 + 2(i+0.5)/res. Sine layers compute sin(ω₀·(Wx+b)).

use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::rng::{mix, rng_stream};
use crate::tensor::{Tape, Tensor, Var};
use std::fmt;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sine { omega0: f64 },
    Relu,
}

pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_PE_FREQUENCIES: usize = 8;

/// Fixed MLP topology; defines the weight space 𝒲 ⊆ ℝᵈ.
///
/// `layer_widths[0]` is the network input width *after* positional encoding;
/// `coord_dim` is the raw coordinate dimension (2 or 3).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Number of sin/cos frequency bands; raw coords are always included.
    pub positional_encoding: Option<usize>,
    pub coord_dim: usize,
}

impl MlpArchitecture {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        positional_encoding: Option<usize>,
        coord_dim: usize,
    ) -> Result<Self> {
        let arch = MlpArchitecture { layer_widths, activation, positional_encoding, coord_dim };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::dimension("architecture needs at least one hidden layer"));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::dimension("zero-width layer"));
        }
        if !(self.coord_dim == 2 || self.coord_dim == 3) {
            return Err(Error::dimension(format!("coord_dim {} not in {{2,3}}", self.coord_dim)));
        }
        let expect = self.encoded_input_dim();
        if self.layer_widths[0] != expect {
            return Err(Error::dimension(format!(
                "input width {} does not match encoded coordinate dim {}",
                self.layer_widths[0], expect
            )));
        }
        Ok(())
    }

    /// Input width implied by coord_dim and positional encoding.
    pub fn encoded_input_dim(&self) -> usize {
        match self.positional_encoding {
            Some(bands) => self.coord_dim * (1 + 2 * bands),
            None => self.coord_dim,
        }
    }

    /// 3-layer SIREN, width 32, grayscale 2D signals.
    pub fn mnist() -> Self {
        MlpArchitecture {
            layer_widths: vec![2, 32, 32, 1],
            activation: Activation::Sine { omega0: DEFAULT_OMEGA0 },
            positional_encoding: None,
            coord_dim: 2,
        }
    }

    /// 3-layer SIREN, width 64, RGB 2D signals.
    pub fn cifar() -> Self {
        MlpArchitecture {
            layer_widths: vec![2, 64, 64, 3],
            activation: Activation::Sine { omega0: DEFAULT_OMEGA0 },
            positional_encoding: None,
            coord_dim: 2,
        }
    }

    /// 3-layer ReLU MLP, width 128, positionally encoded 3D occupancy.
    pub fn shapenet() -> Self {
        let bands = DEFAULT_PE_FREQUENCIES;
        MlpArchitecture {
            layer_widths: vec![3 * (1 + 2 * bands), 128, 128, 1],
            activation: Activation::Relu,
            positional_encoding: Some(bands),
            coord_dim: 3,
        }
    }

    /// Named preset or a custom spec `sine|relu:w0-w1-...-wk[:peL][:coordC]`,
    /// e.g. `sine:2-16-16-1` or `relu:27-32-32-1:pe4:coord3`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "mnist" => return Ok(Self::mnist()),
            "cifar" => return Ok(Self::cifar()),
            "shapenet" => return Ok(Self::shapenet()),
            _ => {}
        }
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() < 2 {
            return Err(Error::Config(format!("unknown architecture `{spec}`")));
        }
        let activation = match parts[0] {
            "sine" => Activation::Sine { omega0: DEFAULT_OMEGA0 },
            "relu" => Activation::Relu,
            other => return Err(Error::Config(format!("unknown activation `{other}`"))),
        };
        let widths: Vec<usize> = parts[1]
            .split('-')
            .map(|w| w.parse().map_err(|_| Error::Config(format!("bad width `{w}`"))))
            .collect::<Result<_>>()?;
        let mut pe = None;
        let mut coord_dim = 2;
        for extra in &parts[2..] {
            if let Some(bands) = extra.strip_prefix("pe") {
                pe = Some(bands.parse().map_err(|_| Error::Config(format!("bad pe `{extra}`")))?);
            } else if let Some(c) = extra.strip_prefix("coord") {
                coord_dim = c.parse().map_err(|_| Error::Config(format!("bad coord `{extra}`")))?;
            } else {
                return Err(Error::Config(format!("unknown arch option `{extra}`")));
            }
        }
        Self::new(widths, activation, pe, coord_dim)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Widths of permutable hidden layers (input/output excluded).
    pub fn hidden_widths(&self) -> &[usize] {
        &self.layer_widths[1..self.layer_widths.len() - 1]
    }

    /// (out, in) extents of W_m for each layer m.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Total flattened parameter count d = Σ (in·out + out).
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(o, i)| o * i + o).sum()
    }

    /// Flat ranges of (W_m, b_m) in the layout [W₁, b₁, W₂, b₂, ...],
    /// each W row-major.
    pub fn block_ranges(&self) -> Vec<(Range<usize>, Range<usize>)> {
        let mut ranges = Vec::new();
        let mut at = 0;
        for (o, i) in self.layer_shapes() {
            let w = at..at + o * i;
            at += o * i;
            let b = at..at + o;
            at += o;
            ranges.push((w, b));
        }
        ranges
    }

    /// Expand raw coordinates with the configured positional encoding:
    /// [x, sin(2⁰πx), cos(2⁰πx), ..., sin(2^{L−1}πx), cos(2^{L−1}πx)].
    pub fn apply_encoding(&self, coords: &Tensor) -> Result<Tensor> {
        if coords.shape().len() != 2 || coords.shape()[1] != self.coord_dim {
            return Err(Error::dimension(format!(
                "coords shape {:?}, want [n, {}]",
                coords.shape(),
                self.coord_dim
            )));
        }
        let bands = match self.positional_encoding {
            None => return Ok(coords.clone()),
            Some(b) => b,
        };
        let n = coords.shape()[0];
        let c = self.coord_dim;
        let width = c * (1 + 2 * bands);
        let mut data = vec![0.0; n * width];
        for r in 0..n {
            let x = &coords.data()[r * c..(r + 1) * c];
            let row = &mut data[r * width..(r + 1) * width];
            row[..c].copy_from_slice(x);
            for k in 0..bands {
                let freq = (1u64 << k) as f64 * std::f64::consts::PI;
                for j in 0..c {
                    row[c + 2 * k * c + j] = (freq * x[j]).sin();
                    row[c + (2 * k + 1) * c + j] = (freq * x[j]).cos();
                }
            }
        }
        Tensor::new(vec![n, width], data)
    }

    /// Seeded init: SIREN uniform scheme for sine, Kaiming-uniform for relu.
    pub fn init_params(&self, seed: u64) -> Vec<(Tensor, Tensor)> {
        let mut layers = Vec::new();
        for (m, (out, fan_in)) in self.layer_shapes().into_iter().enumerate() {
            let mut rng = rng_stream(seed, m as u64);
            let bound = match self.activation {
                Activation::Sine { omega0 } => {
                    if m == 0 {
                        1.0 / fan_in as f64
                    } else {
                        (6.0 / fan_in as f64).sqrt() / omega0
                    }
                }
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            };
            let w = Tensor::rand_uniform(&[out, fan_in], -bound, bound, &mut rng);
            let bb = 1.0 / (fan_in as f64).sqrt();
            let b = Tensor::rand_uniform(&[out], -bb, bb, &mut rng);
            layers.push((w, b));
        }
        layers
    }
}

impl fmt::Display for MlpArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let act = match self.activation {
            // omega0 is restored on parse from the default; non-default
            // omega0 values round-trip through checkpoints, not strings
            Activation::Sine { .. } => "sine",
            Activation::Relu => "relu",
        };
        let widths: Vec<String> = self.layer_widths.iter().map(|w| w.to_string()).collect();
        write!(f, "{act}:{}", widths.join("-"))?;
        if let Some(bands) = self.positional_encoding {
            write!(f, ":pe{bands}")?;
        }
        write!(f, ":coord{}", self.coord_dim)
    }
}

/// Provenance of a weight vector within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Raw,
    Smoothed,
    Augmented,
    Generated,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Raw => "raw",
            Tag::Smoothed => "smoothed",
            Tag::Augmented => "augmented",
            Tag::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Result<Tag> {
        Ok(match s {
            "raw" => Tag::Raw,
            "smoothed" => Tag::Smoothed,
            "augmented" => Tag::Augmented,
            "generated" => Tag::Generated,
            other => return Err(Error::Config(format!("unknown tag `{other}`"))),
        })
    }
}

/// One flattened parameter vector w ∈ ℝᵈ with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub arch: MlpArchitecture,
    pub values: Vec<f64>,
    pub tag: Tag,
    pub class_label: Option<String>,
}

impl WeightVector {
    pub fn new(arch: MlpArchitecture, values: Vec<f64>, tag: Tag) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Layout(format!(
                "weight vector length {} != architecture d {}",
                values.len(),
                arch.param_count()
            )));
        }
        Ok(WeightVector { arch, values, tag, class_label: None })
    }

    pub fn with_class(mut self, class: impl Into<String>) -> Self {
        self.class_label = Some(class.into());
        self
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    /// Unflatten into per-layer (W [out,in], b [out]) tensors.
    pub fn layers(&self) -> Vec<(Tensor, Tensor)> {
        self.arch
            .block_ranges()
            .into_iter()
            .zip(self.arch.layer_shapes())
            .map(|((wr, br), (o, i))| {
                let w = Tensor::new(vec![o, i], self.values[wr].to_vec()).unwrap();
                let b = Tensor::new(vec![o], self.values[br].to_vec()).unwrap();
                (w, b)
            })
            .collect()
    }
}

/// Flatten structured per-layer tensors into the canonical layout.
pub fn flatten(arch: &MlpArchitecture, layers: &[(Tensor, Tensor)], tag: Tag) -> Result<WeightVector> {
    let shapes = arch.layer_shapes();
    if layers.len() != shapes.len() {
        return Err(Error::Layout(format!(
            "{} layers given, architecture has {}",
            layers.len(),
            shapes.len()
        )));
    }
    let mut values = Vec::with_capacity(arch.param_count());
    for ((w, b), (o, i)) in layers.iter().zip(shapes) {
        if w.shape() != [o, i] || b.shape() != [o] {
            return Err(Error::Layout(format!(
                "layer shapes {:?}/{:?}, want [{o},{i}]/[{o}]",
                w.shape(),
                b.shape()
            )));
        }
        values.extend_from_slice(w.data());
        values.extend_from_slice(b.data());
    }
    WeightVector::new(arch.clone(), values, tag)
}

/// Forward pass through an MLP whose parameters live on `tape` as
/// per-layer (W, b) vars. `x` must already be positionally encoded.
pub fn forward_on_tape(
    tape: &mut Tape,
    arch: &MlpArchitecture,
    params: &[(Var, Var)],
    x: Var,
) -> Result<Var> {
    if params.len() != arch.num_layers() {
        return Err(Error::dimension("parameter count does not match architecture"));
    }
    let mut h = x;
    let last = params.len() - 1;
    for (m, &(w, b)) in params.iter().enumerate() {
        let z = tape.matmul_nt(h, w)?;
        let z = tape.add(z, b)?;
        h = if m == last {
            z
        } else {
            match arch.activation {
                Activation::Sine { omega0 } => {
                    let scaled = tape.scale(z, omega0);
                    tape.sin(scaled)
                }
                Activation::Relu => tape.relu(z),
            }
        };
    }
    Ok(h)
}

/// Φ(w): evaluate the represented function on a batch of raw coordinates.
pub fn evaluate(w: &WeightVector, coords: &Tensor) -> Result<Tensor> {
    let encoded = w.arch.apply_encoding(coords)?;
    let mut tape = Tape::new();
    let x = tape.constant(encoded);
    let params: Vec<(Var, Var)> = w
        .layers()
        .into_iter()
        .map(|(wt, bt)| (tape.constant(wt), tape.constant(bt)))
        .collect();
    let out = forward_on_tape(&mut tape, &w.arch, &params, x)?;
    Ok(tape.value(out).clone())
}

/// Coordinate/target pairs defining a training signal.
#[derive(Debug, Clone)]
pub struct SignalSample {
    pub coords: Tensor,
    pub targets: Tensor,
}

impl SignalSample {
    pub fn new(coords: Tensor, targets: Tensor) -> Result<Self> {
        if coords.shape().len() != 2 || targets.shape().len() != 2 {
            return Err(Error::dimension("coords and targets must be 2-D [n, dim]"));
        }
        if coords.shape()[0] != targets.shape()[0] {
            return Err(Error::dimension(format!(
                "{} coords vs {} targets",
                coords.shape()[0],
                targets.shape()[0]
            )));
        }
        if coords.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::contract("coordinates outside canonical domain [-1,1]"));
        }
        Ok(SignalSample { coords, targets })
    }

    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub weights: WeightVector,
    pub final_mse: f64,
}

/// Overfit an INR to one signal with AdamW on the MSE objective.
/// The learning rate follows a cosine decay from `lr` to `lr/10` so the
/// final iterates settle instead of orbiting the optimum.
pub fn fit(
    signal: &SignalSample,
    arch: &MlpArchitecture,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<FitOutcome> {
    if steps == 0 {
        return Err(Error::contract("fit requires steps >= 1"));
    }
    if signal.targets.shape()[1] != arch.out_dim() {
        return Err(Error::dimension(format!(
            "target dim {} vs architecture out dim {}",
            signal.targets.shape()[1],
            arch.out_dim()
        )));
    }
    let encoded = arch.apply_encoding(&signal.coords)?;
    let mut layers = arch.init_params(seed);
    let mut opt = AdamW::new(lr, 0.0);
    for step in 0..steps {
        let progress = step as f64 / steps as f64;
        opt.set_lr(lr * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos())));
        let mut tape = Tape::new();
        let x = tape.constant(encoded.clone());
        let y = tape.constant(signal.targets.clone());
        let params: Vec<(Var, Var)> = layers
            .iter()
            .map(|(wt, bt)| (tape.leaf(wt.clone(), true), tape.leaf(bt.clone(), true)))
            .collect();
        let pred = forward_on_tape(&mut tape, arch, &params, x)?;
        let diff = tape.sub(pred, y)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean(sq);
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Training { step });
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = params
            .iter()
            .flat_map(|&(wv, bv)| [tape.grad(wv).unwrap().to_vec(), tape.grad(bv).unwrap().to_vec()])
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        let mut param_refs: Vec<&mut [f64]> = Vec::with_capacity(grads.len());
        for (wt, bt) in layers.iter_mut() {
            let (w, b) = (wt.data_mut(), bt.data_mut());
            param_refs.push(w);
            param_refs.push(b);
        }
        opt.step(&mut param_refs, &grad_refs);
    }
    let weights = flatten(arch, &layers, Tag::Raw)?;
    let pred = evaluate(&weights, &signal.coords)?;
    let n = pred.numel() as f64;
    let final_mse = pred
        .data()
        .iter()
        .zip(signal.targets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(FitOutcome { weights, final_mse })
}

/// Pixel-center grid over [−1,1]², row-major (row ↔ x₂, col ↔ x₁).
pub fn grid_coords_2d(res: usize) -> Tensor {
    let mut data = Vec::with_capacity(res * res * 2);
    for r in 0..res {
        let x2 = -1.0 + 2.0 * (r as f64 + 0.5) / res as f64;
        for c in 0..res {
            let x1 = -1.0 + 2.0 * (c as f64 + 0.5) / res as f64;
            data.push(x1);
            data.push(x2);
        }
    }
    Tensor::new(vec![res * res, 2], data).unwrap()
}

/// Vertex-aligned grid over [−1,1]³ with `res` samples per axis,
/// index order (i, j, k) ↔ (x, y, z), z fastest.
pub fn grid_coords_3d(res: usize) -> Tensor {
    let step = |i: usize| -1.0 + 2.0 * i as f64 / (res - 1) as f64;
    let mut data = Vec::with_capacity(res * res * res * 3);
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                data.push(step(i));
                data.push(step(j));
                data.push(step(k));
            }
        }
    }
    Tensor::new(vec![res * res * res, 3], data).unwrap()
}

/// Evaluate a 2-D INR on a `res`×`res` pixel-center grid → [res, res, out].
pub fn render_image(w: &WeightVector, res: usize) -> Result<Tensor> {
    if w.arch.coord_dim != 2 {
        return Err(Error::dimension("render_image requires coord_dim 2"));
    }
    let out = evaluate(w, &grid_coords_2d(res))?;
    out.reshaped(vec![res, res, w.arch.out_dim()])
}

/// PSNR in dB between two same-shaped grids in [0,1] value range.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr inputs must share a shape");
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// ASCII PGM (out_dim 1) or PPM (out_dim 3), values clamped to [0,1].
pub fn image_to_pnm(img: &Tensor) -> Result<String> {
    let s = img.shape();
    if s.len() != 3 || (s[2] != 1 && s[2] != 3) {
        return Err(Error::dimension(format!("image shape {:?}, want [h,w,1|3]", s)));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let mut out = String::new();
    out.push_str(if c == 1 { "P2\n" } else { "P3\n" });
    out.push_str(&format!("{w} {h}\n255\n"));
    for r in 0..h {
        let mut row = Vec::with_capacity(w * c);
        for col in 0..w {
            for ch in 0..c {
                row.push(quantize(img.data()[(r * w + col) * c + ch]).to_string());
            }
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Seeded uniform probe coordinates in [−1,1]^coord_dim.
pub fn probe_coords(coord_dim: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = rng_stream(mix(seed, 0xC0024D5), 0);
    Tensor::rand_uniform(&[n, coord_dim], -1.0, 1.0, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameter_counts() {
        // [2,32,32,1]: 2·32+32 + 32·32+32 + 32·1+1
        assert_eq!(MlpArchitecture::mnist().param_count(), 96 + 1056 + 33);
        assert_eq!(MlpArchitecture::shapenet().layer_widths[0], 51);
        assert_eq!(MlpArchitecture::mnist().hidden_widths(), &[32, 32]);
    }

    #[test]
    fn parse_round_trip() {
        for spec in ["mnist", "cifar", "shapenet"] {
            let arch = MlpArchitecture::parse(spec).unwrap();
            let again = MlpArchitecture::parse(&arch.to_string()).unwrap();
            assert_eq!(arch, again);
        }
        let custom = MlpArchitecture::parse("relu:27-8-8-1:pe4:coord3").unwrap();
        assert_eq!(custom.hidden_widths(), &[8, 8]);
        assert_eq!(MlpArchitecture::parse(&custom.to_string()).unwrap(), custom);
        assert!(MlpArchitecture::parse("tanh:2-4-1").is_err());
    }

    #[test]
    fn zero_relu_network_outputs_bias() {
        let arch = MlpArchitecture::new(vec![2, 4, 1], Activation::Relu, None, 2).unwrap();
        let w = WeightVector::new(arch.clone(), vec![0.0; arch.param_count()], Tag::Raw).unwrap();
        let coords = probe_coords(2, 17, 3);
        let out = evaluate(&w, &coords).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_built_sine_passthrough() {
        // first layer passthrough of x₁, zero bias, unit linear output:
        // Φ(x) = sin(ω₀·x₁)
        let arch = MlpArchitecture::new(
            vec![2, 1, 1],
            Activation::Sine { omega0: DEFAULT_OMEGA0 },
            None,
            2,
        )
        .unwrap();
        let values = vec![1.0, 0.0, 0.0, 1.0, 0.0]; // W1=[1,0], b1=0, W2=[1], b2=0
        let w = WeightVector::new(arch, values, Tag::Raw).unwrap();
        let coords = probe_coords(2, 100, 7);
        let out = evaluate(&w, &coords).unwrap();
        for (row, &y) in out.data().iter().enumerate().map(|(i, y)| (i, y)) {
            let x1 = coords.data()[row * 2];
            assert!((y - (DEFAULT_OMEGA0 * x1).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let arch = MlpArchitecture::new(vec![2, 3, 2], Activation::Relu, None, 2).unwrap();
        let layers = arch.init_params(11);
        let w = flatten(&arch, &layers, Tag::Raw).unwrap();
        assert_eq!(w.d(), arch.param_count());
        let back = w.layers();
        for ((w0, b0), (w1, b1)) in layers.iter().zip(&back) {
            assert_eq!(w0, w1);
            assert_eq!(b0, b1);
        }
        // smallest case: 1x1 network flattens to [w, b]
        let one = MlpArchitecture::new(vec![2, 1, 1], Activation::Relu, None, 2).unwrap();
        let lw = vec![
            (Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap(), Tensor::from_vec(vec![3.0])),
            (Tensor::new(vec![1, 1], vec![4.0]).unwrap(), Tensor::from_vec(vec![5.0])),
        ];
        let flat = flatten(&one, &lw, Tag::Raw).unwrap();
        assert_eq!(flat.values, vec![2.0, 0.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let arch = MlpArchitecture::mnist();
        let w = flatten(&arch, &arch.init_params(5), Tag::Raw).unwrap();
        let coords = probe_coords(2, 50, 9);
        let a = evaluate(&w, &coords).unwrap();
        let b = evaluate(&w, &coords).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn constant_signal_fits_quickly() {
        let arch = MlpArchitecture::new(vec![2, 8, 1], Activation::Relu, None, 2).unwrap();
        let coords = grid_coords_2d(8);
        let targets = Tensor::full(&[64, 1], 0.5);
        let signal = SignalSample::new(coords, targets).unwrap();
        let fit = fit(&signal, &arch, 500, 5e-2, 0).unwrap();
        assert!(fit.final_mse < 1e-4, "mse {}", fit.final_mse);
    }

    #[test]
    fn constant_render_and_pnm() {
        let arch = MlpArchitecture::new(vec![2, 1, 1], Activation::Relu, None, 2).unwrap();
        // zero weights, final bias 0.5 → constant field
        let mut values = vec![0.0; arch.param_count()];
        let last = values.len() - 1;
        values[last] = 0.5;
        let w = WeightVector::new(arch, values, Tag::Raw).unwrap();
        let img = render_image(&w, 8).unwrap();
        assert_eq!(img.shape(), &[8, 8, 1]);
        assert!(img.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let pnm = image_to_pnm(&img).unwrap();
        assert!(pnm.starts_with("P2\n8 8\n255\n"));
        assert!(pnm.contains("128"));
    }

    #[test]
    fn positional_encoding_dims_and_values() {
        let arch = MlpArchitecture::parse("relu:15-4-1:pe2:coord3").unwrap();
        assert_eq!(arch.encoded_input_dim(), 15);
        let coords = Tensor::new(vec![1, 3], vec![0.25, -0.5, 1.0]).unwrap();
        let enc = arch.apply_encoding(&coords).unwrap();
        assert_eq!(enc.shape(), &[1, 15]);
        assert_eq!(enc.data()[0], 0.25);
        let pi = std::f64::consts::PI;
        assert!((enc.data()[3] - (pi * 0.25).sin()).abs() < 1e-15);
        assert!((enc.data()[6] - (pi * 0.25).cos()).abs() < 1e-15);
        assert!((enc.data()[9] - (2.0 * pi * 0.25).sin()).abs() < 1e-15);
    }

    #[test]
    fn signal_domain_enforced() {
        let coords = Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap();
        let targets = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        assert!(SignalSample::new(coords, targets).is_err());
    }
}
