//! On-disk formats: the WFG1 checkpoint container, codecs for weight
//! vectors / encoders / diffusion states, and the dataset manifest.
//!
//! Container layout (integers little-endian):
//!
//! ```text
//! "WFG1" | u32 version | u32 n_sections | section*
//! section: u32 name_len | name (UTF-8) | u8 kind | u64 payload_len | payload
//! kind 0 (tensor): u32 ndim | ndim × u64 dims | numel × f64
//! kind 1 (text):   UTF-8 bytes
//! ```
//!
//! f64 payloads are raw IEEE-754 bit patterns, so `load(save(x)) == x`
//! holds bitwise for every codec in this module.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::diffusion::{DenoiserConfig, TrainState};
use crate::encoder::{EncoderConfig, EquivariantEncoder};
use crate::error::{Error, Result};
use crate::inr::{Activation, MlpArchitecture, Tag, WeightVector};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WFG1";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 0;
const KIND_TEXT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Tensor(Tensor),
    Text(String),
}

/// An ordered list of named sections; names must be unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Payload)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.has(&name), "duplicate section `{name}`");
        self.sections.push((name, Payload::Tensor(t)));
    }

    pub fn push_text(&mut self, name: impl Into<String>, s: impl Into<String>) {
        let name = name.into();
        assert!(!self.has(&name), "duplicate section `{name}`");
        self.sections.push((name, Payload::Text(s.into())));
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.sections.iter().find(|(n, _)| n == name) {
            Some((_, Payload::Tensor(t))) => Ok(t),
            Some((_, Payload::Text(_))) => Err(Error::load(name, "expected a tensor section")),
            None => Err(Error::load(name, "section missing")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.sections.iter().find(|(n, _)| n == name) {
            Some((_, Payload::Text(s))) => Ok(s),
            Some((_, Payload::Tensor(_))) => Err(Error::load(name, "expected a text section")),
            None => Err(Error::load(name, "section missing")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match payload {
                Payload::Tensor(t) => {
                    out.push(KIND_TENSOR);
                    let len = 4 + 8 * t.shape().len() + 8 * t.data().len();
                    out.extend_from_slice(&(len as u64).to_le_bytes());
                    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for &d in t.shape() {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for &x in t.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::Text(s) => {
                    out.push(KIND_TEXT);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "header")?;
        if magic != MAGIC {
            return Err(Error::load("header", "bad magic (not a WFG1 file)"));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::load("header", format!("unsupported format version {version}")));
        }
        let n = r.u32("header")? as usize;
        let mut ckpt = Checkpoint::new();
        for i in 0..n {
            let ctx = format!("section #{i}");
            let name_len = r.u32(&ctx)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &ctx)?)
                .map_err(|_| Error::load(&ctx, "section name is not UTF-8"))?
                .to_string();
            if ckpt.has(&name) {
                return Err(Error::load(&name, "duplicate section"));
            }
            let kind = r.u8(&name)?;
            let payload_len = r.u64(&name)? as usize;
            let payload = r.take(payload_len, &name)?;
            match kind {
                KIND_TENSOR => {
                    let t = decode_tensor(payload, &name)?;
                    ckpt.sections.push((name, Payload::Tensor(t)));
                }
                KIND_TEXT => {
                    let s = std::str::from_utf8(payload)
                        .map_err(|_| Error::load(&name, "text payload is not UTF-8"))?
                        .to_string();
                    ckpt.sections.push((name, Payload::Text(s)));
                }
                other => return Err(Error::load(&name, format!("unknown section kind {other}"))),
            }
        }
        if r.pos != buf.len() {
            return Err(Error::load("container", "trailing bytes after last section"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::load(section, "unexpected end of file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }
}

fn decode_tensor(payload: &[u8], section: &str) -> Result<Tensor> {
    let mut r = Reader { buf: payload, pos: 0 };
    let ndim = r.u32(section)? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u64(section)? as usize);
    }
    let numel: usize = dims.iter().product();
    let expect = 4 + 8 * ndim + 8 * numel;
    if payload.len() != expect {
        return Err(Error::load(
            section,
            format!("tensor payload is {} bytes, dims imply {expect}", payload.len()),
        ));
    }
    let data = r
        .take(8 * numel, section)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data).map_err(|e| Error::load(section, e.to_string()))
}

// ── small key=value text helpers ─────────────────────────────────────

fn kv_parse(section: &str, text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::load(section, format!("expected key=value, got `{line}`")))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::load(section, format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(map)
}

fn kv_get<'a>(map: &'a HashMap<String, String>, section: &str, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::load(section, format!("missing key `{key}`")))
}

fn kv_num<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    section: &str,
    key: &str,
) -> Result<T> {
    kv_get(map, section, key)?
        .parse()
        .map_err(|_| Error::load(section, format!("key `{key}` is not a valid number")))
}

// ── architecture sections ────────────────────────────────────────────

fn arch_to_sections(ckpt: &mut Checkpoint, prefix: &str, arch: &MlpArchitecture) {
    ckpt.push_text(format!("{prefix}arch"), arch.to_string());
    if let Activation::Sine { omega0 } = arch.activation {
        ckpt.push_text(format!("{prefix}omega0"), format!("{omega0}"));
    }
}

fn arch_from_sections(ckpt: &Checkpoint, prefix: &str) -> Result<MlpArchitecture> {
    let name = format!("{prefix}arch");
    let mut arch = MlpArchitecture::parse(ckpt.text(&name)?)
        .map_err(|e| Error::load(&name, e.to_string()))?;
    let oname = format!("{prefix}omega0");
    if ckpt.has(&oname) {
        let omega0: f64 = ckpt
            .text(&oname)?
            .parse()
            .map_err(|_| Error::load(&oname, "not a valid number"))?;
        match arch.activation {
            Activation::Sine { .. } => arch.activation = Activation::Sine { omega0 },
            _ => return Err(Error::load(&oname, "architecture is not sine-activated")),
        }
    }
    Ok(arch)
}

// ── weight vector codec ──────────────────────────────────────────────

pub fn weights_to_checkpoint(w: &WeightVector) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    ckpt.push_text("kind", "weights");
    arch_to_sections(&mut ckpt, "", &w.arch);
    ckpt.push_text("tag", w.tag.as_str());
    if let Some(class) = &w.class_label {
        ckpt.push_text("class", class.clone());
    }
    ckpt.push_tensor(
        "values",
        Tensor::new(vec![w.values.len()], w.values.clone()).expect("flat weight tensor"),
    );
    ckpt
}

pub fn weights_from_checkpoint(ckpt: &Checkpoint) -> Result<WeightVector> {
    expect_kind(ckpt, "weights")?;
    let arch = arch_from_sections(ckpt, "")?;
    let tag = Tag::parse(ckpt.text("tag")?).map_err(|e| Error::load("tag", e.to_string()))?;
    let values = ckpt.tensor("values")?;
    if values.shape().len() != 1 {
        return Err(Error::load("values", "expected a rank-1 tensor"));
    }
    let mut w = WeightVector::new(arch, values.data().to_vec(), tag)
        .map_err(|e| Error::load("values", e.to_string()))?;
    if ckpt.has("class") {
        w = w.with_class(ckpt.text("class")?);
    }
    Ok(w)
}

pub fn save_weights(w: &WeightVector, path: impl AsRef<Path>) -> Result<()> {
    weights_to_checkpoint(w).save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightVector> {
    weights_from_checkpoint(&Checkpoint::load(path)?)
}

fn expect_kind(ckpt: &Checkpoint, want: &str) -> Result<()> {
    let kind = ckpt.text("kind")?;
    if kind != want {
        return Err(Error::load("kind", format!("expected `{want}`, found `{kind}`")));
    }
    Ok(())
}

// ── encoder codec ────────────────────────────────────────────────────

/// Write an encoder under `prefix` so it can live inside a larger file.
pub fn encoder_to_sections(ckpt: &mut Checkpoint, prefix: &str, enc: &EquivariantEncoder) {
    arch_to_sections(ckpt, prefix, &enc.arch);
    let c = &enc.config;
    ckpt.push_text(
        format!("{prefix}config"),
        format!(
            "channels={}\nlayers={}\nfeature_dim={}\nhead_hidden={}\ntau={}",
            c.channels, c.layers, c.feature_dim, c.head_hidden, c.tau
        ),
    );
    for (i, t) in enc.params.flat().into_iter().enumerate() {
        ckpt.push_tensor(format!("{prefix}param.{i}"), t.clone());
    }
}

pub fn encoder_from_sections(ckpt: &Checkpoint, prefix: &str) -> Result<EquivariantEncoder> {
    let arch = arch_from_sections(ckpt, prefix)?;
    let cname = format!("{prefix}config");
    let kv = kv_parse(&cname, ckpt.text(&cname)?)?;
    let config = EncoderConfig {
        channels: kv_num(&kv, &cname, "channels")?,
        layers: kv_num(&kv, &cname, "layers")?,
        feature_dim: kv_num(&kv, &cname, "feature_dim")?,
        head_hidden: kv_num(&kv, &cname, "head_hidden")?,
        tau: kv_num(&kv, &cname, "tau")?,
    };
    let mut enc = EquivariantEncoder::new(&arch, &config, 0);
    let mut flat = enc.params.flat_mut();
    for (i, slot) in flat.iter_mut().enumerate() {
        let name = format!("{prefix}param.{i}");
        let t = ckpt.tensor(&name)?;
        if t.shape() != slot.shape() {
            return Err(Error::load(
                &name,
                format!("shape {:?} does not match expected {:?}", t.shape(), slot.shape()),
            ));
        }
        **slot = t.clone();
    }
    let extra = format!("{prefix}param.{}", flat.len());
    drop(flat);
    if ckpt.has(&extra) {
        return Err(Error::load(&extra, "more parameter sections than the config implies"));
    }
    Ok(enc)
}

pub fn save_encoder(enc: &EquivariantEncoder, path: impl AsRef<Path>) -> Result<()> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_text("kind", "encoder");
    encoder_to_sections(&mut ckpt, "", enc);
    ckpt.save(path)
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<EquivariantEncoder> {
    let ckpt = Checkpoint::load(path)?;
    expect_kind(&ckpt, "encoder")?;
    encoder_from_sections(&ckpt, "")
}

// ── diffusion codec ──────────────────────────────────────────────────

/// A diffusion checkpoint embeds the frozen encoder it was trained
/// against (under `encoder.*`), so fine-tuning and sampling need only
/// this one file.
pub fn diffusion_to_checkpoint(state: &TrainState, encoder: &EquivariantEncoder) -> Result<Checkpoint> {
    if encoder.arch != state.arch {
        return Err(Error::contract("encoder architecture does not match the diffusion state"));
    }
    if encoder.config.feature_dim != state.denoiser.config.psi_dim {
        return Err(Error::contract("encoder feature_dim does not match the denoiser psi_dim"));
    }
    let mut ckpt = Checkpoint::new();
    ckpt.push_text("kind", "diffusion");
    arch_to_sections(&mut ckpt, "", &state.arch);
    let dc = &state.denoiser.config;
    let layout: Vec<String> = dc.token_layout.iter().map(|l| l.to_string()).collect();
    ckpt.push_text(
        "denoiser",
        format!(
            "num_layers={}\nnum_heads={}\nhidden_size={}\npsi_dim={}\ntoken_layout={}",
            dc.num_layers,
            dc.num_heads,
            dc.hidden_size,
            dc.psi_dim,
            layout.join(",")
        ),
    );
    ckpt.push_text(
        "train",
        format!(
            "lambda={}\nema_beta={}\nt_max={}\nstep={}\nseed={}\nlr={}\nweight_decay={}\nopt_step={}",
            state.lambda,
            state.ema_beta,
            state.schedule.t_max,
            state.step,
            state.seed,
            state.opt.lr,
            state.opt.weight_decay,
            state.opt.step_count(),
        ),
    );
    let d = state.normalizer.dim();
    ckpt.push_tensor("norm.mean", Tensor::new(vec![d], state.normalizer.mean.clone())?);
    ckpt.push_tensor("norm.std", Tensor::new(vec![d], state.normalizer.std.clone())?);
    for (i, t) in state.denoiser.params.flat().into_iter().enumerate() {
        ckpt.push_tensor(format!("theta.{i}"), t.clone());
    }
    for (i, t) in state.ema.flat().into_iter().enumerate() {
        ckpt.push_tensor(format!("ema.{i}"), t.clone());
    }
    if state.opt.step_count() > 0 {
        let (m, v) = state.opt.moments();
        for (i, mi) in m.iter().enumerate() {
            ckpt.push_tensor(format!("opt.m.{i}"), Tensor::new(vec![mi.len()], mi.clone())?);
        }
        for (i, vi) in v.iter().enumerate() {
            ckpt.push_tensor(format!("opt.v.{i}"), Tensor::new(vec![vi.len()], vi.clone())?);
        }
    }
    encoder_to_sections(&mut ckpt, "encoder.", encoder);
    Ok(ckpt)
}

pub fn diffusion_from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainState, EquivariantEncoder)> {
    expect_kind(ckpt, "diffusion")?;
    let arch = arch_from_sections(ckpt, "")?;

    let kv = kv_parse("denoiser", ckpt.text("denoiser")?)?;
    let layout: Vec<usize> = kv_get(&kv, "denoiser", "token_layout")?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::load("denoiser", "bad token_layout entry")))
        .collect::<Result<_>>()?;
    let config = DenoiserConfig {
        num_layers: kv_num(&kv, "denoiser", "num_layers")?,
        num_heads: kv_num(&kv, "denoiser", "num_heads")?,
        hidden_size: kv_num(&kv, "denoiser", "hidden_size")?,
        psi_dim: kv_num(&kv, "denoiser", "psi_dim")?,
        token_layout: layout,
    };
    if !config.matches_arch(&arch) {
        return Err(Error::load("denoiser", "token layout does not match the architecture"));
    }

    let kv = kv_parse("train", ckpt.text("train")?)?;
    let lambda: f64 = kv_num(&kv, "train", "lambda")?;
    let ema_beta: f64 = kv_num(&kv, "train", "ema_beta")?;
    let t_max: usize = kv_num(&kv, "train", "t_max")?;
    let step: usize = kv_num(&kv, "train", "step")?;
    let seed: u64 = kv_num(&kv, "train", "seed")?;
    let lr: f64 = kv_num(&kv, "train", "lr")?;
    let weight_decay: f64 = kv_num(&kv, "train", "weight_decay")?;
    let opt_step: u64 = kv_num(&kv, "train", "opt_step")?;

    let d = arch.param_count();
    let mean = ckpt.tensor("norm.mean")?;
    let std = ckpt.tensor("norm.std")?;
    if mean.shape() != [d] || std.shape() != [d] {
        return Err(Error::load("norm.mean", "normalizer length does not match the architecture"));
    }
    let normalizer =
        crate::diffusion::Normalizer { mean: mean.data().to_vec(), std: std.data().to_vec() };

    let mut state =
        TrainState::new(&arch, &config, normalizer, t_max, lambda, lr, weight_decay, seed)
            .map_err(|e| Error::load("train", e.to_string()))?;
    state.ema_beta = ema_beta;
    state.step = step;

    restore_flat(ckpt, "theta", state.denoiser.params.flat_mut())?;
    restore_flat(ckpt, "ema", state.ema.flat_mut())?;

    if opt_step > 0 {
        let n = state.denoiser.params.flat().len();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (buf, label) in [(&mut m, "m"), (&mut v, "v")] {
            for i in 0..n {
                let name = format!("opt.{label}.{i}");
                let t = ckpt.tensor(&name)?;
                let want = state.denoiser.params.flat()[i].data().len();
                if t.data().len() != want {
                    return Err(Error::load(
                        &name,
                        format!("moment length {} != parameter length {want}", t.data().len()),
                    ));
                }
                buf.push(t.data().to_vec());
            }
        }
        state.opt.restore_moments(opt_step, m, v);
    }

    let encoder = encoder_from_sections(ckpt, "encoder.")?;
    if encoder.arch != state.arch {
        return Err(Error::load("encoder.arch", "embedded encoder architecture mismatch"));
    }
    if encoder.config.feature_dim != state.denoiser.config.psi_dim {
        return Err(Error::load("encoder.config", "embedded encoder feature_dim != psi_dim"));
    }
    Ok((state, encoder))
}

fn restore_flat(ckpt: &Checkpoint, prefix: &str, mut slots: Vec<&mut Tensor>) -> Result<()> {
    for (i, slot) in slots.iter_mut().enumerate() {
        let name = format!("{prefix}.{i}");
        let t = ckpt.tensor(&name)?;
        if t.shape() != slot.shape() {
            return Err(Error::load(
                &name,
                format!("shape {:?} does not match expected {:?}", t.shape(), slot.shape()),
            ));
        }
        **slot = t.clone();
    }
    Ok(())
}

pub fn save_diffusion(
    state: &TrainState,
    encoder: &EquivariantEncoder,
    path: impl AsRef<Path>,
) -> Result<()> {
    diffusion_to_checkpoint(state, encoder)?.save(path)
}

pub fn load_diffusion(path: impl AsRef<Path>) -> Result<(TrainState, EquivariantEncoder)> {
    diffusion_from_checkpoint(&Checkpoint::load(path)?)
}

// ── dataset manifest ─────────────────────────────────────────────────

/// One row of a dataset manifest: a weight-checkpoint path relative to
/// the manifest file, its class label, fit PSNR, and the fit seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub class: String,
    pub psnr: f64,
    pub seed: u64,
}

pub fn manifest_to_text(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{:.6}\t{}\n", e.path, e.class, e.psnr, e.seed));
    }
    out
}

pub fn manifest_from_text(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::load(
                "manifest",
                format!("line {}: expected 4 tab-separated fields, got {}", i + 1, fields.len()),
            ));
        }
        let psnr: f64 = fields[2]
            .parse()
            .map_err(|_| Error::load("manifest", format!("line {}: bad psnr", i + 1)))?;
        let seed: u64 = fields[3]
            .parse()
            .map_err(|_| Error::load("manifest", format!("line {}: bad seed", i + 1)))?;
        entries.push(ManifestEntry {
            path: fields[0].to_string(),
            class: fields[1].to_string(),
            psnr,
            seed,
        });
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, manifest_to_text(entries))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    manifest_from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::DEFAULT_OMEGA0;

    #[test]
    fn container_round_trips_bitwise() {
        let mut ckpt = Checkpoint::new();
        ckpt.push_text("kind", "weights");
        ckpt.push_tensor(
            "values",
            Tensor::new(vec![2, 3], vec![0.1, -2.5e300, f64::MIN_POSITIVE, 0.0, -0.0, 7.0])
                .unwrap(),
        );
        ckpt.push_text("note", "π ≈ 3.14159");
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        // -0.0 survives as a distinct bit pattern
        assert!(back.tensor("values").unwrap().data()[4].is_sign_negative());
    }

    #[test]
    fn container_rejects_corruption() {
        let mut ckpt = Checkpoint::new();
        ckpt.push_text("kind", "weights");
        let mut bytes = ckpt.to_bytes();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let err = Checkpoint::from_bytes(&bad_magic).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");

        bytes.pop();
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");

        let err = Checkpoint::new().tensor("theta.0").unwrap_err();
        assert!(err.to_string().contains("theta.0"), "{err}");
    }

    #[test]
    fn weights_round_trip_preserves_everything() {
        let arch = MlpArchitecture::parse("sine:2-5-1").unwrap();
        let layers = arch.init_params(9);
        let w = crate::inr::flatten(&arch, &layers, Tag::Smoothed).unwrap().with_class("7");
        let back = weights_from_checkpoint(&weights_to_checkpoint(&w)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn non_default_omega0_round_trips() {
        let mut arch = MlpArchitecture::parse("sine:2-4-1").unwrap();
        arch.activation = Activation::Sine { omega0: 12.5 };
        let w = WeightVector::new(arch.clone(), vec![0.0; arch.param_count()], Tag::Raw).unwrap();
        let back = weights_from_checkpoint(&weights_to_checkpoint(&w)).unwrap();
        assert_eq!(back.arch.activation, Activation::Sine { omega0: 12.5 });

        let plain = MlpArchitecture::parse("sine:2-4-1").unwrap();
        assert_eq!(plain.activation, Activation::Sine { omega0: DEFAULT_OMEGA0 });
    }

    #[test]
    fn manifest_round_trips() {
        let entries = vec![
            ManifestEntry { path: "w/000.wfg".into(), class: "3".into(), psnr: 31.25, seed: 5 },
            ManifestEntry { path: "w/001.wfg".into(), class: "8".into(), psnr: 27.0, seed: 6 },
        ];
        let text = manifest_to_text(&entries);
        assert_eq!(text.lines().count(), 2);
        let back = manifest_from_text(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].path, "w/000.wfg");
        assert!((back[0].psnr - 31.25).abs() < 1e-9);
        assert_eq!(back[1].seed, 6);

        assert!(manifest_from_text("a\tb\t1.0").is_err());
        assert!(manifest_from_text("a\tb\tx\t1").is_err());
    }
}
