//! Python bindings for the core crate.
//!
//! The module mirrors the pipeline's main objects (architectures, weight
//! vectors, the equivariant encoder, the diffusion state) and the operations
//! a script actually wants: fitting, rendering, permutation/smoothing,
//! training, and few-shot sampling. Values cross the boundary as plain
//! lists of floats so no array library is required on either side.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use weightforge_core::augment::AugmentPolicy;
use weightforge_core::diffusion::{DenoiserConfig, DiffusionTrainOptions, StepLosses, TrainState};
use weightforge_core::encoder::{EncoderConfig, EquivariantEncoder, PretrainOptions};
use weightforge_core::inr::{self, MlpArchitecture, SignalSample, Tag, WeightVector};
use weightforge_core::rng::mix;
use weightforge_core::symmetry::{self, PermutationPlan};
use weightforge_core::tensor::Tensor;
use weightforge_core::{fewshot, metrics, persist, synth};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(err)
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = *t.shape().last().unwrap_or(&1);
    t.data().chunks(cols.max(1)).map(|c| c.to_vec()).collect()
}

fn losses_to_tuples(history: &[StepLosses]) -> Vec<(f64, f64, f64)> {
    history.iter().map(|l| (l.recon, l.eq, l.total)).collect()
}

/// MLP shape descriptor, parsed from the same compact string the CLI uses,
/// e.g. `"sine:2-32-32-1:coord2"` or `"relu:15-32-1:pe2:coord3"`.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Architecture {
    inner: MlpArchitecture,
}

#[pymethods]
impl Architecture {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Architecture { inner: MlpArchitecture::parse(spec).map_err(err)? })
    }

    #[staticmethod]
    fn mnist() -> Self {
        Architecture { inner: MlpArchitecture::mnist() }
    }

    #[staticmethod]
    fn cifar() -> Self {
        Architecture { inner: MlpArchitecture::cifar() }
    }

    #[staticmethod]
    fn shapenet() -> Self {
        Architecture { inner: MlpArchitecture::shapenet() }
    }

    #[getter]
    fn layer_widths(&self) -> Vec<usize> {
        self.inner.layer_widths.clone()
    }

    #[getter]
    fn coord_dim(&self) -> usize {
        self.inner.coord_dim
    }

    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Architecture(\"{}\")", self.inner)
    }

    fn __eq__(&self, other: &Architecture) -> bool {
        self.inner == other.inner
    }
}

/// A flattened parameter vector with its architecture, provenance tag,
/// and optional class label.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Weights {
    inner: WeightVector,
}

#[pymethods]
impl Weights {
    #[new]
    #[pyo3(signature = (arch, values, tag="raw"))]
    fn new(arch: &Architecture, values: Vec<f64>, tag: &str) -> PyResult<Self> {
        let tag = Tag::parse(tag).map_err(err)?;
        let inner = WeightVector::new(arch.inner.clone(), values, tag).map_err(err)?;
        Ok(Weights { inner })
    }

    #[getter]
    fn arch(&self) -> Architecture {
        Architecture { inner: self.inner.arch.clone() }
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn tag(&self) -> &'static str {
        self.inner.tag.as_str()
    }

    #[getter]
    fn class_label(&self) -> Option<String> {
        self.inner.class_label.clone()
    }

    fn with_class(&self, label: &str) -> Weights {
        Weights { inner: self.inner.clone().with_class(label) }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_weights(&self.inner, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Weights> {
        Ok(Weights { inner: persist::load_weights(path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.values.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Weights(arch=\"{}\", tag=\"{}\", d={}{})",
            self.inner.arch,
            self.inner.tag.as_str(),
            self.inner.values.len(),
            match &self.inner.class_label {
                Some(c) => format!(", class=\"{c}\""),
                None => String::new(),
            }
        )
    }
}

/// Permutation-invariant contrastive encoder ψ.
#[pyclass]
struct Encoder {
    inner: EquivariantEncoder,
}

#[pymethods]
impl Encoder {
    #[new]
    #[pyo3(signature = (arch, channels=16, layers=4, feature_dim=128, head_hidden=128, tau=0.5, seed=0))]
    fn new(
        arch: &Architecture,
        channels: usize,
        layers: usize,
        feature_dim: usize,
        head_hidden: usize,
        tau: f64,
        seed: u64,
    ) -> Self {
        let config = EncoderConfig { channels, layers, feature_dim, head_hidden, tau };
        Encoder { inner: EquivariantEncoder::new(&arch.inner, &config, seed) }
    }

    /// Contrastive pretraining over a weight dataset; returns the encoder
    /// and the per-epoch loss curve.
    #[staticmethod]
    #[pyo3(signature = (dataset, channels=16, layers=4, feature_dim=128, head_hidden=128,
                        tau=0.5, epochs=500, batch=512, lr=5e-3, weight_decay=5e-4,
                        use_smoothing=true, smooth_restarts=3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        dataset: Vec<Weights>,
        channels: usize,
        layers: usize,
        feature_dim: usize,
        head_hidden: usize,
        tau: f64,
        epochs: usize,
        batch: usize,
        lr: f64,
        weight_decay: f64,
        use_smoothing: bool,
        smooth_restarts: usize,
        seed: u64,
    ) -> PyResult<(Encoder, Vec<f64>)> {
        let ws: Vec<WeightVector> = dataset.into_iter().map(|w| w.inner).collect();
        if ws.is_empty() {
            return Err(err("pretrain needs a non-empty dataset"));
        }
        let config = EncoderConfig { channels, layers, feature_dim, head_hidden, tau };
        let opts = PretrainOptions {
            epochs,
            batch,
            lr,
            weight_decay,
            seed,
            use_smoothing,
            smooth_restarts,
        };
        let policy = AugmentPolicy::default_for(&ws[0].arch);
        let (enc, losses) =
            weightforge_core::encoder::pretrain(&ws, &policy, &config, &opts).map_err(err)?;
        Ok((Encoder { inner: enc }, losses))
    }

    fn encode(&self, w: &Weights) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(&w.inner).map_err(err)?.psi)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.config.feature_dim
    }

    #[getter]
    fn arch(&self) -> Architecture {
        Architecture { inner: self.inner.arch.clone() }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_encoder(&self.inner, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Encoder> {
        Ok(Encoder { inner: persist::load_encoder(path).map_err(err)? })
    }
}

/// Diffusion training state plus the frozen encoder that conditions it.
#[pyclass]
struct Diffusion {
    state: TrainState,
    encoder: EquivariantEncoder,
}

impl Diffusion {
    fn support(&self, weights: Vec<Weights>, restarts: usize, seed: u64) -> PyResult<fewshot::SupportSet> {
        let ws: Vec<WeightVector> = weights.into_iter().map(|w| w.inner).collect();
        fewshot::SupportSet::new(&ws, &self.encoder, restarts, seed).map_err(err)
    }
}

#[pymethods]
impl Diffusion {
    /// Train a denoiser from scratch on a weight dataset.
    #[staticmethod]
    #[pyo3(signature = (dataset, encoder, num_layers=4, num_heads=4, hidden_size=256,
                        steps=1500, batch=8, t_max=1000, lam=0.1, lr=1e-3, weight_decay=0.0,
                        lr_decay_every=0, lr_decay_factor=1.0, ema_beta=0.99, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        dataset: Vec<Weights>,
        encoder: &Encoder,
        num_layers: usize,
        num_heads: usize,
        hidden_size: usize,
        steps: usize,
        batch: usize,
        t_max: usize,
        lam: f64,
        lr: f64,
        weight_decay: f64,
        lr_decay_every: usize,
        lr_decay_factor: f64,
        ema_beta: f64,
        seed: u64,
    ) -> PyResult<(Diffusion, Vec<(f64, f64, f64)>)> {
        let ws: Vec<WeightVector> = dataset.into_iter().map(|w| w.inner).collect();
        if ws.is_empty() {
            return Err(err("train needs a non-empty dataset"));
        }
        let config = DenoiserConfig::for_arch(
            &ws[0].arch,
            num_layers,
            num_heads,
            hidden_size,
            encoder.inner.config.feature_dim,
        );
        let opts = DiffusionTrainOptions {
            steps,
            batch,
            t_max,
            lambda: lam,
            lr,
            weight_decay,
            lr_decay_every,
            lr_decay_factor,
            ema_beta,
            seed,
        };
        let (state, history) =
            weightforge_core::diffusion::train_diffusion(&ws, &encoder.inner, &config, &opts)
                .map_err(err)?;
        Ok((
            Diffusion { state, encoder: encoder.inner.clone() },
            losses_to_tuples(&history),
        ))
    }

    /// Few-shot adaptation on a support set of weight vectors.
    #[pyo3(signature = (support, epochs=250, smooth_restarts=3, seed=0))]
    fn finetune(
        &mut self,
        support: Vec<Weights>,
        epochs: usize,
        smooth_restarts: usize,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let support = self.support(support, smooth_restarts, seed)?;
        let history = fewshot::finetune(&mut self.state, &support, epochs, Some(&self.encoder))
            .map_err(err)?;
        Ok(losses_to_tuples(&history))
    }

    /// Sample `n` new weight vectors conditioned on the support set.
    #[pyo3(signature = (support, n, gamma=fewshot::DEFAULT_GAMMA, steps=None, smooth_restarts=3, seed=0))]
    fn generate(
        &self,
        support: Vec<Weights>,
        n: usize,
        gamma: f64,
        steps: Option<usize>,
        smooth_restarts: usize,
        seed: u64,
    ) -> PyResult<Vec<Weights>> {
        let support = self.support(support, smooth_restarts, seed)?;
        let out = match steps {
            Some(s) => fewshot::generate_with_steps(&self.state, &support, n, gamma, s, seed),
            None => fewshot::generate(&self.state, &support, n, gamma, seed),
        }
        .map_err(err)?;
        Ok(out.into_iter().map(|inner| Weights { inner }).collect())
    }

    #[getter]
    fn arch(&self) -> Architecture {
        Architecture { inner: self.state.arch.clone() }
    }

    #[getter]
    fn t_max(&self) -> usize {
        self.state.schedule.t_max
    }

    #[getter]
    fn step(&self) -> usize {
        self.state.step
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_diffusion(&self.state, &self.encoder, path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Diffusion> {
        let (state, encoder) = persist::load_diffusion(path).map_err(err)?;
        Ok(Diffusion { state, encoder })
    }
}

/// Sample one member of a procedural signal class on its canonical grid.
/// Returns (coords, targets) as row lists.
#[pyfunction]
#[pyo3(signature = (kind, class_index, item, res, out_dim=1, dataset_seed=0))]
fn sample_signal(
    kind: &str,
    class_index: usize,
    item: usize,
    res: usize,
    out_dim: usize,
    dataset_seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let kind = synth::SignalKind::parse(kind).map_err(err)?;
    let spec = synth::SignalSpec::new(kind, class_index, dataset_seed);
    let sample = spec.sample(item, res, out_dim).map_err(err)?;
    Ok((tensor_to_rows(&sample.coords), tensor_to_rows(&sample.targets)))
}

/// Overfit an INR to (coords, targets); returns the weights and final MSE.
#[pyfunction]
#[pyo3(signature = (coords, targets, arch, steps=1500, lr=3e-3, seed=0))]
fn fit(
    coords: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    arch: &Architecture,
    steps: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(Weights, f64)> {
    let signal =
        SignalSample::new(rows_to_tensor(&coords)?, rows_to_tensor(&targets)?).map_err(err)?;
    let outcome = inr::fit(&signal, &arch.inner, steps, lr, seed).map_err(err)?;
    Ok((Weights { inner: outcome.weights }, outcome.final_mse))
}

/// Forward-evaluate a weight vector at a list of coordinates.
#[pyfunction]
fn evaluate(w: &Weights, coords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let out = inr::evaluate(&w.inner, &rows_to_tensor(&coords)?).map_err(err)?;
    Ok(tensor_to_rows(&out))
}

/// Render on the canonical 2-D grid; returns (shape, flat row-major data).
#[pyfunction]
fn render_image(w: &Weights, res: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let img = inr::render_image(&w.inner, res).map_err(err)?;
    Ok((img.shape().to_vec(), img.data().to_vec()))
}

/// Peak signal-to-noise ratio between two equal-length signals, in dB.
#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(err(format!("psnr: {} vs {} samples", a.len(), b.len())));
    }
    Ok(inr::psnr(&Tensor::from_vec(a), &Tensor::from_vec(b)))
}

/// Canonicalize a weight vector by permutation smoothing.
#[pyfunction]
#[pyo3(signature = (w, restarts=3, seed=0))]
fn smooth(w: &Weights, restarts: usize, seed: u64) -> PyResult<Weights> {
    let (smoothed, _plan) = symmetry::smooth(&w.inner, restarts, seed).map_err(err)?;
    Ok(Weights { inner: smoothed })
}

/// Total variation of hidden-layer weight magnitudes (the smoothing objective).
#[pyfunction]
fn total_variation(w: &Weights) -> f64 {
    symmetry::total_variation(&w.inner)
}

/// Apply a random hidden-neuron permutation; the result computes the same
/// function as the input.
#[pyfunction]
#[pyo3(signature = (w, seed=0))]
fn random_permutation(w: &Weights, seed: u64) -> PyResult<Weights> {
    let plan = PermutationPlan::random(&w.inner.arch, seed);
    Ok(Weights { inner: symmetry::act(&plan, &w.inner).map_err(err)? })
}

/// Largest |f₁(x) − f₂(x)| over a deterministic probe set.
#[pyfunction]
#[pyo3(signature = (a, b, probes=1000, seed=0))]
fn max_deviation(a: &Weights, b: &Weights, probes: usize, seed: u64) -> PyResult<f64> {
    let coords = inr::probe_coords(a.inner.arch.coord_dim, probes, mix(seed, 0x5eed));
    symmetry::max_deviation(&a.inner, &b.inner, &coords).map_err(err)
}

/// Symmetric chamfer distance between two point sets (rows are points).
#[pyfunction]
fn chamfer(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::chamfer(&rows_to_tensor(&a)?, &rows_to_tensor(&b)?).map_err(err)
}

#[pymodule]
fn weightforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Architecture>()?;
    m.add_class::<Weights>()?;
    m.add_class::<Encoder>()?;
    m.add_class::<Diffusion>()?;
    m.add_function(wrap_pyfunction!(sample_signal, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(render_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(total_variation, m)?)?;
    m.add_function(wrap_pyfunction!(random_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(max_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add("DEFAULT_GAMMA", fewshot::DEFAULT_GAMMA)?;
    m.add("DEFAULT_OMEGA0", inr::DEFAULT_OMEGA0)?;
    Ok(())
}
