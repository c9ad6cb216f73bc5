//! Convolutional classifier with exact forward, parameter-gradient, and
//! input-gradient evaluation, trained with Adam.
//!
//! Models are immutable values for inference; `forward`, `predict`, and
//! `backward` may be called concurrently on a shared model. Training always
//! returns a new model.

mod adam;
mod engine;

pub use adam::{adam_step, AdamHyper, AdamState};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::codec::ImageU8;
use crate::data_io::Dataset;
use crate::rng::Rng;
use crate::tensor::Tensor;

use engine::{backward_from_logits, cross_entropy, cross_entropy_logit_grad, forward_cached, DropoutPlan};

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    InvalidLabel {
        label: usize,
        classes: usize,
    },
    EmptyDataset,
    BadArchitecture(String),
    BadConfig(String),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { context, expected, got } => {
                write!(f, "{context}: expected shape {expected:?}, got {got:?}")
            }
            NnError::InvalidLabel { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            NnError::EmptyDataset => write!(f, "dataset is empty"),
            NnError::BadArchitecture(msg) => write!(f, "bad architecture: {msg}"),
            NnError::BadConfig(msg) => write!(f, "bad config: {msg}"),
        }
    }
}

impl std::error::Error for NnError {}

/// Layer descriptors. Convolutions are 3x3, stride 1, same-padded; pooling
/// windows are clipped at the lower/right edges so the output extent is
/// ceil(input / stride).
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { filters: usize },
    MaxPool { size: usize, stride: usize },
    Relu,
    Dropout { rate: f32 },
    Flatten,
    Dense { units: usize },
    Softmax,
}

/// Network architecture: input dims (channels, height, width), class count,
/// and an ordered layer list ending in Softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl NetworkSpec {
    /// Walk the layer list and check shape compatibility; returns the output
    /// dims after each layer.
    pub fn validate(&self) -> Result<Vec<(usize, usize, usize)>, NnError> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(NnError::BadArchitecture("input dims must be positive".into()));
        }
        if self.classes < 2 {
            return Err(NnError::BadArchitecture("need at least 2 classes".into()));
        }
        let mut dims = Dims::Chw(c, h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            dims = match (layer, dims) {
                (LayerSpec::Conv { filters }, Dims::Chw(_, h, w)) => {
                    if *filters == 0 {
                        return Err(NnError::BadArchitecture(format!("layer {i}: conv needs filters")));
                    }
                    Dims::Chw(*filters, h, w)
                }
                (LayerSpec::MaxPool { size, stride }, Dims::Chw(c, h, w)) => {
                    if *size == 0 || *stride == 0 {
                        return Err(NnError::BadArchitecture(format!(
                            "layer {i}: pool size/stride must be positive"
                        )));
                    }
                    Dims::Chw(c, h.div_ceil(*stride), w.div_ceil(*stride))
                }
                (LayerSpec::Relu | LayerSpec::Dropout { .. }, d) => {
                    if let LayerSpec::Dropout { rate } = layer {
                        if !(0.0..1.0).contains(rate) {
                            return Err(NnError::BadArchitecture(format!(
                                "layer {i}: dropout rate {rate} outside [0, 1)"
                            )));
                        }
                    }
                    d
                }
                (LayerSpec::Flatten, Dims::Chw(c, h, w)) => Dims::Flat(c * h * w),
                (LayerSpec::Dense { units }, Dims::Flat(_)) => {
                    if *units == 0 {
                        return Err(NnError::BadArchitecture(format!("layer {i}: dense needs units")));
                    }
                    Dims::Flat(*units)
                }
                (LayerSpec::Softmax, Dims::Flat(k)) => {
                    if i != self.layers.len() - 1 {
                        return Err(NnError::BadArchitecture("softmax must be the last layer".into()));
                    }
                    if k != self.classes {
                        return Err(NnError::BadArchitecture(format!(
                            "softmax over {k} units but {} classes",
                            self.classes
                        )));
                    }
                    Dims::Flat(k)
                }
                (l, d) => {
                    return Err(NnError::BadArchitecture(format!(
                        "layer {i} ({l:?}) cannot follow output {d:?}"
                    )))
                }
            };
            out.push(match dims {
                Dims::Chw(c, h, w) => (c, h, w),
                Dims::Flat(n) => (n, 1, 1),
            });
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => Ok(out),
            _ => Err(NnError::BadArchitecture("network must end in softmax".into())),
        }
    }

    /// Named parameter tensors implied by this network spec, in layer order.
    pub fn param_defs(&self) -> Result<Vec<(String, Vec<usize>)>, NnError> {
        self.validate()?;
        let (mut c, _, _) = self.input;
        let mut flat = 0usize;
        let mut defs = Vec::new();
        let mut conv_idx = 0usize;
        let mut dense_idx = 0usize;
        let mut dims = Dims::Chw(self.input.0, self.input.1, self.input.2);
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { filters } => {
                    defs.push((format!("conv{conv_idx}.weight"), vec![*filters, c, 3, 3]));
                    defs.push((format!("conv{conv_idx}.bias"), vec![*filters]));
                    conv_idx += 1;
                    c = *filters;
                    if let Dims::Chw(_, h, w) = dims {
                        dims = Dims::Chw(c, h, w);
                    }
                }
                LayerSpec::MaxPool { stride, .. } => {
                    if let Dims::Chw(cc, h, w) = dims {
                        dims = Dims::Chw(cc, h.div_ceil(*stride), w.div_ceil(*stride));
                    }
                }
                LayerSpec::Flatten => {
                    if let Dims::Chw(cc, h, w) = dims {
                        flat = cc * h * w;
                        dims = Dims::Flat(flat);
                    }
                }
                LayerSpec::Dense { units } => {
                    defs.push((format!("dense{dense_idx}.weight"), vec![*units, flat]));
                    defs.push((format!("dense{dense_idx}.bias"), vec![*units]));
                    dense_idx += 1;
                    flat = *units;
                    dims = Dims::Flat(flat);
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => {}
            }
        }
        Ok(defs)
    }
}

/// Built-in architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchId {
    /// Two Conv-Conv-Pool blocks (32, 64 filters), dense 512.
    Cifar10,
    /// Three Conv-Conv-Pool blocks (32, 64, 128 filters), dense 512.
    Gtsrb,
    /// One Conv-Pool block (8 filters), dense 32. Desk-scale experiments.
    Toy,
}

impl ArchId {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Cifar10 => "cifar10",
            ArchId::Gtsrb => "gtsrb",
            ArchId::Toy => "toy",
        }
    }
}

impl FromStr for ArchId {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self, NnError> {
        match s {
            "cifar10" => Ok(ArchId::Cifar10),
            "gtsrb" => Ok(ArchId::Gtsrb),
            "toy" => Ok(ArchId::Toy),
            other => Err(NnError::BadConfig(format!("unknown architecture '{other}'"))),
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const DEFAULT_DROPOUT: f32 = 0.5;

fn arch_layers(arch: ArchId, classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    match arch {
        ArchId::Cifar10 => vec![
            Conv { filters: 32 },
            Relu,
            Conv { filters: 32 },
            Relu,
            MaxPool { size: 3, stride: 2 },
            Conv { filters: 64 },
            Relu,
            Conv { filters: 64 },
            Relu,
            MaxPool { size: 3, stride: 2 },
            Flatten,
            Dense { units: 512 },
            Relu,
            Dropout { rate: DEFAULT_DROPOUT },
            Dense { units: classes },
            Softmax,
        ],
        ArchId::Gtsrb => vec![
            Conv { filters: 32 },
            Relu,
            Conv { filters: 32 },
            Relu,
            MaxPool { size: 2, stride: 2 },
            Conv { filters: 64 },
            Relu,
            Conv { filters: 64 },
            Relu,
            MaxPool { size: 2, stride: 2 },
            Conv { filters: 128 },
            Relu,
            Conv { filters: 128 },
            Relu,
            MaxPool { size: 2, stride: 2 },
            Flatten,
            Dense { units: 512 },
            Relu,
            Dropout { rate: DEFAULT_DROPOUT },
            Dense { units: classes },
            Softmax,
        ],
        ArchId::Toy => vec![
            Conv { filters: 8 },
            Relu,
            MaxPool { size: 2, stride: 2 },
            Flatten,
            Dense { units: 32 },
            Relu,
            Dropout { rate: DEFAULT_DROPOUT },
            Dense { units: classes },
            Softmax,
        ],
    }
}

/// Architecture plus named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl Model {
    /// Assemble a model from parts, checking every tensor against the shape
    /// implied by its architecture.
    pub fn from_parts(
        spec: NetworkSpec,
        params: BTreeMap<String, Tensor>,
        rng_seed: u64,
    ) -> Result<Self, NnError> {
        let defs = spec.param_defs()?;
        if defs.len() != params.len() {
            return Err(NnError::BadArchitecture(format!(
                "expected {} parameter tensors, got {}",
                defs.len(),
                params.len()
            )));
        }
        for (name, shape) in &defs {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(NnError::ShapeMismatch {
                        context: "model parameter",
                        expected: shape.clone(),
                        got: t.shape().to_vec(),
                    })
                }
                None => {
                    return Err(NnError::BadArchitecture(format!("missing parameter tensor '{name}'")))
                }
            }
        }
        Ok(Model { spec, params, rng_seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn with_params(&self, params: BTreeMap<String, Tensor>) -> Result<Self, NnError> {
        Model::from_parts(self.spec.clone(), params, self.rng_seed)
    }
}

/// Build a named architecture with He-initialized weights and zero biases.
/// `input_dims` is (height, width, channels).
pub fn build_network(
    arch: ArchId,
    input_dims: (usize, usize, usize),
    classes: usize,
    seed: u64,
) -> Result<Model, NnError> {
    let (h, w, c) = input_dims;
    let spec = NetworkSpec {
        input: (c, h, w),
        classes,
        layers: arch_layers(arch, classes),
    };
    let defs = spec.param_defs()?;
    let mut rng = Rng::new(seed);
    let mut params = BTreeMap::new();
    for (name, shape) in defs {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else {
            // He-normal: std = sqrt(2 / fan_in), fan_in from the weight shape.
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| (rng.next_normal() * std) as f32).collect();
            Tensor::new(shape, data)
        };
        params.insert(name, tensor);
    }
    Model::from_parts(spec, params, seed)
}

/// Whether a forward pass applies dropout, and from which seed.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    /// Inference: dropout inactive, fully deterministic.
    Eval,
    /// Training: inverted dropout with masks derived from `dropout_seed`.
    /// `dropout_rate` overrides the rate stored in the layer spec.
    Train {
        dropout_seed: u64,
        dropout_rate: Option<f32>,
    },
}

impl ForwardMode {
    fn plan(&self) -> Option<DropoutPlan> {
        match *self {
            ForwardMode::Eval => None,
            ForwardMode::Train { dropout_seed, dropout_rate } => Some(DropoutPlan {
                seed: dropout_seed,
                rate_override: dropout_rate,
            }),
        }
    }
}

/// Per-row class probabilities for a batch shaped [n, c, h, w].
pub fn forward(model: &Model, batch: &Tensor, mode: &ForwardMode) -> Result<Tensor, NnError> {
    Ok(forward_cached(&model.spec, &model.params, batch, mode.plan())?.probs)
}

/// Pre-softmax activations for a batch, dropout off.
pub fn logits(model: &Model, batch: &Tensor) -> Result<Tensor, NnError> {
    Ok(forward_cached(&model.spec, &model.params, batch, None)?.logits)
}

/// Mean categorical cross-entropy of predicted probabilities against labels.
pub fn loss_cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f32, NnError> {
    cross_entropy(probs, labels)
}

/// Exact analytic gradients of the mean cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient for every named parameter tensor.
    pub params: BTreeMap<String, Tensor>,
    /// Gradient with respect to the input batch.
    pub input: Tensor,
}

pub fn backward(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    mode: &ForwardMode,
) -> Result<Gradients, NnError> {
    let cache = forward_cached(&model.spec, &model.params, batch, mode.plan())?;
    // Validates the labels as a side effect.
    cross_entropy(&cache.probs, labels)?;
    let seed = cross_entropy_logit_grad(&cache.probs, labels);
    let (params, input) = backward_from_logits(&model.spec, &model.params, &cache, seed);
    Ok(Gradients { params, input })
}

/// Logits of a single instance plus the input gradient of each requested
/// class's logit. One forward pass, one backward pass per class.
pub fn logit_input_gradients(
    model: &Model,
    input: &Tensor,
    classes: &[usize],
) -> Result<(Vec<f32>, Vec<Tensor>), NnError> {
    let cache = forward_cached(&model.spec, &model.params, input, None)?;
    let k = model.spec.classes;
    if input.shape()[0] != 1 {
        return Err(NnError::ShapeMismatch {
            context: "logit gradient input",
            expected: vec![1],
            got: vec![input.shape()[0]],
        });
    }
    let logit_row = cache.logits.data().to_vec();
    let mut grads = Vec::with_capacity(classes.len());
    for &class in classes {
        if class >= k {
            return Err(NnError::InvalidLabel { label: class, classes: k });
        }
        let mut seed = Tensor::zeros(vec![1, k]);
        seed.data_mut()[class] = 1.0;
        let (_, input_grad) = backward_from_logits(&model.spec, &model.params, &cache, seed);
        grads.push(input_grad);
    }
    Ok((logit_row, grads))
}

/// Scale an image into the unit-interval tensor the network consumes,
/// shaped [1, 3, h, w].
pub fn image_to_input(img: &ImageU8) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(x, y);
            for ch in 0..3 {
                data[ch * h * w + y * w + x] = f32::from(px[ch]) / 255.0;
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Stack images into a batch tensor shaped [n, 3, h, w].
pub fn images_to_batch(images: &[&ImageU8]) -> Tensor {
    assert!(!images.is_empty(), "batch must be nonempty");
    let (w, h) = (images[0].width(), images[0].height());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend_from_slice(image_to_input(img).data());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Inverse of [`image_to_input`]: clamp to [0,1], scale by 255, and round
/// half away from zero.
pub fn input_to_image(input: &Tensor) -> Result<ImageU8, NnError> {
    let shape = input.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
        return Err(NnError::ShapeMismatch {
            context: "input tensor to image",
            expected: vec![1, 3, 0, 0],
            got: shape.to_vec(),
        });
    }
    let (h, w) = (shape[2], shape[3]);
    let d = input.data();
    let mut bytes = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = f64::from(d[ch * h * w + y * w + x]).clamp(0.0, 1.0) * 255.0;
                bytes[(y * w + x) * 3 + ch] = v.round() as u8;
            }
        }
    }
    ImageU8::new(w, h, bytes).map_err(|_| NnError::BadConfig("image conversion failed".into()))
}

/// Argmax class of the eval-mode forward pass; ties break to the lowest
/// class index.
pub fn predict(model: &Model, image: &ImageU8) -> Result<(usize, f32), NnError> {
    let input = image_to_input(image);
    let probs = forward(model, &input, &ForwardMode::Eval)?;
    Ok(argmax_row(probs.data()))
}

pub(crate) fn argmax_row(row: &[f32]) -> (usize, f32) {
    let mut best = 0usize;
    let mut best_p = row[0];
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    (best, best_p)
}

pub(crate) fn argmax_slice(row: &[f32]) -> usize {
    argmax_row(row).0
}

/// Argmax class and its probability from one probability row; ties break to
/// the lowest class index.
pub fn argmax_probs(row: &[f32]) -> (usize, f32) {
    argmax_row(row)
}

/// Training hyperparameters. `epochs = 0` returns a bit-identical copy of
/// the input model.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f32,
    pub lr: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 64,
            dropout_rate: DEFAULT_DROPOUT,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::BadConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Shuffled mini-batch training with Adam. Deterministic given the seed;
/// the input model is left untouched.
pub fn train(model: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<Model, NnError> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let k = model.spec.classes;
    for &label in dataset.labels() {
        if label >= k {
            return Err(NnError::InvalidLabel { label, classes: k });
        }
    }
    let mut params = model.params.clone();
    if cfg.epochs == 0 {
        return model.with_params(params);
    }

    let inputs: Vec<Tensor> = dataset.images().iter().map(image_to_input).collect();
    let (c, h, w) = model.spec.input;
    for t in &inputs {
        if t.shape()[1..] != [c, h, w] {
            return Err(NnError::ShapeMismatch {
                context: "training image",
                expected: vec![c, h, w],
                got: t.shape()[1..].to_vec(),
            });
        }
    }

    let hyper = AdamHyper { lr: cfg.lr, ..AdamHyper::default() };
    let mut state = AdamState::new(&params, hyper);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let scratch_model_spec = &model.spec;

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * c * h * w);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(inputs[i].data());
                labels.push(dataset.labels()[i]);
            }
            let batch = Tensor::new(vec![chunk.len(), c, h, w], data);
            let dropout_seed = rng.next_u64();
            let cache = forward_cached(
                scratch_model_spec,
                &params,
                &batch,
                Some(DropoutPlan {
                    seed: dropout_seed,
                    rate_override: Some(cfg.dropout_rate),
                }),
            )?;
            let seed_grad = cross_entropy_logit_grad(&cache.probs, &labels);
            let (grads, _) = backward_from_logits(scratch_model_spec, &params, &cache, seed_grad);
            adam_step(&mut params, &grads, &mut state);
        }
    }
    model.with_params(params)
}

/// 64-bit shadow path, used for gradient checking only. Runs the identical
/// layer arithmetic as the 32-bit path, instantiated over f64.
pub mod shadow {
    use super::*;

    /// Named parameter gradients plus the input-batch gradient.
    pub type ShadowGradients = (BTreeMap<String, Tensor<f64>>, Tensor<f64>);

    pub fn cast_params(model: &Model) -> BTreeMap<String, Tensor<f64>> {
        model.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    /// Mean cross-entropy loss of the f64-instantiated network.
    pub fn loss(
        spec: &NetworkSpec,
        params: &BTreeMap<String, Tensor<f64>>,
        batch: &Tensor<f64>,
        labels: &[usize],
        mode: &ForwardMode,
    ) -> Result<f64, NnError> {
        let cache = forward_cached(spec, params, batch, mode.plan())?;
        cross_entropy(&cache.probs, labels)
    }

    /// Analytic f64 gradients, for comparison against finite differences.
    pub fn backward(
        spec: &NetworkSpec,
        params: &BTreeMap<String, Tensor<f64>>,
        batch: &Tensor<f64>,
        labels: &[usize],
        mode: &ForwardMode,
    ) -> Result<ShadowGradients, NnError> {
        let cache = forward_cached(spec, params, batch, mode.plan())?;
        cross_entropy(&cache.probs, labels)?;
        let seed = cross_entropy_logit_grad(&cache.probs, labels);
        Ok(backward_from_logits(spec, params, &cache, seed))
    }
}
