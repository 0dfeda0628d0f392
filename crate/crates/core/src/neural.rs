//! The four registered architectures: a shared encoder (BiLSTM or
//! convolution bank) feeding a shared dense block and two task heads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, LstmVars, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::vectorize::EncodedSequence;

pub const REGISTERED_MODELS: [&str; 4] = ["baseline", "improved", "large", "textcnn"];

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("unknown model name {name:?}; registered: {}", REGISTERED_MODELS.join(", "))]
    UnknownModelName { name: String },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch sequences have differing lengths ({0} vs {1})")]
    RaggedBatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Improved,
    Large,
    Textcnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Improved => "improved",
            Self::Large => "large",
            Self::Textcnn => "textcnn",
        }
    }

    pub fn uses_batchnorm(self) -> bool {
        self == Self::Improved
    }

    pub fn is_recurrent(self) -> bool {
        self != Self::Textcnn
    }
}

impl FromStr for Architecture {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "improved" => Ok(Self::Improved),
            "large" => Ok(Self::Large),
            "textcnn" => Ok(Self::Textcnn),
            _ => Err(NeuralError::UnknownModelName { name: s.to_string() }),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub model_name: String,
    pub vocab_size: usize,
    pub num_sentiment_classes: usize,
    pub num_emotion_classes: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub conv_maps: usize,
    pub kernel_sizes: Vec<usize>,
    /// Width of the extra dense layer (large only).
    pub extra_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// JSON form: only `model_name` and `vocab_size` are required; anything
/// omitted takes the architecture's default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigSpec {
    model_name: String,
    vocab_size: usize,
    num_sentiment_classes: Option<usize>,
    num_emotion_classes: Option<usize>,
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
    num_layers: Option<usize>,
    dropout: Option<f64>,
    max_len: Option<usize>,
    conv_maps: Option<usize>,
    kernel_sizes: Option<Vec<usize>>,
    extra_dim: Option<usize>,
    bn_momentum: Option<f64>,
    bn_eps: Option<f64>,
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = ModelConfigSpec::deserialize(d)?;
        let base = ModelConfig::for_model(&s.model_name, s.vocab_size).map_err(serde::de::Error::custom)?;
        Ok(ModelConfig {
            num_sentiment_classes: s.num_sentiment_classes.unwrap_or(base.num_sentiment_classes),
            num_emotion_classes: s.num_emotion_classes.unwrap_or(base.num_emotion_classes),
            embed_dim: s.embed_dim.unwrap_or(base.embed_dim),
            hidden_dim: s.hidden_dim.unwrap_or(base.hidden_dim),
            num_layers: s.num_layers.unwrap_or(base.num_layers),
            dropout: s.dropout.unwrap_or(base.dropout),
            max_len: s.max_len.unwrap_or(base.max_len),
            conv_maps: s.conv_maps.unwrap_or(base.conv_maps),
            kernel_sizes: s.kernel_sizes.unwrap_or(base.kernel_sizes.clone()),
            extra_dim: s.extra_dim.unwrap_or(base.extra_dim),
            bn_momentum: s.bn_momentum.unwrap_or(base.bn_momentum),
            bn_eps: s.bn_eps.unwrap_or(base.bn_eps),
            ..base
        })
    }
}

impl ModelConfig {
    /// Default dimensions for a registered architecture.
    pub fn for_model(name: &str, vocab_size: usize) -> Result<Self> {
        let arch: Architecture = name.parse()?;
        let (embed_dim, hidden_dim, num_layers) = match arch {
            Architecture::Baseline => (128, 128, 1),
            Architecture::Improved => (128, 256, 2),
            Architecture::Large => (256, 256, 2),
            Architecture::Textcnn => (128, 128, 1),
        };
        Ok(Self {
            model_name: arch.name().to_string(),
            vocab_size,
            num_sentiment_classes: 2,
            num_emotion_classes: 5,
            embed_dim,
            hidden_dim,
            num_layers,
            dropout: 0.3,
            max_len: 64,
            conv_maps: 128,
            kernel_sizes: vec![2, 3, 4],
            extra_dim: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.model_name.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture()?;
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2 (PAD and UNK)");
        }
        if self.num_sentiment_classes < 2 || self.num_emotion_classes < 2 {
            return bad("each task needs at least 2 classes");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if arch.is_recurrent() && self.num_layers == 0 {
            return bad("num_layers must be positive");
        }
        if arch == Architecture::Textcnn {
            if self.conv_maps == 0 || self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
                return bad("convolution bank needs positive maps and kernel sizes");
            }
            if self.kernel_sizes.iter().any(|&k| k > self.max_len) {
                return bad("kernel wider than max_len");
            }
        }
        if arch == Architecture::Large && self.extra_dim == 0 {
            return bad("extra_dim must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.bn_eps <= 0.0 {
            return bad("batch norm momentum must lie in (0, 1] and eps be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Width of the representation fed to the shared dense layer.
    fn feature_dim(&self, arch: Architecture) -> usize {
        match arch {
            Architecture::Textcnn => self.conv_maps * self.kernel_sizes.len(),
            _ => 2 * self.hidden_dim,
        }
    }

    /// Width seen by the task heads.
    fn head_dim(&self, arch: Architecture) -> usize {
        match arch {
            Architecture::Large => self.extra_dim,
            _ => self.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform(f64),
    /// LSTM input bias: uniform, with the forget block set to one.
    ForgetBias { bound: f64, hidden: usize },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Running statistic rather than a trainable parameter.
    pub buffer: bool,
}

fn lstm_direction_prefix(layer: usize, dir: &str) -> String {
    format!("lstm.l{layer}.{dir}")
}

/// Every named tensor of the architecture, in construction order.
pub fn layout(config: &ModelConfig) -> Result<Vec<TensorSpec>> {
    config.validate()?;
    let arch = config.architecture()?;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init, buffer: bool| {
        out.push(TensorSpec { name, shape, init, buffer })
    };
    let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
    let (de, dh) = (config.embed_dim, config.hidden_dim);
    push("embedding.weight".into(), vec![config.vocab_size, de], Init::Uniform(inv_sqrt(de)), false);
    if arch.is_recurrent() {
        for layer in 0..config.num_layers {
            let inp = if layer == 0 { de } else { 2 * dh };
            let bound = inv_sqrt(dh);
            for dir in ["fwd", "bwd"] {
                let p = lstm_direction_prefix(layer, dir);
                push(format!("{p}.w_ih"), vec![4 * dh, inp], Init::Uniform(bound), false);
                push(format!("{p}.w_hh"), vec![4 * dh, dh], Init::Uniform(bound), false);
                push(format!("{p}.b_ih"), vec![4 * dh], Init::ForgetBias { bound, hidden: dh }, false);
                push(format!("{p}.b_hh"), vec![4 * dh], Init::Uniform(bound), false);
            }
        }
    } else {
        for &k in &config.kernel_sizes {
            let bound = inv_sqrt(k * de);
            push(format!("conv.k{k}.weight"), vec![config.conv_maps, k * de], Init::Uniform(bound), false);
            push(format!("conv.k{k}.bias"), vec![config.conv_maps], Init::Uniform(bound), false);
        }
    }
    let feat = config.feature_dim(arch);
    if arch.uses_batchnorm() {
        push("bn.gamma".into(), vec![feat], Init::Constant(1.0), false);
        push("bn.beta".into(), vec![feat], Init::Constant(0.0), false);
        push("bn.running_mean".into(), vec![feat], Init::Constant(0.0), true);
        push("bn.running_var".into(), vec![feat], Init::Constant(1.0), true);
    }
    let mut dense = |name: &str, out_dim: usize, in_dim: usize| {
        let b = inv_sqrt(in_dim);
        push(format!("{name}.weight"), vec![out_dim, in_dim], Init::Uniform(b), false);
        push(format!("{name}.bias"), vec![out_dim], Init::Uniform(b), false);
    };
    dense("shared", dh, feat);
    if arch == Architecture::Large {
        dense("extra", config.extra_dim, dh);
    }
    let hd = config.head_dim(arch);
    dense("head_sent", config.num_sentiment_classes, hd);
    dense("head_emo", config.num_emotion_classes, hd);
    Ok(out)
}

/// Token ids of one batch laid out `[size, seq_len]` with true lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub size: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a EncodedSequence>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut seq_len = None;
        for s in seqs {
            match seq_len {
                None => seq_len = Some(s.ids.len()),
                Some(l) if l != s.ids.len() => return Err(NeuralError::RaggedBatch(l, s.ids.len())),
                _ => {}
            }
            ids.extend_from_slice(&s.ids);
            lengths.push(s.length);
        }
        let seq_len = seq_len.ok_or(NeuralError::EmptyBatch)?;
        if seq_len == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        Ok(Self {
            size: lengths.len(),
            ids,
            lengths,
            seq_len,
        })
    }
}

/// Logits of both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLogits<T> {
    pub sentiment: Tensor<T>,
    pub emotion: Tensor<T>,
}

/// Tape handles for one forward pass.
pub struct ForwardOutput<T> {
    pub sentiment: Var,
    pub emotion: Var,
    /// Batch statistics to fold into the running estimates after a
    /// training step (improved only).
    pub bn_stats: Option<BatchStats<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub per_tensor: Vec<(String, usize)>,
    pub total: usize,
    /// Non-trainable running statistics, excluded from `total`.
    pub buffers: usize,
}

/// A built model: configuration plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    arch: Architecture,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

/// Builds a registered architecture with seeded initialization.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    let specs = layout(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::Uniform(b) => (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-b..=b))).collect(),
            Init::ForgetBias { bound, hidden } => (0..n)
                .map(|i| {
                    let v = rng.gen_range(-bound..=bound);
                    T::from_f64_lossy(if (hidden..2 * hidden).contains(&i) { 1.0 } else { v })
                })
                .collect(),
            Init::Constant(c) => vec![T::from_f64_lossy(c); n],
        };
        let mut t = Tensor::new(spec.shape, data)?;
        if spec.name == "embedding.weight" {
            // PAD row starts at zero
            t.data_mut()[..config.embed_dim].iter_mut().for_each(|v| *v = T::zero());
        }
        if spec.buffer {
            buffers.insert(spec.name, t);
        } else {
            params.insert(spec.name, t);
        }
    }
    Ok(Model {
        config: config.clone(),
        arch: config.architecture()?,
        params,
        buffers,
    })
}

impl<T: Scalar> Model<T> {
    /// Assembles a model from named tensors, which must match the layout
    /// exactly in names and shapes.
    pub fn from_tensors(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let specs = layout(config)?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for spec in &specs {
            let t = tensors
                .remove(&spec.name)
                .ok_or_else(|| NeuralError::InvalidConfig(format!("missing tensor {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(NeuralError::InvalidConfig(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if spec.buffer {
                buffers.insert(spec.name.clone(), t);
            } else {
                params.insert(spec.name.clone(), t);
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(NeuralError::InvalidConfig(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config: config.clone(),
            arch: config.architecture()?,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Parameters and buffers together, sorted by name.
    pub fn named_tensors(&self) -> BTreeMap<String, &Tensor<T>> {
        self.params.iter().chain(&self.buffers).map(|(k, v)| (k.clone(), v)).collect()
    }

    pub fn parameter_count(&self) -> ParameterCount {
        let per_tensor: Vec<(String, usize)> = self.params.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        ParameterCount {
            total: per_tensor.iter().map(|(_, n)| n).sum(),
            buffers: self.buffers.values().map(Tensor::len).sum(),
            per_tensor,
        }
    }

    /// Registers every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BTreeMap<String, Var> {
        self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect()
    }

    /// Records the forward pass on `tape`. With `training`, dropout is
    /// active and batch norm uses batch statistics.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        vars: &BTreeMap<String, Var>,
        batch: &Batch,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>> {
        let v = |name: &str| -> Result<Var> {
            vars.get(name)
                .copied()
                .ok_or_else(|| NeuralError::InvalidConfig(format!("unbound parameter {name}")))
        };
        let cfg = &self.config;
        let emb = tape.embedding(v("embedding.weight")?, &batch.ids, batch.size)?;
        let mut feat = if self.arch.is_recurrent() {
            let mut seq = emb;
            let mut last = None;
            for layer in 0..cfg.num_layers {
                let dir = |d: &str| -> Result<LstmVars> {
                    let p = lstm_direction_prefix(layer, d);
                    Ok(LstmVars {
                        w_ih: v(&format!("{p}.w_ih"))?,
                        w_hh: v(&format!("{p}.w_hh"))?,
                        b_ih: v(&format!("{p}.b_ih"))?,
                        b_hh: v(&format!("{p}.b_hh"))?,
                    })
                };
                let more = layer + 1 < cfg.num_layers;
                let out = tape.bilstm(seq, &batch.lengths, &dir("fwd")?, &dir("bwd")?, more)?;
                last = Some(out.final_state);
                if let Some(s) = out.sequence {
                    seq = s;
                }
            }
            last.expect("at least one layer")
        } else {
            let kernels = cfg
                .kernel_sizes
                .iter()
                .map(|k| Ok((v(&format!("conv.k{k}.weight"))?, v(&format!("conv.k{k}.bias"))?)))
                .collect::<Result<Vec<_>>>()?;
            tape.conv1d_bank(emb, &kernels)?
        };
        let mut bn_stats = None;
        if self.arch.uses_batchnorm() {
            let (g, b) = (v("bn.gamma")?, v("bn.beta")?);
            feat = if training {
                let (y, stats) = tape.batchnorm_train(feat, g, b, cfg.bn_eps)?;
                bn_stats = Some(stats);
                y
            } else {
                tape.batchnorm_eval(
                    feat,
                    g,
                    b,
                    self.buffers["bn.running_mean"].data(),
                    self.buffers["bn.running_var"].data(),
                    cfg.bn_eps,
                )?
            };
        }
        let h = tape.dense(feat, v("shared.weight")?, Some(v("shared.bias")?))?;
        let h = tape.relu(h);
        let mut h = tape.dropout(h, cfg.dropout, training, rng)?;
        if self.arch == Architecture::Large {
            let e = tape.dense(h, v("extra.weight")?, Some(v("extra.bias")?))?;
            h = tape.relu(e);
        }
        let sentiment = tape.dense(h, v("head_sent.weight")?, Some(v("head_sent.bias")?))?;
        let emotion = tape.dense(h, v("head_emo.weight")?, Some(v("head_emo.bias")?))?;
        Ok(ForwardOutput {
            sentiment,
            emotion,
            bn_stats,
        })
    }

    /// Evaluation-mode logits; never mutates the model.
    pub fn predict_logits(&self, batch: &Batch) -> Result<DualLogits<T>> {
        let mut tape = Tape::new();
        let vars: BTreeMap<String, Var> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect();
        // evaluation mode draws nothing from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, batch, false, &mut rng)?;
        Ok(DualLogits {
            sentiment: tape.value(out.sentiment).clone(),
            emotion: tape.value(out.emotion).clone(),
        })
    }

    /// Folds batch statistics into the running estimates:
    /// `new = (1 - momentum) * old + momentum * batch`.
    pub fn update_running_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.config.bn_momentum);
        let one = T::one();
        for (name, batch) in [("bn.running_mean", &stats.mean), ("bn.running_var", &stats.var)] {
            if let Some(buf) = self.buffers.get_mut(name) {
                for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = (one - m) * *r + m * b;
                }
            }
        }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            arch: self.arch,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};

    fn toy_config(name: &str) -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            hidden_dim: 3,
            conv_maps: 2,
            extra_dim: 2,
            dropout: 0.0,
            ..ModelConfig::for_model(name, 10).unwrap()
        }
    }

    fn toy_batch() -> Batch {
        let seqs = [
            EncodedSequence { ids: vec![2, 5, 7, 0], length: 3 },
            EncodedSequence { ids: vec![9, 1, 4, 3], length: 4 },
            EncodedSequence { ids: vec![6, 0, 0, 0], length: 1 },
        ];
        Batch::from_sequences(&seqs).unwrap()
    }

    #[test]
    fn registry_is_closed() {
        for name in REGISTERED_MODELS {
            assert!(build_model::<f32>(&toy_config(name), 0).is_ok());
        }
        for name in ["resnet", "Baseline", "", "lstm"] {
            assert!(matches!(
                ModelConfig::for_model(name, 10),
                Err(NeuralError::UnknownModelName { .. })
            ));
        }
        let msg = ModelConfig::for_model("resnet", 10).unwrap_err().to_string();
        assert!(msg.contains("baseline, improved, large, textcnn"));
    }

    #[test]
    fn baseline_parameter_count() {
        let m = build_model::<f32>(&ModelConfig::for_model("baseline", 6155).unwrap(), 1).unwrap();
        let emb = 6155 * 128;
        let lstm = 2 * (4 * (128 * 256) + 4 * 128 * 2);
        let shared = 256 * 128 + 128;
        let heads = 128 * 2 + 2 + 128 * 5 + 5;
        assert_eq!(m.parameter_count().total, emb + lstm + shared + heads);
        assert_eq!(m.parameter_count().total, 1_085_831);
    }

    #[test]
    fn textcnn_conv_bank_count() {
        let m = build_model::<f32>(&ModelConfig::for_model("textcnn", 6155).unwrap(), 1).unwrap();
        let count = m.parameter_count();
        let conv: usize = count
            .per_tensor
            .iter()
            .filter(|(n, _)| n.starts_with("conv."))
            .map(|(_, c)| c)
            .sum();
        assert_eq!(conv, 147_456 + 384);
        assert_eq!(m.param("shared.weight").unwrap().shape(), &[128, 384]);
    }

    #[test]
    fn architecture_shapes() {
        let imp = build_model::<f32>(&ModelConfig::for_model("improved", 6155).unwrap(), 1).unwrap();
        assert_eq!(imp.param("lstm.l1.fwd.w_ih").unwrap().shape(), &[1024, 512]);
        assert_eq!(imp.param("bn.gamma").unwrap().shape(), &[512]);
        assert!(imp.buffers().contains_key("bn.running_var"));
        let large = build_model::<f32>(&ModelConfig::for_model("large", 6155).unwrap(), 1).unwrap();
        assert_eq!(large.param("embedding.weight").unwrap().shape(), &[6155, 256]);
        assert_eq!(large.param("extra.weight").unwrap().shape(), &[128, 256]);
        assert_eq!(large.param("head_emo.weight").unwrap().shape(), &[5, 128]);
        assert!(large.param("bn.gamma").is_none());
    }

    #[test]
    fn vocab_guard_and_validation() {
        let mut c = ModelConfig::for_model("baseline", 1).unwrap();
        assert!(matches!(build_model::<f32>(&c, 0), Err(NeuralError::InvalidConfig(_))));
        c.vocab_size = 2;
        assert!(build_model::<f32>(&c, 0).is_ok());
        c.dropout = 1.0;
        assert!(build_model::<f32>(&c, 0).is_err());
    }

    #[test]
    fn forget_bias_and_pad_row_init() {
        let m = build_model::<f64>(&toy_config("baseline"), 3).unwrap();
        let b = m.param("lstm.l0.fwd.b_ih").unwrap().data();
        assert!(b[3..6].iter().all(|&v| v == 1.0));
        assert!(m.param("embedding.weight").unwrap().row(0).iter().all(|&v| v == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(m.param("shared.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn config_json_defaults_by_name() {
        let c = ModelConfig::from_json(r#"{"model_name": "improved", "vocab_size": 6155}"#).unwrap();
        assert_eq!(c, ModelConfig::for_model("improved", 6155).unwrap());
        let c = ModelConfig::from_json(
            r#"{"model_name": "large", "vocab_size": 50, "num_sentiment_classes": 2,
                "num_emotion_classes": 5, "hidden_dim": 8}"#,
        )
        .unwrap();
        assert_eq!((c.hidden_dim, c.embed_dim), (8, 256));
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(ModelConfig::from_json(r#"{"model_name": "resnet", "vocab_size": 5}"#).is_err());
    }

    #[test]
    fn output_shapes_every_architecture() {
        for name in REGISTERED_MODELS {
            let m = build_model::<f32>(&toy_config(name), 4).unwrap();
            for b in [1, 3] {
                let seqs: Vec<EncodedSequence> = (0..b)
                    .map(|i| EncodedSequence { ids: vec![2 + i, 3, 4, 0], length: 3 })
                    .collect();
                let out = m.predict_logits(&Batch::from_sequences(&seqs).unwrap()).unwrap();
                assert_eq!(out.sentiment.shape(), &[b, 2], "{name}");
                assert_eq!(out.emotion.shape(), &[b, 5], "{name}");
                assert!(out.sentiment.all_finite() && out.emotion.all_finite());
            }
        }
    }

    #[test]
    fn eval_is_pure_and_repeatable() {
        for name in REGISTERED_MODELS {
            let m = build_model::<f32>(&toy_config(name), 5).unwrap();
            let before = m.clone();
            let a = m.predict_logits(&toy_batch()).unwrap();
            let b = m.predict_logits(&toy_batch()).unwrap();
            assert_eq!(a, b);
            assert_eq!(m, before);
        }
    }

    #[test]
    fn heads_are_independent() {
        for name in REGISTERED_MODELS {
            let m = build_model::<f64>(&toy_config(name), 6).unwrap();
            let base = m.predict_logits(&toy_batch()).unwrap();
            let mut ms = m.clone();
            ms.param_mut("head_sent.weight").unwrap().data_mut()[0] += 0.5;
            ms.param_mut("head_sent.bias").unwrap().data_mut()[0] += 0.5;
            let s = ms.predict_logits(&toy_batch()).unwrap();
            assert_ne!(s.sentiment, base.sentiment);
            assert_eq!(s.emotion, base.emotion);
            let mut me = m.clone();
            me.param_mut("head_emo.weight").unwrap().data_mut()[0] += 0.5;
            me.param_mut("head_emo.bias").unwrap().data_mut()[0] += 0.5;
            let e = me.predict_logits(&toy_batch()).unwrap();
            assert_eq!(e.sentiment, base.sentiment);
            assert_ne!(e.emotion, base.emotion);
        }
    }

    #[test]
    fn recurrent_models_ignore_padding() {
        for name in ["baseline", "improved", "large"] {
            let m = build_model::<f32>(&toy_config(name), 7).unwrap();
            let short = Batch::from_sequences(&[EncodedSequence { ids: vec![4, 5, 6, 0], length: 3 }]).unwrap();
            let long = Batch::from_sequences(&[EncodedSequence {
                ids: vec![4, 5, 6, 0, 0, 0, 0, 0],
                length: 3,
            }])
            .unwrap();
            assert_eq!(m.predict_logits(&short).unwrap(), m.predict_logits(&long).unwrap());
        }
    }

    #[test]
    fn ragged_and_bad_ids_rejected() {
        let seqs = [
            EncodedSequence { ids: vec![1, 2], length: 2 },
            EncodedSequence { ids: vec![1], length: 1 },
        ];
        assert!(matches!(Batch::from_sequences(&seqs), Err(NeuralError::RaggedBatch(2, 1))));
        let m = build_model::<f32>(&toy_config("baseline"), 0).unwrap();
        let b = Batch::from_sequences(&[EncodedSequence { ids: vec![10, 0], length: 1 }]).unwrap();
        assert!(matches!(
            m.predict_logits(&b),
            Err(NeuralError::Autodiff(AutodiffError::IndexOutOfRange { id: 10, rows: 10 }))
        ));
        let z = Batch::from_sequences(&[EncodedSequence { ids: vec![0, 0], length: 0 }]).unwrap();
        assert!(matches!(
            m.predict_logits(&z),
            Err(NeuralError::Autodiff(AutodiffError::ZeroLength { row: 0 }))
        ));
    }

    #[test]
    fn running_stats_update_rule() {
        let mut m = build_model::<f64>(&toy_config("improved"), 0).unwrap();
        let stats = BatchStats {
            mean: vec![1.0; 6],
            var: vec![3.0; 6],
        };
        m.update_running_stats(&stats);
        assert!(m.buffers()["bn.running_mean"].data().iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert!(m.buffers()["bn.running_var"].data().iter().all(|&v| (v - 1.2).abs() < 1e-12));
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar re-implementation of one LSTM direction over `xs`.
    fn oracle_lstm(m: &Model<f64>, prefix: &str, xs: &[Vec<f64>]) -> Vec<f64> {
        let h_dim = m.config().hidden_dim;
        let get = |s: &str| m.param(&format!("{prefix}.{s}")).unwrap();
        let (wi, wh, bi, bh) = (get("w_ih"), get("w_hh"), get("b_ih"), get("b_hh"));
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        for x in xs {
            let mut a = vec![0.0; 4 * h_dim];
            for (g, slot) in a.iter_mut().enumerate() {
                let mut s = bi.data()[g] + bh.data()[g];
                for (j, xj) in x.iter().enumerate() {
                    s += wi.row(g)[j] * xj;
                }
                for (j, hj) in h.iter().enumerate() {
                    s += wh.row(g)[j] * hj;
                }
                *slot = s;
            }
            for j in 0..h_dim {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h_dim + j]);
                let g = a[2 * h_dim + j].tanh();
                let o = sigmoid(a[3 * h_dim + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
        }
        h
    }

    fn oracle_dense(m: &Model<f64>, name: &str, x: &[f64]) -> Vec<f64> {
        let w = m.param(&format!("{name}.weight")).unwrap();
        let b = m.param(&format!("{name}.bias")).unwrap();
        (0..w.rows())
            .map(|o| b.data()[o] + w.row(o).iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    #[test]
    fn baseline_matches_scalar_oracle() {
        let cfg = ModelConfig {
            max_len: 4,
            ..toy_config("baseline")
        };
        let mut m = build_model::<f64>(&cfg, 11).unwrap();
        // hand-set parameters: a deterministic sine pattern per tensor
        for (k, (_, t)) in m.params_mut().iter_mut().enumerate() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = 0.5 * ((k * 31 + i * 7) as f64 * 0.37).sin();
            }
        }
        let seq = EncodedSequence { ids: vec![3, 7, 2, 0], length: 3 };
        let got = m.predict_logits(&Batch::from_sequences(&[seq.clone()]).unwrap()).unwrap();

        let table = m.param("embedding.weight").unwrap();
        let xs: Vec<Vec<f64>> = seq.ids[..seq.length].iter().map(|&i| table.row(i).to_vec()).collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut feat = oracle_lstm(&m, "lstm.l0.fwd", &xs);
        feat.extend(oracle_lstm(&m, "lstm.l0.bwd", &rev));
        let h: Vec<f64> = oracle_dense(&m, "shared", &feat).into_iter().map(|v| v.max(0.0)).collect();
        let sent = oracle_dense(&m, "head_sent", &h);
        let emo = oracle_dense(&m, "head_emo", &h);
        for (a, b) in got.sentiment.data().iter().zip(&sent) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        for (a, b) in got.emotion.data().iter().zip(&emo) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn textcnn_constant_input_closed_form() {
        let cfg = toy_config("textcnn");
        let mut m = build_model::<f64>(&cfg, 2).unwrap();
        for row in 0..10 {
            let t = m.param_mut("embedding.weight").unwrap();
            t.data_mut()[row * 3..row * 3 + 3].iter_mut().for_each(|v| *v = 0.5);
        }
        for k in [2, 3, 4] {
            m.param_mut(&format!("conv.k{k}.bias")).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let seq = EncodedSequence { ids: vec![1, 2, 3, 4, 5], length: 5 };
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let emb = tape.embedding(vars["embedding.weight"], &seq.ids, 1).unwrap();
        let kernels: Vec<(Var, Var)> = [2, 3, 4]
            .iter()
            .map(|k| (vars[&format!("conv.k{k}.weight")], vars[&format!("conv.k{k}.bias")]))
            .collect();
        let pooled = tape.conv1d_bank(emb, &kernels).unwrap();
        let mut expected = Vec::new();
        for k in [2, 3, 4] {
            let w = m.param(&format!("conv.k{k}.weight")).unwrap();
            for map in 0..2 {
                expected.push((w.row(map).iter().sum::<f64>() * 0.5).max(0.0));
            }
        }
        for (a, b) in tape.value(pooled).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcheck_every_architecture() {
        let batch = toy_batch();
        for name in REGISTERED_MODELS {
            let m = build_model::<f64>(&toy_config(name), 12).unwrap();
            let names: Vec<String> = m.params().keys().cloned().collect();
            let params: Vec<(String, Tensor<f64>)> =
                m.params().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            let report = gradcheck(&params, GradcheckOptions::default(), |tape, vars| {
                let bound: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = m
                    .forward(tape, &bound, &batch, true, &mut rng)
                    .map_err(|e| match e {
                        NeuralError::Autodiff(e) => e,
                        other => panic!("{other}"),
                    })?;
                let s = tape.weighted_ce(out.sentiment, &[0, 1, 1], &[1.0, 2.0])?;
                let e = tape.weighted_ce(out.emotion, &[4, 0, 2], &[1.0, 1.5, 0.5, 2.0, 1.0])?;
                tape.add(s, e)
            })
            .unwrap();
            assert!(report.passes(1e-4), "{name}: {:?}", report.per_param);
        }
    }

    #[test]
    fn cast_round_trip_is_exact_for_f32_values() {
        let m = build_model::<f32>(&toy_config("large"), 9).unwrap();
        assert_eq!(m.cast::<f64>().cast::<f32>(), m);
    }
}
