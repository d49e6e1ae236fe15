//! The template (teacher) network and the multi-branch PromptNet student.
//!
//! Both models share one encoder architecture: a stem convolution with
//! group norm and GELU, three residual stages (a stride-2 downsampling
//! convolution followed by one pre-skip residual block), then global average
//! pooling and a linear map to the latent feature vector. The classifier is
//! three fully connected layers with GELU between them.
//!
//! The template encodes its privileged input into features `z_cef`; the
//! student runs two branches over the same non-enhanced input, producing
//! non-enhanced features `z_nef` and complementary features `z_cf` whose
//! width matches the template's so the feature prompt loss is well formed.
//! The fused `[z_nef | z_cf]` concatenation feeds the classifier.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError};
use crate::ops::{self, OpError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Binary grading: LGG analog vs HGG analog.
pub const NUM_CLASSES: usize = 2;
/// Epsilon of every group normalization in the crate.
pub const GROUP_NORM_EPS: f64 = 1e-5;
/// Hidden widths of the three-layer classifier.
pub const CLASSIFIER_HIDDEN: [usize; 2] = [64, 16];
/// Smallest spatial extent that still halves through all three stages.
pub const MIN_VOLUME_EXTENT: usize = 8;

/// Magic string of checkpoint files.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PNETCKP\x01";
/// Checkpoint format version written by this build.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture of one encoder branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    /// Group count of every group normalization.
    pub groups: usize,
    /// Width d of the latent feature vector.
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            stem_channels: 8,
            stage_channels: [8, 16, 32],
            groups: 4,
            feature_dim: 32,
        }
    }
}

impl EncoderConfig {
    /// The desk-scale teacher: same trunk, contrast-enhanced input only.
    pub fn template_default() -> Self {
        EncoderConfig { in_channels: 1, ..EncoderConfig::default() }
    }

    /// The full-sequence teacher variant (all four channels).
    pub fn template_full_sequence() -> Self {
        EncoderConfig { in_channels: 4, ..EncoderConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut check = |what: &'static str, v: usize| {
            if v == 0 {
                Err(ModelError::BadConfig { what, value: v })
            } else {
                Ok(())
            }
        };
        check("in_channels", self.in_channels)?;
        check("stem_channels", self.stem_channels)?;
        check("groups", self.groups)?;
        check("feature_dim", self.feature_dim)?;
        for &c in &self.stage_channels {
            check("stage_channels", c)?;
        }
        // Group norm touches the stem and both block convolutions per stage.
        for c in std::iter::once(self.stem_channels).chain(self.stage_channels) {
            if c % self.groups != 0 {
                return Err(ModelError::GroupsDontDivide { channels: c, groups: self.groups });
            }
        }
        Ok(())
    }
}

/// Errors from model construction, forward passes and checkpoint I/O.
#[derive(Debug)]
pub enum ModelError {
    BadConfig { what: &'static str, value: usize },
    GroupsDontDivide { channels: usize, groups: usize },
    /// Input volume cannot halve through three stride-2 stages.
    VolumeTooSmall { extent: usize, min: usize },
    /// Input channel count does not match the model's configuration.
    ChannelMismatch { expected: usize, got: usize },
    Op(OpError),
    Container(ContainerError),
    /// Checkpoint parses but does not describe a loadable model.
    IncompatibleCheckpoint(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::BadConfig { what, value } => {
                write!(f, "config field {what} must be positive, got {value}")
            }
            ModelError::GroupsDontDivide { channels, groups } => {
                write!(f, "group count {groups} does not divide channel count {channels}")
            }
            ModelError::VolumeTooSmall { extent, min } => write!(
                f,
                "volume extent {extent} cannot survive three stride-2 stages; \
                 the minimum extent is {min}"
            ),
            ModelError::ChannelMismatch { expected, got } => {
                write!(f, "input has {got} channels but the model expects {expected}")
            }
            ModelError::Op(e) => write!(f, "layer error: {e}"),
            ModelError::Container(e) => write!(f, "checkpoint file: {e}"),
            ModelError::IncompatibleCheckpoint(msg) => {
                write!(f, "incompatible checkpoint: {msg}")
            }
        }
    }
}

impl std::error::Error for ModelError {}

impl From<OpError> for ModelError {
    fn from(e: OpError) -> Self {
        ModelError::Op(e)
    }
}

impl From<ContainerError> for ModelError {
    fn from(e: ContainerError) -> Self {
        ModelError::Container(e)
    }
}

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One residual stage: stride-2 downsampling convolution plus one
/// conv-norm-gelu-conv-norm block with a skip connection.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub down: ConvParams,
    pub conv1: ConvParams,
    pub norm1: NormParams,
    pub conv2: ConvParams,
    pub norm2: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub stem_conv: ConvParams,
    pub stem_norm: NormParams,
    pub stages: Vec<StageParams>,
    /// Linear map from the pooled last-stage channels to feature_dim.
    pub head: LinearParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
    pub fc3: LinearParams,
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn init_conv(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, k: usize) -> ConvParams {
    ConvParams {
        weight: fan_in_uniform(rng, &[out_ch, in_ch, k, k, k], in_ch * k * k * k),
        bias: Tensor::zeros(&[out_ch]),
    }
}

fn init_norm(channels: usize) -> NormParams {
    NormParams { gamma: Tensor::filled(&[channels], 1.0), beta: Tensor::zeros(&[channels]) }
}

fn init_linear(rng: &mut ChaCha8Rng, in_f: usize, out_f: usize) -> LinearParams {
    LinearParams {
        weight: fan_in_uniform(rng, &[in_f, out_f], in_f),
        bias: Tensor::zeros(&[out_f]),
    }
}

impl EncoderParams {
    fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut prev = config.stem_channels;
        for &ch in &config.stage_channels {
            stages.push(StageParams {
                down: init_conv(rng, ch, prev, 3),
                conv1: init_conv(rng, ch, ch, 3),
                norm1: init_norm(ch),
                conv2: init_conv(rng, ch, ch, 3),
                norm2: init_norm(ch),
            });
            prev = ch;
        }
        EncoderParams {
            stem_conv: init_conv(rng, config.stem_channels, config.in_channels, 3),
            stem_norm: init_norm(config.stem_channels),
            stages,
            head: init_linear(rng, config.stage_channels[2], config.feature_dim),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.stem.conv.weight"), &self.stem_conv.weight));
        out.push((format!("{prefix}.stem.conv.bias"), &self.stem_conv.bias));
        out.push((format!("{prefix}.stem.norm.gamma"), &self.stem_norm.gamma));
        out.push((format!("{prefix}.stem.norm.beta"), &self.stem_norm.beta));
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("{prefix}.stage{i}.down.weight"), &s.down.weight));
            out.push((format!("{prefix}.stage{i}.down.bias"), &s.down.bias));
            out.push((format!("{prefix}.stage{i}.conv1.weight"), &s.conv1.weight));
            out.push((format!("{prefix}.stage{i}.conv1.bias"), &s.conv1.bias));
            out.push((format!("{prefix}.stage{i}.norm1.gamma"), &s.norm1.gamma));
            out.push((format!("{prefix}.stage{i}.norm1.beta"), &s.norm1.beta));
            out.push((format!("{prefix}.stage{i}.conv2.weight"), &s.conv2.weight));
            out.push((format!("{prefix}.stage{i}.conv2.bias"), &s.conv2.bias));
            out.push((format!("{prefix}.stage{i}.norm2.gamma"), &s.norm2.gamma));
            out.push((format!("{prefix}.stage{i}.norm2.beta"), &s.norm2.beta));
        }
        out.push((format!("{prefix}.head.weight"), &self.head.weight));
        out.push((format!("{prefix}.head.bias"), &self.head.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.stem.conv.weight"), &mut self.stem_conv.weight));
        out.push((format!("{prefix}.stem.conv.bias"), &mut self.stem_conv.bias));
        out.push((format!("{prefix}.stem.norm.gamma"), &mut self.stem_norm.gamma));
        out.push((format!("{prefix}.stem.norm.beta"), &mut self.stem_norm.beta));
        for (i, s) in self.stages.iter_mut().enumerate() {
            out.push((format!("{prefix}.stage{i}.down.weight"), &mut s.down.weight));
            out.push((format!("{prefix}.stage{i}.down.bias"), &mut s.down.bias));
            out.push((format!("{prefix}.stage{i}.conv1.weight"), &mut s.conv1.weight));
            out.push((format!("{prefix}.stage{i}.conv1.bias"), &mut s.conv1.bias));
            out.push((format!("{prefix}.stage{i}.norm1.gamma"), &mut s.norm1.gamma));
            out.push((format!("{prefix}.stage{i}.norm1.beta"), &mut s.norm1.beta));
            out.push((format!("{prefix}.stage{i}.conv2.weight"), &mut s.conv2.weight));
            out.push((format!("{prefix}.stage{i}.conv2.bias"), &mut s.conv2.bias));
            out.push((format!("{prefix}.stage{i}.norm2.gamma"), &mut s.norm2.gamma));
            out.push((format!("{prefix}.stage{i}.norm2.beta"), &mut s.norm2.beta));
        }
        out.push((format!("{prefix}.head.weight"), &mut self.head.weight));
        out.push((format!("{prefix}.head.bias"), &mut self.head.bias));
    }
}

impl ClassifierParams {
    fn init(in_features: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierParams {
            fc1: init_linear(rng, in_features, CLASSIFIER_HIDDEN[0]),
            fc2: init_linear(rng, CLASSIFIER_HIDDEN[0], CLASSIFIER_HIDDEN[1]),
            fc3: init_linear(rng, CLASSIFIER_HIDDEN[1], NUM_CLASSES),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.fc1.weight"), &self.fc1.weight));
        out.push((format!("{prefix}.fc1.bias"), &self.fc1.bias));
        out.push((format!("{prefix}.fc2.weight"), &self.fc2.weight));
        out.push((format!("{prefix}.fc2.bias"), &self.fc2.bias));
        out.push((format!("{prefix}.fc3.weight"), &self.fc3.weight));
        out.push((format!("{prefix}.fc3.bias"), &self.fc3.bias));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.fc1.weight"), &mut self.fc1.weight));
        out.push((format!("{prefix}.fc1.bias"), &mut self.fc1.bias));
        out.push((format!("{prefix}.fc2.weight"), &mut self.fc2.weight));
        out.push((format!("{prefix}.fc2.bias"), &mut self.fc2.bias));
        out.push((format!("{prefix}.fc3.weight"), &mut self.fc3.weight));
        out.push((format!("{prefix}.fc3.bias"), &mut self.fc3.bias));
    }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// The teacher: one encoder over the privileged input plus a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateModel {
    pub config: EncoderConfig,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

impl TemplateModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&config, &mut rng);
        let classifier = ClassifierParams::init(config.feature_dim, &mut rng);
        Ok(TemplateModel { config, encoder, classifier })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.encoder.visit("encoder", &mut out);
        self.classifier.visit("classifier", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.encoder.visit_mut("encoder", &mut out);
        self.classifier.visit_mut("classifier", &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// The student: two encoder branches over the non-enhanced input, fused by
/// concatenation into a shared classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptNet {
    pub config: EncoderConfig,
    pub ne_branch: EncoderParams,
    pub complementary_branch: EncoderParams,
    pub classifier: ClassifierParams,
}

impl PromptNet {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ne_branch = EncoderParams::init(&config, &mut rng);
        let complementary_branch = EncoderParams::init(&config, &mut rng);
        let classifier = ClassifierParams::init(2 * config.feature_dim, &mut rng);
        Ok(PromptNet { config, ne_branch, complementary_branch, classifier })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.ne_branch.visit("ne_branch", &mut out);
        self.complementary_branch.visit("cf_branch", &mut out);
        self.classifier.visit("classifier", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.ne_branch.visit_mut("ne_branch", &mut out);
        self.complementary_branch.visit_mut("cf_branch", &mut out);
        self.classifier.visit_mut("classifier", &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

struct EncoderVars {
    stem_conv: (Var, Var),
    stem_norm: (Var, Var),
    stages: Vec<StageVars>,
    head: (Var, Var),
}

struct StageVars {
    down: (Var, Var),
    conv1: (Var, Var),
    norm1: (Var, Var),
    conv2: (Var, Var),
    norm2: (Var, Var),
}

impl EncoderVars {
    /// Registers every encoder tensor as a tape leaf, in the same order as
    /// `EncoderParams::visit`.
    fn register(tape: &mut Tape, p: &EncoderParams) -> Self {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone());
        let stem_conv = (leaf(&p.stem_conv.weight), leaf(&p.stem_conv.bias));
        let stem_norm = (leaf(&p.stem_norm.gamma), leaf(&p.stem_norm.beta));
        let mut stages = Vec::with_capacity(p.stages.len());
        for s in &p.stages {
            stages.push(StageVars {
                down: (leaf(&s.down.weight), leaf(&s.down.bias)),
                conv1: (leaf(&s.conv1.weight), leaf(&s.conv1.bias)),
                norm1: (leaf(&s.norm1.gamma), leaf(&s.norm1.beta)),
                conv2: (leaf(&s.conv2.weight), leaf(&s.conv2.bias)),
                norm2: (leaf(&s.norm2.gamma), leaf(&s.norm2.beta)),
            });
        }
        let head = (leaf(&p.head.weight), leaf(&p.head.bias));
        EncoderVars { stem_conv, stem_norm, stages, head }
    }

    /// Canonical order, matching `EncoderParams::visit`.
    fn ordered(&self, out: &mut Vec<Var>) {
        out.extend([self.stem_conv.0, self.stem_conv.1, self.stem_norm.0, self.stem_norm.1]);
        for s in &self.stages {
            out.extend([
                s.down.0, s.down.1, s.conv1.0, s.conv1.1, s.norm1.0, s.norm1.1, s.conv2.0,
                s.conv2.1, s.norm2.0, s.norm2.1,
            ]);
        }
        out.extend([self.head.0, self.head.1]);
    }
}

struct ClassifierVars {
    fc1: (Var, Var),
    fc2: (Var, Var),
    fc3: (Var, Var),
}

impl ClassifierVars {
    fn register(tape: &mut Tape, p: &ClassifierParams) -> Self {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone());
        ClassifierVars {
            fc1: (leaf(&p.fc1.weight), leaf(&p.fc1.bias)),
            fc2: (leaf(&p.fc2.weight), leaf(&p.fc2.bias)),
            fc3: (leaf(&p.fc3.weight), leaf(&p.fc3.bias)),
        }
    }

    fn ordered(&self, out: &mut Vec<Var>) {
        out.extend([self.fc1.0, self.fc1.1, self.fc2.0, self.fc2.1, self.fc3.0, self.fc3.1]);
    }
}

fn check_input(config: &EncoderConfig, x: &Tensor) -> Result<(), ModelError> {
    let (_, c, d, h, w) = x.dims5().map_err(|_| ModelError::ChannelMismatch {
        expected: config.in_channels,
        got: 0,
    })?;
    if c != config.in_channels {
        return Err(ModelError::ChannelMismatch { expected: config.in_channels, got: c });
    }
    let min_extent = d.min(h).min(w);
    if min_extent < MIN_VOLUME_EXTENT {
        return Err(ModelError::VolumeTooSmall { extent: min_extent, min: MIN_VOLUME_EXTENT });
    }
    Ok(())
}

fn encoder_graph(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    x: Var,
) -> Result<Var, ModelError> {
    let groups = config.groups;
    let mut h = tape.conv3d(x, vars.stem_conv.0, vars.stem_conv.1, 1, 1)?;
    h = tape.group_norm(h, groups, vars.stem_norm.0, vars.stem_norm.1, GROUP_NORM_EPS)?;
    h = tape.gelu(h);
    for s in &vars.stages {
        h = tape.conv3d(h, s.down.0, s.down.1, 2, 1)?;
        let mut b = tape.conv3d(h, s.conv1.0, s.conv1.1, 1, 1)?;
        b = tape.group_norm(b, groups, s.norm1.0, s.norm1.1, GROUP_NORM_EPS)?;
        b = tape.gelu(b);
        b = tape.conv3d(b, s.conv2.0, s.conv2.1, 1, 1)?;
        b = tape.group_norm(b, groups, s.norm2.0, s.norm2.1, GROUP_NORM_EPS)?;
        let skip = tape.add(h, b)?;
        h = tape.gelu(skip);
    }
    let pooled = tape.global_avg_pool(h)?;
    Ok(tape.linear(pooled, vars.head.0, vars.head.1)?)
}

fn classifier_graph(
    tape: &mut Tape,
    vars: &ClassifierVars,
    features: Var,
) -> Result<Var, ModelError> {
    let mut h = tape.linear(features, vars.fc1.0, vars.fc1.1)?;
    h = tape.gelu(h);
    h = tape.linear(h, vars.fc2.0, vars.fc2.1)?;
    h = tape.gelu(h);
    Ok(tape.linear(h, vars.fc3.0, vars.fc3.1)?)
}

/// Tape-level template forward: registered parameter nodes (in canonical
/// order), the latent features and the classifier logits.
pub struct TemplateGraph {
    pub param_vars: Vec<Var>,
    pub features: Var,
    pub logits: Var,
}

/// Builds the template forward graph on an existing tape.
pub fn template_graph(
    tape: &mut Tape,
    model: &TemplateModel,
    x: Var,
) -> Result<TemplateGraph, ModelError> {
    check_input(&model.config, tape.value(x))?;
    let enc = EncoderVars::register(tape, &model.encoder);
    let cls = ClassifierVars::register(tape, &model.classifier);
    let features = encoder_graph(tape, &model.config, &enc, x)?;
    let logits = classifier_graph(tape, &cls, features)?;
    let mut param_vars = Vec::new();
    enc.ordered(&mut param_vars);
    cls.ordered(&mut param_vars);
    Ok(TemplateGraph { param_vars, features, logits })
}

/// Tape-level student forward: parameter nodes plus the two feature heads
/// and the classifier logits over the fused features.
pub struct PromptNetGraph {
    pub param_vars: Vec<Var>,
    pub z_ne: Var,
    pub z_cf: Var,
    pub logits: Var,
}

/// Builds the student forward graph on an existing tape; both branches
/// consume the same non-enhanced input.
pub fn promptnet_graph(
    tape: &mut Tape,
    model: &PromptNet,
    x: Var,
) -> Result<PromptNetGraph, ModelError> {
    check_input(&model.config, tape.value(x))?;
    let ne = EncoderVars::register(tape, &model.ne_branch);
    let cf = EncoderVars::register(tape, &model.complementary_branch);
    let cls = ClassifierVars::register(tape, &model.classifier);
    let z_ne = encoder_graph(tape, &model.config, &ne, x)?;
    let z_cf = encoder_graph(tape, &model.config, &cf, x)?;
    let fused = tape.concat_cols(z_ne, z_cf)?;
    let logits = classifier_graph(tape, &cls, fused)?;
    let mut param_vars = Vec::new();
    ne.ordered(&mut param_vars);
    cf.ordered(&mut param_vars);
    cls.ordered(&mut param_vars);
    Ok(PromptNetGraph { param_vars, z_ne, z_cf, logits })
}

/// Inference output of the template.
#[derive(Clone, Debug)]
pub struct TemplateOutput {
    /// z_cef, shape [N, feature_dim].
    pub features: Tensor,
    /// Probability rows, shape [N, 2].
    pub probs: Tensor,
}

/// Pure inference pass of the template on a CE batch [N, in_channels, D, H, W].
pub fn template_forward(
    model: &TemplateModel,
    x_ce: &Tensor,
) -> Result<TemplateOutput, ModelError> {
    let mut tape = Tape::new();
    let x = tape.leaf(x_ce.clone());
    let graph = template_graph(&mut tape, model, x)?;
    Ok(TemplateOutput {
        features: tape.value(graph.features).clone(),
        probs: ops::softmax_rows(tape.value(graph.logits))?,
    })
}

/// Inference output of the student.
#[derive(Clone, Debug)]
pub struct PromptNetOutput {
    /// z_nef, shape [N, feature_dim].
    pub ne_features: Tensor,
    /// z_cf, shape [N, feature_dim].
    pub complementary_features: Tensor,
    /// Probability rows, shape [N, 2].
    pub probs: Tensor,
}

/// Pure inference pass of the student on an NE batch [N, 3, D, H, W].
pub fn promptnet_forward(model: &PromptNet, x_ne: &Tensor) -> Result<PromptNetOutput, ModelError> {
    let mut tape = Tape::new();
    let x = tape.leaf(x_ne.clone());
    let graph = promptnet_graph(&mut tape, model, x)?;
    Ok(PromptNetOutput {
        ne_features: tape.value(graph.z_ne).clone(),
        complementary_features: tape.value(graph.z_cf).clone(),
        probs: ops::softmax_rows(tape.value(graph.logits))?,
    })
}

/// SHA-256 digest over all named parameters (names and little-endian
/// values), for frozen-parameter checks.
pub fn param_digest(params: &[(String, &Tensor)]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, tensor) in params {
        hasher.update(name.as_bytes());
        for v in tensor.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Either trained model, as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointedModel {
    Template(TemplateModel),
    PromptNet(PromptNet),
}

impl CheckpointedModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CheckpointedModel::Template(_) => "template",
            CheckpointedModel::PromptNet(_) => "promptnet",
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        match self {
            CheckpointedModel::Template(m) => &m.config,
            CheckpointedModel::PromptNet(m) => &m.config,
        }
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            CheckpointedModel::Template(m) => m.params(),
            CheckpointedModel::PromptNet(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            CheckpointedModel::Template(m) => m.params_mut(),
            CheckpointedModel::PromptNet(m) => m.params_mut(),
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "template" or "promptnet".
    pub stage: String,
    pub seed: u64,
    pub epochs: usize,
    /// "off", "fixed" or "adaptive"; "none" for the template stage.
    pub prompt_mode: String,
    pub final_class_loss: f64,
    pub final_prompt_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    config: EncoderConfig,
    meta: CheckpointMeta,
}

/// Writes the versioned binary checkpoint container: magic, version, header
/// TOML, then one record per named parameter (name, shape, binary64 LE data).
pub fn save_checkpoint(
    path: &Path,
    model: &CheckpointedModel,
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    let file = File::create(path).map_err(ContainerError::Io)?;
    let mut w = BufWriter::new(file);
    container::write_magic(&mut w, &CHECKPOINT_MAGIC).map_err(ContainerError::Io)?;
    container::write_u32(&mut w, CHECKPOINT_VERSION).map_err(ContainerError::Io)?;
    let header = CheckpointHeader {
        kind: model.kind_name().to_string(),
        config: model.config().clone(),
        meta: meta.clone(),
    };
    let text = toml::to_string(&header).expect("header serializes");
    container::write_text(&mut w, &text).map_err(ContainerError::Io)?;
    let params = model.params();
    container::write_u32(&mut w, params.len() as u32).map_err(ContainerError::Io)?;
    for (name, tensor) in params {
        container::write_u16(&mut w, name.len() as u16).map_err(ContainerError::Io)?;
        w.write_all(name.as_bytes()).map_err(ContainerError::Io)?;
        w.write_all(&[tensor.rank() as u8]).map_err(ContainerError::Io)?;
        for &extent in tensor.shape() {
            container::write_u32(&mut w, extent as u32).map_err(ContainerError::Io)?;
        }
        container::write_f64_slice(&mut w, tensor.data()).map_err(ContainerError::Io)?;
    }
    w.flush().map_err(ContainerError::Io)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; the load either
/// produces a complete model or fails, never a partial one.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointedModel, CheckpointMeta), ModelError> {
    let file = File::open(path).map_err(ContainerError::Io)?;
    let mut r = BufReader::new(file);
    container::expect_magic(&mut r, &CHECKPOINT_MAGIC)?;
    container::expect_version(&mut r, CHECKPOINT_VERSION)?;
    let text = container::read_text(&mut r, 1 << 20)?;
    let header: CheckpointHeader = toml::from_str(&text)
        .map_err(|e| ContainerError::Corrupt(format!("header does not parse: {e}")))?;

    let mut model = match header.kind.as_str() {
        "template" => CheckpointedModel::Template(TemplateModel::new(header.config, 0)?),
        "promptnet" => CheckpointedModel::PromptNet(PromptNet::new(header.config, 0)?),
        other => {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "unknown model kind `{other}`"
            )))
        }
    };

    let n_records = container::read_u32(&mut r)?;
    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        let name_len = container::read_u16(&mut r)?;
        let mut name_bytes = vec![0u8; name_len as usize];
        std::io::Read::read_exact(&mut r, &mut name_bytes)
            .map_err(|_| ContainerError::Corrupt("unexpected end of file".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ContainerError::Corrupt("parameter name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        std::io::Read::read_exact(&mut r, &mut rank)
            .map_err(|_| ContainerError::Corrupt("unexpected end of file".into()))?;
        if rank[0] as usize > crate::tensor::MAX_RANK {
            return Err(ContainerError::Corrupt(format!(
                "parameter `{name}` has rank {}",
                rank[0]
            ))
            .into());
        }
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(container::read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 || numel > (1 << 28) {
            return Err(ContainerError::Corrupt(format!(
                "parameter `{name}` has implausible shape {shape:?}"
            ))
            .into());
        }
        let data = container::read_f64_vec(&mut r, numel)?;
        records.push((name, shape, data));
    }
    container::expect_eof(&mut r)?;

    let mut expected = model.params_mut();
    if expected.len() != records.len() {
        return Err(ModelError::IncompatibleCheckpoint(format!(
            "expected {} parameter records, found {}",
            expected.len(),
            records.len()
        )));
    }
    for ((expect_name, slot), (name, shape, data)) in expected.iter_mut().zip(records) {
        if *expect_name != name {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "expected parameter `{expect_name}`, found `{name}`"
            )));
        }
        if slot.shape() != shape.as_slice() {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                shape,
                slot.shape()
            )));
        }
        **slot = Tensor::from_vec(&shape, data)
            .map_err(|e| ModelError::IncompatibleCheckpoint(e.to_string()))?;
    }
    Ok((model, header.meta))
}
