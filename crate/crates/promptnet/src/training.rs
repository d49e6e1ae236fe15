//! Losses, adaptive weighting, optimizer, schedule and the two-stage
//! training protocol.
//!
//! Stage one trains the template on the privileged channels with plain
//! cross-entropy plus L2 weight decay. Stage two trains the student on the
//! non-enhanced channels; depending on the prompt mode the objective is
//!
//! - `off`:      class loss only,
//! - `fixed`:    class loss + fixed_weight * mean(per-sample prompt loss),
//! - `adaptive`: class loss + mean(w_i * prompt_loss_i),
//!
//! where the per-sample prompt loss is the mean absolute difference between
//! the frozen teacher features and the student's complementary features, and
//! w_i is the L1 gap between teacher and student probability rows. The
//! weights are coefficients, not optimized quantities: both probability
//! inputs are stop-gradient, so a large gap strengthens prompting on that
//! sample without creating an incentive to imitate teacher errors.
//!
//! Everything is single-threaded and fully determined by (dataset, seeds):
//! each epoch reshuffles with a stream derived from (train seed, epoch).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    self, EncoderConfig, ModelError, PromptNet, PromptNetGraph, TemplateModel,
};
use crate::ops::OpError;
use crate::seeding::derive_seed;
use crate::synthdata::{batch_ce, batch_full_sequence, batch_ne, batch_one_hot, Sample};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Prompt-loss regime of stage two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// No prompt loss: the objective degenerates to plain classification.
    Off,
    /// Constant prompt-loss weight.
    Fixed,
    /// Per-sample weight from the teacher-student prediction gap.
    Adaptive,
}

impl PromptMode {
    pub fn name(&self) -> &'static str {
        match self {
            PromptMode::Off => "off",
            PromptMode::Fixed => "fixed",
            PromptMode::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(PromptMode::Off),
            "fixed" => Ok(PromptMode::Fixed),
            "adaptive" => Ok(PromptMode::Adaptive),
            other => Err(format!("unknown prompt mode `{other}` (off|fixed|adaptive)")),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs at which the learning rate is multiplied by the decay factor.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// L2 weight decay constant (the lambda of the regularized objective).
    pub weight_decay: f64,
    pub prompt_mode: PromptMode,
    /// Prompt-loss weight when `prompt_mode` is `fixed`.
    pub fixed_prompt_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale schedule: 30 epochs with decays at 9 and 18, scaled from
    /// the 100-epoch schedule with decays at 30 and 60.
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            base_lr: 2e-3,
            lr_decay_epochs: vec![9, 18],
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            prompt_mode: PromptMode::Adaptive,
            fixed_prompt_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: 100 epochs at learning rate 1e-5, decaying
    /// by a factor of 10 at epochs 30 and 60, batch size 4.
    pub fn paper_scale() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            base_lr: 1e-5,
            lr_decay_epochs: vec![30, 60],
            lr_decay_factor: 0.1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig { what: "epochs", value: 0.0 });
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig { what: "batch_size", value: 0.0 });
        }
        if !(self.base_lr > 0.0) {
            return Err(TrainError::BadConfig { what: "base_lr", value: self.base_lr });
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(TrainError::BadConfig {
                what: "lr_decay_factor",
                value: self.lr_decay_factor,
            });
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig {
                what: "weight_decay",
                value: self.weight_decay,
            });
        }
        Ok(())
    }
}

/// Errors raised by optimizer steps and the training loops.
#[derive(Debug)]
pub enum TrainError {
    BadConfig { what: &'static str, value: f64 },
    EmptyTrainingSet,
    /// A non-off prompt mode needs a trained template.
    TemplateRequired,
    /// Template and student must agree on the latent feature width.
    FeatureWidthMismatch { template: usize, student: usize },
    /// Probability rows fed to the adaptive weight must sum to one.
    NotAProbabilityRow { row: usize, sum: f64 },
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    NonFiniteGradient { param: String },
    Model(ModelError),
    Op(OpError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::BadConfig { what, value } => {
                write!(f, "train config field {what} is invalid ({value})")
            }
            TrainError::EmptyTrainingSet => write!(f, "training set is empty"),
            TrainError::TemplateRequired => {
                write!(f, "prompt modes fixed/adaptive require a template checkpoint")
            }
            TrainError::FeatureWidthMismatch { template, student } => write!(
                f,
                "template feature width {template} does not match student width {student}"
            ),
            TrainError::NotAProbabilityRow { row, sum } => {
                write!(f, "probability row {row} sums to {sum}, not 1")
            }
            TrainError::NonFiniteLoss { epoch, step, value } => {
                write!(f, "non-finite loss {value} at epoch {epoch}, step {step}")
            }
            TrainError::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Op(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<OpError> for TrainError {
    fn from(e: OpError) -> Self {
        TrainError::Op(e)
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Piecewise-constant schedule: base_lr times factor^(number of decay
/// epochs <= epoch).
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let decays = config.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
    config.base_lr * config.lr_decay_factor.powi(decays as i32)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam moment accumulators, aligned with a model's canonical parameter
/// order.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &[(String, &Tensor)]) -> Self {
        OptimizerState {
            first_moment: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            second_moment: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Adam hyperparameters; weight decay is classic L2, added to the gradient
/// as lambda * parameter before the moment updates.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// One bias-corrected Adam update over aligned (parameter, gradient) pairs.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.first_moment.len(), "optimizer state mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    for (i, (name, param)) in params.iter_mut().enumerate() {
        if !grads[i].all_finite() {
            return Err(TrainError::NonFiniteGradient { param: name.clone() });
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let p = param.data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            let grad = g[j] + hyper.weight_decay * p[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * grad;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * grad * grad;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Losses and weights
// ---------------------------------------------------------------------------

/// The grading error l: softmax cross-entropy against one-hot labels.
/// Returns the scalar loss node and the (stop-gradient) probability rows.
pub fn classification_loss(
    tape: &mut Tape,
    logits: Var,
    one_hot_labels: &Tensor,
) -> Result<(Var, Tensor), OpError> {
    tape.softmax_cross_entropy(logits, one_hot_labels)
}

/// Per-sample feature prompt loss: mean absolute difference between the
/// teacher features and the student's complementary features. The teacher
/// side is detached, so gradient flows only into the complementary branch.
pub fn prompt_loss(tape: &mut Tape, z_cef: Var, z_cf: Var) -> Result<Var, OpError> {
    let frozen = tape.detach(z_cef);
    tape.row_l1_mean(frozen, z_cf)
}

/// Per-sample performance gap: mean absolute difference of the probability
/// rows, in [0, 1]. Both inputs are plain values (stop-gradient); the result
/// is a coefficient vector, not an optimized quantity.
pub fn adaptive_weight(
    teacher_probs: &Tensor,
    student_probs: &Tensor,
) -> Result<Tensor, TrainError> {
    if teacher_probs.shape() != student_probs.shape() {
        return Err(TrainError::Op(OpError::AxisMismatch {
            op: "adaptive_weight",
            axis: "shape",
            left: teacher_probs.numel(),
            right: student_probs.numel(),
        }));
    }
    let (n, k) = teacher_probs
        .dims2()
        .map_err(|_| TrainError::Op(OpError::RankMismatch {
            op: "adaptive_weight",
            expected: 2,
            got: teacher_probs.rank(),
        }))?;
    for (row, probs) in [teacher_probs, student_probs].into_iter().enumerate() {
        for r in 0..n {
            let sum: f64 = probs.data()[r * k..(r + 1) * k].iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                let _ = row;
                return Err(TrainError::NotAProbabilityRow { row: r, sum });
            }
        }
    }
    let mut out = Tensor::zeros(&[n]);
    let t = teacher_probs.data();
    let s = student_probs.data();
    for r in 0..n {
        let mut sum = 0.0;
        for j in 0..k {
            sum += (t[r * k + j] - s[r * k + j]).abs();
        }
        out.data_mut()[r] = sum / k as f64;
    }
    Ok(out)
}

/// Assembles the stage-two objective for the chosen prompt mode.
///
/// `prompt_losses` is the per-sample prompt-loss node (required unless the
/// mode is `off`); `weights` is the adaptive coefficient vector (required
/// for `adaptive`). In `off` mode the returned node IS the class-loss node,
/// so the degeneracy is bitwise.
pub fn stage2_objective(
    tape: &mut Tape,
    class_loss: Var,
    prompt_losses: Option<Var>,
    weights: Option<&Tensor>,
    mode: PromptMode,
    fixed_weight: f64,
) -> Result<Var, TrainError> {
    match mode {
        PromptMode::Off => Ok(class_loss),
        PromptMode::Fixed => {
            let prompt = prompt_losses.ok_or(TrainError::TemplateRequired)?;
            let mean = tape.mean(prompt);
            let scaled = tape.scale(mean, fixed_weight);
            Ok(tape.add(class_loss, scaled)?)
        }
        PromptMode::Adaptive => {
            let prompt = prompt_losses.ok_or(TrainError::TemplateRequired)?;
            let w = weights.ok_or(TrainError::TemplateRequired)?;
            let weighted = tape.scale_rows(prompt, w)?;
            let mean = tape.mean(weighted);
            Ok(tape.add(class_loss, mean)?)
        }
    }
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// One line of the per-epoch training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_class_loss: f64,
    pub mean_prompt_loss: f64,
    pub mean_adaptive_weight: f64,
}

impl EpochLog {
    /// The plain-text log line emitted once per epoch.
    pub fn render(&self) -> String {
        format!(
            "epoch {:>3}  lr {:.3e}  class_loss {:.6}  prompt_loss {:.6}  w_adaptive {:.6}",
            self.epoch,
            self.lr,
            self.mean_class_loss,
            self.mean_prompt_loss,
            self.mean_adaptive_weight
        )
    }
}

/// Per-step record of stage-two training; probabilities are of the positive
/// class (label 1).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTrace {
    pub epoch: usize,
    pub step: usize,
    /// Positions of the batch members in the training set.
    pub sample_indices: Vec<usize>,
    pub class_losses: Vec<f64>,
    pub prompt_losses: Vec<f64>,
    pub adaptive_weights: Vec<f64>,
    pub teacher_probs: Vec<f64>,
    pub student_probs: Vec<f64>,
}

impl BatchTrace {
    pub fn csv_header() -> &'static str {
        "epoch,step,sample,class_loss,prompt_loss,w_adaptive,teacher_p1,student_p1"
    }

    /// One CSV row per batch member.
    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.sample_indices.len())
            .map(|i| {
                format!(
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    self.epoch,
                    self.step,
                    self.sample_indices[i],
                    self.class_losses[i],
                    self.prompt_losses[i],
                    self.adaptive_weights[i],
                    self.teacher_probs[i],
                    self.student_probs[i]
                )
            })
            .collect()
    }
}

fn shuffled_indices(n: usize, train_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_seed, epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn per_sample_class_losses(probs: &Tensor, labels: &Tensor) -> Vec<f64> {
    let (n, k) = probs.dims2().expect("probability rows");
    (0..n)
        .map(|r| {
            let mut loss = 0.0;
            for j in 0..k {
                if labels.data()[r * k + j] == 1.0 {
                    loss = -probs.data()[r * k + j].ln();
                }
            }
            loss
        })
        .collect()
}

fn positive_probs(probs: &Tensor) -> Vec<f64> {
    let (n, k) = probs.dims2().expect("probability rows");
    (0..n).map(|r| probs.data()[r * k + 1]).collect()
}

/// How the template reads a sample, decided by its configured channel count.
fn template_batch(config: &EncoderConfig, batch: &[&Sample]) -> Result<Tensor, TrainError> {
    match config.in_channels {
        1 => Ok(batch_ce(batch)),
        4 => Ok(batch_full_sequence(batch)),
        other => Err(TrainError::Model(ModelError::ChannelMismatch {
            expected: 1,
            got: other,
        })),
    }
}

/// Stage one: trains the template on its privileged input channels,
/// minimizing cross-entropy plus L2 weight decay.
pub fn train_template(
    samples: &[Sample],
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
) -> Result<(TemplateModel, Vec<EpochLog>), TrainError> {
    train_config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model = TemplateModel::new(encoder_config.clone(), train_config.seed)?;
    let mut opt = OptimizerState::new(&model.params());
    let hyper = AdamHyper { weight_decay: train_config.weight_decay, ..AdamHyper::default() };
    let mut logs = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let lr = lr_at(epoch, train_config);
        let order = shuffled_indices(samples.len(), train_config.seed, epoch);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let x_value = template_batch(encoder_config, &batch)?;
            let labels = batch_one_hot(&batch);

            let mut tape = Tape::new();
            let x = tape.leaf(x_value);
            let graph = model::template_graph(&mut tape, &model, x)?;
            let (loss, _probs) = classification_loss(&mut tape, graph.logits, &labels)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, value: loss_value });
            }
            loss_sum += loss_value * batch.len() as f64;

            let grads_by_var = tape.backward(loss)?;
            let grads: Vec<Tensor> = graph
                .param_vars
                .iter()
                .map(|&v| grads_by_var.grad_or_zeros(v, tape.value(v).shape()))
                .collect();
            let mut params = model.params_mut();
            adam_step(&mut params, &grads, &mut opt, lr, &hyper)?;
        }
        logs.push(EpochLog {
            epoch,
            lr,
            mean_class_loss: loss_sum / samples.len() as f64,
            mean_prompt_loss: 0.0,
            mean_adaptive_weight: 0.0,
        });
    }
    Ok((model, logs))
}

/// Stage two: trains the student on NE channels. With a non-off prompt mode
/// the frozen template is run on the CE channels of the same batch (values
/// only, no gradients) and its features prompt the complementary branch.
pub fn train_promptnet(
    samples: &[Sample],
    template: Option<&TemplateModel>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
) -> Result<(PromptNet, Vec<EpochLog>, Vec<BatchTrace>), TrainError> {
    train_config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mode = train_config.prompt_mode;
    let teacher = match (mode, template) {
        (PromptMode::Off, _) => None,
        (_, Some(t)) => {
            if t.config.feature_dim != encoder_config.feature_dim {
                return Err(TrainError::FeatureWidthMismatch {
                    template: t.config.feature_dim,
                    student: encoder_config.feature_dim,
                });
            }
            Some(t)
        }
        (_, None) => return Err(TrainError::TemplateRequired),
    };

    let mut model = PromptNet::new(encoder_config.clone(), train_config.seed)?;
    let mut opt = OptimizerState::new(&model.params());
    let hyper = AdamHyper { weight_decay: train_config.weight_decay, ..AdamHyper::default() };
    let mut logs = Vec::with_capacity(train_config.epochs);
    let mut traces = Vec::new();

    for epoch in 0..train_config.epochs {
        let lr = lr_at(epoch, train_config);
        let order = shuffled_indices(samples.len(), train_config.seed, epoch);
        let mut class_sum = 0.0;
        let mut prompt_sum = 0.0;
        let mut weight_sum = 0.0;
        for (step, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let labels = batch_one_hot(&batch);

            // Teacher values are recomputed from the frozen checkpoint each
            // step; nothing of the teacher is recorded on the student tape.
            let teacher_out = match teacher {
                Some(t) => Some(model::template_forward(t, &template_batch(&t.config, &batch)?)?),
                None => None,
            };

            let mut tape = Tape::new();
            let x = tape.leaf(batch_ne(&batch));
            let graph: PromptNetGraph = model::promptnet_graph(&mut tape, &model, x)?;
            let (class_loss, student_probs) =
                classification_loss(&mut tape, graph.logits, &labels)?;

            let mut prompt_values = vec![0.0; batch.len()];
            let mut weight_values = vec![0.0; batch.len()];
            let mut teacher_p1 = vec![0.0; batch.len()];
            let objective = match (&teacher_out, mode) {
                (None, _) | (_, PromptMode::Off) => {
                    stage2_objective(&mut tape, class_loss, None, None, PromptMode::Off, 0.0)?
                }
                (Some(t_out), PromptMode::Fixed) => {
                    let z_cef = tape.leaf(t_out.features.clone());
                    let prompt = prompt_loss(&mut tape, z_cef, graph.z_cf)?;
                    prompt_values = tape.value(prompt).data().to_vec();
                    teacher_p1 = positive_probs(&t_out.probs);
                    stage2_objective(
                        &mut tape,
                        class_loss,
                        Some(prompt),
                        None,
                        PromptMode::Fixed,
                        train_config.fixed_prompt_weight,
                    )?
                }
                (Some(t_out), PromptMode::Adaptive) => {
                    let z_cef = tape.leaf(t_out.features.clone());
                    let prompt = prompt_loss(&mut tape, z_cef, graph.z_cf)?;
                    let weights = adaptive_weight(&t_out.probs, &student_probs)?;
                    prompt_values = tape.value(prompt).data().to_vec();
                    weight_values = weights.data().to_vec();
                    teacher_p1 = positive_probs(&t_out.probs);
                    stage2_objective(
                        &mut tape,
                        class_loss,
                        Some(prompt),
                        Some(&weights),
                        PromptMode::Adaptive,
                        0.0,
                    )?
                }
            };

            let objective_value = tape.value(objective).item();
            if !objective_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, value: objective_value });
            }
            class_sum += tape.value(class_loss).item() * batch.len() as f64;
            prompt_sum += prompt_values.iter().sum::<f64>();
            weight_sum += weight_values.iter().sum::<f64>();

            traces.push(BatchTrace {
                epoch,
                step,
                sample_indices: chunk.to_vec(),
                class_losses: per_sample_class_losses(&student_probs, &labels),
                prompt_losses: prompt_values,
                adaptive_weights: weight_values,
                teacher_probs: teacher_p1,
                student_probs: positive_probs(&student_probs),
            });

            let grads_by_var = tape.backward(objective)?;
            let grads: Vec<Tensor> = graph
                .param_vars
                .iter()
                .map(|&v| grads_by_var.grad_or_zeros(v, tape.value(v).shape()))
                .collect();
            let mut params = model.params_mut();
            adam_step(&mut params, &grads, &mut opt, lr, &hyper)?;
        }
        let n = samples.len() as f64;
        logs.push(EpochLog {
            epoch,
            lr,
            mean_class_loss: class_sum / n,
            mean_prompt_loss: prompt_sum / n,
            mean_adaptive_weight: weight_sum / n,
        });
    }
    Ok((model, logs, traces))
}
