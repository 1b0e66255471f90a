//! Shared residual backbone with one attention branch per task.
//!
//! Each backbone stage halves the spatial size with a strided 3x3 conv and
//! adds a strided 1x1 projection shortcut. Every task owns one attention
//! block per stage: a sigmoid mask computed from the stage's shared feature
//! (and the task's feature from the previous stage) gates the shared
//! feature, and a strided 3x3 conv carries the gated result on to the next
//! stage. The gated features of all stages are pooled, concatenated and fed
//! to a small per-task classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::ModelError;
use crate::autodiff::{he_uniform, BatchStats, ParamId, ParamStore, Tape, Var};
use crate::tensor::{NdArray, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running estimates are reported back.
    Train,
    /// Running statistics in batch norm; the forward pass is a pure function.
    Eval,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Clone, Debug)]
struct LinearParams {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Stage {
    conv_a: ConvParams,
    bn_a: usize,
    conv_b: ConvParams,
    bn_b: usize,
    shortcut: ConvParams,
}

/// Parameters of one task-specific attention block.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub(crate) squeeze: ConvParams,
    pub(crate) excite: ConvParams,
    /// Carries the gated feature to the next stage; absent at the last stage.
    pub(crate) transition: Option<ConvParams>,
}

impl AttentionParams {
    pub fn excite_bias(&self) -> Option<ParamId> {
        self.excite.bias
    }

    pub fn excite_weight(&self) -> ParamId {
        self.excite.weight
    }
}

#[derive(Clone, Debug)]
struct Branch {
    attention: Vec<AttentionParams>,
    hidden: LinearParams,
    output: LinearParams,
}

/// Outputs of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// Sigmoid gate, same shape as the shared feature.
    pub mask: Var,
    /// `mask ⊙ shared`: this stage's task feature.
    pub gated: Var,
    /// Gated feature convolved and downsampled to the next stage's size.
    pub next: Option<Var>,
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// `[N, num_tasks]` logits; `sigmoid(logit)` is the positive probability.
    pub logits: Var,
    /// `masks[task][stage]`.
    pub masks: Vec<Vec<Var>>,
    /// `fused[task]`: `[N, sum(stage_channels)]`.
    pub fused: Vec<Var>,
    pub(crate) bn_stats: Vec<(usize, BatchStats)>,
}

#[derive(Clone, Debug)]
pub struct WoundModel {
    config: ModelConfig,
    store: ParamStore,
    bns: Vec<BnParams>,
    stages: Vec<Stage>,
    branches: Vec<Branch>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<ConvParams, TensorError> {
        let w = he_uniform(&[cout, cin, k, k], cin * k * k, &mut self.rng);
        let weight = self.store.register(format!("{name}.weight"), w, true)?;
        let bias = if bias {
            Some(
                self.store
                    .register(format!("{name}.bias"), NdArray::zeros([cout]), true)?,
            )
        } else {
            None
        };
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<BnParams, TensorError> {
        Ok(BnParams {
            gamma: self
                .store
                .register(format!("{name}.gamma"), NdArray::full([c], 1.0), true)?,
            beta: self.store.register(format!("{name}.beta"), NdArray::zeros([c]), true)?,
            running_mean: self
                .store
                .register(format!("{name}.running_mean"), NdArray::zeros([c]), false)?,
            running_var: self
                .store
                .register(format!("{name}.running_var"), NdArray::full([c], 1.0), false)?,
        })
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Result<LinearParams, TensorError> {
        let w = he_uniform(&[cout, cin], cin, &mut self.rng);
        Ok(LinearParams {
            weight: self.store.register(format!("{name}.weight"), w, true)?,
            bias: self
                .store
                .register(format!("{name}.bias"), NdArray::zeros([cout]), true)?,
        })
    }
}

fn conv(tape: &mut Tape, store: &ParamStore, x: Var, p: &ConvParams) -> Result<Var, TensorError> {
    let w = tape.param(store, p.weight);
    let b = p.bias.map(|b| tape.param(store, b));
    tape.conv2d(x, w, b, p.stride, p.padding)
}

/// One task-specific attention block. `prev` is the task's feature handed
/// over from the previous stage (absent at the first stage).
pub fn attention_block(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    shared: Var,
    prev: Option<Var>,
) -> Result<AttentionOutput, TensorError> {
    let input = match prev {
        Some(p) => tape.concat(&[shared, p], 1)?,
        None => shared,
    };
    let squeezed = conv(tape, store, input, &params.squeeze)?;
    let squeezed = tape.relu(squeezed)?;
    let excited = conv(tape, store, squeezed, &params.excite)?;
    let mask = tape.sigmoid(excited)?;
    let gated = tape.mul(mask, shared)?;
    let next = match &params.transition {
        Some(t) => {
            let y = conv(tape, store, gated, t)?;
            Some(tape.relu(y)?)
        }
        None => None,
    };
    Ok(AttentionOutput { mask, gated, next })
}

/// Global-average-pools each per-stage feature map and concatenates the
/// results into one `[N, sum(C)]` feature vector.
pub fn fuse_levels(tape: &mut Tape, features: &[Var]) -> Result<Var, TensorError> {
    let batch = features
        .first()
        .map(|&f| tape.value(f).shape()[0])
        .ok_or_else(|| TensorError::Contract("fuse_levels needs at least one feature map".into()))?;
    let mut pooled = Vec::with_capacity(features.len());
    for &f in features {
        let n = tape.value(f).shape().first().copied().unwrap_or(0);
        if n != batch {
            return Err(TensorError::shape(
                "fuse_levels",
                format!("batch size {batch}"),
                tape.value(f).shape(),
            ));
        }
        pooled.push(tape.global_avg_pool(f)?);
    }
    tape.concat(&pooled, 1)
}

impl WoundModel {
    /// Builds a freshly initialised model (He-uniform weights, zero biases).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut bns = Vec::new();
        let mut stages = Vec::new();
        let mut cin = 3;
        for (s, &c) in config.stage_channels.iter().enumerate() {
            let p = format!("backbone.stage{s}");
            let conv_a = b.conv(&format!("{p}.conv_a"), cin, c, 3, 2, false)?;
            bns.push(b.bn(&format!("{p}.bn_a"), c)?);
            let conv_b = b.conv(&format!("{p}.conv_b"), c, c, 3, 1, false)?;
            bns.push(b.bn(&format!("{p}.bn_b"), c)?);
            let shortcut = b.conv(&format!("{p}.shortcut"), cin, c, 1, 2, true)?;
            stages.push(Stage {
                conv_a,
                bn_a: bns.len() - 2,
                conv_b,
                bn_b: bns.len() - 1,
                shortcut,
            });
            cin = c;
        }
        let mut branches = Vec::new();
        let last = config.stage_channels.len() - 1;
        for task in &config.task_names {
            let mut attention = Vec::new();
            for (s, &c) in config.stage_channels.iter().enumerate() {
                let p = format!("branch.{task}.attention{s}");
                let mask_in = if s == 0 { c } else { 2 * c };
                let hidden = config.attention_hidden(c);
                let squeeze = b.conv(&format!("{p}.squeeze"), mask_in, hidden, 1, 1, true)?;
                let excite = b.conv(&format!("{p}.excite"), hidden, c, 1, 1, true)?;
                let transition = if s < last {
                    Some(b.conv(&format!("{p}.transition"), c, config.stage_channels[s + 1], 3, 2, true)?)
                } else {
                    None
                };
                attention.push(AttentionParams {
                    squeeze,
                    excite,
                    transition,
                });
            }
            let hidden = b.linear(
                &format!("branch.{task}.head.hidden"),
                config.fused_width(),
                config.classifier_hidden,
            )?;
            let output = b.linear(&format!("branch.{task}.head.output"), config.classifier_hidden, 1)?;
            branches.push(Branch {
                attention,
                hidden,
                output,
            });
        }
        Ok(WoundModel {
            config,
            store,
            bns,
            stages,
            branches,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn attention_params(&self, task: usize, stage: usize) -> &AttentionParams {
        &self.branches[task].attention[stage]
    }

    /// Parameters used by exactly one task's branch.
    pub fn branch_param_ids(&self, task: usize) -> Vec<ParamId> {
        let prefix = format!("branch.{}.", self.config.task_names[task]);
        self.store
            .ids()
            .filter(|&id| self.store.get(id).name.starts_with(&prefix))
            .collect()
    }

    /// Backbone parameters shared by every task.
    pub fn shared_param_ids(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.get(id).name.starts_with("backbone."))
            .collect()
    }

    fn check_input(&self, batch: &NdArray) -> Result<(), ModelError> {
        let s = self.config.input_size;
        match *batch.shape() {
            [_, 3, h, w] if h == s && w == s => Ok(()),
            ref found => Err(ModelError::InputShape {
                expected: s,
                found: found.to_vec(),
            }),
        }
    }

    fn batch_norm(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        idx: usize,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var, TensorError> {
        let bn = &self.bns[idx];
        let gamma = tape.param(store, bn.gamma);
        let beta = tape.param(store, bn.beta);
        match mode {
            Mode::Train => {
                let (y, s) = tape.batch_norm2d_train(x, gamma, beta, self.config.bn_eps)?;
                stats.push((idx, s));
                Ok(y)
            }
            Mode::Eval => tape.batch_norm2d_eval(
                x,
                gamma,
                beta,
                store.get(bn.running_mean).value.data(),
                store.get(bn.running_var).value.data(),
                self.config.bn_eps,
            ),
        }
    }

    /// Records the full multi-task forward pass on `tape`.
    /// `batch` is `[N, 3, S, S]` with pixel values in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape, batch: &NdArray, mode: Mode) -> Result<ForwardOutput, ModelError> {
        self.check_input(batch)?;
        let x = tape.constant(batch.clone())?;
        self.forward_var(&self.store, tape, x, mode)
    }

    /// Like [`forward`](Self::forward) but reads parameter values from
    /// `store`, which must have this model's layout (e.g. a perturbed copy
    /// during gradient checking).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &NdArray,
        mode: Mode,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_input(batch)?;
        if store.len() != self.store.len() {
            return Err(ModelError::Config(format!(
                "parameter store has {} tensors, model has {}",
                store.len(),
                self.store.len()
            )));
        }
        let x = tape.constant(batch.clone())?;
        self.forward_var(store, tape, x, mode)
    }

    pub(crate) fn forward_var(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
    ) -> Result<ForwardOutput, ModelError> {
        let mut bn_stats = Vec::new();
        let mut shared = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for stage in &self.stages {
            let a = conv(tape, store, h, &stage.conv_a)?;
            let a = self.batch_norm(store, tape, a, stage.bn_a, mode, &mut bn_stats)?;
            let a = tape.relu(a)?;
            let b = conv(tape, store, a, &stage.conv_b)?;
            let b = self.batch_norm(store, tape, b, stage.bn_b, mode, &mut bn_stats)?;
            let sc = conv(tape, store, h, &stage.shortcut)?;
            let sum = tape.add(b, sc)?;
            h = tape.relu(sum)?;
            shared.push(h);
        }

        let mut columns = Vec::with_capacity(self.branches.len());
        let mut masks = Vec::with_capacity(self.branches.len());
        let mut fused_all = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut prev = None;
            let mut features = Vec::with_capacity(shared.len());
            let mut task_masks = Vec::with_capacity(shared.len());
            for (params, &f) in branch.attention.iter().zip(&shared) {
                let out = attention_block(tape, store, params, f, prev)?;
                features.push(out.gated);
                task_masks.push(out.mask);
                prev = out.next;
            }
            let fused = fuse_levels(tape, &features)?;
            let (hw, hb) = (
                tape.param(store, branch.hidden.weight),
                tape.param(store, branch.hidden.bias),
            );
            let hidden = tape.linear(fused, hw, Some(hb))?;
            let hidden = tape.relu(hidden)?;
            let (ow, ob) = (
                tape.param(store, branch.output.weight),
                tape.param(store, branch.output.bias),
            );
            columns.push(tape.linear(hidden, ow, Some(ob))?);
            masks.push(task_masks);
            fused_all.push(fused);
        }
        let logits = tape.concat(&columns, 1)?;
        Ok(ForwardOutput {
            logits,
            masks,
            fused: fused_all,
            bn_stats,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, output: &ForwardOutput) {
        let m = self.config.bn_momentum;
        for (idx, stats) in &output.bn_stats {
            let bn = self.bns[*idx].clone();
            for (id, batch) in [(bn.running_mean, &stats.mean), (bn.running_var, &stats.var)] {
                for (r, b) in self.store.get_mut(id).value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
    }

    /// Eval-mode positive-class probabilities, `[N][num_tasks]`.
    pub fn predict_proba(&self, batch: &NdArray) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, Mode::Eval)?;
        let logits = tape.value(out.logits);
        let t = self.config.num_tasks;
        Ok(logits
            .data()
            .chunks_exact(t)
            .map(|row| row.iter().map(|&z| crate::autodiff::sigmoid(z)).collect())
            .collect())
    }

    /// Total number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.store.trainable_scalars()
    }

    pub(crate) fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        let mut fresh = WoundModel::new(config, 0)?;
        for id in fresh.store.ids().collect::<Vec<_>>() {
            let name = fresh.store.get(id).name.clone();
            let p = store
                .by_name(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            fresh
                .store
                .set_value(id, p.value.clone())
                .map_err(|e| ModelError::Checkpoint(format!("parameter `{name}`: {e}")))?;
        }
        if store.len() != fresh.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                fresh.store.len()
            )));
        }
        Ok(fresh)
    }
}

/// `count(a) / count(b)`.
pub fn size_ratio(a: &WoundModel, b: &WoundModel) -> f64 {
    a.count_parameters() as f64 / b.count_parameters() as f64
}
