//! Masked-fragment pretraining and two-stage fine-tuning.
//!
//! Each molecule gets its own tape; per-molecule parameter gradients are
//! computed through [`Exec`] and summed in input order, so sequential and
//! parallel runs produce identical updates.

use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::TrainConfig;
use super::net::{ForwardOpts, Model, MolInput};
use crate::par::Exec;
use crate::tensor::{AdamW, Grads, Graph, Tensor, TensorError, Var};
use crate::tokenizer::Vocab;
use crate::wlhash::digest64;

/// Independent RNG stream for a (seed, purpose, epoch, item) tuple.
pub fn stream(seed: u64, purpose: u64, epoch: u64, item: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (k, v) in [seed, purpose, epoch, item].into_iter().enumerate() {
        bytes[8 * k..8 * k + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(digest64(&bytes))
}

const MASK_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

/// Number of positions masked in a sequence of `m` tokens.
pub fn n_masked(m: usize, ratio: f64) -> usize {
    ((ratio * m as f64).round() as usize).clamp(1, m.max(1))
}

/// Weighted sampling without replacement of `n_masked(m, ratio)` positions,
/// with weights `1/√max(f_i, 1)`. Positions are returned ascending.
pub fn sample_positions_by_frequency(freqs: &[f64], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = freqs.len();
    if m == 0 {
        return Vec::new();
    }
    let w: Vec<f64> = freqs.iter().map(|f| 1.0 / f.max(1.0).sqrt()).collect();
    let mut picked = sample_weighted(rng, m, |i| w[i], n_masked(m, ratio))
        .expect("weights are positive and finite")
        .into_vec();
    picked.sort_unstable();
    picked
}

/// Mask positions for a token sequence using the vocabulary's corpus
/// frequencies.
pub fn sample_mask_positions(token_ids: &[u32], vocab: &Vocab, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let freqs: Vec<f64> = token_ids.iter().map(|&t| vocab.mask_frequency(t)).collect();
    sample_positions_by_frequency(&freqs, ratio, rng)
}

/// Masked positions of one molecule and the ids to recover there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
    pub masked: Vec<bool>,
}

impl MaskedExample {
    pub fn new(input: &MolInput, positions: Vec<usize>) -> Self {
        let mut masked = vec![false; input.n_tokens()];
        for &p in &positions {
            masked[p] = true;
        }
        let targets = positions.iter().map(|&p| input.token_ids[p] as usize).collect();
        MaskedExample {
            positions,
            targets,
            masked,
        }
    }
}

/// Mean cross-entropy over the masked positions of one molecule. Also
/// returns the logits node.
pub fn masked_loss(
    model: &Model,
    g: &mut Graph<'_>,
    input: &MolInput,
    ex: &MaskedExample,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var), TensorError> {
    let out = model.forward(
        g,
        input,
        ForwardOpts {
            masked: &ex.masked,
            dropout_rng,
        },
    )?;
    let logits = model.mlm_logits(g, out.states, &ex.positions)?;
    let loss = g.cross_entropy(logits, &ex.targets, None)?;
    Ok((loss, logits))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Runs `f` on one tape per item and sums losses, auxiliary statistics and
/// parameter gradients in item order.
pub fn sum_gradients<F>(
    model: &Model,
    n: usize,
    trainable: Option<&[bool]>,
    exec: Exec,
    f: F,
) -> Result<(f64, f64, Grads), TensorError>
where
    F: Fn(&mut Graph<'_>, usize) -> Result<(Var, f64), TensorError> + Sync + Send,
{
    let per_item = exec.map_range(n, |i| {
        let mut g = match trainable {
            Some(mask) => Graph::with_trainable(&model.params, mask),
            None => Graph::new(&model.params),
        };
        let (loss, aux) = f(&mut g, i)?;
        let value = g.value(loss).item();
        Ok::<_, TensorError>((value, aux, g.backward(loss).params))
    });
    let mut total = Grads::zeros_like(&model.params);
    let (mut loss, mut aux) = (0.0, 0.0);
    for r in per_item {
        let (l, a, grads) = r?;
        loss += l;
        aux += a;
        total.merge(&grads);
    }
    Ok((loss, aux, total))
}

/// One row of the pretraining log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub masked_accuracy: f64,
}

/// One optimizer step on a batch. Returns the mean masked-token loss and
/// accuracy measured before the update.
pub fn pretrain_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &[&MolInput],
    masks: &[MaskedExample],
    dropout_seed: Option<(u64, u64)>,
    exec: Exec,
) -> Result<StepLog, TensorError> {
    assert_eq!(batch.len(), masks.len());
    let n = batch.len();
    let n_targets: usize = masks.iter().map(|m| m.positions.len()).sum();
    let (loss, correct, mut grads) = {
        let model = &*model;
        sum_gradients(model, n, None, exec, |g, i| {
            let mut rng = dropout_seed.map(|(s, e)| stream(s, DROPOUT_STREAM, e, i as u64));
            let (loss, logits) = masked_loss(model, g, batch[i], &masks[i], rng.as_mut())?;
            let v = g.value(logits);
            let hits = (0..v.rows).filter(|&r| argmax(v.row(r)) == masks[i].targets[r]).count();
            Ok((loss, hits as f64))
        })?
    };
    grads.scale(1.0 / n as f64);
    opt.step(&mut model.params, &grads)?;
    Ok(StepLog {
        step: opt.steps(),
        loss: loss / n as f64,
        masked_accuracy: correct / n_targets.max(1) as f64,
    })
}

/// Masked-fragment pretraining for `cfg.epochs` epochs of shuffled
/// mini-batches. Masks and dropout are drawn from streams keyed by
/// (seed, epoch, molecule), so runs are reproducible.
pub fn pretrain(
    model: &mut Model,
    inputs: &[MolInput],
    vocab: &Vocab,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, TensorError> {
    let mut opt = AdamW::new(&model.params, cfg.optimizer);
    let mut log = Vec::new();
    let ratio = model.config.mask_ratio;
    for epoch in 0..cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut stream(cfg.seed, SHUFFLE_STREAM, epoch, 0));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&MolInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let masks: Vec<MaskedExample> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = stream(cfg.seed, MASK_STREAM, epoch, i as u64);
                    let pos = sample_mask_positions(&inputs[i].token_ids, vocab, ratio, &mut rng);
                    MaskedExample::new(&inputs[i], pos)
                })
                .collect();
            let step_seed = (cfg.seed, epoch * 1_000_003 + opt.steps());
            let entry = pretrain_step(model, &mut opt, &batch, &masks, Some(step_seed), exec)?;
            on_step(&entry);
            log.push(entry);
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Independent binary labels per task.
    Binary,
    Regression,
}

/// Labeled molecules; `valid` flags present labels (row-major n × tasks).
#[derive(Debug, Clone)]
pub struct TaskData {
    pub inputs: Vec<MolInput>,
    pub labels: Tensor,
    pub valid: Vec<bool>,
}

impl TaskData {
    pub fn n_tasks(&self) -> usize {
        self.labels.cols
    }

    pub fn subset(&self, idx: &[usize]) -> TaskData {
        let t = self.n_tasks();
        let mut labels = Tensor::zeros(idx.len(), t);
        let mut valid = Vec::with_capacity(idx.len() * t);
        for (r, &i) in idx.iter().enumerate() {
            labels.row_mut(r).copy_from_slice(self.labels.row(i));
            valid.extend_from_slice(&self.valid[i * t..(i + 1) * t]);
        }
        TaskData {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels,
            valid,
        }
    }

    fn row(&self, i: usize) -> (Tensor, &[bool]) {
        let t = self.n_tasks();
        (
            Tensor {
                rows: 1,
                cols: t,
                data: self.labels.row(i).to_vec(),
            },
            &self.valid[i * t..(i + 1) * t],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FinetuneError {
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("labels are {labels:?} with {valid} flags for {molecules} molecules")]
    LabelShapeMismatch {
        labels: (usize, usize),
        valid: usize,
        molecules: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-task `#neg / #pos` over present labels (1 when a task has no
/// positives).
pub fn pos_weights(labels: &Tensor, valid: &[bool]) -> Vec<f64> {
    (0..labels.cols)
        .map(|j| {
            let (mut pos, mut neg) = (0usize, 0usize);
            for i in 0..labels.rows {
                if valid[i * labels.cols + j] {
                    if labels.get(i, j) > 0.5 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
            if pos == 0 {
                1.0
            } else {
                neg as f64 / pos as f64
            }
        })
        .collect()
}

fn task_loss(
    g: &mut Graph<'_>,
    kind: TaskKind,
    out: Var,
    target: &Tensor,
    valid: &[bool],
    pw: Option<&[f64]>,
) -> Result<Var, TensorError> {
    match kind {
        TaskKind::Binary => g.bce_with_logits(out, target, valid, pw),
        TaskKind::Regression => g.mse(out, target, valid),
    }
}

/// CLS states of every molecule (n × d), without dropout.
pub fn cls_embeddings(model: &Model, inputs: &[MolInput], exec: Exec) -> Result<Tensor, TensorError> {
    let rows = exec.map(inputs, |input| {
        let mut g = Graph::new(&model.params);
        let masked = vec![false; input.n_tokens()];
        let out = model.forward(
            &mut g,
            input,
            ForwardOpts {
                masked: &masked,
                dropout_rng: None,
            },
        )?;
        Ok::<_, TensorError>(g.value(out.cls).data.clone())
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_, _>>()?;
    let d = model.config.hidden_dim;
    Ok(Tensor {
        rows: rows.len(),
        cols: d,
        data: rows.concat(),
    })
}

/// Task-head outputs (logits for binary tasks) for every molecule.
pub fn predict(model: &Model, inputs: &[MolInput], exec: Exec) -> Result<Tensor, TensorError> {
    let cls = cls_embeddings(model, inputs, exec)?;
    let g = &mut Graph::new(&model.params);
    let c = g.constant(cls);
    let out = model.task_logits(g, c)?;
    Ok(g.value(out).clone())
}

/// Mean training loss per epoch of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub pos_weight: Option<Vec<f64>>,
    pub head_losses: Vec<f64>,
    pub joint_losses: Vec<f64>,
}

/// Two-stage fine-tuning. Stage one trains a fresh linear head on frozen
/// CLS states; stage two also unfreezes pooling, alignment, gate, the last
/// `cfg.unfreeze_layers` Transformer layers and the final norm, at
/// `cfg.backbone_lr_scale` times the head learning rate.
pub fn finetune(
    model: &mut Model,
    train: &TaskData,
    kind: TaskKind,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<FinetuneReport, FinetuneError> {
    let n = train.inputs.len();
    if n == 0 {
        return Err(FinetuneError::EmptySplit("train".into()));
    }
    let t = train.n_tasks();
    if train.labels.rows != n || train.valid.len() != n * t || t == 0 {
        return Err(FinetuneError::LabelShapeMismatch {
            labels: train.labels.shape(),
            valid: train.valid.len(),
            molecules: n,
        });
    }
    model.add_task_head(t, cfg.seed);
    let (hw, hb) = model.task_head_ids().expect("head just added");
    let pw = (kind == TaskKind::Binary && cfg.pos_weight).then(|| pos_weights(&train.labels, &train.valid));
    let batch = cfg.batch_size.max(1);

    // Stage one: the backbone is never touched, so CLS states are fixed.
    let cls = cls_embeddings(model, &train.inputs, exec)?;
    let mut head_only = vec![false; model.params.len()];
    head_only[hw] = true;
    head_only[hb] = true;
    let mut opt = AdamW::new(&model.params, cfg.optimizer);
    let mut head_losses = Vec::new();
    for epoch in 0..cfg.head_epochs as u64 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, SHUFFLE_STREAM, epoch, 1));
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let sub = train.subset(chunk);
            let mut x = Tensor::zeros(chunk.len(), cls.cols);
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(cls.row(i));
            }
            let grads = {
                let mut g = Graph::with_trainable(&model.params, &head_only);
                let xv = g.constant(x);
                let out = model.task_logits(&mut g, xv)?;
                let loss = task_loss(&mut g, kind, out, &sub.labels, &sub.valid, pw.as_deref())?;
                total += g.value(loss).item() * chunk.len() as f64;
                g.backward(loss).params
            };
            opt.step(&mut model.params, &grads)?;
        }
        head_losses.push(total / n as f64);
    }

    // Stage two.
    let mut trainable = head_only;
    let mut opt2 = AdamW::new(&model.params, cfg.optimizer);
    for id in model.stage_two_ids(cfg.unfreeze_layers) {
        trainable[id] = true;
        opt2.lr_scale[id] = cfg.backbone_lr_scale;
    }
    let mut joint_losses = Vec::new();
    for epoch in 0..cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, SHUFFLE_STREAM, epoch, 2));
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, _, mut grads) = {
                let model = &*model;
                sum_gradients(model, chunk.len(), Some(&trainable), exec, |g, k| {
                    let i = chunk[k];
                    let input = &train.inputs[i];
                    let masked = vec![false; input.n_tokens()];
                    let mut rng = stream(cfg.seed, DROPOUT_STREAM, 1_000_000 + epoch, i as u64);
                    let out = model.forward(
                        g,
                        input,
                        ForwardOpts {
                            masked: &masked,
                            dropout_rng: Some(&mut rng),
                        },
                    )?;
                    let y = model.task_logits(g, out.cls)?;
                    let (target, valid) = train.row(i);
                    Ok((task_loss(g, kind, y, &target, valid, pw.as_deref())?, 0.0))
                })?
            };
            grads.scale(1.0 / chunk.len() as f64);
            opt2.step(&mut model.params, &grads)?;
            total += loss;
        }
        joint_losses.push(total / n as f64);
    }
    Ok(FinetuneReport {
        pos_weight: pw,
        head_losses,
        joint_losses,
    })
}
