//! Attribution of trained models and faithfulness by fragment deletion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{mean_rmse, mean_roc_auc};
use super::rollout::{attention_rollout, Attribution};
use super::AnalysisError;
use crate::model::{predict, ForwardOpts, Model, MolInput, TaskData, TaskKind};
use crate::par::Exec;
use crate::tensor::{Graph, Tensor};

/// Rollout attribution of one molecule from an unmasked forward pass.
pub fn attribute(model: &Model, input: &MolInput) -> Result<Attribution, AnalysisError> {
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
    let is_pad: Vec<bool> = input.key_mask().iter().map(|&k| !k).collect();
    attention_rollout(&out.attention, &is_pad)
}

/// Relative drop in percent: `100 · delta / original`.
pub fn relative_drop(delta: f64, original: f64) -> Result<f64, AnalysisError> {
    if original == 0.0 {
        return Err(AnalysisError::DivisionByZero);
    }
    Ok(100.0 * delta / original)
}

/// Task metric in the units used for fidelity: ROC-AUC points (×100) for
/// binary tasks, RMSE for regression.
pub fn task_metric(kind: TaskKind, labels: &Tensor, valid: &[bool], outputs: &Tensor) -> Result<f64, AnalysisError> {
    let m = match kind {
        TaskKind::Binary => mean_roc_auc(labels, valid, outputs)?.mean.map(|v| 100.0 * v),
        TaskKind::Regression => mean_rmse(labels, valid, outputs)?.mean,
    };
    m.ok_or(AnalysisError::SingleClass)
}

/// Degradation from `original` to `ablated` (positive means worse).
pub fn metric_drop(kind: TaskKind, original: f64, ablated: f64) -> f64 {
    match kind {
        TaskKind::Binary => original - ablated,
        TaskKind::Regression => ablated - original,
    }
}

/// Indices of the `k` highest and `k` lowest scores (ties to the lower
/// index).
pub fn top_bottom(scores: &[f64], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = order[..k].to_vec();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let bottom = order[..k].to_vec();
    (top, bottom)
}

fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !removed.contains(i)).collect()
}

/// Predictions on original and ablated inputs for molecules with more than
/// `k` tokens.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub k: usize,
    /// Molecules evaluated (indices into the dataset).
    pub evaluated: Vec<usize>,
    /// Molecules skipped for having at most `k` tokens.
    pub n_skipped: usize,
    pub original: Tensor,
    pub top: Tensor,
    pub bottom: Tensor,
    pub scores: Vec<Vec<f64>>,
}

pub fn ablate(model: &Model, data: &TaskData, k: usize, exec: Exec) -> Result<Ablation, AnalysisError> {
    let evaluated: Vec<usize> = (0..data.inputs.len())
        .filter(|&i| data.inputs[i].n_tokens() > k)
        .collect();
    let n_skipped = data.inputs.len() - evaluated.len();
    let prepared = exec.map(&evaluated, |&i| {
        let input = &data.inputs[i];
        let attr = attribute(model, input)?;
        let (top, bottom) = top_bottom(&attr.scores, k);
        let m = input.n_tokens();
        Ok::<_, AnalysisError>((
            input.retain_tokens(&complement(m, &top)),
            input.retain_tokens(&complement(m, &bottom)),
            attr.scores,
        ))
    });
    let mut tops = Vec::new();
    let mut bottoms = Vec::new();
    let mut scores = Vec::new();
    for r in prepared {
        let (t, b, s) = r?;
        tops.push(t);
        bottoms.push(b);
        scores.push(s);
    }
    let originals: Vec<MolInput> = evaluated.iter().map(|&i| data.inputs[i].clone()).collect();
    Ok(Ablation {
        k,
        n_skipped,
        original: predict(model, &originals, exec)?,
        top: predict(model, &tops, exec)?,
        bottom: predict(model, &bottoms, exec)?,
        scores,
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub k: usize,
    pub original: f64,
    pub delta_top: f64,
    pub delta_bottom: f64,
    pub gap: f64,
    /// `None` when the original metric is zero.
    pub relative_drop: Option<f64>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

fn gather(t: &Tensor, valid: &[bool], rows: &[usize]) -> (Tensor, Vec<bool>) {
    let c = t.cols;
    let mut out = Tensor::zeros(rows.len(), c);
    let mut v = Vec::with_capacity(rows.len() * c);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(t.row(i));
        v.extend_from_slice(&valid[i * c..(i + 1) * c]);
    }
    (out, v)
}

fn pick(t: &Tensor, rows: &[usize]) -> Tensor {
    gather(t, &vec![true; t.len()], rows).0
}

/// Metrics of an ablation on the subset of evaluated molecules given by
/// `rows` (positions within `ablation.evaluated`).
fn report_rows(
    ablation: &Ablation,
    data: &TaskData,
    kind: TaskKind,
    rows: &[usize],
) -> Result<FidelityReport, AnalysisError> {
    let ids: Vec<usize> = rows.iter().map(|&r| ablation.evaluated[r]).collect();
    let (labels, valid) = gather(&data.labels, &data.valid, &ids);
    let original = task_metric(kind, &labels, &valid, &pick(&ablation.original, rows))?;
    let top = task_metric(kind, &labels, &valid, &pick(&ablation.top, rows))?;
    let bottom = task_metric(kind, &labels, &valid, &pick(&ablation.bottom, rows))?;
    let delta_top = metric_drop(kind, original, top);
    let delta_bottom = metric_drop(kind, original, bottom);
    Ok(FidelityReport {
        k: ablation.k,
        original,
        delta_top,
        delta_bottom,
        gap: delta_top - delta_bottom,
        relative_drop: relative_drop(delta_top, original).ok(),
        n_evaluated: rows.len(),
        n_skipped: ablation.n_skipped,
    })
}

pub fn fidelity_report(ablation: &Ablation, data: &TaskData, kind: TaskKind) -> Result<FidelityReport, AnalysisError> {
    let rows: Vec<usize> = (0..ablation.evaluated.len()).collect();
    report_rows(ablation, data, kind, &rows)
}

/// Deletes the top-k and bottom-k attributed fragments of every molecule
/// and reports the metric drops.
pub fn fidelity_test(
    model: &Model,
    data: &TaskData,
    kind: TaskKind,
    k: usize,
    exec: Exec,
) -> Result<FidelityReport, AnalysisError> {
    fidelity_report(&ablate(model, data, k, exec)?, data, kind)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub resamples: usize,
    /// Resamples where the metric was undefined (single class).
    pub undefined: usize,
    pub positive_gap: usize,
}

impl BootstrapSummary {
    /// Fraction of all resamples with a positive gap.
    pub fn fraction(&self) -> f64 {
        self.positive_gap as f64 / self.resamples.max(1) as f64
    }
}

/// Resamples evaluated molecules with replacement and counts resamples
/// where Δ_top exceeds Δ_bottom.
pub fn bootstrap_gap(
    ablation: &Ablation,
    data: &TaskData,
    kind: TaskKind,
    resamples: usize,
    seed: u64,
) -> BootstrapSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ablation.evaluated.len();
    let mut summary = BootstrapSummary {
        resamples,
        undefined: 0,
        positive_gap: 0,
    };
    for _ in 0..resamples {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        match report_rows(ablation, data, kind, &rows) {
            Ok(r) if r.gap > 0.0 => summary.positive_gap += 1,
            Ok(_) => {}
            Err(_) => summary.undefined += 1,
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_drop_formula() {
        assert!((relative_drop(28.9, 79.2).unwrap() - 36.49).abs() < 0.01);
        assert_eq!(relative_drop(0.0, 50.0).unwrap(), 0.0);
        assert_eq!(relative_drop(1.0, 0.0), Err(AnalysisError::DivisionByZero));
    }

    #[test]
    fn ranking_ties_and_sizes() {
        let (t, b) = top_bottom(&[0.2, 0.5, 0.5, 0.1], 2);
        assert_eq!(t, vec![1, 2]);
        assert_eq!(b, vec![3, 0]);
        let (t, b) = top_bottom(&[0.2, 0.5], 0);
        assert!(t.is_empty() && b.is_empty());
    }

    #[test]
    fn drop_direction() {
        assert_eq!(metric_drop(TaskKind::Binary, 80.0, 70.0), 10.0);
        assert_eq!(metric_drop(TaskKind::Regression, 1.0, 1.5), 0.5);
    }
}
