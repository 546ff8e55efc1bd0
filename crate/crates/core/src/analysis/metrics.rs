//! Prediction metrics: ROC-AUC, average precision, RMSE and MAE.

use super::AnalysisError;
use crate::tensor::Tensor;

fn check_lengths(a: usize, b: usize) -> Result<(), AnalysisError> {
    if a != b {
        return Err(AnalysisError::ShapeMismatch(format!("{a} labels vs {b} scores")));
    }
    Ok(())
}

/// Area under the ROC curve from the Mann–Whitney rank statistic, tied
/// scores sharing their mean rank.
pub fn roc_auc(y_true: &[bool], score: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(y_true.len(), score.len())?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AnalysisError::SingleClass);
    }
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| y_true[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: Σ (R_t − R_{t−1}) P_t over distinct score thresholds
/// in descending order.
pub fn average_precision(y_true: &[bool], score: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(y_true.len(), score.len())?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == y_true.len() {
        return Err(AnalysisError::SingleClass);
    }
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        let new_tp = order[i..=j].iter().filter(|&&k| y_true[k]).count();
        tp += new_tp;
        seen += j - i + 1;
        ap += new_tp as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Ok(ap)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y_true.len() as f64).sqrt())
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y_true.len() as f64)
}

/// Mean of a per-task metric over tasks where it is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMean {
    /// `None` when no task qualified.
    pub mean: Option<f64>,
    pub n_used: usize,
    /// Tasks skipped for having a single class (or no labels).
    pub n_excluded: usize,
}

/// Column `j` of (labels, scores) restricted to valid entries.
fn column(labels: &Tensor, valid: &[bool], scores: &Tensor, j: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::new();
    let mut s = Vec::new();
    for i in 0..labels.rows {
        if valid[i * labels.cols + j] {
            y.push(labels.get(i, j));
            s.push(scores.get(i, j));
        }
    }
    (y, s)
}

/// Applies a per-task metric column by column and averages the tasks where
/// it succeeds.
pub fn per_task_mean(
    labels: &Tensor,
    valid: &[bool],
    scores: &Tensor,
    metric: impl Fn(&[f64], &[f64]) -> Result<f64, AnalysisError>,
) -> Result<TaskMean, AnalysisError> {
    if labels.shape() != scores.shape() || valid.len() != labels.len() {
        return Err(AnalysisError::ShapeMismatch(format!(
            "labels {:?}, scores {:?}, {} flags",
            labels.shape(),
            scores.shape(),
            valid.len()
        )));
    }
    let mut vals = Vec::new();
    let mut excluded = 0;
    for j in 0..labels.cols {
        let (y, s) = column(labels, valid, scores, j);
        match metric(&y, &s) {
            Ok(v) => vals.push(v),
            Err(AnalysisError::SingleClass | AnalysisError::Empty) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(TaskMean {
        mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
        n_used: vals.len(),
        n_excluded: excluded,
    })
}

fn binarize(y: &[f64]) -> Vec<bool> {
    y.iter().map(|&v| v > 0.5).collect()
}

pub fn mean_roc_auc(labels: &Tensor, valid: &[bool], scores: &Tensor) -> Result<TaskMean, AnalysisError> {
    per_task_mean(labels, valid, scores, |y, s| roc_auc(&binarize(y), s))
}

pub fn mean_average_precision(labels: &Tensor, valid: &[bool], scores: &Tensor) -> Result<TaskMean, AnalysisError> {
    per_task_mean(labels, valid, scores, |y, s| average_precision(&binarize(y), s))
}

pub fn mean_rmse(labels: &Tensor, valid: &[bool], preds: &Tensor) -> Result<TaskMean, AnalysisError> {
    per_task_mean(labels, valid, preds, rmse)
}

pub fn mean_mae(labels: &Tensor, valid: &[bool], preds: &Tensor) -> Result<TaskMean, AnalysisError> {
    per_task_mean(labels, valid, preds, mae)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores() {
        let y = [false, false, true, true];
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(roc_auc(&y, &s).unwrap(), 1.0);
        assert_eq!(average_precision(&y, &s).unwrap(), 1.0);
        let rev: Vec<f64> = s.iter().map(|x| -x).collect();
        assert_eq!(roc_auc(&y, &rev).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_is_half() {
        assert_eq!(roc_auc(&[true, false, true], &[0.3; 3]).unwrap(), 0.5);
        assert!((average_precision(&[true, false, true], &[0.3; 3]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(roc_auc(&[true, true], &[0.1, 0.2]), Err(AnalysisError::SingleClass));
        assert!(matches!(
            roc_auc(&[true], &[0.1, 0.2]),
            Err(AnalysisError::ShapeMismatch(_))
        ));
        assert_eq!(rmse(&[], &[]), Err(AnalysisError::Empty));
    }

    #[test]
    fn perfect_regression() {
        let y = [1.0, -2.0, 3.5];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, -4.0]).unwrap(), 3.5);
    }

    #[test]
    fn multitask_skips_single_class() {
        let labels = Tensor::from_vec(3, 2, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let scores = Tensor::from_vec(3, 2, vec![0.9, 0.1, 0.2, 0.2, 0.8, 0.3]).unwrap();
        let m = mean_roc_auc(&labels, &[true; 6], &scores).unwrap();
        assert_eq!(m.mean, Some(1.0));
        assert_eq!((m.n_used, m.n_excluded), (1, 1));
        let m = mean_roc_auc(&labels, &[true, true, false, true, true, true], &scores).unwrap();
        assert_eq!(m.mean, None);
    }
}
