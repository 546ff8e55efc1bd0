//! Attention rollout: token importances from the CLS row of a product of
//! residual-corrected attention maps.

use super::AnalysisError;
use crate::tensor::Tensor;

/// Per-token attribution of one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// Rollout matrix over the full sequence (CLS first).
    pub rollout: Tensor,
    /// `R[CLS, i]` for each non-pad, non-CLS position, in sequence order.
    pub scores: Vec<f64>,
}

/// Head-averaged map with pad columns zeroed, plus identity, rows
/// normalized.
pub fn residual_normalize(heads: &[Tensor], is_pad: &[bool]) -> Result<Tensor, AnalysisError> {
    let n = is_pad.len();
    let first = heads.first().ok_or(AnalysisError::Empty)?;
    if heads.iter().any(|h| h.shape() != (n, n)) {
        return Err(AnalysisError::ShapeMismatch(format!(
            "attention {:?} vs {n} positions",
            first.shape()
        )));
    }
    let mut a = Tensor::zeros(n, n);
    for h in heads {
        a.data.iter_mut().zip(&h.data).for_each(|(x, y)| *x += y);
    }
    let h = heads.len() as f64;
    for i in 0..n {
        let row = a.row_mut(i);
        for (j, x) in row.iter_mut().enumerate() {
            *x = if is_pad[j] { 0.0 } else { *x / h };
        }
        // The identity is added inside the compensated sum, not to the
        // diagonal first, so closed forms such as uniform attention come out
        // exact.
        let s = compensated_sum(row.iter().copied().chain([1.0]));
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { (*x + 1.0) / s } else { *x / s };
        }
    }
    Ok(a)
}

/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + c
}

/// Rollout over layers (first layer first in `maps`). The product places
/// the last layer leftmost.
pub fn attention_rollout(maps: &[Vec<Tensor>], is_pad: &[bool]) -> Result<Attribution, AnalysisError> {
    let n = is_pad.len();
    if n == 0 || is_pad[0] {
        return Err(AnalysisError::ShapeMismatch("sequence must start with CLS".into()));
    }
    let mut r: Option<Tensor> = None;
    for layer in maps {
        let a = residual_normalize(layer, is_pad)?;
        r = Some(match r {
            None => a,
            Some(prev) => a
                .matmul(&prev)
                .map_err(|e| AnalysisError::ShapeMismatch(e.to_string()))?,
        });
    }
    let rollout = r.unwrap_or_else(|| {
        let mut id = Tensor::zeros(n, n);
        (0..n).for_each(|i| id.set(i, i, 1.0));
        id
    });
    let scores = (1..n).filter(|&i| !is_pad[i]).map(|i| rollout.get(0, i)).collect();
    Ok(Attribution { rollout, scores })
}
