use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Mean squared error over all elements; returns `(loss, d loss / d pred)`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.dims() != target.dims() || pred.is_empty() {
        return Err(NnError::Shape(format!(
            "mse: pred {:?}, target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_vec(pred.dims(), grad)?))
}

/// Per-pixel cross-entropy of channel logits `(N, C, H, W)` against class
/// labels (`N*H*W`, row-major per item), averaged over pixels. Returns the
/// loss and its gradient with respect to the logits.
pub fn cross_entropy_logits(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = logits.nchw()?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(NnError::Shape(format!(
            "cross-entropy: {} labels for logits {:?}",
            labels.len(),
            logits.dims()
        )));
    }
    let count = (n * plane) as f64;
    let x = logits.data();
    let mut grad = Tensor::zeros(logits.dims());
    let mut loss = 0.0;
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let label = labels[b * plane + p] as usize;
            if label >= c {
                return Err(NnError::Shape(format!("label {label} outside {c} classes")));
            }
            let m = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..c).map(|ch| (x[at(ch)] - m).exp()).sum();
            let log_z = m + sum.ln();
            loss += log_z - x[at(label)];
            let g = grad.data_mut();
            for ch in 0..c {
                let prob = (x[at(ch)] - log_z).exp();
                let target = if ch == label { 1.0 } else { 0.0 };
                g[at(ch)] = (prob - target) / count;
            }
        }
    }
    Ok((loss / count, grad))
}

/// Cross-entropy of per-pixel class probabilities against labels, averaged
/// over pixels.
pub fn cross_entropy_probs(probs: &Tensor, labels: &[u8]) -> Result<f64> {
    let (n, c, h, w) = probs.nchw()?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(NnError::Shape("cross-entropy: label count".into()));
    }
    let mut loss = 0.0;
    for b in 0..n {
        for p in 0..plane {
            let label = labels[b * plane + p] as usize;
            if label >= c {
                return Err(NnError::Shape(format!("label {label} outside {c} classes")));
            }
            loss -= probs.data()[(b * c + label) * plane + p].max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(loss / (n * plane) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_one_hot_has_zero_loss() {
        let mut probs = Tensor::zeros(&[1, 4, 1, 3]);
        let labels = [0u8, 2, 3];
        for (p, &l) in labels.iter().enumerate() {
            probs.data_mut()[l as usize * 3 + p] = 1.0;
        }
        assert!(cross_entropy_probs(&probs, &labels).unwrap().abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let logits = Tensor::zeros(&[2, 4, 2, 2]);
        let (loss, grad) = cross_entropy_logits(&logits, &[1; 8]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let per_pixel: f64 = grad.data().iter().sum();
        assert!(per_pixel.abs() < 1e-12);
    }

    #[test]
    fn mse_gradient() {
        let p = Tensor::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap();
        let t = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let (l, g) = mse(&p, &t).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
    }
}
