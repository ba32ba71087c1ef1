use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::ShapeMismatch {
            layer: "cross_entropy".into(),
            expected: vec![labels.len(), 0],
            actual: logits.shape().to_vec(),
        });
    };
    if batch == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            layer: "cross_entropy".into(),
            expected: vec![labels.len(), classes],
            actual: logits.shape().to_vec(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    let mut grad = vec![0.0f32; batch * classes];
    let mut total = 0.0f64;
    let inv_batch = 1.0 / batch as f32;
    for (i, row) in logits.data().chunks(classes).enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += (log_sum - row[labels[i]]) as f64;
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_sum).exp() * inv_batch;
        }
        g[labels[i]] -= inv_batch;
    }
    Ok((
        (total / batch as f64) as f32,
        Tensor::new(logits.shape().to_vec(), grad)?,
    ))
}

/// Mean squared error and its gradient `2 (prediction − target) / N`.
pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            layer: "mse".into(),
            expected: target.shape().to_vec(),
            actual: prediction.shape().to_vec(),
        });
    }
    if prediction.is_empty() {
        return Err(Error::Empty("mse input"));
    }
    let n = prediction.len() as f32;
    let mut total = 0.0f64;
    let grad: Vec<f32> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            total += (d as f64) * (d as f64);
            2.0 * d / n
        })
        .collect();
    Ok((
        (total / prediction.len() as f64) as f32,
        Tensor::new(prediction.shape().to_vec(), grad)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((grad.data()[0] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn saturated_logits_are_stable() {
        let logits = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.is_finite());
    }

    #[test]
    fn label_out_of_range_names_index() {
        let logits = Tensor::zeros(&[3, 4]);
        match cross_entropy(&logits, &[0, 4, 1]) {
            Err(Error::LabelOutOfRange { index: 1, label: 4, classes: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mse_basics() {
        let a = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(mse(&a, &b).unwrap().0, 1.0);
        let (l, g) = mse(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(mse(&a, &Tensor::zeros(&[3])).is_err());
    }
}
