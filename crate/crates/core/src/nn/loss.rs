use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean squared difference over batch and elements, with its gradient.
///
/// Shapes must agree up to flattening of the per-sample axes.
pub fn loss_euclidean<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.len() != target.len() || pred.shape().first() != target.shape().first() {
        return Err(Error::dim(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::dim("empty prediction"));
    }
    let count = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut sum = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d * d;
            two * d / count
        })
        .collect();
    Ok((sum / count, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Row-wise softmax of `[batch, classes]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, classes) = logits.batch_split();
    if batch == 0 || classes == 0 {
        return Err(Error::dim(format!("cannot softmax {:?}", logits.shape())));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Softmax cross-entropy averaged over the batch; the gradient is
/// `(softmax − one_hot) / batch`.
pub fn loss_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (batch, classes) = logits.batch_split();
    if labels.len() != batch {
        return Err(Error::dim(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    if let Some(i) = logits.first_non_finite() {
        return Err(Error::Numeric {
            layer: "logits".into(),
            detail: format!("element {i} is not finite"),
        });
    }
    let probs = softmax(logits)?;
    let scale = T::one() / T::from_f64(batch as f64);
    let mut loss = T::zero();
    let mut grad = probs.data().to_vec();
    for ((row, logit_row), &label) in grad
        .chunks_mut(classes)
        .zip(logits.data().chunks(classes))
        .zip(labels)
    {
        let max = logit_row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logit_row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - logit_row[label];
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// What a network output is scored against.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a, T> {
    Euclidean(&'a Tensor<T>),
    CrossEntropy(&'a [usize]),
}

impl<T: Real> Objective<'_, T> {
    pub fn evaluate(&self, pred: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        match self {
            Objective::Euclidean(target) => loss_euclidean(pred, target),
            Objective::CrossEntropy(labels) => loss_cross_entropy(pred, labels),
        }
    }

    /// `loss(a) − loss(b)` in `f64`, accumulated term by term so that nearby
    /// outputs do not lose their difference to the rounding of two totals.
    pub fn difference(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
        self.evaluate(a)?;
        self.evaluate(b)?;
        let (a, b) = (a.data(), b.data());
        match self {
            Objective::Euclidean(target) => {
                let sum: f64 = a
                    .iter()
                    .zip(b)
                    .zip(target.data())
                    .map(|((&a, &b), &t)| {
                        let (a, b, t) = (a.as_f64(), b.as_f64(), t.as_f64());
                        (a - b) * ((a - t) + (b - t))
                    })
                    .sum();
                Ok(sum / a.len() as f64)
            }
            Objective::CrossEntropy(labels) => {
                let classes = a.len() / labels.len();
                let mut sum = 0.0;
                for ((ra, rb), &label) in a.chunks(classes).zip(b.chunks(classes)).zip(labels.iter()) {
                    let m = rb.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                    let (mut base, mut delta) = (0.0, 0.0);
                    for (&va, &vb) in ra.iter().zip(rb) {
                        let (va, vb) = (va.as_f64(), vb.as_f64());
                        let e = (vb - m).exp();
                        base += e;
                        delta += e * (va - vb).exp_m1();
                    }
                    // lse(a) − lse(b) − (a_label − b_label)
                    sum += (delta / base).ln_1p() - (ra[label].as_f64() - rb[label].as_f64());
                }
                Ok(sum / labels.len() as f64)
            }
        }
    }
}
