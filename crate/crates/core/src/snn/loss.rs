//! Scalar losses and their gradients.

use crate::error::{Error, Result};

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f32> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f32 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean softmax cross-entropy over a `[batch, classes]` block, with its
/// gradient w.r.t. the logits. Also returns the number of argmax hits.
pub fn softmax_cross_entropy(logits: &[f32], classes: usize, labels: &[u8]) -> Result<(f32, Vec<f32>, usize)> {
    let batch = labels.len();
    if batch == 0 || classes == 0 || logits.len() != batch * classes {
        return Err(Error::shape("cross-entropy logits", &[batch, classes], &[logits.len()]));
    }
    let mut grad = vec![0.0f32; logits.len()];
    let (mut loss, mut correct) = (0.0f64, 0);
    for (b, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return Err(Error::Argument(format!("label {y} out of range for {classes} classes")));
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let p = softmax(row);
        loss -= (p[y].max(1e-30) as f64).ln();
        if argmax(row) == y {
            correct += 1;
        }
        for (c, g) in grad[b * classes..(b + 1) * classes].iter_mut().enumerate() {
            *g = (p[c] - if c == y { 1.0 } else { 0.0 }) / batch as f32;
        }
    }
    Ok(((loss / batch as f64) as f32, grad, correct))
}

/// Mean squared error.
pub fn mse(x: &[f32], x_hat: &[f32]) -> Result<f32> {
    if x.len() != x_hat.len() {
        return Err(Error::shape("mse", &[x.len()], &[x_hat.len()]));
    }
    if x.is_empty() {
        return Err(Error::Argument("mse of empty tensors".into()));
    }
    let s: f64 = x.iter().zip(x_hat).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    Ok((s / x.len() as f64) as f32)
}

/// Gradient of [`mse`] w.r.t. `x_hat`.
pub fn mse_grad(x: &[f32], x_hat: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    x.iter().zip(x_hat).map(|(a, b)| 2.0 * (b - a) / n).collect()
}

const P_EPS: f32 = 1e-6;

/// Mean over units of `KL(Bernoulli(p) || Bernoulli(0.5))`.
pub fn bernoulli_kl(p: &[f32]) -> f32 {
    if p.is_empty() {
        return 0.0;
    }
    let s: f64 = p
        .iter()
        .map(|&v| {
            let v = v.clamp(P_EPS, 1.0 - P_EPS) as f64;
            v * (2.0 * v).ln() + (1.0 - v) * (2.0 * (1.0 - v)).ln()
        })
        .sum();
    (s / p.len() as f64) as f32
}

/// Gradient of [`bernoulli_kl`] w.r.t. `p`, scaled by `weight`.
pub fn bernoulli_kl_grad(p: &[f32], weight: f32) -> Vec<f32> {
    let n = p.len() as f32;
    p.iter()
        .map(|&v| {
            let v = v.clamp(P_EPS, 1.0 - P_EPS);
            weight * (v / (1.0 - v)).ln() / n
        })
        .collect()
}
