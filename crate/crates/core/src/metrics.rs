//! Evaluation metrics.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::pruning::{LayerKind, ScoredLayer};

/// `sum 1(y_i == yhat_i) / n`.
pub fn accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("accuracy", &[labels.len()], &[preds.len()]));
    }
    if preds.is_empty() {
        return Err(Error::Argument("accuracy of zero samples".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean stop step over episodes.
pub fn avg_timesteps(steps: &[usize]) -> Result<f64> {
    if steps.is_empty() {
        return Err(Error::Argument("average timesteps of zero episodes".into()));
    }
    if steps.contains(&0) {
        return Err(Error::Argument("an episode uses at least one timestep".into()));
    }
    Ok(steps.iter().sum::<usize>() as f64 / steps.len() as f64)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the contingency table of two clusterings.
pub fn ari<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("ari", &[a.len()], &[b.len()]));
    }
    if a.len() < 2 {
        return Err(Error::Argument("ari needs at least two elements".into()));
    }
    let mut cells: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len() as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both clusterings trivial (all-in-one or all singletons).
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Mean squared reconstruction error.
pub fn recon_mse(x: &[f32], x_hat: &[f32]) -> Result<f64> {
    crate::snn::loss::mse(x, x_hat).map(f64::from)
}

/// Active synaptic operations of one timestep: kept synapses times the
/// number of output positions they are applied at.
pub fn ops_per_step(layers: &[ScoredLayer]) -> u64 {
    layers
        .iter()
        .map(|l| {
            let reps = match l.kind() {
                LayerKind::Conv(g) => g.positions(),
                LayerKind::Linear { .. } => 1,
            };
            l.active_count() as u64 * reps as u64
        })
        .sum()
}

/// Synaptic-operation count of an episode that ran `timesteps` steps.
pub fn cost_proxy(layers: &[ScoredLayer], timesteps: usize) -> Result<u64> {
    if timesteps == 0 {
        return Err(Error::Argument("an episode uses at least one timestep".into()));
    }
    Ok(ops_per_step(layers) * timesteps as u64)
}
