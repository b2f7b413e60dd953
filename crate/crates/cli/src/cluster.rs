//! Lloyd's k-means with k-means++ seeding, for scoring exported features.

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

fn nearest(p: &[f32], centers: &[Vec<f32>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist2(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one center")
}

/// Cluster assignment of every point.
pub fn kmeans(points: &[Vec<f32>], k: usize, iters: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        bail!("k-means needs 1 <= k <= {} points, got k = {k}", points.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        if total == 0.0 {
            centers.push(points[rng.random_range(0..points.len())].clone());
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, di) in d.iter().enumerate() {
            r -= di;
            if r <= 0.0 {
                pick = i;
                break;
            }
        }
        centers.push(points[pick].clone());
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == assign {
            break;
        }
        assign = next;
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += *v as f64;
            }
        }
        for j in 0..k {
            // an empty cluster keeps its previous center
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect();
            }
        }
    }
    Ok(assign)
}
