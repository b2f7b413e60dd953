//! Pop-up score pruning over frozen weights.
//!
//! Each layer keeps a trainable score per synapse. The forward pass uses
//! `w * H(s)`, where `H` keeps the top `k%` scores of the layer, and the
//! backward pass updates every score (pruned or not) with the
//! straight-through rule `s <- s - lr * dL/dI * w * Z`. The weights
//! themselves are never trained on this path; on a memristor layer they
//! are the electroformed conductances.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::DifferentialCrossbar;
use crate::error::{Error, Result};
use crate::snn::kernels::ConvGeometry;

/// Number of synapses a layer of `n` keeps at `k_percent`.
pub fn kept_count(n: usize, k_percent: f32) -> usize {
    // k * n is exact for any realistic layer size, so the division is the
    // only rounding step; the epsilon guards against it landing just above
    // an integer.
    let m = (k_percent as f64 * n as f64 / 100.0 - 1e-9).ceil();
    (m.max(0.0) as usize).min(n)
}

fn check_k(k_percent: f32) -> Result<()> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Config(format!("k_percent must lie in (0, 100], got {k_percent}")));
    }
    Ok(())
}

/// Boolean mask selecting the `ceil(k% * n)` largest scores. Ties go to
/// the lowest flat index.
pub fn topk_mask(scores: &[f32], k_percent: f32) -> Result<Vec<bool>> {
    check_k(k_percent)?;
    if scores.is_empty() {
        return Err(Error::Argument("topk_mask on an empty score tensor".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Argument("scores must be finite".into()));
    }
    let n = scores.len();
    let m = kept_count(n, k_percent);
    let mut mask = vec![false; n];
    if m == n {
        mask.fill(true);
        return Ok(mask);
    }
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let order = |a: &u32, b: &u32| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    idx.select_nth_unstable_by(m - 1, order);
    for &i in &idx[..m] {
        mask[i as usize] = true;
    }
    Ok(mask)
}

/// Shape metadata of a scored layer. Weights are stored `[fan_in, fan_out]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv(ConvGeometry),
    Linear { fan_in: usize, fan_out: usize },
}

impl LayerKind {
    pub fn fan_in(&self) -> usize {
        match self {
            LayerKind::Conv(g) => g.fan_in(),
            LayerKind::Linear { fan_in, .. } => *fan_in,
        }
    }

    pub fn fan_out(&self) -> usize {
        match self {
            LayerKind::Conv(g) => g.out_channels,
            LayerKind::Linear { fan_out, .. } => *fan_out,
        }
    }

    pub fn len(&self) -> usize {
        self.fan_in() * self.fan_out()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a layer's frozen weights come from.
#[derive(Clone, Debug)]
pub enum WeightSource {
    Memristor(DifferentialCrossbar),
    Software(Vec<f32>),
}

impl WeightSource {
    pub fn len(&self) -> usize {
        match self {
            WeightSource::Memristor(x) => x.len(),
            WeightSource::Software(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noiseless weights.
    pub fn weights(&self) -> Vec<f32> {
        match self {
            WeightSource::Memristor(x) => x.weights(),
            WeightSource::Software(w) => w.clone(),
        }
    }

    /// Read the weights with multiplicative read noise. Software weights get
    /// the same `w + A * s * w` form.
    pub fn read<R: Rng + ?Sized>(&self, noise_scale: f32, rng: &mut R) -> Result<Vec<f32>> {
        match self {
            WeightSource::Memristor(x) => x.read_weights(noise_scale, rng),
            WeightSource::Software(w) => {
                if !(noise_scale >= 0.0) {
                    return Err(Error::Argument(format!("read noise scale must be >= 0, got {noise_scale}")));
                }
                if noise_scale == 0.0 {
                    return Ok(w.clone());
                }
                Ok(w.iter()
                    .map(|&v| {
                        let a: f32 = rng.sample(StandardNormal);
                        v + a * noise_scale * v
                    })
                    .collect())
            }
        }
    }
}

/// How mask changes map onto the device during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    /// The mask gates the weights numerically; conductances stay untouched
    /// until [`ScoredLayer::apply_final_topology`].
    #[default]
    Simulated,
    /// Every mask change RESETs pairs that leave the mask and SETs pairs
    /// that re-enter it.
    Physical,
}

/// A layer of frozen weights with pop-up scores and a cached top-k mask.
#[derive(Clone, Debug)]
pub struct ScoredLayer {
    name: String,
    kind: LayerKind,
    source: WeightSource,
    scores: Vec<f32>,
    k_percent: f32,
    mask: Vec<bool>,
    mode: MaskMode,
    scores_rev: u64,
    mask_rev: u64,
    topology_applied: bool,
}

impl ScoredLayer {
    /// Wrap frozen weights. Scores start at `|w| / max|w|`, so the initial
    /// mask keeps the largest-magnitude weights.
    pub fn new(name: impl Into<String>, kind: LayerKind, source: WeightSource, k_percent: f32) -> Result<Self> {
        let w = source.weights();
        let max = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scores = if max > 0.0 {
            w.iter().map(|v| v.abs() / max).collect()
        } else {
            vec![0.0; w.len()]
        };
        Self::from_parts(name, kind, source, scores, k_percent, MaskMode::Simulated, false)
    }

    /// Rebuild a layer from stored parts, recomputing the mask.
    pub fn from_parts(
        name: impl Into<String>,
        kind: LayerKind,
        source: WeightSource,
        scores: Vec<f32>,
        k_percent: f32,
        mode: MaskMode,
        topology_applied: bool,
    ) -> Result<Self> {
        let name = name.into();
        if let LayerKind::Conv(g) = &kind {
            g.validate()?;
        }
        if kind.is_empty() {
            return Err(Error::Argument(format!("layer {name} has no synapses")));
        }
        if source.len() != kind.len() || scores.len() != kind.len() {
            return Err(Error::shape("scored layer", &[kind.fan_in(), kind.fan_out()], &[source.len(), scores.len()]));
        }
        if let WeightSource::Memristor(x) = &source {
            if x.rows() != kind.fan_in() || x.cols() != kind.fan_out() {
                return Err(Error::shape("crossbar", &[kind.fan_in(), kind.fan_out()], &[x.rows(), x.cols()]));
            }
        }
        let mask = topk_mask(&scores, k_percent)?;
        let mut layer = Self {
            name,
            kind,
            source,
            scores,
            k_percent,
            mask,
            mode: MaskMode::Simulated,
            scores_rev: 0,
            mask_rev: 0,
            topology_applied,
        };
        layer.set_mode(mode)?;
        Ok(layer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn source(&self) -> &WeightSource {
        &self.source
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn k_percent(&self) -> f32 {
        self.k_percent
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn topology_applied(&self) -> bool {
        self.topology_applied
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_is_current(&self) -> bool {
        self.scores_rev == self.mask_rev
    }

    /// Switch mask mode. Entering physical mode RESETs every pair outside
    /// the current mask.
    pub fn set_mode(&mut self, mode: MaskMode) -> Result<()> {
        self.mode = mode;
        if mode == MaskMode::Physical {
            if let WeightSource::Memristor(x) = &mut self.source {
                let outside: Vec<bool> = self.mask.iter().map(|m| !m).collect();
                x.reset_pairs(&outside)?;
            }
        }
        Ok(())
    }

    /// Direct write access to the scores. The mask goes stale until
    /// [`refresh_mask`](Self::refresh_mask) is called.
    pub fn scores_mut(&mut self) -> &mut [f32] {
        self.scores_rev += 1;
        &mut self.scores
    }

    /// Recompute the top-k mask from the scores. In physical mode pairs
    /// leaving the mask are RESET and pairs re-entering it are SET.
    pub fn refresh_mask(&mut self) -> Result<()> {
        let mask = topk_mask(&self.scores, self.k_percent)?;
        if self.mode == MaskMode::Physical {
            if let WeightSource::Memristor(x) = &mut self.source {
                let leaving: Vec<bool> = self.mask.iter().zip(&mask).map(|(&o, &n)| o && !n).collect();
                let entering: Vec<bool> = self.mask.iter().zip(&mask).map(|(&o, &n)| !o && n).collect();
                x.reset_pairs(&leaving)?;
                x.set_pairs(&entering)?;
            }
        }
        self.mask = mask;
        self.mask_rev = self.scores_rev;
        Ok(())
    }

    /// Weights the forward pass uses: a read of the source gated by the
    /// mask. Once the final topology is physically applied the mask is
    /// carried by the device itself, so reads are used as-is.
    pub fn effective_weights<R: Rng + ?Sized>(&self, noise_scale: f32, rng: &mut R) -> Result<Vec<f32>> {
        if !self.mask_is_current() {
            return Err(Error::StaleMask {
                layer: self.name.clone(),
            });
        }
        let mut w = self.source.read(noise_scale, rng)?;
        let physical = self.topology_applied && matches!(self.source, WeightSource::Memristor(_));
        if !physical {
            for (v, &m) in w.iter_mut().zip(&self.mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
        Ok(w)
    }

    fn check_grad(&self, grad: &[f32]) -> Result<()> {
        if grad.len() != self.len() {
            return Err(Error::shape("synapse gradient", &[self.kind.fan_in(), self.kind.fan_out()], &[grad.len()]));
        }
        Ok(())
    }

    /// Score gradient from the gradient w.r.t. the effective weights:
    /// `dL/ds_ij = (sum dL/dI_i * Z_j) * w_ij`, with no mask gating.
    pub fn score_grad(&self, weight_grad: &[f32]) -> Result<Vec<f32>> {
        self.check_grad(weight_grad)?;
        let w = self.source.weights();
        Ok(weight_grad.iter().zip(&w).map(|(g, w)| g * w).collect())
    }

    /// Plain straight-through step `s <- s - lr * dL/dI * w * Z` for every
    /// synapse. `weight_grad` is `dL/dI * Z` summed over every position,
    /// sample and timestep the synapse was applied at (the weight gradient
    /// the tape reports). The mask is recomputed afterwards.
    pub fn ste_update(&mut self, weight_grad: &[f32], lr: f32) -> Result<()> {
        let g = self.score_grad(weight_grad)?;
        let step: Vec<f32> = g.iter().map(|v| lr * v).collect();
        self.apply_score_step(&step)
    }

    /// `s <- s - step`, then refresh the mask.
    pub fn apply_score_step(&mut self, step: &[f32]) -> Result<()> {
        self.check_grad(step)?;
        for (s, d) in self.scores_mut().iter_mut().zip(step) {
            *s -= d;
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("non-finite score in layer {}", self.name)));
        }
        self.refresh_mask()
    }

    /// `w <- w - step`. Only software weights can be tuned.
    pub fn apply_weight_step(&mut self, step: &[f32]) -> Result<()> {
        self.check_grad(step)?;
        match &mut self.source {
            WeightSource::Software(w) => {
                for (v, d) in w.iter_mut().zip(step) {
                    *v -= d;
                }
                Ok(())
            }
            WeightSource::Memristor(_) => Err(Error::Argument(format!(
                "layer {} holds device conductances, which are never fine-tuned",
                self.name
            ))),
        }
    }

    /// One-shot programming error `w <- w + A * scale * w`. On a crossbar it
    /// acts on every cell; on software weights `rng` supplies the noise.
    pub fn perturb_programming<R: Rng + ?Sized>(&mut self, scale: f32, rng: &mut R) -> Result<()> {
        match &mut self.source {
            WeightSource::Memristor(x) => x.perturb_programming(scale),
            WeightSource::Software(w) => {
                if !(scale >= 0.0) {
                    return Err(Error::Argument(format!("programming noise scale must be >= 0, got {scale}")));
                }
                for v in w.iter_mut() {
                    let a: f32 = rng.sample(StandardNormal);
                    *v += a * scale * *v;
                }
                Ok(())
            }
        }
    }

    /// Overwrite software weights, e.g. after an external perturbation.
    pub fn replace_software_weights(&mut self, weights: Vec<f32>) -> Result<()> {
        match &mut self.source {
            WeightSource::Software(w) if w.len() == weights.len() => {
                *w = weights;
                Ok(())
            }
            WeightSource::Software(w) => Err(Error::shape("software weights", &[w.len()], &[weights.len()])),
            WeightSource::Memristor(_) => {
                Err(Error::Argument(format!("layer {} holds device conductances", self.name)))
            }
        }
    }

    /// RESET every pair outside the mask. Returns the number of pairs
    /// switched. No-op on software weights.
    pub fn apply_final_topology(&mut self) -> Result<usize> {
        let n = match &mut self.source {
            WeightSource::Memristor(x) => {
                let outside: Vec<bool> = self.mask.iter().map(|m| !m).collect();
                x.reset_pairs(&outside)?
            }
            WeightSource::Software(_) => 0,
        };
        self.topology_applied = true;
        Ok(n)
    }
}

/// What the optimizer updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateTarget {
    #[default]
    Scores,
    Weights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f32,
    /// Cosine-decay the learning rate to zero over the run.
    pub cosine: bool,
    pub target: UpdateTarget,
    pub mask_mode: MaskMode,
    /// RESET out-of-mask pairs once training ends.
    pub final_topology: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 5,
            batch_size: 32,
            momentum: 0.9,
            cosine: true,
            target: UpdateTarget::Scores,
            mask_mode: MaskMode::Simulated,
            final_topology: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and an optional cosine learning-rate decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f32,
    momentum: f32,
    cosine: bool,
    total_steps: usize,
    step: usize,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, cosine: bool, total_steps: usize, sizes: &[usize]) -> Self {
        Self {
            lr,
            momentum,
            cosine,
            total_steps: total_steps.max(1),
            step: 0,
            velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Learning rate for the current step.
    pub fn current_lr(&self) -> f32 {
        if !self.cosine {
            return self.lr;
        }
        let frac = self.step.min(self.total_steps) as f64 / self.total_steps as f64;
        (self.lr as f64 * 0.5 * (1.0 + (PI * frac).cos())) as f32
    }

    /// Turn one gradient per slot into the step to subtract, then advance
    /// the schedule.
    pub fn steps(&mut self, grads: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if grads.len() != self.velocity.len() {
            return Err(Error::shape("optimizer slots", &[self.velocity.len()], &[grads.len()]));
        }
        let lr = self.current_lr();
        let mut out = Vec::with_capacity(grads.len());
        for (v, g) in self.velocity.iter_mut().zip(grads) {
            if v.len() != g.len() {
                return Err(Error::shape("optimizer slot", &[v.len()], &[g.len()]));
            }
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = self.momentum * *vi + gi;
            }
            out.push(v.iter().map(|vi| lr * vi).collect());
        }
        self.step += 1;
        Ok(out)
    }
}

/// Loss, summed per-sample metric and effective-weight gradients of one
/// minibatch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Mean loss over the batch.
    pub loss: f32,
    /// Sum of the per-sample metric (correct count, MSE, ...).
    pub metric_sum: f64,
    /// `dL/dW_eff` per layer, in layer order.
    pub weight_grads: Vec<Vec<f32>>,
}

/// A network whose layers are all [`ScoredLayer`]s.
pub trait Trainable {
    type Data: ?Sized;

    fn layers(&self) -> &[ScoredLayer];
    fn layers_mut(&mut self) -> &mut [ScoredLayer];

    /// Forward and backward over the samples `batch` of `data` with the
    /// given effective weights.
    fn forward_backward(
        &self,
        data: &Self::Data,
        batch: &[usize],
        weights: &[Vec<f32>],
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchOutput>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f32,
    pub metric: f64,
    pub learning_rate: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Noiseless effective weights of every layer.
pub fn clean_weights<M: Trainable + ?Sized>(model: &M) -> Result<Vec<Vec<f32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.layers().iter().map(|l| l.effective_weights(0.0, &mut rng)).collect()
}

/// Train `model` on the samples `indices` of `data`.
///
/// Each epoch shuffles the indices with a seeded RNG, then for every
/// minibatch runs forward/backward at zero read noise and applies one
/// optimizer step to the scores (or, for [`UpdateTarget::Weights`], to the
/// software weights). Masks are recomputed after every step.
pub fn train<M: Trainable>(
    model: &mut M,
    data: &M::Data,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    for layer in model.layers_mut() {
        layer.set_mode(cfg.mask_mode)?;
    }
    let steps_per_epoch = indices.len().div_ceil(cfg.batch_size);
    let sizes: Vec<usize> = model.layers().iter().map(ScoredLayer::len).collect();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.cosine, cfg.epochs * steps_per_epoch, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order = indices.to_vec();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = opt.current_lr();
        let (mut loss_sum, mut metric_sum) = (0.0f64, 0.0f64);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weights = clean_weights(model)?;
            let out = model.forward_backward(data, batch, &weights, &mut model_rng)?;
            if !out.loss.is_finite() || out.weight_grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss as f64 * batch.len() as f64;
            metric_sum += out.metric_sum;
            let layers = model.layers_mut();
            let grads = match cfg.target {
                UpdateTarget::Scores => layers
                    .iter()
                    .zip(&out.weight_grads)
                    .map(|(l, g)| l.score_grad(g))
                    .collect::<Result<Vec<_>>>()?,
                UpdateTarget::Weights => layers
                    .iter()
                    .zip(out.weight_grads)
                    .map(|(l, mut g)| {
                        for (gi, &m) in g.iter_mut().zip(l.mask()) {
                            if !m {
                                *gi = 0.0;
                            }
                        }
                        g
                    })
                    .collect(),
            };
            let updates = opt.steps(&grads)?;
            for (layer, up) in layers.iter_mut().zip(&updates) {
                match cfg.target {
                    UpdateTarget::Scores => layer.apply_score_step(up)?,
                    UpdateTarget::Weights => layer.apply_weight_step(up)?,
                }
            }
        }
        let n = order.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            loss: (loss_sum / n) as f32,
            metric: metric_sum / n,
            learning_rate: lr,
        });
    }
    if cfg.final_topology {
        apply_final_topology(model)?;
    }
    Ok(history)
}

/// RESET the out-of-mask pairs of every memristor layer.
pub fn apply_final_topology<M: Trainable + ?Sized>(model: &mut M) -> Result<usize> {
    let mut total = 0;
    for layer in model.layers_mut() {
        total += layer.apply_final_topology()?;
    }
    Ok(total)
}
