//! Comparison arms: weight tuning, pruning over software or memristor
//! weights, and untrained random networks of both kinds.
//!
//! Every arm runs the same forward code. Weight tuning keeps a full mask
//! and sends gradients to the weights; the pruning arms send them to the
//! scores; random arms skip training.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SpikeDataset;
use crate::dynamic::{StopPolicy, Trace};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{layer_seed, InitConfig, InpaintData, ReadNoise, ScnnModel, SpikingVae, WeightKind};
use crate::pruning::{train, ScoredLayer, TrainConfig, TrainHistory, Trainable, UpdateTarget, WeightSource};
use crate::snn::lif::LifParams;
use crate::snn::loss::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    WeightTuning,
    SoftwarePruning,
    MemristorPruning,
    RandomSoftware,
    RandomMemristor,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::WeightTuning,
        BaselineKind::SoftwarePruning,
        BaselineKind::MemristorPruning,
        BaselineKind::RandomSoftware,
        BaselineKind::RandomMemristor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::WeightTuning => "weight-tuning",
            BaselineKind::SoftwarePruning => "software-pruning",
            BaselineKind::MemristorPruning => "memristor-pruning",
            BaselineKind::RandomSoftware => "random-software",
            BaselineKind::RandomMemristor => "random-memristor",
        }
    }

    pub fn weights(self) -> WeightKind {
        match self {
            BaselineKind::MemristorPruning | BaselineKind::RandomMemristor => WeightKind::Memristor,
            _ => WeightKind::Software,
        }
    }

    pub fn is_trained(self) -> bool {
        !matches!(self, BaselineKind::RandomSoftware | BaselineKind::RandomMemristor)
    }

    /// Initialisation of this arm derived from the shared one.
    pub fn init(self, base: &InitConfig) -> InitConfig {
        InitConfig {
            weights: self.weights(),
            k_percent: if self == BaselineKind::WeightTuning {
                100.0
            } else {
                base.k_percent
            },
            ..base.clone()
        }
    }

    /// Training settings of this arm, or `None` for untrained arms.
    pub fn train_config(self, base: &TrainConfig, weight_lr: f32) -> Option<TrainConfig> {
        match self {
            BaselineKind::WeightTuning => Some(TrainConfig {
                target: UpdateTarget::Weights,
                learning_rate: weight_lr,
                final_topology: false,
                ..base.clone()
            }),
            BaselineKind::SoftwarePruning | BaselineKind::MemristorPruning => Some(TrainConfig {
                target: UpdateTarget::Scores,
                ..base.clone()
            }),
            _ => None,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown arm `{s}`; expected one of {}", names(&Self::ALL))))
    }
}

fn names<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    NmnistClassify,
    MnistInpaint,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::NmnistClassify, Task::MnistInpaint];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::NmnistClassify => "nmnist-classify",
            Task::MnistInpaint => "mnist-inpaint",
        }
    }

    /// Whether a larger metric is better (accuracy) or worse (MSE).
    pub fn higher_is_better(self) -> bool {
        self == Task::NmnistClassify
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown task `{s}`; expected one of {}", names(&Self::ALL))))
    }
}

/// Settings shared by all arms of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Learning rate of the weight-tuning arm.
    pub weight_learning_rate: f32,
    pub lif: LifParams,
    pub t_steps: usize,
    pub kl_weight: f32,
    /// Seed of evaluation-time randomness (read noise, latent draws).
    pub eval_seed: u64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            train: TrainConfig::default(),
            weight_learning_rate: 0.1,
            lif: LifParams::default(),
            t_steps: 10,
            kl_weight: 0.01,
            eval_seed: 0,
        }
    }
}

/// Dataset and split of one task.
#[derive(Clone, Copy, Debug)]
pub enum TaskData<'a> {
    Classify {
        data: &'a SpikeDataset,
        train: &'a [usize],
        test: &'a [usize],
    },
    Inpaint {
        data: &'a InpaintData,
        train: &'a [usize],
        test: &'a [usize],
    },
}

impl TaskData<'_> {
    pub fn task(&self) -> Task {
        match self {
            TaskData::Classify { .. } => Task::NmnistClassify,
            TaskData::Inpaint { .. } => Task::MnistInpaint,
        }
    }

    pub fn test(&self) -> &[usize] {
        match self {
            TaskData::Classify { test, .. } | TaskData::Inpaint { test, .. } => test,
        }
    }
}

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Scnn(ScnnModel),
    Vae(SpikingVae),
}

impl TrainedModel {
    pub fn build(task: Task, init: &InitConfig, cfg: &ArmConfig) -> Result<Self> {
        Ok(match task {
            Task::NmnistClassify => TrainedModel::Scnn(ScnnModel::new(init, cfg.lif, cfg.t_steps)?),
            Task::MnistInpaint => TrainedModel::Vae(SpikingVae::new(init, cfg.lif, cfg.t_steps, cfg.kl_weight)?),
        })
    }

    pub fn task(&self) -> Task {
        match self {
            TrainedModel::Scnn(_) => Task::NmnistClassify,
            TrainedModel::Vae(_) => Task::MnistInpaint,
        }
    }

    pub fn layers(&self) -> &[ScoredLayer] {
        match self {
            TrainedModel::Scnn(m) => m.layers(),
            TrainedModel::Vae(m) => m.layers(),
        }
    }

    pub fn layers_mut(&mut self) -> &mut [ScoredLayer] {
        match self {
            TrainedModel::Scnn(m) => m.layers_mut(),
            TrainedModel::Vae(m) => m.layers_mut(),
        }
    }

    pub fn t_steps(&self) -> usize {
        match self {
            TrainedModel::Scnn(m) => m.t_steps(),
            TrainedModel::Vae(m) => m.t_steps(),
        }
    }

    pub fn fit(&mut self, task: &TaskData, cfg: &TrainConfig) -> Result<TrainHistory> {
        match (self, task) {
            (TrainedModel::Scnn(m), TaskData::Classify { data, train: idx, .. }) => train(m, *data, idx, cfg),
            (TrainedModel::Vae(m), TaskData::Inpaint { data, train: idx, .. }) => train(m, *data, idx, cfg),
            _ => Err(Error::Argument("model and task do not match".into())),
        }
    }

    /// Full-length traces of the test split.
    pub fn traces(&self, task: &TaskData, noise: ReadNoise, seed: u64, policy: &StopPolicy) -> Result<Vec<Trace>> {
        match (self, task) {
            (TrainedModel::Scnn(m), TaskData::Classify { data, test, .. }) => m.traces(data, test, noise, seed, policy),
            (TrainedModel::Vae(m), TaskData::Inpaint { data, test, .. }) => m.traces(data, test, noise, seed, policy),
            _ => Err(Error::Argument("model and task do not match".into())),
        }
    }

    /// Test metric at full length: accuracy, or reconstruction MSE.
    pub fn evaluate(&self, task: &TaskData, noise: ReadNoise, seed: u64) -> Result<f64> {
        let policy = StopPolicy::no_early_stop(self.t_steps());
        let traces = self.traces(task, noise, seed, &policy)?;
        let steps = vec![self.t_steps(); traces.len()];
        task_metric(task, &traces, &steps)
    }
}

/// Per-sample metric of a test-split output: 1/0 correctness or MSE.
pub fn sample_metric(task: &TaskData, position: usize, output: &[f32]) -> Result<f64> {
    match task {
        TaskData::Classify { data, test, .. } => {
            Ok((argmax(output) == data.labels[test[position]] as usize) as u8 as f64)
        }
        TaskData::Inpaint { data, test, .. } => metrics::recon_mse(data.clean.image(test[position]), output),
    }
}

/// Mean metric of traces stopped at `steps`.
pub fn task_metric(task: &TaskData, traces: &[Trace], steps: &[usize]) -> Result<f64> {
    if traces.len() != task.test().len() || steps.len() != traces.len() {
        return Err(Error::shape("task metric", &[task.test().len()], &[traces.len()]));
    }
    if traces.is_empty() {
        return Err(Error::Argument("metric over zero samples".into()));
    }
    let mut sum = 0.0;
    for (i, (tr, &t)) in traces.iter().zip(steps).enumerate() {
        sum += sample_metric(task, i, tr.output_at(t))?;
    }
    Ok(sum / traces.len() as f64)
}

/// Result of one arm.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub kind: BaselineKind,
    pub model: TrainedModel,
    pub history: TrainHistory,
    /// Noiseless full-length test metric.
    pub metric: f64,
}

/// Build, train (unless random) and evaluate one arm.
pub fn run_baseline(kind: BaselineKind, task: &TaskData, cfg: &ArmConfig) -> Result<ArmResult> {
    let mut model = TrainedModel::build(task.task(), &kind.init(&cfg.init), cfg)?;
    let history = match kind.train_config(&cfg.train, cfg.weight_learning_rate) {
        Some(tc) => model.fit(task, &tc)?,
        None => TrainHistory::default(),
    };
    let metric = model.evaluate(task, ReadNoise::NONE, cfg.eval_seed)?;
    Ok(ArmResult {
        kind,
        model,
        history,
        metric,
    })
}

/// Functional form of deployment-time programming noise on software
/// weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProgrammingNoiseForm {
    /// `w <- w + A * scale * w`.
    #[default]
    Multiplicative,
    /// Map each weight onto a differential pair centred on `mu_on`,
    /// spanning `[mu_off, 2 mu_on - mu_off]`, perturb both cells as
    /// `g <- g + A * scale * g`, and map back.
    ConductanceMapped,
}

/// Apply programming noise to every layer of `model`. Memristor layers
/// always perturb their cells.
pub fn perturb_model<R: Rng + ?Sized>(
    model: &mut TrainedModel,
    scale: f32,
    form: ProgrammingNoiseForm,
    rng: &mut R,
) -> Result<()> {
    for layer in model.layers_mut() {
        match (form, layer.source()) {
            (ProgrammingNoiseForm::ConductanceMapped, WeightSource::Software(w)) => {
                let device = crate::device::DeviceConfig::default();
                let w = conductance_mapped_noise(w, scale, device.mu_on, device.mu_off, rng)?;
                layer.replace_software_weights(w)?;
            }
            _ => layer.perturb_programming(scale, rng)?,
        }
    }
    Ok(())
}

/// Conductance-mapped programming noise on a weight vector.
pub fn conductance_mapped_noise<R: Rng + ?Sized>(
    w: &[f32],
    scale: f32,
    mu_on: f32,
    mu_off: f32,
    rng: &mut R,
) -> Result<Vec<f32>> {
    if !(scale >= 0.0) {
        return Err(Error::Argument(format!("programming noise scale must be >= 0, got {scale}")));
    }
    let max = w.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    if max == 0.0 || scale == 0.0 {
        return Ok(w.to_vec());
    }
    let sc = max / (2.0 * (mu_on - mu_off));
    Ok(w.iter()
        .map(|&v| {
            let d = v / (2.0 * sc);
            let mut g = [mu_on + d, mu_on - d];
            for c in &mut g {
                let a: f32 = rng.sample(StandardNormal);
                *c = (*c + a * scale * *c).max(0.0);
            }
            (g[0] - g[1]) * sc
        })
        .collect())
}

/// One cell of a programming-noise sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub kind: BaselineKind,
    pub noise_scale: f32,
    pub draw: usize,
    pub metric: f64,
    pub n_samples: usize,
}

pub const NOISE_HEADER: &str = "kind,noise_scale,draw,metric,n_samples";

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = format!("{NOISE_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.kind, r.noise_scale, r.draw, r.metric, r.n_samples));
    }
    s
}

/// Seed of programming-noise draw `draw`.
pub fn draw_seed(seed: u64, draw: usize) -> u64 {
    layer_seed(seed ^ 0x005e_ed0f_d4a5, draw)
}

/// Metric vs programming-noise scale.
///
/// Weight tuning perturbs the trained weights of `trained` at deployment;
/// each draw uses one noise stream across all scales. Pruning arms perturb
/// the initial weights of the same device with a fresh error per draw and
/// retrain; random arms do the same without training.
pub fn noise_sensitivity(
    kind: BaselineKind,
    task: &TaskData,
    scales: &[f32],
    draws: usize,
    cfg: &ArmConfig,
    trained: Option<&TrainedModel>,
    form: ProgrammingNoiseForm,
) -> Result<Vec<NoiseRow>> {
    if let Some(s) = scales.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Argument(format!("noise scales must be >= 0, got {s}")));
    }
    let n = task.test().len();
    let mut rows = Vec::with_capacity(scales.len() * draws);
    if kind == BaselineKind::WeightTuning {
        let owned;
        let base = match trained {
            Some(m) => m,
            None => {
                owned = run_baseline(kind, task, cfg)?.model;
                &owned
            }
        };
        for draw in 0..draws {
            for &scale in scales {
                let mut m = base.clone();
                perturb_model(&mut m, scale, form, &mut ChaCha8Rng::seed_from_u64(draw_seed(cfg.init.seed, draw)))?;
                let metric = m.evaluate(task, ReadNoise::NONE, cfg.eval_seed)?;
                rows.push(NoiseRow {
                    kind,
                    noise_scale: scale,
                    draw,
                    metric,
                    n_samples: n,
                });
            }
        }
        return Ok(rows);
    }
    for &scale in scales {
        for draw in 0..draws {
            let init = InitConfig {
                programming_noise: scale,
                programming_seed: Some(draw_seed(cfg.init.seed, draw)),
                ..cfg.init.clone()
            };
            let arm = ArmConfig { init, ..cfg.clone() };
            let metric = run_baseline(kind, task, &arm)?.metric;
            rows.push(NoiseRow {
                kind,
                noise_scale: scale,
                draw,
                metric,
                n_samples: n,
            });
        }
    }
    Ok(rows)
}

/// A row of the arm comparison table, in the sweep schema plus `kind`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub kind: BaselineKind,
    pub threshold: f32,
    pub metric: f64,
    pub avg_timesteps: f64,
    pub n_samples: usize,
}

pub const BASELINE_HEADER: &str = "kind,threshold,metric,avg_timesteps,n_samples";

pub fn baseline_csv(rows: &[BaselineRow]) -> String {
    let mut s = format!("{BASELINE_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.kind, r.threshold, r.metric, r.avg_timesteps, r.n_samples));
    }
    s
}

impl ArmResult {
    /// The arm's row at full length (no early stop).
    pub fn row(&self, n_samples: usize) -> BaselineRow {
        BaselineRow {
            kind: self.kind,
            threshold: f32::NAN,
            metric: self.metric,
            avg_timesteps: self.model.t_steps() as f64,
            n_samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageDataset;

    #[test]
    fn kinds_parse_and_print() {
        for k in BaselineKind::ALL {
            assert_eq!(k.as_str().parse::<BaselineKind>().unwrap(), k);
            assert_eq!(k.to_string(), k.as_str());
        }
        assert!("weight_tuning".parse::<BaselineKind>().is_err());
        assert!("hybrid".parse::<BaselineKind>().is_err());
        assert_eq!("mnist-inpaint".parse::<Task>().unwrap(), Task::MnistInpaint);
        assert!("cifar".parse::<Task>().is_err());
    }

    #[test]
    fn arm_settings() {
        let base = InitConfig::default();
        assert_eq!(BaselineKind::WeightTuning.init(&base).k_percent, 100.0);
        assert_eq!(BaselineKind::WeightTuning.init(&base).weights, WeightKind::Software);
        assert_eq!(BaselineKind::RandomMemristor.init(&base).weights, WeightKind::Memristor);
        let tc = TrainConfig::default();
        let wt = BaselineKind::WeightTuning.train_config(&tc, 0.05).unwrap();
        assert_eq!((wt.target, wt.learning_rate), (UpdateTarget::Weights, 0.05));
        assert_eq!(wt.momentum, tc.momentum);
        assert_eq!(BaselineKind::MemristorPruning.train_config(&tc, 0.05).unwrap().learning_rate, tc.learning_rate);
        assert!(BaselineKind::RandomSoftware.train_config(&tc, 0.05).is_none());
    }

    #[test]
    fn conductance_mapping_is_exact_without_noise() {
        let w = [0.5f32, -1.0, 0.25, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = conductance_mapped_noise(&w, 0.0, 100.0, 1.0, &mut rng).unwrap();
        assert_eq!(out, w);
        let out = conductance_mapped_noise(&w, 1e-7, 100.0, 1.0, &mut rng).unwrap();
        for (a, b) in out.iter().zip(&w) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert!(conductance_mapped_noise(&w, -0.1, 100.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn conductance_noise_std_matches_mapping() {
        // sc = 1/198; each cell noise has std 0.1 * G ~ 10 uS at G ~ 100,
        // so the weight std is sqrt(2) * 10 * sc, independent of w.
        let w = vec![0.0f32; 20_000];
        let mut w2 = w.clone();
        w2[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = conductance_mapped_noise(&w2, 0.1, 100.0, 1.0, &mut rng).unwrap();
        let var = out[1..].iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / (out.len() - 1) as f64;
        let expect = 2f64.sqrt() * 10.0 / 198.0;
        assert!((var.sqrt() / expect - 1.0).abs() < 0.03, "{} vs {expect}", var.sqrt());
    }

    fn tiny_inpaint() -> InpaintData {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pixels = (0..6 * 784).map(|_| rng.random::<f32>()).collect();
        InpaintData::new(ImageDataset {
            height: 28,
            width: 28,
            pixels,
            labels: vec![0; 6],
        })
        .unwrap()
    }

    #[test]
    fn scale_zero_weight_tuning_keeps_clean_metric() {
        let data = tiny_inpaint();
        let (train, test) = ([0usize, 1, 2, 3], [4usize, 5]);
        let task = TaskData::Inpaint {
            data: &data,
            train: &train,
            test: &test,
        };
        let cfg = ArmConfig {
            t_steps: 2,
            train: TrainConfig {
                epochs: 1,
                batch_size: 2,
                ..TrainConfig::default()
            },
            ..ArmConfig::default()
        };
        let arm = run_baseline(BaselineKind::WeightTuning, &task, &cfg).unwrap();
        let rows = noise_sensitivity(
            BaselineKind::WeightTuning,
            &task,
            &[0.0, 0.5],
            2,
            &cfg,
            Some(&arm.model),
            ProgrammingNoiseForm::Multiplicative,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].metric, arm.metric);
        assert_eq!(rows[2].metric, arm.metric);
        assert_ne!(rows[1].metric, arm.metric);
        assert!(noise_csv(&rows).starts_with(NOISE_HEADER));
        assert!(noise_sensitivity(
            BaselineKind::WeightTuning,
            &task,
            &[-1.0],
            1,
            &cfg,
            Some(&arm.model),
            ProgrammingNoiseForm::Multiplicative
        )
        .is_err());
    }

    #[test]
    fn random_arms_are_reproducible() {
        let data = tiny_inpaint();
        let (train, test) = ([0usize, 1], [2usize, 3]);
        let task = TaskData::Inpaint {
            data: &data,
            train: &train,
            test: &test,
        };
        let cfg = ArmConfig {
            t_steps: 2,
            ..ArmConfig::default()
        };
        let a = run_baseline(BaselineKind::RandomMemristor, &task, &cfg).unwrap();
        let b = run_baseline(BaselineKind::RandomMemristor, &task, &cfg).unwrap();
        assert_eq!(a.metric, b.metric);
        assert!(a.history.epochs.is_empty());
        let line = baseline_csv(&[a.row(2)]);
        assert!(line.starts_with(BASELINE_HEADER));
        assert!(line.contains("random-memristor,NaN,"));
    }
}
