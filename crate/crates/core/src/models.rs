//! Network architectures assembled from scored layers.
//!
//! * [`ScnnModel`]: the event-frame classifier, `12C5-P2-64C5-P2-FC10`
//!   over 2x34x34 inputs with a non-spiking readout.
//! * [`SpikingVae`]: a 32-channel spiking autoencoder with a Bernoulli
//!   latent, used for inpainting 28x28 digits.
//! * [`SpikingMlp`]: a one-hidden-layer toy network for sanity tasks.
//!
//! Every model has two forward paths over the same kernels: a batched
//! taped pass for training and a stepwise [`Episode`] for inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{sample_rng, ImageDataset, SpikeDataset, MNIST_SIZE, NMNIST_SIZE};
use crate::device::{DeviceConfig, DifferentialCrossbar};
use crate::dynamic::{Episode, StopPolicy, Trace};
use crate::error::{Error, Result};
use crate::pruning::{BatchOutput, LayerKind, ScoredLayer, Trainable, WeightSource};
use crate::snn::kernels::{self, ConvGeometry};
use crate::snn::lif::{membrane, LifParams, LifState};
use crate::snn::loss::{bernoulli_kl, bernoulli_kl_grad, mse, mse_grad, softmax_cross_entropy};
use crate::snn::tape::{LifOut, ParamId, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    #[default]
    Memristor,
    Software,
}

/// How a model's frozen weights are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub weights: WeightKind,
    /// Multiplier on the Kaiming-normal standard deviation.
    pub gain: f32,
    pub k_percent: f32,
    /// Base device parameters; `weight_scale` and `seed` are set per layer.
    pub device: DeviceConfig,
    /// One-shot programming error applied to the drawn weights before
    /// scores are initialised.
    pub programming_noise: f32,
    pub seed: u64,
    /// Seed of the programming error alone. When set, draws share the
    /// electroformed device and differ only in the error realisation.
    pub programming_seed: Option<u64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            weights: WeightKind::Memristor,
            gain: 3.0,
            k_percent: 50.0,
            device: DeviceConfig::default(),
            programming_noise: 0.0,
            seed: 0,
            programming_seed: None,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of layer `index` under model seed `seed`.
pub fn layer_seed(seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix(index as u64 + 1))
}

/// Draw the frozen weights of one layer and wrap them with scores.
pub fn build_layer(name: &str, kind: LayerKind, init: &InitConfig, index: usize) -> Result<ScoredLayer> {
    if !(init.programming_noise >= 0.0) {
        return Err(Error::Config(format!("programming_noise must be >= 0, got {}", init.programming_noise)));
    }
    let (fan_in, fan_out) = (kind.fan_in(), kind.fan_out());
    let seed = layer_seed(init.seed, index);
    let source = match init.weights {
        WeightKind::Memristor => {
            let device = DeviceConfig {
                weight_scale: init.device.kaiming_weight_scale(fan_in, init.gain),
                seed,
                ..init.device.clone()
            };
            let mut x = DifferentialCrossbar::electroform(fan_in, fan_out, device)?;
            if let Some(ps) = init.programming_seed {
                x.reseed(layer_seed(ps, index));
            }
            x.perturb_programming(init.programming_noise)?;
            WeightSource::Memristor(x)
        }
        WeightKind::Software => {
            let std = init.gain * (2.0 / fan_in as f32).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("weight init: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w: Vec<f32> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            if let Some(ps) = init.programming_seed {
                rng = ChaCha8Rng::seed_from_u64(layer_seed(ps, index));
            }
            if init.programming_noise > 0.0 {
                for v in w.iter_mut() {
                    let a: f32 = rng.sample(StandardNormal);
                    *v += a * init.programming_noise * *v;
                }
            }
            WeightSource::Software(w)
        }
    };
    ScoredLayer::new(name, kind, source, init.k_percent)
}

fn check_layers(layers: &[ScoredLayer], expected: &[LayerKind], model: &str) -> Result<()> {
    if layers.len() != expected.len() {
        return Err(Error::Argument(format!("{model} needs {} layers, got {}", expected.len(), layers.len())));
    }
    for (l, k) in layers.iter().zip(expected) {
        if l.kind() != k {
            return Err(Error::Argument(format!("{model} layer {} has the wrong geometry", l.name())));
        }
    }
    Ok(())
}

/// Membrane update and spike emission for a whole population, in place.
fn lif_inplace(state: &mut LifState, x: &[f32], params: &LifParams) -> Result<()> {
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite input current at index {bad}")));
    }
    for ((u, o), &xi) in state.u.iter_mut().zip(state.o_prev.iter_mut()).zip(x) {
        *u = membrane(*u, *o, xi, params.tau_decay);
        *o = params.fire(*u);
    }
    Ok(())
}

fn bind_params(tape: &mut Tape, layers: &[ScoredLayer], weights: &[Vec<f32>]) -> Result<Vec<ParamId>> {
    if weights.len() != layers.len() {
        return Err(Error::shape("model weights", &[layers.len()], &[weights.len()]));
    }
    layers
        .iter()
        .zip(weights)
        .map(|(l, w)| tape.param(w.clone(), l.kind().fan_in(), l.kind().fan_out()))
        .collect()
}

/// Re-read weights through the noisy read path.
fn read_all<R: Rng + ?Sized>(layers: &[ScoredLayer], noise: f32, rng: &mut R) -> Result<Vec<Vec<f32>>> {
    layers.iter().map(|l| l.effective_weights(noise, rng)).collect()
}

/// Read-noise handling of an inference episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadNoise {
    pub scale: f32,
    /// Redraw the weights every timestep instead of once per episode.
    pub per_step: bool,
}

impl ReadNoise {
    pub const NONE: ReadNoise = ReadNoise {
        scale: 0.0,
        per_step: false,
    };

    pub fn per_episode(scale: f32) -> Self {
        Self { scale, per_step: false }
    }
}

// ---------------------------------------------------------------------------

/// The event-frame classifier.
#[derive(Clone, Debug)]
pub struct ScnnModel {
    layers: Vec<ScoredLayer>,
    lif: LifParams,
    t_steps: usize,
}

impl ScnnModel {
    pub const NAME: &'static str = "scnn-12c5-p2-64c5-p2-fc10";
    pub const CLASSES: usize = 10;
    pub const FEATURES: usize = 64 * 5 * 5;

    /// Layer geometry of the fixed architecture.
    pub fn layer_kinds() -> [LayerKind; 3] {
        let c1 = ConvGeometry::new(2, 12, 5, (NMNIST_SIZE, NMNIST_SIZE));
        let c2 = ConvGeometry::new(12, 64, 5, (c1.out_h() / 2, c1.out_w() / 2));
        let flat = c2.out_channels * (c2.out_h() / 2) * (c2.out_w() / 2);
        [
            LayerKind::Conv(c1),
            LayerKind::Conv(c2),
            LayerKind::Linear {
                fan_in: flat,
                fan_out: Self::CLASSES,
            },
        ]
    }

    pub fn new(init: &InitConfig, lif: LifParams, t_steps: usize) -> Result<Self> {
        let names = ["conv1", "conv2", "fc"];
        let layers = Self::layer_kinds()
            .iter()
            .zip(names)
            .enumerate()
            .map(|(i, (k, n))| build_layer(n, *k, init, i))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, lif, t_steps)
    }

    pub fn from_layers(layers: Vec<ScoredLayer>, lif: LifParams, t_steps: usize) -> Result<Self> {
        lif.validate()?;
        if t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        check_layers(&layers, &Self::layer_kinds(), Self::NAME)?;
        Ok(Self { layers, lif, t_steps })
    }

    pub fn lif(&self) -> &LifParams {
        &self.lif
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    fn geoms(&self) -> (ConvGeometry, ConvGeometry) {
        match (self.layers[0].kind(), self.layers[1].kind()) {
            (LayerKind::Conv(a), LayerKind::Conv(b)) => (*a, *b),
            _ => unreachable!("checked at construction"),
        }
    }

    fn check_data(&self, ds: &SpikeDataset) -> Result<()> {
        let want = [self.t_steps, 2, NMNIST_SIZE, NMNIST_SIZE];
        let got = [ds.t_steps, ds.channels, ds.height, ds.width];
        if got[1..] != want[1..] || got[0] < want[0] {
            return Err(Error::shape("classifier dataset", &want, &got));
        }
        Ok(())
    }

    /// Taped forward over `T` steps; returns the time-averaged logits.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        ds: &SpikeDataset,
        batch: &[usize],
        weights: &[Vec<f32>],
    ) -> Result<Var> {
        self.check_data(ds)?;
        let p = bind_params(tape, &self.layers, weights)?;
        let (g1, g2) = self.geoms();
        let b = batch.len();
        let (mut s1, mut s2): (Option<LifOut>, Option<LifOut>) = (None, None);
        let mut outs = Vec::with_capacity(self.t_steps);
        for t in 0..self.t_steps {
            let x = tape.input(Tensor::from_vec(&g1.in_shape(b), ds.batch_frame(batch, t))?);
            let c1 = tape.conv2d(x, p[0], g1)?;
            let l1 = tape.lif(c1, s1, self.lif)?;
            s1 = Some(l1);
            let a1 = tape.avgpool2(l1.o)?;
            let c2 = tape.conv2d(a1, p[1], g2)?;
            let l2 = tape.lif(c2, s2, self.lif)?;
            s2 = Some(l2);
            let a2 = tape.avgpool2(l2.o)?;
            outs.push(tape.linear(a2, p[2])?);
        }
        tape.mean(&outs)
    }

    /// Mean-over-time logits of a batch, through the taped path.
    pub fn logits(&self, ds: &SpikeDataset, batch: &[usize]) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let w = crate::pruning::clean_weights(self)?;
        let out = self.forward_tape(&mut tape, ds, batch, &w)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Start a stepwise episode with pre-read weights.
    pub fn stepper(&self, weights: Vec<Vec<f32>>, batch: usize) -> Result<ScnnStepper<'_>> {
        for (l, w) in self.layers.iter().zip(&weights) {
            if w.len() != l.len() {
                return Err(Error::shape("stepper weights", &[l.len()], &[w.len()]));
            }
        }
        let (g1, g2) = self.geoms();
        Ok(ScnnStepper {
            model: self,
            weights,
            batch,
            s1: LifState::zeros(batch * g1.out_len()),
            s2: LifState::zeros(batch * g2.out_len()),
            features: vec![0.0; batch * Self::FEATURES],
        })
    }

    /// Episode over sample `index` of `ds`. Read noise is drawn from
    /// `rng`, once per episode unless `noise.per_step` is set.
    pub fn episode<'a>(
        &'a self,
        ds: &'a SpikeDataset,
        index: usize,
        noise: ReadNoise,
        mut rng: ChaCha8Rng,
    ) -> Result<ScnnEpisode<'a>> {
        self.check_data(ds)?;
        let weights = read_all(&self.layers, noise.scale, &mut rng)?;
        Ok(ScnnEpisode {
            stepper: self.stepper(weights, 1)?,
            ds,
            index,
            t: 0,
            noise,
            rng,
        })
    }

    /// Full-length traces of `indices`. Sample `i` draws its read noise
    /// from `sample_rng(seed, i)`.
    pub fn traces(
        &self,
        ds: &SpikeDataset,
        indices: &[usize],
        noise: ReadNoise,
        seed: u64,
        policy: &StopPolicy,
    ) -> Result<Vec<Trace>> {
        indices
            .iter()
            .map(|&i| {
                let mut ep = self.episode(ds, i, noise, sample_rng(seed, i))?;
                Trace::record(&mut ep, policy)
            })
            .collect()
    }

    /// Time-averaged penultimate features (pooled second-layer spikes).
    pub fn embeddings(&self, ds: &SpikeDataset, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
        self.check_data(ds)?;
        let w = crate::pruning::clean_weights(self)?;
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let mut st = self.stepper(w.clone(), 1)?;
            let mut acc = vec![0.0f32; Self::FEATURES];
            for t in 0..self.t_steps {
                let frame: Vec<f32> = ds.frame(i, t).iter().map(|&v| v as f32).collect();
                st.step(&frame)?;
                for (a, f) in acc.iter_mut().zip(st.features()) {
                    *a += f;
                }
            }
            acc.iter_mut().for_each(|a| *a /= self.t_steps as f32);
            out.push(acc);
        }
        Ok(out)
    }
}

impl Trainable for ScnnModel {
    type Data = SpikeDataset;

    fn layers(&self) -> &[ScoredLayer] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [ScoredLayer] {
        &mut self.layers
    }

    fn forward_backward(
        &self,
        ds: &SpikeDataset,
        batch: &[usize],
        weights: &[Vec<f32>],
        _rng: &mut ChaCha8Rng,
    ) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let logits = self.forward_tape(&mut tape, ds, batch, weights)?;
        let labels: Vec<u8> = batch.iter().map(|&i| ds.labels[i]).collect();
        let (loss, grad, correct) = softmax_cross_entropy(tape.value(logits).data(), Self::CLASSES, &labels)?;
        let seed = Tensor::from_vec(&[batch.len(), Self::CLASSES], grad)?;
        let grads = tape.backward(vec![(logits, seed)])?;
        Ok(BatchOutput {
            loss,
            metric_sum: correct as f64,
            weight_grads: grads.into_params(),
        })
    }
}

/// Untaped stepwise forward of [`ScnnModel`] over a batch.
#[derive(Clone, Debug)]
pub struct ScnnStepper<'a> {
    model: &'a ScnnModel,
    weights: Vec<Vec<f32>>,
    batch: usize,
    s1: LifState,
    s2: LifState,
    features: Vec<f32>,
}

impl ScnnStepper<'_> {
    /// One timestep; `frame` is `[batch, 2, 34, 34]`. Returns the logits.
    pub fn step(&mut self, frame: &[f32]) -> Result<Vec<f32>> {
        let (g1, g2) = self.model.geoms();
        let b = self.batch;
        if frame.len() != b * g1.in_len() {
            return Err(Error::shape("classifier frame", &g1.in_shape(b), &[frame.len()]));
        }
        let lif = self.model.lif;
        let c1 = kernels::conv2d_forward(frame, b, &self.weights[0], &g1)?;
        lif_inplace(&mut self.s1, &c1, &lif)?;
        let a1 = kernels::avgpool2_forward(&self.s1.o_prev, b, 12, g1.out_h(), g1.out_w())?;
        let c2 = kernels::conv2d_forward(&a1, b, &self.weights[1], &g2)?;
        lif_inplace(&mut self.s2, &c2, &lif)?;
        self.features = kernels::avgpool2_forward(&self.s2.o_prev, b, 64, g2.out_h(), g2.out_w())?;
        kernels::linear_forward(&self.features, b, &self.weights[2], ScnnModel::FEATURES, ScnnModel::CLASSES)
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn set_weights(&mut self, weights: Vec<Vec<f32>>) {
        self.weights = weights;
    }
}

/// One classification episode over a stored sample.
pub struct ScnnEpisode<'a> {
    stepper: ScnnStepper<'a>,
    ds: &'a SpikeDataset,
    index: usize,
    t: usize,
    noise: ReadNoise,
    rng: ChaCha8Rng,
}

impl Episode for ScnnEpisode<'_> {
    fn step(&mut self) -> Result<Vec<f32>> {
        if self.t >= self.ds.t_steps {
            return Err(Error::Argument(format!("sample has only {} frames", self.ds.t_steps)));
        }
        if self.noise.per_step && self.t > 0 {
            let w = read_all(&self.stepper.model.layers, self.noise.scale, &mut self.rng)?;
            self.stepper.set_weights(w);
        }
        let frame: Vec<f32> = self.ds.frame(self.index, self.t).iter().map(|&v| v as f32).collect();
        self.t += 1;
        self.stepper.step(&frame)
    }
}

// ---------------------------------------------------------------------------

/// Independent Bernoulli draws. Probabilities must lie in `[0, 1]`.
pub fn bernoulli_sample<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> Result<Vec<f32>> {
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("Bernoulli probability {bad} outside [0, 1]")));
    }
    Ok(probs
        .iter()
        .map(|&p| {
            let u: f32 = rng.random();
            if u < p {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Reconstruction loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    /// The reported metric.
    pub mse: f32,
    pub kl: f32,
    pub total: f32,
}

/// `MSE(x, x_hat) + kl_weight * KL(q || Bernoulli(0.5))`, with the KL
/// averaged over latent units and timesteps.
pub fn vae_loss(
    reconstruction: &[f32],
    ground_truth: &[f32],
    latent_probs: &[Vec<f32>],
    kl_weight: f32,
) -> Result<VaeLoss> {
    let m = mse(ground_truth, reconstruction)?;
    let kl = if latent_probs.is_empty() {
        0.0
    } else {
        latent_probs.iter().map(|p| bernoulli_kl(p)).sum::<f32>() / latent_probs.len() as f32
    };
    Ok(VaeLoss {
        mse: m,
        kl,
        total: m + kl_weight * kl,
    })
}

/// Clean targets and occluded inputs of an inpainting task.
#[derive(Clone, Debug)]
pub struct InpaintData {
    pub clean: ImageDataset,
    pub masked: Vec<f32>,
}

impl InpaintData {
    pub fn new(clean: ImageDataset) -> Result<Self> {
        let mut masked = Vec::with_capacity(clean.pixels.len());
        for i in 0..clean.len() {
            let (m, _) = crate::data::apply_inpaint_mask(clean.image(i), clean.height, clean.width)?;
            masked.extend(m);
        }
        Ok(Self { clean, masked })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn masked_image(&self, i: usize) -> &[f32] {
        let n = self.clean.image_len();
        &self.masked[i * n..(i + 1) * n]
    }

    fn batch(&self, src: &[f32], indices: &[usize]) -> Vec<f32> {
        let n = self.clean.image_len();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        out
    }

    /// Mean pixel value over the given samples of the clean images.
    pub fn mean_pixel(&self, indices: &[usize]) -> f32 {
        let n = self.clean.image_len();
        let s: f64 = indices.iter().flat_map(|&i| self.clean.image(i).iter().map(|&v| v as f64)).sum();
        (s / (indices.len() * n).max(1) as f64) as f32
    }
}

/// Spiking VAE for 28x28 inpainting.
///
/// Encoder: three 3x3 convolutions (stride 2, 2, 1) to a 32x7x7 latent
/// whose sigmoid gives Bernoulli probabilities. Decoder: a 3x3
/// convolution, then two nearest-neighbour upsample + convolution stages
/// back to one 28x28 channel with a sigmoid readout `sigmoid(x - 3)`. All hidden layers are
/// LIF; the input image drives the first layer directly at every step.
#[derive(Clone, Debug)]
pub struct SpikingVae {
    layers: Vec<ScoredLayer>,
    lif: LifParams,
    t_steps: usize,
    kl_weight: f32,
}

impl SpikingVae {
    pub const NAME: &'static str = "spiking-vae-32";
    pub const CHANNELS: usize = 32;
    pub const LATENT_HW: usize = 7;
    /// Fixed bias of the readout sigmoid.
    pub const READOUT_OFFSET: f32 = 3.0;

    pub fn layer_kinds() -> [LayerKind; 6] {
        let c = Self::CHANNELS;
        let s = MNIST_SIZE;
        [
            ConvGeometry::new(1, c, 3, (s, s)).with_stride(2).with_padding(1),
            ConvGeometry::new(c, c, 3, (s / 2, s / 2)).with_stride(2).with_padding(1),
            ConvGeometry::new(c, c, 3, (s / 4, s / 4)).with_padding(1),
            ConvGeometry::new(c, c, 3, (s / 4, s / 4)).with_padding(1),
            ConvGeometry::new(c, c, 3, (s / 2, s / 2)).with_padding(1),
            ConvGeometry::new(c, 1, 3, (s, s)).with_padding(1),
        ]
        .map(LayerKind::Conv)
    }

    pub fn new(init: &InitConfig, lif: LifParams, t_steps: usize, kl_weight: f32) -> Result<Self> {
        let names = ["enc1", "enc2", "latent", "dec1", "dec2", "dec3"];
        let layers = Self::layer_kinds()
            .iter()
            .zip(names)
            .enumerate()
            .map(|(i, (k, n))| build_layer(n, *k, init, i))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, lif, t_steps, kl_weight)
    }

    pub fn from_layers(layers: Vec<ScoredLayer>, lif: LifParams, t_steps: usize, kl_weight: f32) -> Result<Self> {
        lif.validate()?;
        if t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        if !(kl_weight >= 0.0) {
            return Err(Error::Config(format!("kl_weight must be >= 0, got {kl_weight}")));
        }
        check_layers(&layers, &Self::layer_kinds(), Self::NAME)?;
        Ok(Self {
            layers,
            lif,
            t_steps,
            kl_weight,
        })
    }

    pub fn lif(&self) -> &LifParams {
        &self.lif
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn kl_weight(&self) -> f32 {
        self.kl_weight
    }

    fn geom(&self, i: usize) -> ConvGeometry {
        match self.layers[i].kind() {
            LayerKind::Conv(g) => *g,
            LayerKind::Linear { .. } => unreachable!("checked at construction"),
        }
    }

    /// Taped forward. Returns the running reconstruction after `T` steps
    /// and the latent probability values of every step.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        masked: &[f32],
        batch: usize,
        weights: &[Vec<f32>],
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        let p = bind_params(tape, &self.layers, weights)?;
        let g: Vec<ConvGeometry> = (0..6).map(|i| self.geom(i)).collect();
        let x = tape.input(Tensor::from_vec(&g[0].in_shape(batch), masked.to_vec())?);
        let mut st: [Option<LifOut>; 4] = [None; 4];
        let (mut frames, mut probs) = (Vec::new(), Vec::new());
        for _ in 0..self.t_steps {
            let c = tape.conv2d(x, p[0], g[0])?;
            let l = tape.lif(c, st[0], self.lif)?;
            st[0] = Some(l);
            let c = tape.conv2d(l.o, p[1], g[1])?;
            let l = tape.lif(c, st[1], self.lif)?;
            st[1] = Some(l);
            let logit = tape.conv2d(l.o, p[2], g[2])?;
            let q = tape.sigmoid(logit);
            let z = bernoulli_sample(tape.value(q).data(), rng)?;
            let shape = tape.value(q).shape().to_vec();
            let z = tape.straight_through(q, Tensor::from_vec(&shape, z)?)?;
            probs.push(q);
            let c = tape.conv2d(z, p[3], g[3])?;
            let l = tape.lif(c, st[2], self.lif)?;
            st[2] = Some(l);
            let u = tape.upsample2(l.o)?;
            let c = tape.conv2d(u, p[4], g[4])?;
            let l = tape.lif(c, st[3], self.lif)?;
            st[3] = Some(l);
            let u = tape.upsample2(l.o)?;
            let c = tape.conv2d(u, p[5], g[5])?;
            frames.push(tape.sigmoid_shifted(c, Self::READOUT_OFFSET));
        }
        Ok((tape.mean(&frames)?, probs))
    }

    pub fn stepper(&self, weights: Vec<Vec<f32>>, batch: usize) -> Result<VaeStepper<'_>> {
        for (l, w) in self.layers.iter().zip(&weights) {
            if w.len() != l.len() {
                return Err(Error::shape("stepper weights", &[l.len()], &[w.len()]));
            }
        }
        let sizes = [0, 1, 3, 4].map(|i| batch * self.geom(i).out_len());
        Ok(VaeStepper {
            model: self,
            weights,
            batch,
            states: sizes.map(LifState::zeros),
        })
    }

    /// Episode reconstructing masked sample `index`. The same `rng` drives
    /// read noise and the Bernoulli latent.
    pub fn episode<'a>(
        &'a self,
        data: &'a InpaintData,
        index: usize,
        noise: ReadNoise,
        mut rng: ChaCha8Rng,
    ) -> Result<VaeEpisode<'a>> {
        let weights = read_all(&self.layers, noise.scale, &mut rng)?;
        Ok(VaeEpisode {
            stepper: self.stepper(weights, 1)?,
            input: data.masked_image(index),
            noise,
            rng,
            t: 0,
        })
    }
}

impl SpikingVae {
    /// Full-length reconstruction traces of `indices`; sample `i` uses
    /// `sample_rng(seed, i)` for read noise and latent draws.
    pub fn traces(
        &self,
        data: &InpaintData,
        indices: &[usize],
        noise: ReadNoise,
        seed: u64,
        policy: &StopPolicy,
    ) -> Result<Vec<Trace>> {
        indices
            .iter()
            .map(|&i| {
                let mut ep = self.episode(data, i, noise, sample_rng(seed, i))?;
                Trace::record(&mut ep, policy)
            })
            .collect()
    }
}

impl Trainable for SpikingVae {
    type Data = InpaintData;

    fn layers(&self) -> &[ScoredLayer] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [ScoredLayer] {
        &mut self.layers
    }

    fn forward_backward(
        &self,
        data: &InpaintData,
        batch: &[usize],
        weights: &[Vec<f32>],
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let masked = data.batch(&data.masked, batch);
        let clean = data.batch(&data.clean.pixels, batch);
        let (recon, probs) = self.forward_tape(&mut tape, &masked, batch.len(), weights, rng)?;
        let r = tape.value(recon).data();
        let prob_values: Vec<Vec<f32>> = probs.iter().map(|&q| tape.value(q).data().to_vec()).collect();
        let loss = vae_loss(r, &clean, &prob_values, self.kl_weight)?;
        let n = data.clean.image_len();
        let metric: f64 = (0..batch.len())
            .map(|b| mse(&clean[b * n..(b + 1) * n], &r[b * n..(b + 1) * n]).map(|v| v as f64))
            .sum::<Result<f64>>()?;
        let mut seeds = vec![(recon, Tensor::from_vec(tape.value(recon).shape(), mse_grad(&clean, r))?)];
        if self.kl_weight > 0.0 {
            let w = self.kl_weight / probs.len() as f32;
            for (&q, pv) in probs.iter().zip(&prob_values) {
                seeds.push((q, Tensor::from_vec(tape.value(q).shape(), bernoulli_kl_grad(pv, w))?));
            }
        }
        let grads = tape.backward(seeds)?;
        Ok(BatchOutput {
            loss: loss.total,
            metric_sum: metric,
            weight_grads: grads.into_params(),
        })
    }
}

/// Untaped stepwise forward of [`SpikingVae`].
#[derive(Clone, Debug)]
pub struct VaeStepper<'a> {
    model: &'a SpikingVae,
    weights: Vec<Vec<f32>>,
    batch: usize,
    states: [LifState; 4],
}

impl VaeStepper<'_> {
    /// One timestep on `[batch, 1, 28, 28]` input. Returns the frame.
    pub fn step<R: Rng + ?Sized>(&mut self, input: &[f32], rng: &mut R) -> Result<Vec<f32>> {
        let m = self.model;
        let b = self.batch;
        let g: Vec<ConvGeometry> = (0..6).map(|i| m.geom(i)).collect();
        if input.len() != b * g[0].in_len() {
            return Err(Error::shape("inpaint input", &g[0].in_shape(b), &[input.len()]));
        }
        let c = Self::SPIKE_CH;
        let x = kernels::conv2d_forward(input, b, &self.weights[0], &g[0])?;
        lif_inplace(&mut self.states[0], &x, &m.lif)?;
        let x = kernels::conv2d_forward(&self.states[0].o_prev, b, &self.weights[1], &g[1])?;
        lif_inplace(&mut self.states[1], &x, &m.lif)?;
        let mut q = kernels::conv2d_forward(&self.states[1].o_prev, b, &self.weights[2], &g[2])?;
        q.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let z = bernoulli_sample(&q, rng)?;
        let x = kernels::conv2d_forward(&z, b, &self.weights[3], &g[3])?;
        lif_inplace(&mut self.states[2], &x, &m.lif)?;
        let (h, w) = (g[3].out_h(), g[3].out_w());
        let u = kernels::upsample2_forward(&self.states[2].o_prev, b, c, h, w)?;
        let x = kernels::conv2d_forward(&u, b, &self.weights[4], &g[4])?;
        lif_inplace(&mut self.states[3], &x, &m.lif)?;
        let u = kernels::upsample2_forward(&self.states[3].o_prev, b, c, 2 * h, 2 * w)?;
        let mut f = kernels::conv2d_forward(&u, b, &self.weights[5], &g[5])?;
        let off = SpikingVae::READOUT_OFFSET;
        f.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (off - *v).exp()));
        Ok(f)
    }

    const SPIKE_CH: usize = SpikingVae::CHANNELS;

    pub fn set_weights(&mut self, weights: Vec<Vec<f32>>) {
        self.weights = weights;
    }
}

/// One inpainting episode.
pub struct VaeEpisode<'a> {
    stepper: VaeStepper<'a>,
    input: &'a [f32],
    noise: ReadNoise,
    rng: ChaCha8Rng,
    t: usize,
}

impl Episode for VaeEpisode<'_> {
    fn step(&mut self) -> Result<Vec<f32>> {
        if self.noise.per_step && self.t > 0 {
            let w = read_all(&self.stepper.model.layers, self.noise.scale, &mut self.rng)?;
            self.stepper.set_weights(w);
        }
        self.t += 1;
        self.stepper.step(self.input, &mut self.rng)
    }
}

// ---------------------------------------------------------------------------

/// `in -> hidden (LIF) -> classes` with a mean-over-time readout. Inputs
/// are spike frames of `inputs` channels.
#[derive(Clone, Debug)]
pub struct SpikingMlp {
    layers: Vec<ScoredLayer>,
    lif: LifParams,
    t_steps: usize,
    inputs: usize,
    classes: usize,
}

impl SpikingMlp {
    pub fn new(
        inputs: usize,
        hidden: usize,
        classes: usize,
        init: &InitConfig,
        lif: LifParams,
        t_steps: usize,
    ) -> Result<Self> {
        let kinds = [
            LayerKind::Linear {
                fan_in: inputs,
                fan_out: hidden,
            },
            LayerKind::Linear {
                fan_in: hidden,
                fan_out: classes,
            },
        ];
        let layers = vec![
            build_layer("fc1", kinds[0], init, 0)?,
            build_layer("fc2", kinds[1], init, 1)?,
        ];
        Self::from_layers(layers, lif, t_steps)
    }

    /// A model with a single linear readout layer and no hidden layer.
    pub fn linear(inputs: usize, classes: usize, init: &InitConfig, lif: LifParams, t_steps: usize) -> Result<Self> {
        let kind = LayerKind::Linear {
            fan_in: inputs,
            fan_out: classes,
        };
        Self::from_layers(vec![build_layer("fc", kind, init, 0)?], lif, t_steps)
    }

    pub fn from_layers(layers: Vec<ScoredLayer>, lif: LifParams, t_steps: usize) -> Result<Self> {
        lif.validate()?;
        if layers.is_empty() || layers.len() > 2 || t_steps == 0 {
            return Err(Error::Argument("an MLP has one or two layers and t_steps >= 1".into()));
        }
        let inputs = layers[0].kind().fan_in();
        let classes = layers[layers.len() - 1].kind().fan_out();
        if layers.len() == 2 && layers[0].kind().fan_out() != layers[1].kind().fan_in() {
            return Err(Error::Argument("MLP layer sizes do not chain".into()));
        }
        Ok(Self {
            layers,
            lif,
            t_steps,
            inputs,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Taped forward of `frames` (`[T][batch * inputs]`) returning the
    /// mean-over-time readout.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        frames: &[Vec<f32>],
        batch: usize,
        weights: &[Vec<f32>],
    ) -> Result<Var> {
        let p = bind_params(tape, &self.layers, weights)?;
        let mut prev = None;
        let mut outs = Vec::with_capacity(frames.len());
        for f in frames {
            let x = tape.input(Tensor::from_vec(&[batch, self.inputs], f.clone())?);
            let y = if p.len() == 2 {
                let h = tape.linear(x, p[0])?;
                let l = tape.lif(h, prev, self.lif)?;
                prev = Some(l);
                tape.linear(l.o, p[1])?
            } else {
                tape.linear(x, p[0])?
            };
            outs.push(y);
        }
        tape.mean(&outs)
    }

    fn frames(&self, ds: &SpikeDataset, batch: &[usize]) -> Result<Vec<Vec<f32>>> {
        if ds.frame_len() != self.inputs || ds.t_steps < self.t_steps {
            return Err(Error::shape("MLP dataset", &[self.t_steps, self.inputs], &[ds.t_steps, ds.frame_len()]));
        }
        Ok((0..self.t_steps).map(|t| ds.batch_frame(batch, t)).collect())
    }

    /// Fraction of `indices` classified correctly at full length.
    pub fn accuracy(&self, ds: &SpikeDataset, indices: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let w = crate::pruning::clean_weights(self)?;
        let out = self.forward_tape(&mut tape, &self.frames(ds, indices)?, indices.len(), &w)?;
        let logits = tape.value(out).data();
        let hits = indices
            .iter()
            .enumerate()
            .filter(|(b, &i)| {
                crate::snn::loss::argmax(&logits[b * self.classes..(b + 1) * self.classes]) == ds.labels[i] as usize
            })
            .count();
        Ok(hits as f64 / indices.len() as f64)
    }
}

impl Trainable for SpikingMlp {
    type Data = SpikeDataset;

    fn layers(&self) -> &[ScoredLayer] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [ScoredLayer] {
        &mut self.layers
    }

    fn forward_backward(
        &self,
        ds: &SpikeDataset,
        batch: &[usize],
        weights: &[Vec<f32>],
        _rng: &mut ChaCha8Rng,
    ) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, &self.frames(ds, batch)?, batch.len(), weights)?;
        let labels: Vec<u8> = batch.iter().map(|&i| ds.labels[i]).collect();
        let (loss, grad, correct) = softmax_cross_entropy(tape.value(out).data(), self.classes, &labels)?;
        let grads = tape.backward(vec![(out, Tensor::from_vec(&[batch.len(), self.classes], grad)?)])?;
        Ok(BatchOutput {
            loss,
            metric_sum: correct as f64,
            weight_grads: grads.into_params(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic::run_dynamic;
    use crate::pruning::clean_weights;

    #[test]
    fn programming_seed_keeps_the_device() {
        let kind = LayerKind::Linear { fan_in: 20, fan_out: 5 };
        let w = |noise: f32, ps: Option<u64>, weights: WeightKind| {
            let init = InitConfig {
                programming_noise: noise,
                programming_seed: ps,
                weights,
                seed: 9,
                ..Default::default()
            };
            build_layer("fc", kind, &init, 0).unwrap().source().weights()
        };
        for k in [WeightKind::Memristor, WeightKind::Software] {
            assert_eq!(w(0.0, None, k), w(0.0, Some(1), k));
            let (a, b) = (w(0.1, Some(1), k), w(0.1, Some(2), k));
            assert_ne!(a, b);
            let base = w(0.0, None, k);
            // same device, close to the unperturbed weights
            let dev = a.iter().zip(&base).map(|(x, y)| (x - y).abs()).sum::<f32>();
            let mag = base.iter().map(|v| v.abs()).sum::<f32>();
            assert!(dev < 0.5 * mag, "{dev} vs {mag}");
        }
    }

    fn small_scnn_data(n: usize, t: usize, seed: u64) -> SpikeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = SpikeDataset::new(t, 2, 34, 34);
        for i in 0..n {
            let f: Vec<u8> = (0..ds.sample_len()).map(|_| rng.random_bool(0.1) as u8).collect();
            ds.push(&f, (i % 10) as u8).unwrap();
        }
        ds
    }

    #[test]
    fn scnn_dimension_chain() {
        let k = ScnnModel::layer_kinds();
        let LayerKind::Conv(c1) = k[0] else { panic!() };
        let LayerKind::Conv(c2) = k[1] else { panic!() };
        assert_eq!((c1.out_h(), c1.out_w()), (30, 30));
        assert_eq!((c2.in_h, c2.out_h()), (15, 11));
        assert_eq!(k[2].fan_in(), 1600);
    }

    #[test]
    fn zero_frame_gives_zero_logits() {
        let m = ScnnModel::new(&InitConfig::default(), LifParams::default(), 10).unwrap();
        let mut st = m.stepper(clean_weights(&m).unwrap(), 1).unwrap();
        let y = st.step(&vec![0.0; 2 * 34 * 34]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(st.step(&[0.0; 10]).is_err());
    }

    #[test]
    fn scnn_taped_and_stepwise_paths_agree() {
        let ds = small_scnn_data(3, 10, 1);
        let m = ScnnModel::new(&InitConfig::default(), LifParams::default(), 10).unwrap();
        let taped = m.logits(&ds, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            let mut ep = m.episode(&ds, i, ReadNoise::NONE, ChaCha8Rng::seed_from_u64(0)).unwrap();
            let r = run_dynamic(&mut ep, &StopPolicy::no_early_stop(10)).unwrap();
            for (a, b) in r.final_output.iter().zip(&taped[i * 10..(i + 1) * 10]) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn bernoulli_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(bernoulli_sample(&[0.0; 100], &mut rng).unwrap().iter().all(|&v| v == 0.0));
        assert!(bernoulli_sample(&[1.0; 100], &mut rng).unwrap().iter().all(|&v| v == 1.0));
        let s = bernoulli_sample(&vec![0.5; 10_000], &mut rng).unwrap();
        let mean = s.iter().sum::<f32>() / s.len() as f32;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        assert!(bernoulli_sample(&[1.5], &mut rng).is_err());
        assert!(bernoulli_sample(&[f32::NAN], &mut rng).is_err());
    }

    #[test]
    fn bernoulli_backward_is_identity() {
        let mut tape = Tape::new();
        let x = tape.input_with_grad(Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let q = tape.sigmoid(x);
        let z = bernoulli_sample(tape.value(q).data(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let z = tape.straight_through(q, Tensor::from_vec(&[1, 3], z).unwrap()).unwrap();
        let seed = Tensor::from_vec(&[1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let g = tape.backward(vec![(z, seed.clone())]).unwrap();
        assert_eq!(g.wrt(q).unwrap().data(), seed.data());
    }

    #[test]
    fn vae_loss_cases() {
        let x = vec![0.2f32, 0.8, 0.5, 0.0];
        assert_eq!(vae_loss(&x, &x, &[], 1.0).unwrap().mse, 0.0);
        let l = vae_loss(&[0.0; 4], &x, &[], 0.0).unwrap();
        let e = x.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((l.mse - e).abs() < 1e-7);
        let probs = vec![vec![0.9f32, 0.2]];
        let l = vae_loss(&x, &[0.1, 0.8, 0.5, 0.0], &probs, 0.0).unwrap();
        assert_eq!(l.total, l.mse);
    }

    fn tiny_inpaint(n: usize) -> InpaintData {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pixels: Vec<f32> = (0..n * 784).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        InpaintData::new(ImageDataset {
            height: 28,
            width: 28,
            pixels,
            labels: vec![0; n],
        })
        .unwrap()
    }

    #[test]
    fn vae_gradient_reaches_masked_region() {
        let data = tiny_inpaint(2);
        let m = SpikingVae::new(&InitConfig::default(), LifParams::default(), 4, 0.0).unwrap();
        let w = clean_weights(&m).unwrap();
        let mut tape = Tape::new();
        let masked = data.batch(&data.masked, &[0, 1]);
        let (recon, _) = m.forward_tape(&mut tape, &masked, 2, &w, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let clean = data.batch(&data.clean.pixels, &[0, 1]);
        let g = mse_grad(&clean, tape.value(recon).data());
        let region = crate::data::MaskRegion::CENTER_8;
        let inside = (0..784).filter(|&p| region.contains(p / 28, p % 28)).filter(|&p| g[p] != 0.0).count();
        assert!(inside > 0);
    }

    #[test]
    fn vae_taped_and_stepwise_paths_agree() {
        let data = tiny_inpaint(1);
        let m = SpikingVae::new(&InitConfig::default(), LifParams::default(), 5, 0.0).unwrap();
        let w = clean_weights(&m).unwrap();
        let mut tape = Tape::new();
        let (recon, _) = m
            .forward_tape(&mut tape, data.masked_image(0), 1, &w, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let mut ep = m.episode(&data, 0, ReadNoise::NONE, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let r = run_dynamic(&mut ep, &StopPolicy::no_early_stop(5)).unwrap();
        for (a, b) in r.final_output.iter().zip(tape.value(recon).data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn vae_frames_deterministic_with_snapped_latent() {
        let data = tiny_inpaint(1);
        let m = SpikingVae::new(&InitConfig::default(), LifParams::default(), 3, 0.0).unwrap();
        let run = |seed| {
            let mut ep = m.episode(&data, 0, ReadNoise::NONE, ChaCha8Rng::seed_from_u64(seed)).unwrap();
            (0..3).map(|_| ep.step().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn layer_seeds_differ() {
        assert_ne!(layer_seed(0, 0), layer_seed(0, 1));
        assert_ne!(layer_seed(0, 0), layer_seed(1, 0));
    }
}
