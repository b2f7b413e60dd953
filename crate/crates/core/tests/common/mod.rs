//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use memtopo_core::snn::lif::{LifParams, SpikeFn};
use memtopo_core::snn::loss::softmax_cross_entropy;
use memtopo_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A two-layer spiking MLP: `in -> hidden (LIF) -> out` with the readout
/// averaged over time and scored by softmax cross-entropy.
#[derive(Clone, Debug)]
pub struct ToyNet {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
    pub t_steps: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `[t][b * inputs + i]`
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

pub fn ramp_params() -> LifParams {
    LifParams {
        spike: SpikeFn::SmoothRamp,
        ..LifParams::default()
    }
}

impl ToyNet {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, hidden, classes, t_steps, batch) = (6, 8, 3, 4, 3);
        let w1 = (0..inputs * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w2 = (0..hidden * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = (0..t_steps)
            .map(|_| (0..batch * inputs).map(|_| rng.random_range(0.0..1.5)).collect())
            .collect();
        let labels = (0..batch).map(|_| rng.random_range(0..classes as u8)).collect();
        Self {
            inputs,
            hidden,
            classes,
            t_steps,
            w1,
            w2,
            frames,
            labels,
        }
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    /// Loss evaluated in f64 straight from the neuron equations.
    pub fn loss(&self, w1: &[f64], w2: &[f64]) -> f64 {
        let p = ramp_params();
        let (tau, vth, a) = (p.tau_decay as f64, p.v_th as f64, p.a as f64);
        let b = self.batch();
        let mut u = vec![0.0; b * self.hidden];
        let mut o = vec![0.0; b * self.hidden];
        let mut mean = vec![0.0; b * self.classes];
        for frame in &self.frames {
            for n in 0..b {
                for h in 0..self.hidden {
                    let x: f64 = (0..self.inputs).map(|i| frame[n * self.inputs + i] * w1[i * self.hidden + h]).sum();
                    let j = n * self.hidden + h;
                    u[j] = tau * u[j] * (1.0 - o[j]) + x;
                    o[j] = ((u[j] - vth) / a + 0.5).clamp(0.0, 1.0);
                }
                for c in 0..self.classes {
                    let y: f64 = (0..self.hidden).map(|h| o[n * self.hidden + h] * w2[h * self.classes + c]).sum();
                    mean[n * self.classes + c] += y / self.t_steps as f64;
                }
            }
        }
        let mut loss = 0.0;
        for n in 0..b {
            let row = &mean[n * self.classes..(n + 1) * self.classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[self.labels[n] as usize];
        }
        loss / b as f64
    }

    /// Central finite differences of [`ToyNet::loss`] over both weight sets.
    pub fn numeric_grad(&self, h: f64) -> (Vec<f64>, Vec<f64>) {
        let mut g1 = vec![0.0; self.w1.len()];
        for (i, g) in g1.iter_mut().enumerate() {
            let (mut p, mut m) = (self.w1.clone(), self.w1.clone());
            p[i] += h;
            m[i] -= h;
            *g = (self.loss(&p, &self.w2) - self.loss(&m, &self.w2)) / (2.0 * h);
        }
        let mut g2 = vec![0.0; self.w2.len()];
        for (i, g) in g2.iter_mut().enumerate() {
            let (mut p, mut m) = (self.w2.clone(), self.w2.clone());
            p[i] += h;
            m[i] -= h;
            *g = (self.loss(&self.w1, &p) - self.loss(&self.w1, &m)) / (2.0 * h);
        }
        (g1, g2)
    }

    /// Backward pass of the autodiff tape on the same network.
    pub fn tape_grad(&self) -> (Vec<f32>, Vec<f32>) {
        let b = self.batch();
        let mut tape = Tape::new();
        let w1 = tape.param(self.w1.iter().map(|&v| v as f32).collect(), self.inputs, self.hidden).unwrap();
        let w2 = tape
            .param(self.w2.iter().map(|&v| v as f32).collect(), self.hidden, self.classes)
            .unwrap();
        let mut prev = None;
        let mut outs = Vec::new();
        for frame in &self.frames {
            let x = tape.input(Tensor::from_vec(&[b, self.inputs], frame.iter().map(|&v| v as f32).collect()).unwrap());
            let c = tape.linear(x, w1).unwrap();
            let s = tape.lif(c, prev, ramp_params()).unwrap();
            prev = Some(s);
            outs.push(tape.linear(s.o, w2).unwrap());
        }
        let mean = tape.mean(&outs).unwrap();
        let (_, g, _) = softmax_cross_entropy(tape.value(mean).data(), self.classes, &self.labels).unwrap();
        let grads = tape.backward(vec![(mean, Tensor::from_vec(&[b, self.classes], g).unwrap())]).unwrap();
        (grads.param(w1).to_vec(), grads.param(w2).to_vec())
    }
}

/// Relative difference with a small floor so vanishing gradients compare
/// on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Fraction of coordinates agreeing within `tol` over `nets` random toy
/// networks, plus the number of coordinates compared.
pub fn gradcheck_pass_rate(nets: u64, tol: f64) -> (f64, usize) {
    let (mut ok, mut total) = (0usize, 0usize);
    for seed in 0..nets {
        let net = ToyNet::random(seed);
        let (n1, n2) = net.numeric_grad(1e-6);
        let (a1, a2) = net.tape_grad();
        for (n, a) in n1.iter().chain(&n2).zip(a1.iter().chain(&a2)) {
            total += 1;
            if rel_err(*n, *a as f64) <= tol {
                ok += 1;
            }
        }
    }
    (ok as f64 / total as f64, total)
}
