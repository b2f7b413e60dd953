//! Input-aware early-stop inference.
//!
//! A model is stepped one timestep at a time. After every step a
//! confidence is computed from the readout and a stop rule decides whether
//! to emit the current output. Classification uses the maximum of a
//! temperature-scaled softmax and stops once it reaches `beta1`;
//! reconstruction uses the per-pixel mean absolute change between
//! consecutive reconstructions and stops once `P_t < P_{t-1} < beta2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::loss::softmax;

/// A single inference episode that can be advanced one timestep.
pub trait Episode {
    /// The instantaneous readout `f(X_t)` of the next timestep.
    fn step(&mut self) -> Result<Vec<f32>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopKind {
    SoftmaxThreshold,
    ConsistencyThreshold,
    #[default]
    NoEarlyStop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopPolicy {
    pub kind: StopKind,
    /// `beta1` for softmax confidence, `beta2` for consistency.
    pub threshold: f32,
    /// Softmax temperature.
    pub alpha: f32,
    pub t_max: usize,
    /// Judge the running mean of the readouts (default) rather than the
    /// instantaneous readout.
    pub accumulate: bool,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self {
            kind: StopKind::NoEarlyStop,
            threshold: 0.0,
            alpha: 2.0,
            t_max: 10,
            accumulate: true,
        }
    }
}

impl StopPolicy {
    pub fn softmax(beta1: f32, alpha: f32, t_max: usize) -> Self {
        Self {
            kind: StopKind::SoftmaxThreshold,
            threshold: beta1,
            alpha,
            t_max,
            accumulate: true,
        }
    }

    pub fn consistency(beta2: f32, t_max: usize) -> Self {
        Self {
            kind: StopKind::ConsistencyThreshold,
            threshold: beta2,
            t_max,
            ..Self::default()
        }
    }

    pub fn no_early_stop(t_max: usize) -> Self {
        Self {
            t_max,
            ..Self::default()
        }
    }

    pub fn with_threshold(mut self, threshold: f32) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::Config(format!("threshold must be >= 0, got {}", self.threshold)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        if self.kind == StopKind::ConsistencyThreshold && self.t_max < 2 {
            return Err(Error::Config("the consistency rule needs t_max >= 2".into()));
        }
        Ok(())
    }
}

/// `max softmax(logits / alpha)`.
pub fn softmax_confidence(logits: &[f32], alpha: f32) -> Result<f32> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax confidence of empty logits".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must be > 0, got {alpha}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("logits must be finite".into()));
    }
    // Shift before scaling so the difference stays exact in f32.
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let scaled: Vec<f32> = logits.iter().map(|v| (v - m) / alpha).collect();
    Ok(softmax(&scaled).into_iter().fold(0.0, f32::max))
}

/// Per-pixel mean absolute difference between consecutive frames.
pub fn consistency_confidence(x_t: &[f32], x_prev: &[f32]) -> Result<f32> {
    if x_t.len() != x_prev.len() {
        return Err(Error::shape("consistency frames", &[x_prev.len()], &[x_t.len()]));
    }
    if x_t.is_empty() {
        return Err(Error::Argument("consistency of empty frames".into()));
    }
    let s: f64 = x_t.iter().zip(x_prev).map(|(a, b)| (a - b).abs() as f64).sum();
    Ok((s / x_t.len() as f64) as f32)
}

/// Running mean of readouts. The mean after `t` steps is `sum_t * (1/t)`
/// in every code path, so early-stopped and full-length outputs agree
/// bit for bit at equal `t`.
#[derive(Clone, Debug, Default)]
struct RunningMean {
    sum: Vec<f32>,
    t: usize,
}

impl RunningMean {
    fn push(&mut self, x: &[f32]) -> Vec<f32> {
        if self.sum.is_empty() {
            self.sum = x.to_vec();
        } else {
            for (s, v) in self.sum.iter_mut().zip(x) {
                *s += v;
            }
        }
        self.t += 1;
        let inv = 1.0 / self.t as f32;
        self.sum.iter().map(|s| s * inv).collect()
    }
}

/// Everything seen during one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Readout judged at each step (running mean unless disabled).
    pub outputs: Vec<Vec<f32>>,
    /// Confidence at each step. The consistency measure is undefined at
    /// `t = 1` and recorded as NaN there.
    pub confidences: Vec<f32>,
    pub stop_step: usize,
    pub final_output: Vec<f32>,
    pub timesteps_used: usize,
}

fn confidence_at(policy: &StopPolicy, outputs: &[Vec<f32>]) -> Result<f32> {
    let cur = outputs.last().expect("at least one output");
    match policy.kind {
        StopKind::SoftmaxThreshold | StopKind::NoEarlyStop => softmax_confidence(cur, policy.alpha),
        StopKind::ConsistencyThreshold => match outputs.len() {
            1 => Ok(f32::NAN),
            n => consistency_confidence(cur, &outputs[n - 2]),
        },
    }
}

/// Whether the rule fires after step `t = confidences.len()`.
fn should_stop(policy: &StopPolicy, confidences: &[f32]) -> bool {
    let n = confidences.len();
    match policy.kind {
        StopKind::NoEarlyStop => false,
        StopKind::SoftmaxThreshold => confidences[n - 1] >= policy.threshold,
        StopKind::ConsistencyThreshold => {
            n >= 3 && confidences[n - 1] < confidences[n - 2] && confidences[n - 2] < policy.threshold
        }
    }
}

/// Step `episode` until the policy fires or `t_max` is reached.
pub fn run_dynamic<E: Episode + ?Sized>(episode: &mut E, policy: &StopPolicy) -> Result<EpisodeRecord> {
    policy.validate()?;
    let mut mean = RunningMean::default();
    let (mut outputs, mut confidences) = (Vec::new(), Vec::new());
    for _ in 0..policy.t_max {
        let y = episode.step()?;
        let judged = if policy.accumulate { mean.push(&y) } else { y };
        outputs.push(judged);
        confidences.push(confidence_at(policy, &outputs)?);
        if should_stop(policy, &confidences) {
            break;
        }
    }
    let stop_step = outputs.len();
    Ok(EpisodeRecord {
        final_output: outputs[stop_step - 1].clone(),
        outputs,
        confidences,
        stop_step,
        timesteps_used: stop_step,
    })
}

/// A full-length record of one episode, for evaluating many thresholds
/// without re-running the model. Valid because a rule only looks at the
/// past, so stopping at `t` sees exactly the first `t` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub outputs: Vec<Vec<f32>>,
    pub confidences: Vec<f32>,
}

impl Trace {
    pub fn record<E: Episode + ?Sized>(episode: &mut E, policy: &StopPolicy) -> Result<Self> {
        let full = StopPolicy {
            kind: StopKind::NoEarlyStop,
            ..*policy
        };
        let mut rec = run_dynamic(episode, &full)?;
        if policy.kind == StopKind::ConsistencyThreshold {
            rec.confidences = (0..rec.outputs.len())
                .map(|t| confidence_at(policy, &rec.outputs[..=t]))
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            outputs: rec.outputs,
            confidences: rec.confidences,
        })
    }

    /// Stop step the policy would reach on this trace.
    pub fn stop_step(&self, policy: &StopPolicy) -> usize {
        let t_max = policy.t_max.min(self.outputs.len());
        for t in 1..=t_max {
            if should_stop(policy, &self.confidences[..t]) {
                return t;
            }
        }
        t_max
    }

    pub fn output_at(&self, t: usize) -> &[f32] {
        &self.outputs[t - 1]
    }
}

/// One row of a trade-off table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f32,
    pub metric: f64,
    pub avg_timesteps: f64,
    pub n_samples: usize,
}

/// Evaluate every threshold on pre-recorded traces. `metric(i, output)`
/// scores the output emitted for sample `i`; the row metric is its mean.
pub fn sweep_thresholds<F>(
    traces: &[Trace],
    thresholds: &[f32],
    policy: &StopPolicy,
    metric: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, &[f32]) -> f64,
{
    if traces.is_empty() {
        return Err(Error::Argument("sweep over an empty dataset".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Argument("sweep needs at least one threshold".into()));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        let p = policy.with_threshold(th);
        p.validate()?;
        let (mut m, mut ts) = (0.0f64, 0usize);
        for (i, tr) in traces.iter().enumerate() {
            let t = tr.stop_step(&p);
            ts += t;
            m += metric(i, tr.output_at(t));
        }
        let n = traces.len();
        rows.push(SweepRow {
            threshold: th,
            metric: m / n as f64,
            avg_timesteps: ts as f64 / n as f64,
            n_samples: n,
        });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "threshold,metric,avg_timesteps,n_samples";

/// CSV with the fixed header `threshold,metric,avg_timesteps,n_samples`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.threshold, r.metric, r.avg_timesteps, r.n_samples));
    }
    s
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    crate::data::write_atomic(path.as_ref(), sweep_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Replays a fixed list of readouts.
    struct Replay {
        steps: Vec<Vec<f32>>,
        t: usize,
    }

    impl Episode for Replay {
        fn step(&mut self) -> Result<Vec<f32>> {
            let y = self.steps[self.t.min(self.steps.len() - 1)].clone();
            self.t += 1;
            Ok(y)
        }
    }

    fn replay(steps: Vec<Vec<f32>>) -> Replay {
        Replay { steps, t: 0 }
    }

    #[test]
    fn softmax_confidence_examples() {
        assert!((softmax_confidence(&[0.0; 10], 1.0).unwrap() - 0.1).abs() < 1e-7);
        let e2 = 2f32.exp();
        assert!((softmax_confidence(&[2.0, 0.0], 1.0).unwrap() - e2 / (e2 + 1.0)).abs() < 1e-6);
        let hot = softmax_confidence(&[2.0, 0.0], 1e6).unwrap();
        assert!((hot - 0.5).abs() < 1e-5);
        assert!(softmax_confidence(&[], 1.0).is_err());
        assert!(softmax_confidence(&[1.0], 0.0).is_err());
        // max-subtraction keeps huge logits finite
        assert!((softmax_confidence(&[1e4, 0.0], 1.0).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn consistency_examples() {
        let a = [0.1f32, 0.7, 0.3];
        assert_eq!(consistency_confidence(&a, &a).unwrap(), 0.0);
        let b: Vec<f32> = a.iter().map(|v| v + 0.5).collect();
        assert!((consistency_confidence(&b, &a).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(consistency_confidence(&a, &b).unwrap(), consistency_confidence(&b, &a).unwrap());
        assert!(consistency_confidence(&a, &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_threshold_stops_at_one() {
        let mut ep = replay(vec![vec![0.3, 0.1]; 10]);
        let r = run_dynamic(&mut ep, &StopPolicy::softmax(0.0, 2.0, 10)).unwrap();
        assert_eq!(r.stop_step, 1);
        assert_eq!(r.timesteps_used, 1);
    }

    #[test]
    fn no_early_stop_runs_to_t_max() {
        let mut ep = replay(vec![vec![9.0, 0.0]; 10]);
        let r = run_dynamic(&mut ep, &StopPolicy::no_early_stop(7)).unwrap();
        assert_eq!(r.timesteps_used, 7);
        assert_eq!(r.confidences.len(), 7);
    }

    #[test]
    fn beta_above_one_never_stops() {
        let mut ep = replay(vec![vec![50.0, 0.0]; 10]);
        let r = run_dynamic(&mut ep, &StopPolicy::softmax(1.1, 1.0, 10)).unwrap();
        assert_eq!(r.stop_step, 10);
    }

    #[test]
    fn consistency_rule_needs_two_measurements() {
        // constant frames: P_2 = P_3 = 0, so P_3 < P_2 fails; a decreasing
        // run is required
        let frames = vec![vec![0.0], vec![0.4], vec![0.5], vec![0.55], vec![0.56], vec![0.56]];
        let mut ep = replay(frames.clone());
        let policy = StopPolicy {
            accumulate: false,
            ..StopPolicy::consistency(0.2, 6)
        };
        let r = run_dynamic(&mut ep, &policy).unwrap();
        // P_2 = 0.4, P_3 = 0.1, P_4 = 0.05: P_4 < P_3 < 0.2 at t = 4
        assert_eq!(r.stop_step, 4);
        assert!(r.confidences[0].is_nan());
        assert!(StopPolicy::consistency(0.1, 1).validate().is_err());
        let mut big = replay(frames);
        let r = run_dynamic(
            &mut big,
            &StopPolicy {
                accumulate: false,
                ..StopPolicy::consistency(10.0, 6)
            },
        )
        .unwrap();
        assert!(r.stop_step >= 3);
    }

    #[test]
    fn running_mean_is_default() {
        let mut ep = replay(vec![vec![2.0], vec![4.0], vec![0.0]]);
        let r = run_dynamic(&mut ep, &StopPolicy::no_early_stop(3)).unwrap();
        assert_eq!(r.outputs, vec![vec![2.0], vec![3.0], vec![2.0]]);
    }

    #[test]
    fn sweep_zero_threshold_and_csv() {
        let traces: Vec<Trace> = (0..3)
            .map(|i| {
                Trace::record(&mut replay(vec![vec![i as f32, 0.0]; 5]), &StopPolicy::softmax(0.5, 1.0, 5)).unwrap()
            })
            .collect();
        let rows = sweep_thresholds(&traces, &[0.0, 0.3, 0.5], &StopPolicy::softmax(0.0, 1.0, 5), |_, _| 1.0).unwrap();
        assert_eq!(rows[0].avg_timesteps, 1.0);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert!(sweep_thresholds(&[], &[0.1], &StopPolicy::default(), |_, _| 0.0).is_err());
    }

    #[test]
    fn single_sample_sweep_matches_run_dynamic() {
        let steps: Vec<Vec<f32>> = (0..10).map(|t| vec![t as f32 * 0.3, 0.5, -0.2]).collect();
        let policy = StopPolicy::softmax(0.0, 2.0, 10);
        let trace = Trace::record(&mut replay(steps.clone()), &policy).unwrap();
        for th in [0.2f32, 0.4, 0.5, 0.6, 0.9] {
            let p = policy.with_threshold(th);
            let direct = run_dynamic(&mut replay(steps.clone()), &p).unwrap();
            let rows = sweep_thresholds(std::slice::from_ref(&trace), &[th], &policy, |_, _| 0.0).unwrap();
            assert_eq!(rows[0].avg_timesteps, direct.timesteps_used as f64);
            assert_eq!(trace.output_at(direct.stop_step), &direct.final_output[..]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn softmax_confidence_matches_f64_oracle(
            logits in prop::collection::vec(-20.0f32..20.0, 1..12),
            alpha in 0.1f32..10.0,
        ) {
            let c = softmax_confidence(&logits, alpha).unwrap();
            let m = logits.iter().map(|&v| v as f64 / alpha as f64).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|&v| (v as f64 / alpha as f64 - m).exp()).sum();
            let oracle = 1.0 / z;
            prop_assert!(((c as f64) - oracle).abs() <= 1e-6 * oracle.max(1e-6) + 1e-7);
            prop_assert!(c > 0.0 && c <= 1.0);
        }

        #[test]
        fn consistency_matches_oracle(
            pairs in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0), 1..100),
        ) {
            let (a, b): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
            let c = consistency_confidence(&a, &b).unwrap() as f64;
            let oracle = a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len() as f64;
            prop_assert!((c - oracle).abs() <= 1e-6 * oracle.max(1e-6) + 1e-7);
        }

        #[test]
        fn stop_step_monotone_in_beta(
            steps in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 4), 10),
            b1 in 0.0f32..1.2,
            b2 in 0.0f32..1.2,
        ) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let s_lo = run_dynamic(&mut replay(steps.clone()), &StopPolicy::softmax(lo, 2.0, 10)).unwrap().stop_step;
            let s_hi = run_dynamic(&mut replay(steps), &StopPolicy::softmax(hi, 2.0, 10)).unwrap().stop_step;
            prop_assert!(s_lo <= s_hi);
        }
    }
}
