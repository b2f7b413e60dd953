//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use memtopo_core::baselines::{
    baseline_csv, noise_csv, noise_sensitivity, run_baseline, sample_metric, task_metric, BaselineKind, Task, TaskData,
    TrainedModel,
};
use memtopo_core::checkpoint::Checkpoint;
use memtopo_core::config::{Dataset, RunConfig};
use memtopo_core::data::{self, encode_aer, load_mnist_idx, sample_rng, synthesize_events, write_atomic};
use memtopo_core::dynamic::{sweep_csv, sweep_thresholds, StopKind, StopPolicy};
use memtopo_core::metrics::{ari, cost_proxy};
use memtopo_core::models::ReadNoise;
use memtopo_core::pruning::TrainHistory;

use crate::cluster::kmeans;
use crate::{
    BaselinesArgs, CheckpointArgs, EvalArgs, ExportArgs, PolicyArg, ProgrammingNoiseArgs, RunOverrides, SweepArgs,
    SynthArgs, TrainArgs,
};

pub const HISTORY_HEADER: &str = "epoch,loss,metric,learning_rate";
pub const READ_NOISE_HEADER: &str = "noise_scale,seed,metric,n_samples";

fn run_config(o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(
            o.seed.unwrap_or(0),
            o.task.unwrap_or(Task::NmnistClassify),
            o.arm.unwrap_or(BaselineKind::MemristorPruning),
        ),
    };
    if let Some(t) = o.task {
        cfg.task = t;
    }
    if let Some(a) = o.arm {
        cfg.arm = a;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = &o.data_root {
        cfg.data.root = Some(r.clone());
    }
    if let Some(e) = &o.events {
        cfg.data.events = Some(e.clone());
    }
    if let Some(n) = o.epochs {
        cfg.train.epochs = n;
    }
    if let Some(n) = o.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = o.n_test {
        cfg.data.n_test = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let t0 = Instant::now();
    let data = cfg.load_data().context("loading the dataset")?;
    eprintln!(
        "loaded {} ({} train / {} test) in {:.1?}",
        cfg.task,
        data.train.len(),
        data.test.len(),
        t0.elapsed()
    );
    Ok(data)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            write_atomic(p, text.as_bytes())?;
            eprintln!("wrote {}", p.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for e in &h.epochs {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.metric, e.learning_rate));
    }
    s
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let data = load_data(&cfg)?;
    let arm = cfg.arm_config();
    let t0 = Instant::now();
    let result = run_baseline(cfg.arm, &data.task_data(), &arm)?;
    let name = metric_name(cfg.task);
    eprintln!("trained {} in {:.1?}", cfg.arm, t0.elapsed());
    let ck = Checkpoint {
        model: result.model,
        config_echo: cfg.to_toml()?,
        train_seed: cfg.seed,
        eval_seed: arm.eval_seed,
        metrics: vec![(name.into(), result.metric)],
    };
    let ck_path = out.join("model.ckpt");
    ck.save(&ck_path)?;
    write_output(Some(&out.join("history.csv")), &history_csv(&result.history))?;
    write_output(Some(&out.join("config.toml")), &ck.config_echo)?;
    eprintln!("wrote {}", ck_path.display());
    println!("{name} {}", result.metric);
    Ok(())
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::NmnistClassify => "accuracy",
        Task::MnistInpaint => "mse",
    }
}

struct Loaded {
    ck: Checkpoint,
    cfg: RunConfig,
    data: Dataset,
}

fn load_checkpoint(a: &CheckpointArgs) -> Result<Loaded> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = RunConfig::from_toml_str(&ck.config_echo).context("the checkpoint's config echo")?;
    if let Some(r) = &a.data_root {
        cfg.data.root = Some(r.clone());
    }
    if let Some(e) = &a.events {
        cfg.data.events = Some(e.clone());
    }
    if ck.model.task() != cfg.task {
        bail!("checkpoint model does not match its configured task {}", cfg.task);
    }
    cfg.validate()?;
    let data = load_data(&cfg)?;
    Ok(Loaded { ck, cfg, data })
}

fn policy_for(kind: PolicyArg, threshold: f32, alpha: Option<f32>, cfg: &RunConfig) -> StopPolicy {
    let t = cfg.t_steps();
    let alpha = alpha.unwrap_or(cfg.stop.alpha);
    match kind {
        PolicyArg::None => StopPolicy::no_early_stop(t),
        PolicyArg::Softmax => StopPolicy::softmax(threshold, alpha, t),
        PolicyArg::Consistency => StopPolicy::consistency(threshold, t),
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let l = load_checkpoint(&a.ckpt)?;
    let task = l.data.task_data();
    let policy = policy_for(a.policy, a.threshold, a.alpha, &l.cfg);
    policy.validate()?;
    let seed = a.eval_seed.unwrap_or(l.ck.eval_seed);
    let traces = l.ck.model.traces(&task, ReadNoise::per_episode(a.noise), seed, &policy)?;
    let steps: Vec<usize> = traces.iter().map(|t| t.stop_step(&policy)).collect();
    let metric = task_metric(&task, &traces, &steps)?;
    let avg = memtopo_core::metrics::avg_timesteps(&steps)?;
    let ops: u64 = steps
        .iter()
        .map(|&s| cost_proxy(l.ck.model.layers(), s))
        .sum::<memtopo_core::Result<u64>>()?;
    println!("{} {metric}", metric_name(l.cfg.task));
    println!("avg_timesteps {avg}");
    println!("synaptic_ops_per_sample {}", ops as f64 / steps.len() as f64);
    println!("n_samples {}", steps.len());
    if let Some(recorded) = l.ck.metrics.first() {
        eprintln!("checkpoint recorded {} {}", recorded.0, recorded.1);
    }
    Ok(())
}

fn default_policy(cfg: &RunConfig, alpha: Option<f32>) -> StopPolicy {
    let kind = match (cfg.stop.kind, cfg.task) {
        (StopKind::NoEarlyStop, Task::NmnistClassify) => PolicyArg::Softmax,
        (StopKind::NoEarlyStop, Task::MnistInpaint) => PolicyArg::Consistency,
        (StopKind::SoftmaxThreshold, _) => PolicyArg::Softmax,
        (StopKind::ConsistencyThreshold, _) => PolicyArg::Consistency,
    };
    policy_for(kind, cfg.stop.threshold, alpha, cfg)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let l = load_checkpoint(&a.ckpt)?;
    let task = l.data.task_data();
    let text = if !a.thresholds.is_empty() {
        let policy = default_policy(&l.cfg, a.alpha);
        let traces = l.ck.model.traces(&task, ReadNoise::NONE, l.ck.eval_seed, &policy)?;
        let rows = sweep_thresholds(&traces, &a.thresholds, &policy, |i, out| {
            sample_metric(&task, i, out).expect("test outputs match the task")
        })?;
        sweep_csv(&rows)
    } else {
        read_noise_csv(&l.ck.model, &task, &a.noise_scales, a.seeds, l.ck.eval_seed)?
    };
    write_output(a.out.as_deref(), &text)
}

fn read_noise_csv(model: &TrainedModel, task: &TaskData, scales: &[f32], seeds: u64, eval_seed: u64) -> Result<String> {
    if seeds == 0 {
        bail!("--seeds must be >= 1");
    }
    let mut s = format!("{READ_NOISE_HEADER}\n");
    for &scale in scales {
        for k in 0..seeds {
            let seed = eval_seed.wrapping_add(1 + k);
            let m = model.evaluate(task, ReadNoise::per_episode(scale), seed)?;
            s.push_str(&format!("{scale},{seed},{m},{}\n", task.test().len()));
        }
    }
    Ok(s)
}

pub fn baselines(a: &BaselinesArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let data = load_data(&cfg)?;
    let task = data.task_data();
    let arm = cfg.arm_config();
    let mut rows = Vec::new();
    for kind in BaselineKind::ALL {
        let t0 = Instant::now();
        let r = run_baseline(kind, &task, &arm)?;
        eprintln!("{kind}: {} in {:.1?}", r.metric, t0.elapsed());
        rows.push(r.row(task.test().len()));
    }
    write_output(a.out.as_deref(), &baseline_csv(&rows))
}

pub fn programming_noise(a: &ProgrammingNoiseArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let data = load_data(&cfg)?;
    let scales = if a.scales.is_empty() {
        cfg.noise.programming_scales.clone()
    } else {
        a.scales.clone()
    };
    let draws = a.draws.unwrap_or(cfg.noise.programming_draws);
    let form = a.form.map(Into::into).unwrap_or(cfg.noise.programming_form);
    let rows = noise_sensitivity(cfg.arm, &data.task_data(), &scales, draws, &cfg.arm_config(), None, form)?;
    write_output(a.out.as_deref(), &noise_csv(&rows))
}

pub fn export_embeddings(a: &ExportArgs) -> Result<()> {
    let l = load_checkpoint(&a.ckpt)?;
    let (TrainedModel::Scnn(model), TaskData::Classify { data, test, .. }) = (&l.ck.model, l.data.task_data()) else {
        bail!("embeddings are exported from the classifier only");
    };
    let feats = model.embeddings(data, test)?;
    let labels: Vec<u8> = test.iter().map(|&i| data.labels[i]).collect();
    let dim = feats.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (f, y) in feats.iter().zip(&labels) {
        let mut rec = vec![y.to_string()];
        rec.extend(f.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    write_output(Some(&a.out), std::str::from_utf8(&bytes)?)?;
    if let Some(k) = a.clusters {
        let assign = kmeans(&feats, k, 50, l.ck.eval_seed)?;
        println!("ari {}", ari(&assign, &labels)?);
    }
    Ok(())
}

pub fn synth_nmnist(a: &SynthArgs) -> Result<()> {
    let root = a.data_root.clone().unwrap_or_else(|| memtopo_core::config::DataConfig::default().root());
    let defaults = memtopo_core::config::DataConfig::default();
    let images = load_mnist_idx(root.join(&defaults.images), root.join(&defaults.labels))?;
    let n = a.limit.map_or(images.len(), |l| l.min(images.len()));
    let cfg = data::SaccadeConfig::default();
    for d in 0..10 {
        fs::create_dir_all(a.out.join(d.to_string()))?;
    }
    for i in 0..n {
        let stream = synthesize_events(&images.image_bytes(i), &cfg, &mut sample_rng(a.seed, i))?;
        let path: PathBuf = a.out.join(images.labels[i].to_string()).join(format!("{i:05}.bin"));
        write_atomic(&path, &encode_aer(&stream)?)?;
    }
    eprintln!("wrote {n} recordings under {}", a.out.display());
    Ok(())
}
