//! Supervised training with Adam, a step schedule, per-epoch validation and
//! best/last checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{make_example, Augment, Example, ExampleConfig, Sample};
use crate::error::{Error, Result};
use crate::eval::{batch_images, evaluate, EvalSummary};
use crate::imgeo::MotionConfig;
use crate::losses::{point_matching_loss, roll_adjacency, separating_loss, total_loss, LossReport, LossWeights, Target};
use crate::imgeo::Point;
use crate::interactive::worst_pair;
use crate::model::{Model, ModelConfig, SampleOutput};
use crate::tensor::{FlushDenormals, Tensor};
use crate::nn::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Learning rate is multiplied by `lr_gamma` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Fraction of epochs, from the start, trained without the L2 term.
    pub l2_off_fraction: f64,
    pub augment: bool,
    /// Probability that a training sample also gets simulated corrections
    /// fed back through extra refinement passes.
    pub correction_prob: f64,
    /// Upper bound on simulated corrections per selected sample.
    pub max_corrections: usize,
    /// Weight of the loss on passes that follow simulated corrections.
    pub correction_weight: f64,
    pub seed: u64,
    pub motion: MotionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            epochs: 150,
            batch_size: 8,
            lr: 1e-4,
            weight_decay: 1e-4,
            lr_step: 50,
            lr_gamma: 0.1,
            l2_off_fraction: 1.0 / 3.0,
            augment: true,
            correction_prob: 1.0,
            max_corrections: 3,
            correction_weight: 1.0,
            seed: 0,
            motion: MotionConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 64×64 crops, N=20, k=2, batch 8, sized to train on one CPU core in
    /// well under half an hour.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            epochs: 30,
            lr: 1e-3,
            lr_step: 20,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if self.lr_step == 0 || !(self.lr_gamma > 0.0) {
            return bad("lr schedule needs a positive step and factor");
        }
        if !(0.0..=1.0).contains(&self.l2_off_fraction) {
            return bad("l2_off_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.correction_prob) {
            return bad("correction_prob must lie in [0, 1]");
        }
        if !(self.correction_weight >= 0.0) {
            return bad("correction_weight must be non-negative");
        }
        Ok(())
    }

    pub fn example_config(&self) -> ExampleConfig {
        ExampleConfig {
            image_size: self.model.image_size,
            num_points: self.model.num_points,
            split_k: self.model.split_k,
            motion: self.motion,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }

    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let off = (self.epochs as f64 * self.l2_off_fraction).round() as usize;
        LossWeights {
            l2: if epoch < off { 0.0 } else { self.weights.l2 },
            ..self.weights
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<S: Scalar>(params: &ParamSet<S>, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = params.trainable().map(|e| e.tensor.numel()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step<S: Scalar>(&mut self, params: &ParamSet<S>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, e) in params.trainable().enumerate() {
            let Some(g) = e.tensor.grad() else { continue };
            let mut d = e.tensor.data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..d.len() {
                let x = d[i].to_f64().unwrap_or(0.0);
                let gi = g[i].to_f64().unwrap_or(0.0) + self.weight_decay * x;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let upd = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                d[i] = S::lit(x - upd);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossReport,
    pub val_loss: LossReport,
    pub val: EvalSummary,
}

pub const CSV_HEADER: &str = "epoch,split,loss_total,loss_match,loss_l2,loss_motion,loss_sep,miou,f1px,f2px";

fn csv_row(out: &mut String, epoch: usize, split: &str, l: &LossReport, eval: Option<&EvalSummary>) {
    let _ = write!(
        out,
        "{epoch},{split},{},{},{},{},{}",
        l.total, l.matching, l.l2, l.motion, l.separating
    );
    match eval {
        Some(e) => {
            let _ = writeln!(out, ",{},{},{}", e.miou, e.f1px, e.f2px);
        }
        None => out.push_str(",,,\n"),
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in history {
        csv_row(&mut s, r.epoch, "train", &r.train, None);
        csv_row(&mut s, r.epoch, "val", &r.val_loss, Some(&r.val));
    }
    s
}

pub struct TrainOutcome {
    /// Weights of the epoch with the best validation mIoU.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Where checkpoints, the metrics CSV and failure dumps go.
#[derive(Debug, Clone)]
pub struct OutputDir(pub PathBuf);

impl OutputDir {
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }
    pub fn best(&self) -> PathBuf {
        self.0.join("best.ckpt")
    }
    pub fn last(&self) -> PathBuf {
        self.0.join("last.ckpt")
    }
    pub fn dump(&self) -> PathBuf {
        self.0.join("nonfinite.json")
    }
}

/// Unaugmented examples for evaluation; samples whose annotation does not
/// survive cropping are skipped with a warning.
pub fn prepare_examples(samples: &[Sample], cfg: &ExampleConfig) -> Vec<Example> {
    samples
        .iter()
        .filter_map(|s| match make_example(s, cfg, Augment::IDENTITY) {
            Ok(e) => Some(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", s.record.image);
                None
            }
        })
        .collect()
}

fn dump_nonfinite(out: Option<&OutputDir>, epoch: usize, step: usize, report: &LossReport, batch: &[&str]) -> Error {
    let detail = format!(
        "match={} l2={} motion={} sep={}",
        report.matching, report.l2, report.motion, report.separating
    );
    if let Some(o) = out {
        let body = serde_json::json!({ "epoch": epoch, "step": step, "loss": report, "batch": batch });
        if let Err(e) = fs::write(o.dump(), body.to_string()) {
            log::error!("could not write {}: {e}", o.dump().display());
        }
    }
    Error::NonFinite { epoch, step, detail }
}

/// Trains from scratch. Epoch `e` shuffles with stream `e` of the seed, and
/// augmentations come from a per-(epoch, sample) stream, so a rerun with
/// the same inputs reproduces every byte of output.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out: Option<&OutputDir>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let _ftz = FlushDenormals::new();
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if let Some(o) = out {
        fs::create_dir_all(&o.0)?;
    }
    let ex_cfg = cfg.example_config();
    let val = prepare_examples(val_set, &ex_cfg);
    let model: Model<f32> = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<u8>)> = None;
    let size = cfg.model.image_size;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let weights = cfg.weights_at(epoch);
        let mut epoch_loss = LossReport::default();
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut examples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let aug = if cfg.augment {
                    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
                    r.set_stream(((epoch as u64) << 32) | i as u64);
                    Augment::sample(&mut r)
                } else {
                    Augment::IDENTITY
                };
                match make_example(&train_set[i], &ex_cfg, aug) {
                    Ok(e) => examples.push(e),
                    Err(e) => log::warn!("skipping {}: {e}", train_set[i].record.image),
                }
            }
            if examples.is_empty() {
                continue;
            }
            let refs: Vec<&Example> = examples.iter().collect();
            let images = batch_images::<f32>(&refs, size)?;
            let targets: Vec<Target> = examples.iter().map(|e| e.target.clone()).collect();
            model.params.zero_grad();
            let res = model.forward(&images, None, true)?;
            let (mut loss, mut report) = total_loss(&res, &targets, &weights)?;
            if cfg.correction_prob > 0.0 && cfg.max_corrections > 0 && cfg.correction_weight > 0.0 {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
                r.set_stream(((epoch as u64) << 32) | step as u64);
                let mut terms = Vec::new();
                for (sample, t) in res.samples.iter().zip(&targets) {
                    if r.random_bool(cfg.correction_prob) {
                        let clicks = r.random_range(1..=cfg.max_corrections);
                        terms.push(correction_loss(&model, sample, t, clicks, &weights)?);
                    }
                }
                if !terms.is_empty() {
                    let mut acc = terms[0].clone();
                    for x in &terms[1..] {
                        acc = acc.add(x)?;
                    }
                    let extra = acc.scale(cfg.correction_weight / targets.len() as f64);
                    report.total += extra.item().as_f64();
                    loss = loss.add(&extra)?;
                }
            }
            if !report.total.is_finite() {
                let names: Vec<&str> = chunk.iter().map(|&i| train_set[i].record.image.as_str()).collect();
                return Err(dump_nonfinite(out, epoch, step, &report, &names));
            }
            loss.backward();
            adam.step(&model.params, lr);
            epoch_loss.accumulate(&report, examples.len() as f64);
            seen += examples.len();
        }
        let mut avg = LossReport::default();
        avg.accumulate(&epoch_loss, 1.0 / seen.max(1) as f64);
        let ev = evaluate(&model, &val, &cfg.weights, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch,
            train: avg,
            val_loss: ev.loss,
            val: ev.summary(),
        };
        let bytes = checkpoint::to_bytes(&model)?;
        if best.as_ref().is_none_or(|b| rec.val.miou > b.0) {
            best = Some((rec.val.miou, epoch, bytes.clone()));
            if let Some(o) = out {
                fs::write(o.best(), &bytes)?;
            }
        }
        if let Some(o) = out {
            fs::write(o.last(), &bytes)?;
        }
        progress(&rec);
        history.push(rec);
        if let Some(o) = out {
            fs::write(o.metrics(), history_csv(&history))?;
        }
    }
    let (_, best_epoch, bytes) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: checkpoint::from_bytes(&bytes)?,
        best_epoch,
        history,
    })
}

/// Simulated annotator rounds on top of a forward result: each round moves
/// the worst vertex onto its ground-truth partner, records the offset in ΔH
/// and reruns one refinement pass from there. Returns the matching and
/// separating loss averaged over the rounds.
fn correction_loss<S: Scalar>(
    model: &Model<S>,
    sample: &SampleOutput<S>,
    target: &Target,
    clicks: usize,
    weights: &LossWeights,
) -> Result<Tensor<S>> {
    let n = model.cfg.num_points;
    let q = &target.points;
    let last = sample.last();
    let mut points = last.point_values();
    let mut adj = last.hard.clone();
    let mut delta_h = vec![[0.0, 0.0]; n];
    let mut pinned = Vec::new();
    let flat = |v: &[Point]| -> Vec<f64> { v.iter().flat_map(|p| [p[0], p[1]]).collect() };
    let mut total: Option<Tensor<S>> = None;
    for _ in 0..clicks {
        let (i, j) = worst_pair(&points, q)?;
        delta_h[i] = [q[j][0] - points[i][0], q[j][1] - points[i][1]];
        points[i] = q[j];
        pinned.push(i);
        let pts = Tensor::from_f64(&flat(&points), &[n, 2])?;
        let dh = Tensor::from_f64(&flat(&delta_h), &[n, 2])?;
        let pass = model.run_pass(&sample.embedding, &pts, &adj, &dh)?;
        let (lm, shift) = point_matching_loss(&pass.points, q)?;
        let sep = separating_loss(&pass.soft, &roll_adjacency(&target.adjacency, shift), weights.beta)?;
        let term = lm.scale(weights.matching).add(&sep.scale(weights.separating))?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
        for (k, p) in pass.point_values().into_iter().enumerate() {
            if !pinned.contains(&k) {
                points[k] = p;
            }
        }
        adj = pass.hard;
    }
    Ok(total.expect("at least one click").scale(1.0 / clicks as f64))
}

/// Writes the metrics CSV for a finished run somewhere else.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}
