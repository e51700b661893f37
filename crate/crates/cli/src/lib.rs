//! Workflows behind the `splitgcn` command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use splitgcn_core::checkpoint;
use splitgcn_core::data::{load_manifest, synth_generate, write_dataset, Example, Sample, SynthConfig};
use splitgcn_core::eval::{evaluate, score_polygons, EvalSummary, Evaluation};
use splitgcn_core::imgeo::PolygonSet;
use splitgcn_core::interactive::{simulate, ClickBudgetReport, SimulateConfig};
use splitgcn_core::model::Model;
use splitgcn_core::train::{prepare_examples, train, EpochRecord, OutputDir, TrainConfig, TrainOutcome};

/// Base profile, then a config file (JSON, or `key=value` lines with dotted
/// keys such as `model.num_points=20`), then individual overrides.
pub fn build_config(profile: &str, file: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let base = match profile {
        "desk" => TrainConfig::desk(),
        "full" => TrainConfig::default(),
        other => bail!("unknown profile {other:?} (expected desk or full)"),
    };
    let mut v = serde_json::to_value(&base)?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            merge(&mut v, serde_json::from_str(trimmed).context("parsing JSON config")?);
        } else {
            for (no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, val) = line
                    .split_once('=')
                    .with_context(|| format!("config line {}: expected key=value", no + 1))?;
                set_path(&mut v, k.trim(), val.trim())?;
            }
        }
    }
    for (k, val) in overrides {
        set_path(&mut v, k, val)?;
    }
    let cfg: TrainConfig = serde_json::from_value(v).context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                merge(d.entry(k).or_insert(Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

fn set_path(v: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .with_context(|| format!("config key {key}: {p} is not a section"))?;
        if !obj.contains_key(*p) {
            bail!("unknown config key {key}");
        }
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), parsed);
            return Ok(());
        }
        cur = obj.get_mut(*p).expect("checked");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunMetadata<'a, C: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub git_hash: Option<String>,
    pub version: &'static str,
    pub config: &'a C,
}

pub fn git_hash() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

pub fn write_metadata<C: Serialize>(out: &Path, command: &str, seed: u64, config: &C) -> Result<()> {
    fs::create_dir_all(out)?;
    let meta = RunMetadata {
        command,
        seed,
        git_hash: git_hash(),
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<Vec<Sample>> {
    let samples = synth_generate(cfg)?;
    write_dataset(out, &samples)?;
    write_metadata(out, "synth", cfg.seed, cfg)?;
    Ok(samples)
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let s = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if s.is_empty() {
        bail!("manifest {} has no usable records", path.display());
    }
    Ok(s)
}

/// Splits off the last tenth for validation when no separate set is given.
pub fn split_validation(mut samples: Vec<Sample>, val: Option<Vec<Sample>>) -> (Vec<Sample>, Vec<Sample>) {
    match val {
        Some(v) => (samples, v),
        None => {
            let n_val = (samples.len() / 10).max(1).min(samples.len().saturating_sub(1));
            let v = samples.split_off(samples.len() - n_val);
            (samples, v)
        }
    }
}

pub fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>3}  train {:.4} (match {:.4} l2 {:.4} motion {:.4} sep {:.4})  val {:.4}  mIoU {:.4}  F1 {:.4}  F2 {:.4}",
        r.epoch,
        r.train.total,
        r.train.matching,
        r.train.l2,
        r.train.motion,
        r.train.separating,
        r.val_loss.total,
        r.val.miou,
        r.val.f1px,
        r.val.f2px
    )
}

pub fn cmd_train(cfg: &TrainConfig, train_set: &[Sample], val_set: &[Sample], out: &Path, quiet: bool) -> Result<TrainOutcome> {
    write_metadata(out, "train", cfg.seed, cfg)?;
    let dir = OutputDir(out.to_path_buf());
    let r = train(cfg, train_set, val_set, Some(&dir), |r| {
        if !quiet {
            println!("{}", epoch_line(r));
        }
    })?;
    Ok(r)
}

/// Scores ground-truth outlines as if they were predictions.
pub fn evaluate_ground_truth(examples: &[Example]) -> Evaluation {
    let size = examples.first().map_or(1, |e| e.gt_mask.width()) as f64;
    let scores = examples
        .iter()
        .map(|ex| {
            let mut pts = Vec::new();
            let mut comps = Vec::new();
            for l in &ex.loops {
                comps.push((pts.len()..pts.len() + l.len()).collect());
                pts.extend(l.iter().map(|p| [p[0] / size, p[1] / size]));
            }
            score_polygons(
                &PolygonSet {
                    points: pts,
                    components: comps,
                },
                ex,
            )
        })
        .collect();
    Evaluation {
        scores,
        loss: Default::default(),
    }
}

pub fn metrics_table(ev: &Evaluation) -> String {
    let mut s = format!("{:<14}{:>8}{:>8}{:>8}{:>8}\n", "class", "count", "mIoU", "F1px", "F2px");
    let mut classes: Vec<&str> = ev.scores.iter().map(|x| x.class.as_str()).collect();
    classes.sort();
    classes.dedup();
    for c in classes {
        let sub = EvalSummary::from_scores(ev.scores.iter().filter(|x| x.class == c));
        s.push_str(&format!(
            "{:<14}{:>8}{:>8.4}{:>8.4}{:>8.4}\n",
            c, sub.count, sub.miou, sub.f1px, sub.f2px
        ));
    }
    let all = ev.summary();
    s.push_str(&format!(
        "{:<14}{:>8}{:>8.4}{:>8.4}{:>8.4}\n",
        "all", all.count, all.miou, all.f1px, all.f2px
    ));
    let disc = ev.disconnected_summary();
    if disc.count > 0 {
        s.push_str(&format!(
            "{:<14}{:>8}{:>8.4}{:>8.4}{:>8.4}\n",
            "disconnected", disc.count, disc.miou, disc.f1px, disc.f2px
        ));
    }
    s
}

pub fn cmd_eval(model: &Model<f32>, samples: &[Sample], cfg: &TrainConfig) -> Result<Evaluation> {
    let examples = prepare_examples(samples, &example_config_for(model, cfg));
    Ok(evaluate(model, &examples, &cfg.weights, cfg.batch_size)?)
}

fn example_config_for(model: &Model<f32>, cfg: &TrainConfig) -> splitgcn_core::data::ExampleConfig {
    splitgcn_core::data::ExampleConfig {
        image_size: model.cfg.image_size,
        num_points: model.cfg.num_points,
        split_k: model.cfg.split_k,
        motion: cfg.motion,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    N,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "k" => Ok(Self::K),
            "N" | "n" => Ok(Self::N),
            _ => Err(format!("unknown sweep parameter {s:?} (expected k or N)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: usize,
    pub miou: f64,
    pub f1px: f64,
    pub f2px: f64,
    pub miou_disconnected: f64,
    pub best_epoch: usize,
}

pub const SWEEP_HEADER: &str = "param,value,miou,f1px,f2px,miou_disconnected,best_epoch";

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.param, self.value, self.miou, self.f1px, self.f2px, self.miou_disconnected, self.best_epoch
        )
    }
}

/// Retrains from scratch for each value and scores on the validation set.
pub fn cmd_sweep(
    base: &TrainConfig,
    param: SweepParam,
    values: &[usize],
    train_set: &[Sample],
    val_set: &[Sample],
    out: Option<&Path>,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        let name = match param {
            SweepParam::K => {
                cfg.model.split_k = v;
                "k"
            }
            SweepParam::N => {
                cfg.model.num_points = v;
                "N"
            }
        };
        cfg.validate().with_context(|| format!("{name}={v}"))?;
        let run_dir: Option<PathBuf> = out.map(|o| o.join(format!("{name}_{v}")));
        let r = match &run_dir {
            Some(d) => cmd_train(&cfg, train_set, val_set, d, true)?,
            None => train(&cfg, train_set, val_set, None, |_| {})?,
        };
        let ev = evaluate(
            &r.best,
            &prepare_examples(val_set, &cfg.example_config()),
            &cfg.weights,
            cfg.batch_size,
        )?;
        let s = ev.summary();
        let row = SweepRow {
            param: name.into(),
            value: v,
            miou: s.miou,
            f1px: s.f1px,
            f2px: s.f2px,
            miou_disconnected: ev.disconnected_summary().miou,
            best_epoch: r.best_epoch,
        };
        on_row(&row);
        rows.push(row);
    }
    if let Some(o) = out {
        let mut csv = format!("{SWEEP_HEADER}\n");
        for r in &rows {
            csv.push_str(&r.csv());
            csv.push('\n');
        }
        fs::write(o.join("sweep.csv"), csv)?;
    }
    Ok(rows)
}

pub fn cmd_simulate(model: &Model<f32>, samples: &[Sample], cfg: &SimulateConfig, motion: &TrainConfig) -> Result<ClickBudgetReport> {
    let examples = prepare_examples(samples, &example_config_for(model, motion));
    Ok(simulate(model, &examples, cfg)?)
}

pub fn write_report(out: &Path, report: &ClickBudgetReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("clicks.csv"), report.to_csv())?;
    let summary = serde_json::json!({
        "budget": report.budget,
        "stop_miou": report.stop_miou,
        "per_click_miou": report.per_click_miou,
        "per_class": report.per_class,
        "clicks_histogram": report.clicks_histogram,
        "gain": report.gain(),
        "sessions": report.sessions.len(),
    });
    fs::write(out.join("clicks.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_config_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "# comment\nepochs=3\nmodel.num_points = 12\nweights.l2=0.25\n").unwrap();
        let c = build_config("desk", Some(&p), &[("epochs".into(), "4".into())]).unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.model.num_points, 12);
        assert_eq!(c.weights.l2, 0.25);
        assert_eq!(c.model.image_size, 64);
    }

    #[test]
    fn json_config_merges() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"lr": 0.01, "model": {"split_k": 1}}"#).unwrap();
        let c = build_config("desk", Some(&p), &[]).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.model.split_k, 1);
        assert_eq!(c.model.num_points, 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(build_config("desk", None, &[("nope".into(), "1".into())]).is_err());
        assert!(build_config("desk", None, &[("model.num_points".into(), "2".into())]).is_err());
        assert!(build_config("other", None, &[]).is_err());
    }
}
