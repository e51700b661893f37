use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use splitgcn_cli::*;
use splitgcn_core::data::SynthConfig;
use splitgcn_core::interactive::SimulateConfig;
use splitgcn_core::train::prepare_examples;
use splitgcn_service::{serve, AppState, Engine, ServiceConfig, DEFAULT_MAX_SESSIONS, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "splitgcn", version, about = "Polygon annotation with topology-splitting graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Base profile: desk or full.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// JSON or key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<splitgcn_core::train::TrainConfig> {
        let mut ov = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').with_context(|| format!("--set {s}: expected KEY=VALUE"))?;
            ov.push((k.to_string(), v.to_string()));
        }
        if let Some(s) = self.seed {
            ov.push(("seed".into(), s.to_string()));
        }
        if let Some(e) = self.epochs {
            ov.push(("epochs".into(), e.to_string()));
        }
        build_config(&self.profile, self.config.as_deref(), &ov)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic occlusion dataset.
    Synth {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        occlusion_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        double_bar_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints, metrics.csv and run.json under --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Validation manifest; defaults to the last tenth of --data.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint: mIoU, F1px and F2px per class.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "gt_as_prediction")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Score the ground-truth outlines themselves.
        #[arg(long)]
        gt_as_prediction: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain and evaluate over values of k or N.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated click sessions on a trained checkpoint.
    Simulate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        budget: usize,
        #[arg(long, default_value_t = 1.0)]
        stop_miou: f64,
        /// Click noise in crop pixels.
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP annotation service.
    Serve {
        #[arg(long, visible_alias = "checkpoint", env = "SPLITGCN_CHECKPOINT")]
        ckpt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT, env = "SPLITGCN_PORT")]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_MAX_SESSIONS, env = "SPLITGCN_MAX_SESSIONS")]
        max_sessions: usize,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Accepted for uniformity; serving is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            count,
            seed,
            occlusion_prob,
            double_bar_prob,
            out,
        } => {
            let cfg = SynthConfig {
                count,
                seed,
                occlusion_prob,
                double_bar_prob,
                ..Default::default()
            };
            let s = cmd_synth(&cfg, &out)?;
            println!("wrote {} records to {}", s.len(), out.join("manifest.jsonl").display());
        }
        Command::Train { cfg, data, val, out } => {
            let cfg = cfg.build()?;
            let val = val.map(|v| load_samples(&v)).transpose()?;
            let (tr, va) = split_validation(load_samples(&data)?, val);
            let r = cmd_train(&cfg, &tr, &va, &out, false)?;
            println!(
                "best epoch {} (val mIoU {:.4}); checkpoints in {}",
                r.best_epoch,
                r.history[r.best_epoch].val.miou,
                out.display()
            );
        }
        Command::Eval {
            cfg,
            ckpt,
            data,
            gt_as_prediction,
            out,
        } => {
            let cfg = cfg.build()?;
            let samples = load_samples(&data)?;
            let ev = if gt_as_prediction {
                evaluate_ground_truth(&prepare_examples(&samples, &cfg.example_config()))
            } else {
                let model = load_model(ckpt.as_deref().expect("required by clap"))?;
                cmd_eval(&model, &samples, &cfg)?
            };
            let table = metrics_table(&ev);
            print!("{table}");
            if let Some(o) = out {
                write_metadata(&o, "eval", cfg.seed, &cfg)?;
                std::fs::write(o.join("eval.txt"), &table)?;
                std::fs::write(o.join("scores.json"), serde_json::to_string_pretty(&ev.scores)?)?;
            }
        }
        Command::Sweep {
            cfg,
            param,
            values,
            data,
            val,
            out,
        } => {
            let cfg = cfg.build()?;
            let val = val.map(|v| load_samples(&v)).transpose()?;
            let (tr, va) = split_validation(load_samples(&data)?, val);
            write_metadata(&out, "sweep", cfg.seed, &cfg)?;
            println!("{SWEEP_HEADER}");
            cmd_sweep(&cfg, param, &values, &tr, &va, Some(&out), |r| println!("{}", r.csv()))?;
        }
        Command::Simulate {
            ckpt,
            data,
            budget,
            stop_miou,
            noise_px,
            seed,
            out,
        } => {
            if !(0.0..=1.0).contains(&stop_miou) || noise_px < 0.0 {
                bail!("--stop-miou must lie in [0, 1] and --noise-px be non-negative");
            }
            let model = load_model(&ckpt)?;
            let sim = SimulateConfig {
                budget,
                stop_miou,
                noise_px,
                seed,
            };
            let base = splitgcn_core::train::TrainConfig::desk();
            let report = cmd_simulate(&model, &load_samples(&data)?, &sim, &base)?;
            write_metadata(&out, "simulate", seed, &sim)?;
            write_report(&out, &report)?;
            print!("{}", report.to_csv());
            println!("gain after {budget} clicks: {:+.4}", report.gain());
        }
        Command::Serve {
            ckpt,
            port,
            max_sessions,
            host,
            seed: _,
        } => {
            let engine = Engine::load(&ckpt)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let state = AppState::new(engine, ServiceConfig { max_sessions });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
