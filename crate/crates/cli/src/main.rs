//! The `evsep` executable: synthesize datasets, extract event features,
//! train mask models, separate mixtures, and score the results.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
//! data), 2 I/O error. Diagnostics go to stderr; data goes to the declared
//! output files or stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use evsep_core::audio::{load_wav_mono, save_wav_mono};
use evsep_core::event::read_events;
use evsep_core::features::write_features;
use evsep_core::flow::FlowConfig;
use evsep_core::metrics::evaluate_pair;
use evsep_core::net::{load_model, save_model, NetConfig};
use evsep_core::pipeline::{event_feature_frames, separate};
use evsep_core::synth::generate_dataset;
use evsep_core::train::{train, SampleManifest, TrainConfig};
use evsep_core::{FeatureConfig, StftConfig};

#[derive(Parser)]
#[command(name = "evsep", about = "Event-driven audio-visual target speaker extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and its manifest.
    Synth {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Output directory; receives the wav/evt files plus manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pool plane-fit flow from an event file into feature frames.
    Features {
        /// EVT1 event file.
        #[arg(long)]
        events: PathBuf,
        /// JSON config; absent keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// FEA1 output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a mask-estimation model from a dataset manifest.
    Train {
        /// manifest.json produced by `synth`.
        #[arg(long)]
        manifest: PathBuf,
        /// JSON config; absent keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// MDL1 output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate the target speaker from a mixture.
    Separate {
        /// MDL1 model file.
        #[arg(long)]
        model: PathBuf,
        /// Mixture wav.
        #[arg(long)]
        mix: PathBuf,
        /// EVT1 event file; required unless the model is audio-only.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Estimate wav output.
        #[arg(long)]
        out: PathBuf,
    },
    /// SI-SDR report for an estimate against its reference and mixture.
    Evaluate {
        /// Clean reference wav.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Estimate wav.
        #[arg(long)]
        est: PathBuf,
        /// Mixture wav.
        #[arg(long)]
        mix: PathBuf,
        /// Report destination; stdout when absent.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Every tunable in one JSON document. Absent keys take the module
/// defaults; unknown keys anywhere are rejected.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    max_epochs: usize,
    patience: usize,
    lr: f64,
    seed: u64,
    stft: StftConfig,
    flow: FlowConfig,
    feature: FeatureConfig,
    net: NetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr: t.lr,
            seed: t.seed,
            stft: t.stft,
            flow: t.flow,
            feature: t.feature,
            net: t.net,
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: reading {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("config: parsing {}", path.display()))
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr: self.lr,
            seed: self.seed,
            stft: self.stft,
            flow: self.flow,
            feature: self.feature,
            net: self.net,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth { n, out, seed } => {
            let manifest = generate_dataset(n, &out, seed)
                .with_context(|| format!("synth: generating {n} samples in {}", out.display()))?;
            eprintln!(
                "synth: wrote {} samples and manifest.json to {}",
                manifest.entries.len(),
                out.display()
            );
        }
        Cmd::Features { events, config, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let stream = read_events(&events)
                .with_context(|| format!("events: reading {}", events.display()))?;
            let frames = event_feature_frames(&stream, &cfg.flow, &cfg.feature)
                .context("features: extracting")?;
            write_features(&frames, &cfg.feature, &out)
                .with_context(|| format!("features: writing {}", out.display()))?;
            eprintln!(
                "features: {} frames of dimension {} from {} events",
                frames.len(),
                cfg.feature.dim(),
                stream.len()
            );
        }
        Cmd::Train { manifest, config, out } => {
            let cfg = RunConfig::load(config.as_deref())?.train_config();
            let manifest = SampleManifest::load(&manifest)
                .with_context(|| format!("train: loading {}", manifest.display()))?;
            manifest.validate().context("train: validating manifest")?;
            let outcome = train(&manifest, &cfg).context("train: training")?;
            for e in &outcome.history {
                println!("{}", serde_json::to_string(e).expect("history serializes"));
            }
            save_model(&outcome.model, &out)
                .with_context(|| format!("train: writing {}", out.display()))?;
            let best = &outcome.history[outcome.best_epoch - 1];
            eprintln!(
                "train: {} epochs, best epoch {} (val loss {:.6}), model at {}",
                outcome.history.len(),
                best.epoch,
                best.val_loss,
                out.display()
            );
        }
        Cmd::Separate { model, mix, events, out } => {
            let model = load_model(&model)
                .with_context(|| format!("model: reading {}", model.display()))?;
            let mix = load_wav_mono(&mix)
                .with_context(|| format!("audio: reading {}", mix.display()))?;
            let stream = match &events {
                Some(p) => Some(
                    read_events(p).with_context(|| format!("events: reading {}", p.display()))?,
                ),
                None => None,
            };
            let est = separate(&model, &mix, stream.as_ref()).context("separate: running")?;
            save_wav_mono(&est, &out)
                .with_context(|| format!("audio: writing {}", out.display()))?;
            eprintln!("separate: {:.2} s estimate at {}", est.duration_s(), out.display());
        }
        Cmd::Evaluate { reference, est, mix, json } => {
            let load = |p: &Path| {
                load_wav_mono(p).with_context(|| format!("audio: reading {}", p.display()))
            };
            let report = evaluate_pair(&load(&reference)?, &load(&est)?, &load(&mix)?)
                .context("metrics: scoring")?;
            let doc = report.to_json();
            match &json {
                Some(p) => {
                    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
                    std::fs::write(p, text + "\n")
                        .with_context(|| format!("metrics: writing {}", p.display()))?;
                    eprintln!("evaluate: report at {}", p.display());
                }
                None => println!("{doc}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not failures.
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            // I/O failures anywhere in the chain are exit 2, everything
            // else is a validation failure.
            let io = err.chain().any(|c| c.is::<std::io::Error>());
            ExitCode::from(if io { 2 } else { 1 })
        }
    }
}
