use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use racs_core::adaptation::{simulate_stream, AdaptationPolicy, DiffSource, PolicyKind};
use racs_core::data::{extract_strided, load_pgm_dir, synth_dataset, BlockDataset, GrayImage, SynthKind};
use racs_core::evaluation::{export_phi_images, format_g, sweep_rates, Metric};
use racs_core::models::{AutoencoderSpec, ClassifierSpec, Head, ReconNetSpec};
use racs_core::training::{
    run_fixed_gaussian, run_rate_adaptive, run_vanilla, Checkpoint, ResetPolicy, Stage, TrainConfig,
};
use racs_core::{Error, ModelSpec, Network};

use crate::config::Settings;
use crate::error::CliError;
use crate::{AdaptArgs, ClassifyArgs, DataArgs, ExportArgs, SweepArgs, TrainArgs};

const DEFAULT_BLOCK: usize = 16;
const DEFAULT_SYNTH_COUNT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    RateAdaptive,
    Vanilla,
    GaussianFixed,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate-adaptive" => Ok(Mode::RateAdaptive),
            "vanilla" => Ok(Mode::Vanilla),
            "gaussian-fixed" => Ok(Mode::GaussianFixed),
            other => Err(format!(
                "unknown mode `{other}` (rate-adaptive, vanilla, gaussian-fixed)"
            )),
        }
    }
}

fn out_dir(s: &Settings, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = s.or(flag, "out", PathBuf::from("."))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Blocks from a PGM directory or a synthetic generator, with a short
/// description of the source.
fn load_blocks(s: &Settings, a: DataArgs, block: usize) -> Result<(BlockDataset, String), CliError> {
    let dir = s.get(a.data, "data")?;
    let synth = s.get(a.synth, "synth")?;
    let (data, name) = match (dir, synth) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("give either --data or --synth, not both"));
        }
        (None, None) => return Err(CliError::usage("missing --data or --synth")),
        (None, Some(kind)) => {
            let kind: SynthKind = kind.parse().map_err(|e: Error| CliError::config(e.to_string()))?;
            let count = s.or(a.count, "count", DEFAULT_SYNTH_COUNT)?;
            let seed = s.or(a.synth_seed, "synth_seed", 0u64)?;
            let data = synth_dataset(kind, count, block, seed)?;
            (data, format!("{}:{count}:seed{seed}", kind.as_str()))
        }
        (Some(dir), None) => {
            let stride = s.or(a.stride, "stride", block)?;
            (blocks_from_dir(&dir, block, stride)?, dir.display().to_string())
        }
    };
    if data.is_empty() {
        return Err(CliError::data(format!("{name}: no {block}x{block} blocks")));
    }
    Ok((data, name))
}

fn blocks_from_dir(dir: &Path, block: usize, stride: usize) -> Result<BlockDataset, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut classes: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        let mut blocks = Vec::new();
        for (_, img) in load_pgm_dir(dir)? {
            blocks.extend(extract_strided(&img, block, stride)?.blocks().iter().cloned());
        }
        return Ok(BlockDataset::new(block, blocks, None)?);
    }
    let (mut blocks, mut labels) = (Vec::new(), Vec::new());
    for (label, class_dir) in classes.iter().enumerate() {
        for (_, img) in load_pgm_dir(class_dir)? {
            let cut = extract_strided(&img, block, stride)?;
            labels.extend(std::iter::repeat_n(label, cut.len()));
            blocks.extend(cut.blocks().iter().cloned());
        }
    }
    Ok(BlockDataset::new(block, blocks, Some(labels))?)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Network<f32>), CliError> {
    let ck = Checkpoint::load(path)?;
    let net = ck.network()?;
    Ok((ck, net))
}

fn model_spec(s: &Settings, a: &mut TrainArgs, m_max: usize, classes: Option<usize>) -> Result<ModelSpec, CliError> {
    let head = s.or(a.head.take(), "head", "reconnet".to_string())?;
    let block = s.or(a.block, "block", DEFAULT_BLOCK)?;
    let spec = match head.as_str() {
        "reconnet" => {
            let d = ReconNetSpec::new(block);
            ModelSpec::ReconNet(ReconNetSpec {
                block,
                units: s.or(a.units, "units", d.units)?,
                channels: match s.get(a.channels.take(), "channels")? {
                    Some(l) => l.exact("channels")?,
                    None => d.channels,
                },
                kernels: match s.get(a.kernels.take(), "kernels")? {
                    Some(l) => l.exact("kernels")?,
                    None => d.kernels,
                },
            })
        }
        "autoencoder" => ModelSpec::Autoencoder(AutoencoderSpec {
            block,
            hidden: s.or(a.hidden, "hidden", m_max)?,
        }),
        "classifier" => {
            let num_classes = match s.get(a.num_classes, "num_classes")? {
                Some(c) => c,
                None => classes.ok_or_else(|| {
                    CliError::data("the classifier needs labelled data (class subdirectories or --synth shapes)")
                })?,
            };
            let d = ClassifierSpec::new(block, num_classes);
            ModelSpec::Classifier(ClassifierSpec {
                block,
                num_classes,
                channels: match s.get(a.channels.take(), "channels")? {
                    Some(l) => l.exact("channels")?,
                    None => d.channels,
                },
                kernel: s.or(a.kernel, "kernel", d.kernel)?,
                hidden: s.or(a.hidden, "hidden", d.hidden)?,
            })
        }
        other => {
            return Err(CliError::config(format!(
                "unknown head `{other}` (reconnet, autoencoder, classifier)"
            )))
        }
    };
    Ok(spec)
}

fn train_config(s: &Settings, a: &mut TrainArgs) -> Result<TrainConfig, CliError> {
    let m_max = s.or(a.m_max, "m_max", 64usize)?;
    let k_min = s.or(a.k_min, "k_min", m_max.min(10))?;
    let base = match s.or(a.scale.take(), "scale", "desk".to_string())?.as_str() {
        "desk" => TrainConfig::desk(k_min, m_max),
        "paper" => TrainConfig::paper(k_min, m_max),
        other => return Err(CliError::config(format!("unknown scale `{other}` (desk, paper)"))),
    };
    let reset = match s.get(a.reset.take(), "reset")? {
        Some(r) => r
            .parse::<ResetPolicy>()
            .map_err(|e| CliError::config(e.to_string()))?,
        None => base.reset,
    };
    let cfg = TrainConfig {
        max_iters_1: s.or(a.max_iters_1, "max_iters_1", base.max_iters_1)?,
        max_iters_2: s.or(a.max_iters_2, "max_iters_2", base.max_iters_2)?,
        iters_per_row: s.or(a.iters_per_row, "iters_per_row", base.iters_per_row)?,
        lr: s.or(a.lr, "lr", base.lr)?,
        batch_size: s.or(a.batch_size, "batch_size", base.batch_size)?,
        seed: s.or(a.seed, "seed", base.seed)?,
        val_fraction: s.or(a.val_fraction, "val_fraction", base.val_fraction)?,
        val_interval: s.or(a.val_interval, "val_interval", base.val_interval)?,
        reset,
        ..base
    };
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

pub fn train(mut a: TrainArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["train", "model", "data", "output"])?;
    let mode: Mode = s.or(a.mode.take(), "mode", "rate-adaptive".to_string())?
        .parse()
        .map_err(CliError::config)?;
    let cfg = train_config(&s, &mut a)?;
    let block = s.or(a.block, "block", DEFAULT_BLOCK)?;
    let out = out_dir(&s, a.out.take())?;
    let (data, source) = load_blocks(&s, std::mem::take(&mut a.data), block)?;
    let spec = model_spec(&s, &mut a, cfg.m_max, data.num_classes())?;
    info!("{} blocks from {source}", data.len());

    let outcome = match mode {
        Mode::RateAdaptive => run_rate_adaptive(&data, &spec, &cfg).map(|run| (run.checkpoint(), run.report)),
        Mode::Vanilla | Mode::GaussianFixed => {
            let run = if mode == Mode::Vanilla { run_vanilla } else { run_fixed_gaussian };
            run(&data, &spec, cfg.m_max, &cfg).map(|(t, report)| {
                let ck = Checkpoint::new(Stage::One, spec.clone(), cfg.clone(), &t.phi, None, t.net.params(), None);
                (ck, report)
            })
        }
    };
    let (ck, report) = match outcome {
        Ok(v) => v,
        Err(Error::Diverged { stage, step, last_good }) => {
            let mut msg = format!("training diverged in {stage} at step {step}");
            if let Some(ck) = last_good {
                let path = out.join("last_good.racs");
                ck.save(&path)?;
                msg.push_str(&format!("; last good state saved to {}", path.display()));
            }
            return Err(CliError {
                code: crate::error::NUMERIC,
                message: msg,
            });
        }
        Err(e) => return Err(e.into()),
    };
    if report.skipped > 0 {
        warn!("{} steps skipped on non-finite values", report.skipped);
    }
    let model_path = out.join("model.racs");
    ck.save(&model_path)?;
    let log_path = out.join("train_log.csv");
    report.write_csv(&log_path)?;
    println!(
        "trained {} ({mode:?}) for {} steps; wrote {} and {}",
        spec.name(),
        report.total_steps(),
        model_path.display(),
        log_path.display()
    );
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["sweep", "data", "output"])?;
    let path: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let (ck, net) = load_checkpoint(&path)?;
    let phi = ck.phi.clone();
    let r_min = s.or(a.r_min, "r_min", phi.k_min())?;
    let r_max = s.or(a.r_max, "r_max", phi.m_max())?;
    if r_min == 0 || r_min > r_max || r_max > phi.m_max() {
        return Err(CliError::usage(format!(
            "prefix range {r_min}..={r_max} is outside 1..={}",
            phi.m_max()
        )));
    }
    let (data, source) = load_blocks(&s, a.data, ck.model.block())?;
    let rs: Vec<usize> = (r_min..=r_max).collect();
    let mut report = sweep_rates(ck.model.head(), &net, &phi, &data, &rs)?;
    report.model = path.display().to_string();
    report.dataset = source;
    let csv = match s.get(a.csv, "csv")? {
        Some(p) => p,
        None => out_dir(&s, a.out)?.join("sweep.csv"),
    };
    report.write_csv(&csv)?;
    let unit = match report.metric {
        Metric::Psnr => "dB",
        Metric::Accuracy => "accuracy",
    };
    if let (Some(lo), Some(hi)) = (report.records.first(), report.records.last()) {
        println!(
            "r={}: {} {unit}, r={}: {} {unit}; {} rows written to {}",
            lo.r,
            format_g(lo.mean),
            hi.r,
            format_g(hi.mean),
            report.records.len(),
            csv.display()
        );
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| CliError::data(format!("{}: `{l}` is not a number", path.display())))
        })
        .collect()
}

pub fn adapt_sim(a: AdaptArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["adapt", "output"])?;
    let path: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let (ck, net) = load_checkpoint(&path)?;
    if ck.model.head() != Head::Reconstruction {
        return Err(CliError::usage("adapt-sim needs a reconstruction checkpoint"));
    }
    let phi = ck.phi.clone();
    let frames_dir: PathBuf = s.require(a.frames, "frames")?;
    let frames: Vec<GrayImage> = load_pgm_dir(&frames_dir)?.into_iter().map(|(_, f)| f).collect();
    if frames.is_empty() {
        return Err(CliError::data(format!("{}: no PGM frames", frames_dir.display())));
    }
    let k_min = s.or(a.k_min, "k_min", phi.k_min())?;
    let m_max = s.or(a.m_max, "m_max", phi.m_max())?;
    let delta_rows = s.or(a.delta_rows, "delta_rows", 3usize)?;
    let kind = match s.require(a.policy, "policy")?.as_str() {
        "linear" => PolicyKind::Linear {
            r_start: s.or(a.r_start, "r_start", m_max)?,
            r_end: s.or(a.r_end, "r_end", k_min)?,
            total_frames: s.or(a.total_frames, "total_frames", frames.len())?,
        },
        "framediff" => PolicyKind::FrameDiff {
            alpha: s.or(a.alpha, "alpha", 0.15)?,
            beta: s.or(a.beta, "beta", 0.3)?,
            delta_rows,
        },
        "confidence" => PolicyKind::Confidence {
            gamma: s.or(a.gamma, "gamma", 0.3)?,
            delta_rows,
        },
        other => {
            return Err(CliError::config(format!(
                "unknown policy `{other}` (linear, framediff, confidence)"
            )))
        }
    };
    let policy = AdaptationPolicy::new(kind, k_min, m_max).map_err(|e| CliError::config(e.to_string()))?;
    let diff_source = match s.or(a.diff_source, "diff_source", "reconstructed".to_string())?.as_str() {
        "reconstructed" => DiffSource::Reconstructed,
        "ground-truth" => DiffSource::GroundTruth,
        other => {
            return Err(CliError::config(format!(
                "unknown diff source `{other}` (reconstructed, ground-truth)"
            )))
        }
    };
    let scores = match s.get(a.confidence, "confidence")? {
        Some(p) => Some(read_scores(&p)?),
        None => None,
    };
    if matches!(policy.kind, PolicyKind::Confidence { .. }) && scores.is_none() {
        return Err(CliError::usage("the confidence policy needs --confidence"));
    }
    let trace = simulate_stream(&frames, &policy, &net, &phi, diff_source, scores.as_deref())?;
    let csv = match s.get(a.csv, "csv")? {
        Some(p) => p,
        None => out_dir(&s, a.out)?.join("trace.csv"),
    };
    trace.write_csv(&csv)?;
    println!(
        "{} frames, average MR {}; trace written to {}",
        trace.rows.len(),
        format_g(trace.avg_mr),
        csv.display()
    );
    Ok(())
}

pub fn classify(a: ClassifyArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["classify", "data", "output"])?;
    let path: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let (ck, net) = load_checkpoint(&path)?;
    if ck.model.head() != Head::Classification {
        return Err(CliError::usage("classify needs a classifier checkpoint"));
    }
    let phi = ck.phi.clone();
    let r = s.or(a.r, "r", phi.m_max())?;
    if r == 0 || r > phi.m_max() {
        return Err(CliError::usage(format!("r={r} is outside 1..={}", phi.m_max())));
    }
    let (data, source) = load_blocks(&s, a.data, ck.model.block())?;
    let mut text = String::from("index,label,predicted\n");
    let mut correct = 0usize;
    for (i, chunk) in (0..data.len()).collect::<Vec<_>>().chunks(256).enumerate() {
        let x = data.batch(chunk);
        let logits = racs_core::models::run_batch(&net, &phi, &x, r)?;
        let classes = logits.len() / chunk.len();
        for (j, row) in logits.data().chunks(classes).enumerate() {
            let idx = i * 256 + j;
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (k, &v)| if v > row[best] { k } else { best });
            let label = data.labels().map(|l| l[idx]);
            correct += usize::from(label == Some(pred));
            let label = label.map_or(String::new(), |l| l.to_string());
            text.push_str(&format!("{idx},{label},{pred}\n"));
        }
    }
    let csv = match s.get(a.csv, "csv")? {
        Some(p) => p,
        None => out_dir(&s, a.out)?.join("predictions.csv"),
    };
    fs::write(&csv, text).map_err(|e| CliError::data(format!("{}: {e}", csv.display())))?;
    if data.labels().is_some() {
        println!(
            "accuracy at r={r}: {} on {} blocks from {source}; predictions in {}",
            format_g(correct as f64 / data.len() as f64),
            data.len(),
            csv.display()
        );
    } else {
        println!("{} blocks classified at r={r}; predictions in {}", data.len(), csv.display());
    }
    Ok(())
}

pub fn export_phi(a: ExportArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["export", "output"])?;
    let path: PathBuf = s.require(a.checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(&path)?;
    let out = out_dir(&s, a.out)?;
    let written = export_phi_images(&ck.phi, &out)?;
    println!("{} files written to {}", written.len(), out.display());
    Ok(())
}
