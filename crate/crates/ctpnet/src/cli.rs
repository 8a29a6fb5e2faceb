//! Command-line driver.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctpnet_core::gradcheck::{model_check, op_suite};
use ctpnet_core::metrics::evaluate;
use ctpnet_core::model::{Model, ModelConfig};
use ctpnet_core::raster::{Mask, RgbImage};
use ctpnet_core::robustness::robustness_sweep;
use ctpnet_core::synth::DocumentSample;
use ctpnet_core::train::{split_dataset, train, TrainEvent};
use ctpnet_core::Tensor;

use crate::config::{parse_grid, parse_size, RunConfig};
use crate::dataset::{generate_dataset, load_dataset, MANIFEST_FILE};
use crate::error::{AppError, Result};
use crate::io;
use crate::report::{format_sweep_table, format_table, history_records, report_records, write_jsonl, SweepRecord};

#[derive(Debug, Parser)]
#[command(name = "ctpnet", version, about = "Document forgery localization: data generation, training and evaluation")]
pub struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed shared by every random choice in the run
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one configuration key (repeatable), e.g. --set epochs=50
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Network input size, `N` or `HxW`
    #[arg(long, global = true)]
    pub input_size: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic forgery dataset
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a generated dataset (8:1:1 split)
    Train {
        /// Dataset directory or manifest
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to keep the best-validation model [default: OUT/best.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset
    Eval {
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate under resize, crop and noise perturbations
    Sweep {
        #[command(flatten)]
        target: EvalTarget,
        /// Grid such as `resize:0.5,1;crop:0.8,1;gauss_noise:0,25`
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every op and of the full model
    Gradcheck {
        /// Random instances per op
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Parameters sampled in the full-model check
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Predict a forgery map for one image
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalTarget {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Which part of the seeded 8:1:1 split to use
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    /// Also report AUC over all pixels pooled across images
    #[arg(long)]
    pub pooled_auc: bool,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(size) = &cli.input_size {
        cfg.set_input_size(parse_size(size)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))
}

fn select(samples: Vec<DocumentSample>, split: Split, seed: u64) -> Result<Vec<DocumentSample>> {
    if split == Split::All {
        return Ok(samples);
    }
    let (train, val, test) = split_dataset(samples, seed)?;
    Ok(match split {
        Split::Train => train,
        Split::Val => val,
        _ => test,
    })
}

fn cmd_generate(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    let records = generate_dataset(&cfg.synth, count, cfg.seed, out)?;
    println!("wrote {} samples to {}", records.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_train(cfg: &mut RunConfig, explicit_size: bool, data: &Path, out: &Path, checkpoint: Option<PathBuf>, from: Option<&Path>) -> Result<()> {
    let model = match from {
        Some(path) => {
            let m = io::load_checkpoint(path)?;
            if !explicit_size {
                cfg.set_input_size(m.config().input_size);
            }
            m
        }
        None => Model::build(&cfg.model, cfg.seed)?,
    };
    let (train_set, val_set, test_set) = split_dataset(load_dataset(data)?, cfg.seed)?;
    create_dir(out)?;
    let best_path = checkpoint
        .or_else(|| cfg.train.checkpoint_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| out.join("best.ckpt"));
    eprintln!(
        "training on {} samples, validating on {}, {} epochs",
        train_set.len(),
        val_set.len(),
        cfg.train.epochs
    );

    let mut save_error = None;
    let trained = train(model, &train_set, &val_set, &cfg.train, &mut |event| match event {
        TrainEvent::EpochEnd { epoch, loss } => eprintln!("epoch {epoch:>4}  loss {loss:.5}"),
        TrainEvent::Validated { epoch, report } => {
            eprintln!("  validation @{epoch}: f1 {:.4} auc {:?}", report.overall.f1, report.auc())
        }
        TrainEvent::NewBest { model, .. } => {
            if let Err(e) = io::save_checkpoint(&best_path, model) {
                save_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = save_error {
        return Err(e);
    }
    io::save_checkpoint(&out.join("last.ckpt"), &trained.model)?;
    write_jsonl(&out.join("history.jsonl"), history_records(&trained.history))?;

    let final_model = trained.best.as_ref().map_or(&trained.model, |b| &b.model);
    if trained.best.is_none() {
        io::save_checkpoint(&best_path, final_model)?;
    }
    if !test_set.is_empty() {
        let report = evaluate(final_model, &test_set, cfg.eval)?;
        write_jsonl(&out.join("test_report.jsonl"), report_records(&report))?;
        print!("{}", format_table(&report));
    }
    println!("checkpoint: {}", best_path.display());
    Ok(())
}

fn load_target(cfg: &RunConfig, target: &EvalTarget) -> Result<(Model<f32>, Vec<DocumentSample>)> {
    let model = io::load_checkpoint(&target.checkpoint)?;
    let samples = select(load_dataset(&target.data)?, target.split, cfg.seed)?;
    Ok((model, samples))
}

fn cmd_eval(cfg: &RunConfig, target: &EvalTarget, out: Option<&Path>) -> Result<()> {
    let (model, samples) = load_target(cfg, target)?;
    let opts = ctpnet_core::metrics::EvalOptions { pooled_auc: cfg.eval.pooled_auc || target.pooled_auc, ..cfg.eval };
    let report = evaluate(&model, &samples, opts)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_jsonl(&dir.join("report.jsonl"), report_records(&report))?;
    }
    print!("{}", format_table(&report));
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, target: &EvalTarget, grid: Option<&str>, out: Option<&Path>) -> Result<()> {
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => cfg.grid.clone(),
    };
    let (model, samples) = load_target(cfg, target)?;
    let opts = ctpnet_core::metrics::EvalOptions { pooled_auc: cfg.eval.pooled_auc || target.pooled_auc, ..cfg.eval };
    let rows = robustness_sweep(&model, &samples, &grid, cfg.seed, opts)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_jsonl(&dir.join("sweep.jsonl"), rows.iter().map(SweepRecord::from))?;
    }
    print!("{}", format_sweep_table(&rows));
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, instances: usize, samples: usize) -> Result<()> {
    let reports = op_suite(instances, cfg.seed)?;
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<24} {} instances, worst {:.3e} (tol {:e}) {}",
            r.name,
            r.instances,
            r.worst,
            r.tolerance,
            if r.passed { "ok" } else { "FAILED" }
        );
        failed += usize::from(!r.passed);
    }
    let model = model_check(&ModelConfig::tiny().with_input_size(16, 16), 16, samples, cfg.seed)?;
    println!("{:<24} {} {}", "model", model.summary(), if model.passed() { "ok" } else { "FAILED" });
    failed += usize::from(!model.passed());

    let total = reports.len() + 1;
    if failed == 0 {
        println!("all {total} checks passed");
        Ok(())
    } else {
        Err(AppError::GradientCheck { failed, total })
    }
}

/// Index into a `from`-sized grid for each of `to` cells, nearest rule.
fn nearest_index(to: usize, from: usize) -> impl Iterator<Item = usize> {
    (0..to).map(move |i| ((i * from) / to).min(from - 1))
}

fn cmd_predict(checkpoint: &Path, image_path: &Path, out: &Path) -> Result<()> {
    let model = io::load_checkpoint(checkpoint)?;
    let image = io::read_rgb(image_path)?;
    let (h, w) = model.config().input_size;
    let rgb = image.resample_f64(w, h)?;
    let mut planar = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        planar.extend(rgb[c..].iter().step_by(3).map(|&v| (v / 255.0) as f32));
    }
    let pred = model.predict_mask(&Tensor::new([1, 3, h, w], planar)?)?;

    let (ow, oh) = (image.width(), image.height());
    let mask = Mask::new(w, h, pred.mask)?.resize_nearest(ow, oh)?;
    let xs: Vec<usize> = nearest_index(ow, w).collect();
    let prob: Vec<f32> = nearest_index(oh, h)
        .flat_map(|y| xs.iter().map(move |&x| y * w + x))
        .map(|i| pred.prob.data()[i])
        .collect();
    let mut overlay = image.clone();
    overlay_mask(&mut overlay, &mask);

    create_dir(out)?;
    io::write_prob_png(&out.join("prob.png"), ow, oh, &prob)?;
    io::write_mask_png(&out.join("mask.png"), &mask)?;
    io::write_rgb_png(&out.join("overlay.png"), &overlay)?;
    println!("{} of {} pixels predicted forged", mask.forged_count(), ow * oh);
    Ok(())
}

/// Colour of forged pixels in overlays.
pub const OVERLAY_RED: [u8; 3] = [255, 0, 0];

/// Paint forged pixels pure red, leaving the rest untouched.
pub fn overlay_mask(image: &mut RgbImage, mask: &Mask) {
    let w = mask.width();
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m == 1) {
        image.put(i % w, i / w, OVERLAY_RED);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Generate { count, ref out } => cmd_generate(&cfg, count, out),
        Command::Train { ref data, ref out, ref checkpoint, ref from_checkpoint } => {
            cmd_train(&mut cfg, cli.input_size.is_some(), data, out, checkpoint.clone(), from_checkpoint.as_deref())
        }
        Command::Eval { ref target, ref out } => cmd_eval(&cfg, target, out.as_deref()),
        Command::Sweep { ref target, ref grid, ref out } => cmd_sweep(&cfg, target, grid.as_deref(), out.as_deref()),
        Command::Gradcheck { instances, samples } => cmd_gradcheck(&cfg, instances, samples),
        Command::Predict { ref checkpoint, ref image, ref out } => cmd_predict(checkpoint, image, out),
    }
}

/// Parse arguments and run, returning the process exit code. Diagnostics go
/// to stderr as a single line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}
