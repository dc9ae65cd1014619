mod images;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stytr_core::config::{ExtractorSource, RunConfig};
use stytr_core::harness::{pe_compare, rounds, stylize_image, write_rounds};
use stytr_core::losses::{load_extractor, FeatureExtractor};
use stytr_core::model::StyTr;
use stytr_core::posenc::PeMode;
use stytr_core::training::{train, ImageSet, TrainOutputs};
use stytr_core::verify::run_all;
use stytr_core::weights::load_weights;
use stytr_core::Error;

/// Exit status for a failed self-check or a numerical failure.
const EXIT_VERIFY: u8 = 1;
/// Exit status for bad flags, configuration, inputs or weight files.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "stytr", version, about = "Transformer-based image style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on directories of .ppm images.
    Train {
        /// key=value run configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        /// Final checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (default: checkpoint path with a .csv extension)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override a configuration key; repeatable
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        ckpt_every: Option<usize>,
        #[arg(long)]
        clip_norm: Option<f64>,
        /// Use unnormalized Euclidean distances in the losses
        #[arg(long)]
        raw_norms: bool,
        /// Print a progress line every this many steps (0 = never)
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Stylize one content image with one style image.
    Stylize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Positional encoding for the content branch (default: as trained)
        #[arg(long)]
        pe: Option<PeMode>,
        /// Centre-crop inputs to a multiple of the patch size
        #[arg(long)]
        crop_to_multiple: bool,
    },
    /// Feed each stylized output back in as content, writing every round.
    Rounds {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pe: Option<PeMode>,
        #[arg(long)]
        crop_to_multiple: bool,
    },
    /// Heatmaps of positional-encoding dot products and norms.
    PeCompare {
        /// Patch grid as ROWSxCOLS
        #[arg(long, value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 18)]
        cape_grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in verification suites.
    Check {
        /// Check this weight file in the serialization suite
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> stytr_core::Result<u8> {
    match cmd {
        Command::Train {
            config,
            content,
            style,
            out,
            log,
            set,
            iters,
            seed,
            batch_size,
            crop,
            lr,
            warmup,
            ckpt_every,
            clip_norm,
            raw_norms,
            log_every,
        } => {
            let mut run = match &config {
                Some(p) => RunConfig::from_file(p)?,
                None => RunConfig::default(),
            };
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
                run.set(k.trim(), v.trim())?;
            }
            let flags = [
                ("total_iters", iters.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("crop", crop.map(|v| v.to_string())),
                ("base_lr", lr.map(|v| v.to_string())),
                ("warmup_steps", warmup.map(|v| v.to_string())),
                ("ckpt_every", ckpt_every.map(|v| v.to_string())),
                ("clip_norm", clip_norm.map(|v| v.to_string())),
                ("raw_norms", raw_norms.then(|| "true".to_string())),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    run.set(k, &v)?;
                }
            }
            run.validate()?;
            let content_set = ImageSet::load_dir(&content, run.train.crop)?;
            let style_set = ImageSet::load_dir(&style, run.train.crop)?;
            let extractor = match &run.extractor {
                ExtractorSource::Builtin { seed, stages } => FeatureExtractor::builtin(*seed, *stages)?,
                ExtractorSource::File(p) => load_extractor(p)?,
            };
            let log = log.unwrap_or_else(|| out.with_extension("csv"));
            let outputs = TrainOutputs {
                checkpoint: Some(out.clone()),
                trace_csv: Some(log.clone()),
            };
            let total = run.train.total_iters;
            let outcome = train(&run, &content_set, &style_set, &extractor, &outputs, |row| {
                if log_every > 0 && (row.step % log_every == 0 || row.step == 1 || row.step == total) {
                    let l = row.loss;
                    eprintln!(
                        "step {:>6}  total {:.5}  L_c {:.5}  L_s {:.5}  L_id1 {:.5}  L_id2 {:.5}  lr {:.2e}",
                        row.step, l.total, l.content, l.style, l.identity_pixel, l.identity_feature, row.lr
                    );
                }
            })?;
            let first = outcome.trace.first().map(|r| r.loss.total).unwrap_or(f64::NAN);
            let last = outcome.trace.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
            println!(
                "trained {total} steps: total loss {first:.5} -> {last:.5}; wrote {} and {}",
                out.display(),
                log.display()
            );
            Ok(0)
        }
        Command::Stylize {
            weights,
            content,
            style,
            out,
            pe,
            crop_to_multiple,
        } => {
            let (model, c, s) = load_inputs(&weights, &content, &style, crop_to_multiple)?;
            let pe = pe.unwrap_or(model.config().content_pe);
            let img = stylize_image(&model, &c, &s, pe)?;
            images::save(&img, &out)?;
            println!("wrote {} ({}x{})", out.display(), img.width(), img.height());
            Ok(0)
        }
        Command::Rounds {
            weights,
            content,
            style,
            n,
            out,
            pe,
            crop_to_multiple,
        } => {
            let (model, c, s) = load_inputs(&weights, &content, &style, crop_to_multiple)?;
            let pe = pe.unwrap_or(model.config().content_pe);
            let imgs = rounds(&model, &c, &s, n, pe)?;
            let paths = write_rounds(&imgs, &out)?;
            println!("wrote {} rounds to {}", paths.len(), out.display());
            Ok(0)
        }
        Command::PeCompare {
            grid,
            out,
            dim,
            cape_grid,
            seed,
        } => {
            let cmp = pe_compare(grid, dim, cape_grid, 8, seed)?;
            let max_dev = cmp
                .sinusoidal
                .data()
                .iter()
                .zip(cmp.closed_form.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            for p in cmp.write(&out)? {
                println!("wrote {}", p.display());
            }
            println!("max |sinusoidal - closed form| = {max_dev:.3e}");
            Ok(0)
        }
        Command::Check { weights } => {
            let results = run_all(weights.as_deref());
            let mut ok = true;
            for r in &results {
                ok &= r.passed;
                println!(
                    "{:<18} {}  max error {:.3e} (tolerance {:.0e})  {}",
                    r.name,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.max_error,
                    r.tolerance,
                    r.detail
                );
            }
            println!("{}", if ok { "all suites passed" } else { "some suites FAILED" });
            Ok(if ok { 0 } else { EXIT_VERIFY })
        }
    }
}

type Inputs = (StyTr<f32>, stytr_core::patching::ImageBuffer, stytr_core::patching::ImageBuffer);

fn load_inputs(weights: &Path, content: &Path, style: &Path, crop: bool) -> stytr_core::Result<Inputs> {
    let (params, config) = load_weights::<f32>(weights)?;
    let model = StyTr::new(config, params)?;
    let m = model.config().patch_size;
    let mut c = images::load(content)?;
    let mut s = images::load(style)?;
    if crop {
        c = c.crop_to_multiple(m)?;
        s = s.crop_to_multiple(m)?;
    }
    Ok((model, c, s))
}
