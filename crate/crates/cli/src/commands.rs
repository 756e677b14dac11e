use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use decloss::toy::train::window_means;
use decloss::toy::{save_checkpoint, synthetic_dataset, train, write_trace_csv, TrainingSet};
use decloss::{enhance_tensor, icoo, l1_loss, standard_suite, Error, Tape, Tensor};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::image_io::{list_images, load_image, pair_by_stem, save_image};

#[derive(Parser, Debug)]
#[command(
    name = "decloss",
    version,
    about = "Detail-enhanced contrastive loss tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct ConfigArg {
    /// `key = value` configuration file; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// High-pass enhance an image, or every image in a directory.
    Enhance {
        #[arg(long)]
        alpha: Option<f64>,
        /// Kernel width; `none` picks a quarter of each side.
        #[arg(long)]
        mu: Option<String>,
        /// `exact` or `paper_literal`.
        #[arg(long)]
        inverse: Option<String>,
        /// Stretch each output to the full [0, 1] range before saving.
        #[arg(long)]
        normalize: bool,
        #[command(flatten)]
        config: ConfigArg,
        input: PathBuf,
        output: PathBuf,
    },
    /// Bicubic-downsample every image in a directory.
    Prep {
        #[arg(long)]
        scale: usize,
        hr_dir: PathBuf,
        lr_dir: PathBuf,
    },
    /// L1, contrastive and total loss for SR/HR pairs matched by file name.
    Loss {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Centre-oriented optimisation intensity of an SR set against HR images.
    Icoo {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Write the JSON report here and print a one-line summary instead.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the toy upsampler and write a checkpoint plus a loss trace.
    TrainToy {
        /// Directory of HR images; a seeded synthetic set is used otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// CSV trace path; defaults to the checkpoint path with `.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[arg(long)]
        phase1_epochs: Option<usize>,
        #[arg(long)]
        phase2_epochs: Option<usize>,
        #[arg(long, default_value_t = 50)]
        synthetic_count: usize,
        #[arg(long, default_value_t = 96)]
        synthetic_size: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Finite-difference check of every taped operation.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Peak signal-to-noise ratio between two images, in dB.
    Psnr {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        max: f64,
    },
}

fn load_config(arg: &ConfigArg, overrides: &[(&str, Option<String>)]) -> CliResult<RunConfig> {
    let mut cfg = match &arg.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v).map_err(CliError::Usage)?;
        }
    }
    Ok(cfg)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn write_json(out: &mut dyn Write, v: &Value) -> CliResult<()> {
    writeln!(out, "{v}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

/// Applies `DECL_THREADS` to the global worker pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DECL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        CliError::Usage(format!(
            "DECL_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Enhance {
            alpha,
            mu,
            inverse,
            normalize,
            config,
            input,
            output,
        } => {
            let cfg = load_config(
                &config,
                &[
                    ("enhance.alpha", opt(&alpha)),
                    ("enhance.mu", mu),
                    ("enhance.inverse", inverse),
                ],
            )?;
            cfg.enhance.validate()?;
            enhance_cmd(&cfg, &input, &output, normalize)
        }
        Command::Prep {
            scale,
            hr_dir,
            lr_dir,
        } => prep_cmd(scale, &hr_dir, &lr_dir),
        Command::Loss {
            sr,
            hr,
            patch,
            eta,
            config,
        } => {
            let cfg = load_config(
                &config,
                &[
                    ("contrast.patch_size", opt(&patch)),
                    ("contrast.eta", opt(&eta)),
                ],
            )?;
            loss_cmd(&cfg, &sr, &hr, out)
        }
        Command::Icoo {
            sr,
            hr,
            seed,
            rounds,
            report,
            config,
        } => {
            let cfg = load_config(
                &config,
                &[("icoo.seed", opt(&seed)), ("icoo.rounds", opt(&rounds))],
            )?;
            icoo_cmd(&cfg, &sr, &hr, report.as_deref(), out)
        }
        Command::TrainToy {
            data,
            out: ckpt,
            trace,
            seed,
            steps_per_epoch,
            phase1_epochs,
            phase2_epochs,
            synthetic_count,
            synthetic_size,
            config,
        } => {
            let cfg = load_config(
                &config,
                &[
                    ("train.seed", opt(&seed)),
                    ("train.steps_per_epoch", opt(&steps_per_epoch)),
                    ("train.phase1_epochs", opt(&phase1_epochs)),
                    ("train.phase2_epochs", opt(&phase2_epochs)),
                ],
            )?;
            let trace = trace.unwrap_or_else(|| ckpt.with_extension("csv"));
            let source = match data {
                Some(dir) => DataSource::Directory(dir),
                None => DataSource::Synthetic {
                    count: synthetic_count,
                    size: synthetic_size,
                },
            };
            train_cmd(&cfg, &source, &ckpt, &trace, out)
        }
        Command::Gradcheck { seeds } => gradcheck_cmd(seeds, out),
        Command::Psnr { a, b, max } => {
            let (x, y) = (load_image(&a)?, load_image(&b)?);
            let db = decloss::toy::psnr(&x.pixels, &y.pixels, max).map_err(|e| match e {
                Error::Dimension { .. } => CliError::Data(format!(
                    "{} and {} differ in size ({:?} vs {:?})",
                    a.display(),
                    b.display(),
                    x.pixels.shape(),
                    y.pixels.shape()
                )),
                other => other.into(),
            })?;
            writeln!(out, "{db:.6}").map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

fn stretch(t: &Tensor) -> Tensor {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.0)
    }
}

fn enhance_cmd(cfg: &RunConfig, input: &Path, output: &Path, normalize: bool) -> CliResult<()> {
    let one = |src: &Path, dst: &Path| -> CliResult<()> {
        let img = load_image(src)?;
        let e = enhance_tensor(&img.pixels, &cfg.enhance)?;
        save_image(&if normalize { stretch(&e) } else { e }, dst)
    };
    if input.is_dir() {
        std::fs::create_dir_all(output)
            .map_err(|e| CliError::Data(format!("{}: {e}", output.display())))?;
        let files = list_images(input)?;
        files
            .par_iter()
            .map(|f| one(f, &output.join(f.file_name().expect("listed file"))))
            .collect::<CliResult<Vec<()>>>()?;
        Ok(())
    } else {
        one(input, output)
    }
}

fn prep_cmd(scale: usize, hr_dir: &Path, lr_dir: &Path) -> CliResult<()> {
    if scale == 0 {
        return Err(CliError::Usage("--scale must be >= 1".into()));
    }
    let files = list_images(hr_dir)?;
    std::fs::create_dir_all(lr_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", lr_dir.display())))?;
    files
        .par_iter()
        .map(|f| -> CliResult<()> {
            let img = load_image(f)?;
            let set = TrainingSet::from_hr(&[img.pixels], scale)
                .map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
            save_image(
                &set.lr[0],
                &lr_dir.join(f.file_name().expect("listed file")),
            )
        })
        .collect::<CliResult<Vec<()>>>()?;
    Ok(())
}

/// Largest top-left region whose sides are multiples of `p`.
fn crop_to_multiple(t: &Tensor, p: usize) -> CliResult<Tensor> {
    let s = t.shape();
    let (h, w) = (s[1] / p * p, s[2] / p * p);
    if h == 0 || w == 0 {
        return Err(CliError::Data(format!(
            "image {}x{} is smaller than the patch size {p}",
            s[1], s[2]
        )));
    }
    let mut data = Vec::with_capacity(s[0] * h * w);
    for c in 0..s[0] {
        for y in 0..h {
            let row = (c * s[1] + y) * s[2];
            data.extend_from_slice(&t.data()[row..row + w]);
        }
    }
    Ok(Tensor::new(vec![1, s[0], h, w], data)?)
}

const MAX_MINI_PATCHES: usize = 16_384;

fn loss_cmd(cfg: &RunConfig, sr_dir: &Path, hr_dir: &Path, out: &mut dyn Write) -> CliResult<()> {
    cfg.contrast.validate()?;
    cfg.enhance.validate()?;
    cfg.weights.validate()?;
    if cfg.weights.w2 > 0.0 {
        return Err(CliError::Usage(
            "weights.w2 > 0 needs a perceptual network, which the command line does not provide"
                .into(),
        ));
    }
    let pairs = pair_by_stem(&list_images(sr_dir)?, &list_images(hr_dir)?)?;
    let p = cfg.contrast.patch_size;
    let rows: Vec<Value> = pairs
        .par_iter()
        .map(|(name, sp, hp)| -> CliResult<Value> {
            let (s, h) = (load_image(sp)?, load_image(hp)?);
            if s.pixels.shape() != h.pixels.shape() {
                return Err(CliError::Data(format!(
                    "{} is {:?} but {} is {:?}",
                    sp.display(),
                    s.pixels.shape(),
                    hp.display(),
                    h.pixels.shape()
                )));
            }
            let (st, ht) = (crop_to_multiple(&s.pixels, p)?, crop_to_multiple(&h.pixels, p)?);
            let count = st.numel() / (3 * p * p);
            if count > MAX_MINI_PATCHES {
                return Err(CliError::Data(format!(
                    "{}: {count} mini-patches exceed the limit of {MAX_MINI_PATCHES}; use a larger patch size",
                    sp.display()
                )));
            }
            let tape = Tape::new();
            let (sv, hv) = (tape.constant(st), tape.constant(ht));
            let l1 = l1_loss(sv, hv, cfg.weights.l1_reduction)?.item()?;
            let ld = match decloss::decloss(sv, hv, &cfg.enhance, &cfg.contrast) {
                Ok(v) => Some(v.item()?),
                Err(Error::DegeneratePartition { .. }) => None,
                Err(e) => return Err(CliError::Data(format!("{}: {e}", sp.display()))),
            };
            let total = cfg.weights.w1 * l1 + ld.map_or(0.0, |d| cfg.weights.w3 * d);
            Ok(json!({ "name": name, "l1": l1, "ld": ld, "total": total }))
        })
        .collect::<CliResult<_>>()?;
    let mean = |key: &str| -> Option<f64> {
        let v: Vec<f64> = rows.iter().filter_map(|r| r[key].as_f64()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    write_json(
        out,
        &json!({
            "l1": mean("l1"),
            "ld": mean("ld"),
            "total": mean("total"),
            "images": rows,
            "config": cfg.echo(),
        }),
    )
}

fn load_all(dir: &Path) -> CliResult<Vec<Tensor>> {
    list_images(dir)?
        .par_iter()
        .map(|f| load_image(f).map(|i| i.pixels))
        .collect()
}

fn icoo_cmd(
    cfg: &RunConfig,
    sr_dir: &Path,
    hr_dir: &Path,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    cfg.icoo.validate()?;
    let (sr, hr) = (load_all(sr_dir)?, load_all(hr_dir)?);
    let report = icoo(&sr, &hr, &cfg.icoo)?;
    let mut v = serde_json::to_value(&report).expect("plain data");
    v["config"] = cfg.echo();
    match report_path {
        None => write_json(out, &v),
        Some(p) => {
            std::fs::write(p, format!("{v}\n"))
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            writeln!(
                out,
                "icoo {:.6} over {} rounds ({} SR / {} HR patches per round, seed {})",
                report.score,
                report.rounds,
                report.sr_patch_count,
                report.hr_patch_count,
                report.seed
            )
            .map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

pub enum DataSource {
    Directory(PathBuf),
    Synthetic { count: usize, size: usize },
}

fn train_cmd(
    cfg: &RunConfig,
    source: &DataSource,
    ckpt: &Path,
    trace_path: &Path,
    out: &mut dyn Write,
) -> CliResult<()> {
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    if tcfg.weights.w2 > 0.0 {
        return Err(CliError::Usage(
            "weights.w2 > 0 needs a perceptual network, which the command line does not provide"
                .into(),
        ));
    }
    let (images, data) = match source {
        DataSource::Directory(dir) => (
            load_all(dir)?,
            json!({ "directory": dir.display().to_string() }),
        ),
        DataSource::Synthetic { count, size } => {
            if *count == 0 || *size == 0 {
                return Err(CliError::Usage(
                    "synthetic count and size must be >= 1".into(),
                ));
            }
            (
                synthetic_dataset(*count, *size, tcfg.seed),
                json!({ "synthetic": { "count": count, "size": size, "seed": tcfg.seed } }),
            )
        }
    };
    let set = TrainingSet::from_hr(&images, tcfg.scale)?;
    let result = train(&set, &tcfg, None)?;

    let meta = json!({ "config": cfg.echo(), "data": data, "steps": result.trace.len() });
    save_checkpoint(ckpt, &result.params, meta)?;
    let file = std::fs::File::create(trace_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", trace_path.display())))?;
    write_trace_csv(std::io::BufWriter::new(file), &result.trace)
        .map_err(|e| CliError::Data(format!("{}: {e}", trace_path.display())))?;

    let phase2: Vec<f64> = result.phase(2).iter().map(|r| r.total).collect();
    let smoothed = window_means(&phase2, 10);
    let last = result.trace.last();
    write_json(
        out,
        &json!({
            "checkpoint": ckpt.display().to_string(),
            "trace": trace_path.display().to_string(),
            "steps": result.trace.len(),
            "final": last.map(|r| json!({ "l1": r.l1, "ld": r.ld, "total": r.total })),
            "phase2_smoothed_first": smoothed.first(),
            "phase2_smoothed_min": smoothed.iter().cloned().reduce(f64::min),
            "data": data,
            "config": cfg.echo(),
        }),
    )
}

fn gradcheck_cmd(seeds: u64, out: &mut dyn Write) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let seeds: Vec<u64> = (1..=seeds).collect();
    let reports = standard_suite(&seeds)?;
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    let mut failed = 0;
    for r in &reports {
        writeln!(
            out,
            "{:<24} seed {:<3} max rel err {:.3e}  {}",
            r.name,
            r.seed,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        )
        .map_err(io)?;
        failed += usize::from(!r.passed);
    }
    writeln!(
        out,
        "{} checks, {} failed (tolerance {:e})",
        reports.len(),
        failed,
        decloss::gradcheck::SUITE_TOLERANCE
    )
    .map_err(io)?;
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code;
/// diagnostics go to `err` with an `error:` prefix.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            // clap's rendering already begins with `error:`.
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
