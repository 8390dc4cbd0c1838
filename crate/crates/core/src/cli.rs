//! `bafusion` command-line front end.
//!
//! Tables go to stdout, diagnostics to stderr. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 checkpoint or image format error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::TrainConfig;
use crate::data::{build_synthetic_dataset, load_pairs};
use crate::error::{Error, Result};
use crate::imageio::{brightness_jitter, histogram, read_image, write_image, ImagePair};
use crate::losses::LossReport;
use crate::metrics::evaluate_directory;
use crate::robustness::robustness_sweep;
use crate::train::train_loop;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "bafusion",
    version,
    about = "Brightness-adaptive infrared/visible image fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint; prints the loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train on N generated pairs instead of `data_dir`.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        #[arg(long, default_value = "bafusion.ckpt")]
        out: PathBuf,
    },
    /// Fuse one visible/infrared pair.
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Brightness gain applied to the visible image first.
        #[arg(long)]
        gain: Option<f32>,
    },
    /// Print the metric table for `<id>_vis.ppm`, `<id>_ir.pgm`, `<id>_fused.ppm` triples.
    Eval {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Apply `clamp(gain * v^gamma)` to an image.
    Jitter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gain: f32,
        #[arg(long, default_value_t = 1.0)]
        gamma: f32,
    },
    /// Write the 256-bin luminance histogram as `bin TAB count` lines.
    Histogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-channel gate logits and indicators for one pair.
    InspectGate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gain: Option<f32>,
    },
    /// Fuse pairs across brightness gains and print a stability table.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of `<id>_vis.ppm` / `<id>_ir.pgm` pairs.
        #[arg(long, conflicts_with_all = ["vis", "ir"], required_unless_present = "vis")]
        dir: Option<PathBuf>,
        #[arg(long, requires = "ir")]
        vis: Option<PathBuf>,
        #[arg(long, requires = "vis")]
        ir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
        gains: Vec<f32>,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format { .. } => EXIT_FORMAT,
        Error::Parameter(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the verb and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bafusion: {e}");
            exit_code(&e)
        }
    }
}

fn stdout_text(s: &str) -> Result<()> {
    std::io::stdout()
        .lock()
        .write_all(s.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn load_pair(vis: &Path, ir: &Path, gain: Option<f32>) -> Result<ImagePair> {
    let mut visible = read_image(vis)?;
    if let Some(g) = gain {
        visible = brightness_jitter(&visible, g, 1.0)?;
    }
    let id = vis.file_stem().and_then(|s| s.to_str()).unwrap_or("pair");
    ImagePair::new(id, visible, read_image(ir)?)
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train {
            config,
            synthetic,
            out,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let cfg = TrainConfig::parse(&text)?;
            let dataset = match (synthetic, &cfg.data_dir) {
                (Some(n), _) => build_synthetic_dataset(cfg.seed, n, cfg.image_size)
                    .map_err(|e| Error::Config(e.to_string()))?,
                (None, Some(dir)) => load_pairs(dir)?,
                (None, None) => {
                    return Err(Error::Config(
                        "no data_dir in config and no --synthetic count".into(),
                    ));
                }
            };
            eprintln!(
                "training on {} pairs for {} iterations",
                dataset.len(),
                cfg.iters
            );
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", LossReport::HEADER);
            let outcome = train_loop(&cfg, &dataset, |r| {
                let _ = writeln!(stdout, "{r}");
            })?;
            save_checkpoint(&outcome.checkpoint, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Fuse {
            ckpt,
            vis,
            ir,
            out,
            gain,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let pair = load_pair(&vis, &ir, gain)?;
            let (fused, _) = ck.model.fuse(&pair.visible, &pair.infrared)?;
            write_image(&fused.clamp01(), &out)?;
        }
        Command::Eval { dir } => {
            let report = evaluate_directory(&dir)?;
            stdout_text(&report.to_tsv())?;
            for m in &report.missing {
                eprintln!("bafusion: {m}");
            }
            if report.rows.is_empty() {
                eprintln!("bafusion: no complete triples in {}", dir.display());
                return Ok(EXIT_DATA);
            }
            if !report.missing.is_empty() {
                return Ok(EXIT_DATA);
            }
        }
        Command::Jitter {
            input,
            out,
            gain,
            gamma,
        } => {
            write_image(&brightness_jitter(&read_image(&input)?, gain, gamma)?, &out)?;
        }
        Command::Histogram { input, out } => {
            write_text(&out, &histogram(&read_image(&input)?)?.to_tsv())?;
        }
        Command::InspectGate {
            ckpt,
            vis,
            ir,
            out,
            gain,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let pair = load_pair(&vis, &ir, gain)?;
            let (_, gate) = ck.model.fuse(&pair.visible, &pair.infrared)?;
            write_text(&out, &format!("channel\talpha\tw\n{}", gate.to_tsv(0)))?;
        }
        Command::Sweep {
            ckpt,
            dir,
            vis,
            ir,
            gains,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let pairs = match (dir, vis, ir) {
                (Some(d), _, _) => load_pairs(d)?,
                (None, Some(v), Some(i)) => vec![load_pair(&v, &i, None)?],
                _ => {
                    return Err(Error::Parameter(
                        "sweep needs --dir or --vis and --ir".into(),
                    ))
                }
            };
            stdout_text(&robustness_sweep(&ck.model, &pairs, &gains)?.to_tsv())?;
        }
    }
    Ok(EXIT_OK)
}
