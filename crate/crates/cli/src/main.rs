//! `unetmamba` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numeric
//! failure (NaN/Inf, divergence). Progress and results are JSON lines on
//! stdout; `bench` prints CSV.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use unetmamba::data::load_image;
use unetmamba::model::UNetMamba;
use unetmamba::sscan::{bench_scan, bench_to_csv};
use unetmamba::train::{
    parse_size, predict_labels, stats_report, RunConfig, StatsOptions, Trainer, CONFIG_FILE,
};
use unetmamba::Error;

#[derive(Debug, Parser)]
#[command(
    name = "unetmamba",
    version,
    about = "UNet-Mamba semantic segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file; checkpoints go to `<output_dir>/checkpoint`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict label maps for one PPM image or a directory of them.
    Infer {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and inference MAC counts.
    Stats {
        #[arg(long)]
        config: PathBuf,
        /// Input size as HxW.
        #[arg(long, default_value = "1024x1024")]
        size: String,
        /// Build the model with the LSM and report its train-only cost.
        #[arg(long)]
        with_lsm: bool,
    },
    /// Time the selective scan at several sequence lengths (CSV on stdout).
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "4096,8192,16384")]
        l_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 16)]
        d_inner: usize,
        #[arg(long, default_value_t = 16)]
        d_state: usize,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
    },
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn train(config: &Path, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.model.seed = seed;
    }
    let mut trainer = Trainer::<f32>::new(cfg)?;
    let stdout = io::stdout();
    let mut log = stdout.lock();
    let summary = trainer.run(&mut log, true)?;
    let metrics = summary.metrics.report()?;
    writeln!(
        log,
        "{}",
        json!({"event": "done", "steps": summary.steps, "final_loss": summary.final_loss, "metrics": metrics})
    )
    .map_err(|e| Error::Argument(format!("writing log: {e}")))?;
    Ok(())
}

/// `input` itself if it is a file; otherwise the `.ppm` files directly
/// inside it, sorted by name.
fn list_inputs(input: &Path) -> Result<Vec<PathBuf>, Error> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries =
        fs::read_dir(input).map_err(|e| Error::Argument(format!("{}: {e}", input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Argument(format!(
            "{}: no .ppm images found",
            input.display()
        )));
    }
    Ok(files)
}

fn infer(ckpt: &Path, input: &Path, out: &Path) -> Result<(), Error> {
    let cfg = RunConfig::load(&ckpt.join(CONFIG_FILE))?;
    let mut model = UNetMamba::<f32>::new(cfg.model.clone())?;
    model.load_checkpoint(ckpt)?;
    fs::create_dir_all(out).map_err(|e| Error::Argument(format!("{}: {e}", out.display())))?;
    for path in list_inputs(input)? {
        let image = load_image::<f32>(&path)?;
        let labels = predict_labels(&model, &image, cfg.data.tile_size, cfg.data.tile_stride)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let dest = out.join(format!("{stem}.pgm"));
        labels.to_raster().write(&dest)?;
        emit(json!({
            "event": "predicted",
            "input": path.display().to_string(),
            "output": dest.display().to_string(),
            "height": labels.height,
            "width": labels.width,
        }));
    }
    Ok(())
}

fn stats(config: &Path, size: &str, with_lsm: bool) -> Result<(), Error> {
    let cfg = RunConfig::load(config)?;
    let (height, width) = parse_size(size)
        .ok_or_else(|| Error::Argument(format!("--size must look like 1024x1024, got {size:?}")))?;
    let report = stats_report(
        &cfg.model,
        StatsOptions {
            height,
            width,
            with_lsm,
        },
    )?;
    emit(report);
    Ok(())
}

fn bench(
    l_list: &[usize],
    threads: usize,
    d_inner: usize,
    d_state: usize,
    repeats: usize,
) -> Result<(), Error> {
    if threads != 1 {
        return Err(Error::Argument(format!(
            "--threads {threads}: the scan kernel is single-threaded; only 1 is supported"
        )));
    }
    if l_list.is_empty() || l_list.contains(&0) {
        return Err(Error::Argument("--l-list needs positive lengths".into()));
    }
    let rows = bench_scan(l_list, d_inner, d_state, repeats, 0)?;
    print!("{}", bench_to_csv(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed } => train(&config, seed),
        Command::Infer { ckpt, input, out } => infer(&ckpt, &input, &out),
        Command::Stats {
            config,
            size,
            with_lsm,
        } => stats(&config, &size, with_lsm),
        Command::Bench {
            l_list,
            threads,
            d_inner,
            d_state,
            repeats,
        } => bench(&l_list, threads, d_inner, d_state, repeats),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_numeric() { 2 } else { 1 };
            emit(
                json!({"event": "error", "kind": if code == 2 { "numeric" } else { "validation" }, "message": e.to_string()}),
            );
            ExitCode::from(code)
        }
    }
}
