use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gcn_core::checkpoint::{load_checkpoint, save_checkpoint};
use gcn_core::config::{load_splits, ExperimentConfig};
use gcn_core::data::{load_idx, make_rot, write_idx};
use gcn_core::experiment::{
    checkpoint_meta, compare_params, sweep, train_run, write_epoch_csv, write_sweep_csv, SweepAxis,
};
use gcn_core::gabor::{build_bank, render_bank, GaborParams, DEFAULT_SIGMA};
use gcn_core::gradcheck::{run_gradcheck, Corruption, GradcheckConfig};
use gcn_core::network::ParamReport;
use gcn_core::train::{evaluate, mean_loss};
use gcn_core::{GcnError, Result};
use serde_json::json;

const THREADS_ENV: &str = "GCN_THREADS";
const FULL_EPOCHS: usize = 200;

#[derive(Parser)]
#[command(name = "gcn", version, about = "Gabor convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Scale,
    Orientation,
}

#[derive(Subcommand)]
enum Command {
    /// Render a Gabor bank as PNG images plus a CSV of raw values.
    GenFilters {
        #[arg(long)]
        u: usize,
        #[arg(long)]
        v: usize,
        #[arg(long)]
        kernel: usize,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// TOML overriding the default check settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Persisted and effective parameter counts.
    Params {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write epochs.csv, summary.json and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use every sample and train for 200 epochs.
        #[arg(long)]
        full: bool,
        /// Report all durations as zero.
        #[arg(long)]
        no_timing: bool,
    },
    /// Error rate of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split of the config's data: train, val or test.
        #[arg(long, requires = "config", conflicts_with_all = ["images", "labels"])]
        dataset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
        /// Rotate the IDX images with this seed before evaluating.
        #[arg(long, requires = "images")]
        rotate_seed: Option<u64>,
    },
    /// Train across orientation counts or scale counts.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// CSV destination; the table is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rotate every image of an IDX pair by a seeded random angle.
    MakeRot {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_images: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GcnError::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| GcnError::Config(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GcnError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| GcnError::io(path, e))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| GcnError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| GcnError::io(path, e))
}

fn print_report(title: &str, r: &ParamReport) {
    println!("{title}");
    println!(
        "  {:>5}  {:<8} {:>10} {:>10} {:>7}",
        "layer", "kind", "persisted", "effective", "bias"
    );
    for l in &r.layers {
        println!(
            "  {:>5}  {:<8} {:>10} {:>10} {:>7}",
            l.index, l.kind, l.persisted, l.effective, l.bias
        );
    }
    println!(
        "  conv persisted {}  conv effective {}  fc {}  bias {}  total persisted {}",
        r.conv_persisted, r.conv_effective, r.fc_weights, r.biases, r.total_persisted
    );
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenFilters {
            u,
            v,
            kernel,
            sigma,
            out,
        } => {
            let bank = build_bank(GaborParams {
                num_orientations: u,
                num_scales: v,
                kernel_size: kernel,
                sigma,
            })?;
            render_bank(&bank, &out)?;
            println!("u,v,min,max,energy");
            for k in bank.summary() {
                println!("{},{},{:.6e},{:.6e},{:.6e}", k.u, k.v, k.min, k.max, k.energy);
            }
            eprintln!("wrote {} kernels to {}", u * v, out.display());
        }
        Command::Gradcheck {
            config,
            out,
            corrupt_backward,
        } => {
            let cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| GcnError::io(&path, e))?;
                    toml::from_str::<GradcheckConfig>(&text).map_err(|e| GcnError::Config(e.to_string()))?
                }
                None => GradcheckConfig::default(),
            };
            let corruption = if corrupt_backward {
                Corruption(1e-3)
            } else {
                Corruption::default()
            };
            let report = run_gradcheck(&cfg, corruption)?;
            for c in &report.cases {
                println!(
                    "{:>3} {:<7} U={} W={} M={} D={} params={:<5} reduced={:<3} max_rel_error={:.3e} {}",
                    c.case,
                    c.kind,
                    c.orientations,
                    c.kernel,
                    c.filters,
                    c.depth,
                    c.params,
                    c.reduced_steps,
                    c.max_rel_error,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if !report.passed {
                return Err(GcnError::Verification(format!(
                    "max relative error {:.3e} exceeds {:.0e}",
                    report.max_rel_error, report.tolerance
                )));
            }
            println!("gradcheck passed: max relative error {:.3e}", report.max_rel_error);
        }
        Command::Params { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let cmp = compare_params(&cfg.model)?;
            print_report("model", &cmp.model);
            print_report("equivalent cnn", &cmp.equivalent_cnn);
            println!(
                "conv effective/persisted = {}  equivalent cnn/model conv = {}",
                cmp.expansion, cmp.cnn_ratio
            );
            if let Some(path) = out {
                write_json(&path, &cmp)?;
            }
            if !cmp.compression_holds {
                return Err(GcnError::Verification(
                    "persisted conv parameters do not equal effective parameters / U".into(),
                ));
            }
        }
        Command::Train {
            config,
            out,
            seed,
            epochs,
            full,
            no_timing,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if full {
                cfg.data.full = true;
                cfg.schedule.epochs = FULL_EPOCHS;
            }
            if let Some(e) = epochs {
                cfg.schedule.epochs = e;
            }
            let splits = load_splits(&cfg.data)?;
            fs::create_dir_all(&out).map_err(|e| GcnError::io(&out, e))?;
            let outcome = train_run(&cfg, &splits, !no_timing, |m| {
                eprintln!(
                    "epoch {:>3}  lr {:.3e}  loss {:.4}  val error {:.4}  {:.1}s",
                    m.epoch, m.lr, m.train_loss, m.val_error, m.seconds
                );
            })?;
            let csv_path = out.join("epochs.csv");
            write_epoch_csv(create(&csv_path)?, &outcome.epochs)?;
            write_json(&out.join("summary.json"), &outcome.summary)?;
            let meta = checkpoint_meta(&cfg, outcome.epochs.len());
            save_checkpoint(&out.join("model.ckpt"), &outcome.network, &meta)?;
            println!(
                "test error {:.4}  train error {:.4}",
                outcome.summary.test_error, outcome.summary.train_error
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            config,
            images,
            labels,
            rotate_seed,
        } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let (name, data) = match (dataset, config, images, labels) {
                (Some(split), Some(config), _, _) => {
                    let cfg = ExperimentConfig::load(&config)?;
                    let splits = load_splits(&cfg.data)?;
                    let data = splits.get(&split)?.clone();
                    (split, data)
                }
                (None, _, Some(images), Some(labels)) => {
                    let data = load_idx(&images, &labels)?;
                    let data = match rotate_seed {
                        Some(seed) => make_rot(&data, seed)?,
                        None => data,
                    };
                    (images.display().to_string(), data)
                }
                _ => {
                    return Err(GcnError::Config(
                        "give --dataset with --config, or --images with --labels".into(),
                    ))
                }
            };
            let result = json!({
                "dataset": name,
                "samples": data.len(),
                "error_rate": evaluate(&net, &data)?,
                "loss": mean_loss(&net, &data)?,
            });
            println!("{}", serde_json::to_string_pretty(&result).expect("plain values"));
        }
        Command::Sweep {
            axis,
            config,
            repeats,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(e) = epochs {
                cfg.schedule.epochs = e;
            }
            let axis = match axis {
                Axis::Scale => SweepAxis::Scale,
                Axis::Orientation => SweepAxis::Orientation,
            };
            let splits = load_splits(&cfg.data)?;
            let rows = sweep(&cfg, &splits, axis, repeats, |u, v, s| {
                eprintln!("U={u} V={v} seed {}: test error {:.4}", s.seed, s.test_error);
            })?;
            let mut table = Vec::new();
            write_sweep_csv(&mut table, &rows)?;
            print!("{}", String::from_utf8_lossy(&table));
            if let Some(path) = out {
                let mut f = create(&path)?;
                std::io::Write::write_all(&mut f, &table).map_err(|e| GcnError::io(&path, e))?;
            }
        }
        Command::MakeRot {
            images,
            labels,
            seed,
            out_images,
            out_labels,
        } => {
            let data = load_idx(&images, &labels)?;
            let rotated = make_rot(&data, seed)?;
            write_idx(&rotated, &out_images, &out_labels)?;
            eprintln!("rotated {} images with seed {seed}", rotated.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
