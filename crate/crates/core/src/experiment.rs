//! Training runs, orientation/scale sweeps and parameter accounting.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointMeta;
use crate::config::{DataSplits, ExperimentConfig, MNIST_SHAPE};
use crate::data::NUM_CLASSES;
use crate::error::{GcnError, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::network::{Network, ParamReport};
use crate::train::{evaluate, mean_loss, EpochMetrics, Trainer};

pub const EPOCH_CSV_TAG: &str = "#gcn-epochs-v1";
pub const EPOCH_CSV_HEADER: [&str; 5] = ["epoch", "lr", "train_loss", "val_error", "seconds"];
pub const SWEEP_CSV_TAG: &str = "#gcn-sweep-v1";
pub const SWEEP_CSV_HEADER: [&str; 6] = [
    "u",
    "v",
    "repeats",
    "mean_test_error",
    "min_test_error",
    "max_test_error",
];
pub const SUMMARY_SCHEMA: &str = "gcn-summary-v1";

const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Freshly initialized network for `model`, seeded by `seed`.
pub fn build_network(model: &ModelConfig, seed: u64) -> Result<Network> {
    model.build(MNIST_SHAPE, NUM_CLASSES, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub model: ModelKind,
    pub widths: Vec<usize>,
    pub orientations: usize,
    pub scales: usize,
    pub seed: u64,
    pub epochs: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub final_lr: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_val_error: Option<f64>,
    pub train_error: f64,
    pub test_error: f64,
    pub test_loss: f64,
    pub params: ParamReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub epochs: Vec<EpochMetrics>,
    pub summary: RunSummary,
}

/// Trains per `cfg.schedule` and evaluates on the train and test splits.
/// With `timing` off every duration is reported as zero, making the outputs
/// reproducible byte for byte.
pub fn train_run(
    cfg: &ExperimentConfig,
    splits: &DataSplits,
    timing: bool,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let seed = cfg.run.seed;
    let net = build_network(&cfg.model, seed)?;
    let mut trainer = Trainer::new(net, cfg.schedule.clone(), seed ^ SHUFFLE_STREAM)?;
    let mut epochs = Vec::with_capacity(cfg.schedule.epochs);
    for _ in 0..cfg.schedule.epochs {
        let mut m = trainer.train_epoch(&splits.train, &splits.val)?;
        if !timing {
            m.seconds = 0.0;
        }
        on_epoch(&m);
        epochs.push(m);
    }
    let network = trainer.into_network();
    let last = epochs.last();
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        model: cfg.model.kind,
        widths: cfg.model.widths.clone(),
        orientations: cfg.model.orientations,
        scales: cfg.model.scales,
        seed,
        epochs: epochs.len(),
        train_size: splits.train.len(),
        test_size: splits.test.len(),
        final_lr: last.map(|m| m.lr),
        final_train_loss: last.map(|m| m.train_loss),
        final_val_error: last.map(|m| m.val_error).filter(|e| e.is_finite()),
        train_error: evaluate(&network, &splits.train)?,
        test_error: evaluate(&network, &splits.test)?,
        test_loss: mean_loss(&network, &splits.test)?,
        params: network.param_report(),
        seconds: if timing { start.elapsed().as_secs_f64() } else { 0.0 },
    };
    Ok(TrainOutcome {
        network,
        epochs,
        summary,
    })
}

pub fn checkpoint_meta(cfg: &ExperimentConfig, epoch: usize) -> CheckpointMeta {
    CheckpointMeta {
        epoch,
        seed: cfg.run.seed,
        schedule: cfg.schedule.clone(),
        model: Some(cfg.model.clone()),
        input: MNIST_SHAPE,
        num_classes: NUM_CLASSES,
    }
}

fn csv_err(e: csv::Error) -> GcnError {
    GcnError::Format(format!("csv: {e}"))
}

fn write_tag(w: &mut impl Write, tag: &str) -> Result<()> {
    writeln!(w, "{tag}").map_err(|e| GcnError::Format(format!("write failed: {e}")))
}

/// Reads the version line and returns the remaining text.
fn read_tagged(r: &mut impl Read, tag: &str) -> Result<String> {
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|e| GcnError::Format(format!("read failed: {e}")))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first.trim_end() != tag {
        return Err(GcnError::Format(format!(
            "expected {tag:?} on the first line, found {first:?}"
        )));
    }
    Ok(rest.to_string())
}

pub fn write_epoch_csv(mut w: impl Write, epochs: &[EpochMetrics]) -> Result<()> {
    write_tag(&mut w, EPOCH_CSV_TAG)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(EPOCH_CSV_HEADER).map_err(csv_err)?;
    for m in epochs {
        out.write_record([
            m.epoch.to_string(),
            m.lr.to_string(),
            m.train_loss.to_string(),
            m.val_error.to_string(),
            format!("{:.3}", m.seconds),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| GcnError::Format(format!("write failed: {e}")))
}

pub fn read_epoch_csv(mut r: impl Read) -> Result<Vec<EpochMetrics>> {
    let body = read_tagged(&mut r, EPOCH_CSV_TAG)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().ne(EPOCH_CSV_HEADER) {
        return Err(GcnError::Format(format!("unexpected epoch columns {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| GcnError::Format(format!("bad {} value {:?}", EPOCH_CSV_HEADER[i], &rec[i])))
        };
        out.push(EpochMetrics {
            epoch: num(0)? as usize,
            lr: num(1)?,
            train_loss: num(2)?,
            val_error: num(3)?,
            seconds: num(4)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Scale,
    Orientation,
}

impl SweepAxis {
    /// `(U, V)` pairs swept, the unswept value taken from `model`.
    pub fn grid(self, model: &ModelConfig) -> Vec<(usize, usize)> {
        match self {
            SweepAxis::Orientation => (2..=7).map(|u| (u, model.scales)).collect(),
            SweepAxis::Scale => [1, 4].into_iter().map(|v| (model.orientations, v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub u: usize,
    pub v: usize,
    pub test_errors: Vec<f64>,
    pub mean_test_error: f64,
}

/// Trains `repeats` seeds (`run.seed`, `run.seed + 1`, ...) per grid point.
pub fn sweep(
    cfg: &ExperimentConfig,
    splits: &DataSplits,
    axis: SweepAxis,
    repeats: usize,
    mut on_run: impl FnMut(usize, usize, &RunSummary),
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(GcnError::Config("sweep needs at least one repeat".into()));
    }
    if cfg.model.kind != ModelKind::Gcn {
        return Err(GcnError::Config(
            "sweeps vary the Gabor bank and need a gcn model".into(),
        ));
    }
    let mut rows = Vec::new();
    for (u, v) in axis.grid(&cfg.model) {
        let mut run_cfg = cfg.clone();
        run_cfg.model.orientations = u;
        run_cfg.model.scales = v;
        let mut errors = Vec::with_capacity(repeats);
        for r in 0..repeats {
            run_cfg.run.seed = cfg.run.seed.wrapping_add(r as u64);
            let outcome = train_run(&run_cfg, splits, false, |_| {})?;
            on_run(u, v, &outcome.summary);
            errors.push(outcome.summary.test_error);
        }
        rows.push(SweepRow {
            u,
            v,
            mean_test_error: errors.iter().sum::<f64>() / repeats as f64,
            test_errors: errors,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow]) -> Result<()> {
    write_tag(&mut w, SWEEP_CSV_TAG)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        let min = row.test_errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = row.test_errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.write_record([
            row.u.to_string(),
            row.v.to_string(),
            row.test_errors.len().to_string(),
            row.mean_test_error.to_string(),
            min.to_string(),
            max.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| GcnError::Format(format!("write failed: {e}")))
}

/// Parses a sweep table into `(u, v, repeats, mean)` rows.
pub fn read_sweep_csv(mut r: impl Read) -> Result<Vec<(usize, usize, usize, f64)>> {
    let body = read_tagged(&mut r, SWEEP_CSV_TAG)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().ne(SWEEP_CSV_HEADER) {
        return Err(GcnError::Format(format!("unexpected sweep columns {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let bad = |i: usize| GcnError::Format(format!("bad {} value {:?}", SWEEP_CSV_HEADER[i], &rec[i]));
        out.push((
            rec[0].parse().map_err(|_| bad(0))?,
            rec[1].parse().map_err(|_| bad(1))?,
            rec[2].parse().map_err(|_| bad(2))?,
            rec[3].parse().map_err(|_| bad(3))?,
        ));
    }
    Ok(out)
}

/// Parameter counts of a model next to the plain CNN with the same feature
/// map widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsComparison {
    pub kind: ModelKind,
    pub orientations: usize,
    pub model: ParamReport,
    pub equivalent_cnn: ParamReport,
    /// `conv_effective / conv_persisted` of the model.
    pub expansion: f64,
    /// Persisted conv weights of the equivalent CNN over those of the model.
    pub cnn_ratio: f64,
    pub compression_holds: bool,
}

pub fn compare_params(model: &ModelConfig) -> Result<ParamsComparison> {
    let net = build_network(model, 0)?;
    let cnn = build_network(&model.equivalent_cnn(), 0)?;
    let (a, b) = (net.param_report(), cnn.param_report());
    let factor = match model.kind {
        ModelKind::Gcn => model.orientations,
        ModelKind::Cnn => 1,
    };
    let compression_holds = a.conv_persisted * factor == a.conv_effective && a.conv_effective == b.conv_persisted;
    Ok(ParamsComparison {
        kind: model.kind,
        orientations: model.orientations,
        expansion: a.conv_effective as f64 / a.conv_persisted as f64,
        cnn_ratio: b.conv_persisted as f64 / a.conv_persisted as f64,
        compression_holds,
        model: a,
        equivalent_cnn: b,
    })
}
