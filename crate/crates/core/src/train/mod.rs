//! Deterministic SGD training, binary checkpoints, evaluation and the
//! variant ablation sweep.
//!
//! Training is single-threaded and a pure function of its config, seed and
//! data, so identical inputs produce bitwise-identical checkpoints.

mod ablation;
mod checkpoint;
mod eval;

use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{
    build_variant, forward, init_parameters, ArchConfig, ArchError, NetworkSpec, VariantId,
};
use crate::data::{DatasetSplit, SampleRecord};
use crate::engine::{EngineError, Mode, ParameterSet, Shape, Tensor};
use crate::metrics::MetricsError;
use crate::rng;

pub use ablation::{ablation_sweep, write_ablation_csv, AblationRow};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC,
};
pub use eval::{evaluate, evaluate_with, predict, EvalOptions, EvalReport};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("record {id} has shape {found}, expected {expected}")]
    ShapeMismatch {
        id: String,
        expected: Shape,
        found: Shape,
    },
    /// Training diverged; `epoch` is the 0-based index of the failing epoch.
    #[error("non-finite loss in epoch index {epoch} ({detail})")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: VariantId,
    pub arch: ArchConfig,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    /// Random horizontal and vertical flips.
    pub flips: bool,
    /// Train on seeded random square crops of this side instead of whole images.
    #[serde(default)]
    pub crop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: VariantId::MsresnetSsa2,
            arch: ArchConfig::desk(),
            epochs: 60,
            lr: 0.01,
            momentum: 0.9,
            batch: 4,
            seed: 0,
            flips: true,
            crop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if self.batch == 0 {
            return bad("batch size must be positive".into());
        }
        if self.crop == Some(0) {
            return bad("crop size must be positive".into());
        }
        self.arch.validate()?;
        Ok(())
    }
}

/// Per-epoch mean training loss and wall-clock time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub loss: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl History {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// `epoch,loss,seconds` with 1-based epochs.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,loss,seconds")?;
        for (i, (l, s)) in self.loss.iter().zip(&self.seconds).enumerate() {
            writeln!(out, "{},{l},{s}", i + 1)?;
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation over FOV pixels.
pub fn channel_stats(records: &[SampleRecord]) -> (Vec<f64>, Vec<f64>) {
    let channels = records.first().map_or(1, |r| r.image.shape().c);
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut count = 0.0f64;
    for r in records {
        let plane = r.image.shape().plane();
        for (i, &f) in r.fov_mask.data().iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            count += 1.0;
            for c in 0..channels {
                let v = r.image.data()[c * plane + i];
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1.0)).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / count.max(1.0) - m * m).max(0.0);
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Checks that every record fits the network: all share the first one's
/// shape, or with cropping, its channel count and at least the crop size.
fn check_records(
    spec: &NetworkSpec,
    records: &[SampleRecord],
    crop: Option<usize>,
) -> Result<(), TrainError> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let expected = match crop {
        Some(c) => Shape::new(1, first.image.shape().c, c, c),
        None => first.image.shape(),
    };
    for r in records {
        let found = r.image.shape();
        let fits = match crop {
            Some(c) => found.c == expected.c && found.h >= c && found.w >= c,
            None => found == expected,
        };
        if !fits {
            return Err(TrainError::ShapeMismatch {
                id: r.id.clone(),
                expected,
                found,
            });
        }
    }
    spec.infer_shapes(expected)?;
    Ok(())
}

/// Fresh parameters with the input normalization fitted to `train`.
pub fn initial_parameters(
    cfg: &TrainConfig,
    spec: &NetworkSpec,
    train: &[SampleRecord],
) -> Result<ParameterSet, TrainError> {
    let mut params = init_parameters(spec, rng::derive_seed(cfg.seed, 0));
    if !train.is_empty() {
        let (mean, std) = channel_stats(train);
        let n = mean.len();
        params.set_value("input_norm.mean", Tensor::from_vec(Shape::vector(n), mean))?;
        params.set_value("input_norm.std", Tensor::from_vec(Shape::vector(n), std))?;
    }
    Ok(params)
}

fn flipped(t: &Tensor, h: bool, v: bool) -> Tensor {
    let t = if h { t.flip_horizontal() } else { t.clone() };
    if v {
        t.flip_vertical()
    } else {
        t
    }
}

/// One forward/backward/update step; returns the batch loss.
fn sgd_batch(
    spec: &NetworkSpec,
    params: &mut ParameterSet,
    cfg: &TrainConfig,
    image: &Tensor,
    targets: &[Tensor],
    fovs: &[Tensor],
) -> Result<f64, TrainError> {
    let (mut tape, trace) = forward(spec, params, image, Mode::Train)?;
    let loss = tape.balanced_bce_loss(trace.prob, &Tensor::stack(targets), &Tensor::stack(fovs))?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss, params)?;
    params.sgd_step(cfg.lr, cfg.momentum)?;
    trace.apply_running_updates(params)?;
    Ok(value)
}

/// Trains `cfg.variant` on `split.train`; the test list is not touched.
pub fn train(cfg: &TrainConfig, split: &DatasetSplit) -> Result<(Checkpoint, History), TrainError> {
    train_records(cfg, &split.train)
}

pub fn train_records(
    cfg: &TrainConfig,
    records: &[SampleRecord],
) -> Result<(Checkpoint, History), TrainError> {
    cfg.validate()?;
    let spec = build_variant(cfg.variant, &cfg.arch)?;
    if cfg.epochs > 0 && records.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    check_records(&spec, records, cfg.crop)?;
    let mut params = initial_parameters(cfg, &spec, records)?;
    let mut history = History::default();
    let mut stream = rng::seeded(rng::derive_seed(cfg.seed, 1));
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        rng::shuffle(&mut order, &mut stream);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let (mut images, mut targets, mut fovs) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let r = &records[i];
                let (h, v) = if cfg.flips {
                    (
                        rng::uniform(&mut stream, 0.0, 1.0) < 0.5,
                        rng::uniform(&mut stream, 0.0, 1.0) < 0.5,
                    )
                } else {
                    (false, false)
                };
                let (y0, x0) = match cfg.crop {
                    Some(c) => {
                        let s = r.image.shape();
                        (
                            rng::uniform_int(&mut stream, 0, (s.h - c) as u64) as usize,
                            rng::uniform_int(&mut stream, 0, (s.w - c) as u64) as usize,
                        )
                    }
                    None => (0, 0),
                };
                let window = |t: &Tensor| match cfg.crop {
                    Some(c) => t.crop(y0, x0, c, c),
                    None => t.clone(),
                };
                images.push(flipped(&window(&r.image), h, v));
                targets.push(flipped(&window(&r.vessel_mask), h, v));
                fovs.push(flipped(&window(&r.fov_mask), h, v));
            }
            let image = Tensor::stack(&images);
            let value = sgd_batch(&spec, &mut params, cfg, &image, &targets, &fovs).map_err(
                |e| match e {
                    TrainError::Engine(EngineError::NonFinite { op })
                    | TrainError::Arch(ArchError::Engine(EngineError::NonFinite { op })) => {
                        TrainError::NonFiniteLoss {
                            epoch,
                            detail: format!("{op} produced a non-finite value"),
                        }
                    }
                    other => other,
                },
            )?;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    detail: format!("loss {value}"),
                });
            }
            total += value;
            batches += 1;
            step += 1;
        }
        let mean = total / batches as f64;
        let seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {}/{}: loss {mean:.6} ({seconds:.2}s)",
            epoch + 1,
            cfg.epochs
        );
        history.loss.push(mean);
        history.seconds.push(seconds);
    }

    let ckpt = Checkpoint {
        variant: cfg.variant,
        config: cfg.arch.clone(),
        params,
        step,
        seed: cfg.seed,
    };
    Ok((ckpt, history))
}
