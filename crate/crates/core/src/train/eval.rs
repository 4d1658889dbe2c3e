use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::arch::{check_parameters, forward};
use crate::data::SampleRecord;
use crate::engine::{Mode, Tensor};
use crate::metrics::{default_thresholds, ConfusionTable, MetricsReport, Summary};

use super::{Checkpoint, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    /// Worker threads for per-image inference; 1 runs inline.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            thresholds: default_thresholds(),
            threads: 1,
        }
    }
}

/// Pooled report from summed confusion counts plus one report per image,
/// in test-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pooled: MetricsReport,
    pub per_image: Vec<(String, MetricsReport)>,
}

#[derive(Serialize)]
struct ImageSummary<'a> {
    id: &'a str,
    #[serde(flatten)]
    summary: Summary,
}

impl EvalReport {
    /// Writes `curve.csv`, `summary.json`, `per_image.json` and
    /// `per_image/<id>.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("per_image"))?;
        self.pooled.save_curve_csv(&dir.join("curve.csv"))?;
        fs::write(dir.join("summary.json"), self.pooled.summary_json())?;
        let rows: Vec<ImageSummary> = self
            .per_image
            .iter()
            .map(|(id, r)| ImageSummary {
                id,
                summary: r.summary(),
            })
            .collect();
        fs::write(
            dir.join("per_image.json"),
            serde_json::to_string_pretty(&rows).expect("summaries serialize"),
        )?;
        for (id, r) in &self.per_image {
            r.save_curve_csv(&dir.join("per_image").join(format!("{id}.csv")))?;
        }
        Ok(())
    }
}

/// Probability map of one image in eval mode.
pub fn predict(ckpt: &Checkpoint, image: &Tensor) -> Result<Tensor, TrainError> {
    let spec = ckpt.spec()?;
    let (tape, trace) = forward(&spec, &ckpt.params, image, Mode::Eval)?;
    Ok(tape.value(trace.prob).clone())
}

pub fn evaluate(ckpt: &Checkpoint, test: &[SampleRecord]) -> Result<EvalReport, TrainError> {
    evaluate_with(ckpt, test, &EvalOptions::default())
}

pub fn evaluate_with(
    ckpt: &Checkpoint,
    test: &[SampleRecord],
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let spec = ckpt.spec()?;
    check_parameters(&spec, &ckpt.params)?;
    for r in test {
        spec.infer_shapes(r.image.shape())?;
    }
    let table = |r: &SampleRecord| -> Result<ConfusionTable, TrainError> {
        let (tape, trace) = forward(&spec, &ckpt.params, &r.image, Mode::Eval)?;
        Ok(ConfusionTable::count(
            tape.value(trace.prob),
            &r.vessel_mask,
            &r.fov_mask,
            &opts.thresholds,
        )?)
    };
    let threads = opts.threads.clamp(1, test.len());
    let tables: Vec<Result<ConfusionTable, TrainError>> = if threads == 1 {
        test.iter().map(table).collect()
    } else {
        let mut slots: Vec<Option<Result<ConfusionTable, TrainError>>> =
            (0..test.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let workers: Vec<_> = (0..threads)
                .map(|t| {
                    let table = &table;
                    s.spawn(move || {
                        (t..test.len())
                            .step_by(threads)
                            .map(|i| (i, table(&test[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for w in workers {
                for (i, res) in w.join().expect("evaluation worker panicked") {
                    slots[i] = Some(res);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every image evaluated"))
            .collect()
    };
    let tables = tables.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pooled = ConfusionTable::pooled(&tables)
        .expect("test set is nonempty")?
        .report();
    let per_image = test
        .iter()
        .zip(&tables)
        .map(|(r, t)| (r.id.clone(), t.report()))
        .collect();
    Ok(EvalReport { pooled, per_image })
}
