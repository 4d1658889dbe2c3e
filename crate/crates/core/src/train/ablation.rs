use std::io::{self, Write};
use std::time::Instant;

use serde::Serialize;

use crate::arch::{build_variant, VariantId};
use crate::data::DatasetSplit;

use super::{evaluate_with, train, EvalOptions, TrainConfig, TrainError};

/// One variant's outcome; metric fields are `None` when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: VariantId,
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
    pub best_dice: Option<f64>,
    pub params: usize,
    pub receptive_field: usize,
    pub train_seconds: f64,
    pub error: Option<String>,
}

/// Trains and evaluates every variant with the template's seed, epochs and
/// optimizer settings on the same split. A failing variant yields a marked
/// row and the sweep continues.
pub fn ablation_sweep(
    variants: &[VariantId],
    template: &TrainConfig,
    split: &DatasetSplit,
    eval: &EvalOptions,
) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|&variant| {
            let cfg = TrainConfig {
                variant,
                ..template.clone()
            };
            let (params, receptive_field) = match build_variant(variant, &cfg.arch) {
                Ok(spec) => (spec.param_count(), spec.receptive_field()),
                Err(_) => (0, 0),
            };
            let started = Instant::now();
            let outcome = train(&cfg, split).and_then(|(ckpt, _)| {
                let seconds = started.elapsed().as_secs_f64();
                Ok::<_, TrainError>((evaluate_with(&ckpt, &split.test, eval)?, seconds))
            });
            let mut row = AblationRow {
                variant,
                pr_auc: None,
                roc_auc: None,
                best_dice: None,
                params,
                receptive_field,
                train_seconds: started.elapsed().as_secs_f64(),
                error: None,
            };
            match outcome {
                Ok((report, seconds)) => {
                    row.pr_auc = Some(report.pooled.pr_auc);
                    row.roc_auc = Some(report.pooled.roc_auc);
                    row.best_dice = Some(report.pooled.best_dice);
                    row.train_seconds = seconds;
                    log::info!(
                        "{variant}: roc_auc {:.4} in {seconds:.1}s",
                        report.pooled.roc_auc
                    );
                }
                Err(e) => {
                    log::error!("{variant} failed: {e}");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect()
}

/// `variant,pr_auc,roc_auc,best_dice,params,receptive_field,train_seconds`;
/// failed rows carry `failed` in the metric columns.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "variant,pr_auc,roc_auc,best_dice,params,receptive_field,train_seconds"
    )?;
    let cell = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |v| v.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.variant,
            cell(r.pr_auc),
            cell(r.roc_auc),
            cell(r.best_dice),
            r.params,
            r.receptive_field,
            r.train_seconds
        )?;
    }
    Ok(())
}
