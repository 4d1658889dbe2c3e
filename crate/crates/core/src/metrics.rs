//! Threshold sweeps over probability maps: PR and ROC curves, trapezoidal
//! AUCs and the best Dice score, all restricted to a field-of-view mask.
//!
//! Counting is split from curve construction so that per-image tables can be
//! summed into a pooled report ([`ConfusionTable::merge`]).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::engine::{Shape, Tensor};

/// Number of thresholds in [`default_thresholds`].
pub const DEFAULT_LEVELS: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: prob {prob}, gt {gt}, fov {fov}")]
    ShapeMismatch { prob: Shape, gt: Shape, fov: Shape },
    #[error("field-of-view mask is empty")]
    EmptyFov,
    #[error("{0} mask is not binary")]
    NonBinary(&'static str),
    #[error("probability map contains a non-finite value")]
    NonFinite,
    #[error("threshold list is empty")]
    NoThresholds,
    #[error("thresholds must be finite and sorted ascending")]
    UnsortedThresholds,
    #[error("cannot merge tables built on different thresholds")]
    ThresholdMismatch,
}

/// `i / 255` for `i` in `0..256`.
pub fn default_thresholds() -> Vec<f64> {
    (0..DEFAULT_LEVELS)
        .map(|i| i as f64 / (DEFAULT_LEVELS - 1) as f64)
        .collect()
}

/// `2tp / (2tp + fp + fn)`, or 1 when all counts are zero.
pub fn dice(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// 1 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    /// 0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }

    pub fn dice(&self) -> f64 {
        dice(self.tp, self.fp, self.fn_)
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
}

impl CurvePoint {
    fn new(threshold: f64, c: Confusion) -> Self {
        CurvePoint {
            threshold,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            tpr: c.recall(),
            fpr: c.fpr(),
        }
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }

    pub fn dice(&self) -> f64 {
        dice(self.tp, self.fp, self.fn_)
    }
}

/// Per-threshold confusion counts. A pixel is predicted positive at
/// threshold `t` when `prob >= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionTable {
    thresholds: Vec<f64>,
    counts: Vec<Confusion>,
}

impl ConfusionTable {
    /// Counts FOV pixels of `prob` against `gt` at every threshold.
    pub fn count(
        prob: &Tensor,
        gt: &Tensor,
        fov: &Tensor,
        thresholds: &[f64],
    ) -> Result<Self, MetricsError> {
        check_thresholds(thresholds)?;
        if prob.shape() != gt.shape() || prob.shape() != fov.shape() {
            return Err(MetricsError::ShapeMismatch {
                prob: prob.shape(),
                gt: gt.shape(),
                fov: fov.shape(),
            });
        }
        let binary = |t: &Tensor| t.data().iter().all(|&v| v == 0.0 || v == 1.0);
        if !binary(gt) {
            return Err(MetricsError::NonBinary("ground-truth"));
        }
        if !binary(fov) {
            return Err(MetricsError::NonBinary("fov"));
        }
        // hist[k]: pixels predicted positive at exactly the first k thresholds.
        let levels = thresholds.len();
        let mut pos_hist = vec![0u64; levels + 1];
        let mut neg_hist = vec![0u64; levels + 1];
        let mut inside = 0u64;
        for ((&p, &g), &f) in prob.data().iter().zip(gt.data()).zip(fov.data()) {
            if f == 0.0 {
                continue;
            }
            if !p.is_finite() {
                return Err(MetricsError::NonFinite);
            }
            inside += 1;
            let k = thresholds.partition_point(|&t| t <= p);
            if g == 1.0 {
                pos_hist[k] += 1;
            } else {
                neg_hist[k] += 1;
            }
        }
        if inside == 0 {
            return Err(MetricsError::EmptyFov);
        }
        let positives: u64 = pos_hist.iter().sum();
        let negatives: u64 = neg_hist.iter().sum();
        let mut counts = vec![Confusion::default(); levels];
        let (mut tp, mut fp) = (0u64, 0u64);
        for i in (0..levels).rev() {
            tp += pos_hist[i + 1];
            fp += neg_hist[i + 1];
            counts[i] = Confusion {
                tp,
                fp,
                tn: negatives - fp,
                fn_: positives - tp,
            };
        }
        Ok(ConfusionTable {
            thresholds: thresholds.to_vec(),
            counts,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn counts(&self) -> &[Confusion] {
        &self.counts
    }

    /// Adds another table's counts (pooling over images).
    pub fn merge(&mut self, other: &ConfusionTable) -> Result<(), MetricsError> {
        if self.thresholds != other.thresholds {
            return Err(MetricsError::ThresholdMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.tn += b.tn;
            a.fn_ += b.fn_;
        }
        Ok(())
    }

    /// Sums a nonempty list of tables in order.
    pub fn pooled<'a, I: IntoIterator<Item = &'a ConfusionTable>>(
        tables: I,
    ) -> Option<Result<Self, MetricsError>> {
        let mut it = tables.into_iter();
        let mut acc = it.next()?.clone();
        for t in it {
            if let Err(e) = acc.merge(t) {
                return Some(Err(e));
            }
        }
        Some(Ok(acc))
    }

    pub fn report(&self) -> MetricsReport {
        let curve: Vec<CurvePoint> = self
            .thresholds
            .iter()
            .zip(&self.counts)
            .map(|(&t, &c)| CurvePoint::new(t, c))
            .collect();
        let mut roc: Vec<(f64, f64)> = curve.iter().map(|p| (p.fpr, p.tpr)).collect();
        roc.push((0.0, 0.0));
        roc.push((1.0, 1.0));
        roc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut pr: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
        pr.push((0.0, 1.0));
        pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let (mut best_dice, mut best_dice_threshold) = (f64::NEG_INFINITY, 0.0);
        for p in &curve {
            let d = p.dice();
            if d > best_dice {
                best_dice = d;
                best_dice_threshold = p.threshold;
            }
        }
        MetricsReport {
            pr_auc: trapezoid(&pr).clamp(0.0, 1.0),
            roc_auc: trapezoid(&roc).clamp(0.0, 1.0),
            best_dice,
            best_dice_threshold,
            roc_curve: curve.clone(),
            pr_curve: curve,
        }
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let finite = thresholds.iter().all(|t| t.is_finite());
    if !finite || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(MetricsError::UnsortedThresholds);
    }
    Ok(())
}

/// Trapezoidal area under points already sorted by x.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub pr_curve: Vec<CurvePoint>,
    pub roc_curve: Vec<CurvePoint>,
    pub pr_auc: f64,
    pub roc_auc: f64,
    pub best_dice: f64,
    pub best_dice_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub pr_auc: f64,
    pub roc_auc: f64,
    pub best_dice: f64,
    pub best_dice_threshold: f64,
}

impl MetricsReport {
    pub fn summary(&self) -> Summary {
        Summary {
            pr_auc: self.pr_auc,
            roc_auc: self.roc_auc,
            best_dice: self.best_dice,
            best_dice_threshold: self.best_dice_threshold,
        }
    }

    /// Writes `threshold,precision,recall,tpr,fpr`, one row per threshold.
    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "threshold,precision,recall,tpr,fpr")?;
        for p in &self.pr_curve {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.threshold, p.precision, p.recall, p.tpr, p.fpr
            )?;
        }
        Ok(())
    }

    pub fn save_curve_csv(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_curve_csv(&mut buf)?;
        fs::write(path, buf)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }
}

/// Counts and reports in one call.
pub fn sweep_curves(
    prob: &Tensor,
    gt: &Tensor,
    fov: &Tensor,
    thresholds: &[f64],
) -> Result<MetricsReport, MetricsError> {
    Ok(ConfusionTable::count(prob, gt, fov, thresholds)?.report())
}
