//! Central-difference verification of tape gradients.

use std::fmt;

use rand::RngCore;

use super::{EngineError, Mode, ParamKind, ParameterSet, RunningStats, Shape, Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor (all of them when smaller).
    pub samples_per_param: usize,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_param: 50,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    /// Coordinates discarded because a perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked() > 0 && self.max_rel_error() < tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<40} checked {:>4} skipped {:>3} max_rel {:.3e}",
                e.name, e.checked, e.skipped, e.max_rel_error
            )?;
        }
        Ok(())
    }
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// sampled coordinates of every trainable entry in `params`.
///
/// `loss_fn` must rebuild the whole computation from `params` on the given
/// tape and return the scalar loss. Coordinates whose perturbation changes
/// the tape's [`Tape::kink_signature`] are resampled.
pub fn check_gradients<F>(
    params: &ParameterSet,
    cfg: &GradCheckConfig,
    loss_fn: F,
) -> Result<GradCheckReport, EngineError>
where
    F: Fn(&mut Tape, &ParameterSet) -> Result<Var, EngineError>,
{
    let eval = |p: &ParameterSet| -> Result<(f64, u64), EngineError> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, p)?;
        Ok((tape.value(loss).data()[0], tape.kink_signature()))
    };

    let mut analytic = params.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &analytic)?;
    let base_signature = tape.kink_signature();
    tape.backward(loss, &mut analytic)?;

    let mut rng = rng::seeded(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let numel = params.value(&name)?.numel();
        let shape = params.value(&name)?.shape();
        let grad = analytic
            .get(&name)?
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape));
        let target = cfg.samples_per_param.min(numel);
        let mut order: Vec<usize> = (0..numel).collect();
        rng::shuffle(&mut order, &mut rng);
        let mut entry = GradCheckEntry {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for &idx in &order {
            if entry.checked >= target {
                break;
            }
            let original = params.value(&name)?.data()[idx];
            let mut at = |delta: f64| -> Result<(f64, u64), EngineError> {
                let mut t = params.value(&name)?.clone();
                t.data_mut()[idx] = original + delta;
                probe.set_value(&name, t)?;
                eval(&probe)
            };
            let (plus, sig_plus) = at(cfg.epsilon)?;
            let (minus, sig_minus) = at(-cfg.epsilon)?;
            probe.set_value(&name, params.value(&name)?.clone())?;
            if sig_plus != base_signature || sig_minus != base_signature {
                entry.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            entry.max_rel_error = entry.max_rel_error.max(rel);
            entry.checked += 1;
        }
        report.entries.push(entry);
    }
    Ok(report)
}

/// Engine primitives with a built-in finite-difference suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Conv2d,
    Conv2dStrided,
    MaxPool2d,
    Upsample2d,
    BatchNormTrain,
    BatchNormEval,
    Relu,
    Sigmoid,
    Add,
    Concat,
    BalancedBce,
}

impl Primitive {
    pub const ALL: [Primitive; 11] = [
        Primitive::Conv2d,
        Primitive::Conv2dStrided,
        Primitive::MaxPool2d,
        Primitive::Upsample2d,
        Primitive::BatchNormTrain,
        Primitive::BatchNormEval,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Add,
        Primitive::Concat,
        Primitive::BalancedBce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Conv2d => "conv2d",
            Primitive::Conv2dStrided => "conv2d_stride2",
            Primitive::MaxPool2d => "max_pool2d",
            Primitive::Upsample2d => "bilinear_upsample2d",
            Primitive::BatchNormTrain => "batch_norm2d_train",
            Primitive::BatchNormEval => "batch_norm2d_eval",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Add => "add",
            Primitive::Concat => "concat_channels",
            Primitive::BalancedBce => "balanced_bce_loss",
        }
    }

    /// Matches a suite name; a bare op name selects all its suites.
    pub fn matching(name: &str) -> Vec<Primitive> {
        Self::ALL
            .into_iter()
            .filter(|p| p.name() == name || p.name().starts_with(&format!("{name}_")))
            .collect()
    }
}

fn random_tensor(shape: Shape, rng: &mut impl RngCore) -> Tensor {
    Tensor::from_vec(
        shape,
        (0..shape.numel())
            .map(|_| rng::standard_normal(rng))
            .collect(),
    )
}

fn uniform_tensor(shape: Shape, lo: f64, hi: f64, rng: &mut impl RngCore) -> Tensor {
    Tensor::from_vec(
        shape,
        (0..shape.numel())
            .map(|_| rng::uniform(rng, lo, hi))
            .collect(),
    )
}

/// Runs the finite-difference suite of one primitive on seeded inputs.
pub fn primitive_suite(
    op: Primitive,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, EngineError> {
    let mut rng = rng::seeded(cfg.seed ^ 0x5eed);
    let mut params = ParameterSet::new();
    let x_shape = Shape::new(2, 3, 6, 6);
    params.insert("x", random_tensor(x_shape, &mut rng))?;
    let mut out_shape = x_shape;
    match op {
        Primitive::Conv2d | Primitive::Conv2dStrided => {
            params.insert("weight", random_tensor(Shape::new(4, 3, 3, 3), &mut rng))?;
            params.insert("bias", random_tensor(Shape::vector(4), &mut rng))?;
            out_shape = if op == Primitive::Conv2d {
                Shape::new(2, 4, 6, 6)
            } else {
                Shape::new(2, 4, 3, 3)
            };
        }
        Primitive::MaxPool2d => out_shape = Shape::new(2, 3, 3, 3),
        Primitive::Upsample2d => out_shape = Shape::new(2, 3, 12, 12),
        Primitive::BatchNormTrain | Primitive::BatchNormEval => {
            params.insert(
                "gamma",
                uniform_tensor(Shape::vector(3), 0.5, 1.5, &mut rng),
            )?;
            params.insert("beta", random_tensor(Shape::vector(3), &mut rng))?;
        }
        Primitive::Add => params.insert("y", random_tensor(x_shape, &mut rng))?,
        Primitive::Concat => {
            params.insert("y", random_tensor(Shape::new(2, 2, 6, 6), &mut rng))?;
            out_shape = Shape::new(2, 5, 6, 6);
        }
        Primitive::BalancedBce => {
            params.set_value("x", uniform_tensor(x_shape, 0.05, 0.95, &mut rng))?;
        }
        Primitive::Relu | Primitive::Sigmoid => {}
    }
    let weights = random_tensor(out_shape, &mut rng);
    let target = Tensor::from_vec(
        x_shape,
        (0..x_shape.numel())
            .map(|_| f64::from(rng.next_u32().is_multiple_of(4)))
            .collect(),
    );
    let fov = Tensor::from_vec(
        x_shape,
        (0..x_shape.numel())
            .map(|_| f64::from(!rng.next_u32().is_multiple_of(8)))
            .collect(),
    );
    let running = RunningStats {
        mean: vec![0.3, -0.2, 0.1],
        var: vec![1.5, 0.7, 2.0],
    };

    check_gradients(&params, cfg, |tape, p| {
        let x = tape.param(p, "x")?;
        let y = match op {
            Primitive::Conv2d | Primitive::Conv2dStrided => {
                let w = tape.param(p, "weight")?;
                let b = tape.param(p, "bias")?;
                let stride = if op == Primitive::Conv2d { 1 } else { 2 };
                tape.conv2d(x, w, Some(b), stride, 1)?
            }
            Primitive::MaxPool2d => tape.max_pool2d(x)?,
            Primitive::Upsample2d => tape.bilinear_upsample2d(x)?,
            Primitive::BatchNormTrain | Primitive::BatchNormEval => {
                let g = tape.param(p, "gamma")?;
                let b = tape.param(p, "beta")?;
                let mode = if op == Primitive::BatchNormTrain {
                    Mode::Train
                } else {
                    Mode::Eval
                };
                tape.batch_norm2d(x, g, b, mode, &running)?.0
            }
            Primitive::Relu => tape.relu(x)?,
            Primitive::Sigmoid => tape.sigmoid(x)?,
            Primitive::Add => {
                let y = tape.param(p, "y")?;
                tape.add(x, y)?
            }
            Primitive::Concat => {
                let y = tape.param(p, "y")?;
                tape.concat_channels(&[x, y])?
            }
            Primitive::BalancedBce => return tape.balanced_bce_loss(x, &target, &fov),
        };
        tape.weighted_sum(y, &weights)
    })
}
