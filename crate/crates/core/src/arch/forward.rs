use crate::engine::{
    check_gradients, EngineError, GradCheckConfig, GradCheckReport, Mode, ParamKind, ParameterSet,
    RunningStats, Shape, Tape, Tensor, Var,
};
use crate::rng;

use super::graph::{LayerKind, NetworkSpec};
use super::ArchError;

/// Result of running a [`NetworkSpec`] on a tape.
pub struct ForwardTrace {
    /// Tape value of every graph node, indexed like `spec.nodes`.
    pub vars: Vec<Var>,
    pub prob: Var,
    /// Updated running statistics per batch-norm node (train mode only).
    pub running_updates: Vec<(String, RunningStats)>,
}

impl ForwardTrace {
    /// Writes the updated running statistics back into `params`.
    pub fn apply_running_updates(&self, params: &mut ParameterSet) -> Result<(), EngineError> {
        for (name, stats) in &self.running_updates {
            let n = stats.mean.len();
            params.set_value(
                &format!("{name}.running_mean"),
                Tensor::from_vec(Shape::vector(n), stats.mean.clone()),
            )?;
            params.set_value(
                &format!("{name}.running_var"),
                Tensor::from_vec(Shape::vector(n), stats.var.clone()),
            )?;
        }
        Ok(())
    }
}

/// Runs the network on `image`, recording onto `tape`.
pub fn forward_on(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParameterSet,
    image: &Tensor,
    mode: Mode,
) -> Result<ForwardTrace, ArchError> {
    spec.infer_shapes(image.shape())?;
    let mut vars: Vec<Var> = Vec::with_capacity(spec.nodes.len());
    let mut running_updates = Vec::new();
    for node in &spec.nodes {
        let arg = |k: usize| vars[node.inputs[k]];
        let name = &node.name;
        let v = match &node.kind {
            LayerKind::Input { .. } => tape.input(image.clone())?,
            LayerKind::Normalize { .. } => {
                let mean = params.value(&format!("{name}.mean"))?.data().to_vec();
                let std = params.value(&format!("{name}.std"))?.data().to_vec();
                let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
                let shift: Vec<f64> = mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
                tape.channel_affine(arg(0), &scale, &shift)?
            }
            LayerKind::Conv2d(c) => {
                let w = tape.param(params, &format!("{name}.weight"))?;
                let b = if c.bias {
                    Some(tape.param(params, &format!("{name}.bias"))?)
                } else {
                    None
                };
                tape.conv2d(arg(0), w, b, c.stride, c.padding)?
            }
            LayerKind::BatchNorm2d { .. } => {
                let gamma = tape.param(params, &format!("{name}.gamma"))?;
                let beta = tape.param(params, &format!("{name}.beta"))?;
                let running = RunningStats {
                    mean: params
                        .value(&format!("{name}.running_mean"))?
                        .data()
                        .to_vec(),
                    var: params
                        .value(&format!("{name}.running_var"))?
                        .data()
                        .to_vec(),
                };
                let (y, stats) = tape.batch_norm2d(arg(0), gamma, beta, mode, &running)?;
                if let Some(stats) = stats {
                    running_updates.push((name.clone(), stats));
                }
                y
            }
            LayerKind::Relu => tape.relu(arg(0))?,
            LayerKind::Sigmoid => tape.sigmoid(arg(0))?,
            LayerKind::Add => tape.add(arg(0), arg(1))?,
            LayerKind::Concat => {
                let parts: Vec<Var> = node.inputs.iter().map(|&j| vars[j]).collect();
                tape.concat_channels(&parts)?
            }
            LayerKind::MaxPool2d => tape.max_pool2d(arg(0))?,
            LayerKind::Upsample2d => tape.bilinear_upsample2d(arg(0))?,
        };
        vars.push(v);
    }
    Ok(ForwardTrace {
        prob: vars[spec.output],
        vars,
        running_updates,
    })
}

/// Runs the network on a fresh tape.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    image: &Tensor,
    mode: Mode,
) -> Result<(Tape, ForwardTrace), ArchError> {
    let mut tape = Tape::new();
    let trace = forward_on(&mut tape, spec, params, image, mode)?;
    Ok((tape, trace))
}

/// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero
/// biases, unit gamma, zero beta, identity running statistics and input
/// normalization. Draws follow graph order from one seeded stream.
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> ParameterSet {
    let mut rng = rng::seeded(seed);
    let mut params = ParameterSet::new();
    for decl in spec.parameters() {
        let suffix = decl.name.rsplit('.').next().unwrap_or_default();
        let value = match suffix {
            "weight" => {
                let bound = (6.0 / decl.fan_in as f64).sqrt();
                Tensor::from_vec(
                    decl.shape,
                    (0..decl.shape.numel())
                        .map(|_| rng::uniform(&mut rng, -bound, bound))
                        .collect(),
                )
            }
            "gamma" | "std" | "running_var" => Tensor::full(decl.shape, 1.0),
            _ => Tensor::zeros(decl.shape),
        };
        let inserted = match decl.kind {
            ParamKind::Trainable => params.insert(&decl.name, value),
            ParamKind::Buffer => params.insert_buffer(&decl.name, value),
        };
        inserted.expect("graph parameter names are unique");
    }
    params
}

/// Checks that `params` holds every entry the network declares, with the
/// declared shapes.
pub fn check_parameters(spec: &NetworkSpec, params: &ParameterSet) -> Result<(), ArchError> {
    for decl in spec.parameters() {
        let found = params.value(&decl.name)?.shape();
        if found != decl.shape {
            return Err(ArchError::ParameterShape {
                name: decl.name,
                expected: decl.shape,
                found,
            });
        }
    }
    Ok(())
}

/// Finite-difference check of every trainable parameter of a network on a
/// seeded input, random target and FOV, under the balanced BCE loss in
/// train mode.
pub fn gradcheck_network(
    spec: &NetworkSpec,
    input: Shape,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, ArchError> {
    spec.infer_shapes(input)?;
    let mut params = init_parameters(spec, cfg.seed);
    let mut r = rng::seeded(cfg.seed.wrapping_add(1));
    // Move affine terms off their identity initialization so they matter.
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            let mut t = params.value(&name)?.clone();
            for v in t.data_mut() {
                *v += rng::uniform(&mut r, -0.3, 0.3);
            }
            params.set_value(&name, t)?;
        }
    }
    let image = Tensor::from_vec(
        input,
        (0..input.numel())
            .map(|_| rng::uniform(&mut r, 0.0, 1.0))
            .collect(),
    );
    let mask_shape = Shape::new(input.n, 1, input.h, input.w);
    let target = Tensor::from_vec(
        mask_shape,
        (0..mask_shape.numel())
            .map(|_| f64::from(rng::uniform(&mut r, 0.0, 1.0) < 0.2))
            .collect(),
    );
    let fov = Tensor::from_vec(
        mask_shape,
        (0..mask_shape.numel())
            .map(|_| f64::from(rng::uniform(&mut r, 0.0, 1.0) < 0.9))
            .collect(),
    );
    let report = check_gradients(&params, cfg, |tape, p| {
        let trace = forward_on(tape, spec, p, &image, Mode::Train).map_err(|e| match e {
            ArchError::Engine(e) => e,
            other => panic!("network failed a validated dry run: {other}"),
        })?;
        tape.balanced_bce_loss(trace.prob, &target, &fov)
    })?;
    Ok(report)
}
