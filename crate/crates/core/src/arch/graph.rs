use crate::engine::{ParamKind, Shape};

use super::{ArchConfig, ArchError, VariantId};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Input {
        channels: usize,
    },
    /// Fixed per-channel standardization from stored dataset statistics.
    Normalize {
        channels: usize,
    },
    Conv2d(ConvSpec),
    BatchNorm2d {
        channels: usize,
    },
    Relu,
    Sigmoid,
    Add,
    Concat,
    MaxPool2d,
    Upsample2d,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
}

/// Parameter or buffer a network expects to find in its `ParameterSet`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
    /// Inputs feeding each output unit; zero for non-weight entries.
    pub fan_in: usize,
}

/// Topologically ordered layer graph of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub variant: VariantId,
    pub config: ArchConfig,
    pub nodes: Vec<LayerNode>,
    /// Stage outputs fused by the head, in stage order.
    pub side_outputs: Vec<NodeId>,
    /// The 1x1 fusion convolution.
    pub fusion: NodeId,
    /// The sigmoid probability map.
    pub output: NodeId,
}

impl NetworkSpec {
    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn count(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    pub fn strided_convs(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::Conv2d(c) if c.stride == 2))
    }

    pub fn upsamples(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::Upsample2d))
    }

    pub fn pools(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::MaxPool2d))
    }

    /// Structural checks: inputs precede their consumers, arities match, and
    /// every side output feeds the fusion head.
    pub fn validate(&self) -> Result<(), ArchError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(&bad) = node.inputs.iter().find(|&&j| j >= i) {
                return Err(ArchError::Graph(format!(
                    "node {} ({}) consumes later node {bad}",
                    i, node.name
                )));
            }
            let arity_ok = match node.kind {
                LayerKind::Input { .. } => node.inputs.is_empty(),
                LayerKind::Add => node.inputs.len() == 2,
                LayerKind::Concat => !node.inputs.is_empty(),
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(ArchError::Graph(format!(
                    "node {} has wrong arity",
                    node.name
                )));
            }
        }
        if self.output >= self.nodes.len() || self.fusion >= self.output {
            return Err(ArchError::Graph("fusion/output out of order".into()));
        }
        let ancestors = self.ancestors(self.fusion);
        if let Some(s) = self.side_outputs.iter().find(|s| !ancestors[**s]) {
            return Err(ArchError::Graph(format!(
                "side output {} does not reach the fusion head",
                self.nodes[*s].name
            )));
        }
        Ok(())
    }

    fn ancestors(&self, target: NodeId) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        mark[target] = true;
        for i in (0..=target).rev() {
            if mark[i] {
                for &j in &self.nodes[i].inputs {
                    mark[j] = true;
                }
            }
        }
        mark
    }

    /// Parameters and buffers in graph order.
    pub fn parameters(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        let decl =
            |name: &str, suffix: &str, shape: Shape, kind: ParamKind, fan_in: usize| ParamDecl {
                name: format!("{name}.{suffix}"),
                shape,
                kind,
                fan_in,
            };
        for node in &self.nodes {
            match &node.kind {
                LayerKind::Normalize { channels } => {
                    out.push(decl(
                        &node.name,
                        "mean",
                        Shape::vector(*channels),
                        ParamKind::Buffer,
                        0,
                    ));
                    out.push(decl(
                        &node.name,
                        "std",
                        Shape::vector(*channels),
                        ParamKind::Buffer,
                        0,
                    ));
                }
                LayerKind::Conv2d(c) => {
                    let fan_in = c.in_ch * c.kernel * c.kernel;
                    out.push(decl(
                        &node.name,
                        "weight",
                        Shape::new(c.out_ch, c.in_ch, c.kernel, c.kernel),
                        ParamKind::Trainable,
                        fan_in,
                    ));
                    if c.bias {
                        out.push(decl(
                            &node.name,
                            "bias",
                            Shape::vector(c.out_ch),
                            ParamKind::Trainable,
                            0,
                        ));
                    }
                }
                LayerKind::BatchNorm2d { channels } => {
                    let v = Shape::vector(*channels);
                    out.push(decl(&node.name, "gamma", v, ParamKind::Trainable, 0));
                    out.push(decl(&node.name, "beta", v, ParamKind::Trainable, 0));
                    out.push(decl(&node.name, "running_mean", v, ParamKind::Buffer, 0));
                    out.push(decl(&node.name, "running_var", v, ParamKind::Buffer, 0));
                }
                _ => {}
            }
        }
        out
    }

    /// Trainable scalars, batch-norm affine terms included.
    pub fn param_count(&self) -> usize {
        self.parameters()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.shape.numel())
            .sum()
    }

    /// Net number of 2x reductions at each node (downsampling minus
    /// upsampling) relative to the input.
    pub fn scale_levels(&self) -> Vec<i32> {
        let mut level = vec![0i32; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let inherited = node.inputs.first().map_or(0, |&j| level[j]);
            level[i] = match &node.kind {
                LayerKind::Conv2d(c) if c.stride == 2 => inherited + 1,
                LayerKind::MaxPool2d => inherited + 1,
                LayerKind::Upsample2d => inherited - 1,
                _ => inherited,
            };
        }
        level
    }

    /// Input height and width must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        let deepest = self.scale_levels().into_iter().max().unwrap_or(0).max(0);
        1 << deepest
    }

    /// Dry-run shape propagation for an input of the given shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>, ArchError> {
        let divisor = self.required_divisor();
        if !input.h.is_multiple_of(divisor)
            || !input.w.is_multiple_of(divisor)
            || input.h == 0
            || input.w == 0
        {
            return Err(ArchError::IndivisibleInput {
                height: input.h,
                width: input.w,
                divisor,
            });
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let first = node.inputs.first().map(|&j| shapes[j]);
            let shape = match (&node.kind, first) {
                (LayerKind::Input { channels }, _) => {
                    if input.c != *channels {
                        return Err(ArchError::InputChannels {
                            expected: *channels,
                            found: input.c,
                        });
                    }
                    input
                }
                (LayerKind::Conv2d(c), Some(s)) => {
                    if s.c != c.in_ch {
                        return Err(ArchError::Graph(format!("{}: channel mismatch", node.name)));
                    }
                    let oh = (s.h + 2 * c.padding - c.kernel) / c.stride + 1;
                    let ow = (s.w + 2 * c.padding - c.kernel) / c.stride + 1;
                    Shape::new(s.n, c.out_ch, oh, ow)
                }
                (LayerKind::MaxPool2d, Some(s)) => Shape::new(s.n, s.c, s.h / 2, s.w / 2),
                (LayerKind::Upsample2d, Some(s)) => Shape::new(s.n, s.c, s.h * 2, s.w * 2),
                (LayerKind::Concat, Some(s)) => {
                    let c = node.inputs.iter().map(|&j| shapes[j].c).sum();
                    for &j in &node.inputs {
                        if (shapes[j].h, shapes[j].w) != (s.h, s.w) {
                            return Err(ArchError::Graph(format!(
                                "{}: spatial mismatch",
                                node.name
                            )));
                        }
                    }
                    Shape::new(s.n, c, s.h, s.w)
                }
                (LayerKind::Add, Some(s)) => {
                    if shapes[node.inputs[1]] != s {
                        return Err(ArchError::Graph(format!("{}: operand mismatch", node.name)));
                    }
                    s
                }
                (_, Some(s)) => s,
                (_, None) => return Err(ArchError::Graph(format!("{} has no input", node.name))),
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Receptive field along one axis at the output, composing kernel sizes
    /// and strides along the longest path. The first-order hold counts as a
    /// two-tap kernel that halves the sampling step.
    pub fn receptive_field(&self) -> usize {
        // (field size, step between adjacent samples) in input pixels.
        let mut rf = vec![(1.0f64, 1.0f64); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let (field, step) = node
                .inputs
                .iter()
                .map(|&j| rf[j])
                .fold(None, |acc: Option<(f64, f64)>, (f, s)| match acc {
                    None => Some((f, s)),
                    Some((af, as_)) => Some((af.max(f), as_.min(s))),
                })
                .unwrap_or((1.0, 1.0));
            rf[i] = match &node.kind {
                LayerKind::Conv2d(c) => {
                    (field + (c.kernel - 1) as f64 * step, step * c.stride as f64)
                }
                LayerKind::MaxPool2d => (field + step, step * 2.0),
                LayerKind::Upsample2d => (field + step, step / 2.0),
                _ => (field, step),
            };
        }
        rf[self.output].0.round() as usize
    }
}
