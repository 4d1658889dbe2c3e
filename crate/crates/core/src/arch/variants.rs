use std::collections::BTreeMap;

use super::graph::{ConvSpec, LayerKind, LayerNode, NetworkSpec, NodeId};
use super::{ArchConfig, ArchError, VariantId};

/// Produces the graph of one architecture variant.
pub trait VariantBuilder: Send + Sync {
    fn id(&self) -> VariantId;

    fn summary(&self) -> &'static str;

    fn build(&self, cfg: &ArchConfig) -> Result<NetworkSpec, ArchError>;

    fn name(&self) -> &'static str {
        self.id().name()
    }
}

/// Variant builders keyed by CLI name.
pub struct VariantRegistry {
    builders: BTreeMap<&'static str, Box<dyn VariantBuilder>>,
}

impl VariantRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Registry holding all six variants.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ResidualMultiScale {
            id: VariantId::MsresnetSsa2,
            resampling: Resampling::ScaleSpace,
            extra_front_stage: false,
        }));
        r.register(Box::new(ResidualMultiScale {
            id: VariantId::MsresnetSsa3,
            resampling: Resampling::ScaleSpace,
            extra_front_stage: true,
        }));
        r.register(Box::new(ResidualMultiScale {
            id: VariantId::MsresnetDec,
            resampling: Resampling::Decimate,
            extra_front_stage: false,
        }));
        r.register(Box::new(ResidualMultiScale {
            id: VariantId::ResnetNoms,
            resampling: Resampling::None,
            extra_front_stage: false,
        }));
        r.register(Box::new(PlainSideOutput {
            id: VariantId::DriuLite,
            pooling: true,
        }));
        r.register(Box::new(PlainSideOutput {
            id: VariantId::DriuNoms,
            pooling: false,
        }));
        r
    }

    /// Replaces any builder already registered under the same name.
    pub fn register(&mut self, builder: Box<dyn VariantBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn get(&self, name: &str) -> Result<&dyn VariantBuilder, ArchError> {
        self.builders
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| ArchError::UnknownVariant(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn build(&self, name: &str, cfg: &ArchConfig) -> Result<NetworkSpec, ArchError> {
        self.get(name)?.build(cfg)
    }
}

impl Default for VariantRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

pub fn build_variant(id: VariantId, cfg: &ArchConfig) -> Result<NetworkSpec, ArchError> {
    VariantRegistry::with_defaults().build(id.name(), cfg)
}

/// How a residual network moves between stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resampling {
    /// Stride-2 entry conv, blocks at half resolution, then x2 upsampling.
    ScaleSpace,
    /// Stride-2 entry conv and no upsampling; side outputs are upsampled at
    /// the head.
    Decimate,
    /// Stride 1 everywhere.
    None,
}

/// Residual-block stages with full-resolution side outputs fused by a 1x1
/// convolution (ssa2, ssa3, dec, noms).
struct ResidualMultiScale {
    id: VariantId,
    resampling: Resampling,
    /// Adds one SSA stage of stage-0 width right after the stem.
    extra_front_stage: bool,
}

impl VariantBuilder for ResidualMultiScale {
    fn id(&self) -> VariantId {
        self.id
    }

    fn summary(&self) -> &'static str {
        match (self.resampling, self.extra_front_stage) {
            (Resampling::ScaleSpace, false) => {
                "residual stages with stride-2 conv + x2 upsampling per stage"
            }
            (Resampling::ScaleSpace, true) => "ssa2 plus an extra SSA stage after the stem",
            (Resampling::Decimate, _) => {
                "residual stages with stride-2 decimation, upsampled at fusion"
            }
            (Resampling::None, _) => "residual stages at full resolution throughout",
        }
    }

    fn build(&self, cfg: &ArchConfig) -> Result<NetworkSpec, ArchError> {
        cfg.validate()?;
        let mut g = GraphBuilder::new(cfg.batch_norm);
        let input = g.push(
            "input",
            LayerKind::Input {
                channels: cfg.input_channels,
            },
            vec![],
        );
        let norm = g.push(
            "input_norm",
            LayerKind::Normalize {
                channels: cfg.input_channels,
            },
            vec![input],
        );
        let c0 = cfg.base_channels;
        let mut x = g.conv_unit("stem", norm, cfg.input_channels, c0, 1, true);
        let mut sides = Vec::new();

        if self.extra_front_stage {
            x = g.conv_unit("pre.entry", x, c0, c0, 2, true);
            for b in 0..cfg.blocks_per_stage[0] {
                x = g.residual_block(&format!("pre.block{b}"), x, c0);
            }
            x = g.push("pre.up", LayerKind::Upsample2d, vec![x]);
            sides.push(x);
        }

        for b in 0..cfg.blocks_per_stage[0] {
            x = g.residual_block(&format!("stage0.block{b}"), x, c0);
        }
        sides.push(x);

        let mut ch = c0;
        for (s, &blocks) in cfg.blocks_per_stage.iter().enumerate().skip(1) {
            let stride = if self.resampling == Resampling::None {
                1
            } else {
                2
            };
            x = g.conv_unit(&format!("stage{s}.entry"), x, ch, 2 * ch, stride, true);
            ch *= 2;
            for b in 0..blocks {
                x = g.residual_block(&format!("stage{s}.block{b}"), x, ch);
            }
            if self.resampling == Resampling::ScaleSpace {
                x = g.push(&format!("stage{s}.up"), LayerKind::Upsample2d, vec![x]);
            }
            sides.push(x);
        }
        g.finish(self.id, cfg, sides)
    }
}

/// Plain double-conv stages (no residual skips), optionally separated by
/// 2x2 max pooling, with side outputs upsampled at the head (driu,
/// driu-noms).
struct PlainSideOutput {
    id: VariantId,
    pooling: bool,
}

impl VariantBuilder for PlainSideOutput {
    fn id(&self) -> VariantId {
        self.id
    }

    fn summary(&self) -> &'static str {
        if self.pooling {
            "double-conv stages separated by 2x2 max pooling"
        } else {
            "double-conv stages without pooling"
        }
    }

    fn build(&self, cfg: &ArchConfig) -> Result<NetworkSpec, ArchError> {
        cfg.validate()?;
        let mut g = GraphBuilder::new(cfg.batch_norm);
        let input = g.push(
            "input",
            LayerKind::Input {
                channels: cfg.input_channels,
            },
            vec![],
        );
        let mut x = g.push(
            "input_norm",
            LayerKind::Normalize {
                channels: cfg.input_channels,
            },
            vec![input],
        );
        let mut in_ch = cfg.input_channels;
        let mut sides = Vec::new();
        for s in 0..cfg.blocks_per_stage.len() {
            if s > 0 && self.pooling {
                x = g.push(&format!("stage{s}.pool"), LayerKind::MaxPool2d, vec![x]);
            }
            let ch = cfg.base_channels << s;
            x = g.conv_unit(&format!("stage{s}.conv1"), x, in_ch, ch, 1, true);
            x = g.conv_unit(&format!("stage{s}.conv2"), x, ch, ch, 1, true);
            in_ch = ch;
            sides.push(x);
        }
        g.finish(self.id, cfg, sides)
    }
}

struct GraphBuilder {
    nodes: Vec<LayerNode>,
    batch_norm: bool,
}

impl GraphBuilder {
    fn new(batch_norm: bool) -> Self {
        Self {
            nodes: Vec::new(),
            batch_norm,
        }
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(LayerNode {
            name: name.to_string(),
            kind,
            inputs,
        });
        self.nodes.len() - 1
    }

    /// 3x3 conv, optional batch norm, optional relu. The conv carries a bias
    /// only when no batch norm follows.
    fn conv_unit(
        &mut self,
        name: &str,
        x: NodeId,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        relu: bool,
    ) -> NodeId {
        let conv = ConvSpec {
            in_ch,
            out_ch,
            kernel: 3,
            stride,
            padding: 1,
            bias: !self.batch_norm,
        };
        let mut y = self.push(&format!("{name}.conv"), LayerKind::Conv2d(conv), vec![x]);
        if self.batch_norm {
            y = self.push(
                &format!("{name}.bn"),
                LayerKind::BatchNorm2d { channels: out_ch },
                vec![y],
            );
        }
        if relu {
            y = self.push(&format!("{name}.relu"), LayerKind::Relu, vec![y]);
        }
        y
    }

    /// conv-BN-ReLU-conv-BN, identity skip, ReLU after the addition.
    fn residual_block(&mut self, name: &str, x: NodeId, ch: usize) -> NodeId {
        let h = self.conv_unit(&format!("{name}.a"), x, ch, ch, 1, true);
        let h = self.conv_unit(&format!("{name}.b"), h, ch, ch, 1, false);
        let sum = self.push(&format!("{name}.add"), LayerKind::Add, vec![h, x]);
        self.push(&format!("{name}.relu"), LayerKind::Relu, vec![sum])
    }

    /// Upsamples every side output to full resolution, concatenates, and adds
    /// the 1x1 conv + sigmoid head.
    fn finish(
        mut self,
        variant: VariantId,
        cfg: &ArchConfig,
        sides: Vec<NodeId>,
    ) -> Result<NetworkSpec, ArchError> {
        let probe = NetworkSpec {
            variant,
            config: cfg.clone(),
            nodes: self.nodes.clone(),
            side_outputs: vec![],
            fusion: 0,
            output: 0,
        };
        let levels = probe.scale_levels();
        let mut fused_inputs = Vec::with_capacity(sides.len());
        let mut channels = 0;
        for (k, &side) in sides.iter().enumerate() {
            let mut x = side;
            for j in 0..levels[side].max(0) {
                x = self.push(&format!("side{k}.up{j}"), LayerKind::Upsample2d, vec![x]);
            }
            channels += side_channels(&self.nodes, side);
            fused_inputs.push(x);
        }
        let cat = self.push("fusion.concat", LayerKind::Concat, fused_inputs);
        let fusion = self.push(
            "fusion.conv",
            LayerKind::Conv2d(ConvSpec {
                in_ch: channels,
                out_ch: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                bias: true,
            }),
            vec![cat],
        );
        let output = self.push("fusion.sigmoid", LayerKind::Sigmoid, vec![fusion]);
        let spec = NetworkSpec {
            variant,
            config: cfg.clone(),
            nodes: self.nodes,
            side_outputs: sides,
            fusion,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Channel count produced by a node, following pass-through layers back to
/// the nearest conv or input.
fn side_channels(nodes: &[LayerNode], mut id: NodeId) -> usize {
    loop {
        match &nodes[id].kind {
            LayerKind::Conv2d(c) => return c.out_ch,
            LayerKind::Input { channels }
            | LayerKind::Normalize { channels }
            | LayerKind::BatchNorm2d { channels } => return *channels,
            _ => id = nodes[id].inputs[0],
        }
    }
}
