//! Network graphs for the SSA variant family.
//!
//! Each variant is produced by a [`VariantBuilder`] registered under its CLI
//! name in a [`VariantRegistry`]; the result is an immutable
//! [`NetworkSpec`] that [`forward`] executes on an engine tape.

mod forward;
mod graph;
mod variants;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, Shape};

pub use forward::check_parameters;
pub use forward::{forward, forward_on, gradcheck_network, init_parameters, ForwardTrace};
pub use graph::{ConvSpec, LayerKind, LayerNode, NetworkSpec, NodeId, ParamDecl};
pub use variants::{build_variant, VariantBuilder, VariantRegistry};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ArchError {
    #[error("unknown variant {0:?} (expected one of ssa2, ssa3, dec, noms, driu, driu-noms)")]
    UnknownVariant(String),
    #[error("invalid architecture config: {0}")]
    InvalidConfig(String),
    #[error("input {height}x{width} is not divisible by {divisor}, which this variant requires")]
    IndivisibleInput {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("input has {found} channels, network expects {expected}")]
    InputChannels { expected: usize, found: usize },
    #[error("parameter {name} has shape {found}, network expects {expected}")]
    ParameterShape {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error("malformed network graph: {0}")]
    Graph(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The closed set of architecture variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantId {
    MsresnetSsa2,
    MsresnetSsa3,
    MsresnetDec,
    ResnetNoms,
    DriuLite,
    DriuNoms,
}

impl VariantId {
    pub const ALL: [VariantId; 6] = [
        VariantId::MsresnetSsa2,
        VariantId::MsresnetSsa3,
        VariantId::MsresnetDec,
        VariantId::ResnetNoms,
        VariantId::DriuLite,
        VariantId::DriuNoms,
    ];

    /// Name used on the command line and in config files.
    pub fn name(self) -> &'static str {
        match self {
            VariantId::MsresnetSsa2 => "ssa2",
            VariantId::MsresnetSsa3 => "ssa3",
            VariantId::MsresnetDec => "dec",
            VariantId::ResnetNoms => "noms",
            VariantId::DriuLite => "driu",
            VariantId::DriuNoms => "driu-noms",
        }
    }

    /// One-byte code stored in checkpoints.
    pub fn code(self) -> u8 {
        match self {
            VariantId::MsresnetSsa2 => 0,
            VariantId::MsresnetSsa3 => 1,
            VariantId::MsresnetDec => 2,
            VariantId::ResnetNoms => 3,
            VariantId::DriuLite => 4,
            VariantId::DriuNoms => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ArchError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Resnet34,
}

impl Profile {
    pub fn code(self) -> u32 {
        match self {
            Profile::Desk => 0,
            Profile::Resnet34 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Profile::Desk),
            1 => Some(Profile::Resnet34),
            _ => None,
        }
    }
}

/// Width and depth knobs shared by every variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub profile: Profile,
    pub base_channels: usize,
    /// Residual blocks per stage; stage 0 runs at full resolution.
    pub blocks_per_stage: Vec<usize>,
    pub input_channels: usize,
    /// Batch normalization after every convolution except the fusion head.
    pub batch_norm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            base_channels: 16,
            blocks_per_stage: vec![2, 2, 2],
            input_channels: 1,
            batch_norm: true,
        }
    }

    pub fn resnet34() -> Self {
        Self {
            profile: Profile::Resnet34,
            base_channels: 64,
            blocks_per_stage: vec![3, 4, 6, 3],
            input_channels: 3,
            batch_norm: true,
        }
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.blocks_per_stage.is_empty() {
            return Err(ArchError::InvalidConfig(
                "blocks_per_stage must not be empty".into(),
            ));
        }
        if self.base_channels < 4 {
            return Err(ArchError::InvalidConfig(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        if !(self.input_channels == 1 || self.input_channels == 3) {
            return Err(ArchError::InvalidConfig(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.blocks_per_stage.len() > 8 {
            return Err(ArchError::InvalidConfig(
                "at most 8 stages are supported".into(),
            ));
        }
        Ok(())
    }
}
