//! Minimal reverse-mode tensor engine.
//!
//! Values live on a [`Tape`] in the order they are computed; `backward`
//! walks the tape once in reverse. Everything is 64-bit.

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    check_gradients, primitive_suite, GradCheckConfig, GradCheckEntry, GradCheckReport, Primitive,
};
pub use params::{ParamKind, Parameter, ParameterSet};
pub use tape::{Gradients, Mode, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM, PROB_CLAMP};
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("{op}: shape {left} is incompatible with {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("stride must be 1 or 2, got {0}")]
    InvalidStride(usize),
    #[error("convolution of {input} with kernel {kernel} has an empty output")]
    EmptyOutput { input: Shape, kernel: Shape },
    #[error("{op} needs even spatial dims, got {shape}")]
    OddSpatial { op: &'static str, shape: Shape },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("batch norm in train mode needs more than one value per channel")]
    BatchNormSingleton,
    #[error("field-of-view mask is empty")]
    EmptyFov,
    #[error("mask values must be 0 or 1")]
    NonBinaryMask,
    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("invalid {name}: {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}
