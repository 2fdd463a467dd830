//! Error types shared across the core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor primitives and everything built on them.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two operands disagree on the size of one axis.
    DimMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    /// Operand has the wrong number of axes.
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Shapes cannot be broadcast together (each axis must match or be 1).
    BroadcastMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    /// Kernel extent exceeds the padded input on one spatial axis.
    KernelTooLarge {
        axis: usize,
        kernel: usize,
        padded: usize,
    },
    /// 2x pooling requires even spatial extents.
    OddSpatialDim { axis: usize, size: usize },
    /// Reduction axis outside the tensor rank.
    AxisOutOfRange { axis: usize, rank: usize },
    /// `log` of a non-positive element.
    NonPositiveLog { index: usize, value: f64 },
    /// `backward` needs a single-element tensor.
    NotScalar { numel: usize },
    /// Operands belong to different tapes.
    TapeMismatch { op: &'static str },
    /// A tensor handle outlived `Tape::clear`.
    TapeCleared,
    /// Data length does not match the shape product.
    LengthMismatch { expected: usize, got: usize },
    /// Unknown noise class name; carries the accepted names.
    UnknownClass { given: String, valid: Vec<String> },
    /// Noise class index outside the table.
    ClassIndexOutOfRange { index: usize, len: usize },
    /// Model input resolution must divide evenly through all stages.
    IndivisibleResolution { height: usize, width: usize, divisor: usize },
    /// A named parameter is missing from a parameter set or binding.
    MissingParam { name: String },
    /// A parameter participated in no backward pass.
    MissingGradient { name: String },
    /// Stage conditioning needs the previous block's weights.
    MissingPrevWeights { stage: usize },
    /// Generic invalid-argument error with context.
    InvalidArg { op: &'static str, detail: String },
    /// Aggregation over an empty collection.
    EmptyInput { op: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimMismatch { op, axis, left, right } => {
                write!(f, "{op}: axis {axis} differs between operands ({left} vs {right})")
            }
            CoreError::RankMismatch { op, expected, got } => {
                write!(f, "{op}: expected rank {expected}, got {got}")
            }
            CoreError::BroadcastMismatch { op, axis, left, right } => {
                write!(f, "{op}: axis {axis} not broadcastable ({left} vs {right})")
            }
            CoreError::KernelTooLarge { axis, kernel, padded } => {
                write!(f, "conv2d: kernel extent {kernel} exceeds padded input {padded} on axis {axis}")
            }
            CoreError::OddSpatialDim { axis, size } => {
                write!(f, "pool_max2: axis {axis} has odd extent {size}")
            }
            CoreError::AxisOutOfRange { axis, rank } => {
                write!(f, "reduce: axis {axis} out of range for rank {rank}")
            }
            CoreError::NonPositiveLog { index, value } => {
                write!(f, "log: non-positive element {value} at flat index {index}")
            }
            CoreError::NotScalar { numel } => {
                write!(f, "backward: loss must be a single element, got {numel}")
            }
            CoreError::TapeMismatch { op } => {
                write!(f, "{op}: operands belong to different tapes")
            }
            CoreError::TapeCleared => write!(f, "tensor handle refers to a cleared tape"),
            CoreError::LengthMismatch { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            CoreError::UnknownClass { given, valid } => {
                write!(f, "unknown noise class '{given}', valid classes: ")?;
                for (i, name) in valid.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{name}")?;
                }
                Ok(())
            }
            CoreError::ClassIndexOutOfRange { index, len } => {
                write!(f, "noise class index {index} out of range for table of length {len}")
            }
            CoreError::IndivisibleResolution { height, width, divisor } => {
                write!(f, "input {height}x{width} not divisible by {divisor}")
            }
            CoreError::MissingParam { name } => write!(f, "missing parameter '{name}'"),
            CoreError::MissingGradient { name } => {
                write!(f, "parameter '{name}' has no gradient; was backward() run?")
            }
            CoreError::MissingPrevWeights { stage } => {
                write!(f, "stage {stage} conditioning requires the previous block's weights")
            }
            CoreError::InvalidArg { op, detail } => write!(f, "{op}: {detail}"),
            CoreError::EmptyInput { op } => write!(f, "{op}: empty input"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
