use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by kernels, graph construction, and graph execution.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not. Carries both so the diagnostic
    /// names them.
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A size/stride/ratio argument is outside its legal range.
    InvalidArgument { context: String },
    /// A conv/pool output dimension came out non-positive.
    EmptyOutput { context: String },
    /// Evaluation failed at a specific graph node.
    Node { node: usize, message: String },
    /// A graph input was not bound before forward.
    UnboundInput { node: usize },
    /// Backward was called with a cache that does not match the graph.
    MissingCache { context: String },
    /// A NaN or infinity appeared where finite values are required.
    NonFinite { context: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context: context.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl Into<Vec<usize>>,
        got: impl Into<Vec<usize>>,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: shape mismatch, expected {expected:?}, got {got:?}"),
            Error::InvalidArgument { context } => write!(f, "invalid argument: {context}"),
            Error::EmptyOutput { context } => write!(f, "empty output: {context}"),
            Error::Node { node, message } => write!(f, "node {node}: {message}"),
            Error::UnboundInput { node } => write!(f, "graph input node {node} was not bound"),
            Error::MissingCache { context } => write!(f, "missing forward cache: {context}"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
        }
    }
}

impl core::error::Error for Error {}
