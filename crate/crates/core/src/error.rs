use thiserror::Error;

use crate::netmodel::{LinkId, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no connected {topology} topology with {nodes} nodes after {attempts} attempts")]
    Unconnectable {
        topology: String,
        nodes: usize,
        attempts: usize,
    },

    #[error("link {0} has no auxiliary pair to spend on purification")]
    NoAuxiliaryPair(LinkId),

    #[error("links {left} and {right} do not meet at node {via}")]
    NotAdjacent {
        left: LinkId,
        right: LinkId,
        via: NodeId,
    },

    #[error("link {0} is not alive")]
    DeadLink(LinkId),

    #[error("unknown link {0}")]
    UnknownLink(LinkId),

    #[error("link {0} still holds auxiliary pairs")]
    PendingAuxiliary(LinkId),

    #[error("node {0} has no free memory")]
    MemoryFull(NodeId),

    #[error("invalid demand matrix: {0}")]
    InvalidDemand(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature dimension {0} is below the minimum of 4")]
    DimensionTooSmall(usize),

    #[error("need at least {needed} distinct points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("no rollouts to build a model from")]
    EmptyRollouts,

    #[error("value iteration stopped after {iterations} iterations with residual {residual}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no feasible action")]
    NoFeasibleAction,

    #[error("policies are defined over different action sets")]
    ActionSetMismatch,

    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },

    #[error("no completed runs under {0}")]
    MissingRuns(String),

    #[error("step {step}: {inner}")]
    AtStep { step: u64, inner: Box<Error> },

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub fn at_step(self, step: u64) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                inner: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
