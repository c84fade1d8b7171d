use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RdpError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("infeasible program: {constraint}")]
    Infeasible { constraint: String },

    /// Both solver paths failed; `best` holds the best coefficient vector found
    /// and its distortion.
    #[error("numerical failure: {reason} (best distortion {best_distortion})")]
    NumericalFailure {
        reason: String,
        best: Vec<f64>,
        best_distortion: f64,
    },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("outside asymptotic regime: {0}")]
    OutOfRegime(String),

    #[error("ambiguous asymptotic branch: {0}")]
    BranchAmbiguity(String),

    #[error("gap does not shrink with eps: {0}")]
    RegimeMismatch(String),

    #[error("unknown variable label {0}")]
    UnknownLabel(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<RdpError>,
    },
}

impl RdpError {
    pub fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ RdpError::Frame { .. } => e,
            e => RdpError::Frame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with frame annotations stripped.
    pub fn root(&self) -> &RdpError {
        match self {
            RdpError::Frame { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, RdpError>;
