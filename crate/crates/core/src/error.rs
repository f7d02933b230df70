use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate Möbius denominator")]
    DegenerateTransform,
    #[error("circle fit needs at least three non-collinear points")]
    DegenerateFit,
    #[error("query point lies outside the domain")]
    OutOfDomain,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("inadmissible partition: {0}")]
    InadmissiblePartition(String),
    #[error("map folds over on {count} face(s)")]
    MapFoldover { count: usize },
    #[error("linear solver failed: {0}")]
    SolverFailure(String),
    #[error("weld residual {residual:.3e} above threshold")]
    WeldMisfit { residual: f64 },
    #[error("welded chain does not close (mismatch {mismatch:.3e})")]
    ChainMisclosure { mismatch: f64 },
    #[error("annulus modulus left (0, 1)")]
    ModulusDivergence,
    #[error("global weld is underdetermined: region {region} is isolated")]
    WeldUnderdetermined { region: usize },
    #[error("boundary vertex {vertex} sits on the fitted circle centre")]
    ProjectionSingularity { vertex: usize },
    #[error("degenerate source face {face}")]
    DegenerateFace { face: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    RunStep {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("point lies inside obstacle {obstacle}")]
    InsideObstacle { obstacle: usize },
    #[error("agents {a} and {b} are closer than twice the agent radius")]
    SafetyViolation { a: usize, b: usize },
    #[error("no path between the query points")]
    NoPath,
    #[error("phase ordering violated after step")]
    StepRejected,
    #[error("topology violation: {0}")]
    TopologyViolation(String),
    #[error("gradient unavailable for agent {agent}")]
    GradientUnavailable { agent: usize },
    #[error("agent {agent} is stuck")]
    StuckAgent { agent: usize },
    #[error("fewer than two agents remain")]
    MissionAbort,
    #[error("consensus graph is disconnected")]
    NoConsensus,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error with stage annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::RunStep { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
