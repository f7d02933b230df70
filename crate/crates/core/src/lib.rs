pub mod error;
pub mod conformal;
pub mod control;
pub mod decomposition;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod mesh;
pub mod metric;
pub mod partition;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Circle, Complex2, MobiusParams, SimilarityParams};
pub use mesh::{BoundaryLoop, LoopLabel, Patch, TriMesh};
pub use conformal::{build_mapping, DistortionReport, MapOptions, MappedMesh};
pub use control::{AgentState, CoverageModel, PerformanceFn};
pub use decomposition::{GeneratorSet, Subdomain};
pub use metric::{DensityField, MetricField, SurfacePoint};
pub use partition::{MarginalTable, PartitionState, SafeBar};
pub use sim::{run_coverage, RunResult, ScenarioConfig};
