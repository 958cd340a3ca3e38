use thiserror::Error;

/// Errors raised by grid construction, geometry and the pipelines built on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has {got} values but the grid has {expected} nodes")]
    GridMismatch { expected: usize, got: usize },
    #[error("degenerate metric at node {node}: condition number {cond:.3e}")]
    DegenerateMetric { node: usize, cond: f64 },
    #[error("metric is not Hermitian positive-definite at node {node}")]
    NotPositive { node: usize },
    #[error("metric is not real at node {node}, so it has no real bilinear companion")]
    NotReal { node: usize },
    #[error("evaluation point {point} lies in the near-boundary zone: |z - c| = {dist:.6} > {limit:.6}")]
    NearBoundary { point: String, dist: f64, limit: f64 },
    #[error("section vanishes at node {node}")]
    VanishingSection { node: usize },
    #[error("rank {n} is too small: {what}")]
    RankTooSmall { n: usize, what: String },
    #[error("{gate} gate failed: measured {measured:.3e}, tolerance {tol:.3e}")]
    GateFailed { gate: String, measured: f64, tol: f64 },
    #[error("{0}")]
    Precondition(String),
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("section is not compactly supported: sup |s| on the outer ring is {0:.3e}")]
    NotCompact(f64),
    #[error("zero denominator: {0}")]
    ZeroNorm(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

