use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slot {slot} out of range for arity {arity}")]
    SlotOutOfRange { slot: usize, arity: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("simulation diverged on path {path} at step {step}")]
    SimulationDiverged { path: usize, step: usize },
    #[error("spike [{tau}, {tau}+{eps}) is not aligned with the grid (dt = {dt})")]
    SpikeNotAligned { tau: f64, eps: f64, dt: f64 },
    #[error("spike interval [{tau}, {end}) leaves [0, {horizon}]")]
    SpikeOutOfRange { tau: f64, end: f64, horizon: f64 },
    #[error("control value {0:?} is not in the control set")]
    ControlNotAdmissible(Vec<f64>),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("coefficients along the base pair are stochastic ({0}); use the regression solver")]
    StochasticCoefficients(String),
    #[error("ill-conditioned regression at node {node}: condition number {cond:.3e}")]
    IllConditioned { node: usize, cond: f64 },
    #[error("insufficient paths: {paths} paths for {columns} basis columns")]
    InsufficientPaths { paths: usize, columns: usize },
    #[error("fundamental solution is singular on path {path} at node {node}")]
    SingularFundamental { path: usize, node: usize },
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
