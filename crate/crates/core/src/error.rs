use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("CFL condition violated: lambda = {lambda} exceeds the bound {bound} = min(1, 4-6*beta, 6*beta) / (1 + 6*Lip(f)*sup|nu|)")]
    Cfl { lambda: f64, bound: f64 },

    #[error("scheme parameter out of range: {0}")]
    Param(String),

    #[error("initial data for component {component} takes value {value} outside [0, 1] near x = {x}")]
    InitialRange { component: usize, value: f64, x: f64 },

    #[error("model hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: &'static str, detail: String },

    #[error("invariant region violated at step {step}: component {component}, cell {cell}, value {value:e}")]
    InvariantViolation {
        step: usize,
        component: usize,
        cell: usize,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grids are not nested: dx_a = {dx_a}, dx_b = {dx_b}")]
    NonNested { dx_a: f64, dx_b: f64 },

    #[error("convergence rate needs positive errors, got {coarse} and {fine}")]
    NonPositiveError { coarse: f64, fine: f64 },

    #[error("configuration errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
