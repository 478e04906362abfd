//! Finite-volume solvers for systems of nonlocal conservation laws whose
//! velocities depend on a space–time (memory) convolution of the solution.
//!
//! The crate provides
//!
//! * kernel discretization ([`kernels`]) and the factored convolution with a
//!   bounded history ring ([`convolution`]),
//! * the monotone Lax–Friedrichs marching scheme with memory and memoryless
//!   drivers ([`scheme`]),
//! * model presets and hypothesis checks ([`models`]),
//! * executable stability diagnostics ([`diagnostics`]),
//! * memory-to-memoryless and mesh convergence studies ([`studies`]),
//! * configuration parsing and CSV emission ([`config`], [`output`]).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod convolution;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod models;
pub mod output;
pub mod quadrature;
pub mod scheme;
pub mod state;
pub mod studies;

pub use config::{parse_config, parse_config_str, RunConfig, StudyConfig};
pub use convolution::{
    conv_constants, memory_conv, spatial_conv, ConvConstants, ConvField, ConvPlan, HistoryRing, SpatialConvSnapshot,
};
pub use diagnostics::{verify_run, Diagnostics, DiagnosticsReport};
pub use error::{Error, Result};
pub use grid::{cfl_bound, cfl_time_grid, project_initial, GridSpec, InitialData, Step, TimeGrid};
pub use kernels::{
    normalize_spatial, normalize_temporal, scaled_first_moment, spatial_cell_averages, temporal_cell_averages,
    KernelMatrix, KernelPair, ScaledTemporalKernel, SpatialFamily, SpatialKernel, TemporalFamily, TemporalKernel,
    TemporalWeights, Window,
};
pub use models::{keyfitz_kranzer_preset, validate_model, FluxFn, ModelSpec, VelocityFn};
pub use scheme::{
    lf_flux, run, run_memoryless, run_with, MemoryMode, RunOptions, SchemeParams, Solver, StepObserver, Trajectory,
};
pub use state::StateField;
pub use studies::{delta_study, l1_distance, mesh_study, observed_rate, ErrorTable, MeshStudy};
