//! Convergence studies: memory-to-memoryless sweeps in `δ` at a fixed mesh,
//! and mesh sweeps at a fixed ratio `δ/Δx` against a fine memoryless
//! reference.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cfl_time_grid, GridSpec, TimeGrid};
use crate::models::{validate_model, ModelSpec};
use crate::quadrature::compensated_sum;
use crate::scheme::{run_with, InvariantPolicy, MemoryMode, RunOptions, SchemeParams};
use crate::state::StateField;

/// Rate floor from the `O(√δ)` and `O(√δ + √Δx)` estimates.
pub const RATE_FLOOR: f64 = 0.5;
/// Measurement slack subtracted from [`RATE_FLOOR`] by the study harness.
pub const RATE_SLACK: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    /// `δ` for a memory sweep, `Δx` for a mesh sweep.
    pub parameter: f64,
    pub error: f64,
    /// `log₂(e_{r-1} / e_r)`; absent on the first row and next to zero errors.
    pub rate: Option<f64>,
    pub lambda_used: f64,
}

impl ErrorRow {
    pub fn zero_error(&self) -> bool {
        self.error == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// Builds rows from `(parameter, error, λ)` triples, filling in rates.
    pub fn from_errors(entries: &[(f64, f64, f64)]) -> Self {
        let mut rows: Vec<ErrorRow> = Vec::with_capacity(entries.len());
        for &(parameter, error, lambda_used) in entries {
            let rate = rows.last().and_then(|prev| observed_rate(prev.error, error).ok());
            rows.push(ErrorRow {
                parameter,
                error,
                rate,
                lambda_used,
            });
        }
        Self { rows }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }

    pub fn has_zero_errors(&self) -> bool {
        self.rows.iter().any(ErrorRow::zero_error)
    }

    /// Rows whose rate falls below `floor`, as messages.
    pub fn floor_violations(&self, floor: f64) -> Vec<String> {
        self.rows
            .iter()
            .filter_map(|r| match r.rate {
                Some(a) if !(a >= floor) => Some(format!(
                    "rate {a:.3} at parameter {} is below the floor {floor}",
                    r.parameter
                )),
                _ => None,
            })
            .collect()
    }

    /// Consecutive rows where the error fails to drop below `factor` times
    /// the previous one.
    pub fn decrease_violations(&self, factor: f64) -> Vec<String> {
        self.rows
            .windows(2)
            .filter(|w| !(w[1].error <= factor * w[0].error))
            .map(|w| {
                format!(
                    "error {} at parameter {} does not drop below {factor} x {}",
                    w[1].error, w[1].parameter, w[0].error
                )
            })
            .collect()
    }
}

/// `log₂(e_coarse / e_fine)`.
pub fn observed_rate(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0) || !(e_fine > 0.0) {
        return Err(Error::NonPositiveError {
            coarse: e_coarse,
            fine: e_fine,
        });
    }
    Ok((e_coarse / e_fine).log2())
}

/// Exact `L¹` distance between two piecewise-constant fields on nested
/// grids, summed over components. The coarser field is expanded onto the
/// finer grid.
pub fn l1_distance(a: &StateField, grid_a: &GridSpec, b: &StateField, grid_b: &GridSpec) -> Result<f64> {
    if a.n_components() != b.n_components() {
        return Err(Error::Shape(format!(
            "component counts differ: {} vs {}",
            a.n_components(),
            b.n_components()
        )));
    }
    if a.cells() != grid_a.cells() || b.cells() != grid_b.cells() {
        return Err(Error::Shape("state does not match its grid".into()));
    }
    let (coarse, fine, factor, h) = if let Some(r) = grid_a.refinement_factor(grid_b) {
        (a, b, r, grid_b.dx)
    } else if let Some(r) = grid_b.refinement_factor(grid_a) {
        (b, a, r, grid_a.dx)
    } else {
        return Err(Error::NonNested {
            dx_a: grid_a.dx,
            dx_b: grid_b.dx,
        });
    };
    let total = compensated_sum((0..a.n_components()).flat_map(|k| {
        let c = coarse.component(k);
        fine.component(k)
            .iter()
            .enumerate()
            .map(move |(i, &v)| (v - c[i / factor]).abs())
    }));
    Ok(h * total)
}

/// Ladder `start · 2^{-r}` for `r = 0..=halvings`.
pub fn halving_ladder(start: f64, halvings: usize) -> Vec<f64> {
    (0..=halvings).map(|r| start / 2f64.powi(r as i32)).collect()
}

fn final_state(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    mode: MemoryMode,
) -> Result<StateField> {
    // Studies abort only on genuine blow-up; `FromModel` keeps the
    // hypothesis-driven policy of the model.
    let options = RunOptions::default()
        .with_mode(mode)
        .with_invariant_policy(InvariantPolicy::FromModel);
    Ok(run_with(model, grid, time, params, &options, &mut ())?.final_state)
}

/// Memory-to-memoryless sweep on a fixed grid: one memoryless reference,
/// then one memory run per `δ = δ₀ 2^{-r}`.
pub fn delta_study(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    delta0: f64,
    n_halvings: usize,
) -> Result<ErrorTable> {
    delta_study_with_mode(model, grid, time, params, delta0, n_halvings, MemoryMode::Memory)
}

/// [`delta_study`] with the solver used for the `δ` runs made explicit.
/// Passing [`MemoryMode::Memoryless`] reproduces the reference exactly.
pub fn delta_study_with_mode(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    delta0: f64,
    n_halvings: usize,
    mode: MemoryMode,
) -> Result<ErrorTable> {
    let reference = final_state(model, grid, time, params, MemoryMode::Memoryless)?;
    let deltas = halving_ladder(delta0, n_halvings);
    let errors = deltas
        .par_iter()
        .map(|&delta| {
            let m = model.with_delta(delta)?;
            let u = final_state(&m, grid, time, params, mode)?;
            l1_distance(&u, grid, &reference, grid)
        })
        .collect::<Result<Vec<f64>>>()?;
    let entries: Vec<(f64, f64, f64)> = deltas.iter().zip(&errors).map(|(&d, &e)| (d, e, time.lambda)).collect();
    Ok(ErrorTable::from_errors(&entries))
}

/// Mesh sweep parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshStudy {
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
    pub beta: f64,
    /// Requested `λ`; reduced minimally per rung to land on `T`.
    pub lambda: Option<f64>,
    pub dx0: f64,
    pub n_halvings: usize,
    /// Fixed `δ / Δx`.
    pub ratio: f64,
    /// Mesh of the memoryless reference.
    pub dx_fine: f64,
}

/// Asymptotic-compatibility sweep: memory runs at `Δx = Δx₀ 2^{-r}` with
/// `δ = ratio · Δx`, each compared with the memoryless reference on
/// `dx_fine`. Rungs may be coarser or finer than the reference as long as
/// the grids nest.
pub fn mesh_study(model: &ModelSpec, study: &MeshStudy) -> Result<ErrorTable> {
    let constants = validate_model(model)?.constants;
    let (lip_f, nu_sup) = (constants.max_lip_f(), constants.max_nu_sup());
    let setup = |dx: f64| -> Result<(GridSpec, TimeGrid, SchemeParams)> {
        let grid = GridSpec::new(study.x_min, study.x_max, dx)?;
        let time = cfl_time_grid(dx, study.t_final, study.beta, lip_f, nu_sup, study.lambda)?;
        let params = SchemeParams::for_time_grid(study.beta, &time)?;
        Ok((grid, time, params))
    };
    let dxs = halving_ladder(study.dx0, study.n_halvings);
    let (fine_grid, _, _) = setup(study.dx_fine)?;
    for &dx in &dxs {
        let g = GridSpec::new(study.x_min, study.x_max, dx)?;
        if g.refinement_factor(&fine_grid).is_none() && fine_grid.refinement_factor(&g).is_none() {
            return Err(Error::NonNested {
                dx_a: dx,
                dx_b: study.dx_fine,
            });
        }
    }
    let reference = {
        let (g, t, p) = setup(study.dx_fine)?;
        final_state(model, &g, &t, &p, MemoryMode::Memoryless)?
    };
    let results = dxs
        .par_iter()
        .map(|&dx| {
            let (g, t, p) = setup(dx)?;
            let m = model.with_delta(study.ratio * dx)?;
            let u = final_state(&m, &g, &t, &p, MemoryMode::Memory)?;
            Ok((dx, l1_distance(&u, &g, &reference, &fine_grid)?, t.lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorTable::from_errors(&results))
}
