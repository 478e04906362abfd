//! Uniform spatial grid, CFL-constrained time grid and projection of the
//! initial data onto cell averages.
//!
//! Cells are `C_i = [x_min + iΔx, x_min + (i+1)Δx)` for `i = 0..M`. The state
//! is extended by zero outside `[x_min, x_max]`, which is only faithful while
//! the solution stays supported inside the domain.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre5;
use crate::state::StateField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    cells: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::Grid(format!("dx must be positive, got {dx}")));
        }
        if !(x_max > x_min) {
            return Err(Error::Grid(format!("empty domain [{x_min}, {x_max}]")));
        }
        let ratio = (x_max - x_min) / dx;
        let cells = ratio.round();
        if ((ratio - cells) / cells.max(1.0)).abs() > 1e-9 {
            return Err(Error::Grid(format!(
                "domain length {} is not an integer multiple of dx = {dx}",
                x_max - x_min
            )));
        }
        if cells < 2.0 {
            return Err(Error::Grid(format!("need at least 2 cells, got {cells}")));
        }
        Ok(Self {
            x_min,
            x_max,
            dx,
            cells: cells as usize,
        })
    }

    /// Number of cells `M`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    pub fn cell_left(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    /// Integer factor `r` with `self.dx = r * finer.dx` over the same domain.
    pub fn refinement_factor(&self, finer: &GridSpec) -> Option<usize> {
        let ratio = self.dx / finer.dx;
        let r = ratio.round();
        let same_domain =
            (self.x_min - finer.x_min).abs() <= 1e-9 * self.dx && (self.x_max - finer.x_max).abs() <= 1e-9 * self.dx;
        if r >= 1.0 && (ratio - r).abs() <= 1e-9 * r && same_domain && finer.cells == self.cells * r as usize {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Time levels `t^n = nΔt`, `n = 0..=N_T`, with `T = N_T Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub lambda: f64,
    pub t_final: f64,
}

impl TimeGrid {
    /// Step index whose time level is closest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.dt
        }
    }
}

/// Largest admissible `λ = Δt/Δx`:
/// `min(1, 4 - 6β, 6β) / (1 + 6 Lip(f) sup|ν|)`.
pub fn cfl_bound(beta: f64, lip_f: f64, nu_max: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(lip_f >= 0.0) || !(nu_max >= 0.0) {
        return Err(Error::Param(format!(
            "Lipschitz and velocity bounds must be nonnegative (Lip(f) = {lip_f}, sup|nu| = {nu_max})"
        )));
    }
    Ok(1.0_f64.min(4.0 - 6.0 * beta).min(6.0 * beta) / (1.0 + 6.0 * lip_f * nu_max))
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 2.0 / 3.0) {
        return Err(Error::Param(format!("beta must lie in (0, 2/3), got {beta}")));
    }
    Ok(())
}

/// Builds the time grid: `λ` is the user ratio (checked against the CFL
/// bound) or the bound itself, then reduced minimally so that `T/Δt` is an
/// integer.
pub fn cfl_time_grid(
    dx: f64,
    t_final: f64,
    beta: f64,
    lip_f: f64,
    nu_max: f64,
    lambda_user: Option<f64>,
) -> Result<TimeGrid> {
    if !(dx > 0.0) {
        return Err(Error::Grid(format!("dx must be positive, got {dx}")));
    }
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::Grid(format!("final time must be nonnegative, got {t_final}")));
    }
    let bound = cfl_bound(beta, lip_f, nu_max)?;
    let lambda = match lambda_user {
        Some(l) if !(l > 0.0) => return Err(Error::Param(format!("lambda must be positive, got {l}"))),
        Some(l) if l > bound => return Err(Error::Cfl { lambda: l, bound }),
        Some(l) => l,
        None => bound,
    };
    let dt_max = lambda * dx;
    if t_final == 0.0 {
        return Ok(TimeGrid {
            dt: dt_max,
            n_steps: 0,
            lambda,
            t_final,
        });
    }
    let ratio = t_final / dt_max;
    let nearest = ratio.round();
    let n_steps = if (ratio - nearest).abs() <= 1e-9 * nearest && nearest >= 1.0 {
        nearest
    } else {
        ratio.ceil()
    } as usize;
    let mut dt = t_final / n_steps as f64;
    // Never exceed the admissible ratio because of rounding.
    while dt / dx > lambda {
        dt = f64::from_bits(dt.to_bits() - 1);
    }
    Ok(TimeGrid {
        dt,
        n_steps,
        lambda: dt / dx,
        t_final,
    })
}

/// One constant piece `value · 1_[from, to)` of piecewise-constant data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

/// Initial profile of one component.
#[derive(Clone)]
pub enum InitialData {
    /// Sum of constant pieces; projected exactly.
    Steps(Vec<Step>),
    /// Arbitrary function; projected with 5-point Gauss–Legendre per cell.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Steps(s) => f.debug_tuple("Steps").field(s).finish(),
            InitialData::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl InitialData {
    pub fn indicator(from: f64, to: f64, value: f64) -> Self {
        InitialData::Steps(vec![Step { from, to, value }])
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            InitialData::Steps(steps) => steps.iter().filter(|s| x >= s.from && x < s.to).map(|s| s.value).sum(),
            InitialData::Function(f) => f(x),
        }
    }

    /// `∫ u0` over the real line (piecewise-constant data only).
    pub fn mass(&self) -> Option<f64> {
        match self {
            InitialData::Steps(steps) => Some(steps.iter().map(|s| s.value * (s.to - s.from).max(0.0)).sum()),
            InitialData::Function(_) => None,
        }
    }

    /// Checks that the data takes values in `[0, 1]`: exactly at every
    /// constant piece for step data, by sampling otherwise.
    fn check_range(&self, component: usize, grid: &GridSpec) -> Result<()> {
        let bad = |x: f64, v: f64| Error::InitialRange { component, value: v, x };
        match self {
            InitialData::Steps(steps) => {
                let mut cuts: Vec<f64> = steps.iter().flat_map(|s| [s.from, s.to]).collect();
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for w in cuts.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let v = self.value(mid);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(bad(mid, v));
                    }
                }
                Ok(())
            }
            InitialData::Function(f) => {
                let samples = 8 * grid.cells();
                for s in 0..=samples {
                    let x = grid.x_min + (grid.x_max - grid.x_min) * s as f64 / samples as f64;
                    let v = f(x);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(bad(x, v));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Cell averages `(1/Δx) ∫_{C_i} u0` of every component. Step data is
/// integrated exactly by splitting cells at the discontinuities; data outside
/// the domain is dropped.
pub fn project_initial(initial: &[InitialData], grid: &GridSpec) -> Result<StateField> {
    let m = grid.cells();
    let mut state = StateField::zeros(initial.len(), m);
    for (k, data) in initial.iter().enumerate() {
        data.check_range(k, grid)?;
        let cells = &mut state.components[k];
        match data {
            InitialData::Steps(steps) => {
                for s in steps {
                    add_step(cells, grid, s);
                }
            }
            InitialData::Function(f) => {
                for (i, c) in cells.iter_mut().enumerate() {
                    let a = grid.cell_left(i);
                    *c = gauss_legendre5(|x| f(x), a, a + grid.dx) / grid.dx;
                }
            }
        }
        for c in cells.iter_mut() {
            *c = c.clamp(0.0, 1.0);
        }
    }
    Ok(state)
}

/// Position in cell units, snapped to the nearest edge when within 1e-9.
fn cell_coordinate(grid: &GridSpec, x: f64) -> f64 {
    let xi = (x - grid.x_min) / grid.dx;
    let r = xi.round();
    if (xi - r).abs() <= 1e-9 {
        r
    } else {
        xi
    }
}

fn add_step(cells: &mut [f64], grid: &GridSpec, step: &Step) {
    let m = cells.len() as f64;
    let a = cell_coordinate(grid, step.from).clamp(0.0, m);
    let b = cell_coordinate(grid, step.to).clamp(0.0, m);
    if b <= a {
        return;
    }
    let first = a.floor() as usize;
    let last = (b.ceil() as usize).min(cells.len());
    for (i, c) in cells.iter_mut().enumerate().take(last).skip(first) {
        let lo = a.max(i as f64);
        let hi = b.min(i as f64 + 1.0);
        if hi > lo {
            *c += step.value * (hi - lo);
        }
    }
}
