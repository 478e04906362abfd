//! First-order monotone marching scheme with the nonlocal Lax–Friedrichs
//! flux, and the trajectory drivers for the memory and memoryless solvers.
//!
//! One step advances level `n - 1` to `n`:
//!
//! ```text
//! U^{k,n}_i = U^{k,n-1}_i - λ [F^k_{i+1/2} - F^k_{i-1/2}]
//! F^k_{i+1/2} = F(ν^k(c^{k,n-1}_{i+1/2}), U^{k,n-1}_i, U^{k,n-1}_{i+1})
//! F(v, a, b) = v (f(a) + f(b)) / 2 - β (b - a) / (2λ)
//! ```
//!
//! All right-hand-side states are taken at level `n - 1`. Ghost cells on both
//! sides of the grid hold zero, and the resulting boundary fluxes are tracked
//! as outflow so that conservation stays checkable.

use crate::convolution::{memory_conv_into, spatial_conv, ConvField, ConvPlan, HistoryRing};
use crate::error::{Error, Result};
use crate::grid::{check_beta, project_initial, GridSpec, TimeGrid};
use crate::models::{EndpointPolicy, FluxFn, ModelSpec};
use crate::quadrature::compensated_sum;
use crate::state::StateField;

/// Tolerance of the invariant-region monitor.
pub const INVARIANT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub beta: f64,
    pub lambda: f64,
}

impl SchemeParams {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Param(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { beta, lambda })
    }

    pub fn for_time_grid(beta: f64, time: &TimeGrid) -> Result<Self> {
        Self::new(beta, time.lambda)
    }
}

/// Nonlocal Lax–Friedrichs flux `v (f(a) + f(b)) / 2 - β (b - a) / (2λ)`.
#[inline]
pub fn lf_flux(v: f64, u_left: f64, u_right: f64, f: &FluxFn, params: &SchemeParams) -> f64 {
    0.5 * v * (f.eval(u_left) + f.eval(u_right)) - params.beta * (u_right - u_left) / (2.0 * params.lambda)
}

/// Update map `H^k(U_{i-1}, U_i, U_{i+1})` for frozen interface velocities.
#[inline]
pub fn update_map(
    v_left: f64,
    v_right: f64,
    u_minus: f64,
    u: f64,
    u_plus: f64,
    f: &FluxFn,
    params: &SchemeParams,
) -> f64 {
    u - params.lambda * (lf_flux(v_right, u, u_plus, f, params) - lf_flux(v_left, u_minus, u, f, params))
}

/// How the convolution term feeding the velocities is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// Cell-averaged temporal kernel over the history ring.
    Memory,
    /// History ring with all temporal mass on the current level.
    DegenerateMemory,
    /// Spatial convolution of the current level only; no history.
    Memoryless,
}

/// Whether an invariant-region excursion aborts the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantPolicy {
    /// Follow the model: abort unless the flux endpoint condition was waived.
    FromModel,
    Abort,
    Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: MemoryMode,
    /// Times to record; each snaps to the nearest time level.
    pub record_times: Vec<f64>,
    pub invariant_policy: InvariantPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: MemoryMode::Memory,
            record_times: Vec::new(),
            invariant_policy: InvariantPolicy::FromModel,
        }
    }
}

impl RunOptions {
    pub fn memoryless() -> Self {
        Self {
            mode: MemoryMode::Memoryless,
            ..Self::default()
        }
    }

    pub fn recording(mut self, times: &[f64]) -> Self {
        self.record_times = times.to_vec();
        self
    }

    pub fn with_mode(mut self, mode: MemoryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_invariant_policy(mut self, policy: InvariantPolicy) -> Self {
        self.invariant_policy = policy;
        self
    }
}

/// Everything an observer can see about one completed step `n - 1 → n`.
pub struct StepView<'a> {
    /// Index of the new level.
    pub n: usize,
    pub time: f64,
    pub prev: &'a StateField,
    pub next: &'a StateField,
    /// Convolution terms at level `n - 1` used for the velocities.
    pub conv: &'a ConvField,
    pub plan: &'a ConvPlan,
    /// `ν^k(c^{k,n-1}_{i+1/2})` per component, at interface offset `i + 1`.
    pub velocities: &'a [Vec<f64>],
    /// Mass that left through the boundaries during this step.
    pub outflow: &'a [f64],
    pub model: &'a ModelSpec,
    pub params: &'a SchemeParams,
    pub grid: &'a GridSpec,
    pub dt: f64,
}

/// Streaming hook called by the driver.
pub trait StepObserver {
    fn on_start(&mut self, _initial: &StateField, _grid: &GridSpec, _time: &TimeGrid) {}
    fn on_step(&mut self, view: &StepView<'_>);
}

impl StepObserver for () {
    fn on_step(&mut self, _view: &StepView<'_>) {}
}

/// Per-step scalars of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScalars {
    pub step: usize,
    pub time: f64,
    pub mass: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub tv: Vec<f64>,
    /// Cumulative boundary outflow up to this level.
    pub outflow: Vec<f64>,
}

impl StepScalars {
    fn of(state: &StateField, step: usize, time: f64, dx: f64, outflow: &[f64]) -> Self {
        let n = state.n_components();
        let (min, max) = (0..n).map(|k| state.min_max(k)).unzip();
        Self {
            step,
            time,
            mass: (0..n).map(|k| state.mass(k, dx)).collect(),
            min,
            max,
            tv: (0..n).map(|k| state.total_variation(k)).collect(),
            outflow: outflow.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub time_grid: TimeGrid,
    /// `(time, state)` at the requested record times, in increasing order.
    pub records: Vec<(f64, StateField)>,
    /// One entry per level, starting with the initial data.
    pub scalars: Vec<StepScalars>,
    pub final_state: StateField,
}

impl Trajectory {
    pub fn initial_scalars(&self) -> &StepScalars {
        &self.scalars[0]
    }
}

/// Stepping engine. Owns the state, the history ring and scratch buffers.
pub struct Solver<'m> {
    model: &'m ModelSpec,
    grid: GridSpec,
    time: TimeGrid,
    params: SchemeParams,
    plan: ConvPlan,
    mode: MemoryMode,
    abort_on_violation: bool,
    ring: HistoryRing,
    state: StateField,
    conv: ConvField,
    velocities: Vec<Vec<f64>>,
    outflow_step: Vec<f64>,
    outflow_total: Vec<f64>,
    args: Vec<f64>,
}

impl<'m> Solver<'m> {
    pub fn new(
        model: &'m ModelSpec,
        grid: &GridSpec,
        time: &TimeGrid,
        params: &SchemeParams,
        options: &RunOptions,
    ) -> Result<Self> {
        let state = project_initial(&model.initial_data(), grid)?;
        Self::from_state(model, grid, time, params, options, state)
    }

    /// Starts from an explicit level-0 state instead of projecting the
    /// model's initial data.
    pub fn from_state(
        model: &'m ModelSpec,
        grid: &GridSpec,
        time: &TimeGrid,
        params: &SchemeParams,
        options: &RunOptions,
        state: StateField,
    ) -> Result<Self> {
        let n = model.n();
        if state.n_components() != n || state.cells() != grid.cells() {
            return Err(Error::Shape(format!(
                "state has {} components over {} cells, expected {n} over {}",
                state.n_components(),
                state.cells(),
                grid.cells()
            )));
        }
        let plan = match options.mode {
            MemoryMode::Memory => ConvPlan::new(&model.kernels, grid.dx, time.dt)?,
            MemoryMode::DegenerateMemory | MemoryMode::Memoryless => {
                ConvPlan::memoryless(&model.kernels, grid.dx, time.dt)?
            }
        };
        let mut ring = HistoryRing::new(plan.history_depth());
        if options.mode != MemoryMode::Memoryless {
            ring.push(spatial_conv(&state, &plan)?);
        }
        let abort_on_violation = match options.invariant_policy {
            InvariantPolicy::Abort => true,
            InvariantPolicy::Record => false,
            InvariantPolicy::FromModel => model.endpoint_policy == EndpointPolicy::Enforce,
        };
        let m = grid.cells();
        Ok(Self {
            model,
            grid: *grid,
            time: *time,
            params: *params,
            plan,
            mode: options.mode,
            abort_on_violation,
            ring,
            state,
            conv: ConvField {
                values: Vec::new(),
                time_index: 0,
            },
            velocities: vec![vec![0.0; m + 1]; n],
            outflow_step: vec![0.0; n],
            outflow_total: vec![0.0; n],
            args: vec![0.0; n],
        })
    }

    pub fn state(&self) -> &StateField {
        &self.state
    }

    pub fn plan(&self) -> &ConvPlan {
        &self.plan
    }

    pub fn ring(&self) -> &HistoryRing {
        &self.ring
    }

    pub fn cumulative_outflow(&self) -> &[f64] {
        &self.outflow_total
    }

    /// Convolution terms at the current level.
    pub fn current_conv(&mut self) -> Result<&ConvField> {
        self.compute_conv()?;
        Ok(&self.conv)
    }

    fn compute_conv(&mut self) -> Result<()> {
        match self.mode {
            MemoryMode::Memoryless => {
                let snap = spatial_conv(&self.state, &self.plan)?;
                self.conv.values = snap.values;
                self.conv.time_index = snap.time_index;
                Ok(())
            }
            _ => memory_conv_into(&self.ring, &self.plan, &mut self.conv),
        }
    }

    /// Advances one level, reporting the step to `observer`.
    pub fn step(&mut self, observer: &mut dyn StepObserver) -> Result<()> {
        self.compute_conv()?;
        let n = self.model.n();
        for k in 0..n {
            let nu = &self.model.components[k].velocity;
            let channels: Vec<usize> = (0..n).map(|s| self.plan.channel(s, k)).collect();
            for (a, v) in self.velocities[k].iter_mut().enumerate() {
                for (arg, &ch) in self.args.iter_mut().zip(&channels) {
                    *arg = self.conv.values[ch][a];
                }
                *v = nu.eval(&self.args);
            }
        }
        let next_index = self.state.time_index + 1;
        let mut next = StateField::zeros(n, self.grid.cells());
        next.time_index = next_index;
        for k in 0..n {
            let flux = &self.model.components[k].flux;
            self.outflow_step[k] = advance_component(
                &self.state.components[k],
                &self.velocities[k],
                flux,
                &self.params,
                &mut next.components[k],
            ) * self.time.dt;
            self.outflow_total[k] += self.outflow_step[k];
        }
        if self.abort_on_violation {
            if let Some((component, cell, value)) = invariant_violation(&next) {
                return Err(Error::InvariantViolation {
                    step: next_index,
                    component,
                    cell,
                    value,
                });
            }
        }
        observer.on_step(&StepView {
            n: next_index,
            time: self.time.time(next_index),
            prev: &self.state,
            next: &next,
            conv: &self.conv,
            plan: &self.plan,
            velocities: &self.velocities,
            outflow: &self.outflow_step,
            model: self.model,
            params: &self.params,
            grid: &self.grid,
            dt: self.time.dt,
        });
        if self.mode != MemoryMode::Memoryless {
            self.ring.push(spatial_conv(&next, &self.plan)?);
        }
        self.state = next;
        Ok(())
    }

    /// Runs all remaining levels, recording the requested times.
    pub fn run(mut self, record_times: &[f64], observer: &mut dyn StepObserver) -> Result<Trajectory> {
        let mut record_steps: Vec<usize> = record_times.iter().map(|&t| self.time.nearest_step(t)).collect();
        record_steps.sort_unstable();
        record_steps.dedup();
        let dx = self.grid.dx;
        let mut records = Vec::new();
        let mut scalars = Vec::with_capacity(self.time.n_steps + 1);
        observer.on_start(&self.state, &self.grid, &self.time);
        let record = |state: &StateField, time: f64, records: &mut Vec<(f64, StateField)>| {
            if record_steps.binary_search(&state.time_index).is_ok() {
                records.push((time, state.clone()));
            }
        };
        record(&self.state, 0.0, &mut records);
        scalars.push(StepScalars::of(&self.state, 0, 0.0, dx, &self.outflow_total));
        while self.state.time_index < self.time.n_steps {
            self.step(observer)?;
            let n = self.state.time_index;
            let t = self.time.time(n);
            record(&self.state, t, &mut records);
            scalars.push(StepScalars::of(&self.state, n, t, dx, &self.outflow_total));
        }
        Ok(Trajectory {
            grid: self.grid,
            time_grid: self.time,
            records,
            scalars,
            final_state: self.state,
        })
    }
}

/// Writes level `n` of one component into `out` and returns the net boundary
/// flux `F_{M-1/2} - F_{-1/2}` (outflow per unit time).
fn advance_component(u: &[f64], velocities: &[f64], flux: &FluxFn, params: &SchemeParams, out: &mut [f64]) -> f64 {
    let m = u.len();
    let visc = params.beta / (2.0 * params.lambda);
    let fu: Vec<f64> = u.iter().map(|&x| flux.eval(x)).collect();
    let f_ghost = flux.eval(0.0);
    let interface_flux = |a: usize| {
        let (ul, fl) = if a == 0 { (0.0, f_ghost) } else { (u[a - 1], fu[a - 1]) };
        let (ur, fr) = if a == m { (0.0, f_ghost) } else { (u[a], fu[a]) };
        0.5 * velocities[a] * (fl + fr) - visc * (ur - ul)
    };
    let mut left = interface_flux(0);
    let first = left;
    for i in 0..m {
        let right = interface_flux(i + 1);
        out[i] = u[i] - params.lambda * (right - left);
        left = right;
    }
    left - first
}

/// First cell outside `[-tol, 1 + tol]`, as `(component, cell, value)`.
pub fn invariant_violation(state: &StateField) -> Option<(usize, usize, f64)> {
    state.components.iter().enumerate().find_map(|(k, u)| {
        u.iter()
            .position(|&v| !(-INVARIANT_TOL..=1.0 + INVARIANT_TOL).contains(&v))
            .map(|i| (k, i, u[i]))
    })
}

/// One step of the scheme from `state` with velocities frozen from `conv`
/// (memoryless reference helper for tests and diagnostics).
pub fn step_with_conv(
    state: &StateField,
    conv: &ConvField,
    plan: &ConvPlan,
    model: &ModelSpec,
    params: &SchemeParams,
) -> StateField {
    let n = model.n();
    let m = state.cells();
    let mut next = StateField::zeros(n, m);
    next.time_index = state.time_index + 1;
    let mut args = vec![0.0; n];
    for k in 0..n {
        let velocities: Vec<f64> = (0..=m)
            .map(|a| {
                for (s, arg) in args.iter_mut().enumerate() {
                    *arg = conv.values[plan.channel(s, k)][a];
                }
                model.components[k].velocity.eval(&args)
            })
            .collect();
        advance_component(
            &state.components[k],
            &velocities,
            &model.components[k].flux,
            params,
            &mut next.components[k],
        );
    }
    next
}

/// Memory solver over `[0, T]`.
pub fn run(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    record_times: &[f64],
) -> Result<Trajectory> {
    run_with(
        model,
        grid,
        time,
        params,
        &RunOptions::default().recording(record_times),
        &mut (),
    )
}

/// Memoryless reference solver: the velocities see only the spatial
/// convolution of the current level.
pub fn run_memoryless(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    record_times: &[f64],
) -> Result<Trajectory> {
    run_with(
        model,
        grid,
        time,
        params,
        &RunOptions::memoryless().recording(record_times),
        &mut (),
    )
}

pub fn run_with(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    options: &RunOptions,
    observer: &mut dyn StepObserver,
) -> Result<Trajectory> {
    Solver::new(model, grid, time, params, options)?.run(&options.record_times, observer)
}

/// `Δx Σ_i U^k_i` with boundary outflow added back, per component.
pub fn conserved_mass(scalars: &StepScalars) -> Vec<f64> {
    scalars
        .mass
        .iter()
        .zip(&scalars.outflow)
        .map(|(m, o)| compensated_sum([*m, *o]))
        .collect()
}
