//! Executable stability checks for a run of the scheme.
//!
//! [`Diagnostics`] is a [`StepObserver`] that streams over the run and keeps
//! only running maxima, so nothing beyond the current pair of levels is
//! retained. The checks are:
//!
//! | name               | quantity                                                  |
//! |--------------------|-----------------------------------------------------------|
//! | `invariant_region` | largest excursion of `U` outside `[0, 1]`                 |
//! | `conservation`     | `|mass_n - mass_0 + outflow_n| / mass_0`                  |
//! | `bv_envelope`      | `TV_n / (e^{C₇t} TV_0 + (e^{C₇t} - 1) C₈ / C₇)`           |
//! | `entropy`          | discrete entropy residual over the `α` grid               |
//! | `conv_c1`          | excursion of `c` outside `[0, 1]`                         |
//! | `conv_c2`          | `max |Δc| / (C₅ Δx)`                                      |
//! | `conv_c3`          | `max |Δ²c| / (C₆ Δx²)`                                    |
//! | `time_modulus`     | `max_n Δx Σ |U^{n+1} - U^n| / Δt` (empirical `C₉`)        |

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{project_initial, GridSpec, TimeGrid};
use crate::models::{validate_model, ModelConstants, ModelSpec};
use crate::output::format_float;
use crate::scheme::{lf_flux, InvariantPolicy, RunOptions, SchemeParams, Solver, StepObserver, StepView, Trajectory};
use crate::state::StateField;

/// Default entropy test levels `0, 0.1, ..., 1`.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub const INVARIANT_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-12;
pub const ENTROPY_TOL: f64 = 1e-12;
pub const BV_TOL: f64 = 1.0 + 1e-12;
pub const CONV_RANGE_TOL: f64 = 1e-12;
pub const CONV_DIFF_TOL: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub step: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub component: Option<usize>,
    pub worst: f64,
    pub tolerance: f64,
    pub location: Option<Location>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConstants {
    /// `max_j C₅^{j,k}` per component `k`.
    pub c5: Vec<f64>,
    /// `max_j C₆^{j,k}`.
    pub c6: Vec<f64>,
    pub c7: Vec<f64>,
    pub c8: Vec<f64>,
    /// Empirical time-continuity constant per component.
    pub c9: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub checks: Vec<Check>,
    pub constants: StabilityConstants,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str, component: Option<usize>) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name && c.component == component)
    }

    /// Worst value of a check across components.
    pub fn worst(&self, name: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.name == name)
            .map(|c| c.worst)
            .reduce(f64::max)
    }

    pub fn passes(&self, name: &str) -> bool {
        self.checks.iter().filter(|c| c.name == name).all(|c| c.pass)
    }

    /// Fixed-width human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>4} {:>20} {:>20} {:>14}  result",
            "check", "comp", "worst", "tolerance", "at step/cell"
        );
        for c in &self.checks {
            let comp = c.component.map_or("-".to_string(), |k| (k + 1).to_string());
            let at = c.location.map_or("-".to_string(), |l| format!("{}/{}", l.step, l.cell));
            let _ = writeln!(
                out,
                "{:<18} {:>4} {:>20} {:>20} {:>14}  {}",
                c.name,
                comp,
                format_float(c.worst),
                format_float(c.tolerance),
                at,
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        let k = &self.constants;
        for (label, v) in [
            ("C5", &k.c5),
            ("C6", &k.c6),
            ("C7", &k.c7),
            ("C8", &k.c8),
            ("C9", &k.c9),
        ] {
            let vals: Vec<String> = v.iter().map(|x| format_float(*x)).collect();
            let _ = writeln!(out, "{label} = [{}]", vals.join(", "));
        }
        out
    }

    /// CSV with columns `check,component,worst,tolerance,pass`; components
    /// are 1-based, blank when the check is global.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["check", "component", "worst", "tolerance", "pass"])?;
        for c in &self.checks {
            w.write_record([
                c.name.to_string(),
                c.component.map_or(String::new(), |k| (k + 1).to_string()),
                format_float(c.worst),
                format_float(c.tolerance),
                c.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Running maximum with the location where it was attained.
#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    at: Option<Location>,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, at: None }
    }

    fn update(&mut self, value: f64, step: usize, cell: usize) {
        // NaN always wins so that blow-ups are never masked.
        if value > self.value || (value.is_nan() && !self.value.is_nan()) {
            self.value = value;
            self.at = Some(Location { step, cell });
        }
    }
}

/// `e^{C₇ t} TV₀ + (e^{C₇ t} - 1) C₈ / C₇`, with the `C₇ → 0` limit.
pub fn bv_envelope(c7: f64, c8: f64, tv0: f64, t: f64) -> f64 {
    if c7 == 0.0 {
        return tv0 + t * c8;
    }
    let growth = (c7 * t).exp_m1();
    tv0 + growth * tv0 + growth / c7 * c8
}

/// Assembles `C₅` to `C₈` per component from the model constants and the
/// initial masses.
pub fn stability_constants(model: &ModelSpec, constants: &ModelConstants, masses: &[f64]) -> StabilityConstants {
    let n = model.n();
    let conv = crate::convolution::conv_constants_from_masses(&model.kernels, masses);
    let c5: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|j| conv.c5(j, k)).fold(0.0, f64::max))
        .collect();
    let c6: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|j| conv.c6(j, k)).fold(0.0, f64::max))
        .collect();
    let c7 = (0..n)
        .map(|k| c5[k] * constants.lip_f[k] * constants.grad_nu[k])
        .collect();
    let c8 = (0..n)
        .map(|k| {
            let lf = constants.lip_f[k];
            c6[k] * lf * constants.grad_nu[k] * masses[k]
                + 2.0 * c5[k] * c5[k] * lf * constants.lip_grad_nu[k] * masses[k]
        })
        .collect();
    StabilityConstants {
        c5,
        c6,
        c7,
        c8,
        c9: vec![0.0; n],
    }
}

/// Streaming diagnostics observer.
pub struct Diagnostics {
    n: usize,
    alphas: Vec<f64>,
    constants: StabilityConstants,
    dx: f64,
    mass0: Vec<f64>,
    tv0: Vec<f64>,
    outflow: Vec<f64>,
    /// `C₅, C₆` of each plan channel, filled on the first step.
    channel_bounds: Option<Vec<(usize, f64, f64)>>,
    invariant: Vec<Worst>,
    conservation: Vec<Worst>,
    bv: Vec<Worst>,
    entropy: Vec<Worst>,
    c1: Vec<Worst>,
    c2: Vec<Worst>,
    c3: Vec<Worst>,
    modulus: Vec<Worst>,
}

impl Diagnostics {
    /// Observer for a run of `model` on `grid`. Model constants are
    /// re-derived by [`validate_model`].
    pub fn new(model: &ModelSpec, grid: &GridSpec) -> Result<Self> {
        let report = validate_model(model)?;
        let initial = project_initial(&model.initial_data(), grid)?;
        Ok(Self::with_constants(
            model,
            &report.constants,
            &initial,
            grid.dx,
            default_alphas(),
        ))
    }

    pub fn with_constants(
        model: &ModelSpec,
        constants: &ModelConstants,
        initial: &StateField,
        dx: f64,
        alphas: Vec<f64>,
    ) -> Self {
        let n = model.n();
        let mass0: Vec<f64> = (0..n).map(|k| initial.mass(k, dx)).collect();
        let tv0 = (0..n).map(|k| initial.total_variation(k)).collect();
        let constants = stability_constants(model, constants, &mass0);
        let mut invariant = vec![Worst::new(); n];
        for (k, w) in invariant.iter_mut().enumerate() {
            for (i, &u) in initial.component(k).iter().enumerate() {
                w.update(range_excursion(u), 0, i);
            }
        }
        Self {
            n,
            alphas,
            constants,
            dx,
            mass0,
            tv0,
            outflow: vec![0.0; n],
            channel_bounds: None,
            invariant,
            conservation: vec![Worst::new(); n],
            bv: vec![Worst::new(); n],
            entropy: vec![Worst::new(); n],
            c1: vec![Worst::new(); n],
            c2: vec![Worst::new(); n],
            c3: vec![Worst::new(); n],
            modulus: vec![Worst::new(); n],
        }
    }

    pub fn constants(&self) -> &StabilityConstants {
        &self.constants
    }

    pub fn finish(self) -> DiagnosticsReport {
        let mut checks = Vec::new();
        let mut push = |name, worst: &[Worst], tol: f64, pass: &dyn Fn(f64) -> bool| {
            for (k, w) in worst.iter().enumerate() {
                checks.push(Check {
                    name,
                    component: Some(k),
                    worst: w.value,
                    tolerance: tol,
                    location: w.at,
                    pass: pass(w.value),
                });
            }
        };
        let within = |tol: f64| move |v: f64| v <= tol;
        push(
            "invariant_region",
            &self.invariant,
            INVARIANT_TOL,
            &within(INVARIANT_TOL),
        );
        push(
            "conservation",
            &self.conservation,
            CONSERVATION_TOL,
            &within(CONSERVATION_TOL),
        );
        push("bv_envelope", &self.bv, BV_TOL, &within(BV_TOL));
        push("entropy", &self.entropy, ENTROPY_TOL, &within(ENTROPY_TOL));
        push("conv_c1", &self.c1, CONV_RANGE_TOL, &within(CONV_RANGE_TOL));
        push("conv_c2", &self.c2, CONV_DIFF_TOL, &within(CONV_DIFF_TOL));
        push("conv_c3", &self.c3, CONV_DIFF_TOL, &within(CONV_DIFF_TOL));
        push("time_modulus", &self.modulus, f64::INFINITY, &|v: f64| v.is_finite());
        let mut constants = self.constants;
        constants.c9 = self.modulus.iter().map(|w| w.value).collect();
        DiagnosticsReport { checks, constants }
    }

    fn channel_bounds(&mut self, view: &StepView<'_>) -> &[(usize, f64, f64)] {
        let mass0 = &self.mass0;
        self.channel_bounds.get_or_insert_with(|| {
            view.plan
                .channels()
                .iter()
                .map(|ch| {
                    let pair = &view.model.kernels.pairs()[ch.pair];
                    let gamma_l1 = ch.temporal.total_mass();
                    let m = mass0[ch.component];
                    (
                        ch.component,
                        m * pair.spatial.derivative_sup() * gamma_l1,
                        2.0 * m * pair.spatial.second_derivative_sup() * gamma_l1,
                    )
                })
                .collect()
        })
    }
}

fn range_excursion(v: f64) -> f64 {
    if v.is_nan() {
        f64::NAN
    } else {
        (-v).max(v - 1.0).max(0.0)
    }
}

/// `|x| / bound` with `0 / 0 = 0`.
fn ratio(x: f64, bound: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x / bound
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest discrete entropy residual of one component over one step, and the
/// cell where it occurs.
pub fn entropy_residual(
    prev: &[f64],
    next: &[f64],
    velocities: &[f64],
    flux: &crate::models::FluxFn,
    params: &SchemeParams,
    alpha: f64,
) -> (f64, usize) {
    let m = prev.len();
    let at = |i: isize| {
        if i < 0 || i as usize >= m {
            0.0
        } else {
            prev[i as usize]
        }
    };
    // G at interface a, between cells a - 1 and a.
    let g = |a: usize| {
        let (x, y) = (at(a as isize - 1), at(a as isize));
        let v = velocities[a];
        lf_flux(v, x.max(alpha), y.max(alpha), flux, params) - lf_flux(v, x.min(alpha), y.min(alpha), flux, params)
    };
    let f_alpha = flux.eval(alpha);
    let lambda = params.lambda;
    let mut worst = (f64::NEG_INFINITY, 0);
    let mut g_left = g(0);
    for i in 0..m {
        let g_right = g(i + 1);
        let r = (next[i] - alpha).abs() - (prev[i] - alpha).abs()
            + lambda * (g_right - g_left)
            + lambda * sgn(next[i] - alpha) * f_alpha * (velocities[i + 1] - velocities[i]);
        if r > worst.0 || r.is_nan() {
            worst = (r, i);
        }
        g_left = g_right;
    }
    worst
}

impl StepObserver for Diagnostics {
    fn on_step(&mut self, view: &StepView<'_>) {
        let step = view.n;
        let dx = self.dx;
        for k in 0..self.n {
            let u = view.next.component(k);
            let p = view.prev.component(k);
            for (i, &v) in u.iter().enumerate() {
                self.invariant[k].update(range_excursion(v), step, i);
            }

            self.outflow[k] += view.outflow[k];
            let mass = view.next.mass(k, dx);
            let drift = (mass - self.mass0[k] + self.outflow[k]).abs();
            let scale = if self.mass0[k] > 0.0 { self.mass0[k] } else { 1.0 };
            self.conservation[k].update(drift / scale, step, 0);

            let tv = view.next.total_variation(k);
            let env = bv_envelope(self.constants.c7[k], self.constants.c8[k], self.tv0[k], view.time);
            self.bv[k].update(ratio(tv, env), step, 0);

            let flux = &view.model.components[k].flux;
            for &alpha in &self.alphas {
                let (r, i) = entropy_residual(p, u, &view.velocities[k], flux, view.params, alpha);
                self.entropy[k].update(r, step, i);
            }

            let moved: f64 = crate::quadrature::compensated_sum(u.iter().zip(p).map(|(a, b)| (a - b).abs()));
            self.modulus[k].update(dx * moved / view.dt, step, 0);
        }

        // Convolution terms feeding this step, at level n - 1.
        let bounds = self.channel_bounds(view).to_vec();
        for (ch, (j, c5, c6)) in bounds.into_iter().enumerate() {
            let c = &view.conv.values[ch];
            for (a, &v) in c.iter().enumerate() {
                self.c1[j].update(range_excursion(v), step - 1, a);
            }
            let d1 = view.conv.max_first_difference(ch);
            let d2 = view.conv.max_second_difference(ch);
            self.c2[j].update(ratio(d1, c5 * dx), step - 1, 0);
            self.c3[j].update(ratio(d2, c6 * dx * dx), step - 1, 0);
        }
    }
}

/// Runs `model` with the streaming diagnostics attached. The invariant
/// region is recorded rather than enforced so the report is always produced.
pub fn verify_run(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    options: &RunOptions,
) -> Result<(Trajectory, DiagnosticsReport)> {
    let mut diag = Diagnostics::new(model, grid)?;
    let options = options.clone().with_invariant_policy(InvariantPolicy::Record);
    let traj = Solver::new(model, grid, time, params, &options)?.run(&options.record_times, &mut diag)?;
    Ok((traj, diag.finish()))
}

/// `max` over consecutive recorded levels of `‖U(t₂) - U(t₁)‖_{L¹} / (t₂ - t₁)`,
/// summed over components. By the triangle inequality this equals the
/// maximum over all recorded pairs.
pub fn l1_time_modulus(traj: &Trajectory) -> f64 {
    let dx = traj.grid.dx;
    traj.records
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| w[1].1.l1_difference(&w[0].1, dx) / (w[1].0 - w[0].0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeModulusSweep {
    pub deltas: Vec<f64>,
    pub moduli: Vec<f64>,
    /// `(max - min) / min` over the sweep.
    pub variation: f64,
}

impl TimeModulusSweep {
    pub fn within(&self, band: f64) -> bool {
        self.moduli.iter().all(|m| m.is_finite()) && self.variation < band
    }
}

/// Empirical time modulus, recorded at every level, for each memory radius.
pub fn time_modulus_sweep(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    deltas: &[f64],
) -> Result<TimeModulusSweep> {
    let all_times: Vec<f64> = (0..=time.n_steps).map(|n| time.time(n)).collect();
    let options = RunOptions::default()
        .recording(&all_times)
        .with_invariant_policy(InvariantPolicy::Record);
    let moduli = deltas
        .iter()
        .map(|&d| {
            let m = model.with_delta(d)?;
            let traj = Solver::new(&m, grid, time, params, &options)?.run(&all_times, &mut ())?;
            Ok(l1_time_modulus(&traj))
        })
        .collect::<Result<Vec<f64>>>()?;
    let lo = moduli.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = moduli.iter().copied().fold(0.0, f64::max);
    let variation = if lo > 0.0 {
        (hi - lo) / lo
    } else if hi == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(TimeModulusSweep {
        deltas: deltas.to_vec(),
        moduli,
        variation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceRow {
    pub eps: f64,
    /// `‖U₀,ε - U₀‖_{L¹}` after clamping to `[0, 1]`.
    pub initial_distance: f64,
    pub final_distance: f64,
    /// `final / initial`; `None` when the perturbation vanishes.
    pub ratio: Option<f64>,
    /// Uniqueness-estimate constant `C` with this run as the second solution.
    pub constant: f64,
    /// `e^{C T}` (may be infinite).
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub rows: Vec<DependenceRow>,
}

/// Relative slack on the Gronwall bound for rounding in the L1 sums.
pub const DEPENDENCE_REL_TOL: f64 = 1e-12;

impl DependenceReport {
    /// Every defined ratio is finite and below its Gronwall bound.
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| match r.ratio {
            Some(q) => q.is_finite() && q <= r.bound * (1.0 + DEPENDENCE_REL_TOL),
            None => r.final_distance == 0.0,
        })
    }
}

/// `cos²` bump of unit height centred in the domain, one tenth of its width.
fn probe_bump(grid: &GridSpec, x: f64) -> f64 {
    let centre = 0.5 * (grid.x_min + grid.x_max);
    let half = 0.05 * (grid.x_max - grid.x_min);
    let s = (x - centre) / half;
    if s.abs() < 1.0 {
        (0.5 * std::f64::consts::PI * s).cos().powi(2)
    } else {
        0.0
    }
}

/// Perturbs the initial data by `ε·bump`, reruns, and compares the `L¹`
/// growth with the Gronwall form of the uniqueness estimate.
pub fn continuous_dependence_probe(
    model: &ModelSpec,
    grid: &GridSpec,
    time: &TimeGrid,
    params: &SchemeParams,
    eps_list: &[f64],
) -> Result<DependenceReport> {
    let constants = validate_model(model)?.constants;
    let options = RunOptions::default().with_invariant_policy(InvariantPolicy::Record);
    let u0 = project_initial(&model.initial_data(), grid)?;
    let base = Solver::from_state(model, grid, time, params, &options, u0.clone())?.run(&[], &mut ())?;
    let dx = grid.dx;
    let n = model.n();
    let t_final = time.t_final;

    let bv_u = base
        .scalars
        .iter()
        .flat_map(|s| s.tv.iter().copied())
        .fold(0.0, f64::max);
    let u0_l1: f64 = (0..n).map(|k| u0.mass(k, dx)).sum();
    let pairs = model.kernels.pairs();
    let dmu_sup = pairs.iter().map(|p| p.spatial.derivative_sup()).fold(0.0, f64::max);
    let gamma_sup = pairs.iter().map(|p| p.temporal.sup()).fold(0.0, f64::max);
    let theta_sup = pairs
        .iter()
        .map(|p| p.spatial.sup() * p.temporal.sup())
        .fold(0.0, f64::max);
    let lip_f = constants.max_lip_f();
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let lip_nu = max(&constants.lip_nu);
    let grad_nu = max(&constants.grad_nu);
    let hess_nu = max(&constants.hess_nu);
    let nt = n as f64 * t_final;

    let rows = eps_list
        .iter()
        .map(|&eps| {
            let mut v0 = u0.clone();
            for comp in v0.components.iter_mut() {
                for (i, v) in comp.iter_mut().enumerate() {
                    *v = (*v + eps * probe_bump(grid, grid.cell_center(i))).clamp(0.0, 1.0);
                }
            }
            let initial_distance = v0.l1_difference(&u0, dx);
            let pert = Solver::from_state(model, grid, time, params, &options, v0)?.run(&[], &mut ())?;
            let final_distance = pert.final_state.l1_difference(&base.final_state, dx);
            let v_l1_qt: f64 = pert
                .scalars
                .iter()
                .skip(1)
                .map(|s| s.mass.iter().sum::<f64>() * time.dt)
                .sum();
            let constant = nt * lip_f * lip_nu * theta_sup * bv_u
                + nt * lip_f * u0_l1 * grad_nu * gamma_sup * dmu_sup
                + nt * lip_f * u0_l1 * v_l1_qt * gamma_sup * dmu_sup * hess_nu * theta_sup;
            let ratio = (initial_distance > 0.0).then(|| final_distance / initial_distance);
            Ok(DependenceRow {
                eps,
                initial_distance,
                final_distance,
                ratio,
                constant,
                bound: (constant * t_final).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.iter().any(|r| r.final_distance.is_nan()) {
        return Err(Error::Param("continuous-dependence probe produced NaN".into()));
    }
    Ok(DependenceReport { rows })
}
