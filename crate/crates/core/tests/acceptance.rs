#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr so the verdicts show up even when libtest captures
//! the output of passing tests.

use std::io::Write;

use memlaw_core::diagnostics::{verify_run, DiagnosticsReport};
use memlaw_core::grid::{cfl_bound, cfl_time_grid, GridSpec, InitialData, Step, TimeGrid};
use memlaw_core::kernels::{
    normalize_spatial, scaled_first_moment, spatial_cell_averages, temporal_cell_averages, KernelMatrix, KernelPair,
    SpatialFamily, SpatialKernel, TemporalKernel, Window,
};
use memlaw_core::models::{keyfitz_kranzer_preset, validate_model, Component, FluxFn, ModelSpec, VelocityFn};
use memlaw_core::scheme::{update_map, MemoryMode, RunOptions, SchemeParams, Solver, StepObserver, StepView};
use memlaw_core::studies::{delta_study, mesh_study, ErrorTable, MeshStudy};
use memlaw_core::{memory_conv, spatial_conv, ConvPlan, HistoryRing, StateField};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const X_MIN: f64 = -5.0;
const X_MAX: f64 = 5.0;
const DX: f64 = 0.00625;
const ETA: f64 = 0.25;
const DELTA: f64 = 0.0125;
const BETA: f64 = 0.3333;
const LAMBDA: f64 = 0.1286;
const T_FINAL: f64 = 0.5;

const RATE_TOL: f64 = 0.15;
const RATE_FLOOR: f64 = 0.5;
const PAPER_DELTA_RATES: [f64; 6] = [0.71, 0.98, 0.99, 1.00, 1.04, 0.96];
const PAPER_MESH_RATES: [f64; 3] = [0.72, 0.99, 1.00];
const PAPER_MESH_ERRORS: [f64; 4] = [0.63, 0.38, 0.19, 0.096];
const MESH_ERROR_REL_TOL: f64 = 0.25;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn reference_setup(delta: f64) -> (ModelSpec, GridSpec, TimeGrid, SchemeParams) {
    let model = keyfitz_kranzer_preset(ETA, delta).unwrap();
    let grid = GridSpec::new(X_MIN, X_MAX, DX).unwrap();
    let c = validate_model(&model).unwrap().constants;
    let time = cfl_time_grid(DX, T_FINAL, BETA, c.max_lip_f(), c.max_nu_sup(), Some(LAMBDA)).unwrap();
    let params = SchemeParams::for_time_grid(BETA, &time).unwrap();
    (model, grid, time, params)
}

fn fmt_rates(t: &ErrorTable) -> String {
    t.rates()
        .iter()
        .map(|r| format!("{r:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_errors(t: &ErrorTable) -> String {
    t.errors()
        .iter()
        .map(|e| format!("{e:.5}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_1_delta_rates() {
    let (model, grid, time, params) = reference_setup(0.8);
    let table = delta_study(&model, &grid, &time, &params, 0.8, 6).unwrap();
    let rates = table.rates();
    assert_eq!(table.rows.len(), 7);
    let mut problems = Vec::new();
    for (i, (&a, &p)) in rates.iter().zip(&PAPER_DELTA_RATES).enumerate() {
        if (a - p).abs() > RATE_TOL {
            problems.push(format!("rate {} = {a:.3} vs {p} (±{RATE_TOL})", i + 1));
        }
        if !(a >= RATE_FLOOR) {
            problems.push(format!("rate {} = {a:.3} below {RATE_FLOOR}", i + 1));
        }
    }
    let pass = rates.len() == 6 && problems.is_empty();
    verdict(
        "1 (delta rates)",
        pass,
        &format!(
            "errors [{}] rates [{}] {}",
            fmt_errors(&table),
            fmt_rates(&table),
            problems.join("; ")
        ),
    );
    assert!(pass, "{problems:?}");
}

#[test]
fn criterion_2_mesh_rates() {
    let model = keyfitz_kranzer_preset(ETA, 1.6).unwrap();
    let study = MeshStudy {
        x_min: X_MIN,
        x_max: X_MAX,
        t_final: T_FINAL,
        beta: BETA,
        lambda: Some(LAMBDA),
        dx0: 0.0125,
        n_halvings: 3,
        ratio: 128.0,
        dx_fine: 0.0125 / 4.0,
    };
    let table = mesh_study(&model, &study).unwrap();
    assert_eq!(table.rows.len(), 4);
    let mut problems = Vec::new();
    for (i, (&a, &p)) in table.rates().iter().zip(&PAPER_MESH_RATES).enumerate() {
        if (a - p).abs() > RATE_TOL {
            problems.push(format!("rate {} = {a:.3} vs {p} (±{RATE_TOL})", i + 1));
        }
        if !(a >= RATE_FLOOR) {
            problems.push(format!("rate {} = {a:.3} below {RATE_FLOOR}", i + 1));
        }
    }
    for (i, (&e, &p)) in table.errors().iter().zip(&PAPER_MESH_ERRORS).enumerate() {
        if ((e - p) / p).abs() > MESH_ERROR_REL_TOL {
            problems.push(format!("error {} = {e:.4} vs {p} (±25%)", i + 1));
        }
    }
    let pass = problems.is_empty();
    verdict(
        "2 (mesh rates)",
        pass,
        &format!(
            "errors [{}] rates [{}] {}",
            fmt_errors(&table),
            fmt_rates(&table),
            problems.join("; ")
        ),
    );
    assert!(pass, "{problems:?}");
}

fn random_model(rng: &mut ChaCha8Rng) -> ModelSpec {
    let n = rng.gen_range(1..=2);
    let velocity = match rng.gen_range(0..3) {
        0 => VelocityFn::OneMinusSum,
        1 => VelocityFn::OneMinusSumCubed,
        _ => VelocityFn::KeyfitzKranzer,
    };
    let components = (0..n)
        .map(|_| {
            // Random BV data: a few overlapping steps, total height ≤ 1.
            let pieces = rng.gen_range(1..=3);
            let steps = (0..pieces)
                .map(|_| {
                    let a = rng.gen_range(-0.9..0.6);
                    let b = rng.gen_range(a + 0.1..0.95);
                    Step {
                        from: a,
                        to: b,
                        value: rng.gen_range(0.0..1.0) / pieces as f64,
                    }
                })
                .collect();
            Component {
                flux: FluxFn::Logistic,
                velocity: velocity.clone(),
                initial: InitialData::Steps(steps),
            }
        })
        .collect();
    let pair = KernelPair {
        spatial: SpatialKernel::poly_bump(rng.gen_range(0.05..0.4)).unwrap(),
        temporal: TemporalKernel::poly_decay().scaled(rng.gen_range(0.01..0.2)).unwrap(),
    };
    let window = if rng.gen_bool(0.5) {
        Window::Upstream
    } else {
        Window::Downstream
    };
    ModelSpec::new(
        "random",
        components,
        KernelMatrix::shared(n, pair).unwrap().with_window(window),
    )
    .unwrap()
}

fn summarize(report: &DiagnosticsReport) -> String {
    let mut names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
    names.dedup();
    names
        .iter()
        .map(|n| format!("{n}={:.2e}", report.worst(n).unwrap_or(0.0)))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn criterion_3_stability_suite() {
    let mut details = Vec::new();
    let mut pass = true;

    let (model, grid, time, params) = reference_setup(DELTA);
    let (_, report) = verify_run(&model, &grid, &time, &params, &RunOptions::default()).unwrap();
    pass &= report.all_pass();
    details.push(format!("reference: {}", summarize(&report)));
    if !report.all_pass() {
        eprintln!("{}", report.to_table());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for case in 0..3 {
        let model = random_model(&mut rng);
        let grid = GridSpec::new(-1.0, 1.0, 2.0 / 64.0).unwrap();
        assert_eq!(grid.cells(), 64);
        let c = validate_model(&model).unwrap().constants;
        let beta = rng.gen_range(0.1..0.6);
        let bound = cfl_bound(beta, c.max_lip_f(), c.max_nu_sup()).unwrap();
        let time = cfl_time_grid(grid.dx, 0.3, beta, c.max_lip_f(), c.max_nu_sup(), Some(0.9 * bound)).unwrap();
        let params = SchemeParams::for_time_grid(beta, &time).unwrap();
        let (_, report) = verify_run(&model, &grid, &time, &params, &RunOptions::default()).unwrap();
        if !report.all_pass() {
            eprintln!("random case {case}:\n{}", report.to_table());
        }
        pass &= report.all_pass();
        details.push(format!("random {case} (N={}): {}", model.n(), summarize(&report)));
    }
    verdict("3 (stability suite)", pass, &details.join(" / "));
    assert!(pass);
}

#[test]
fn criterion_4_memoryless_degeneracy() {
    // δ below one time step: the cell-averaged weights collapse to [1].
    let (model, grid, time, params) = reference_setup(DELTA);
    let small = model.with_delta(0.5 * time.dt).unwrap();
    let plan = ConvPlan::new(&small.kernels, grid.dx, time.dt).unwrap();
    assert!(plan.channels().iter().all(|c| c.temporal.is_degenerate()));

    let memoryless = RunOptions::memoryless();
    let mut reference = Solver::new(&model, &grid, &time, &params, &memoryless).unwrap();
    let mut collapsed = Solver::new(&small, &grid, &time, &params, &RunOptions::default()).unwrap();
    let forced_opts = RunOptions::default().with_mode(MemoryMode::DegenerateMemory);
    let mut forced = Solver::new(&model, &grid, &time, &params, &forced_opts).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..time.n_steps {
        reference.step(&mut ()).unwrap();
        collapsed.step(&mut ()).unwrap();
        forced.step(&mut ()).unwrap();
        for other in [collapsed.state(), forced.state()] {
            for (a, b) in reference.state().components.iter().zip(&other.components) {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-14;
    verdict(
        "4 (memoryless degeneracy)",
        pass,
        &format!("max per-cell difference {worst:e} over {} steps", time.n_steps),
    );
    assert!(pass);
}

/// `∫_a^b μ` for the normalized `poly_bump` kernel, from its antiderivative.
fn bump_integral(eta: f64, a: f64, b: f64) -> f64 {
    let amp = 20.0 / eta.powi(5);
    // x (η - x)^3 = η y^3 - y^4 with y = η - x.
    let anti = |x: f64| {
        let y = eta - x.clamp(0.0, eta);
        -(eta * y.powi(4) / 4.0 - y.powi(5) / 5.0)
    };
    amp * (anti(b) - anti(a))
}

/// `∫_a^b Γ_δ` for `Γ(t) = 3 (1 - t)^2` on `[0, 1]`.
fn decay_integral(delta: f64, a: f64, b: f64) -> f64 {
    let anti = |t: f64| -(1.0 - (t / delta).clamp(0.0, 1.0)).powi(3);
    anti(b) - anti(a)
}

/// `Δx Δt Σ_m Σ_p Θ^{n-m}_{a-p} U^m_p` with `Θ` averaged over space–time
/// cells and the window deciding which side of the interface is read.
fn brute_force(levels: &[Vec<f64>], dx: f64, dt: f64, eta: f64, delta: f64, window: Window) -> Vec<f64> {
    let n = levels.len() - 1;
    let m = levels[0].len();
    (0..=m)
        .map(|a| {
            let mut acc = 0.0;
            for (lev, u) in levels.iter().enumerate() {
                let lag = (n - lev) as f64;
                let theta_t = decay_integral(delta, lag * dt, (lag + 1.0) * dt) / dt;
                for (p, &up) in u.iter().enumerate() {
                    // Kernel argument range covered by cell p seen from interface a.
                    let (lo, hi) = match window {
                        Window::Upstream => ((a as f64 - p as f64 - 1.0) * dx, (a as f64 - p as f64) * dx),
                        Window::Downstream => ((p as f64 - a as f64) * dx, (p as f64 - a as f64 + 1.0) * dx),
                    };
                    if hi <= 0.0 {
                        continue;
                    }
                    let theta_x = bump_integral(eta, lo, hi) / dx;
                    acc += dx * dt * theta_x * theta_t * up;
                }
            }
            acc
        })
        .collect()
}

#[test]
fn criterion_5_brute_force_oracle() {
    let (dx, dt, eta) = (1.0 / 16.0, 0.02, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let levels: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..16).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for window in [Window::Upstream, Window::Downstream] {
        // Full history, truncated history and a kernel shorter than the history.
        for delta in [0.07, 0.2, 0.045] {
            let pair = KernelPair {
                spatial: SpatialKernel::poly_bump(eta).unwrap(),
                temporal: TemporalKernel::poly_decay().scaled(delta).unwrap(),
            };
            let kernels = KernelMatrix::shared(1, pair).unwrap().with_window(window);
            let plan = ConvPlan::new(&kernels, dx, dt).unwrap();
            let mut ring = HistoryRing::new(plan.history_depth());
            for (lev, u) in levels.iter().enumerate() {
                let mut state = StateField::from_components(vec![u.clone()]);
                state.time_index = lev;
                ring.push(spatial_conv(&state, &plan).unwrap());
                let factored = memory_conv(&ring, &plan).unwrap();
                let direct = brute_force(&levels[..=lev], dx, dt, eta, delta, window);
                assert_eq!(factored.values[0].len(), direct.len());
                for (f, d) in factored.values[0].iter().zip(&direct) {
                    worst = worst.max((f - d).abs());
                }
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-14;
    verdict(
        "5 (brute-force convolution)",
        pass,
        &format!("max interface difference {worst:e} over {cases} (window, delta, level) cases"),
    );
    assert!(pass);
}

#[derive(Debug, Clone)]
struct MonotoneCase {
    velocity: usize,
    flux: usize,
    beta: f64,
    lambda_frac: f64,
    c_left: Vec<f64>,
    c_right: Vec<f64>,
    u: [f64; 3],
}

fn monotone_case() -> impl Strategy<Value = MonotoneCase> {
    (1usize..=2)
        .prop_flat_map(|n| {
            (
                0usize..4,
                0usize..2,
                0.01f64..0.66,
                0.0f64..=1.0,
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(0.0f64..=1.0, n),
                prop::array::uniform3(0.0f64..=1.0),
            )
        })
        .prop_map(|(velocity, flux, beta, lambda_frac, c_left, c_right, u)| MonotoneCase {
            velocity,
            flux,
            beta,
            lambda_frac,
            c_left,
            c_right,
            u,
        })
}

#[test]
fn criterion_6_monotonicity() {
    const H: f64 = 1e-6;
    // Rounding slack on a difference of O(1) quantities.
    const ROUND: f64 = 1e-15;
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        ..ProptestConfig::default()
    });
    let count = std::cell::Cell::new(0usize);
    let result = runner.run(&monotone_case(), |case| {
        let n = case.c_left.len();
        let velocity = match case.velocity {
            0 => VelocityFn::OneMinusSum,
            1 => VelocityFn::OneMinusSumCubed,
            2 => VelocityFn::KeyfitzKranzer,
            _ => VelocityFn::Constant(-0.7),
        };
        let flux = if case.flux == 0 {
            FluxFn::Logistic
        } else {
            FluxFn::Identity
        };
        let nu_sup = match case.velocity {
            0 => 1.0_f64.max(n as f64 - 1.0),
            1 | 2 => 1.0_f64.max((n as f64 - 1.0).powi(3)),
            _ => 0.7,
        };
        let bound = cfl_bound(case.beta, 1.0, nu_sup).unwrap();
        let lambda = (case.lambda_frac * bound).max(1e-6);
        let params = SchemeParams::new(case.beta, lambda).unwrap();
        let (vl, vr) = (velocity.eval(&case.c_left), velocity.eval(&case.c_right));
        let h = |u: [f64; 3]| update_map(vl, vr, u[0], u[1], u[2], &flux, &params);
        let base = h(case.u);
        for arg in 0..3 {
            for sign in [1.0, -1.0] {
                let mut v = case.u;
                v[arg] = (v[arg] + sign * H).clamp(0.0, 1.0);
                let moved = h(v);
                let slope = sign * (moved - base);
                prop_assert!(
                    slope >= -ROUND,
                    "H decreased by {slope:e} in argument {arg} (sign {sign}) for {case:?}"
                );
            }
        }
        count.set(count.get() + 1);
        Ok(())
    });
    let count = count.get();
    let pass = result.is_ok() && count >= 1000;
    verdict(
        "6 (monotonicity)",
        pass,
        &format!(
            "{count} random configurations, perturbation ±{H:e}: {:?}",
            result.as_ref().err()
        ),
    );
    assert!(pass, "{result:?}");
}

#[test]
fn criterion_7_kernel_analytics() {
    let mut problems = Vec::new();
    let mu = normalize_spatial(SpatialFamily::PolyBump { eta: ETA }).unwrap();
    let amp = mu.amplitude().unwrap();
    if ((amp - 20480.0) / 20480.0).abs() > 1e-9 {
        problems.push(format!("L = {amp}"));
    }
    for delta in [1.0, 0.1, 0.0125] {
        let g = TemporalKernel::poly_decay().scaled(delta).unwrap();
        let m = scaled_first_moment(&g);
        if (m - delta / 4.0).abs() > 1e-10 {
            problems.push(format!("first moment {m} at delta {delta}"));
        }
        for dt in [0.0008026, 0.001, delta / 7.0] {
            let w = temporal_cell_averages(&g, dt).unwrap();
            if (w.total_mass() - 1.0).abs() > 1e-10 {
                problems.push(format!("temporal mass {} at delta {delta}, dt {dt}", w.total_mass()));
            }
        }
    }
    for eta in [0.25, 0.1, 0.37] {
        let mu = SpatialKernel::poly_bump(eta).unwrap();
        for dx in [0.00625, 0.0125, 0.003125, 0.01] {
            let w = spatial_cell_averages(&mu, dx).unwrap();
            let mass: f64 = w.iter().sum::<f64>() * dx;
            if (mass - 1.0).abs() > 1e-10 {
                problems.push(format!("spatial mass {mass} at eta {eta}, dx {dx}"));
            }
        }
    }
    let pass = problems.is_empty();
    verdict(
        "7 (kernel analytics)",
        pass,
        &format!("L = {amp}; {}", problems.join("; ")),
    );
    assert!(pass, "{problems:?}");
}

/// Captures the interface velocities of the last component at chosen steps.
struct VelocityTap {
    steps: Vec<usize>,
    seen: Vec<(usize, Vec<f64>)>,
}

impl StepObserver for VelocityTap {
    fn on_step(&mut self, view: &StepView<'_>) {
        if self.steps.contains(&view.n) {
            self.seen.push((view.n, view.velocities.last().unwrap().clone()));
        }
    }
}

#[test]
fn profile_sign_checks() {
    // Expected shape: rarefaction on the left flank (characteristic speed
    // increasing across it), shock on the right (speed decreasing), and the
    // ordering U2 >= U1 kept at every recorded time.
    let (model, grid, time, params) = reference_setup(DELTA);
    let times = [0.0, 0.017, 0.33, 0.5];
    let steps: Vec<usize> = times.iter().map(|&t| time.nearest_step(t)).collect();
    let mut tap = VelocityTap {
        steps: steps.clone(),
        seen: Vec::new(),
    };
    let traj = Solver::new(&model, &grid, &time, &params, &RunOptions::default())
        .unwrap()
        .run(&times, &mut tap)
        .unwrap();
    assert_eq!(traj.records.len(), 4);
    let mut pass = true;
    let mut details = Vec::new();
    for ((t, state), step) in traj.records.iter().zip(&steps) {
        let (u1, u2) = (&state.components[0], &state.components[1]);
        let order = u1.iter().zip(u2).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        pass &= order <= 1e-12;
        let Some((_, nu)) = tap.seen.iter().find(|(n, _)| n == step) else {
            details.push(format!("t={t:.4}: max(U1-U2)={order:.1e}"));
            continue;
        };
        let top = u2.iter().copied().fold(0.0, f64::max);
        let inside: Vec<usize> = (0..u2.len()).filter(|&i| u2[i] > 0.5 * top).collect();
        let (first, last) = (inside[0], *inside.last().unwrap());
        let occupied = |i: &usize| u2[*i] > 0.05 * top;
        let left_edge = (0..first).find(occupied).unwrap_or(first);
        let right_edge = (last..u2.len()).rev().find(occupied).unwrap_or(last);
        // Speed change across each flank, read at the bounding interfaces.
        let left_jump = nu[first + 1] - nu[left_edge];
        let right_jump = nu[right_edge + 1] - nu[last];
        let left_rarefaction = left_jump > 0.0;
        let right_shock = right_jump < 0.0;
        pass &= left_rarefaction && right_shock;
        details.push(format!(
            "t={t:.4}: max(U1-U2)={order:.1e} left flank {} cells, d(nu)={left_jump:+.3} ({}) right flank {} cells, d(nu)={right_jump:+.3} ({})",
            first - left_edge,
            if left_rarefaction { "expansion" } else { "compression" },
            right_edge - last,
            if right_jump > 0.0 { "expansion" } else { "compression" },
        ));
    }
    verdict("profiles (sign checks)", pass, &details.join(" / "));
    assert!(pass);
}
