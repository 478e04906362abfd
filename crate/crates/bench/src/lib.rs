//! Shared fixtures for the benchmarks: the reference Keyfitz–Kranzer setup
//! at a chosen mesh and memory radius.

use memlaw_core::{cfl_time_grid, keyfitz_kranzer_preset, validate_model, GridSpec, ModelSpec, SchemeParams, TimeGrid};

pub struct Fixture {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub time: TimeGrid,
    pub params: SchemeParams,
}

pub fn kk_fixture(dx: f64, delta: f64, t_final: f64) -> Fixture {
    let model = keyfitz_kranzer_preset(0.25, delta).expect("preset");
    let grid = GridSpec::new(-5.0, 5.0, dx).expect("grid");
    let c = validate_model(&model).expect("valid model").constants;
    let time = cfl_time_grid(dx, t_final, 0.3333, c.max_lip_f(), c.max_nu_sup(), Some(0.1286)).expect("time grid");
    let params = SchemeParams::for_time_grid(0.3333, &time).expect("params");
    Fixture {
        model,
        grid,
        time,
        params,
    }
}
