//! Run configuration: a TOML file with `[model]`, `[grid]`, `[scheme]`,
//! optional `[study]` and `[output]` sections.
//!
//! Parsing never stops at the first problem. Every missing key, type
//! mismatch and range violation is collected and reported as `section.key`
//! so that one edit cycle fixes the whole file.

use std::fs;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::grid::{cfl_time_grid, GridSpec, InitialData, Step, TimeGrid};
use crate::kernels::{
    normalize_spatial, normalize_temporal, KernelMatrix, KernelPair, SpatialFamily, TemporalFamily, Window,
};
use crate::models::{keyfitz_kranzer_preset, validate_model, Component, EndpointPolicy, FluxFn, ModelSpec, VelocityFn};
use crate::scheme::SchemeParams;
use crate::studies::MeshStudy;

pub const PRESETS: &[&str] = &["keyfitz_kranzer"];
pub const DEFAULT_OUTPUT_DIR: &str = "out";
pub const DEFAULT_PRECISION: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Preset(String),
    Explicit(Vec<ComponentConfig>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentConfig {
    pub flux: String,
    pub velocity: String,
    /// Only for `velocity = "constant"`.
    pub speed: Option<f64>,
    pub initial: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialKernelConfig {
    PolyBump,
    Uniform,
    Tabulated(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemporalKernelConfig {
    PolyDecay,
    Tabulated(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub source: ModelSource,
    /// Spatial support length (box width for the uniform kernel).
    pub eta: f64,
    pub delta: f64,
    pub spatial: SpatialKernelConfig,
    pub temporal: TemporalKernelConfig,
    /// `None` keeps the preset's choice, or upstream for explicit models.
    pub window: Option<Window>,
    pub endpoint_policy: Option<EndpointPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub beta: f64,
    pub lambda: Option<f64>,
    pub record_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyConfig {
    Delta {
        delta0: f64,
        halvings: usize,
    },
    Mesh {
        dx0: f64,
        halvings: usize,
        ratio: f64,
        dx_fine: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from(DEFAULT_OUTPUT_DIR),
            precision: DEFAULT_PRECISION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub scheme: SchemeConfig,
    pub study: Option<StudyConfig>,
    pub output: OutputConfig,
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

/// Parses `text`; relative table paths are resolved against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    let mut r = Reader {
        errors: Vec::new(),
        base_dir,
    };
    for key in root.keys() {
        if !["model", "grid", "scheme", "study", "output"].contains(&key.as_str()) {
            r.err(format!("unknown section [{key}]"));
        }
    }
    let sections = ["model", "grid", "scheme", "study", "output"].map(|name| r.section(&root, name));
    let [model_t, grid_t, scheme_t, study_t, output_t] = sections;
    let model = r.model(model_t);
    let grid = r.grid(grid_t);
    let scheme = r.scheme(scheme_t, grid.as_ref());
    let study = study_t.map(|t| r.study(t));
    let output = r.output(output_t);

    let (Some(model), Some(grid), Some(scheme), Some(output)) = (model, grid, scheme, output) else {
        return Err(Error::Config(r.errors));
    };
    let study = match study {
        Some(None) => return Err(Error::Config(r.errors)),
        Some(Some(s)) => Some(s),
        None => None,
    };
    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    let config = RunConfig {
        model,
        grid,
        scheme,
        study,
        output,
    };
    config.check_semantics()?;
    Ok(config)
}

struct Reader<'a> {
    errors: Vec<String>,
    base_dir: &'a Path,
}

enum Kind {
    Float,
    Int,
    Str,
}

impl Reader<'_> {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn section<'t>(&mut self, root: &'t Table, name: &str) -> Option<&'t Table> {
        match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(format!("{name} must be a table"));
                None
            }
            None => None,
        }
    }

    fn unknown_keys(&mut self, sec: &str, t: Option<&Table>, allowed: &[&str]) {
        if let Some(t) = t {
            for k in t.keys().filter(|k| !allowed.contains(&k.as_str())) {
                self.err(format!("{sec}.{k} is not a recognised key"));
            }
        }
    }

    fn typed(&mut self, sec: &str, key: &str, v: &Value, kind: Kind) -> Option<Value> {
        match (kind, v) {
            (Kind::Float, Value::Float(_)) | (Kind::Int, Value::Integer(_)) | (Kind::Str, Value::String(_)) => {
                Some(v.clone())
            }
            (Kind::Float, Value::Integer(i)) => Some(Value::Float(*i as f64)),
            (kind, _) => {
                let want = match kind {
                    Kind::Float => "a number",
                    Kind::Int => "an integer",
                    Kind::Str => "a string",
                };
                self.err(format!("{sec}.{key} must be {want}, found {}", v.type_str()));
                None
            }
        }
    }

    fn float(&mut self, sec: &str, t: Option<&Table>, key: &str, required: bool) -> Option<f64> {
        match t.and_then(|t| t.get(key)) {
            Some(v) => self.typed(sec, key, v, Kind::Float).and_then(|v| v.as_float()),
            None => {
                if required {
                    self.err(format!("{sec}.{key} is required"));
                }
                None
            }
        }
    }

    fn int(&mut self, sec: &str, t: Option<&Table>, key: &str, required: bool) -> Option<i64> {
        match t.and_then(|t| t.get(key)) {
            Some(v) => self.typed(sec, key, v, Kind::Int).and_then(|v| v.as_integer()),
            None => {
                if required {
                    self.err(format!("{sec}.{key} is required"));
                }
                None
            }
        }
    }

    fn string(&mut self, sec: &str, t: Option<&Table>, key: &str, required: bool) -> Option<String> {
        match t.and_then(|t| t.get(key)) {
            Some(v) => self
                .typed(sec, key, v, Kind::Str)
                .and_then(|v| v.as_str().map(str::to_owned)),
            None => {
                if required {
                    self.err(format!("{sec}.{key} is required"));
                }
                None
            }
        }
    }

    fn positive(&mut self, sec: &str, key: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                self.err(format!("{sec}.{key} must be positive and finite, got {x}"));
                None
            }
            None => None,
        }
    }

    fn float_list(&mut self, sec: &str, key: &str, v: &Value) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.err(format!("{sec}.{key} must be an array of numbers"));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(x) => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                _ => {
                    self.err(format!("{sec}.{key} must be an array of numbers"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn table_path(&mut self, sec: &str, key: &str, t: Option<&Table>) -> Option<PathBuf> {
        let raw = self.string(sec, t, key, true)?;
        let path = self.base_dir.join(raw);
        if !path.is_file() {
            self.err(format!("{sec}.{key}: file {} does not exist", path.display()));
            return None;
        }
        Some(path)
    }

    fn model(&mut self, t: Option<&Table>) -> Option<ModelConfig> {
        const S: &str = "model";
        self.unknown_keys(
            S,
            t,
            &[
                "preset",
                "eta",
                "delta",
                "window",
                "endpoint_policy",
                "spatial_kernel",
                "spatial_table",
                "temporal_kernel",
                "temporal_table",
                "component",
            ],
        );
        let preset = self.string(S, t, "preset", false);
        let components = t.and_then(|t| t.get("component"));
        let source = match (preset, components) {
            (Some(_), Some(_)) => {
                self.err("model.preset and model.component are mutually exclusive".into());
                None
            }
            (Some(p), None) if PRESETS.contains(&p.as_str()) => Some(ModelSource::Preset(p)),
            (Some(p), None) => {
                self.err(format!(
                    "model.preset: unknown preset \"{p}\" (known: {})",
                    PRESETS.join(", ")
                ));
                None
            }
            (None, Some(v)) => self.components(v).map(ModelSource::Explicit),
            (None, None) => {
                self.err("model.preset is required (or give [[model.component]] entries)".into());
                None
            }
        };
        let eta = self.float(S, t, "eta", true);
        let eta = self.positive(S, "eta", eta);
        let delta = self.float(S, t, "delta", true);
        let delta = self.positive(S, "delta", delta);

        let spatial = match self.string(S, t, "spatial_kernel", false).as_deref() {
            None | Some("poly_bump") => Some(SpatialKernelConfig::PolyBump),
            Some("uniform") => Some(SpatialKernelConfig::Uniform),
            Some("tabulated") => self
                .table_path(S, "spatial_table", t)
                .map(SpatialKernelConfig::Tabulated),
            Some(other) => {
                self.err(format!(
                    "model.spatial_kernel: unknown family \"{other}\" (poly_bump, uniform, tabulated)"
                ));
                None
            }
        };
        let temporal = match self.string(S, t, "temporal_kernel", false).as_deref() {
            None | Some("poly_decay") => Some(TemporalKernelConfig::PolyDecay),
            Some("tabulated") => self
                .table_path(S, "temporal_table", t)
                .map(TemporalKernelConfig::Tabulated),
            Some(other) => {
                self.err(format!(
                    "model.temporal_kernel: unknown family \"{other}\" (poly_decay, tabulated)"
                ));
                None
            }
        };
        let window = match self.string(S, t, "window", false) {
            None => Some(None),
            Some(w) => match Window::from_name(&w) {
                Some(w) => Some(Some(w)),
                None => {
                    self.err(format!(
                        "model.window must be \"upstream\" or \"downstream\", got \"{w}\""
                    ));
                    None
                }
            },
        };
        let endpoint_policy = match self.string(S, t, "endpoint_policy", false).as_deref() {
            None => Some(None),
            Some("enforce") => Some(Some(EndpointPolicy::Enforce)),
            Some("warn") => Some(Some(EndpointPolicy::Warn)),
            Some(other) => {
                self.err(format!(
                    "model.endpoint_policy must be \"enforce\" or \"warn\", got \"{other}\""
                ));
                None
            }
        };
        Some(ModelConfig {
            source: source?,
            eta: eta?,
            delta: delta?,
            spatial: spatial?,
            temporal: temporal?,
            window: window?,
            endpoint_policy: endpoint_policy?,
        })
    }

    fn components(&mut self, v: &Value) -> Option<Vec<ComponentConfig>> {
        let Some(items) = v.as_array().filter(|a| !a.is_empty()) else {
            self.err("model.component must be a non-empty array of tables".into());
            return None;
        };
        let mut out = Vec::new();
        let mut ok = true;
        for (k, item) in items.iter().enumerate() {
            let sec = format!("model.component[{k}]");
            let Some(t) = item.as_table() else {
                self.err(format!("{sec} must be a table"));
                ok = false;
                continue;
            };
            self.unknown_keys(&sec, Some(t), &["flux", "velocity", "speed", "initial"]);
            let flux = self.string(&sec, Some(t), "flux", true);
            if let Some(f) = &flux {
                if FluxFn::from_name(f).is_none() {
                    self.err(format!("{sec}.flux: unknown flux \"{f}\" (identity, logistic)"));
                    ok = false;
                }
            }
            let velocity = self.string(&sec, Some(t), "velocity", true);
            let speed = self.float(&sec, Some(t), "speed", false);
            match velocity.as_deref() {
                Some("constant") if speed.is_none() => {
                    self.err(format!("{sec}.speed is required for a constant velocity"));
                    ok = false;
                }
                Some("constant") => {}
                Some(v) if VelocityFn::from_name(v).is_none() => {
                    self.err(format!(
                        "{sec}.velocity: unknown velocity \"{v}\" (constant, one_minus_sum, one_minus_sum_cubed, kk_cubic)"
                    ));
                    ok = false;
                }
                Some(_) if speed.is_some() => {
                    self.err(format!("{sec}.speed only applies to a constant velocity"));
                    ok = false;
                }
                _ => {}
            }
            let initial = match t.get("initial") {
                None => {
                    self.err(format!("{sec}.initial is required"));
                    None
                }
                Some(v) => self.steps(&sec, v),
            };
            match (flux, velocity, initial) {
                (Some(flux), Some(velocity), Some(initial)) => out.push(ComponentConfig {
                    flux,
                    velocity,
                    speed,
                    initial,
                }),
                _ => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn steps(&mut self, sec: &str, v: &Value) -> Option<Vec<Step>> {
        let bad = |r: &mut Self| {
            r.err(format!("{sec}.initial must be an array of [from, to, value] triples"));
            None
        };
        let Some(items) = v.as_array() else { return bad(self) };
        let mut out = Vec::new();
        for item in items {
            let triple = self.float_list(sec, "initial", item)?;
            let [from, to, value] = triple[..] else {
                return bad(self);
            };
            if !(from < to) {
                self.err(format!("{sec}.initial: step [{from}, {to}] must have from < to"));
                return None;
            }
            out.push(Step { from, to, value });
        }
        Some(out)
    }

    fn grid(&mut self, t: Option<&Table>) -> Option<GridConfig> {
        const S: &str = "grid";
        self.unknown_keys(S, t, &["x_min", "x_max", "dx", "t_final"]);
        let x_min = self.float(S, t, "x_min", true);
        let x_max = self.float(S, t, "x_max", true);
        let dx = self.float(S, t, "dx", true);
        let dx = self.positive(S, "dx", dx);
        let t_final = self.float(S, t, "t_final", true);
        if let (Some(a), Some(b)) = (x_min, x_max) {
            if !(a < b) {
                self.err(format!("grid.x_max must exceed grid.x_min, got [{a}, {b}]"));
                return None;
            }
        }
        if let Some(tf) = t_final {
            if !(tf >= 0.0 && tf.is_finite()) {
                self.err(format!("grid.t_final must be non-negative, got {tf}"));
                return None;
            }
        }
        Some(GridConfig {
            x_min: x_min?,
            x_max: x_max?,
            dx: dx?,
            t_final: t_final?,
        })
    }

    fn scheme(&mut self, t: Option<&Table>, grid: Option<&GridConfig>) -> Option<SchemeConfig> {
        const S: &str = "scheme";
        self.unknown_keys(S, t, &["beta", "lambda", "record_times"]);
        let beta = self.float(S, t, "beta", true);
        let beta = match beta {
            Some(b) if b > 0.0 && b < 2.0 / 3.0 => Some(b),
            Some(_) => {
                self.err("scheme.beta must lie in (0, 2/3)".into());
                None
            }
            None => None,
        };
        let lambda = match t.and_then(|t| t.get("lambda")) {
            None => Some(None),
            Some(_) => {
                let l = self.float(S, t, "lambda", false);
                self.positive(S, "lambda", l).map(Some)
            }
        };
        let record_times = match t.and_then(|t| t.get("record_times")) {
            None => Some(Vec::new()),
            Some(v) => self.float_list(S, "record_times", v),
        };
        if let (Some(times), Some(g)) = (&record_times, grid) {
            if let Some(bad) = times.iter().find(|&&x| !(x >= 0.0 && x <= g.t_final)) {
                self.err(format!("scheme.record_times: {bad} lies outside [0, grid.t_final]"));
                return None;
            }
        }
        Some(SchemeConfig {
            beta: beta?,
            lambda: lambda?,
            record_times: record_times?,
        })
    }

    fn study(&mut self, t: &Table) -> Option<StudyConfig> {
        const S: &str = "study";
        let t = Some(t);
        self.unknown_keys(S, t, &["kind", "delta0", "dx0", "halvings", "ratio", "dx_fine"]);
        let halvings = self.int(S, t, "halvings", true);
        let halvings = match halvings {
            Some(h) if h >= 0 => Some(h as usize),
            Some(h) => {
                self.err(format!("study.halvings must be non-negative, got {h}"));
                None
            }
            None => None,
        };
        match self.string(S, t, "kind", true).as_deref() {
            Some("delta") => {
                let d = self.float(S, t, "delta0", true);
                let delta0 = self.positive(S, "delta0", d);
                Some(StudyConfig::Delta {
                    delta0: delta0?,
                    halvings: halvings?,
                })
            }
            Some("mesh") => {
                let d = self.float(S, t, "dx0", true);
                let dx0 = self.positive(S, "dx0", d);
                let r = self.float(S, t, "ratio", true);
                let ratio = self.positive(S, "ratio", r);
                let f = self.float(S, t, "dx_fine", true);
                let dx_fine = self.positive(S, "dx_fine", f);
                Some(StudyConfig::Mesh {
                    dx0: dx0?,
                    halvings: halvings?,
                    ratio: ratio?,
                    dx_fine: dx_fine?,
                })
            }
            Some(other) => {
                self.err(format!("study.kind must be \"delta\" or \"mesh\", got \"{other}\""));
                None
            }
            None => None,
        }
    }

    fn output(&mut self, t: Option<&Table>) -> Option<OutputConfig> {
        const S: &str = "output";
        self.unknown_keys(S, t, &["directory", "precision"]);
        let directory = self
            .string(S, t, "directory", false)
            .map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), PathBuf::from);
        let precision = match self.int(S, t, "precision", false) {
            None if t.is_some_and(|t| t.contains_key("precision")) => return None,
            None => DEFAULT_PRECISION,
            Some(p) if (1..=17).contains(&p) => p as usize,
            Some(p) => {
                self.err(format!("output.precision must lie in 1..=17, got {p}"));
                return None;
            }
        };
        Some(OutputConfig { directory, precision })
    }
}

fn read_table_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok());
        match (parse(0), parse(1)) {
            (Some(x), Some(y)) => points.push((x, y)),
            // A header row is allowed on the first line only.
            _ if line == 0 => {}
            _ => {
                return Err(Error::Config(vec![format!(
                    "{}: line {} is not a pair of numbers",
                    path.display(),
                    line + 1
                )]))
            }
        }
    }
    Ok(points)
}

impl RunConfig {
    /// Semantic checks delegated to the owning modules: grid layout, kernel
    /// normalisation, model hypotheses and the CFL bound.
    fn check_semantics(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let Err(e) = self.grid_spec() {
            errors.push(format!("grid: {e}"));
        }
        match self.model_spec() {
            Err(e) => errors.push(format!("model: {e}")),
            Ok(model) => match validate_model(&model) {
                Err(e) => errors.push(format!("model: {e}")),
                Ok(report) => {
                    let c = report.constants;
                    if let Err(e) = cfl_time_grid(
                        self.grid.dx,
                        self.grid.t_final,
                        self.scheme.beta,
                        c.max_lip_f(),
                        c.max_nu_sup(),
                        self.scheme.lambda,
                    ) {
                        errors.push(format!("scheme.lambda: {e}"));
                    }
                }
            },
        }
        if let Some(StudyConfig::Mesh { dx0, dx_fine, .. }) = self.study {
            if GridSpec::new(self.grid.x_min, self.grid.x_max, dx_fine).is_err()
                || GridSpec::new(self.grid.x_min, self.grid.x_max, dx0).is_err()
            {
                errors.push("study: dx0 and dx_fine must both divide the domain".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.x_min, self.grid.x_max, self.grid.dx)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let mut spec = match &m.source {
            ModelSource::Preset(name) => match name.as_str() {
                "keyfitz_kranzer" => keyfitz_kranzer_preset(m.eta, m.delta)?,
                other => return Err(Error::Config(vec![format!("model.preset: unknown preset \"{other}\"")])),
            },
            ModelSource::Explicit(components) => {
                let spatial = normalize_spatial(match &m.spatial {
                    SpatialKernelConfig::PolyBump => SpatialFamily::PolyBump { eta: m.eta },
                    SpatialKernelConfig::Uniform => SpatialFamily::Uniform { width: m.eta },
                    SpatialKernelConfig::Tabulated(p) => SpatialFamily::Tabulated(read_table_points(p)?),
                })?;
                let temporal = normalize_temporal(match &m.temporal {
                    TemporalKernelConfig::PolyDecay => TemporalFamily::PolyDecay,
                    TemporalKernelConfig::Tabulated(p) => TemporalFamily::Tabulated(read_table_points(p)?),
                })?
                .scaled(m.delta)?;
                let comps = components
                    .iter()
                    .map(|c| Component {
                        flux: FluxFn::from_name(&c.flux).expect("validated flux name"),
                        velocity: match c.speed {
                            Some(v) => VelocityFn::Constant(v),
                            None => VelocityFn::from_name(&c.velocity).expect("validated velocity name"),
                        },
                        initial: InitialData::Steps(c.initial.clone()),
                    })
                    .collect::<Vec<_>>();
                let kernels = KernelMatrix::shared(comps.len(), KernelPair { spatial, temporal })?;
                ModelSpec::new("custom", comps, kernels)?
            }
        };
        if let Some(w) = m.window {
            spec.kernels = spec.kernels.with_window(w);
        }
        if let Some(p) = m.endpoint_policy {
            spec = spec.with_endpoint_policy(p);
        }
        Ok(spec)
    }

    /// Grid, time grid and scheme parameters for a single run of `model`.
    pub fn discretization(&self, model: &ModelSpec) -> Result<(GridSpec, TimeGrid, SchemeParams)> {
        let grid = self.grid_spec()?;
        let c = validate_model(model)?.constants;
        let time = cfl_time_grid(
            grid.dx,
            self.grid.t_final,
            self.scheme.beta,
            c.max_lip_f(),
            c.max_nu_sup(),
            self.scheme.lambda,
        )?;
        let params = SchemeParams::for_time_grid(self.scheme.beta, &time)?;
        Ok((grid, time, params))
    }

    /// Mesh-study parameters, if the study section asks for one.
    pub fn mesh_study(&self) -> Option<MeshStudy> {
        match self.study? {
            StudyConfig::Mesh {
                dx0,
                halvings,
                ratio,
                dx_fine,
            } => Some(MeshStudy {
                x_min: self.grid.x_min,
                x_max: self.grid.x_max,
                t_final: self.grid.t_final,
                beta: self.scheme.beta,
                lambda: self.scheme.lambda,
                dx0,
                n_halvings: halvings,
                ratio,
                dx_fine,
            }),
            StudyConfig::Delta { .. } => None,
        }
    }

    /// Canonical TOML; parsing it reproduces `self`.
    pub fn to_toml_string(&self) -> String {
        let mut root = Table::new();

        let m = &self.model;
        let mut model = Table::new();
        match &m.source {
            ModelSource::Preset(p) => {
                model.insert("preset".into(), p.clone().into());
            }
            ModelSource::Explicit(components) => {
                let list = components
                    .iter()
                    .map(|c| {
                        let mut t = Table::new();
                        t.insert("flux".into(), c.flux.clone().into());
                        t.insert("velocity".into(), c.velocity.clone().into());
                        if let Some(s) = c.speed {
                            t.insert("speed".into(), s.into());
                        }
                        let steps = c
                            .initial
                            .iter()
                            .map(|s| Value::Array(vec![s.from.into(), s.to.into(), s.value.into()]))
                            .collect();
                        t.insert("initial".into(), Value::Array(steps));
                        Value::Table(t)
                    })
                    .collect();
                model.insert("component".into(), Value::Array(list));
            }
        }
        model.insert("eta".into(), m.eta.into());
        model.insert("delta".into(), m.delta.into());
        match &m.spatial {
            SpatialKernelConfig::PolyBump => {
                model.insert("spatial_kernel".into(), "poly_bump".into());
            }
            SpatialKernelConfig::Uniform => {
                model.insert("spatial_kernel".into(), "uniform".into());
            }
            SpatialKernelConfig::Tabulated(p) => {
                model.insert("spatial_kernel".into(), "tabulated".into());
                model.insert("spatial_table".into(), p.display().to_string().into());
            }
        }
        match &m.temporal {
            TemporalKernelConfig::PolyDecay => {
                model.insert("temporal_kernel".into(), "poly_decay".into());
            }
            TemporalKernelConfig::Tabulated(p) => {
                model.insert("temporal_kernel".into(), "tabulated".into());
                model.insert("temporal_table".into(), p.display().to_string().into());
            }
        }
        if let Some(w) = m.window {
            model.insert("window".into(), w.name().into());
        }
        if let Some(p) = m.endpoint_policy {
            let name = match p {
                EndpointPolicy::Enforce => "enforce",
                EndpointPolicy::Warn => "warn",
            };
            model.insert("endpoint_policy".into(), name.into());
        }
        root.insert("model".into(), Value::Table(model));

        let g = &self.grid;
        let mut grid = Table::new();
        grid.insert("x_min".into(), g.x_min.into());
        grid.insert("x_max".into(), g.x_max.into());
        grid.insert("dx".into(), g.dx.into());
        grid.insert("t_final".into(), g.t_final.into());
        root.insert("grid".into(), Value::Table(grid));

        let s = &self.scheme;
        let mut scheme = Table::new();
        scheme.insert("beta".into(), s.beta.into());
        if let Some(l) = s.lambda {
            scheme.insert("lambda".into(), l.into());
        }
        scheme.insert(
            "record_times".into(),
            Value::Array(s.record_times.iter().map(|&t| t.into()).collect()),
        );
        root.insert("scheme".into(), Value::Table(scheme));

        if let Some(study) = self.study {
            let mut t = Table::new();
            match study {
                StudyConfig::Delta { delta0, halvings } => {
                    t.insert("kind".into(), "delta".into());
                    t.insert("delta0".into(), delta0.into());
                    t.insert("halvings".into(), (halvings as i64).into());
                }
                StudyConfig::Mesh {
                    dx0,
                    halvings,
                    ratio,
                    dx_fine,
                } => {
                    t.insert("kind".into(), "mesh".into());
                    t.insert("dx0".into(), dx0.into());
                    t.insert("halvings".into(), (halvings as i64).into());
                    t.insert("ratio".into(), ratio.into());
                    t.insert("dx_fine".into(), dx_fine.into());
                }
            }
            root.insert("study".into(), Value::Table(t));
        }

        let mut output = Table::new();
        output.insert("directory".into(), self.output.directory.display().to_string().into());
        output.insert("precision".into(), (self.output.precision as i64).into());
        root.insert("output".into(), Value::Table(output));

        toml::to_string(&root).expect("plain TOML table serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REPRO: &str = r#"
[model]
preset = "keyfitz_kranzer"
eta = 0.25
delta = 0.0125

[grid]
x_min = -5
x_max = 5
dx = 0.00625
t_final = 0.5

[scheme]
beta = 0.3333
lambda = 0.1286
record_times = [0, 0.017, 0.33, 0.5]
"#;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("."))
    }

    fn errors(text: &str) -> Vec<String> {
        match parse(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn reproduction_config_is_valid() {
        let c = parse(REPRO).unwrap();
        assert_eq!(c.model.source, ModelSource::Preset("keyfitz_kranzer".into()));
        assert_eq!(c.grid.x_min, -5.0);
        assert_eq!(c.scheme.lambda, Some(0.1286));
        assert_eq!(c.scheme.record_times.len(), 4);
        assert_eq!(c.output, OutputConfig::default());
        let model = c.model_spec().unwrap();
        assert_eq!(model.kernels.window(), Window::Downstream);
        let (grid, time, _) = c.discretization(&model).unwrap();
        assert_eq!(grid.cells(), 1600);
        assert_eq!(time.n_steps, 623);
    }

    #[test]
    fn beta_out_of_range() {
        let e = errors(&REPRO.replace("beta = 0.3333", "beta = 0.7"));
        assert_eq!(e, vec!["scheme.beta must lie in (0, 2/3)".to_string()]);
    }

    #[test]
    fn empty_file_lists_every_missing_key() {
        let e = errors("");
        for key in [
            "model.preset",
            "model.eta",
            "model.delta",
            "grid.x_min",
            "grid.x_max",
            "grid.dx",
            "grid.t_final",
            "scheme.beta",
        ] {
            assert!(e.iter().any(|m| m.starts_with(key)), "{key} missing from {e:?}");
        }
        assert_eq!(e.len(), 8, "{e:?}");
    }

    #[test]
    fn type_mismatches_and_ranges_are_all_reported() {
        let text = REPRO
            .replace("dx = 0.00625", "dx = \"fine\"")
            .replace("eta = 0.25", "eta = -1")
            .replace("lambda = 0.1286", "lambda = 0.1286\nbogus = 1");
        let e = errors(&text);
        assert!(e.iter().any(|m| m == "grid.dx must be a number, found string"), "{e:?}");
        assert!(e.iter().any(|m| m.starts_with("model.eta must be positive")), "{e:?}");
        assert!(e.iter().any(|m| m == "scheme.bogus is not a recognised key"), "{e:?}");
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn cfl_violation_is_reported_against_lambda() {
        let e = errors(&REPRO.replace("lambda = 0.1286", "lambda = 0.5"));
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("scheme.lambda: CFL condition violated"), "{e:?}");
    }

    #[test]
    fn record_times_must_lie_in_run() {
        let e = errors(&REPRO.replace("0.33, 0.5]", "0.33, 0.6]"));
        assert!(e[0].starts_with("scheme.record_times"), "{e:?}");
    }

    #[test]
    fn explicit_model_round_trip() {
        let text = r#"
[model]
eta = 0.5
delta = 0.1
spatial_kernel = "uniform"
window = "upstream"
endpoint_policy = "warn"

[[model.component]]
flux = "logistic"
velocity = "one_minus_sum"
initial = [[-1, 0, 0.5], [0, 1, 0.25]]

[[model.component]]
flux = "identity"
velocity = "constant"
speed = 0.5
initial = [[-0.5, 0.5, 1]]

[grid]
x_min = -2
x_max = 2
dx = 0.05
t_final = 0.25

[scheme]
beta = 0.3333

[study]
kind = "mesh"
dx0 = 0.1
halvings = 2
ratio = 4
dx_fine = 0.0125

[output]
directory = "results"
precision = 10
"#;
        let c = parse(text).unwrap();
        let again = parse(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
        let model = c.model_spec().unwrap();
        assert_eq!(model.n(), 2);
        assert_eq!(model.kernels.window(), Window::Upstream);
        let mesh = c.mesh_study().unwrap();
        assert_eq!(mesh.n_halvings, 2);

        let repro = parse(REPRO).unwrap();
        assert_eq!(parse(&repro.to_toml_string()).unwrap(), repro);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let e = errors(&REPRO.replace("keyfitz_kranzer", "lwr"));
        assert!(e[0].starts_with("model.preset: unknown preset"), "{e:?}");
        let e = errors(&format!("{REPRO}\n[study]\nkind = \"space\"\nhalvings = 1\n"));
        assert!(e.iter().any(|m| m.starts_with("study.kind")), "{e:?}");
    }

    #[test]
    fn missing_table_file_is_reported() {
        let text = REPRO.replace(
            "preset = \"keyfitz_kranzer\"",
            "spatial_kernel = \"tabulated\"\nspatial_table = \"nope.csv\"\n[[model.component]]\nflux = \"logistic\"\nvelocity = \"one_minus_sum\"\ninitial = []",
        );
        let e = errors(&text);
        assert!(e.iter().any(|m| m.starts_with("model.spatial_table: file")), "{e:?}");
    }

    #[test]
    fn tabulated_kernel_from_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("mu.csv"), "x,value\n0,2\n0.5,2\n").unwrap();
        let text = REPRO.replace(
            "preset = \"keyfitz_kranzer\"",
            "spatial_kernel = \"tabulated\"\nspatial_table = \"mu.csv\"",
        )
            + "[[model.component]]\nflux = \"logistic\"\nvelocity = \"one_minus_sum\"\ninitial = [[-1, 1, 0.5]]\n";
        let c = parse_config_str(&text.replace("lambda = 0.1286", "lambda = 0.1"), dir.path()).unwrap();
        let model = c.model_spec().unwrap();
        assert!((model.kernels.pairs()[0].spatial.integral() - 1.0).abs() < 1e-10);
    }
}
