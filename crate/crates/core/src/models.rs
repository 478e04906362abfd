//! Problem definitions: per-component flux and velocity maps, the kernel
//! matrix and the initial data, plus validation of the structural
//! hypotheses the scheme relies on.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::InitialData;
use crate::kernels::{KernelMatrix, KernelPair, SpatialKernel, TemporalKernel, Window};

/// User velocity `ν(a_1, …, a_n)`.
pub type VelocityClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Samples used when certifying constants on `[0, 1]^N`.
const VALIDATION_SAMPLES: usize = 10_000;

/// Scalar flux `f^k`.
#[derive(Clone)]
pub enum FluxFn {
    Identity,
    /// `u (1 - u)`.
    Logistic,
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for FluxFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FluxFn {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(FluxFn::Identity),
            "logistic" => Some(FluxFn::Logistic),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            FluxFn::Identity => "identity",
            FluxFn::Logistic => "logistic",
            FluxFn::Custom { name, .. } => name,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            FluxFn::Identity => u,
            FluxFn::Logistic => u * (1.0 - u),
            FluxFn::Custom { f, .. } => f(u),
        }
    }

    /// Analytic Lipschitz constant on `[0, 1]` where known.
    fn certified_lipschitz(&self) -> Option<f64> {
        match self {
            FluxFn::Identity | FluxFn::Logistic => Some(1.0),
            FluxFn::Custom { .. } => None,
        }
    }
}

/// Velocity `ν^k : R^N → R` evaluated at the vector `(c^{s,k})_s`.
#[derive(Clone)]
pub enum VelocityFn {
    Constant(f64),
    /// `1 - Σ_s a_s`.
    OneMinusSum,
    /// `(1 - Σ_s a_s)^3`.
    OneMinusSumCubed,
    /// `(1 - Σ_s a_s^2)^3`, the Keyfitz–Kranzer velocity.
    KeyfitzKranzer,
    Custom {
        name: String,
        f: VelocityClosure,
    },
}

impl fmt::Debug for VelocityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityFn::Constant(v) => write!(f, "constant({v})"),
            other => f.write_str(other.name()),
        }
    }
}

impl VelocityFn {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "one_minus_sum" => Some(VelocityFn::OneMinusSum),
            "one_minus_sum_cubed" => Some(VelocityFn::OneMinusSumCubed),
            "kk_cubic" | "keyfitz_kranzer" => Some(VelocityFn::KeyfitzKranzer),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            VelocityFn::Constant(_) => "constant",
            VelocityFn::OneMinusSum => "one_minus_sum",
            VelocityFn::OneMinusSumCubed => "one_minus_sum_cubed",
            VelocityFn::KeyfitzKranzer => "kk_cubic",
            VelocityFn::Custom { name, .. } => name,
        }
    }

    #[inline]
    pub fn eval(&self, c: &[f64]) -> f64 {
        match self {
            VelocityFn::Constant(v) => *v,
            VelocityFn::OneMinusSum => 1.0 - c.iter().sum::<f64>(),
            VelocityFn::OneMinusSumCubed => (1.0 - c.iter().sum::<f64>()).powi(3),
            VelocityFn::KeyfitzKranzer => (1.0 - c.iter().map(|a| a * a).sum::<f64>()).powi(3),
            VelocityFn::Custom { f, .. } => f(c),
        }
    }

    /// Analytic `sup |ν|` on `[0, 1]^N` where known.
    fn certified_sup(&self, n: usize) -> Option<f64> {
        match self {
            VelocityFn::Constant(v) => Some(v.abs()),
            VelocityFn::OneMinusSum => Some(1.0_f64.max(n as f64 - 1.0)),
            VelocityFn::OneMinusSumCubed => Some(1.0_f64.max((n as f64 - 1.0).powi(3))),
            VelocityFn::KeyfitzKranzer => Some(1.0_f64.max((n as f64 - 1.0).powi(3))),
            VelocityFn::Custom { .. } => None,
        }
    }
}

/// What to do when `f(0) = 0 = f(1)` fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointPolicy {
    /// Validation fails.
    Enforce,
    /// Validation records a warning; the invariant-region monitor is the
    /// runtime safeguard.
    Warn,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub flux: FluxFn,
    pub velocity: VelocityFn,
    pub initial: InitialData,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub components: Vec<Component>,
    pub kernels: KernelMatrix,
    pub endpoint_policy: EndpointPolicy,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, components: Vec<Component>, kernels: KernelMatrix) -> Result<Self> {
        if components.len() != kernels.n() {
            return Err(Error::Shape(format!(
                "{} components but a {}x{} kernel matrix",
                components.len(),
                kernels.n(),
                kernels.n()
            )));
        }
        Ok(Self {
            name: name.into(),
            components,
            kernels,
            endpoint_policy: EndpointPolicy::Enforce,
        })
    }

    pub fn with_endpoint_policy(mut self, policy: EndpointPolicy) -> Self {
        self.endpoint_policy = policy;
        self
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn initial_data(&self) -> Vec<InitialData> {
        self.components.iter().map(|c| c.initial.clone()).collect()
    }

    /// Same model with every temporal kernel rescaled to radius `delta`.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Ok(Self {
            kernels: self.kernels.with_delta(delta)?,
            ..self.clone()
        })
    }
}

/// Nonlocal Keyfitz–Kranzer system: `N = 2`, `f(u) = u`,
/// `ν(a, b) = (1 - a² - b²)³`, one shared kernel `μ Γ_δ` for all entries, and
/// data `0.25·1_(-2,2)`, `1_(-2,2)`.
pub fn keyfitz_kranzer_preset(eta: f64, delta: f64) -> Result<ModelSpec> {
    let pair = KernelPair {
        spatial: SpatialKernel::poly_bump(eta)?,
        temporal: TemporalKernel::poly_decay().scaled(delta)?,
    };
    let component = |level: f64| Component {
        flux: FluxFn::Identity,
        velocity: VelocityFn::KeyfitzKranzer,
        initial: InitialData::indicator(-2.0, 2.0, level),
    };
    // f(u) = u violates f(1) = 0; the reference experiment uses it anyway.
    // With an upstream window the left edge of the block compresses without
    // bound and the run blows up; the look-ahead window keeps U in [0, 1].
    Ok(ModelSpec::new(
        "keyfitz_kranzer",
        vec![component(0.25), component(1.0)],
        KernelMatrix::shared(2, pair)?.with_window(Window::Downstream),
    )?
    .with_endpoint_policy(EndpointPolicy::Warn))
}

/// Constants certified by [`validate_model`], indexed by component.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConstants {
    /// `|f^k|_Lip` on `[0, 1]`.
    pub lip_f: Vec<f64>,
    /// `sup |ν^k|` on `[0, 1]^N`.
    pub nu_sup: Vec<f64>,
    /// `Σ_s sup |∂_s ν^k|`.
    pub grad_nu: Vec<f64>,
    /// `Σ_{s,r} sup |∂_s ∂_r ν^k|`, a Lipschitz bound for `∇ν^k`.
    pub lip_grad_nu: Vec<f64>,
    /// `|ν^k|_Lip` in the 1-norm, equal to `max_s sup |∂_s ν^k|`.
    pub lip_nu: Vec<f64>,
    /// `max_{s,r} sup |∂_s ∂_r ν^k|`.
    pub hess_nu: Vec<f64>,
}

impl ModelConstants {
    pub fn max_lip_f(&self) -> f64 {
        self.lip_f.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_nu_sup(&self) -> f64 {
        self.nu_sup.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub hypothesis: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub constants: ModelConstants,
    pub warnings: Vec<Warning>,
}

/// Checks the flux endpoint condition, certifies the Lipschitz and sup
/// bounds by sampling `[0, 1]^N`, and checks kernel normalization.
pub fn validate_model(spec: &ModelSpec) -> Result<ValidationReport> {
    let n = spec.n();
    let mut warnings = Vec::new();
    let mut constants = ModelConstants {
        lip_f: Vec::with_capacity(n),
        nu_sup: Vec::with_capacity(n),
        grad_nu: Vec::with_capacity(n),
        lip_grad_nu: Vec::with_capacity(n),
        lip_nu: Vec::with_capacity(n),
        hess_nu: Vec::with_capacity(n),
    };

    for (k, comp) in spec.components.iter().enumerate() {
        let (f0, f1) = (comp.flux.eval(0.0), comp.flux.eval(1.0));
        if f0.abs() > 1e-12 || f1.abs() > 1e-12 {
            let detail = format!(
                "component {}: flux '{}' has f(0) = {f0}, f(1) = {f1}; need f(0) = 0 = f(1)",
                k + 1,
                comp.flux.name()
            );
            match spec.endpoint_policy {
                EndpointPolicy::Enforce => {
                    return Err(Error::Hypothesis {
                        hypothesis: "H1",
                        detail,
                    })
                }
                EndpointPolicy::Warn => warnings.push(Warning {
                    hypothesis: "H1",
                    detail,
                }),
            }
        }
        let sampled_lip = sampled_flux_lipschitz(&comp.flux)?;
        constants.lip_f.push(
            comp.flux
                .certified_lipschitz()
                .map_or(sampled_lip, |c| c.max(sampled_lip)),
        );

        let bounds = sample_velocity(&comp.velocity, n).map_err(|detail| Error::Hypothesis {
            hypothesis: "H2",
            detail: format!("component {}: {detail}", k + 1),
        })?;
        constants
            .nu_sup
            .push(comp.velocity.certified_sup(n).map_or(bounds.sup, |c| c.max(bounds.sup)));
        constants.grad_nu.push(bounds.grad.iter().sum());
        constants.lip_nu.push(bounds.grad.iter().copied().fold(0.0, f64::max));
        constants.lip_grad_nu.push(bounds.hess.iter().sum());
        constants.hess_nu.push(bounds.hess.iter().copied().fold(0.0, f64::max));

        if let Some(mass) = comp.initial.mass() {
            if !mass.is_finite() {
                return Err(Error::Hypothesis {
                    hypothesis: "L1 data",
                    detail: format!("component {} has infinite mass", k + 1),
                });
            }
        }
        if let InitialData::Steps(steps) = &comp.initial {
            let mut cuts: Vec<f64> = steps.iter().flat_map(|s| [s.from, s.to]).collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in cuts.windows(2) {
                let v = comp.initial.value(0.5 * (w[0] + w[1]));
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InitialRange {
                        component: k,
                        value: v,
                        x: 0.5 * (w[0] + w[1]),
                    });
                }
            }
        }
    }

    for (idx, pair) in spec.kernels.pairs().iter().enumerate() {
        let mu = pair.spatial.integral();
        let gamma = pair.temporal.integral();
        if (mu - 1.0).abs() > 1e-10 || (gamma - 1.0).abs() > 1e-10 {
            return Err(Error::Hypothesis {
                hypothesis: "H3",
                detail: format!("kernel pair {idx}: ∫μ = {mu}, ∫Γ_δ = {gamma}, both must be 1"),
            });
        }
    }

    Ok(ValidationReport { constants, warnings })
}

fn sampled_flux_lipschitz(flux: &FluxFn) -> Result<f64> {
    let h = 1.0 / VALIDATION_SAMPLES as f64;
    let mut prev = flux.eval(0.0);
    let mut lip: f64 = 0.0;
    for s in 1..=VALIDATION_SAMPLES {
        let v = flux.eval(s as f64 * h);
        if !v.is_finite() {
            return Err(Error::Hypothesis {
                hypothesis: "H1",
                detail: format!("flux '{}' is not finite at u = {}", flux.name(), s as f64 * h),
            });
        }
        lip = lip.max((v - prev).abs() / h);
        prev = v;
    }
    Ok(lip)
}

struct VelocityBounds {
    sup: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Tensor grid over `[0, 1]^n` with about [`VALIDATION_SAMPLES`] points;
/// derivatives by central differences.
fn sample_velocity(nu: &VelocityFn, n: usize) -> std::result::Result<VelocityBounds, String> {
    let per_dim = ((VALIDATION_SAMPLES as f64).powf(1.0 / n as f64).round() as usize).max(2);
    let total = per_dim.pow(n as u32);
    let h1 = 1e-6;
    let h2 = 1e-4;
    let mut point = vec![0.0; n];
    let mut probe = vec![0.0; n];
    let mut bounds = VelocityBounds {
        sup: 0.0,
        grad: vec![0.0; n],
        hess: vec![0.0; n * n],
    };
    for flat in 0..total {
        let mut rest = flat;
        for p in point.iter_mut() {
            *p = (rest % per_dim) as f64 / (per_dim - 1) as f64;
            rest /= per_dim;
        }
        let v = nu.eval(&point);
        if !v.is_finite() {
            return Err(format!("velocity '{}' is not finite at {point:?}", nu.name()));
        }
        bounds.sup = bounds.sup.max(v.abs());
        for s in 0..n {
            probe.copy_from_slice(&point);
            probe[s] += h1;
            let plus = nu.eval(&probe);
            probe[s] -= 2.0 * h1;
            let minus = nu.eval(&probe);
            bounds.grad[s] = bounds.grad[s].max(((plus - minus) / (2.0 * h1)).abs());
            for r in 0..n {
                let d2 = mixed_second_difference(nu, &point, &mut probe, s, r, h2);
                bounds.hess[s * n + r] = bounds.hess[s * n + r].max(d2.abs());
            }
        }
    }
    Ok(bounds)
}

fn mixed_second_difference(nu: &VelocityFn, point: &[f64], probe: &mut [f64], s: usize, r: usize, h: f64) -> f64 {
    let mut eval = |ds: f64, dr: f64| {
        probe.copy_from_slice(point);
        probe[s] += ds;
        probe[r] += dr;
        nu.eval(probe)
    };
    if s == r {
        (eval(h, 0.0) - 2.0 * eval(0.0, 0.0) + eval(-h, 0.0)) / (h * h)
    } else {
        (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kk_velocity_values() {
        let nu = VelocityFn::KeyfitzKranzer;
        assert_eq!(nu.eval(&[0.0, 0.0]), 1.0);
        assert!(nu.eval(&[0.6, 0.8]).abs() < 1e-15);
    }

    #[test]
    fn kk_preset_validates_with_warning() {
        let spec = keyfitz_kranzer_preset(0.25, 0.0125).unwrap();
        let report = validate_model(&spec).unwrap();
        assert!((report.constants.max_lip_f() - 1.0).abs() < 1e-9);
        assert_eq!(report.constants.max_nu_sup(), 1.0);
        assert_eq!(report.warnings.len(), 2);
        assert_eq!(report.warnings[0].hypothesis, "H1");
        // |∂_a ν| = 6a(1 - a² - b²)² peaks at (1, 1) with value 6.
        assert!((report.constants.grad_nu[0] - 12.0).abs() < 1e-4);
        assert_eq!(
            spec.kernels.entry(0, 0).spatial.amplitude(),
            Some(20.0 / 0.25f64.powi(5))
        );
        assert_eq!(spec.kernels.entry(1, 1).temporal.delta(), 0.0125);
    }

    #[test]
    fn logistic_lwr_model_passes() {
        let kernels = KernelMatrix::shared(
            1,
            KernelPair {
                spatial: SpatialKernel::poly_bump(0.2).unwrap(),
                temporal: TemporalKernel::poly_decay().scaled(0.1).unwrap(),
            },
        )
        .unwrap();
        let spec = ModelSpec::new(
            "lwr",
            vec![Component {
                flux: FluxFn::Logistic,
                velocity: VelocityFn::OneMinusSum,
                initial: InitialData::indicator(0.0, 1.0, 0.5),
            }],
            kernels.clone(),
        )
        .unwrap();
        let report = validate_model(&spec).unwrap();
        assert!(report.warnings.is_empty());
        assert!((report.constants.lip_f[0] - 1.0).abs() < 1e-9);
        assert!((report.constants.grad_nu[0] - 1.0).abs() < 1e-6);

        let bad = ModelSpec::new(
            "linear",
            vec![Component {
                flux: FluxFn::Identity,
                velocity: VelocityFn::OneMinusSum,
                initial: InitialData::indicator(0.0, 1.0, 0.5),
            }],
            kernels,
        )
        .unwrap();
        match validate_model(&bad) {
            Err(Error::Hypothesis { hypothesis, .. }) => assert_eq!(hypothesis, "H1"),
            other => panic!("expected H1 failure, got {other:?}"),
        }
    }

    #[test]
    fn validation_is_idempotent() {
        let spec = keyfitz_kranzer_preset(0.3, 0.05).unwrap();
        assert_eq!(validate_model(&spec).unwrap(), validate_model(&spec).unwrap());
    }

    #[test]
    fn with_delta_rescales_memory() {
        let spec = keyfitz_kranzer_preset(0.25, 0.8).unwrap().with_delta(0.1).unwrap();
        assert_eq!(spec.kernels.entry(0, 1).temporal.delta(), 0.1);
    }
}
