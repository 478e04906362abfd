//! Spatial and temporal convolution kernels and their cell-averaged weights.
//!
//! A space–time kernel is a product `Θ(t, x) = μ(x) Γ_δ(t)` where `μ` is a
//! unit-mass spatial kernel supported on `[0, η)` and `Γ_δ(t) = Γ(t/δ)/δ` is a
//! unit-mass temporal kernel supported on `[0, δ]`. The scheme only ever sees
//! the kernels through their integral averages over grid cells, which are
//! computed here with a quadrature that is exact for the built-in polynomial
//! families.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, gauss_legendre5};

const SIMPSON_TOL: f64 = 1e-12;
const DERIVATIVE_SAMPLES: usize = 100_000;

/// Number of cells of width `h` needed to cover `[0, len)`. Ratios within
/// 1e-9 of an integer are rounded so that e.g. `0.25 / 0.0625` gives 4.
pub(crate) fn cells_covering(len: f64, h: f64) -> usize {
    let ratio = len / h;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        (nearest as usize).max(1)
    } else {
        (ratio.ceil() as usize).max(1)
    }
}

/// Piecewise-linear table on an increasing abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Arc<[f64]>,
    ys: Arc<[f64]>,
}

impl Table {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Kernel("tabulated kernel needs at least two samples".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Kernel(format!(
                    "tabulated abscissae must be strictly increasing (found {} after {})",
                    w[1].0, w[0].0
                )));
            }
        }
        if let Some(&(x, y)) = points.iter().find(|p| p.1 < 0.0 || !p.1.is_finite()) {
            return Err(Error::Kernel(format!(
                "tabulated kernel must be nonnegative and finite, found {y} at {x}"
            )));
        }
        Ok(Self {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
        })
    }

    fn first(&self) -> f64 {
        self.xs[0]
    }

    fn last(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    fn eval(&self, x: f64) -> f64 {
        if x < self.first() || x > self.last() {
            return 0.0;
        }
        let idx = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i,
        };
        let (x0, x1) = (self.xs[idx - 1], self.xs[idx]);
        let (y0, y1) = (self.ys[idx - 1], self.ys[idx]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y * factor).collect(),
        }
    }

    fn integral(&self) -> f64 {
        let f = |x: f64| self.eval(x);
        self.xs
            .windows(2)
            .map(|w| adaptive_simpson(&f, w[0], w[1], SIMPSON_TOL))
            .sum()
    }
}

/// Unnormalized spatial kernel families accepted by [`normalize_spatial`].
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialFamily {
    /// `x (η - x)^3` on `(0, η)`.
    PolyBump { eta: f64 },
    /// Constant on `[0, width)`.
    Uniform { width: f64 },
    /// Linear interpolation of `(x, value)` samples with `x ≥ 0`.
    Tabulated(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
enum SpatialShape {
    PolyBump { eta: f64, amplitude: f64 },
    Uniform { width: f64, amplitude: f64 },
    Tabulated(Table),
}

/// Normalized spatial kernel `μ`, nonnegative and supported on `[0, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel {
    shape: SpatialShape,
}

/// Builds a unit-mass spatial kernel from a raw family descriptor.
pub fn normalize_spatial(family: SpatialFamily) -> Result<SpatialKernel> {
    let shape = match family {
        SpatialFamily::PolyBump { eta } => {
            check_width("eta", eta)?;
            // ∫_0^η x(η-x)^3 dx = η^5 / 20
            let amplitude = 20.0 / eta.powi(5);
            let raw = |x: f64| x * (eta - x).powi(3);
            let quad = adaptive_simpson(&raw, 0.0, eta, 1e-14 * eta.powi(5));
            let analytic = eta.powi(5) / 20.0;
            if ((quad - analytic) / analytic).abs() > 1e-9 {
                return Err(Error::Kernel(format!(
                    "poly_bump normalization cross-check failed: quadrature {quad}, analytic {analytic}"
                )));
            }
            SpatialShape::PolyBump { eta, amplitude }
        }
        SpatialFamily::Uniform { width } => {
            check_width("width", width)?;
            SpatialShape::Uniform {
                width,
                amplitude: 1.0 / width,
            }
        }
        SpatialFamily::Tabulated(points) => {
            let table = Table::new(&points)?;
            if table.first() < 0.0 {
                return Err(Error::Kernel(format!(
                    "spatial kernel support must lie in [0, inf), table starts at {}",
                    table.first()
                )));
            }
            let mass = table.integral();
            if !(mass > 0.0) {
                return Err(Error::Kernel("tabulated spatial kernel has zero mass".into()));
            }
            SpatialShape::Tabulated(table.scaled(1.0 / mass))
        }
    };
    Ok(SpatialKernel { shape })
}

fn check_width(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Kernel(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

impl SpatialKernel {
    /// Shorthand for the normalized `poly_bump` kernel.
    pub fn poly_bump(eta: f64) -> Result<Self> {
        normalize_spatial(SpatialFamily::PolyBump { eta })
    }

    /// Right end `η` of the support `[0, η)`.
    pub fn support(&self) -> f64 {
        match &self.shape {
            SpatialShape::PolyBump { eta, .. } => *eta,
            SpatialShape::Uniform { width, .. } => *width,
            SpatialShape::Tabulated(t) => t.last(),
        }
    }

    /// Normalization constant (`L` for `poly_bump`); `None` for tables.
    pub fn amplitude(&self) -> Option<f64> {
        match &self.shape {
            SpatialShape::PolyBump { amplitude, .. } | SpatialShape::Uniform { amplitude, .. } => Some(*amplitude),
            SpatialShape::Tabulated(_) => None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            SpatialShape::PolyBump { eta, amplitude } => {
                if x > 0.0 && x < *eta {
                    amplitude * x * (eta - x).powi(3)
                } else {
                    0.0
                }
            }
            SpatialShape::Uniform { width, amplitude } => {
                if (0.0..*width).contains(&x) {
                    *amplitude
                } else {
                    0.0
                }
            }
            SpatialShape::Tabulated(t) => t.eval(x),
        }
    }

    /// First derivative on the open support.
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.shape {
            SpatialShape::PolyBump { eta, amplitude } => {
                if x > 0.0 && x < *eta {
                    amplitude * (eta - x).powi(2) * (eta - 4.0 * x)
                } else {
                    0.0
                }
            }
            SpatialShape::Uniform { .. } => 0.0,
            SpatialShape::Tabulated(_) => {
                let h = 1e-6 * self.support();
                (self.value(x + h) - self.value(x - h)) / (2.0 * h)
            }
        }
    }

    /// Second derivative on the open support.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match &self.shape {
            SpatialShape::PolyBump { eta, amplitude } => {
                if x > 0.0 && x < *eta {
                    amplitude * (eta - x) * (12.0 * x - 6.0 * eta)
                } else {
                    0.0
                }
            }
            SpatialShape::Uniform { .. } => 0.0,
            SpatialShape::Tabulated(_) => {
                let h = 1e-4 * self.support();
                (self.value(x + h) - 2.0 * self.value(x) + self.value(x - h)) / (h * h)
            }
        }
    }

    /// `‖μ‖_∞` by dense sampling.
    pub fn sup(&self) -> f64 {
        self.sampled_sup(|x| self.value(x))
    }

    /// `‖μ'‖_∞` by dense sampling over the closed support.
    pub fn derivative_sup(&self) -> f64 {
        self.sampled_sup(|x| self.derivative(x))
    }

    /// `‖μ''‖_∞` by dense sampling over the closed support.
    pub fn second_derivative_sup(&self) -> f64 {
        self.sampled_sup(|x| self.second_derivative(x))
    }

    fn sampled_sup<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let eta = self.support();
        // One-sided limits at the support ends.
        let eps = eta * 1e-12;
        let mut best = f(eps).abs().max(f(eta - eps).abs());
        for s in 0..=DERIVATIVE_SAMPLES {
            let x = eta * s as f64 / DERIVATIVE_SAMPLES as f64;
            best = best.max(f(x).abs());
        }
        best
    }

    /// Numerical `∫ μ`.
    pub fn integral(&self) -> f64 {
        self.integrate(0.0, self.support())
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        let b = b.min(self.support());
        let a = a.max(0.0);
        if b <= a {
            return 0.0;
        }
        match &self.shape {
            SpatialShape::Tabulated(_) => adaptive_simpson(&|x| self.value(x), a, b, SIMPSON_TOL),
            _ => gauss_legendre5(|x| self.value(x), a, b),
        }
    }

    /// Integral averages `w_q = (1/Δx) ∫_{qΔx}^{(q+1)Δx} μ` for all cells
    /// meeting the support.
    pub fn cell_averages(&self, dx: f64) -> Result<Vec<f64>> {
        spatial_cell_averages(self, dx)
    }
}

/// See [`SpatialKernel::cell_averages`].
pub fn spatial_cell_averages(mu: &SpatialKernel, dx: f64) -> Result<Vec<f64>> {
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(Error::Kernel(format!("cell width must be positive, got {dx}")));
    }
    let count = cells_covering(mu.support(), dx);
    Ok((0..count)
        .map(|q| mu.integrate(q as f64 * dx, (q + 1) as f64 * dx) / dx)
        .collect())
}

/// Unnormalized temporal kernel families.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalFamily {
    /// `3 (1 - t)^2` on `(0, 1)`.
    PolyDecay,
    /// Linear interpolation of `(t, value)` samples with support in `[0, 1]`.
    Tabulated(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
enum TemporalShape {
    PolyDecay,
    Tabulated(Table),
}

/// Unit-mass temporal kernel `Γ` supported in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalKernel {
    shape: TemporalShape,
    first_moment: f64,
}

/// Builds a unit-mass temporal kernel with its first moment.
pub fn normalize_temporal(family: TemporalFamily) -> Result<TemporalKernel> {
    match family {
        TemporalFamily::PolyDecay => Ok(TemporalKernel {
            shape: TemporalShape::PolyDecay,
            // ∫_0^1 3t(1-t)^2 dt = 3 B(2, 3) = 1/4
            first_moment: 0.25,
        }),
        TemporalFamily::Tabulated(points) => {
            let table = Table::new(&points)?;
            if table.first() < 0.0 || table.last() > 1.0 {
                return Err(Error::Kernel(format!(
                    "temporal kernel support must lie in [0, 1], table spans [{}, {}]",
                    table.first(),
                    table.last()
                )));
            }
            let mass = table.integral();
            if !(mass > 0.0) {
                return Err(Error::Kernel("tabulated temporal kernel has zero mass".into()));
            }
            let table = table.scaled(1.0 / mass);
            let f = |t: f64| t * table.eval(t);
            let first_moment = table
                .xs
                .windows(2)
                .map(|w| adaptive_simpson(&f, w[0], w[1], SIMPSON_TOL))
                .sum();
            Ok(TemporalKernel {
                shape: TemporalShape::Tabulated(table),
                first_moment,
            })
        }
    }
}

impl TemporalKernel {
    pub fn poly_decay() -> Self {
        normalize_temporal(TemporalFamily::PolyDecay).expect("built-in family")
    }

    /// Right end of the support (≤ 1).
    pub fn support(&self) -> f64 {
        match &self.shape {
            TemporalShape::PolyDecay => 1.0,
            TemporalShape::Tabulated(t) => t.last(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.shape {
            TemporalShape::PolyDecay => {
                if t > 0.0 && t < 1.0 {
                    3.0 * (1.0 - t).powi(2)
                } else {
                    0.0
                }
            }
            TemporalShape::Tabulated(table) => table.eval(t),
        }
    }

    /// `∫ τ Γ(τ) dτ`, the moment bound `C_Γ`.
    pub fn first_moment(&self) -> f64 {
        self.first_moment
    }

    /// `‖Γ‖_∞` by sampling.
    pub fn sup(&self) -> f64 {
        match &self.shape {
            TemporalShape::PolyDecay => 3.0,
            TemporalShape::Tabulated(t) => t.ys.iter().copied().fold(0.0, f64::max),
        }
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        let b = b.min(self.support());
        let a = a.max(0.0);
        if b <= a {
            return 0.0;
        }
        match &self.shape {
            TemporalShape::PolyDecay => gauss_legendre5(|t| self.value(t), a, b),
            TemporalShape::Tabulated(_) => adaptive_simpson(&|t| self.value(t), a, b, SIMPSON_TOL),
        }
    }

    pub fn integral(&self) -> f64 {
        self.integrate(0.0, self.support())
    }

    pub fn scaled(&self, delta: f64) -> Result<ScaledTemporalKernel> {
        ScaledTemporalKernel::new(self.clone(), delta)
    }
}

/// `Γ_δ(t) = Γ(t/δ)/δ`, supported on `[0, δ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTemporalKernel {
    base: TemporalKernel,
    delta: f64,
}

impl ScaledTemporalKernel {
    pub fn new(base: TemporalKernel, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Kernel(format!(
                "memory radius delta must be positive, got {delta}"
            )));
        }
        Ok(Self { base, delta })
    }

    pub fn base(&self) -> &TemporalKernel {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn support(&self) -> f64 {
        self.delta * self.base.support()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.base.value(t / self.delta) / self.delta
    }

    /// `∫_a^b Γ_δ`, evaluated in the unscaled variable.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        self.base.integrate(a / self.delta, b / self.delta)
    }

    pub fn integral(&self) -> f64 {
        self.integrate(0.0, self.support())
    }

    /// `‖Γ_δ‖_∞ = ‖Γ‖_∞ / δ`.
    pub fn sup(&self) -> f64 {
        self.base.sup() / self.delta
    }

    pub fn cell_averages(&self, dt: f64) -> Result<TemporalWeights> {
        temporal_cell_averages(self, dt)
    }
}

/// `∫ τ Γ_δ(τ) dτ = δ · m₁(Γ)`.
pub fn scaled_first_moment(kernel: &ScaledTemporalKernel) -> f64 {
    kernel.delta * kernel.base.first_moment
}

/// Cell-averaged temporal kernel over time cells `[sΔt, (s+1)Δt)`.
///
/// `masses[s] = Δt · g_s` is kept alongside the averages so that the memory
/// sum can be formed without re-multiplying by `Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWeights {
    dt: f64,
    averages: Vec<f64>,
    masses: Vec<f64>,
}

impl TemporalWeights {
    /// All mass in the current time level: the memoryless collapse.
    pub fn degenerate(dt: f64) -> Self {
        Self {
            dt,
            averages: vec![1.0 / dt],
            masses: vec![1.0],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `g_s`, the averages of `Γ_δ` over each time cell.
    pub fn averages(&self) -> &[f64] {
        &self.averages
    }

    /// `Δt · g_s`.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of time levels that carry weight; the history depth.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.masses.len() == 1
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// See [`ScaledTemporalKernel::cell_averages`]. The final cell may extend past
/// the support, where the kernel is zero; no renormalization is applied.
pub fn temporal_cell_averages(kernel: &ScaledTemporalKernel, dt: f64) -> Result<TemporalWeights> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Kernel(format!("time step must be positive, got {dt}")));
    }
    let count = cells_covering(kernel.support(), dt);
    if count == 1 {
        return Ok(TemporalWeights::degenerate(dt));
    }
    let masses: Vec<f64> = (0..count)
        .map(|s| kernel.integrate(s as f64 * dt, (s + 1) as f64 * dt))
        .collect();
    let averages = masses.iter().map(|m| m / dt).collect();
    Ok(TemporalWeights { dt, averages, masses })
}

/// One entry `Θ^{j,k} = μ^{j,k} Γ_δ^{j,k}` of the kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub spatial: SpatialKernel,
    pub temporal: ScaledTemporalKernel,
}

/// Which side of an interface the spatial kernel samples.
///
/// With `Upstream` the convolution is `∫ U(ξ) μ(x - ξ) dξ`, so a kernel on
/// `[0, η)` averages the stretch `(x - η, x]` behind the interface.
/// `Downstream` uses `∫ U(ξ) μ(ξ - x) dξ` and averages `[x, x + η)` ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Upstream,
    Downstream,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Upstream => "upstream",
            Window::Downstream => "downstream",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "upstream" => Some(Window::Upstream),
            "downstream" => Some(Window::Downstream),
            _ => None,
        }
    }
}

/// `N × N` kernel matrix. Entries index into a list of distinct pairs so that
/// aliased entries share their discretized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    pairs: Vec<KernelPair>,
    index: Vec<usize>,
    window: Window,
}

impl KernelMatrix {
    /// Every entry aliases the same pair.
    pub fn shared(n: usize, pair: KernelPair) -> Result<Self> {
        Self::new(n, vec![pair], vec![0; n * n])
    }

    /// `index[j * n + k]` selects the pair used for `Θ^{j,k}`.
    pub fn new(n: usize, pairs: Vec<KernelPair>, index: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Kernel("kernel matrix needs at least one component".into()));
        }
        if index.len() != n * n {
            return Err(Error::Kernel(format!(
                "kernel matrix index has {} entries, expected {}",
                index.len(),
                n * n
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= pairs.len()) {
            return Err(Error::Kernel(format!("kernel index {bad} out of range")));
        }
        Ok(Self {
            n,
            pairs,
            index,
            window: Window::Upstream,
        })
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[KernelPair] {
        &self.pairs
    }

    pub fn pair_index(&self, j: usize, k: usize) -> usize {
        self.index[j * self.n + k]
    }

    pub fn entry(&self, j: usize, k: usize) -> &KernelPair {
        &self.pairs[self.pair_index(j, k)]
    }

    /// Same spatial kernels with every temporal kernel rescaled to `delta`.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                Ok(KernelPair {
                    spatial: p.spatial.clone(),
                    temporal: p.temporal.base().scaled(delta)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(self.n, pairs, self.index.clone())?.with_window(self.window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn poly_bump_amplitude() {
        let k = SpatialKernel::poly_bump(1.0).unwrap();
        assert!(rel(k.amplitude().unwrap(), 20.0) < 1e-12);
        let k = SpatialKernel::poly_bump(0.25).unwrap();
        assert!(rel(k.amplitude().unwrap(), 20480.0) < 1e-12);
        assert!((k.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_normalization() {
        let k = normalize_spatial(SpatialFamily::Uniform { width: 2.0 }).unwrap();
        assert_eq!(k.amplitude(), Some(0.5));
        assert_eq!(k.cell_averages(0.5).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn rejects_bad_spatial_shapes() {
        assert!(normalize_spatial(SpatialFamily::PolyBump { eta: 0.0 }).is_err());
        assert!(normalize_spatial(SpatialFamily::PolyBump { eta: -1.0 }).is_err());
        assert!(normalize_spatial(SpatialFamily::Tabulated(vec![(0.0, 1.0), (0.5, -0.1)])).is_err());
        assert!(normalize_spatial(SpatialFamily::Tabulated(vec![(-0.5, 1.0), (0.5, 1.0)])).is_err());
        assert!(SpatialKernel::poly_bump(0.25).unwrap().cell_averages(0.0).is_err());
    }

    #[test]
    fn poly_bump_cell_averages_match_golden_values() {
        // Frozen from 30-digit adaptive quadrature of 20480 s (0.25 - s)^3.
        let w = SpatialKernel::poly_bump(0.25).unwrap().cell_averages(0.0625).unwrap();
        let golden = [5.875, 7.125, 2.75, 0.25];
        assert_eq!(w.len(), 4);
        for (a, b) in w.iter().zip(golden) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
        assert!((0.0625 * w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tabulated_kernel_is_normalized() {
        let k = normalize_spatial(SpatialFamily::Tabulated(vec![(0.0, 0.0), (0.5, 2.0), (1.0, 0.0)])).unwrap();
        assert!((k.integral() - 1.0).abs() < 1e-10);
        assert!((k.value(0.5) - 2.0).abs() < 1e-12);
        let w = k.cell_averages(0.1).unwrap();
        assert!((0.1 * w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn temporal_weights_poly_decay_unit_delta() {
        let g = TemporalKernel::poly_decay()
            .scaled(1.0)
            .unwrap()
            .cell_averages(0.5)
            .unwrap();
        assert_eq!(g.len(), 2);
        assert!((g.averages()[0] - 1.75).abs() < 1e-13);
        assert!((g.averages()[1] - 0.25).abs() < 1e-13);
    }

    #[test]
    fn temporal_weights_single_cell_when_step_exceeds_support() {
        let g = TemporalKernel::poly_decay()
            .scaled(0.01)
            .unwrap()
            .cell_averages(0.02)
            .unwrap();
        assert!(g.is_degenerate());
        assert_eq!(g.averages(), &[1.0 / 0.02]);
        assert_eq!(g.masses(), &[1.0]);
    }

    #[test]
    fn temporal_weights_paper_parameters() {
        let dt = 0.1286 * 0.00625;
        let g = TemporalKernel::poly_decay()
            .scaled(0.0125)
            .unwrap()
            .cell_averages(dt)
            .unwrap();
        // Frozen from 30-digit quadrature: 16 cells, g_0 = 224.8987592.
        assert_eq!(g.len(), 16);
        assert!(rel(g.averages()[0], 224.8987592) < 1e-12);
        assert!((dt * g.averages().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn first_moment_scales_with_delta() {
        let base = TemporalKernel::poly_decay();
        assert!((scaled_first_moment(&base.scaled(1.0).unwrap()) - 0.25).abs() < 1e-15);
        assert!((scaled_first_moment(&base.scaled(0.5).unwrap()) - 0.125).abs() < 1e-15);
        assert!(scaled_first_moment(&base.scaled(1e-12).unwrap()) < 1e-12);
    }

    #[test]
    fn tabulated_temporal_moment() {
        // Uniform on [0, 1]: mean 1/2.
        let k = normalize_temporal(TemporalFamily::Tabulated(vec![(0.0, 4.0), (1.0, 4.0)])).unwrap();
        assert!((k.first_moment() - 0.5).abs() < 1e-12);
        assert!((k.integral() - 1.0).abs() < 1e-12);
        assert!(normalize_temporal(TemporalFamily::Tabulated(vec![(0.0, 1.0), (2.0, 1.0)])).is_err());
    }

    #[test]
    fn poly_bump_derivative_bounds() {
        let k = SpatialKernel::poly_bump(0.25).unwrap();
        // μ'(x) = L (η-x)^2 (η-4x) peaks at x = 0 with value L η^3.
        assert!(rel(k.derivative_sup(), 320.0) < 1e-9);
        // μ''(x) = L (η-x)(12x-6η) peaks at x = 0 with value 6 L η^2.
        assert!(rel(k.second_derivative_sup(), 7680.0) < 1e-9);
    }

    #[test]
    fn kernel_matrix_rescales() {
        let pair = KernelPair {
            spatial: SpatialKernel::poly_bump(0.25).unwrap(),
            temporal: TemporalKernel::poly_decay().scaled(0.1).unwrap(),
        };
        let m = KernelMatrix::shared(2, pair).unwrap();
        let m2 = m.with_delta(0.05).unwrap();
        assert_eq!(m2.entry(1, 0).temporal.delta(), 0.05);
        assert_eq!(m2.pairs().len(), 1);
        assert!(KernelMatrix::new(2, vec![], vec![0; 4]).is_err());
    }
}
