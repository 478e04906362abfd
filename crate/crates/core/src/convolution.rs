//! Discrete space–time convolution terms `c^{j,k,n}_{i+1/2}`.
//!
//! The double sum over time levels and cells factorizes into a spatial
//! convolution of each time level (a [`SpatialConvSnapshot`]) followed by a
//! short temporal convolution over the snapshots still inside the memory
//! window, kept in a [`HistoryRing`].
//!
//! Interfaces are stored at offset `i + 1` for `i = -1, ..., M - 1`, so a
//! field over a grid of `M` cells has `M + 1` interface values. Cells outside
//! the grid contribute zero.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{project_initial, GridSpec};
use crate::kernels::{KernelMatrix, TemporalWeights, Window};
use crate::models::ModelSpec;
use crate::state::StateField;

/// Interface chunk handed to one rayon task.
const PAR_CHUNK: usize = 2048;

/// Discretized kernel data for one distinct `(component j, kernel pair)`
/// combination. Aliased matrix entries share a channel.
#[derive(Debug, Clone)]
pub struct Channel {
    pub component: usize,
    pub pair: usize,
    pub spatial: Arc<[f64]>,
    pub temporal: TemporalWeights,
}

/// Channel layout for a kernel matrix on a given space–time grid.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    n: usize,
    dx: f64,
    window: Window,
    channels: Vec<Channel>,
    lookup: Vec<usize>,
}

impl ConvPlan {
    /// Plan with the cell-averaged temporal weights of every kernel.
    pub fn new(kernels: &KernelMatrix, dx: f64, dt: f64) -> Result<Self> {
        Self::build(kernels, dx, |pair| kernels.pairs()[pair].temporal.cell_averages(dt))
    }

    /// Plan whose temporal weights put all mass on the current level.
    pub fn memoryless(kernels: &KernelMatrix, dx: f64, dt: f64) -> Result<Self> {
        Self::build(kernels, dx, |_| Ok(TemporalWeights::degenerate(dt)))
    }

    fn build<F>(kernels: &KernelMatrix, dx: f64, temporal: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<TemporalWeights>,
    {
        let n = kernels.n();
        let spatial = kernels
            .pairs()
            .iter()
            .map(|p| p.spatial.cell_averages(dx).map(Arc::from))
            .collect::<Result<Vec<Arc<[f64]>>>>()?;
        let mut channels: Vec<Channel> = Vec::new();
        let mut lookup = vec![0; n * n];
        for j in 0..n {
            for k in 0..n {
                let pair = kernels.pair_index(j, k);
                let existing = channels.iter().position(|c| c.component == j && c.pair == pair);
                lookup[j * n + k] = match existing {
                    Some(idx) => idx,
                    None => {
                        channels.push(Channel {
                            component: j,
                            pair,
                            spatial: spatial[pair].clone(),
                            temporal: temporal(pair)?,
                        });
                        channels.len() - 1
                    }
                };
            }
        }
        Ok(Self {
            n,
            dx,
            window: kernels.window(),
            channels,
            lookup,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Channel carrying `c^{j,k}`.
    pub fn channel(&self, j: usize, k: usize) -> usize {
        self.lookup[j * self.n + k]
    }

    /// Snapshots the ring must retain.
    pub fn history_depth(&self) -> usize {
        self.channels.iter().map(|c| c.temporal.len()).max().unwrap_or(1)
    }
}

/// Spatial convolution of one time level: `S_{i+1/2} = Δx Σ_q w_q U_{i-q}`
/// for an upstream window, `Δx Σ_q w_q U_{i+1+q}` for a downstream one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConvSnapshot {
    pub values: Vec<Vec<f64>>,
    pub time_index: usize,
}

/// Convolution terms `c^{j,k,n}_{i+1/2}` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvField {
    pub values: Vec<Vec<f64>>,
    pub time_index: usize,
}

impl ConvField {
    /// Largest excursion of any value outside `[0, 1]`.
    pub fn range_violation(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|&c| (-c).max(c - 1.0).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `max_i |c_{i+1/2} - c_{i-1/2}|` for one channel.
    pub fn max_first_difference(&self, channel: usize) -> f64 {
        self.values[channel]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    /// `max_i |c_{i+3/2} - 2c_{i+1/2} + c_{i-1/2}|` for one channel.
    pub fn max_second_difference(&self, channel: usize) -> f64 {
        self.values[channel]
            .windows(3)
            .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
            .fold(0.0, f64::max)
    }
}

/// Computes the spatial convolution of `state` for every channel of `plan`.
pub fn spatial_conv(state: &StateField, plan: &ConvPlan) -> Result<SpatialConvSnapshot> {
    if state.n_components() != plan.n {
        return Err(Error::Shape(format!(
            "state has {} components, kernel plan expects {}",
            state.n_components(),
            plan.n
        )));
    }
    let values = plan
        .channels
        .iter()
        .map(|ch| spatial_conv_component(state.component(ch.component), &ch.spatial, plan.dx, plan.window))
        .collect();
    Ok(SpatialConvSnapshot {
        values,
        time_index: state.time_index,
    })
}

fn spatial_conv_component(u: &[f64], w: &[f64], dx: f64, window: Window) -> Vec<f64> {
    let m = u.len();
    let mut out = vec![0.0; m + 1];
    // out[a] is the interface between cells a - 1 and a.
    match window {
        Window::Upstream => {
            for (a, slot) in out.iter_mut().enumerate().skip(1) {
                let acc: f64 = w.iter().zip(u[..a].iter().rev()).map(|(wq, uq)| wq * uq).sum();
                *slot = dx * acc;
            }
        }
        Window::Downstream => {
            for (a, slot) in out.iter_mut().enumerate().take(m) {
                let acc: f64 = w.iter().zip(&u[a..]).map(|(wq, uq)| wq * uq).sum();
                *slot = dx * acc;
            }
        }
    }
    out
}

/// Bounded history of spatial-convolution snapshots, newest first.
#[derive(Debug, Clone)]
pub struct HistoryRing {
    depth: usize,
    slots: VecDeque<SpatialConvSnapshot>,
}

impl HistoryRing {
    pub fn new(depth: usize) -> Self {
        let depth = depth.max(1);
        Self {
            depth,
            slots: VecDeque::with_capacity(depth),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends the newest level, evicting the oldest when full.
    pub fn push(&mut self, snapshot: SpatialConvSnapshot) {
        if self.slots.len() == self.depth {
            self.slots.pop_back();
        }
        self.slots.push_front(snapshot);
    }

    /// Snapshot `lag` levels behind the newest.
    pub fn get(&self, lag: usize) -> Option<&SpatialConvSnapshot> {
        self.slots.get(lag)
    }

    pub fn head_index(&self) -> Option<usize> {
        self.slots.front().map(|s| s.time_index)
    }
}

/// `c^{n} = Σ_{m=0}^{min(n, L-1)} (Δt g_m) S^{n-m}` for every channel, where
/// `n` is the newest level in the ring.
pub fn memory_conv(ring: &HistoryRing, plan: &ConvPlan) -> Result<ConvField> {
    let mut field = ConvField {
        values: Vec::new(),
        time_index: 0,
    };
    memory_conv_into(ring, plan, &mut field)?;
    Ok(field)
}

/// In-place variant of [`memory_conv`] reusing `out`'s buffers.
pub fn memory_conv_into(ring: &HistoryRing, plan: &ConvPlan, out: &mut ConvField) -> Result<()> {
    let head = ring
        .get(0)
        .ok_or_else(|| Error::Shape("memory convolution needs a nonempty history".into()))?;
    let n = head.time_index;
    if plan.history_depth() > ring.depth() {
        return Err(Error::Shape(format!(
            "history ring holds {} levels, temporal weights need {}",
            ring.depth(),
            plan.history_depth()
        )));
    }
    let width = head.values.first().map_or(0, Vec::len);
    out.time_index = n;
    out.values.resize_with(plan.channels.len(), Vec::new);
    for (ch_idx, (ch, acc)) in plan.channels.iter().zip(out.values.iter_mut()).enumerate() {
        let levels = ch.temporal.len().min(n + 1);
        if ring.len() < levels {
            return Err(Error::Shape(format!(
                "history ring has {} levels, level {n} needs {levels}",
                ring.len()
            )));
        }
        let snaps: Vec<&[f64]> = (0..levels)
            .map(|lag| ring.get(lag).expect("checked length").values[ch_idx].as_slice())
            .collect();
        let masses = &ch.temporal.masses()[..levels];
        acc.clear();
        acc.resize(width, 0.0);
        let accumulate = |offset: usize, chunk: &mut [f64]| {
            for (mass, snap) in masses.iter().zip(&snaps) {
                let src = &snap[offset..offset + chunk.len()];
                for (c, s) in chunk.iter_mut().zip(src) {
                    *c += mass * s;
                }
            }
        };
        if width > PAR_CHUNK && levels > 1 {
            acc.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(b, chunk)| accumulate(b * PAR_CHUNK, chunk));
        } else {
            accumulate(0, acc);
        }
    }
    Ok(())
}

/// `C₅^{j,k} = ‖U₀^j‖_{L¹} ‖μ̇^{j,k}‖_∞ ‖Γ^{j,k}‖_{L¹}` and
/// `C₆^{j,k} = 2 ‖U₀^j‖_{L¹} ‖μ̈^{j,k}‖_∞ ‖Γ^{j,k}‖_{L¹}`, row-major in `(j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvConstants {
    pub n: usize,
    pub c5: Vec<f64>,
    pub c6: Vec<f64>,
}

impl ConvConstants {
    pub fn c5(&self, j: usize, k: usize) -> f64 {
        self.c5[j * self.n + k]
    }

    pub fn c6(&self, j: usize, k: usize) -> f64 {
        self.c6[j * self.n + k]
    }
}

/// Constants from explicit initial masses `‖U₀^j‖_{L¹}`.
pub fn conv_constants_from_masses(kernels: &KernelMatrix, masses: &[f64]) -> ConvConstants {
    let n = kernels.n();
    let mut c5 = vec![0.0; n * n];
    let mut c6 = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let pair = kernels.entry(j, k);
            let gamma_l1 = pair.temporal.integral();
            c5[j * n + k] = masses[j] * pair.spatial.derivative_sup() * gamma_l1;
            c6[j * n + k] = 2.0 * masses[j] * pair.spatial.second_derivative_sup() * gamma_l1;
        }
    }
    ConvConstants { n, c5, c6 }
}

/// Constants for `model` with the initial masses of its projected data.
pub fn conv_constants(model: &ModelSpec, grid: &GridSpec) -> Result<ConvConstants> {
    let u0 = project_initial(&model.initial_data(), grid)?;
    let masses: Vec<f64> = (0..model.n()).map(|k| u0.mass(k, grid.dx)).collect();
    Ok(conv_constants_from_masses(&model.kernels, &masses))
}
