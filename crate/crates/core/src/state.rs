use crate::quadrature::compensated_sum;

/// Cell averages `U^{k,n}_i` of every component at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub components: Vec<Vec<f64>>,
    pub time_index: usize,
}

impl StateField {
    pub fn zeros(n_components: usize, cells: usize) -> Self {
        Self {
            components: vec![vec![0.0; cells]; n_components],
            time_index: 0,
        }
    }

    pub fn from_components(components: Vec<Vec<f64>>) -> Self {
        Self {
            components,
            time_index: 0,
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn cells(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k]
    }

    /// `Δx Σ_i U^k_i`.
    pub fn mass(&self, k: usize, dx: f64) -> f64 {
        dx * compensated_sum(self.components[k].iter().copied())
    }

    /// Total variation with zero extension outside the grid.
    pub fn total_variation(&self, k: usize) -> f64 {
        total_variation(&self.components[k])
    }

    pub fn min_max(&self, k: usize) -> (f64, f64) {
        self.components[k]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `Δx Σ_k Σ_i |U^k_i - V^k_i|` for states on the same grid.
    pub fn l1_difference(&self, other: &StateField, dx: f64) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| dx * compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs())))
            .sum()
    }
}

pub(crate) fn total_variation(values: &[f64]) -> f64 {
    let (Some(first), Some(last)) = (values.first(), values.last()) else {
        return 0.0;
    };
    let inner = values.windows(2).map(|w| (w[1] - w[0]).abs());
    compensated_sum(inner.chain([first.abs(), last.abs()]))
}
