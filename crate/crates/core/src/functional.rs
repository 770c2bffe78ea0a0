//! Path functionals evaluated on uniform grids of `[0, 1]`.
//!
//! A discrete path `V_0, ..., V_n` is mapped to the grid `t_j = j/m` with the
//! left-continuous convention `V_{⌊t_j n⌋}`; no interpolation.

use serde::{Deserialize, Serialize};

/// Rescaling applied when a discrete path is projected onto the grid:
/// `(V_{⌊tn⌋} + drift · t · n) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathScaling {
    pub n: usize,
    pub scale: f64,
    pub drift: f64,
}

impl PathScaling {
    /// Diffusive scaling `σ √n`, no drift.
    pub fn diffusive(n: usize, sigma: f64) -> Self {
        PathScaling { n, scale: sigma * (n as f64).sqrt(), drift: 0.0 }
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }
}

/// Grid index of time `j/m` for a path of `n` steps.
#[inline]
pub fn grid_index(j: usize, m: usize, n: usize) -> usize {
    (j * n) / m
}

/// Project `path` (length `n+1`) onto an `m+1` point grid, writing into `out`.
pub fn project_into(path: &[f64], m: usize, scaling: &PathScaling, out: &mut Vec<f64>) {
    let n = path.len() - 1;
    out.clear();
    out.extend((0..=m).map(|j| {
        let t = j as f64 / m as f64;
        (path[grid_index(j, m, n)] + scaling.drift * t * n as f64) / scaling.scale
    }));
}

pub fn project(path: &[f64], m: usize, scaling: &PathScaling) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    project_into(path, m, scaling, &mut out);
    out
}

/// The standard functional battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridFunctional {
    One,
    Endpoint,
    Sup,
    TimeAverage,
    PositiveFraction,
}

impl GridFunctional {
    pub const BATTERY: [GridFunctional; 4] = [
        GridFunctional::Endpoint,
        GridFunctional::Sup,
        GridFunctional::TimeAverage,
        GridFunctional::PositiveFraction,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            GridFunctional::One => "one",
            GridFunctional::Endpoint => "endpoint",
            GridFunctional::Sup => "sup",
            GridFunctional::TimeAverage => "time-average",
            GridFunctional::PositiveFraction => "positive-fraction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [GridFunctional::One]
            .into_iter()
            .chain(Self::BATTERY)
            .find(|f| f.id() == s)
    }

    pub fn eval(&self, grid: &[f64]) -> f64 {
        match self {
            GridFunctional::One => 1.0,
            GridFunctional::Endpoint => *grid.last().unwrap_or(&0.0),
            GridFunctional::Sup => grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            // trapezoid rule on [0,1]
            GridFunctional::TimeAverage => {
                let m = grid.len() - 1;
                if m == 0 {
                    return grid[0];
                }
                let inner: f64 = grid[1..m].iter().sum();
                (inner + 0.5 * (grid[0] + grid[m])) / m as f64
            }
            // fraction of grid times t > 0 at which the path is strictly positive
            GridFunctional::PositiveFraction => {
                let m = grid.len() - 1;
                if m == 0 {
                    return 0.0;
                }
                grid[1..].iter().filter(|&&x| x > 0.0).count() as f64 / m as f64
            }
        }
    }
}

/// Summary of a stretch of grid values from which every battery functional
/// of a concatenation can be computed without the values themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSummary {
    pub count: usize,
    pub sum: f64,
    pub max: f64,
    pub positive: usize,
    pub first: f64,
    pub last: f64,
}

impl GridSummary {
    pub fn of(values: &[f64]) -> Self {
        GridSummary {
            count: values.len(),
            sum: values.iter().sum(),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            positive: values.iter().filter(|&&x| x > 0.0).count(),
            first: values[0],
            last: values[values.len() - 1],
        }
    }

    /// Summary of `self` followed by `next`.
    pub fn join(&self, next: &GridSummary) -> Self {
        GridSummary {
            count: self.count + next.count,
            sum: self.sum + next.sum,
            max: self.max.max(next.max),
            positive: self.positive + next.positive,
            first: self.first,
            last: next.last,
        }
    }
}

impl GridFunctional {
    /// Same value as [`GridFunctional::eval`] on the summarised grid.
    pub fn eval_summary(&self, s: &GridSummary) -> f64 {
        let m = s.count - 1;
        match self {
            GridFunctional::One => 1.0,
            GridFunctional::Endpoint => s.last,
            GridFunctional::Sup => s.max,
            GridFunctional::TimeAverage if m == 0 => s.first,
            GridFunctional::TimeAverage => (s.sum - 0.5 * (s.first + s.last)) / m as f64,
            GridFunctional::PositiveFraction if m == 0 => 0.0,
            GridFunctional::PositiveFraction => (s.positive - usize::from(s.first > 0.0)) as f64 / m as f64,
        }
    }
}
