//! Strict descending ladder heights, the renewal function `R` and the
//! constants `c₀`, `θ` of the associated walk.

use serde::{Deserialize, Serialize};

use super::conditioned::survival_profile;
use super::WalkLaw;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::{linear_fit, Estimate, Moments};

/// Per-path step budget for a single ladder epoch.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LadderSample {
    pub heights: Vec<f64>,
    /// Paths that exhausted the step budget without a strict descent.
    pub overruns: usize,
}

/// Sample `H₁ = −S_{τ₁}` where `τ₁` is the first strict descent below 0.
pub fn ladder_heights(walk: &WalkLaw, n_paths: usize, step_budget: u64, streams: &Streams) -> Result<LadderSample> {
    if n_paths == 0 {
        return Err(Error::invalid("ladder_heights needs n_paths >= 1"));
    }
    let parts = streams.par_batches(n_paths, 256, |rng, range| {
        let mut hs = Vec::with_capacity(range.len());
        let mut over = 0;
        for _ in range {
            let mut s = 0.0;
            let mut done = false;
            for _ in 0..step_budget {
                s += walk.sample_step(rng);
                if s < 0.0 {
                    hs.push(-s);
                    done = true;
                    break;
                }
            }
            if !done {
                over += 1;
            }
        }
        (hs, over)
    });
    let mut heights = Vec::with_capacity(n_paths);
    let mut overruns = 0;
    for (h, o) in parts {
        heights.extend(h);
        overruns += o;
    }
    Ok(LadderSample { heights, overruns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenewalDirection {
    /// Ladder heights of `S` (gives `R`).
    Descending,
    /// Ladder heights of `S⁻` (gives `R⁻`).
    DescendingNegated,
}

/// `R(u) = Σ_k P(H_k ≤ u)` tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalTable {
    pub grid: Vec<f64>,
    pub r_values: Vec<f64>,
    pub n_ladder_samples: usize,
    pub overruns: usize,
    pub direction: RenewalDirection,
    /// Least-squares slope over the upper half of the grid, with a batch SE.
    pub slope: f64,
    pub slope_se: f64,
}

impl RenewalTable {
    /// Uniform grid `0, step, 2 step, ..` up to and including `max`.
    pub fn uniform_grid(step: f64, max: f64) -> Vec<f64> {
        let k = (max / step).round() as usize;
        (0..=k).map(|i| i as f64 * step).collect()
    }

    pub fn max_u(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn covers(&self, u: f64) -> bool {
        u <= self.max_u()
    }

    /// Linear interpolation. `R(u) = 0` for `u < 0`. Beyond the grid the
    /// fitted tail slope is used.
    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let g = &self.grid;
        let last = g.len() - 1;
        if u >= g[last] {
            return self.r_values[last] + self.slope * (u - g[last]);
        }
        let i = g.partition_point(|&x| x <= u).max(1) - 1;
        let t = (u - g[i]) / (g[i + 1] - g[i]);
        self.r_values[i] + t * (self.r_values[i + 1] - self.r_values[i])
    }

    /// Value together with an in-range flag.
    pub fn eval_checked(&self, u: f64) -> (f64, bool) {
        (self.eval(u), self.covers(u))
    }

    /// `R_L(u) = R(L + u)`.
    pub fn r_l(&self, l: f64, u: f64) -> f64 {
        self.eval(l + u)
    }

    /// `∫_a^b R(t) dt`, trapezoid on 64 panels.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let k = 64;
        let dx = (b - a) / k as f64;
        let inner: f64 = (1..k).map(|i| self.eval(a + i as f64 * dx)).sum();
        dx * (inner + 0.5 * (self.eval(a) + self.eval(b)))
    }

    /// Smallest and largest `R(u)/(1+u)` over the grid.
    pub fn envelope(&self) -> (f64, f64) {
        self.grid.iter().zip(&self.r_values).fold((f64::INFINITY, 0.0_f64), |(lo, hi), (u, r)| {
            let q = r / (1.0 + u);
            (lo.min(q), hi.max(q))
        })
    }
}

/// Renewal counts of a pooled ladder-height sample on `grid`.
///
/// Every start index of the pool begins one renewal run that walks the pool
/// circularly, so `M` heights give `M` (dependent) runs.
fn pooled_counts(pool: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let m = pool.len();
    let u_max = *grid.last().unwrap();
    let mut hist = vec![0u64; grid.len()];
    for start in 0..m {
        let mut sum = 0.0;
        let mut k = 0;
        loop {
            sum += pool[(start + k) % m];
            k += 1;
            if sum > u_max {
                break;
            }
            if k >= m {
                return Err(Error::invalid(format!(
                    "ladder pool of {m} heights cannot reach u_max = {u_max}; raise n_ladder_samples"
                )));
            }
            hist[grid.partition_point(|&x| x < sum)] += 1;
        }
    }
    let mut acc = m as u64;
    Ok(hist
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / m as f64
        })
        .collect())
}

fn upper_half_slope(grid: &[f64], r: &[f64]) -> f64 {
    let h = grid.len() / 2;
    linear_fit(&grid[h..], &r[h..]).1
}

/// Estimate `R` on `grid` from `n_ladder_samples` exact ladder heights.
pub fn renewal_function(walk: &WalkLaw, grid: &[f64], n_ladder_samples: usize, streams: &Streams) -> Result<RenewalTable> {
    renewal_function_with_budget(walk, grid, n_ladder_samples, DEFAULT_STEP_BUDGET, streams)
}

pub fn renewal_function_with_budget(
    walk: &WalkLaw,
    grid: &[f64],
    n_ladder_samples: usize,
    step_budget: u64,
    streams: &Streams,
) -> Result<RenewalTable> {
    if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("renewal grid must start at 0 and be strictly increasing"));
    }
    let sample = ladder_heights(walk, n_ladder_samples, step_budget, streams)?;
    let pool = &sample.heights;
    if pool.is_empty() {
        return Err(Error::invalid("no ladder heights within the step budget"));
    }
    let mut r_values = pooled_counts(pool, grid)?;
    r_values[0] = 1.0;
    let slope = upper_half_slope(grid, &r_values);

    // Batch SE of the slope: the pool split into independent blocks.
    let blocks = (pool.len() / 500).clamp(0, 20);
    let slope_se = if blocks >= 4 {
        let size = pool.len() / blocks;
        let mut m = Moments::default();
        for b in 0..blocks {
            if let Ok(r) = pooled_counts(&pool[b * size..(b + 1) * size], grid) {
                m.push(upper_half_slope(grid, &r));
            }
        }
        (m.variance() / blocks as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let direction = if walk.tilt_origin.ends_with("(negated)") {
        RenewalDirection::DescendingNegated
    } else {
        RenewalDirection::Descending
    };
    Ok(RenewalTable {
        grid: grid.to_vec(),
        r_values,
        n_ladder_samples: pool.len(),
        overruns: sample.overruns,
        direction,
        slope,
        slope_se,
    })
}

/// Sizes for [`estimate_constants`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsBudget {
    /// Grid step in units of `σ`.
    pub grid_step_sigma: f64,
    /// Grid cap in units of `σ`.
    pub grid_max_sigma: f64,
    pub n_ladder: usize,
    pub step_budget: u64,
    /// Walk length used for `θ`.
    pub n: usize,
    pub n_paths: usize,
    /// Barriers (in units of `σ`) averaged over for `θ`.
    pub theta_u_sigma: Vec<f64>,
}

impl Default for ConstantsBudget {
    fn default() -> Self {
        ConstantsBudget {
            grid_step_sigma: 0.25,
            grid_max_sigma: 50.0,
            n_ladder: 100_000,
            step_budget: DEFAULT_STEP_BUDGET,
            n: 4096,
            n_paths: 200_000,
            theta_u_sigma: vec![2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwConstants {
    pub c0: Estimate,
    pub theta: Estimate,
    pub c0_minus: Estimate,
    pub theta_minus: Estimate,
    pub sigma: f64,
    pub table: RenewalTable,
    pub table_minus: RenewalTable,
    pub warnings: Vec<String>,
}

impl RwConstants {
    /// `√(2/(πσ²))`, the value `c₀θ` must take.
    pub fn product_target(&self) -> f64 {
        (2.0 / (std::f64::consts::PI * self.sigma * self.sigma)).sqrt()
    }

    pub fn product(&self) -> Estimate {
        self.c0.product(&self.theta)
    }

    pub fn product_minus(&self) -> Estimate {
        self.c0_minus.product(&self.theta_minus)
    }
}

fn one_side(walk: &WalkLaw, budget: &ConstantsBudget, streams: &Streams, warnings: &mut Vec<String>) -> Result<(RenewalTable, Estimate, Estimate)> {
    let sigma = walk.sigma();
    let grid = RenewalTable::uniform_grid(budget.grid_step_sigma * sigma, budget.grid_max_sigma * sigma);
    if grid.len() < 16 || budget.grid_max_sigma < 10.0 {
        warnings.push(format!(
            "renewal grid too short for a stable slope fit ({} points up to {}σ)",
            grid.len(),
            budget.grid_max_sigma
        ));
    }
    let table = renewal_function_with_budget(walk, &grid, budget.n_ladder, budget.step_budget, &streams.child("ladder"))?;
    if table.overruns > 0 {
        warnings.push(format!("{} ladder paths exceeded the step budget", table.overruns));
    }
    let c0 = Estimate { value: table.slope, se: table.slope_se, count: table.n_ladder_samples as u64 };

    let us: Vec<f64> = budget.theta_u_sigma.iter().map(|k| k * sigma).collect();
    let props = survival_profile(walk, &us, budget.n, budget.n_paths, &streams.child("theta"))?;
    let rn = (budget.n as f64).sqrt();
    let k = us.len() as f64;
    let (mut value, mut se) = (0.0, 0.0);
    for (u, p) in us.iter().zip(&props) {
        let r = table.eval(*u);
        let e = p.estimate();
        value += rn * e.value / r / k;
        // The barriers share paths, so errors are added linearly.
        se += rn * e.se / r / k;
    }
    let theta = Estimate { value, se, count: budget.n_paths as u64 };
    Ok((table, c0, theta))
}

/// Estimate `c₀`, `θ` for `S` and `c₀⁻`, `θ⁻` for `S⁻`.
pub fn estimate_constants(walk: &WalkLaw, budget: &ConstantsBudget, streams: &Streams) -> Result<RwConstants> {
    let mut warnings = Vec::new();
    let (table, c0, theta) = one_side(walk, budget, &streams.child("plus"), &mut warnings)?;
    let (table_minus, c0_minus, theta_minus) = one_side(&walk.negated(), budget, &streams.child("minus"), &mut warnings)?;
    Ok(RwConstants { c0, theta, c0_minus, theta_minus, sigma: walk.sigma(), table, table_minus, warnings })
}
