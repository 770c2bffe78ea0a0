//! Gibbs measures `ν_{n,β}` on the last generation of a tree, trajectory
//! means `μ_{n,β}(F)`, overlaps and energy-window masses.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::brw::Population;
use crate::error::{Error, Result};
use crate::functional::{project_into, GridFunctional, PathScaling};
use crate::rng::Rng;
use crate::stats::LogSumExp;

/// Absolute tolerance for ties at `β = ∞`. Lattice positions are float sums
/// taken in different orders, so exact comparison would split true ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsMeasure {
    /// `f64::INFINITY` gives the uniform law on the minimisers.
    pub beta: f64,
    /// Normalised: `log Σ exp = 0`.
    pub log_weights: Vec<f64>,
    /// Indices into the population's last frame.
    pub particle_refs: Vec<usize>,
    /// `log W_{n,β}`; at `β = ∞`, the log of the number of minimisers.
    pub log_w: f64,
}

impl GibbsMeasure {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_weights.iter().map(|l| l.exp())
    }

    /// Draw one particle (index into the last frame).
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let mut u: f64 = rng.random();
        for (i, w) in self.weights().enumerate() {
            u -= w;
            if u < 0.0 {
                return self.particle_refs[i];
            }
        }
        // Rounding left a sliver of mass: fall back to the last positive weight.
        let i = self.log_weights.iter().rposition(|l| *l > f64::NEG_INFINITY).unwrap();
        self.particle_refs[i]
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }
}

pub fn gibbs(pop: &Population, beta: f64) -> Result<GibbsMeasure> {
    let x = &pop.last().positions;
    if x.is_empty() {
        return Err(Error::Extinct);
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let particle_refs: Vec<usize> = (0..x.len()).collect();
    if beta == f64::INFINITY {
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let ties: Vec<bool> = x.iter().map(|&v| v - min <= TIE_TOLERANCE).collect();
        let count = ties.iter().filter(|&&t| t).count() as f64;
        let log_weights = ties.iter().map(|&t| if t { -count.ln() } else { f64::NEG_INFINITY }).collect();
        return Ok(GibbsMeasure { beta, log_weights, particle_refs, log_w: count.ln() });
    }
    let mut lse = LogSumExp::default();
    x.iter().for_each(|&v| lse.push(-beta * v));
    let log_w = lse.value();
    let log_weights = x.iter().map(|&v| -beta * v - log_w).collect();
    Ok(GibbsMeasure { beta, log_weights, particle_refs, log_w })
}

/// Rescaled path `𝐕(z)` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub values: Vec<f64>,
    pub scaling: PathScaling,
}

/// Trajectory rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// `V(z_{⌊tn⌋})/(σ√n)`.
    Plain { sigma: f64 },
    /// `(V(z_{⌊tn⌋}) + t n Ψ'(β))/(σ√n)`.
    Drift { sigma: f64, psi_prime: f64 },
}

impl TrajectoryMode {
    pub fn scaling(&self, n: usize) -> PathScaling {
        match *self {
            TrajectoryMode::Plain { sigma } => PathScaling::diffusive(n, sigma),
            TrajectoryMode::Drift { sigma, psi_prime } => PathScaling::diffusive(n, sigma).with_drift(psi_prime),
        }
    }
}

/// `path_grid` for a last-generation particle.
pub fn path_grid(pop: &Population, index: usize, m: usize, mode: TrajectoryMode) -> Result<PathGrid> {
    let n = pop.generation().max(1);
    let path = pop.path_of(index)?;
    let scaling = mode.scaling(n);
    let mut values = Vec::with_capacity(m + 1);
    project_into(&path, m, &scaling, &mut values);
    Ok(PathGrid { values, scaling })
}

/// Ancestral paths of every particle of the last generation, row-major
/// `(n+1)` values per particle.
fn all_paths(pop: &Population) -> Vec<f64> {
    let n = pop.generation();
    let k = pop.last().len();
    let mut out = vec![0.0; k * (n + 1)];
    let mut idx: Vec<usize> = (0..k).collect();
    for g in (0..=n).rev() {
        let frame = &pop.frames[g];
        for (i, a) in idx.iter_mut().enumerate() {
            out[i * (n + 1) + g] = frame.positions[*a];
            *a = frame.parent_index[*a] as usize;
        }
    }
    out
}

/// `μ_{n,β}(F)` by full enumeration of the last generation.
pub fn trajectory_mean(pop: &Population, g: &GibbsMeasure, f: GridFunctional, m: usize, mode: TrajectoryMode) -> Result<f64> {
    Ok(trajectory_means(pop, g, &[f], m, mode)?[0])
}

/// Several functionals in one pass.
pub fn trajectory_means(pop: &Population, g: &GibbsMeasure, fs: &[GridFunctional], m: usize, mode: TrajectoryMode) -> Result<Vec<f64>> {
    if pop.last().is_empty() {
        return Err(Error::Extinct);
    }
    let n = pop.generation();
    let scaling = mode.scaling(n.max(1));
    let paths = all_paths(pop);
    let mut grid = Vec::with_capacity(m + 1);
    let mut acc = vec![0.0; fs.len()];
    for (&i, lw) in g.particle_refs.iter().zip(&g.log_weights) {
        if *lw == f64::NEG_INFINITY {
            continue;
        }
        let w = lw.exp();
        project_into(&paths[i * (n + 1)..(i + 1) * (n + 1)], m, &scaling, &mut grid);
        for (a, f) in acc.iter_mut().zip(fs) {
            *a += w * f.eval(&grid);
        }
    }
    Ok(acc)
}

/// Sub-sampled estimator of `μ_{n,β}(F)`: mean of `F` over `k` particles
/// drawn from the Gibbs measure.
pub fn trajectory_mean_subsampled(
    pop: &Population,
    g: &GibbsMeasure,
    f: GridFunctional,
    m: usize,
    mode: TrajectoryMode,
    k: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("subsample size must be >= 1"));
    }
    let mut total = 0.0;
    for _ in 0..k {
        total += f.eval(&path_grid(pop, g.sample(rng), m, mode)?.values);
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSample {
    /// `|x ∧ y| / n` for each sampled pair.
    pub pairs: Vec<f64>,
}

/// Generation of the most recent common ancestor of two last-generation
/// particles.
pub fn mrca_generation(pop: &Population, mut a: usize, mut b: usize) -> usize {
    let mut g = pop.generation();
    while a != b {
        a = pop.frames[g].parent_index[a] as usize;
        b = pop.frames[g].parent_index[b] as usize;
        g -= 1;
    }
    g
}

/// I.i.d. pairs from `ν ⊗ ν` and their normalised MRCA depths.
pub fn sample_pairs_overlap(pop: &Population, g: &GibbsMeasure, k_pairs: usize, rng: &mut Rng) -> Result<OverlapSample> {
    if k_pairs == 0 {
        return Err(Error::invalid("k_pairs must be >= 1"));
    }
    if pop.last().is_empty() {
        return Err(Error::Extinct);
    }
    let n = pop.generation();
    let cum = g.cumulative();
    let total = *cum.last().unwrap();
    let draw = |rng: &mut Rng| {
        let u = rng.random::<f64>() * total;
        g.particle_refs[cum.partition_point(|&c| c <= u).min(cum.len() - 1)]
    };
    let pairs = (0..k_pairs)
        .map(|_| {
            let (a, b) = (draw(rng), draw(rng));
            if n == 0 {
                1.0
            } else {
                mrca_generation(pop, a, b) as f64 / n as f64
            }
        })
        .collect();
    Ok(OverlapSample { pairs })
}

/// Exact `ω_{n,β}([ε, 1]) = Σ_a (ν(descendants of a))²` over the ancestors
/// `a` in generation `⌈εn⌉`.
pub fn overlap_mass(pop: &Population, g: &GibbsMeasure, eps: f64) -> Result<f64> {
    if pop.last().is_empty() {
        return Err(Error::Extinct);
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::invalid("overlap threshold must lie in [0, 1]"));
    }
    let n = pop.generation();
    let k = (eps * n as f64).ceil() as usize;
    let mut mass = vec![0.0; pop.frames[k].len()];
    for (&i, lw) in g.particle_refs.iter().zip(&g.log_weights) {
        mass[pop.ancestor(i, k)] += lw.exp();
    }
    Ok(mass.iter().map(|m| m * m).sum())
}

/// `ν_{n,β}({z : V(z) ∈ [lo, hi]})`. Use infinite bounds for ℝ.
pub fn mass_in_window(pop: &Population, g: &GibbsMeasure, lo: f64, hi: f64) -> f64 {
    let x = &pop.last().positions;
    g.particle_refs
        .iter()
        .zip(&g.log_weights)
        .filter(|(&i, _)| x[i] >= lo && x[i] <= hi)
        .map(|(_, lw)| lw.exp())
        .sum()
}
