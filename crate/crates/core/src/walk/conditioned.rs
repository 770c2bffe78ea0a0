//! Walks conditioned to stay above a barrier: direct survival estimates,
//! rejection-sampled endpoints and the `h`-transform law `P⁺`.

use super::{RenewalTable, WalkLaw};
use crate::error::{Error, Result};
use crate::functional::{project_into, GridFunctional, PathScaling};
use crate::rng::{Rng, Streams};
use crate::stats::{Estimate, Moments, Proportion, WeightedMoments};

/// `P(min_{0≤i≤n} S_i ≥ −u)` with a Wilson interval.
pub fn survival_probability(walk: &WalkLaw, u: f64, n: usize, n_paths: usize, streams: &Streams) -> Result<Proportion> {
    Ok(survival_profile(walk, &[u], n, n_paths, streams)?[0])
}

/// Survival probabilities for several barriers from the same paths.
pub fn survival_profile(walk: &WalkLaw, us: &[f64], n: usize, n_paths: usize, streams: &Streams) -> Result<Vec<Proportion>> {
    if n == 0 {
        return Err(Error::invalid("survival_probability needs n >= 1"));
    }
    if us.iter().any(|&u| !(u >= 0.0)) {
        return Err(Error::invalid("barrier depth u must be >= 0"));
    }
    let deepest = us.iter().copied().fold(0.0, f64::max);
    let parts = streams.par_batches(n_paths, 4096, |rng, range| {
        let mut hits = vec![0u64; us.len()];
        for _ in range {
            let out = walk.run(rng, 0.0, n, -deepest, None);
            for (h, &u) in hits.iter_mut().zip(us) {
                if out.min >= -u {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut total = vec![0u64; us.len()];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(t, h)| *t += h);
    }
    Ok(total.into_iter().map(|h| Proportion::new(h, n_paths as u64)).collect())
}

/// Survivor endpoints `(S_n + u)/(σ√n)` of `min ≥ −u`, by rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample {
    pub values: Vec<f64>,
    pub trials: usize,
    pub u: f64,
    pub n: usize,
}

impl ConditionedSample {
    pub fn survival(&self) -> Proportion {
        Proportion::new(self.values.len() as u64, self.trials as u64)
    }

    pub fn mean(&self) -> Estimate {
        Moments::from_slice(&self.values).estimate()
    }
}

/// Minimum survivor count below which the conditioned sample is refused.
pub const MIN_SURVIVORS: usize = 100;

/// Endpoint law of the walk conditioned on `min_{i≤n} S_i ≥ −u`.
///
/// Sampled by rejection from `n_paths` trials. Killed walks stop at the
/// first crossing, so a trial costs `O(√n)` steps on average.
pub fn conditioned_endpoint_law(walk: &WalkLaw, u: f64, n: usize, n_paths: usize, streams: &Streams) -> Result<ConditionedSample> {
    if n == 0 || !(u >= 0.0) {
        return Err(Error::invalid("conditioned_endpoint_law needs n >= 1 and u >= 0"));
    }
    let scale = walk.sigma() * (n as f64).sqrt();
    let parts = streams.par_batches(n_paths, 4096, |rng, range| {
        let mut v = Vec::new();
        for _ in range {
            let out = walk.run(rng, 0.0, n, -u, None);
            if out.survived {
                v.push((out.end + u) / scale);
            }
        }
        v
    });
    let values: Vec<f64> = parts.into_iter().flatten().collect();
    if values.len() < MIN_SURVIVORS {
        return Err(Error::TooFewSurvivors { found: values.len(), required: MIN_SURVIVORS });
    }
    Ok(ConditionedSample { values, trials: n_paths, u, n })
}

/// One path under `P_u` with its `P⁺_u` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    /// Visited positions, `path[0] = u`. A killed path stops at the crossing.
    pub path: Vec<f64>,
    /// `R(S_n)/R(u)` on survival of `min ≥ 0`, else 0.
    pub weight: f64,
    /// `S_n` fell outside the table; the weight used the clamped value.
    pub range_exceeded: bool,
}

/// Sample from `P⁺_u(B) = E_u[R(S_n) 1_B 1{min ≥ 0}] / R(u)` by weighting.
pub fn hplus_sampler(walk: &WalkLaw, table: &RenewalTable, u: f64, n: usize, rng: &mut Rng) -> WeightedPath {
    let mut path = Vec::with_capacity(n + 1);
    let out = walk.run(rng, u, n, 0.0, Some(&mut path));
    if !out.survived {
        return WeightedPath { path, weight: 0.0, range_exceeded: false };
    }
    let range_exceeded = !table.covers(out.end);
    let end = out.end.min(table.max_u());
    WeightedPath { path, weight: table.eval(end) / table.eval(u), range_exceeded }
}

/// Batch summary of [`hplus_sampler`].
#[derive(Debug, Clone, PartialEq)]
pub struct HplusBatch {
    /// Plain mean of the weights over all trials (1 in expectation).
    pub mean_weight: Estimate,
    /// Self-normalised `P⁺` means of the requested functionals on the
    /// `σ√n`-rescaled grid.
    pub functionals: Vec<(GridFunctional, Estimate)>,
    /// `(weight, S_n/(σ√n))` for every surviving path.
    pub endpoints: Vec<(f64, f64)>,
    pub ess: f64,
    pub range_exceeded: usize,
}

pub fn hplus_batch(
    walk: &WalkLaw,
    table: &RenewalTable,
    u: f64,
    n: usize,
    n_paths: usize,
    m: usize,
    functionals: &[GridFunctional],
    streams: &Streams,
) -> Result<HplusBatch> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("hplus_batch needs n >= 1 and m >= 1"));
    }
    let scaling = PathScaling::diffusive(n, walk.sigma());
    let parts = streams.par_batches(n_paths, 1024, |rng, range| {
        let mut w = Moments::default();
        let mut fs = vec![WeightedMoments::default(); functionals.len()];
        let mut ends = Vec::new();
        let mut exceeded = 0;
        let mut grid = Vec::with_capacity(m + 1);
        for _ in range {
            let p = hplus_sampler(walk, table, u, n, rng);
            w.push(p.weight);
            exceeded += usize::from(p.range_exceeded);
            if p.weight > 0.0 {
                project_into(&p.path, m, &scaling, &mut grid);
                for (acc, f) in fs.iter_mut().zip(functionals) {
                    acc.push(p.weight, f.eval(&grid));
                }
                ends.push((p.weight, *p.path.last().unwrap() / scaling.scale));
            }
        }
        (w, fs, ends, exceeded)
    });
    let mut w = Moments::default();
    let mut fs = vec![WeightedMoments::default(); functionals.len()];
    let mut endpoints = Vec::new();
    let mut range_exceeded = 0;
    for (pw, pf, pe, px) in parts {
        w = w.merge(pw);
        fs = fs.into_iter().zip(pf).map(|(a, b)| a.merge(b)).collect();
        endpoints.extend(pe);
        range_exceeded += px;
    }
    if endpoints.is_empty() {
        return Err(Error::ZeroHits);
    }
    let ess = fs.first().map_or(0.0, |f| f.ess());
    Ok(HplusBatch {
        mean_weight: w.estimate(),
        functionals: functionals.iter().copied().zip(fs.iter().map(|f| f.normalized())).collect(),
        endpoints,
        ess,
        range_exceeded,
    })
}
