//! Two-barrier window probabilities `E[F(S) 1{min_{≤k} ≥ −u, min_{k..n} ≥ v,
//! S_n ∈ [v+b, v+b+h)}]` with `k = ⌊λn⌋`.
//!
//! The event has probability of order `n^{−3/2}`, far too small for direct
//! simulation at `n = 4096`. We split the path at `k`: forward walks from 0
//! survive the first barrier up to `k`, backward walks (steps of `S⁻`) start
//! at a uniform point of the window and stay above `v` for `n−k−1` steps.
//! Every forward/backward pair is joined by one step with its exact density
//! (mass, for lattice walks), which gives an unbiased two-sample U-statistic.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RwConstants, StepLaw, WalkLaw};
use crate::error::{Error, Result};
use crate::functional::{grid_index, GridFunctional, GridSummary};
use crate::rng::Streams;
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBarrierSpec {
    pub u: f64,
    pub v: f64,
    pub b: f64,
    /// Window width. Lattice walks use the single lattice point in the window.
    pub h: f64,
    pub lambda: f64,
    pub n: usize,
    /// Grid size for path functionals.
    pub m: usize,
    pub n_forward: usize,
    pub n_backward: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoBarrierEstimate {
    /// Estimate for `F ≡ 1`.
    pub value: Estimate,
    pub by_functional: Vec<(GridFunctional, Estimate)>,
    pub forward_survivors: usize,
    pub backward_survivors: usize,
    /// The endpoint used for lattice walks.
    pub lattice_point: Option<f64>,
}

impl TwoBarrierEstimate {
    pub fn get(&self, f: GridFunctional) -> Option<Estimate> {
        self.by_functional.iter().find(|(g, _)| *g == f).map(|(_, e)| *e)
    }
}

const GROUPS: usize = 16;
/// Gaussian junction kernel is cut at this many step standard deviations.
const KERNEL_CUTOFF: f64 = 12.0;
const LATTICE_TOL: f64 = 1e-7;
/// Partners per backward half and step atom. Denser matches are subsampled
/// uniformly and reweighted, which keeps the estimator unbiased.
const MAX_PARTNERS: usize = 512;

struct Half {
    key: f64,
    group: usize,
    summary: GridSummary,
}

fn lattice_point(walk: &WalkLaw, spec: &TwoBarrierSpec) -> Result<Option<f64>> {
    let Some(l) = walk.lattice else { return Ok(None) };
    let origin = l.offset * spec.n as f64;
    let lo = spec.v + spec.b;
    let y = origin + l.span * ((lo - origin) / l.span - 1e-9).ceil();
    if y >= lo + spec.h.max(l.span) - 1e-9 {
        return Err(Error::invalid("window contains no lattice point"));
    }
    Ok(Some(y))
}

pub fn two_barrier_endpoint_estimate(
    walk: &WalkLaw,
    spec: &TwoBarrierSpec,
    functionals: &[GridFunctional],
    streams: &Streams,
) -> Result<TwoBarrierEstimate> {
    let n = spec.n;
    if !(spec.lambda > 0.0 && spec.lambda < 1.0) {
        return Err(Error::invalid("two-barrier split needs 0 < lambda < 1"));
    }
    let k = (spec.lambda * n as f64).floor() as usize;
    if k == 0 || k + 1 > n || spec.m == 0 {
        return Err(Error::invalid(format!("n = {n} too small for lambda = {}", spec.lambda)));
    }
    if !(spec.h > 0.0) {
        return Err(Error::invalid("window width h must be > 0"));
    }
    let lat = lattice_point(walk, spec)?;
    let scale = walk.sigma() * (n as f64).sqrt();
    let m = spec.m;
    let split = (0..=m).position(|j| grid_index(j, m, n) > k).unwrap_or(m + 1);
    let back = walk.negated();

    // Forward halves: 0 → S_k above −u, keyed by S_k.
    let fwd_parts = streams.child("forward").par_batches(spec.n_forward, 2048, |rng, range| {
        let mut out = Vec::new();
        let mut path = Vec::with_capacity(k + 1);
        for i in range {
            let r = walk.run(rng, 0.0, k, -spec.u, Some(&mut path));
            if r.survived && r.end >= spec.v {
                let g: Vec<f64> = (0..split).map(|j| path[grid_index(j, m, n)] / scale).collect();
                out.push(Half { key: r.end, group: i % GROUPS, summary: GridSummary::of(&g) });
            }
        }
        out
    });
    let mut fwd: Vec<Half> = fwd_parts.into_iter().flatten().collect();
    fwd.sort_by(|a, b| a.key.total_cmp(&b.key));

    // Backward halves: S_n = y down to S_{k+1}, above v, keyed by S_{k+1}.
    let steps_back = n - k - 1;
    let bwd_parts = streams.child("backward").par_batches(spec.n_backward, 2048, |rng, range| {
        let mut out = Vec::new();
        let mut path = Vec::with_capacity(steps_back + 1);
        for i in range {
            let y = lat.unwrap_or_else(|| spec.v + spec.b + spec.h * rng.random::<f64>());
            let r = back.run(rng, y, steps_back, spec.v, Some(&mut path));
            if r.survived {
                let g: Vec<f64> = (split..=m).map(|j| path[n - grid_index(j, m, n)] / scale).collect();
                let summary = if g.is_empty() { GridSummary { count: 0, sum: 0.0, max: f64::NEG_INFINITY, positive: 0, first: 0.0, last: 0.0 } } else { GridSummary::of(&g) };
                out.push(Half { key: r.end, group: i % GROUPS, summary });
            }
        }
        out
    });
    let bwd: Vec<Half> = bwd_parts.into_iter().flatten().collect();

    let mut fs: Vec<GridFunctional> = vec![GridFunctional::One];
    fs.extend(functionals.iter().copied().filter(|f| *f != GridFunctional::One));
    let nf = fs.len();

    // sums[gb][gf][f]
    let fwd_keys: Vec<f64> = fwd.iter().map(|h| h.key).collect();
    let join = |a: &GridSummary, b: &GridSummary| if b.count == 0 { *a } else { a.join(b) };
    let sums: Vec<Vec<f64>> = (0..GROUPS)
        .into_par_iter()
        .map(|gb| {
            let mut acc = vec![0.0; GROUPS * nf];
            let mut rng = streams.child("pairs").rng(gb as u64);
            let mut add = |x: &Half, z: &Half, w: f64| {
                let s = join(&x.summary, &z.summary);
                for (fi, f) in fs.iter().enumerate() {
                    acc[x.group * nf + fi] += w * f.eval_summary(&s);
                }
            };
            let visit = |lo: usize, hi: usize, rng: &mut crate::rng::Rng, add: &mut dyn FnMut(&Half, f64)| {
                let len = hi - lo;
                if len <= MAX_PARTNERS {
                    fwd[lo..hi].iter().for_each(|x| add(x, 1.0));
                } else {
                    let w = len as f64 / MAX_PARTNERS as f64;
                    for _ in 0..MAX_PARTNERS {
                        add(&fwd[rng.random_range(lo..hi)], w);
                    }
                }
            };
            for z in bwd.iter().filter(|h| h.group == gb) {
                match &walk.step {
                    StepLaw::Gaussian { mean, sd } => {
                        let lo = fwd_keys.partition_point(|&x| x < z.key - mean - KERNEL_CUTOFF * sd);
                        let hi = fwd_keys.partition_point(|&x| x <= z.key - mean + KERNEL_CUTOFF * sd);
                        visit(lo, hi, &mut rng, &mut |x, w| add(x, z, w * walk.step_weight(z.key - x.key, 0.0)));
                    }
                    StepLaw::Discrete { values, probs, .. } => {
                        for (s, p) in values.iter().zip(probs) {
                            let t = z.key - s;
                            let lo = fwd_keys.partition_point(|&x| x < t - LATTICE_TOL);
                            let hi = fwd_keys.partition_point(|&x| x <= t + LATTICE_TOL);
                            visit(lo, hi, &mut rng, &mut |x, w| add(x, z, w * p));
                        }
                    }
                }
            }
            acc
        })
        .collect();

    if sums.iter().all(|row| row.iter().step_by(nf).all(|&v| v == 0.0)) {
        return Err(Error::ZeroHits);
    }

    let width = if lat.is_some() { 1.0 } else { spec.h };
    let count = |total: usize, g: usize| (total / GROUPS + usize::from(g < total % GROUPS)) as f64;
    let nfw = spec.n_forward as f64;
    let nbw = spec.n_backward as f64;
    let by_functional = fs
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let s = |gb: usize, gf: usize| sums[gb][gf * nf + fi];
            let total: f64 = (0..GROUPS).flat_map(|gb| (0..GROUPS).map(move |gf| (gb, gf))).map(|(gb, gf)| s(gb, gf)).sum();
            let value = width * total / (nfw * nbw);
            // Delete-one-group jackknife over matched forward/backward groups.
            let loo: Vec<f64> = (0..GROUPS)
                .map(|g| {
                    let row: f64 = (0..GROUPS).map(|gf| s(g, gf)).sum();
                    let col: f64 = (0..GROUPS).map(|gb| s(gb, g)).sum();
                    let rest = total - row - col + s(g, g);
                    width * rest / ((nfw - count(spec.n_forward, g)) * (nbw - count(spec.n_backward, g)))
                })
                .collect();
            let mean = loo.iter().sum::<f64>() / GROUPS as f64;
            let var = loo.iter().map(|t| (t - mean).powi(2)).sum::<f64>() * (GROUPS - 1) as f64 / GROUPS as f64;
            (*f, Estimate { value, se: var.sqrt(), count: (spec.n_forward + spec.n_backward) as u64 })
        })
        .collect::<Vec<_>>();

    Ok(TwoBarrierEstimate {
        value: by_functional[0].1,
        by_functional: by_functional.into_iter().filter(|(f, _)| *f == GridFunctional::One || functionals.contains(f)).collect(),
        forward_survivors: fwd.len(),
        backward_survivors: bwd.len(),
        lattice_point: lat,
    })
}

/// Asymptotic value for `F ≡ 1`:
/// `√(π/2) (θθ⁻/σ) R(u) n^{−3/2} ∫_b^{b+h} R⁻`, the integral replaced by
/// `span · R⁻(y − v)` for a lattice walk with endpoint `y`.
pub fn two_barrier_target(constants: &RwConstants, walk: &WalkLaw, spec: &TwoBarrierSpec) -> Result<f64> {
    let pre = (std::f64::consts::PI / 2.0).sqrt() * constants.theta.value * constants.theta_minus.value / constants.sigma
        * constants.table.eval(spec.u)
        * (spec.n as f64).powf(-1.5);
    let mass = match (lattice_point(walk, spec)?, walk.lattice) {
        (Some(y), Some(l)) => l.span * constants.table_minus.eval(y - spec.v),
        _ => constants.table_minus.integral(spec.b, spec.b + spec.h),
    };
    Ok(pre * mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::ReproductionLaw;
    use crate::walk::walk_from_reproduction;

    /// Exact value for a two-point walk by enumerating all `2^n` paths.
    fn brute_force(walk: &WalkLaw, spec: &TwoBarrierSpec, y: f64, f: GridFunctional) -> f64 {
        let StepLaw::Discrete { values, probs, .. } = &walk.step else { panic!() };
        let n = spec.n;
        let k = (spec.lambda * n as f64).floor() as usize;
        let scale = walk.sigma() * (n as f64).sqrt();
        let mut total = 0.0;
        let mut path = vec![0.0; n + 1];
        for bits in 0u32..(1 << n) {
            let mut p = 1.0;
            for i in 0..n {
                let c = ((bits >> i) & 1) as usize;
                path[i + 1] = path[i] + values[c];
                p *= probs[c];
            }
            let ok = path[..=k].iter().all(|&s| s >= -spec.u)
                && path[k..].iter().all(|&s| s >= spec.v)
                && (path[n] - y).abs() < 1e-7;
            if ok {
                let g: Vec<f64> = (0..=spec.m).map(|j| path[grid_index(j, spec.m, n)] / scale).collect();
                total += p * f.eval(&g);
            }
        }
        total
    }

    #[test]
    fn lattice_walk_matches_enumeration() {
        let walk = walk_from_reproduction(&ReproductionLaw::two_config()).unwrap();
        let span = walk.lattice.unwrap().span;
        let spec = TwoBarrierSpec {
            u: 0.5,
            v: -0.3,
            b: 0.4,
            h: span,
            lambda: 0.5,
            n: 14,
            m: 7,
            n_forward: 100_000,
            n_backward: 100_000,
        };
        let est = two_barrier_endpoint_estimate(&walk, &spec, &[GridFunctional::Sup], &Streams::new(9, "bf")).unwrap();
        let y = est.lattice_point.unwrap();
        for f in [GridFunctional::One, GridFunctional::Sup] {
            let exact = brute_force(&walk, &spec, y, f);
            let e = est.get(f).unwrap();
            assert!(exact > 0.0);
            assert!(e.within_se(exact, 4.0), "{f:?}: {e:?} vs exact {exact}");
        }
    }

    #[test]
    fn gaussian_matches_direct_simulation() {
        let walk = walk_from_reproduction(&ReproductionLaw::gaussian_dyadic()).unwrap();
        let spec = TwoBarrierSpec { u: 1.0, v: 0.5, b: 0.5, h: 2.0, lambda: 0.5, n: 16, m: 16, n_forward: 50_000, n_backward: 50_000 };
        let est = two_barrier_endpoint_estimate(&walk, &spec, &[], &Streams::new(3, "g")).unwrap();
        let k = 8;
        let parts = Streams::new(3, "direct").par_batches(2_000_000, 8192, |rng, range| {
            let mut path = Vec::new();
            range
                .filter(|_| {
                    walk.run(rng, 0.0, 16, -spec.u, Some(&mut path));
                    path.len() == 17
                        && path[k..].iter().all(|&s| s >= spec.v)
                        && path[16] >= spec.v + spec.b
                        && path[16] < spec.v + spec.b + spec.h
                })
                .count()
        });
        let hits: usize = parts.iter().sum();
        let direct = crate::stats::Proportion::new(hits as u64, 2_000_000).estimate();
        assert!(est.value.agrees_with(&direct, 4.0), "{:?} vs {:?}", est.value, direct);
    }

    #[test]
    fn shrinking_window_goes_to_zero() {
        let walk = walk_from_reproduction(&ReproductionLaw::gaussian_dyadic()).unwrap();
        let mut last = f64::INFINITY;
        for h in [1.0, 0.25, 0.0625, 0.015625] {
            let spec = TwoBarrierSpec { u: 0.0, v: 0.0, b: 0.0, h, lambda: 0.5, n: 64, m: 16, n_forward: 50_000, n_backward: 50_000 };
            let e = two_barrier_endpoint_estimate(&walk, &spec, &[], &Streams::new(4, "h")).unwrap();
            assert!(e.value.value < last);
            last = e.value.value;
        }
        assert!(last < 1e-3);
    }
}
