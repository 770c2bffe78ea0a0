//! Local limit, ballot and lower-envelope checks.

use serde::{Deserialize, Serialize};

use super::{two_barrier_endpoint_estimate, TwoBarrierSpec, WalkLaw};
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::{linear_fit, Estimate, Proportion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LltCheck {
    pub estimate: Proportion,
    /// `h/(σ√(2πn)) e^{−b²/(2σ²n)}`.
    pub target: f64,
}

impl LltCheck {
    pub fn ratio(&self) -> f64 {
        self.estimate.value / self.target
    }
}

/// `P(S_n ∈ [b, b+h))` against the local limit theorem. For lattice walks
/// `h` should be the span.
pub fn stone_llt_check(walk: &WalkLaw, b: f64, h: f64, n: usize, n_paths: usize, streams: &Streams) -> Result<LltCheck> {
    if n == 0 || !(h > 0.0) {
        return Err(Error::invalid("stone_llt_check needs n >= 1 and h > 0"));
    }
    let parts = streams.par_batches(n_paths, 1024, |rng, range| {
        range
            .filter(|_| {
                let s = walk.run(rng, 0.0, n, f64::NEG_INFINITY, None).end;
                s >= b && s < b + h
            })
            .count() as u64
    });
    let hits = parts.iter().sum();
    let var = walk.sigma_sq * n as f64;
    let target = h / (2.0 * std::f64::consts::PI * var).sqrt() * (-b * b / (2.0 * var)).exp();
    Ok(LltCheck { estimate: Proportion::new(hits, n_paths as u64), target })
}

/// `n^{3/2} P(S_n ∈ [a−u, b−u], min ≥ −u)` across `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotScaling {
    pub ns: Vec<usize>,
    /// Rescaled probabilities `n^{3/2} P`.
    pub scaled: Vec<Estimate>,
    /// Slope of `log(n^{3/2} P)` against `log n`, and its standard error.
    pub slope: f64,
    pub slope_se: f64,
}

impl BallotScaling {
    pub fn bounded(&self, tol: f64) -> bool {
        self.slope.abs() <= tol
    }
}

/// Ballot probabilities through the two-barrier estimator with `v = −u`.
pub fn ballot_scaling(
    walk: &WalkLaw,
    u: f64,
    a: f64,
    b: f64,
    ns: &[usize],
    n_paths: usize,
    streams: &Streams,
) -> Result<BallotScaling> {
    if !(b > a) || ns.len() < 2 {
        return Err(Error::invalid("ballot_scaling needs b > a and at least two n"));
    }
    let mut scaled = Vec::new();
    for &n in ns {
        let spec = TwoBarrierSpec { u, v: -u, b: a, h: b - a, lambda: 0.5, n, m: 2, n_forward: n_paths, n_backward: n_paths };
        let e = two_barrier_endpoint_estimate(walk, &spec, &[], &streams.child(&format!("n{n}")))?;
        scaled.push(e.value.scale((n as f64).powf(1.5)));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = scaled.iter().map(|e| e.value.ln()).collect();
    let (_, slope, _) = linear_fit(&xs, &ys);
    // Propagate the per-point relative errors through the slope.
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope_se = xs
        .iter()
        .zip(&scaled)
        .map(|(x, e)| ((x - mx) / sxx * e.se / e.value).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(BallotScaling { ns: ns.to_vec(), scaled, slope, slope_se })
}

/// Conditional probability of touching the lower envelope
/// `m_i = −u + r_i − μ` (`i < ℓ`), `v + r_{n−i} − μ` (`i ≥ ℓ`),
/// given the window event, for several `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeProfile {
    pub mus: Vec<f64>,
    pub touch: Vec<Proportion>,
    pub events: usize,
}

impl EnvelopeProfile {
    pub fn nonincreasing(&self) -> bool {
        self.touch.windows(2).all(|w| w[1].value <= w[0].value)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn lower_envelope_profile(
    walk: &WalkLaw,
    n: usize,
    ell: usize,
    u: f64,
    v: f64,
    b: f64,
    r_exponent: f64,
    mus: &[f64],
    n_paths: usize,
    streams: &Streams,
) -> Result<EnvelopeProfile> {
    if ell == 0 || ell >= n {
        return Err(Error::invalid("envelope split must satisfy 0 < ell < n"));
    }
    let r = |i: usize| (i as f64).powf(r_exponent);
    let parts = streams.par_batches(n_paths, 4096, |rng, range| {
        // For each event path, the largest μ at which it still touches.
        let mut depth = Vec::new();
        'path: for _ in range {
            let mut s = 0.0;
            let mut d = -u - s; // i = 0, r_0 = 0
            for i in 1..=n {
                s += walk.sample_step(rng);
                if (i <= ell && s < -u) || (i >= ell && s < v) {
                    continue 'path;
                }
                let m0 = if i < ell { -u + r(i) } else { v + r(n - i) };
                d = d.max(m0 - s);
            }
            if s >= b + v && s <= b + v + 1.0 {
                depth.push(d);
            }
        }
        depth
    });
    let depth: Vec<f64> = parts.into_iter().flatten().collect();
    if depth.is_empty() {
        return Err(Error::ZeroHits);
    }
    let touch = mus
        .iter()
        .map(|&mu| Proportion::new(depth.iter().filter(|&&d| d >= mu).count() as u64, depth.len() as u64))
        .collect();
    Ok(EnvelopeProfile { mus: mus.to_vec(), touch, events: depth.len() })
}
