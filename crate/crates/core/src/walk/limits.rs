//! Continuum reference processes on uniform grids.
//!
//! The meander is reached through the Imhof relation
//! `E[F(𝓜)] = √(π/2) E[F(𝓡)/𝓡(1)]` with `𝓡` a 3-d Bessel process, so meander
//! samples carry a weight. The excursion is the 3-d Bessel bridge from 0 to 0,
//! i.e. the norm of three independent Brownian bridges.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats::normal_cdf;

/// `E[e^{c 𝓜(1)}] = 1 + √(2π) c e^{c²/2} Φ(c)` for the meander endpoint.
pub fn meander_laplace(c: f64) -> f64 {
    if c < -3.0 {
        // √(2π) e^{c²/2} Φ(c) is the Mills ratio at x = −c.
        let x = -c;
        1.0 - x * mills_ratio(x)
    } else {
        1.0 + (2.0 * std::f64::consts::PI).sqrt() * c * (0.5 * c * c).exp() * normal_cdf(c)
    }
}

/// `(1 − Φ(x))/φ(x)` by its continued fraction, for `x ≥ 3`.
fn mills_ratio(x: f64) -> f64 {
    let mut f = x;
    for k in (1..=200).rev() {
        f = x + k as f64 / f;
    }
    1.0 / f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitKind {
    Meander,
    Bessel3,
    Excursion,
    /// 3-d Bessel bridge from `from` to 0 over `[0, length]`.
    BesselBridge { from: f64, length: f64 },
    Brownian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitPath {
    pub kind: LimitKind,
    /// `m+1` values on the uniform grid of `[0, 1]` (`[0, length]` for a
    /// Bessel bridge).
    pub samples: Vec<f64>,
    /// Importance weight; `√(π/2)/𝓡(1)` for the meander, 1 otherwise.
    pub weight: f64,
}

fn brownian_into(rng: &mut Rng, m: usize, horizon: f64, out: &mut Vec<f64>) {
    let sd = (horizon / m as f64).sqrt();
    out.clear();
    out.push(0.0);
    let mut w = 0.0;
    for _ in 0..m {
        let z: f64 = StandardNormal.sample(rng);
        w += sd * z;
        out.push(w);
    }
}

/// Brownian bridge 0 → 0 over `[0, horizon]` on `m+1` points.
fn bridge_into(rng: &mut Rng, m: usize, horizon: f64, out: &mut Vec<f64>) {
    brownian_into(rng, m, horizon, out);
    let end = out[m];
    for (j, v) in out.iter_mut().enumerate() {
        *v -= end * j as f64 / m as f64;
    }
    out[m] = 0.0;
}

fn norm3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter().zip(b).zip(c).map(|((x, y), z)| (x * x + y * y + z * z).sqrt()).collect()
}

pub fn sample_limit_path(kind: LimitKind, m: usize, rng: &mut Rng) -> Result<LimitPath> {
    if m < 2 {
        return Err(Error::invalid(format!("limit path grid needs m >= 2, got {m}")));
    }
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    let (samples, weight) = match kind {
        LimitKind::Brownian => {
            brownian_into(rng, m, 1.0, &mut a);
            (a, 1.0)
        }
        LimitKind::Bessel3 | LimitKind::Meander => {
            brownian_into(rng, m, 1.0, &mut a);
            brownian_into(rng, m, 1.0, &mut b);
            brownian_into(rng, m, 1.0, &mut c);
            let r = norm3(&a, &b, &c);
            let w = if kind == LimitKind::Meander { (std::f64::consts::PI / 2.0).sqrt() / r[m] } else { 1.0 };
            (r, w)
        }
        LimitKind::Excursion => {
            bridge_into(rng, m, 1.0, &mut a);
            bridge_into(rng, m, 1.0, &mut b);
            bridge_into(rng, m, 1.0, &mut c);
            (norm3(&a, &b, &c), 1.0)
        }
        LimitKind::BesselBridge { from, length } => {
            if !(length > 0.0) || !(from >= 0.0) {
                return Err(Error::invalid("Bessel bridge needs from >= 0 and length > 0"));
            }
            bridge_into(rng, m, length, &mut a);
            bridge_into(rng, m, length, &mut b);
            bridge_into(rng, m, length, &mut c);
            // Shift the first coordinate by the straight line from `from` to 0.
            for (j, v) in a.iter_mut().enumerate() {
                *v += from * (1.0 - j as f64 / m as f64);
            }
            (norm3(&a, &b, &c), 1.0)
        }
    };
    Ok(LimitPath { kind, samples, weight })
}

/// Excursion by the Vervaat transform of a Brownian bridge. Cross-check only.
pub fn sample_excursion_vervaat(m: usize, rng: &mut Rng) -> Result<LimitPath> {
    if m < 2 {
        return Err(Error::invalid(format!("limit path grid needs m >= 2, got {m}")));
    }
    let mut b = Vec::new();
    bridge_into(rng, m, 1.0, &mut b);
    let k = (0..m).min_by(|&i, &j| b[i].total_cmp(&b[j])).unwrap();
    let samples = (0..=m).map(|j| b[(k + j) % m] - b[k]).collect();
    Ok(LimitPath { kind: LimitKind::Excursion, samples, weight: 1.0 })
}
