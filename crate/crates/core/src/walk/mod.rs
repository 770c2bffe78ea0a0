//! The centred random walk associated with a boundary-case BRW.
//!
//! One step of the walk has the `e^{−V}`-tilted displacement law
//! `E[h(S₁)] = E[Σ_{|z|=1} h(V(z)) e^{−V(z)}]`.

mod ballot;
mod conditioned;
mod excursion;
mod limits;
mod renewal;

pub use ballot::{ballot_scaling, lower_envelope_profile, stone_llt_check, BallotScaling, EnvelopeProfile, LltCheck};
pub use conditioned::{
    conditioned_endpoint_law, hplus_batch, hplus_sampler, survival_probability, survival_profile, ConditionedSample,
    HplusBatch, WeightedPath,
};
pub use excursion::{two_barrier_endpoint_estimate, two_barrier_target, TwoBarrierEstimate, TwoBarrierSpec};
pub use limits::{
    meander_laplace, sample_excursion_vervaat, sample_limit_path, LimitKind, LimitPath,
};
pub use renewal::{
    estimate_constants, ladder_heights, renewal_function, ConstantsBudget, LadderSample, RenewalDirection,
    RenewalTable, RwConstants, DEFAULT_STEP_BUDGET,
};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::laws::{Lattice, LawKind, ReproductionLaw, EXACT_TOLERANCE};
use crate::rng::Rng;

/// Law of a single step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepLaw {
    Gaussian { mean: f64, sd: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64>, cumulative: Vec<f64> },
}

impl StepLaw {
    /// Merge equal atoms (within 1e-12) and build the cumulative table.
    pub fn discrete(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<StepLaw> {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (v, p) in atoms {
            if p <= 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(w, _)| (w - v).abs() <= 1e-12 * (1.0 + v.abs())) {
                Some(slot) => slot.1 += p,
                None => merged.push((v, p)),
            }
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if merged.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("step probabilities sum to {total}")));
        }
        let values = merged.iter().map(|a| a.0).collect();
        let probs: Vec<f64> = merged.iter().map(|a| a.1 / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(StepLaw::Discrete { values, probs, cumulative })
    }

    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            StepLaw::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            StepLaw::Discrete { values, cumulative, .. } => {
                let u: f64 = rng.random();
                let i = cumulative.iter().position(|&c| u < c).unwrap_or(values.len() - 1);
                values[i]
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            StepLaw::Gaussian { mean, .. } => *mean,
            StepLaw::Discrete { values, probs, .. } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            StepLaw::Gaussian { sd, .. } => sd * sd,
            StepLaw::Discrete { values, probs, .. } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m).powi(2)).sum()
            }
        }
    }

    pub fn negated(&self) -> StepLaw {
        match self {
            StepLaw::Gaussian { mean, sd } => StepLaw::Gaussian { mean: -mean, sd: *sd },
            StepLaw::Discrete { values, probs, .. } => {
                StepLaw::discrete(values.iter().zip(probs).map(|(v, p)| (-v, *p))).expect("negation keeps mass")
            }
        }
    }
}

/// The associated random walk `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkLaw {
    pub step: StepLaw,
    pub sigma_sq: f64,
    pub lattice: Option<Lattice>,
    /// Name of the reproduction law this walk was tilted from.
    pub tilt_origin: String,
}

impl WalkLaw {
    pub fn new(step: StepLaw, lattice: Option<Lattice>, origin: &str) -> Self {
        let sigma_sq = step.variance();
        WalkLaw { step, sigma_sq, lattice, tilt_origin: origin.to_string() }
    }

    pub fn gaussian(sd: f64) -> Self {
        WalkLaw::new(StepLaw::Gaussian { mean: 0.0, sd }, None, "gaussian")
    }

    /// Simple symmetric ±1 walk, `(2, 1)`-lattice. Test law.
    pub fn simple_lattice() -> Self {
        WalkLaw::new(
            StepLaw::discrete([(-1.0, 0.5), (1.0, 0.5)]).unwrap(),
            Some(Lattice { span: 2.0, offset: 1.0 }),
            "simple_pm1",
        )
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// The walk `S⁻` with negated steps.
    pub fn negated(&self) -> WalkLaw {
        WalkLaw {
            step: self.step.negated(),
            sigma_sq: self.sigma_sq,
            lattice: self.lattice.map(|l| Lattice { span: l.span, offset: -l.offset }),
            tilt_origin: format!("{}(negated)", self.tilt_origin),
        }
    }

    #[inline]
    pub fn sample_step(&self, rng: &mut Rng) -> f64 {
        self.step.sample(rng)
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.step, StepLaw::Discrete { .. })
    }

    /// Step density (continuous laws) or probability mass (discrete laws)
    /// at `x`. Atoms are matched with absolute tolerance `tol`.
    pub fn step_weight(&self, x: f64, tol: f64) -> f64 {
        match &self.step {
            StepLaw::Gaussian { mean, sd } => crate::stats::normal_pdf((x - mean) / sd) / sd,
            StepLaw::Discrete { values, probs, .. } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| (*v - x).abs() <= tol)
                .map(|(_, p)| *p)
                .sum(),
        }
    }

    /// Simulate `n` steps from `start`, stopping early once the walk drops
    /// strictly below `barrier`. Visited positions are appended to `path`
    /// when given (the start included).
    #[inline]
    pub fn run(&self, rng: &mut Rng, start: f64, n: usize, barrier: f64, mut path: Option<&mut Vec<f64>>) -> RunOutcome {
        let mut s = start;
        if let Some(p) = path.as_deref_mut() {
            p.clear();
            p.push(s);
        }
        if s < barrier {
            return RunOutcome { survived: false, end: s, min: s, steps: 0 };
        }
        let mut min = s;
        for i in 1..=n {
            s += self.sample_step(rng);
            if let Some(p) = path.as_deref_mut() {
                p.push(s);
            }
            if s < min {
                min = s;
                if s < barrier {
                    return RunOutcome { survived: false, end: s, min, steps: i };
                }
            }
        }
        RunOutcome { survived: true, end: s, min, steps: n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub survived: bool,
    pub end: f64,
    pub min: f64,
    pub steps: usize,
}

/// Build the associated walk of an accepted reproduction law.
///
/// Gaussian laws tilt in closed form: `Normal(m, s²)` weighted by `e^{−x}`
/// is `Normal(m − s², s²)`. Table laws tilt exactly by summing
/// `p_c e^{−d}` over every atom of every configuration.
pub fn walk_from_reproduction(law: &ReproductionLaw) -> Result<WalkLaw> {
    let (psi, dpsi, _) = law.psi_derivatives(1.0);
    if psi.abs() > EXACT_TOLERANCE || dpsi.abs() > EXACT_TOLERANCE {
        return Err(Error::invalid(format!(
            "law `{}` is not in the boundary case (Ψ(1) = {psi:e}, Ψ'(1) = {dpsi:e})",
            law.name
        )));
    }
    let step = match &law.kind {
        LawKind::IidGaussian { mean, variance, .. } => StepLaw::Gaussian { mean: mean - variance, sd: variance.sqrt() },
        LawKind::Table(t) => StepLaw::discrete(
            t.configs()
                .iter()
                .flat_map(|c| c.displacements.iter().map(move |&d| (d, c.prob * (-d).exp()))),
        )?,
    };
    Ok(WalkLaw::new(step, law.lattice, &law.name))
}

/// Default restart guard of the rejection sampler.
pub const MAX_RESTARTS: usize = 1_000_000;

/// Generic rejection sampler for one tilted step: draw a configuration,
/// accept it with probability `X / X_max` where `X = Σ e^{−V}`, then choose a
/// child with probability `e^{−V_j}/X`. Needs a bounded `X`, hence table laws.
pub fn tilted_step_rejection(law: &ReproductionLaw, rng: &mut Rng, max_restarts: usize) -> Result<f64> {
    let table = law.table().ok_or(Error::UnsupportedLaw { law: law.name.clone(), what: "rejection tilting" })?;
    let x_max = table
        .configs()
        .iter()
        .map(|c| c.displacements.iter().map(|d| (-d).exp()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut buf = Vec::new();
    for _ in 0..max_restarts {
        law.sample_into(rng, &mut buf);
        let x: f64 = buf.iter().map(|d| (-d).exp()).sum();
        if x > 0.0 && rng.random::<f64>() * x_max < x {
            let mut u = rng.random::<f64>() * x;
            for &d in &buf {
                u -= (-d).exp();
                if u < 0.0 {
                    return Ok(d);
                }
            }
            return Ok(*buf.last().unwrap());
        }
    }
    Err(Error::RejectionBudget { max_restarts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::stats::Moments;

    #[test]
    fn gaussian_dyadic_walk_is_centred_normal() {
        let w = walk_from_reproduction(&ReproductionLaw::gaussian_dyadic()).unwrap();
        let m = 2.0 * std::f64::consts::LN_2;
        assert_eq!(w.step, StepLaw::Gaussian { mean: 0.0, sd: m.sqrt() });
        assert!((w.sigma_sq - m).abs() < 1e-15);
    }

    #[test]
    fn two_config_walk_is_two_point() {
        let law = ReproductionLaw::two_config();
        let w = walk_from_reproduction(&law).unwrap();
        let StepLaw::Discrete { values, probs, .. } = &w.step else { panic!() };
        assert_eq!(values.len(), 2);
        let x = crate::laws::two_config_root();
        assert!((probs[0] - 0.5 * x).abs() < 1e-12);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
        assert!(w.step.mean().abs() < 1e-12);
        assert!((w.sigma_sq - 0.645_661_451_593_239_6).abs() < 1e-10);
    }

    #[test]
    fn mc_moments_match_walk_law() {
        let w = walk_from_reproduction(&ReproductionLaw::gaussian_dyadic()).unwrap();
        let s = Streams::new(3, "walk-moments");
        let parts = s.par_batches(1_000_000, 65536, |rng, r| {
            let mut m = Moments::default();
            let mut m2 = Moments::default();
            for _ in r {
                let x = w.sample_step(rng);
                m.push(x);
                m2.push(x * x);
            }
            (m, m2)
        });
        let (m, m2) = parts.into_iter().fold((Moments::default(), Moments::default()), |a, b| (a.0.merge(b.0), a.1.merge(b.1)));
        assert!(m.estimate().within_se(0.0, 3.0));
        assert!(m2.estimate().within_se(w.sigma_sq, 3.0));
    }

    #[test]
    fn rejection_tilting_matches_exact_table() {
        let law = ReproductionLaw::two_config();
        let s = Streams::new(5, "rej");
        let mut rng = s.rng(0);
        let n = 100_000;
        let d1 = law.enumerate_configs().unwrap()[0].1[0];
        let hits = (0..n)
            .filter(|_| (tilted_step_rejection(&law, &mut rng, MAX_RESTARTS).unwrap() - d1).abs() < 1e-12)
            .count();
        let p = 0.5 * crate::laws::two_config_root();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
        assert!(tilted_step_rejection(&ReproductionLaw::gaussian_dyadic(), &mut rng, 10).is_err());
    }

    #[test]
    fn non_boundary_law_rejected() {
        let law = ReproductionLaw::iid_gaussian("off", 2, 1.0, 1.0).unwrap();
        assert!(walk_from_reproduction(&law).is_err());
    }

    #[test]
    fn run_stops_below_barrier() {
        let w = WalkLaw::simple_lattice();
        let mut rng = Streams::new(1, "run").rng(0);
        let mut path = Vec::new();
        for _ in 0..100 {
            let out = w.run(&mut rng, 0.0, 50, 0.0, Some(&mut path));
            assert_eq!(path.len(), out.steps + 1);
            if !out.survived {
                assert_eq!(*path.last().unwrap(), -1.0);
            }
        }
    }
}
