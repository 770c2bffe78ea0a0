//! Declarative experiments over the near-critical regimes, the trajectory
//! limits, the random-walk calibration bundle and the overlap.
//!
//! Tree-level runs stay at `n ≤ 14`; the sharp constants are checked on the
//! spine walk, which reaches `n = 4096`. Each tree's statistic is normalised
//! by that tree's own derivative martingale at the largest simulated
//! generation, a biased stand-in for `D_∞`. Only trends are judged there.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brw::{replicate, BarrierSpec, Population, SecondBarrier};
use crate::error::{Error, Result};
use crate::functional::GridFunctional;
use crate::gibbs::{self, TrajectoryMode};
use crate::laws::{log_laplace, ReproductionLaw};
use crate::rng::{Rng, Streams};
use crate::spine::spine_w_estimator;
use crate::stats::{ks_distance, normal_cdf, quartiles, rayleigh_cdf, Estimate, Moments, WeightedMoments};
use crate::walk::{
    ballot_scaling, conditioned_endpoint_law, estimate_constants, meander_laplace, sample_limit_path, stone_llt_check,
    two_barrier_endpoint_estimate, two_barrier_target, walk_from_reproduction, ConstantsBudget, LimitKind, RwConstants,
    TwoBarrierSpec, WalkLaw,
};

pub const CONFIG_SCHEMA: &str = "brwlab.experiment/1";
pub const RESULTS_SCHEMA: &str = "brwlab.results/1";
pub const REPORT_SCHEMA: &str = "brwlab.report/1";

/// Relative tolerance for `√n/α_n = γ` in the critical window.
const GAMMA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// (i) `β_n = 1 + 1/α_n`, `√n/α_n → ∞`.
    AboveCriticalStrong,
    /// (ii) `β_n = 1 + 1/α_n`, `√n/α_n = γ`.
    CriticalWindowAbove,
    /// (iii) `β_n = 1 − 1/α_n`, `√n/α_n = γ`.
    CriticalWindowBelow,
    /// (iv) `β_n = 1 − 1/α_n`, `√n/α_n → ∞`.
    BelowCriticalWeak,
    FixedBeta,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::AboveCriticalStrong => "i",
            Regime::CriticalWindowAbove => "ii",
            Regime::CriticalWindowBelow => "iii",
            Regime::BelowCriticalWeak => "iv",
            Regime::FixedBeta => "fixed",
        }
    }
}

/// `α_n` as a closed form in `n` (natural log throughout).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaSchedule {
    /// `α_n = n^p`.
    Power { p: f64 },
    /// `α_n = √n/γ`; `γ = 0` means `α_n = ∞`, i.e. `β_n = 1`.
    SqrtOverGamma { gamma: f64 },
    /// `α_n = log n`.
    Log,
}

impl AlphaSchedule {
    pub fn alpha(&self, n: f64) -> f64 {
        match *self {
            AlphaSchedule::Power { p } => n.powf(p),
            AlphaSchedule::SqrtOverGamma { gamma } => {
                if gamma == 0.0 {
                    f64::INFINITY
                } else {
                    n.sqrt() / gamma
                }
            }
            AlphaSchedule::Log => n.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub schedule: Option<AlphaSchedule>,
    /// Required in the critical window.
    pub gamma: Option<f64>,
    /// `fixed-beta` only; defaults to 1.
    pub beta: Option<f64>,
    pub n_list: Vec<usize>,
    pub law: String,
    /// Lower barrier `−L`: kills tree particles and the spine walk.
    pub l: Option<f64>,
    /// Second barrier `(3/2) log n − K` from generation `⌊n/2⌋`, trees only.
    pub k: Option<f64>,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            regime: Regime::FixedBeta,
            schedule: None,
            gamma: None,
            beta: None,
            n_list: vec![10, 12, 14],
            law: "gaussian_dyadic".into(),
            l: None,
            k: None,
        }
    }
}

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(cfg_err("regime.n_list", "must not be empty"));
        }
        if self.n_list[0] == 0 || self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("regime.n_list", "must be positive and strictly increasing"));
        }
        if let Some(l) = self.l {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(cfg_err("regime.l", "must be finite and >= 0"));
            }
        }
        if let Some(k) = self.k {
            if !k.is_finite() {
                return Err(cfg_err("regime.k", "must be finite"));
            }
        }
        if self.regime == Regime::FixedBeta {
            if self.schedule.is_some() {
                return Err(Error::Schedule("fixed-beta takes `beta`, not a schedule".into()));
            }
            return match self.beta {
                None => Ok(()),
                Some(b) if b >= 0.0 && b.is_finite() => Ok(()),
                _ => Err(cfg_err("regime.beta", "fixed-beta needs a finite beta >= 0")),
            };
        }
        if self.beta.is_some() {
            return Err(cfg_err("regime.beta", "only fixed-beta takes `beta`; use a schedule"));
        }
        let schedule = self.schedule.ok_or_else(|| Error::Schedule(format!("regime {} needs an alpha schedule", self.regime.label())))?;
        let ratios: Vec<f64> = self.n_list.iter().map(|&n| (n as f64).sqrt() / schedule.alpha(n as f64)).collect();
        for (&n, &r) in self.n_list.iter().zip(&ratios) {
            let a = schedule.alpha(n as f64);
            if !(a > 0.0) || r.is_nan() {
                return Err(Error::Schedule(format!("alpha_{n} = {a} is not positive")));
            }
            let below = matches!(self.regime, Regime::CriticalWindowBelow | Regime::BelowCriticalWeak);
            if below && !(a > 1.0) {
                return Err(Error::Schedule(format!("alpha_{n} = {a} gives beta_n <= 0")));
            }
        }
        let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
        match self.regime {
            Regime::AboveCriticalStrong | Regime::BelowCriticalWeak => {
                if ratios.iter().any(|r| !r.is_finite()) || !increasing {
                    return Err(Error::Schedule(format!(
                        "regime {} needs sqrt(n)/alpha_n increasing along n_list, got {ratios:?}",
                        self.regime.label()
                    )));
                }
            }
            Regime::CriticalWindowAbove | Regime::CriticalWindowBelow => {
                let gamma = self.gamma.ok_or_else(|| cfg_err("regime.gamma", "critical window needs gamma"))?;
                if !(gamma >= 0.0) {
                    return Err(cfg_err("regime.gamma", "must be >= 0"));
                }
                if let Some(r) = ratios.iter().find(|r| (*r - gamma).abs() > GAMMA_TOL * gamma.max(1.0)) {
                    return Err(Error::Schedule(format!(
                        "regime {} needs sqrt(n)/alpha_n = gamma = {gamma} on n_list, found {r}",
                        self.regime.label()
                    )));
                }
            }
            Regime::FixedBeta => unreachable!(),
        }
        Ok(())
    }

    pub fn alpha(&self, n: f64) -> f64 {
        self.schedule.map_or(f64::INFINITY, |s| s.alpha(n))
    }

    pub fn beta(&self, n: f64) -> f64 {
        match self.regime {
            Regime::FixedBeta => self.beta.unwrap_or(1.0),
            Regime::AboveCriticalStrong | Regime::CriticalWindowAbove => 1.0 + 1.0 / self.alpha(n),
            Regime::CriticalWindowBelow | Regime::BelowCriticalWeak => 1.0 - 1.0 / self.alpha(n),
        }
    }

    fn is_critical_fixed(&self) -> bool {
        self.regime == Regime::FixedBeta && self.beta == Some(1.0)
    }

    /// `log` of the prefactor multiplying `W_{n,β_n}`: `n^{3β/2}/α²` in (i),
    /// `√n` in (ii), (iii) and at `β = 1`, `α e^{−nΨ(β)}` in (iv), and
    /// `e^{−nΨ(β)}` for other fixed `β`.
    pub fn log_prefactor(&self, law: &ReproductionLaw, n: f64) -> Result<f64> {
        let beta = self.beta(n);
        Ok(match self.regime {
            Regime::AboveCriticalStrong => 1.5 * beta * n.ln() - 2.0 * self.alpha(n).ln(),
            Regime::CriticalWindowAbove | Regime::CriticalWindowBelow => 0.5 * n.ln(),
            Regime::BelowCriticalWeak => self.alpha(n).ln() - n * log_laplace(law, beta)?.value,
            Regime::FixedBeta if self.is_critical_fixed() => 0.5 * n.ln(),
            Regime::FixedBeta => -n * log_laplace(law, beta)?.value,
        })
    }

    pub fn prefactor(&self, law: &ReproductionLaw, n: f64) -> Result<f64> {
        Ok(self.log_prefactor(law, n)?.exp())
    }

    /// Limit of `prefactor · W / D_∞`, when known.
    pub fn target_constant(&self, sigma: f64) -> Option<f64> {
        let base = (2.0 / PI).sqrt() / sigma;
        let gamma = self.gamma.unwrap_or(0.0);
        match self.regime {
            Regime::AboveCriticalStrong => Some(base / (sigma * sigma)),
            Regime::CriticalWindowAbove => Some(base * meander_laplace(-sigma * gamma)),
            Regime::CriticalWindowBelow => Some(base * meander_laplace(sigma * gamma)),
            Regime::BelowCriticalWeak => Some(2.0),
            Regime::FixedBeta => self.is_critical_fixed().then_some(base),
        }
    }

    /// `log` of the unified prefactor
    /// `n^{3(β_n−1)/2} √n / E[e^{(1−β_n)σ√n 𝓜(1)}]`.
    pub fn log_unified_prefactor(&self, n: f64, sigma: f64) -> f64 {
        let beta = self.beta(n);
        1.5 * (beta - 1.0) * n.ln() + 0.5 * n.ln() - meander_laplace((1.0 - beta) * sigma * n.sqrt()).ln()
    }

    /// Ratio of the unified normalisation to the regime-specific one, both
    /// divided by their limits. Tends to 1 in (i), (ii) and in (iv) with
    /// `α_n ≫ n^{1/3}`.
    pub fn unified_ratio(&self, law: &ReproductionLaw, n: f64, sigma: f64) -> Result<f64> {
        let target = self.target_constant(sigma).ok_or_else(|| Error::invalid("regime has no known limit"))?;
        let unified = self.log_unified_prefactor(n, sigma) - ((2.0 / PI).sqrt() / sigma).ln();
        let specific = self.log_prefactor(law, n)? - target.ln();
        Ok((unified - specific).exp())
    }

    fn tree_barrier(&self) -> BarrierSpec {
        let horizon = *self.n_list.last().unwrap_or(&0);
        BarrierSpec {
            lower_l: self.l,
            second_barrier: self.k.map(|k| SecondBarrier { k, horizon }),
            ..BarrierSpec::NONE
        }
    }
}

/// Whether a statistic is an annealed expectation (`P`) or a quenched
/// statistic over surviving trees (`P*`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    #[serde(rename = "P")]
    P,
    #[serde(rename = "P*")]
    PStar,
}

impl Conditioning {
    pub fn label(&self) -> &'static str {
        match self {
            Conditioning::P => "P",
            Conditioning::PStar => "P*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tree,
    SpineWalk,
    Walk,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Tree => "tree",
            Method::SpineWalk => "spine-walk",
            Method::Walk => "walk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub n: usize,
    pub value: f64,
    /// Lower end of the IQR (tree medians) or of the 95% CI (means).
    pub lo: f64,
    pub hi: f64,
    pub target: Option<f64>,
    pub count: u64,
    pub conditioning: Conditioning,
}

impl SeriesRow {
    /// Median with interquartile range.
    pub fn median_of(n: usize, sample: &[f64], target: Option<f64>, conditioning: Conditioning) -> Self {
        let (lo, value, hi) = quartiles(sample);
        SeriesRow { n, value, lo, hi, target, count: sample.len() as u64, conditioning }
    }

    /// Estimate with 95% CI.
    pub fn from_estimate(n: usize, e: &Estimate, target: Option<f64>, conditioning: Conditioning) -> Self {
        let (lo, hi) = e.ci95();
        SeriesRow { n, value: e.value, lo, hi, target, count: e.count, conditioning }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub experiment_id: String,
    pub statistic: String,
    pub method: Method,
    pub conditioning: Conditioning,
    pub target_description: String,
    pub rows: Vec<SeriesRow>,
}

impl ScalingSeries {
    pub fn new(experiment_id: &str, statistic: &str, method: Method, conditioning: Conditioning, target_description: &str) -> Self {
        ScalingSeries {
            experiment_id: experiment_id.into(),
            statistic: statistic.into(),
            method,
            conditioning,
            target_description: target_description.into(),
            rows: Vec::new(),
        }
    }

    /// Rows must share the series' conditioning and arrive in increasing `n`.
    pub fn push(&mut self, row: SeriesRow) -> Result<()> {
        if row.conditioning != self.conditioning {
            return Err(Error::ConditioningMismatch {
                series: self.conditioning.label().into(),
                row: row.conditioning.label().into(),
            });
        }
        if self.rows.last().is_some_and(|r| r.n >= row.n) {
            return Err(Error::invalid(format!("series `{}` rows must be ordered by n", self.statistic)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub outcome: Outcome,
    pub observed: f64,
    /// Threshold in the units of `observed`.
    pub threshold: f64,
    /// How `observed` is compared with `threshold`.
    pub rule: String,
}

impl Verdict {
    /// Pass when the whole interval `[lo, hi]` lies within `target·(1 ± rel)`,
    /// fail when it lies entirely outside, inconclusive otherwise.
    pub fn relative_band(criterion: &str, value: f64, lo: f64, hi: f64, target: f64, rel: f64) -> Self {
        let (a, b) = (target * (1.0 - rel), target * (1.0 + rel));
        let (a, b) = (a.min(b), a.max(b));
        let outcome = if lo >= a && hi <= b {
            Outcome::Pass
        } else if hi < a || lo > b {
            Outcome::Fail
        } else {
            Outcome::Inconclusive
        };
        Verdict {
            criterion: criterion.into(),
            outcome,
            observed: value / target,
            threshold: rel,
            rule: format!("interval/target within 1 ± threshold (target {target})"),
        }
    }

    /// Same as [`Verdict::relative_band`] with an absolute half-width.
    pub fn absolute_band(criterion: &str, value: f64, lo: f64, hi: f64, target: f64, tol: f64) -> Self {
        let outcome = if lo >= target - tol && hi <= target + tol {
            Outcome::Pass
        } else if hi < target - tol || lo > target + tol {
            Outcome::Fail
        } else {
            Outcome::Inconclusive
        };
        Verdict {
            criterion: criterion.into(),
            outcome,
            observed: value - target,
            threshold: tol,
            rule: format!("interval - target within ± threshold (target {target})"),
        }
    }

    pub fn at_most(criterion: &str, observed: f64, threshold: f64) -> Self {
        Verdict {
            criterion: criterion.into(),
            outcome: if observed <= threshold { Outcome::Pass } else { Outcome::Fail },
            observed,
            threshold,
            rule: "observed <= threshold".into(),
        }
    }

    /// Pass iff `|value − target| ≤ z·se`.
    pub fn covers(criterion: &str, e: &Estimate, target: f64, z: f64) -> Self {
        let dev = (e.value - target).abs() / e.se;
        Verdict {
            criterion: criterion.into(),
            outcome: if dev <= z { Outcome::Pass } else { Outcome::Fail },
            observed: dev,
            threshold: z,
            rule: format!("|estimate - target|/se <= threshold (target {target})"),
        }
    }

    /// Strict monotone trend of `values`.
    pub fn trend(criterion: &str, values: &[f64], increasing: bool) -> Self {
        let ok = values.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
        let step = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NAN, |a, d| if increasing { d.min(a) } else { d.max(a) });
        Verdict {
            criterion: criterion.into(),
            outcome: if ok { Outcome::Pass } else { Outcome::Fail },
            observed: step,
            threshold: 0.0,
            rule: if increasing { "smallest step > threshold" } else { "largest step < threshold" }.into(),
        }
    }

    /// `|value − target|` strictly decreasing along the series.
    pub fn approaching(criterion: &str, values: &[f64], target: f64) -> Self {
        let dev: Vec<f64> = values.iter().map(|v| (v - target).abs()).collect();
        let mut v = Verdict::trend(criterion, &dev, false);
        v.rule = format!("largest step of |value - {target}| < threshold");
        v
    }
}

/// One Gibbs trajectory statistic of one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tree_id: usize,
    pub n: usize,
    pub beta: f64,
    pub functional_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PartitionScaling,
    TrajectoryLimits,
    RwCalibration,
    Overlap,
    MassWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema: String,
    pub experiment_id: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub series: Vec<ScalingSeries>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub trajectories: Vec<TrajectoryRow>,
}

impl ComparisonReport {
    pub fn new(experiment_id: &str, kind: ExperimentKind, seed: u64) -> Self {
        ComparisonReport {
            schema: REPORT_SCHEMA.into(),
            experiment_id: experiment_id.into(),
            kind,
            seed,
            series: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    /// 0 when everything passes, 2 on any failure, 3 when the worst outcome
    /// is inconclusive.
    pub fn exit_code(&self) -> i32 {
        if self.verdicts.iter().any(|v| v.outcome == Outcome::Fail) {
            2
        } else if self.verdicts.iter().any(|v| v.outcome == Outcome::Inconclusive) {
            3
        } else {
            0
        }
    }

    pub fn verdict(&self, criterion: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.criterion == criterion)
    }

    pub fn series(&self, statistic: &str) -> Option<&ScalingSeries> {
        self.series.iter().find(|s| s.statistic == statistic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub n_trees: usize,
    pub max_particles: usize,
    /// Generations for the spine-walk rows; empty skips them.
    pub walk_ns: Vec<usize>,
    pub n_walks: usize,
    /// Grid size `m` for path functionals.
    pub grid_points: usize,
    /// Paths drawn from the continuum reference samplers.
    pub reference_paths: usize,
    /// Draw this many Gibbs particles per tree instead of enumerating all.
    pub subsample: Option<usize>,
    pub overlap_eps: f64,
    /// 0 computes the overlap mass exactly; otherwise sample this many pairs.
    pub overlap_pairs: usize,
    /// Window constant `C` for the energy-window mass.
    pub window_c: f64,
    pub constants: ConstantsBudget,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            n_trees: 2000,
            max_particles: crate::brw::DEFAULT_MAX_PARTICLES,
            walk_ns: Vec::new(),
            n_walks: 400_000,
            grid_points: 64,
            reference_paths: 20_000,
            subsample: None,
            overlap_eps: 0.1,
            overlap_pairs: 0,
            window_c: 8.0,
            constants: ConstantsBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwBudget {
    pub n: usize,
    pub conditioned_u: f64,
    pub conditioned_paths: usize,
    pub two_barrier_paths: usize,
    pub two_barrier_grid: usize,
    pub llt_paths: usize,
    pub ballot_ns: Vec<usize>,
    pub ballot_paths: usize,
    /// Ballot window `[0, ballot_width·σ)` above the barrier at 0.
    pub ballot_width: f64,
    pub reference_paths: usize,
}

impl Default for RwBudget {
    fn default() -> Self {
        RwBudget {
            n: 4096,
            conditioned_u: 1.0,
            conditioned_paths: 2_000_000,
            two_barrier_paths: 2_000_000,
            two_barrier_grid: 256,
            llt_paths: 400_000,
            ballot_ns: vec![512, 1024, 2048, 4096],
            ballot_paths: 200_000,
            ballot_width: 2.0,
            reference_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub theta_c0_rel: f64,
    pub rayleigh_ks: f64,
    pub rayleigh_min_survivors: usize,
    pub two_barrier_rel: f64,
    pub sup_ratio_rel: f64,
    pub llt_rel: f64,
    pub ballot_slope: f64,
    pub spine_rel: f64,
    pub weak_ks: f64,
    pub trajectory_abs: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            theta_c0_rel: 0.05,
            rayleigh_ks: 0.02,
            rayleigh_min_survivors: 20_000,
            two_barrier_rel: 0.15,
            sup_ratio_rel: 0.10,
            llt_rel: 0.10,
            ballot_slope: 0.15,
            spine_rel: 0.10,
            weak_ks: 0.08,
            trajectory_abs: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub experiment_id: String,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Functionals for trajectory experiments; empty means the standard battery.
    #[serde(default)]
    pub battery: Vec<GridFunctional>,
    #[serde(default)]
    pub regime: RegimeSpec,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub rw: RwBudget,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA.into(),
            experiment_id: "default".into(),
            kind: ExperimentKind::PartitionScaling,
            seed: None,
            output_dir: None,
            battery: Vec::new(),
            regime: RegimeSpec::default(),
            budget: Budget::default(),
            rw: RwBudget::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Every config field, for help output.
pub const CONFIG_FIELDS: &[(&str, &str)] = &[
    ("schema", "must be \"brwlab.experiment/1\""),
    ("experiment_id", "label used in outputs and to derive RNG streams"),
    ("kind", "partition-scaling | trajectory-limits | rw-calibration | overlap | mass-window"),
    ("seed", "64-bit seed; --seed overrides"),
    ("output_dir", "artifact directory; --out and BRWLAB_OUT override"),
    ("battery", "functionals: one, endpoint, sup, time-average, positive-fraction"),
    ("regime.regime", "above-critical-strong | critical-window-above | critical-window-below | below-critical-weak | fixed-beta"),
    ("regime.schedule", "{ kind = \"power\", p } | { kind = \"sqrt-over-gamma\", gamma } | { kind = \"log\" }"),
    ("regime.gamma", "sqrt(n)/alpha_n in the critical window"),
    ("regime.beta", "inverse temperature for fixed-beta (default 1)"),
    ("regime.n_list", "tree generations, strictly increasing"),
    ("regime.law", "built-in law name or path to a law TOML file"),
    ("regime.l", "lower barrier -L (trees and spine walk)"),
    ("regime.k", "second barrier (3/2) log n - K from generation n/2 (trees)"),
    ("budget.n_trees", "trees per experiment"),
    ("budget.max_particles", "particle cap per generation"),
    ("budget.walk_ns", "generations for spine-walk rows"),
    ("budget.n_walks", "spine walks per generation"),
    ("budget.grid_points", "grid size m for path functionals"),
    ("budget.reference_paths", "continuum reference paths"),
    ("budget.subsample", "Gibbs particles drawn per tree instead of full enumeration"),
    ("budget.overlap_eps", "overlap threshold epsilon"),
    ("budget.overlap_pairs", "0 for the exact overlap mass, else sampled pairs"),
    ("budget.window_c", "window constant C for mass-window"),
    ("budget.constants.*", "grid_step_sigma, grid_max_sigma, n_ladder, step_budget, n, n_paths, theta_u_sigma"),
    ("rw.n", "walk length for calibration"),
    ("rw.conditioned_u", "barrier for the conditioned endpoint"),
    ("rw.conditioned_paths", "trials for the conditioned endpoint"),
    ("rw.two_barrier_paths", "forward and backward halves each"),
    ("rw.two_barrier_grid", "grid size for the two-barrier functionals"),
    ("rw.llt_paths", "walks for the local limit check"),
    ("rw.ballot_ns", "generations for the ballot exponent"),
    ("rw.ballot_paths", "halves per ballot estimate"),
    ("rw.ballot_width", "ballot window width in units of sigma"),
    ("rw.reference_paths", "excursion paths for E[sup e]"),
    ("thresholds.*", "theta_c0_rel, rayleigh_ks, rayleigh_min_survivors, two_barrier_rel, sup_ratio_rel, llt_rel, ballot_slope, spine_rel, weak_ks, trajectory_abs"),
];

impl ExperimentConfig {
    /// Parse and validate; errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("", e.to_string().trim()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(&path, e.into_inner().to_string().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(cfg_err("schema", format!("expected \"{CONFIG_SCHEMA}\", got \"{}\"", self.schema)));
        }
        if self.experiment_id.is_empty() || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(cfg_err("experiment_id", "must be non-empty ASCII letters, digits, '-', '_' or '.'"));
        }
        self.regime.validate()?;
        let b = &self.budget;
        if b.grid_points < 2 {
            return Err(cfg_err("budget.grid_points", "must be >= 2"));
        }
        if !(0.0..=1.0).contains(&b.overlap_eps) {
            return Err(cfg_err("budget.overlap_eps", "must lie in [0, 1]"));
        }
        if !(b.window_c >= 1.0) {
            return Err(cfg_err("budget.window_c", "must be >= 1"));
        }
        if b.subsample == Some(0) {
            return Err(cfg_err("budget.subsample", "must be >= 1"));
        }
        let tree_kind = matches!(self.kind, ExperimentKind::TrajectoryLimits | ExperimentKind::Overlap | ExperimentKind::MassWindow);
        if tree_kind && b.n_trees == 0 {
            return Err(cfg_err("budget.n_trees", "must be >= 1"));
        }
        if self.rw.two_barrier_grid < 2 {
            return Err(cfg_err("rw.two_barrier_grid", "must be >= 2"));
        }
        Ok(())
    }
}

fn law_and_sigma(spec: &RegimeSpec) -> Result<(ReproductionLaw, f64)> {
    let law = ReproductionLaw::resolve(&spec.law)?;
    let sigma = law.psi_derivatives(1.0).2.sqrt();
    Ok((law, sigma))
}

fn truncated(pop: &Population, n: usize) -> Population {
    Population {
        frames: pop.frames[..=n].to_vec(),
        alive: !pop.frames[n].is_empty(),
        law_name: pop.law_name.clone(),
        barrier_log: pop.barrier_log[..n].to_vec(),
        exploded: pop.exploded,
    }
}

/// Grow `budget.n_trees` trees to the largest `n` and map the surviving ones
/// through `f`. Returns the kept values and the number of trees grown.
fn surviving_trees<T, F>(law: &ReproductionLaw, spec: &RegimeSpec, budget: &Budget, streams: &Streams, f: F) -> Result<Vec<(usize, T)>>
where
    T: Send,
    F: Fn(&Population, &mut Rng) -> Result<Option<T>> + Sync,
{
    let n_max = *spec.n_list.last().unwrap();
    let out = replicate(law, n_max, &spec.tree_barrier(), budget.n_trees, budget.max_particles, streams, |i, pop, rng| {
        if pop.last().is_empty() {
            return Ok(None);
        }
        f(pop, rng).map(|v| v.map(|v| (i, v)))
    });
    let mut kept = Vec::new();
    for r in out {
        if let Some(v) = r?? {
            kept.push(v);
        }
    }
    if kept.is_empty() {
        return Err(Error::TooFewSurvivors { found: 0, required: 1 });
    }
    Ok(kept)
}

/// Scaled partition function across `n`: one tree series (median and IQR of
/// `prefactor · W_{n,β_n} / D`) and, when `budget.walk_ns` is set, one
/// spine-walk series of `√n E[W^{(L)}_{n,β_n}] / (θ R(L))` against
/// `E[e^{(1−β_n)σ√n 𝓜(1)}]`.
pub fn run_partition_scaling(experiment_id: &str, spec: &RegimeSpec, budget: &Budget, streams: &Streams) -> Result<Vec<ScalingSeries>> {
    spec.validate()?;
    let (law, sigma) = law_and_sigma(spec)?;
    let mut out = Vec::new();
    if budget.n_trees > 0 {
        let n_max = *spec.n_list.last().unwrap() as f64;
        let target = spec.target_constant(sigma);
        let logs: Vec<(f64, f64)> = spec
            .n_list
            .iter()
            .map(|&n| Ok((spec.log_prefactor(&law, n as f64)?, spec.beta(n as f64))))
            .collect::<Result<_>>()?;
        let values = surviving_trees(&law, spec, budget, &streams.child("trees"), |pop, _| {
            let d = pop.readout(1.0, None, None).d;
            if !(d > 0.0) {
                return Ok(None);
            }
            let row: Vec<f64> = spec
                .n_list
                .iter()
                .zip(&logs)
                .map(|(&n, &(lp, beta))| (lp + pop.readout_at(n, beta, None, None).log_w - d.ln()).exp())
                .collect();
            Ok(Some(row))
        })?;
        let desc = format!(
            "median and IQR over trees of prefactor*W/D_{n_max} (regime {}); target is the limit constant",
            spec.regime.label()
        );
        let mut s = ScalingSeries::new(experiment_id, "scaled_partition_over_d", Method::Tree, Conditioning::PStar, &desc);
        for (j, &n) in spec.n_list.iter().enumerate() {
            let col: Vec<f64> = values.iter().map(|(_, r)| r[j]).collect();
            s.push(SeriesRow::median_of(n, &col, target, Conditioning::PStar))?;
        }
        out.push(s);
    }
    if !budget.walk_ns.is_empty() {
        let walk = walk_from_reproduction(&law)?;
        let constants = estimate_constants(&walk, &budget.constants, &streams.child("constants"))?;
        out.push(spine_series(experiment_id, spec, &walk, &constants, budget, streams)?);
    }
    Ok(out)
}

fn spine_series(
    experiment_id: &str,
    spec: &RegimeSpec,
    walk: &WalkLaw,
    constants: &RwConstants,
    budget: &Budget,
    streams: &Streams,
) -> Result<ScalingSeries> {
    let l = spec.l.unwrap_or(0.0);
    let sigma = walk.sigma();
    let norm = constants.theta.scale(constants.table.eval(l));
    let mut s = ScalingSeries::new(
        experiment_id,
        "spine_scaled_partition",
        Method::SpineWalk,
        Conditioning::P,
        &format!("sqrt(n) E[W^(L)_(n,beta_n)] / (theta R(L)) with L = {l}; target E[exp((1-beta_n) sigma sqrt(n) M(1))]"),
    );
    for &n in &budget.walk_ns {
        let nf = n as f64;
        let beta = spec.beta(nf);
        let e = spine_w_estimator(walk, beta, n, None, Some(l), budget.n_walks, &streams.child(&format!("spine-{n}")))?;
        let scaled = e.estimate.scale(nf.sqrt()).ratio(&norm);
        let target = meander_laplace((1.0 - beta) * sigma * nf.sqrt());
        s.push(SeriesRow::from_estimate(n, &scaled, Some(target), Conditioning::P))?;
    }
    Ok(s)
}

/// Reference sampler for the trajectory limit of a regime, with the scaling
/// that makes tree paths comparable to it.
struct Reference {
    kind: LimitKind,
    /// Weight `e^{tilt·X(1)}` on top of the sampler weight.
    tilt: f64,
    /// Path shift `X_t − shift·t`.
    shift: f64,
    mode_sigma: f64,
    drift: bool,
    description: &'static str,
}

fn reference_for(spec: &RegimeSpec, law: &ReproductionLaw, sigma: f64) -> Reference {
    let gamma = spec.gamma.unwrap_or(0.0);
    let r = |kind, tilt, shift, drift, description| Reference { kind, tilt, shift, mode_sigma: sigma, drift, description };
    match spec.regime {
        Regime::AboveCriticalStrong => r(LimitKind::Excursion, 0.0, 0.0, false, "normalized excursion"),
        Regime::CriticalWindowAbove => r(LimitKind::Meander, -sigma * gamma, 0.0, false, "meander tilted by exp(-sigma gamma M(1))"),
        Regime::CriticalWindowBelow => {
            r(LimitKind::Meander, sigma * gamma, sigma * gamma, true, "meander tilted by exp(sigma gamma M(1)), shifted by -sigma gamma t")
        }
        Regime::BelowCriticalWeak => r(LimitKind::Brownian, 0.0, 0.0, true, "Brownian motion"),
        Regime::FixedBeta => {
            let beta = spec.beta.unwrap_or(1.0);
            if beta < 1.0 {
                let mut x = r(LimitKind::Brownian, 0.0, 0.0, true, "Brownian motion");
                x.mode_sigma = law.psi_derivatives(beta).2.sqrt();
                x
            } else if beta == 1.0 {
                r(LimitKind::Meander, 0.0, 0.0, false, "Brownian meander")
            } else {
                r(LimitKind::Excursion, 0.0, 0.0, false, "normalized excursion (mean over the excursion mixture)")
            }
        }
    }
}

fn reference_means(reference: &Reference, battery: &[GridFunctional], m: usize, n_paths: usize, streams: &Streams) -> Result<Vec<Estimate>> {
    let parts = streams.par_batches(n_paths, 1024, |rng, range| {
        let mut acc = vec![WeightedMoments::default(); battery.len()];
        for _ in range {
            let mut p = sample_limit_path(reference.kind, m, rng).expect("m >= 2 checked");
            let w = p.weight * (reference.tilt * p.samples[m]).exp();
            if reference.shift != 0.0 {
                for (j, v) in p.samples.iter_mut().enumerate() {
                    *v -= reference.shift * j as f64 / m as f64;
                }
            }
            for (a, f) in acc.iter_mut().zip(battery) {
                a.push(w, f.eval(&p.samples));
            }
        }
        acc
    });
    let mut acc = vec![WeightedMoments::default(); battery.len()];
    for part in parts {
        acc = acc.into_iter().zip(part).map(|(a, b)| a.merge(b)).collect();
    }
    Ok(acc.iter().map(WeightedMoments::normalized).collect())
}

/// Gibbs trajectory means over trees against the continuum reference, plus
/// the law of one Gibbs-sampled endpoint per tree.
pub fn run_trajectory_limits(
    experiment_id: &str,
    spec: &RegimeSpec,
    battery: &[GridFunctional],
    budget: &Budget,
    thresholds: &Thresholds,
    seed: u64,
    streams: &Streams,
) -> Result<ComparisonReport> {
    spec.validate()?;
    let m = budget.grid_points;
    if battery.is_empty() || m < 2 {
        return Err(Error::invalid("battery functionals need a non-empty battery and a grid with m >= 2"));
    }
    let (law, sigma) = law_and_sigma(spec)?;
    let reference = reference_for(spec, &law, sigma);
    let targets = reference_means(&reference, battery, m, budget.reference_paths, &streams.child("reference"))?;

    let per_n: Vec<(usize, f64, TrajectoryMode)> = spec
        .n_list
        .iter()
        .map(|&n| {
            let beta = spec.beta(n as f64);
            let mode = if reference.drift {
                TrajectoryMode::Drift { sigma: reference.mode_sigma, psi_prime: law.psi_derivatives(beta).1 }
            } else {
                TrajectoryMode::Plain { sigma: reference.mode_sigma }
            };
            (n, beta, mode)
        })
        .collect();

    let trees = surviving_trees(&law, spec, budget, &streams.child("trees"), |pop, rng| {
        let mut rows = Vec::with_capacity(per_n.len());
        for &(n, beta, mode) in &per_n {
            let view = truncated(pop, n);
            let g = gibbs::gibbs(&view, beta)?;
            let means = match budget.subsample {
                None => gibbs::trajectory_means(&view, &g, battery, m, mode)?,
                Some(k) => battery
                    .iter()
                    .map(|&f| gibbs::trajectory_mean_subsampled(&view, &g, f, m, mode, k, rng))
                    .collect::<Result<_>>()?,
            };
            let endpoint = *gibbs::path_grid(&view, g.sample(rng), m, mode)?.values.last().unwrap();
            rows.push((means, endpoint));
        }
        Ok(Some(rows))
    })?;

    let mut report = ComparisonReport::new(experiment_id, ExperimentKind::TrajectoryLimits, seed);
    report.notes.push(format!("reference: {}; {} of {} trees survived", reference.description, trees.len(), budget.n_trees));
    for (fi, f) in battery.iter().enumerate() {
        let mut s = ScalingSeries::new(
            experiment_id,
            &format!("gibbs_mean_{}", f.id()),
            Method::Tree,
            Conditioning::PStar,
            &format!("mean over trees of mu_(n,beta_n)(F) with 95% CI; target E[F] under the {}", reference.description),
        );
        for (j, &(n, _, _)) in per_n.iter().enumerate() {
            let e = Moments::from_slice(&trees.iter().map(|(_, r)| r[j].0[fi]).collect::<Vec<_>>()).estimate();
            s.push(SeriesRow::from_estimate(n, &e, Some(targets[fi].value), Conditioning::PStar))?;
        }
        let last = s.rows.last().unwrap();
        // The reference is itself a Monte Carlo estimate: widen by its CI.
        let half = 1.96 * targets[fi].se;
        report.verdicts.push(Verdict::absolute_band(
            &format!("gibbs-mean-{}", f.id()),
            last.value,
            last.lo - half,
            last.hi + half,
            targets[fi].value,
            thresholds.trajectory_abs,
        ));
        report.series.push(s);
    }
    // Endpoint laws with a closed-form CDF.
    let endpoint_cdf: Option<(fn(f64) -> f64, &str)> = match (reference.kind, reference.tilt) {
        (LimitKind::Brownian, _) => Some((normal_cdf, "Normal(0,1)")),
        (LimitKind::Meander, t) if t == 0.0 => Some((rayleigh_cdf, "Rayleigh")),
        _ => None,
    };
    if let Some((cdf, name)) = endpoint_cdf {
        let mut s = ScalingSeries::new(
            experiment_id,
            "sampled_endpoint_ks",
            Method::Tree,
            Conditioning::PStar,
            &format!("KS distance of one Gibbs-sampled rescaled endpoint per tree to {name}"),
        );
        for (j, &(n, _, _)) in per_n.iter().enumerate() {
            let xs: Vec<f64> = trees.iter().map(|(_, r)| r[j].1).collect();
            let d = ks_distance(&xs, cdf);
            s.push(SeriesRow { n, value: d, lo: d, hi: d, target: Some(0.0), count: xs.len() as u64, conditioning: Conditioning::PStar })?;
        }
        report.verdicts.push(Verdict::at_most("sampled-endpoint-ks", s.rows.last().unwrap().value, thresholds.weak_ks));
        report.series.push(s);
    }
    for (tree_id, rows) in &trees {
        for (j, &(n, beta, _)) in per_n.iter().enumerate() {
            for (fi, f) in battery.iter().enumerate() {
                report.trajectories.push(TrajectoryRow { tree_id: *tree_id, n, beta, functional_id: f.id().into(), value: rows[j].0[fi] });
            }
            report.trajectories.push(TrajectoryRow { tree_id: *tree_id, n, beta, functional_id: "sampled-endpoint".into(), value: rows[j].1 });
        }
    }
    Ok(report)
}

/// The random-walk calibration bundle: `c₀θ` identity, Rayleigh endpoint,
/// two-barrier prefactor and excursion `sup`, local limit, ballot exponent.
pub fn run_rw_calibration(
    experiment_id: &str,
    law: &ReproductionLaw,
    constants_budget: &ConstantsBudget,
    rw: &RwBudget,
    thresholds: &Thresholds,
    seed: u64,
    streams: &Streams,
) -> Result<ComparisonReport> {
    let walk = walk_from_reproduction(law)?;
    let sigma = walk.sigma();
    let n = rw.n;
    let mut report = ComparisonReport::new(experiment_id, ExperimentKind::RwCalibration, seed);
    let series = |stat: &str, desc: &str| ScalingSeries::new(experiment_id, stat, Method::Walk, Conditioning::P, desc);

    let constants = estimate_constants(&walk, constants_budget, &streams.child("constants"))?;
    report.notes.extend(constants.warnings.iter().cloned());
    let product = constants.product();
    let target = constants.product_target();
    let mut s = series("theta_c0", "c0*theta with 95% CI; target sqrt(2/(pi sigma^2))");
    s.push(SeriesRow::from_estimate(constants_budget.n, &product, Some(target), Conditioning::P))?;
    report.series.push(s);
    report.verdicts.push(Verdict::covers("theta-c0-ci95", &product, target, 1.96));
    let (lo, hi) = product.ci95();
    report.verdicts.push(Verdict::relative_band("theta-c0-relative", product.value, lo, hi, target, thresholds.theta_c0_rel));

    let cond = conditioned_endpoint_law(&walk, rw.conditioned_u, n, rw.conditioned_paths, &streams.child("rayleigh"))?;
    let ks = ks_distance(&cond.values, rayleigh_cdf);
    let mut s = series("rayleigh_ks", "KS distance of (S_n+u)/(sigma sqrt(n)) given survival to Rayleigh");
    s.push(SeriesRow { n, value: ks, lo: ks, hi: ks, target: Some(0.0), count: cond.values.len() as u64, conditioning: Conditioning::P })?;
    report.series.push(s);
    let mut v = Verdict::at_most("rayleigh-ks", ks, thresholds.rayleigh_ks);
    if cond.values.len() < thresholds.rayleigh_min_survivors {
        v.outcome = Outcome::Inconclusive;
        report.notes.push(format!("only {} surviving walks for the Rayleigh check", cond.values.len()));
    }
    report.verdicts.push(v);

    let h = walk.lattice.map_or(1.0, |l| l.span);
    let spec = TwoBarrierSpec {
        u: 0.0,
        v: 0.0,
        b: 0.0,
        h,
        lambda: 0.5,
        n,
        m: rw.two_barrier_grid,
        n_forward: rw.two_barrier_paths,
        n_backward: rw.two_barrier_paths,
    };
    let tb = two_barrier_endpoint_estimate(&walk, &spec, &[GridFunctional::Sup], &streams.child("two-barrier"))?;
    let tb_target = two_barrier_target(&constants, &walk, &spec)?;
    let ratio = tb.value.scale(1.0 / tb_target);
    let mut s = series("two_barrier_ratio", "two-barrier window probability over its asymptotic prefactor");
    s.push(SeriesRow::from_estimate(n, &ratio, Some(1.0), Conditioning::P))?;
    report.series.push(s);
    let (lo, hi) = ratio.ci95();
    report.verdicts.push(Verdict::relative_band("two-barrier-prefactor", ratio.value, lo, hi, 1.0, thresholds.two_barrier_rel));

    let sup = tb.get(GridFunctional::Sup).expect("requested").ratio(&tb.value);
    let reference = Reference { kind: LimitKind::Excursion, tilt: 0.0, shift: 0.0, mode_sigma: sigma, drift: false, description: "" };
    let e_sup = reference_means(&reference, &[GridFunctional::Sup], rw.two_barrier_grid, rw.reference_paths, &streams.child("excursion"))?[0];
    let mut s = series("two_barrier_sup", "E[sup | window event] over the excursion sampler's E[sup e]");
    s.push(SeriesRow::from_estimate(n, &sup, Some(e_sup.value), Conditioning::P))?;
    report.series.push(s);
    let (lo, hi) = sup.ci95();
    report.verdicts.push(Verdict::relative_band("two-barrier-sup-ratio", sup.value, lo, hi, e_sup.value, thresholds.sup_ratio_rel));

    let llt = stone_llt_check(&walk, 0.0, h, n, rw.llt_paths, &streams.child("llt"))?;
    let llt_ratio = llt.estimate.estimate().scale(1.0 / llt.target);
    let mut s = series("llt_ratio", "P(S_n in [0,h)) over the local limit approximation");
    s.push(SeriesRow::from_estimate(n, &llt_ratio, Some(1.0), Conditioning::P))?;
    report.series.push(s);
    let (lo, hi) = llt_ratio.ci95();
    report.verdicts.push(Verdict::relative_band("llt-ratio", llt_ratio.value, lo, hi, 1.0, thresholds.llt_rel));

    let ballot = ballot_scaling(&walk, 0.0, 0.0, rw.ballot_width * sigma, &rw.ballot_ns, rw.ballot_paths, &streams.child("ballot"))?;
    let mut s = series("ballot_scaled", "n^(3/2) P(S_n in window, min >= 0)");
    for (&bn, e) in ballot.ns.iter().zip(&ballot.scaled) {
        s.push(SeriesRow::from_estimate(bn, e, None, Conditioning::P))?;
    }
    report.series.push(s);
    report.verdicts.push(Verdict::absolute_band(
        "ballot-exponent",
        ballot.slope,
        ballot.slope - 1.96 * ballot.slope_se,
        ballot.slope + 1.96 * ballot.slope_se,
        0.0,
        thresholds.ballot_slope,
    ));
    report.notes.push(format!("ballot log-log slope {:.4} ± {:.4}", ballot.slope, ballot.slope_se));
    Ok(report)
}

/// Median over trees of `ω_{n,β_n}([ε, 1])`.
pub fn run_overlap(experiment_id: &str, spec: &RegimeSpec, budget: &Budget, streams: &Streams) -> Result<ScalingSeries> {
    spec.validate()?;
    let (law, _) = law_and_sigma(spec)?;
    let eps = budget.overlap_eps;
    let values = surviving_trees(&law, spec, budget, &streams.child("trees"), |pop, rng| {
        let mut row = Vec::new();
        for &n in &spec.n_list {
            let view = truncated(pop, n);
            let g = gibbs::gibbs(&view, spec.beta(n as f64))?;
            row.push(if budget.overlap_pairs == 0 {
                gibbs::overlap_mass(&view, &g, eps)?
            } else {
                let s = gibbs::sample_pairs_overlap(&view, &g, budget.overlap_pairs, rng)?;
                s.pairs.iter().filter(|&&o| o >= eps).count() as f64 / s.pairs.len() as f64
            });
        }
        Ok(Some(row))
    })?;
    let mut s = ScalingSeries::new(
        experiment_id,
        "overlap_mass",
        Method::Tree,
        Conditioning::PStar,
        &format!("median and IQR over trees of omega_(n,beta_n)([{eps}, 1]); limit 0"),
    );
    for (j, &n) in spec.n_list.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|(_, r)| r[j]).collect();
        s.push(SeriesRow::median_of(n, &col, Some(0.0), Conditioning::PStar))?;
    }
    Ok(s)
}

/// The energy window where the Gibbs mass concentrates, for constant `c`.
pub fn energy_window(spec: &RegimeSpec, law: &ReproductionLaw, n: f64, c: f64) -> (f64, f64) {
    let beta = spec.beta(n);
    match spec.regime {
        Regime::AboveCriticalStrong => {
            let (base, a) = (1.5 * n.ln(), spec.alpha(n));
            (base + a / c, base + c * a)
        }
        Regime::CriticalWindowAbove | Regime::CriticalWindowBelow => (n.sqrt() / c, c * n.sqrt()),
        Regime::BelowCriticalWeak => {
            let centre = -law.psi_derivatives(beta).1 * n;
            (centre - c * n.sqrt(), centre + c * n.sqrt())
        }
        Regime::FixedBeta => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Median over trees of the Gibbs mass of the regime's energy window.
pub fn run_mass_window(experiment_id: &str, spec: &RegimeSpec, budget: &Budget, streams: &Streams) -> Result<ScalingSeries> {
    spec.validate()?;
    let (law, _) = law_and_sigma(spec)?;
    let windows: Vec<(f64, f64)> = spec.n_list.iter().map(|&n| energy_window(spec, &law, n as f64, budget.window_c)).collect();
    let values = surviving_trees(&law, spec, budget, &streams.child("trees"), |pop, _| {
        let mut row = Vec::new();
        for (&n, &(lo, hi)) in spec.n_list.iter().zip(&windows) {
            let view = truncated(pop, n);
            let g = gibbs::gibbs(&view, spec.beta(n as f64))?;
            row.push(gibbs::mass_in_window(&view, &g, lo, hi));
        }
        Ok(Some(row))
    })?;
    let mut s = ScalingSeries::new(
        experiment_id,
        "window_mass",
        Method::Tree,
        Conditioning::PStar,
        &format!("median and IQR over trees of the Gibbs mass in the regime window with C = {}; limit 1", budget.window_c),
    );
    for (j, &n) in spec.n_list.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|(_, r)| r[j]).collect();
        s.push(SeriesRow::median_of(n, &col, Some(1.0), Conditioning::PStar))?;
    }
    Ok(s)
}

/// Run the experiment described by `config` with `seed`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ComparisonReport> {
    config.validate()?;
    let id = config.experiment_id.as_str();
    let streams = Streams::new(seed, id);
    let (spec, budget, th) = (&config.regime, &config.budget, &config.thresholds);
    let mut report = match config.kind {
        ExperimentKind::PartitionScaling => {
            let mut r = ComparisonReport::new(id, config.kind, seed);
            for s in run_partition_scaling(id, spec, budget, &streams)? {
                match s.method {
                    Method::Tree => {
                        if let Some(t) = s.rows[0].target {
                            r.verdicts.push(Verdict::approaching("tree-median-approaches-target", &s.values(), t));
                        }
                    }
                    _ => {
                        for row in &s.rows {
                            r.verdicts.push(Verdict::relative_band(
                                &format!("spine-ratio-n{}", row.n),
                                row.value,
                                row.lo,
                                row.hi,
                                row.target.unwrap(),
                                th.spine_rel,
                            ));
                        }
                    }
                }
                r.series.push(s);
            }
            r.notes.push("tree statistics are normalised by each tree's D at the largest n, a biased proxy for D_inf".into());
            r
        }
        ExperimentKind::TrajectoryLimits => {
            let battery = if config.battery.is_empty() { GridFunctional::BATTERY.to_vec() } else { config.battery.clone() };
            run_trajectory_limits(id, spec, &battery, budget, th, seed, &streams)?
        }
        ExperimentKind::RwCalibration => {
            let law = ReproductionLaw::resolve(&spec.law)?;
            run_rw_calibration(id, &law, &budget.constants, &config.rw, th, seed, &streams)?
        }
        ExperimentKind::Overlap => {
            let mut r = ComparisonReport::new(id, config.kind, seed);
            let s = run_overlap(id, spec, budget, &streams)?;
            r.verdicts.push(Verdict::trend("overlap-median-decreasing", &s.values(), false));
            r.series.push(s);
            r
        }
        ExperimentKind::MassWindow => {
            let mut r = ComparisonReport::new(id, config.kind, seed);
            let s = run_mass_window(id, spec, budget, &streams)?;
            r.verdicts.push(Verdict::trend("window-mass-median-increasing", &s.values(), true));
            r.series.push(s);
            r
        }
    };
    report.notes.insert(0, format!("law {}, regime {}", spec.law, spec.regime.label()));
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ResultRecord<'a> {
    schema: &'a str,
    experiment_id: &'a str,
    method: &'a str,
    n: usize,
    statistic: &'a str,
    value: f64,
    lo: f64,
    hi: f64,
    target: Option<f64>,
    conditioning: &'a str,
}

/// `results.csv` in long format.
pub fn write_results_csv<W: std::io::Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &report.series {
        for r in &s.rows {
            w.serialize(ResultRecord {
                schema: RESULTS_SCHEMA,
                experiment_id: &s.experiment_id,
                method: s.method.label(),
                n: r.n,
                statistic: &s.statistic,
                value: r.value,
                lo: r.lo,
                hi: r.hi,
                target: r.target,
                conditioning: r.conditioning.label(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("results.csv", e))?;
    Ok(())
}

pub fn write_trajectories_csv<W: std::io::Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("trajectories.csv", e))?;
    Ok(())
}

/// Write `results.csv`, `report.json` and, when present, `trajectories.csv`.
pub fn write_artifacts(dir: &Path, report: &ComparisonReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(|f| (std::io::BufWriter::new(f), p.clone())).map_err(|e| Error::io(&p, e))
    };
    let mut written = Vec::new();
    let (f, p) = create("results.csv")?;
    write_results_csv(report, f)?;
    written.push(p);
    let (mut f, p) = create("report.json")?;
    serde_json::to_writer_pretty(&mut f, report)?;
    std::io::Write::write_all(&mut f, b"\n").map_err(|e| Error::io(&p, e))?;
    written.push(p);
    if !report.trajectories.is_empty() {
        let (f, p) = create("trajectories.csv")?;
        write_trajectories_csv(&report.trajectories, f)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<ComparisonReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: ComparisonReport = serde_json::from_str(&text)?;
    if report.schema != REPORT_SCHEMA {
        return Err(cfg_err("schema", format!("expected \"{REPORT_SCHEMA}\", got \"{}\"", report.schema)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regime(regime: Regime, schedule: AlphaSchedule, gamma: Option<f64>) -> RegimeSpec {
        RegimeSpec { regime, schedule: Some(schedule), gamma, beta: None, ..RegimeSpec::default() }
    }

    #[test]
    fn prefactor_regime_one_by_hand() {
        // α = log n at n = e⁴: β = 5/4, n^{15/8}/16 = e^{7.5}/16.
        let spec = regime(Regime::AboveCriticalStrong, AlphaSchedule::Log, None);
        let law = ReproductionLaw::gaussian_dyadic();
        let p = spec.prefactor(&law, 4f64.exp()).unwrap();
        assert!((p - 113.002_650_903_503_95).abs() < 1e-10, "{p}");
    }

    #[test]
    fn other_prefactors() {
        let law = ReproductionLaw::gaussian_dyadic();
        let s = regime(Regime::BelowCriticalWeak, AlphaSchedule::Power { p: 0.5 }, None);
        // α = 10, β = 0.9, Ψ = 0.01 log 2.
        let want = 10.0 * (-100.0 * 0.01 * std::f64::consts::LN_2).exp();
        assert!((s.prefactor(&law, 100.0).unwrap() - want).abs() < 1e-12);
        let s = regime(Regime::CriticalWindowAbove, AlphaSchedule::SqrtOverGamma { gamma: 1.0 }, Some(1.0));
        assert!((s.prefactor(&law, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((s.beta(100.0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn unified_prefactor_is_consistent() {
        let law = ReproductionLaw::gaussian_dyadic();
        let sigma = law.psi_derivatives(1.0).2.sqrt();
        let cases = [
            regime(Regime::AboveCriticalStrong, AlphaSchedule::Power { p: 0.25 }, None),
            regime(Regime::CriticalWindowAbove, AlphaSchedule::SqrtOverGamma { gamma: 1.0 }, Some(1.0)),
            regime(Regime::BelowCriticalWeak, AlphaSchedule::Power { p: 0.4 }, None),
        ];
        for spec in cases {
            let devs: Vec<f64> =
                [1e4, 1e6, 1e8, 1e10].iter().map(|&n| (spec.unified_ratio(&law, n, sigma).unwrap() - 1.0).abs()).collect();
            assert!(devs.windows(2).all(|w| w[1] < w[0]), "{:?}: {devs:?}", spec.regime);
            assert!(devs[3] < 0.05, "{:?}: {devs:?}", spec.regime);
        }
    }

    #[test]
    fn schedule_validation() {
        let ok = |s: &RegimeSpec| s.validate().is_ok();
        assert!(ok(&regime(Regime::BelowCriticalWeak, AlphaSchedule::Power { p: 0.45 }, None)));
        assert!(ok(&regime(Regime::AboveCriticalStrong, AlphaSchedule::Power { p: 0.25 }, None)));
        assert!(ok(&regime(Regime::CriticalWindowAbove, AlphaSchedule::SqrtOverGamma { gamma: 0.0 }, Some(0.0))));
        assert!(matches!(regime(Regime::CriticalWindowAbove, AlphaSchedule::Power { p: 0.45 }, Some(1.0)).validate(), Err(Error::Schedule(_))));
        assert!(matches!(regime(Regime::AboveCriticalStrong, AlphaSchedule::Power { p: 0.7 }, None).validate(), Err(Error::Schedule(_))));
        assert!(matches!(regime(Regime::CriticalWindowBelow, AlphaSchedule::SqrtOverGamma { gamma: 2.0 }, Some(1.0)).validate(), Err(Error::Schedule(_))));
        // α_n < 1 would make β_n negative.
        assert!(regime(Regime::BelowCriticalWeak, AlphaSchedule::Power { p: -0.1 }, None).validate().is_err());
        let mut s = RegimeSpec::default();
        s.n_list = vec![12, 10];
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
        s.n_list = vec![10];
        s.schedule = Some(AlphaSchedule::Log);
        assert!(matches!(s.validate(), Err(Error::Schedule(_))));
    }

    #[test]
    fn series_rejects_mixed_conditioning() {
        let mut s = ScalingSeries::new("x", "stat", Method::Tree, Conditioning::PStar, "");
        let row = |n, c| SeriesRow { n, value: 1.0, lo: 0.0, hi: 2.0, target: None, count: 1, conditioning: c };
        s.push(row(10, Conditioning::PStar)).unwrap();
        assert!(matches!(s.push(row(12, Conditioning::P)), Err(Error::ConditioningMismatch { .. })));
        assert!(s.push(row(10, Conditioning::PStar)).is_err());
    }

    #[test]
    fn verdicts_and_exit_codes() {
        assert_eq!(Verdict::relative_band("a", 1.0, 0.95, 1.05, 1.0, 0.1).outcome, Outcome::Pass);
        assert_eq!(Verdict::relative_band("a", 1.1, 1.05, 1.15, 1.0, 0.1).outcome, Outcome::Inconclusive);
        assert_eq!(Verdict::relative_band("a", 1.3, 1.2, 1.4, 1.0, 0.1).outcome, Outcome::Fail);
        assert_eq!(Verdict::trend("t", &[3.0, 2.0, 1.0], false).outcome, Outcome::Pass);
        assert_eq!(Verdict::trend("t", &[3.0, 2.0, 2.0], false).outcome, Outcome::Fail);
        assert_eq!(Verdict::approaching("t", &[2.3, 1.8, 2.05], 2.0).outcome, Outcome::Pass);
        let mut r = ComparisonReport::new("x", ExperimentKind::Overlap, 1);
        assert_eq!(r.exit_code(), 0);
        r.verdicts.push(Verdict::relative_band("a", 1.1, 1.05, 1.15, 1.0, 0.1));
        assert_eq!(r.exit_code(), 3);
        r.verdicts.push(Verdict::at_most("b", 2.0, 1.0));
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn config_round_trip_and_field_paths() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let bad = "schema = \"brwlab.experiment/1\"\nexperiment_id = \"x\"\nkind = \"overlap\"\n[budget]\nn_trees = \"many\"\n";
        match ExperimentConfig::from_toml_str(bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "budget.n_trees"),
            other => panic!("{other:?}"),
        }
        let unknown = "schema = \"brwlab.experiment/1\"\nexperiment_id = \"x\"\nkind = \"overlap\"\n[regime]\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::from_toml_str(unknown), Err(Error::Config { .. })));
        let wrong = text.replace("brwlab.experiment/1", "brwlab.experiment/0");
        assert!(matches!(ExperimentConfig::from_toml_str(&wrong), Err(Error::Config { path, .. }) if path == "schema"));
    }

    #[test]
    fn overlap_controls() {
        // β = 0 on the dyadic tree: the exact mass is 2^{−⌈εn⌉}.
        let spec = RegimeSpec { beta: Some(0.0), n_list: vec![14], ..RegimeSpec::default() };
        let budget = Budget { n_trees: 20, ..Budget::default() };
        let s = run_overlap("x", &spec, &budget, &Streams::new(1, "o")).unwrap();
        assert!((s.rows[0].value - 0.25).abs() < 1e-12);
        let spec = RegimeSpec { law: "point_mass".into(), n_list: vec![5], ..RegimeSpec::default() };
        let s = run_overlap("x", &spec, &budget, &Streams::new(1, "o")).unwrap();
        assert_eq!(s.rows[0].value, 1.0);
        let sampled = Budget { overlap_pairs: 500, ..budget };
        let spec = RegimeSpec { beta: Some(0.0), n_list: vec![14], ..RegimeSpec::default() };
        let s = run_overlap("x", &spec, &sampled, &Streams::new(1, "o")).unwrap();
        assert!(s.rows[0].value < 0.4);
    }

    #[test]
    fn small_runs_are_deterministic() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::TrajectoryLimits,
            regime: RegimeSpec { beta: Some(0.5), n_list: vec![6, 8], ..RegimeSpec::default() },
            budget: Budget { n_trees: 30, reference_paths: 500, grid_points: 8, ..Budget::default() },
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&cfg, 9).unwrap();
        let b = run_experiment(&cfg, 9).unwrap();
        let csv = |r: &ComparisonReport| {
            let mut v = Vec::new();
            write_results_csv(r, &mut v).unwrap();
            write_trajectories_csv(&r.trajectories, &mut v).unwrap();
            v
        };
        assert_eq!(csv(&a), csv(&b));
        assert_ne!(csv(&a), csv(&run_experiment(&cfg, 10).unwrap()));
        assert_eq!(a.trajectories.len(), 30 * 2 * 5);
        assert!(a.verdict("sampled-endpoint-ks").is_some());
    }
}
