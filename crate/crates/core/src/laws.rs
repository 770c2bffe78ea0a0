//! Reproduction point processes in the boundary case.
//!
//! A [`ReproductionLaw`] describes where the children of one particle are
//! placed relative to their parent. Two families are supported: i.i.d.
//! Gaussian displacements with a fixed number of children (closed-form
//! log-Laplace transform) and finite configuration tables (exact sums, exact
//! enumeration for brute-force oracles).

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};
use crate::stats::{Estimate, Moments};

/// `(h, a)`-lattice metadata: the support lies in `a + hℤ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub span: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportKind {
    FiniteConfig,
    Continuous,
}

/// One offspring configuration of a finite law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub prob: f64,
    pub displacements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigTable {
    configs: Vec<Config>,
    cumulative: Vec<f64>,
}

impl ConfigTable {
    pub fn new(configs: Vec<Config>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::invalid("configuration table is empty"));
        }
        if configs.iter().any(|c| !(c.prob >= 0.0) || c.displacements.iter().any(|d| !d.is_finite())) {
            return Err(Error::invalid("configuration probabilities must be >= 0 and displacements finite"));
        }
        let total: f64 = configs.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("configuration probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = configs
            .iter()
            .map(|c| {
                acc += c.prob;
                acc
            })
            .collect();
        Ok(ConfigTable { configs, cumulative })
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.configs.len() - 1)
    }

    /// `Σ_c p_c Σ_j f(d_j)`.
    pub fn expect_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.configs
            .iter()
            .map(|c| c.prob * c.displacements.iter().map(|&d| f(d)).sum::<f64>())
            .sum()
    }

    /// `Σ_c p_c g(config)`.
    pub fn expect(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.configs.iter().map(|c| c.prob * g(&c.displacements)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawKind {
    /// `children` i.i.d. Normal(mean, variance) displacements.
    IidGaussian { children: usize, mean: f64, variance: f64 },
    Table(ConfigTable),
}

/// A reproduction law. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionLaw {
    pub name: String,
    pub kind: LawKind,
    pub lattice: Option<Lattice>,
}

/// Names accepted by [`ReproductionLaw::builtin`].
pub const BUILTINS: [&str; 3] = ["gaussian_dyadic", "two_config", "point_mass"];

/// Root of `½x log x + (1 − x/2) log(1 − x/2)` on `(1, 2)`, by bisection.
pub fn two_config_root() -> f64 {
    let g = |x: f64| 0.5 * x * x.ln() + (1.0 - 0.5 * x) * (1.0 - 0.5 * x).ln();
    let (mut lo, mut hi) = (1.0_f64, 1.999_f64);
    debug_assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl ReproductionLaw {
    /// Two children with i.i.d. Normal(2 log 2, 2 log 2) displacements.
    pub fn gaussian_dyadic() -> Self {
        let m = 2.0 * std::f64::consts::LN_2;
        ReproductionLaw {
            name: "gaussian_dyadic".into(),
            kind: LawKind::IidGaussian { children: 2, mean: m, variance: m },
            lattice: None,
        }
    }

    /// With probability ½ one child at `d₁ = −log x`, otherwise two children
    /// at `d₂ = −log(1 − x/2)`, with `x` the bisection root of the
    /// derivative condition.
    pub fn two_config() -> Self {
        let x = two_config_root();
        let d1 = -x.ln();
        let d2 = -(1.0 - 0.5 * x).ln();
        let table = ConfigTable::new(vec![
            Config { prob: 0.5, displacements: vec![d1] },
            Config { prob: 0.5, displacements: vec![d2, d2] },
        ])
        .expect("two_config table is valid");
        ReproductionLaw {
            name: "two_config".into(),
            kind: LawKind::Table(table),
            lattice: Some(Lattice { span: d2 - d1, offset: d1 }),
        }
    }

    /// Degenerate law: exactly one child at the parent's position.
    pub fn point_mass() -> Self {
        ReproductionLaw::from_table(
            "point_mass",
            vec![Config { prob: 1.0, displacements: vec![0.0] }],
            None,
        )
        .expect("point mass table is valid")
    }

    pub fn from_table(name: &str, configs: Vec<Config>, lattice: Option<Lattice>) -> Result<Self> {
        Ok(ReproductionLaw { name: name.into(), kind: LawKind::Table(ConfigTable::new(configs)?), lattice })
    }

    pub fn iid_gaussian(name: &str, children: usize, mean: f64, variance: f64) -> Result<Self> {
        if children == 0 || !(variance > 0.0) || !mean.is_finite() {
            return Err(Error::invalid("gaussian law needs children >= 1, variance > 0"));
        }
        Ok(ReproductionLaw {
            name: name.into(),
            kind: LawKind::IidGaussian { children, mean, variance },
            lattice: None,
        })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "gaussian_dyadic" => Ok(Self::gaussian_dyadic()),
            "two_config" => Ok(Self::two_config()),
            "point_mass" => Ok(Self::point_mass()),
            other => Err(Error::invalid(format!(
                "unknown builtin law `{other}` (known: {})",
                BUILTINS.join(", ")
            ))),
        }
    }

    /// Resolve a builtin name or a path to a law definition file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTINS.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::from_file(Path::new(name_or_path))
        }
    }

    pub fn support_kind(&self) -> SupportKind {
        match self.kind {
            LawKind::IidGaussian { .. } => SupportKind::Continuous,
            LawKind::Table(_) => SupportKind::FiniteConfig,
        }
    }

    pub fn table(&self) -> Option<&ConfigTable> {
        match &self.kind {
            LawKind::Table(t) => Some(t),
            _ => None,
        }
    }

    /// Append one draw of the offspring displacements to `out` (cleared first).
    pub fn sample_into(&self, rng: &mut Rng, out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            LawKind::IidGaussian { children, mean, variance } => {
                let sd = variance.sqrt();
                out.extend((0..*children).map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + sd * z
                }));
            }
            LawKind::Table(t) => {
                let c = t.sample_index(rng);
                out.extend_from_slice(&t.configs[c].displacements);
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut v = Vec::new();
        self.sample_into(rng, &mut v);
        v
    }

    /// Closed-form or exact `(Ψ(β), Ψ'(β), Ψ''(β))`.
    pub fn psi_derivatives(&self, beta: f64) -> (f64, f64, f64) {
        match &self.kind {
            LawKind::IidGaussian { children, mean, variance } => (
                (*children as f64).ln() - beta * mean + 0.5 * beta * beta * variance,
                -mean + beta * variance,
                *variance,
            ),
            LawKind::Table(t) => {
                let z0 = t.expect_sum(|d| (-beta * d).exp());
                let z1 = t.expect_sum(|d| d * (-beta * d).exp());
                let z2 = t.expect_sum(|d| d * d * (-beta * d).exp());
                let d1 = -z1 / z0;
                (z0.ln(), d1, z2 / z0 - d1 * d1)
            }
        }
    }

    pub fn mean_offspring(&self) -> f64 {
        match &self.kind {
            LawKind::IidGaussian { children, .. } => *children as f64,
            LawKind::Table(t) => t.expect(|c| c.len() as f64),
        }
    }

    pub fn max_children(&self) -> usize {
        match &self.kind {
            LawKind::IidGaussian { children, .. } => *children,
            LawKind::Table(t) => t.configs.iter().map(|c| c.displacements.len()).max().unwrap_or(0),
        }
    }

    pub fn enumerate_configs(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        match &self.kind {
            LawKind::Table(t) => Ok(t.configs.iter().map(|c| (c.prob, c.displacements.clone())).collect()),
            LawKind::IidGaussian { .. } => Err(Error::UnsupportedLaw {
                law: self.name.clone(),
                what: "configuration enumeration (continuous support)",
            }),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: LawFile = toml::from_str(text).map_err(|e| Error::Config {
            path: "law".into(),
            message: e.to_string(),
        })?;
        file.into_law()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&LawFile::from_law(self)).expect("law file serialises")
    }
}

/// On-disk law definition (`kind = "gaussian" | "table" | "builtin"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawFile {
    Builtin {
        builtin: String,
    },
    Gaussian {
        name: String,
        children: usize,
        mean: f64,
        variance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lattice: Option<Lattice>,
    },
    Table {
        name: String,
        configs: Vec<Config>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lattice: Option<Lattice>,
    },
}

impl LawFile {
    pub fn into_law(self) -> Result<ReproductionLaw> {
        match self {
            LawFile::Builtin { builtin } => ReproductionLaw::builtin(&builtin),
            LawFile::Gaussian { name, children, mean, variance, lattice } => {
                let mut law = ReproductionLaw::iid_gaussian(&name, children, mean, variance)?;
                law.lattice = lattice;
                Ok(law)
            }
            LawFile::Table { name, configs, lattice } => ReproductionLaw::from_table(&name, configs, lattice),
        }
    }

    pub fn from_law(law: &ReproductionLaw) -> Self {
        match &law.kind {
            LawKind::IidGaussian { children, mean, variance } => LawFile::Gaussian {
                name: law.name.clone(),
                children: *children,
                mean: *mean,
                variance: *variance,
                lattice: law.lattice,
            },
            LawKind::Table(t) => LawFile::Table {
                name: law.name.clone(),
                configs: t.configs.clone(),
                lattice: law.lattice,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    pub value: f64,
    /// Standard error; `None` in exact mode.
    pub se: Option<f64>,
    pub mode: EvalMode,
}

/// `Ψ(β) = log E[Σ e^{−βV}]`, exact for every supported law.
pub fn log_laplace(law: &ReproductionLaw, beta: f64) -> Result<PsiValue> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let (value, _, _) = law.psi_derivatives(beta);
    if !value.is_finite() {
        return Err(Error::Divergence { beta });
    }
    Ok(PsiValue { value, se: None, mode: EvalMode::Exact })
}

/// Overflow guard for Monte Carlo log-Laplace sums.
const OVERFLOW_GUARD: f64 = 1e300;

/// Monte Carlo `Ψ(β)` from `n_samples` offspring draws.
pub fn log_laplace_mc(law: &ReproductionLaw, beta: f64, n_samples: usize, streams: &Streams) -> Result<PsiValue> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let parts = streams.par_batches(n_samples, crate::rng::DEFAULT_BATCH, |rng, range| {
        let mut buf = Vec::new();
        let mut m = Moments::default();
        for _ in range {
            law.sample_into(rng, &mut buf);
            m.push(buf.iter().map(|&v| (-beta * v).exp()).sum());
        }
        m
    });
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    if !(m.sum.is_finite() && m.sum < OVERFLOW_GUARD && m.sumsq.is_finite()) {
        return Err(Error::Divergence { beta });
    }
    let mean = m.mean();
    Ok(PsiValue { value: mean.ln(), se: Some(m.se() / mean), mode: EvalMode::MonteCarlo })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriState {
    Verified,
    Estimated,
    Unknown,
}

/// Monte Carlo check of the boundary normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMc {
    /// `E[Σ e^{−V}]`, should be 1.
    pub mass: Estimate,
    /// `E[Σ V e^{−V}]`, should be 0.
    pub drift: Estimate,
}

impl BoundaryMc {
    pub fn consistent(&self) -> bool {
        self.mass.within_se(1.0, 3.0) && self.drift.within_se(0.0, 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawDiagnostics {
    pub law_name: String,
    pub mode: EvalMode,
    pub mean_offspring: f64,
    pub psi_at_1: f64,
    pub dpsi_at_1: f64,
    pub sigma_sq: f64,
    /// `E[X (log₊X)² + X̃ log₊X̃]`: exact for tables, Monte Carlo for
    /// Gaussian laws (absent without samples; finite by the closed form).
    pub x_log2_moment: Option<f64>,
    pub h4_ok: TriState,
    pub h5_ok: TriState,
    pub supercritical: bool,
    pub boundary_ok: bool,
    pub accepted: bool,
    pub tolerance: f64,
    pub mc: Option<BoundaryMc>,
}

fn log_plus(y: f64) -> f64 {
    y.ln().max(0.0)
}

fn x_moment_integrand(config: &[f64]) -> f64 {
    let x: f64 = config.iter().map(|&v| (-v).exp()).sum();
    let xt: f64 = config.iter().map(|&v| v.max(0.0) * (-v).exp()).sum();
    x * log_plus(x).powi(2) + xt * log_plus(xt)
}

/// Check supercriticality, the boundary normalisation and the moment
/// conditions. Failed assumptions are reported in the result, never raised.
///
/// Exact quantities come from closed forms or table sums; `n_samples`
/// offspring draws (if nonzero) feed the Monte Carlo cross-check and, for
/// continuous laws, the `X (log₊X)²` moment.
pub fn boundary_check(law: &ReproductionLaw, n_samples: usize, tol: f64, streams: &Streams) -> LawDiagnostics {
    let (psi, dpsi, d2psi) = law.psi_derivatives(1.0);
    let mean_offspring = law.mean_offspring();

    let mc = (n_samples > 0).then(|| {
        let parts = streams.par_batches(n_samples, crate::rng::DEFAULT_BATCH, |rng, range| {
            let mut buf = Vec::new();
            let (mut mass, mut drift, mut xm) = (Moments::default(), Moments::default(), Moments::default());
            for _ in range {
                law.sample_into(rng, &mut buf);
                mass.push(buf.iter().map(|&v| (-v).exp()).sum());
                drift.push(buf.iter().map(|&v| v * (-v).exp()).sum());
                xm.push(x_moment_integrand(&buf));
            }
            (mass, drift, xm)
        });
        parts.into_iter().fold(
            (Moments::default(), Moments::default(), Moments::default()),
            |a, b| (a.0.merge(b.0), a.1.merge(b.1), a.2.merge(b.2)),
        )
    });

    let (x_log2_moment, h_state) = match &law.kind {
        LawKind::Table(t) => (Some(t.expect(x_moment_integrand)), TriState::Verified),
        // Ψ is finite on all of ℝ and X has all moments.
        LawKind::IidGaussian { .. } => (mc.map(|m| m.2.mean()), TriState::Verified),
    };

    let supercritical = mean_offspring > 1.0;
    let boundary_ok = psi.abs() <= tol && dpsi.abs() <= tol && d2psi > 0.0;
    LawDiagnostics {
        law_name: law.name.clone(),
        mode: EvalMode::Exact,
        mean_offspring,
        psi_at_1: psi,
        dpsi_at_1: dpsi,
        sigma_sq: d2psi,
        x_log2_moment,
        h4_ok: h_state,
        h5_ok: h_state,
        supercritical,
        boundary_ok,
        accepted: supercritical && boundary_ok && x_log2_moment.is_none_or(f64::is_finite),
        tolerance: tol,
        mc: mc.map(|(mass, drift, _)| BoundaryMc { mass: mass.estimate(), drift: drift.estimate() }),
    }
}

/// Default acceptance tolerance in exact mode.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    // two_config root computed independently (mpmath bisection, 30 digits)
    const X_ROOT: f64 = 1.545_815_609_561_303_6;

    #[test]
    fn two_config_parameters_match_independent_solve() {
        assert!((two_config_root() - X_ROOT).abs() < 1e-13);
        let law = ReproductionLaw::two_config();
        let cfg = law.enumerate_configs().unwrap();
        assert_eq!(cfg.len(), 2);
        assert_eq!(cfg[0].0, 0.5);
        assert!((cfg[0].1[0] - (-0.435_551_673_686_811)).abs() < 1e-12);
        assert_eq!(cfg[1].1.len(), 2);
        assert!((cfg[1].1[0] - 1.482_399_197_615_093).abs() < 1e-12);
    }

    #[test]
    fn gaussian_psi_closed_form() {
        let law = ReproductionLaw::gaussian_dyadic();
        for i in 0..20 {
            let b = 0.1 * i as f64;
            let psi = log_laplace(&law, b).unwrap().value;
            assert!((psi - (b - 1.0).powi(2) * LN_2).abs() < 1e-12, "beta {b}");
        }
        // quadrature oracle values
        assert!((log_laplace(&law, 0.25).unwrap().value - 0.389_895_289_064_969_2).abs() < 1e-12);
        assert!((log_laplace(&law, 1.25).unwrap().value - 0.043_321_698_784_996_58).abs() < 1e-12);
    }

    #[test]
    fn two_config_exact_boundary() {
        let law = ReproductionLaw::two_config();
        let psi = log_laplace(&law, 1.0).unwrap();
        assert_eq!(psi.mode, EvalMode::Exact);
        assert!(psi.value.abs() < 1e-10);
        let d = boundary_check(&law, 0, EXACT_TOLERANCE, &Streams::new(1, "t"));
        assert!(d.accepted);
        assert!((d.sigma_sq - 0.645_661_451_593_239_6).abs() < 1e-10);
        assert!((d.mean_offspring - 1.5).abs() < 1e-15);
    }

    #[test]
    fn negative_beta_rejected() {
        let law = ReproductionLaw::gaussian_dyadic();
        assert!(log_laplace(&law, -0.1).is_err());
        assert!(log_laplace_mc(&law, -0.1, 10, &Streams::new(1, "t")).is_err());
    }

    #[test]
    fn mc_divergence_is_flagged() {
        // displacements of -1000 overflow e^{-βV} at β = 1
        let law = ReproductionLaw::from_table("huge", vec![Config { prob: 1.0, displacements: vec![-1000.0] }], None)
            .unwrap();
        assert!(matches!(log_laplace_mc(&law, 1.0, 10, &Streams::new(1, "t")), Err(Error::Divergence { .. })));
    }

    #[test]
    fn enumerate_configs_cases() {
        assert_eq!(ReproductionLaw::point_mass().enumerate_configs().unwrap(), vec![(1.0, vec![0.0])]);
        assert!(matches!(
            ReproductionLaw::gaussian_dyadic().enumerate_configs(),
            Err(Error::UnsupportedLaw { .. })
        ));
    }

    #[test]
    fn table_probabilities_must_sum_to_one() {
        let bad = vec![Config { prob: 0.5, displacements: vec![0.0] }];
        assert!(ReproductionLaw::from_table("bad", bad, None).is_err());
    }

    #[test]
    fn law_file_round_trip() {
        for law in [ReproductionLaw::gaussian_dyadic(), ReproductionLaw::two_config()] {
            let text = law.to_toml_string();
            let back = ReproductionLaw::from_toml_str(&text).unwrap();
            assert_eq!(back, law);
        }
        let b = ReproductionLaw::from_toml_str("kind = \"builtin\"\nbuiltin = \"two_config\"\n").unwrap();
        assert_eq!(b.name, "two_config");
    }

    #[test]
    fn point_mass_is_not_supercritical() {
        let d = boundary_check(&ReproductionLaw::point_mass(), 0, EXACT_TOLERANCE, &Streams::new(1, "t"));
        assert!(!d.supercritical);
        assert!(!d.accepted);
    }
}
