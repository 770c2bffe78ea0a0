//! Many-to-one estimators, spinal samplers and exact enumeration of small
//! trees.
//!
//! Under the size-biased measure `ℚ` the spine `(V(w_k))` is the associated
//! random walk. Under `ℚ^{(L)}` it is the walk conditioned, through the
//! `h`-transform by `R_L`, to stay above `−L`. Sibling subtrees are never
//! grown; their displacements are only recorded on request.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::brw::{GenerationFrame, Population};
use crate::error::{Error, Result};
use crate::functional::{project_into, GridFunctional, PathScaling};
use crate::laws::{LawKind, ReproductionLaw};
use crate::rng::{Rng, Streams};
use crate::stats::{normal_cdf, Estimate, Moments, WeightedMoments};
use crate::walk::{RenewalTable, WalkLaw};

/// Effective sample size below which weighted estimates carry a warning.
pub const ESS_WARNING: f64 = 50.0;

/// A functional of one ancestral path `V(z_0), ..., V(z_n)`.
pub type PathFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `E[Σ_{|z|=n} g] = E[e^{S_n} g(S)]`.
    Plain,
    /// `E[Σ_{|z|=n} e^{−V(z)} g] = E[g(S)]`.
    EMinusV,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEstimate {
    pub estimate: Estimate,
    pub ess: f64,
    pub warning: Option<String>,
}

fn ess_warning(ess: f64) -> Option<String> {
    (ess < ESS_WARNING).then(|| format!("effective sample size {ess:.1} below {ESS_WARNING}"))
}

/// Many-to-one estimate of a sum over generation `n`.
pub fn many_to_one(walk: &WalkLaw, g: &PathFn, n: usize, n_paths: usize, mode: WeightMode, streams: &Streams) -> Result<WeightedEstimate> {
    if n == 0 {
        return Ok(WeightedEstimate { estimate: Estimate::exact(g(&[0.0])), ess: f64::INFINITY, warning: None });
    }
    let parts = streams.par_batches(n_paths, 4096, |rng, range| {
        let mut m = Moments::default();
        let (mut sw, mut sw2) = (0.0, 0.0);
        let mut path = Vec::with_capacity(n + 1);
        for _ in range {
            walk.run(rng, 0.0, n, f64::NEG_INFINITY, Some(&mut path));
            let w = match mode {
                WeightMode::Plain => path[n].exp(),
                WeightMode::EMinusV => 1.0,
            };
            m.push(w * g(&path));
            sw += w;
            sw2 += w * w;
        }
        (m, sw, sw2)
    });
    let (mut m, mut sw, mut sw2) = (Moments::default(), 0.0, 0.0);
    for (a, b, c) in parts {
        m = m.merge(a);
        sw += b;
        sw2 += c;
    }
    let ess = sw * sw / sw2;
    Ok(WeightedEstimate { estimate: m.estimate(), ess, warning: ess_warning(ess) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineRun {
    pub spine_path: Vec<f64>,
    /// Importance weight towards the target spine law (1 for exact samplers).
    pub spine_weight: f64,
    /// Displacements of the spine's siblings at each step, when recorded.
    pub sibling_records: Option<Vec<Vec<f64>>>,
    pub range_exceeded: bool,
}

/// One spine step under `ℚ` from a table law: configuration `c` with
/// probability `p_c Σ_j e^{−d_j}`, then child `j` with probability `∝ e^{−d_j}`.
fn q_step(law: &ReproductionLaw, rng: &mut Rng, siblings: Option<&mut Vec<f64>>) -> f64 {
    match &law.kind {
        LawKind::IidGaussian { children, mean, variance } => {
            let sd = variance.sqrt();
            let z: f64 = StandardNormal.sample(rng);
            if let Some(s) = siblings {
                s.clear();
                s.extend((1..*children).map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + sd * z
                }));
            }
            mean - variance + sd * z
        }
        LawKind::Table(t) => {
            let configs = t.configs();
            let mut u: f64 = rng.random();
            for c in configs {
                for (j, d) in c.displacements.iter().enumerate() {
                    u -= c.prob * (-d).exp();
                    if u < 0.0 {
                        if let Some(s) = siblings {
                            s.clear();
                            s.extend(c.displacements.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, x)| *x));
                        }
                        return *d;
                    }
                }
            }
            let last = configs.last().unwrap();
            if let Some(s) = siblings {
                s.clear();
                s.extend_from_slice(&last.displacements[..last.displacements.len() - 1]);
            }
            *last.displacements.last().unwrap()
        }
    }
}

fn check_boundary(law: &ReproductionLaw) -> Result<()> {
    crate::walk::walk_from_reproduction(law).map(|_| ())
}

/// Spine of the size-biased tree under `ℚ`, started at 0.
pub fn q_spine(law: &ReproductionLaw, n: usize, record_siblings: bool, rng: &mut Rng) -> Result<SpineRun> {
    check_boundary(law)?;
    let mut path = Vec::with_capacity(n + 1);
    path.push(0.0);
    let mut records = record_siblings.then(Vec::new);
    let mut sib = Vec::new();
    for _ in 0..n {
        let d = q_step(law, rng, record_siblings.then_some(&mut sib));
        path.push(path.last().unwrap() + d);
        if let Some(r) = records.as_mut() {
            r.push(sib.clone());
        }
    }
    Ok(SpineRun { spine_path: path, spine_weight: 1.0, sibling_records: records, range_exceeded: false })
}

/// `E_P[Σ_{|z|=n} h(path z)] = E_ℚ[e^{V(w_n)} h(spine)]`, from `ℚ`-spines.
pub fn q_spine_estimate(law: &ReproductionLaw, h: &PathFn, n: usize, n_runs: usize, streams: &Streams) -> Result<WeightedEstimate> {
    check_boundary(law)?;
    let parts = streams.par_batches(n_runs, 4096, |rng, range| {
        let mut m = Moments::default();
        let (mut sw, mut sw2) = (0.0, 0.0);
        for _ in range {
            let run = q_spine(law, n, false, rng).expect("boundary checked");
            let w = run.spine_path[n].exp();
            m.push(w * h(&run.spine_path));
            sw += w;
            sw2 += w * w;
        }
        (m, sw, sw2)
    });
    let (mut m, mut sw, mut sw2) = (Moments::default(), 0.0, 0.0);
    for (a, b, c) in parts {
        m = m.merge(a);
        sw += b;
        sw2 += c;
    }
    let ess = sw * sw / sw2;
    Ok(WeightedEstimate { estimate: m.estimate(), ess, warning: ess_warning(ess) })
}

/// Spine under `ℚ^{(L)}`, started at 0, never below `−L`.
///
/// Table laws draw `(c, j)` exactly with probability
/// `p_c R_L(a+d_j) e^{−d_j} 1{a+d_j ≥ −L} / Z(a)`. The estimated table is
/// only approximately harmonic, so the run carries `Π Z(a_i)/R_L(a_i)`.
/// Gaussian laws draw the tilted step conditioned to stay above `−L`
/// (a truncated normal) and carry `Π q(a_i) R_L(a_{i+1})/R_L(a_i)` with
/// `q(a)` the probability of that condition.
pub fn ql_spine(law: &ReproductionLaw, table: &RenewalTable, l: f64, n: usize, record_siblings: bool, rng: &mut Rng) -> Result<SpineRun> {
    check_boundary(law)?;
    if !(l >= 0.0) {
        return Err(Error::invalid("L must be >= 0"));
    }
    let mut path = Vec::with_capacity(n + 1);
    path.push(0.0);
    let mut log_w = 0.0;
    let mut exceeded = false;
    let mut records = record_siblings.then(Vec::new);
    let mut terms: Vec<(f64, usize, usize)> = Vec::new();
    for _ in 0..n {
        let a = *path.last().unwrap();
        let r_a = table.r_l(l, a);
        exceeded |= !table.covers(l + a);
        let (d, sib) = match &law.kind {
            LawKind::Table(t) => {
                terms.clear();
                let mut z = 0.0;
                for (ci, c) in t.configs().iter().enumerate() {
                    for (j, d) in c.displacements.iter().enumerate() {
                        if a + d >= -l {
                            let w = c.prob * table.r_l(l, a + d) * (-d).exp();
                            z += w;
                            terms.push((w, ci, j));
                        }
                    }
                }
                if z <= 0.0 {
                    return Err(Error::invalid("no admissible spine child above -L"));
                }
                log_w += (z / r_a).ln();
                let mut u = rng.random::<f64>() * z;
                let &(_, ci, j) = terms.iter().find(|(w, _, _)| {
                    u -= w;
                    u < 0.0
                }).unwrap_or(terms.last().unwrap());
                let c = &t.configs()[ci];
                let sib: Vec<f64> = c.displacements.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, x)| *x).collect();
                (c.displacements[j], sib)
            }
            LawKind::IidGaussian { children, mean, variance } => {
                let sd = variance.sqrt();
                let mu = mean - variance;
                // d ≥ −L − a, by inversion of the normal tail.
                let lo = (-l - a - mu) / sd;
                let q = 1.0 - normal_cdf(lo);
                let p_lo = normal_cdf(lo);
                let u: f64 = rng.random();
                let x = inverse_normal_cdf(p_lo + u * q).max(lo);
                let d = mu + sd * x;
                log_w += q.ln() + (table.r_l(l, a + d) / r_a).ln();
                let sib = (1..*children)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        mean + sd * z
                    })
                    .collect();
                (d, sib)
            }
        };
        path.push(a + d);
        if let Some(r) = records.as_mut() {
            r.push(sib);
        }
    }
    exceeded |= !table.covers(l + path[n]);
    Ok(SpineRun { spine_path: path, spine_weight: log_w.exp(), sibling_records: records, range_exceeded: exceeded })
}

/// Acklam's rational approximation refined by one Newton step.
fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let plow = 0.02425;
    let x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    x - e / crate::stats::normal_pdf(x)
}

/// Weighted mean of `g(spine)` over `ℚ^{(L)}` runs.
pub fn ql_spine_mean(
    law: &ReproductionLaw,
    table: &RenewalTable,
    l: f64,
    n: usize,
    g: &PathFn,
    n_runs: usize,
    streams: &Streams,
) -> Result<WeightedEstimate> {
    check_boundary(law)?;
    let parts = streams.par_batches(n_runs, 1024, |rng, range| {
        let mut acc = WeightedMoments::default();
        for _ in range {
            let run = ql_spine(law, table, l, n, false, rng).expect("checked");
            acc.push(run.spine_weight, g(&run.spine_path));
        }
        acc
    });
    let acc = parts.into_iter().fold(WeightedMoments::default(), |a, b| a.merge(b));
    let ess = acc.ess();
    Ok(WeightedEstimate { estimate: acc.normalized(), ess, warning: ess_warning(ess) })
}

/// `E[W^{(L)}_{n,β}(F)] = E[e^{−(β−1)S_n} F(𝐒^{(n)}) 1{min S ≥ −L}]`.
/// `f = None` means `F ≡ 1`; otherwise a grid functional on `m` points of
/// the `σ√n`-rescaled walk.
pub fn spine_w_estimator(
    walk: &WalkLaw,
    beta: f64,
    n: usize,
    f: Option<(GridFunctional, usize)>,
    l: Option<f64>,
    n_runs: usize,
    streams: &Streams,
) -> Result<WeightedEstimate> {
    let barrier = l.map_or(f64::NEG_INFINITY, |l| -l);
    if n == 0 {
        let v = f.map_or(1.0, |(g, _)| g.eval(&[0.0]));
        return Ok(WeightedEstimate { estimate: Estimate::exact(v), ess: f64::INFINITY, warning: None });
    }
    let scaling = PathScaling::diffusive(n, walk.sigma());
    let parts = streams.par_batches(n_runs, 4096, |rng, range| {
        let mut m = Moments::default();
        let (mut sw, mut sw2) = (0.0, 0.0);
        let mut path = Vec::new();
        let mut grid = Vec::new();
        for _ in range {
            let out = walk.run(rng, 0.0, n, barrier, f.is_some().then_some(&mut path));
            let w = if out.survived { (-(beta - 1.0) * out.end).exp() } else { 0.0 };
            let v = match (f, out.survived) {
                (Some((g, mg)), true) => {
                    project_into(&path, mg, &scaling, &mut grid);
                    w * g.eval(&grid)
                }
                _ => w,
            };
            m.push(v);
            sw += w;
            sw2 += w * w;
        }
        (m, sw, sw2)
    });
    let (mut m, mut sw, mut sw2) = (Moments::default(), 0.0, 0.0);
    for (a, b, c) in parts {
        m = m.merge(a);
        sw += b;
        sw2 += c;
    }
    let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    let mut warning = ess_warning(ess);
    if beta < 1.0 {
        warning = Some(format!("beta = {beta} < 1 puts a positive exponential tilt on the walk; variance may be large"));
    }
    Ok(WeightedEstimate { estimate: m.estimate(), ess, warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactExpectation {
    pub value: f64,
    pub n: usize,
    pub functional_id: String,
    pub law_name: String,
}

/// Largest generation accepted by [`brute_force`].
pub const BRUTE_FORCE_MAX_N: usize = 3;
const BRUTE_FORCE_MAX_TREES: usize = 1 << 22;

/// Every tree of depth `n` with its exact probability.
pub fn enumerate_trees(law: &ReproductionLaw, n: usize) -> Result<Vec<(f64, Population)>> {
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::SizeGuard(format!("brute force enumeration is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")));
    }
    let configs = law.enumerate_configs()?;
    let mut trees = vec![(1.0, Population::new(law))];
    for _ in 0..n {
        let mut next = Vec::new();
        for (p, pop) in &trees {
            let frame = pop.last();
            let k = frame.len();
            // Mixed-radix counter over one configuration per particle.
            let mut digits = vec![0usize; k];
            loop {
                let mut prob = *p;
                let mut f = GenerationFrame::default();
                for (i, &c) in digits.iter().enumerate() {
                    let (pc, ds) = &configs[c];
                    prob *= pc;
                    for d in ds {
                        let y = frame.positions[i] + d;
                        f.positions.push(y);
                        f.parent_index.push(i as u32);
                        f.running_min.push(frame.running_min[i].min(y));
                    }
                }
                let mut child = pop.clone();
                child.alive = !f.is_empty();
                child.frames.push(f);
                child.barrier_log.push(crate::brw::BarrierSpec::NONE);
                next.push((prob, child));
                if next.len() > BRUTE_FORCE_MAX_TREES {
                    return Err(Error::SizeGuard("too many trees to enumerate".into()));
                }
                let mut i = 0;
                while i < k {
                    digits[i] += 1;
                    if digits[i] < configs.len() {
                        break;
                    }
                    digits[i] = 0;
                    i += 1;
                }
                if i == k {
                    break;
                }
            }
        }
        trees = next;
    }
    Ok(trees)
}

/// Exact `E[f(tree)]` for a finite-configuration law and `n ≤ 3`.
pub fn brute_force(law: &ReproductionLaw, n: usize, functional_id: &str, f: &dyn Fn(&Population) -> f64) -> Result<ExactExpectation> {
    let trees = enumerate_trees(law, n)?;
    let value = trees.iter().map(|(p, t)| p * f(t)).sum();
    Ok(ExactExpectation { value, n, functional_id: functional_id.to_string(), law_name: law.name.clone() })
}

/// Additive functionals `Σ_{|z|=n} h(path z)` used by the oracle battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Additive {
    /// `e^{−βV}`.
    Partition { beta: f64 },
    /// `V e^{−V}`.
    Derivative,
    /// 1.
    Count,
    /// `e^{−V} 1{min path ≥ −L}`.
    Truncated { l: f64 },
    /// `V² e^{−V}`.
    SecondMoment,
    /// `e^{−V} max path`.
    SupWeighted,
}

impl Additive {
    pub const BATTERY: [Additive; 6] = [
        Additive::Partition { beta: 1.0 },
        Additive::Derivative,
        Additive::Count,
        Additive::Truncated { l: 0.5 },
        Additive::Partition { beta: 1.5 },
        Additive::SupWeighted,
    ];

    pub fn id(&self) -> String {
        match self {
            Additive::Partition { beta } => format!("W(beta={beta})"),
            Additive::Derivative => "D".into(),
            Additive::Count => "N".into(),
            Additive::Truncated { l } => format!("W(L={l})"),
            Additive::SecondMoment => "V2W".into(),
            Additive::SupWeighted => "supW".into(),
        }
    }

    /// `h(path)` for one particle.
    pub fn h(&self, path: &[f64]) -> f64 {
        let v = *path.last().unwrap();
        match self {
            Additive::Partition { beta } => (-beta * v).exp(),
            Additive::Derivative => v * (-v).exp(),
            Additive::Count => 1.0,
            Additive::Truncated { l } => {
                if path.iter().all(|&x| x >= -l) {
                    (-v).exp()
                } else {
                    0.0
                }
            }
            Additive::SecondMoment => v * v * (-v).exp(),
            Additive::SupWeighted => (-v).exp() * path.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Sum of `h` over the last generation of a tree.
    pub fn over_tree(&self, pop: &Population) -> f64 {
        (0..pop.last().len()).map(|i| self.h(&pop.path_of(i).unwrap())).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brw::{replicate, BarrierSpec};
    use crate::stats::ks_two_sample;
    use crate::walk::{renewal_function, survival_probability, walk_from_reproduction};

    fn two() -> (ReproductionLaw, WalkLaw) {
        let law = ReproductionLaw::two_config();
        let w = walk_from_reproduction(&law).unwrap();
        (law, w)
    }

    #[test]
    fn enumeration_martingale_exact() {
        let (law, _) = two();
        for n in 0..=3 {
            let e = brute_force(&law, n, "W", &|p| Additive::Partition { beta: 1.0 }.over_tree(p)).unwrap();
            assert!((e.value - 1.0).abs() < 1e-12, "n = {n}: {}", e.value);
        }
        let trees = enumerate_trees(&law, 2).unwrap();
        assert!((trees.iter().map(|t| t.0).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(brute_force(&law, 4, "W", &|_| 1.0).is_err());
        assert!(brute_force(&ReproductionLaw::gaussian_dyadic(), 1, "W", &|_| 1.0).is_err());
        // E[N_3] = (3/2)^3
        let n3 = brute_force(&law, 3, "N", &|p| p.last().len() as f64).unwrap();
        assert!((n3.value - 3.375).abs() < 1e-12);
    }

    #[test]
    fn many_to_one_matches_enumeration() {
        let (law, w) = two();
        let s = Streams::new(1, "m2o");
        for f in Additive::BATTERY {
            let exact = brute_force(&law, 2, &f.id(), &|p| f.over_tree(p)).unwrap().value;
            let h = |p: &[f64]| f.h(p);
            let m = many_to_one(&w, &h, 2, 100_000, WeightMode::Plain, &s.child(&f.id())).unwrap();
            assert!(m.estimate.within_se(exact, 3.0), "{}: {:?} vs {exact}", f.id(), m.estimate);
            let q = q_spine_estimate(&law, &h, 2, 100_000, &s.child("q").child(&f.id())).unwrap();
            assert!(q.estimate.within_se(exact, 3.0), "{}: {:?} vs {exact}", f.id(), q.estimate);
        }
        let one = many_to_one(&w, &|_| 1.0, 5, 50_000, WeightMode::EMinusV, &s).unwrap();
        assert_eq!(one.estimate.value, 1.0);
        let zero = many_to_one(&w, &|p| p[0] + 2.0, 0, 10, WeightMode::Plain, &s).unwrap();
        assert_eq!(zero.estimate.value, 2.0);
    }

    #[test]
    fn truncated_many_to_one_is_survival() {
        let (_, w) = two();
        let s = Streams::new(2, "trunc");
        let l = 1.0;
        let g = |p: &[f64]| f64::from(p.iter().all(|&x| x >= -l));
        let m = many_to_one(&w, &g, 50, 100_000, WeightMode::EMinusV, &s.child("a")).unwrap();
        let p = survival_probability(&w, l, 50, 100_000, &s.child("b")).unwrap();
        assert!(m.estimate.agrees_with(&p.estimate(), 3.0));
    }

    #[test]
    fn q_spine_marginal_is_walk() {
        let (law, w) = two();
        let mut rng = Streams::new(3, "qs").rng(0);
        let n = 100_000;
        let d1 = law.enumerate_configs().unwrap()[0].1[0];
        let mut first = 0;
        let mut m = Moments::default();
        let mut inc = Vec::with_capacity(n);
        for _ in 0..n {
            let r = q_spine(&law, 1, true, &mut rng).unwrap();
            let d = r.spine_path[1];
            first += usize::from((d - d1).abs() < 1e-12);
            m.push(d);
            inc.push(d);
            let sib = &r.sibling_records.unwrap()[0];
            assert!(sib.len() <= 1);
        }
        let p = first as f64 / n as f64;
        assert!((p - 0.5 * crate::laws::two_config_root()).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
        assert!(m.estimate().within_se(0.0, 3.0));
        let mut srng = Streams::new(3, "steps").rng(0);
        let steps: Vec<f64> = (0..n).map(|_| w.sample_step(&mut srng)).collect();
        assert!(ks_two_sample(&inc, &steps) < 0.01);
        assert_eq!(q_spine(&law, 0, false, &mut rng).unwrap().spine_path, vec![0.0]);
    }

    #[test]
    fn ql_spine_respects_barrier_and_matches_direct() {
        for law in [ReproductionLaw::two_config(), ReproductionLaw::gaussian_dyadic()] {
            let w = walk_from_reproduction(&law).unwrap();
            let sigma = w.sigma();
            let s = Streams::new(4, &law.name);
            let table = renewal_function(&w, &RenewalTable::uniform_grid(sigma / 4.0, 50.0 * sigma), 20_000, &s.child("t")).unwrap();
            let l = 1.0;
            let n = 64;
            let mut rng = s.rng(99);
            for _ in 0..2000 {
                let r = ql_spine(&law, &table, l, n, false, &mut rng).unwrap();
                assert!(r.spine_path.iter().all(|&x| x >= -l));
                assert!(r.spine_weight.is_finite() && r.spine_weight > 0.0);
            }
            // g = endpoint, against E[g(S) R_L(S_n) 1{min ≥ −L}] / R_L(0).
            let g = |p: &[f64]| *p.last().unwrap();
            let spine = ql_spine_mean(&law, &table, l, n, &g, 50_000, &s.child("q")).unwrap();
            let direct = many_to_one(
                &w,
                &|p: &[f64]| if p.iter().all(|&x| x >= -l) { g(p) * table.r_l(l, p[n]) } else { 0.0 },
                n,
                400_000,
                WeightMode::EMinusV,
                &s.child("d"),
            )
            .unwrap()
            .estimate
            .scale(1.0 / table.r_l(l, 0.0));
            assert!(spine.estimate.agrees_with(&direct, 3.0), "{}: {:?} vs {:?}", law.name, spine.estimate, direct);
        }
    }

    #[test]
    fn inverse_normal_is_accurate() {
        for p in [1e-10, 0.001, 0.2, 0.5, 0.9, 0.999999] {
            assert!((normal_cdf(inverse_normal_cdf(p)) / p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spine_w_matches_survival_and_tree() {
        let (law, w) = two();
        let s = Streams::new(5, "sw");
        let e = spine_w_estimator(&w, 1.0, 40, None, Some(5.0), 100_000, &s.child("a")).unwrap();
        let p = survival_probability(&w, 5.0, 40, 100_000, &s.child("b")).unwrap();
        assert!(e.estimate.agrees_with(&p.estimate(), 3.0));
        let zero = spine_w_estimator(&w, 1.3, 0, Some((GridFunctional::Sup, 4)), None, 10, &s).unwrap();
        assert_eq!(zero.estimate.value, 0.0);
        // Against direct trees at n = 10.
        let beta = 1.2;
        let l = 1.0;
        let spine = spine_w_estimator(&w, beta, 10, None, Some(l), 200_000, &s.child("c")).unwrap();
        let trees = replicate(&law, 10, &BarrierSpec::lower(l), 200_000, 1 << 20, &s.child("d"), |_, p, _| p.readout(beta, None, None).log_w.exp());
        let m = Moments::from_slice(&trees.into_iter().map(|r| r.unwrap()).map(|x| if x.is_finite() { x } else { 0.0 }).collect::<Vec<_>>());
        assert!(spine.estimate.agrees_with(&m.estimate(), 3.0), "{:?} vs {:?}", spine.estimate, m.estimate());
    }
}
