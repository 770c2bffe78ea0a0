//! Exact forward simulation of the branching random walk.
//!
//! A [`Population`] stores every generation (positions and parent indices),
//! because trajectory functionals need complete ancestral paths. Memory is
//! linear in the total number of particles ever born.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::rng::{Rng, Streams};
use crate::stats::LogSumExp;
use crate::walk::RenewalTable;

/// Default per-tree particle cap (one generation).
pub const DEFAULT_MAX_PARTICLES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationFrame {
    pub positions: Vec<f64>,
    /// Index of each particle's parent in the previous frame.
    pub parent_index: Vec<u32>,
    /// Minimum of the ancestral path, the particle included.
    pub running_min: Vec<f64>,
}

impl GenerationFrame {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Kill if the position is below `(3/2) log n − k` from generation `⌊n/2⌋` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondBarrier {
    pub k: f64,
    pub horizon: usize,
}

impl SecondBarrier {
    pub fn level(&self) -> f64 {
        1.5 * (self.horizon as f64).ln() - self.k
    }
}

/// The window event `A_n`: every ancestor `z_j` must lie in `I_{n,j}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowA {
    pub horizon: usize,
    pub l: f64,
    pub k_n: usize,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
}

impl WindowA {
    /// `I_{n,j}` as a closed interval.
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let n = self.horizon;
        let half = n / 2;
        let log_term = 1.5 * (n as f64).ln();
        if j == n {
            (log_term + self.alpha_minus, log_term + self.alpha_plus)
        } else if j >= half {
            (log_term, f64::INFINITY)
        } else if j == self.k_n {
            let k = self.k_n as f64;
            (k.cbrt(), k)
        } else {
            (-self.l, f64::INFINITY)
        }
    }
}

/// Killing rules applied when a generation is born. Barriers only remove
/// particles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub lower_l: Option<f64>,
    pub second_barrier: Option<SecondBarrier>,
    pub window_a: Option<WindowA>,
}

impl BarrierSpec {
    pub const NONE: BarrierSpec = BarrierSpec { lower_l: None, second_barrier: None, window_a: None };

    pub fn lower(l: f64) -> Self {
        BarrierSpec { lower_l: Some(l), ..Self::NONE }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.window_a {
            if w.k_n == 0 || w.k_n >= w.horizon / 2 || !(w.alpha_minus <= w.alpha_plus) {
                return Err(Error::invalid("window A needs 0 < k_n < n/2 and alpha- <= alpha+"));
            }
        }
        if self.lower_l.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::invalid("lower barrier L must be >= 0"));
        }
        Ok(())
    }

    /// Whether a particle at `x` in generation `j` survives.
    #[inline]
    pub fn admits(&self, j: usize, x: f64) -> bool {
        if let Some(l) = self.lower_l {
            if x < -l {
                return false;
            }
        }
        if let Some(b) = self.second_barrier {
            if j >= b.horizon / 2 && j <= b.horizon && x < b.level() {
                return false;
            }
        }
        if let Some(w) = self.window_a {
            if j <= w.horizon {
                let (lo, hi) = w.interval(j);
                if x < lo || x > hi {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub frames: Vec<GenerationFrame>,
    pub alive: bool,
    pub law_name: String,
    /// Barrier applied when each generation (from 1) was born.
    pub barrier_log: Vec<BarrierSpec>,
    /// Set when growth aborted on the particle cap; frames are partial.
    pub exploded: bool,
}

impl Population {
    pub fn new(law: &ReproductionLaw) -> Self {
        Population {
            frames: vec![GenerationFrame { positions: vec![0.0], parent_index: vec![0], running_min: vec![0.0] }],
            alive: true,
            law_name: law.name.clone(),
            barrier_log: Vec::new(),
            exploded: false,
        }
    }

    /// Index of the last generation.
    pub fn generation(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn last(&self) -> &GenerationFrame {
        self.frames.last().unwrap()
    }

    /// Grow one generation. An extinct population gains an empty frame.
    pub fn grow(&mut self, law: &ReproductionLaw, barrier: &BarrierSpec, rng: &mut Rng, max_particles: usize) -> Result<()> {
        let j = self.frames.len();
        let prev = self.last();
        let mut next = GenerationFrame::default();
        let mut buf = Vec::with_capacity(law.max_children());
        for (p, (&x, &m)) in prev.positions.iter().zip(&prev.running_min).enumerate() {
            law.sample_into(rng, &mut buf);
            for &d in &buf {
                let y = x + d;
                if barrier.admits(j, y) {
                    next.positions.push(y);
                    next.parent_index.push(p as u32);
                    next.running_min.push(m.min(y));
                }
            }
            if next.len() > max_particles {
                self.exploded = true;
                return Err(Error::PopulationExplosion { max_particles, generation: j });
            }
        }
        self.alive = !next.is_empty();
        self.frames.push(next);
        self.barrier_log.push(*barrier);
        Ok(())
    }

    /// Grow a fresh tree to generation `n`.
    pub fn simulate(law: &ReproductionLaw, n: usize, barrier: &BarrierSpec, max_particles: usize, rng: &mut Rng) -> Result<Self> {
        barrier.validate()?;
        let mut pop = Population::new(law);
        for _ in 0..n {
            pop.grow(law, barrier, rng, max_particles)?;
        }
        Ok(pop)
    }

    /// Ancestral positions `V(z_0), ..., V(z_k)` of particle `index` in
    /// generation `k`.
    pub fn path_at(&self, k: usize, index: usize) -> Result<Vec<f64>> {
        let frame = self.frames.get(k).ok_or(Error::IndexOutOfRange { index: k, len: self.frames.len() })?;
        if index >= frame.len() {
            return Err(Error::IndexOutOfRange { index, len: frame.len() });
        }
        let mut path = vec![0.0; k + 1];
        let mut i = index;
        for g in (0..=k).rev() {
            path[g] = self.frames[g].positions[i];
            i = self.frames[g].parent_index[i] as usize;
        }
        Ok(path)
    }

    /// Ancestral path of a particle of the last generation.
    pub fn path_of(&self, index: usize) -> Result<Vec<f64>> {
        self.path_at(self.generation(), index)
    }

    /// Index of the ancestor in generation `g` of particle `index` of the
    /// last generation.
    pub fn ancestor(&self, index: usize, g: usize) -> usize {
        let mut i = index;
        for k in (g + 1..=self.generation()).rev() {
            i = self.frames[k].parent_index[i] as usize;
        }
        i
    }

    /// `(min over every particle ever alive, min over the last generation)`.
    pub fn min_trajectory_stats(&self) -> (f64, f64) {
        let global = self.frames.iter().flat_map(|f| f.positions.iter().copied()).fold(f64::INFINITY, f64::min);
        let last = self.last().positions.iter().copied().fold(f64::INFINITY, f64::min);
        (global, last)
    }

    pub fn readout(&self, beta: f64, renewal: Option<&RenewalTable>, l: Option<f64>) -> MartingaleReadout {
        readout(self.last(), beta, renewal, l)
    }

    pub fn readout_at(&self, k: usize, beta: f64, renewal: Option<&RenewalTable>, l: Option<f64>) -> MartingaleReadout {
        readout(&self.frames[k], beta, renewal, l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReadout {
    /// `log Σ e^{−βV(z)}`, `−∞` when empty.
    pub log_w: f64,
    /// Derivative martingale `Σ V(z) e^{−V(z)}`.
    pub d: f64,
    /// `Σ R_L(V(z)) e^{−V(z)} 1{min ≥ −L}`, when a table and `L` are given.
    pub d_l: Option<f64>,
    pub min_pos: f64,
    pub n_particles: usize,
}

pub fn readout(frame: &GenerationFrame, beta: f64, renewal: Option<&RenewalTable>, l: Option<f64>) -> MartingaleReadout {
    let mut lse = LogSumExp::default();
    let mut d = 0.0;
    let mut min_pos = f64::INFINITY;
    for &x in &frame.positions {
        lse.push(-beta * x);
        d += x * (-x).exp();
        min_pos = min_pos.min(x);
    }
    let d_l = match (renewal, l) {
        (Some(t), Some(l)) => Some(
            frame
                .positions
                .iter()
                .zip(&frame.running_min)
                .filter(|(_, &m)| m >= -l)
                .map(|(&x, _)| t.r_l(l, x) * (-x).exp())
                .sum(),
        ),
        _ => None,
    };
    MartingaleReadout { log_w: lse.value(), d, d_l, min_pos, n_particles: frame.len() }
}

/// Grow `n_trees` independent trees and map each through `f` without keeping
/// them. Tree `i` always uses RNG stream `i`.
pub fn replicate<T, F>(
    law: &ReproductionLaw,
    n: usize,
    barrier: &BarrierSpec,
    n_trees: usize,
    max_particles: usize,
    streams: &Streams,
    f: F,
) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize, &Population, &mut Rng) -> T + Sync,
{
    streams.par_map(n_trees, |rng, i| {
        let pop = Population::simulate(law, n, barrier, max_particles, rng)?;
        Ok(f(i, &pop, rng))
    })
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.0.len() < k {
            return Err(Error::Snapshot("truncated snapshot".into()));
        }
        let (a, b) = self.0.split_at(k);
        self.0 = b;
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        Ok(self.take(8 * k)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"BRWSNAP\0";
const SNAPSHOT_VERSION: u32 = 1;

impl Population {
    /// Versioned little-endian snapshot: header, law name, barrier log (JSON),
    /// then each frame as `count, positions, parents, running minima`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.push(u8::from(self.alive));
        out.push(u8::from(self.exploded));
        let put_bytes = |out: &mut Vec<u8>, b: &[u8]| {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(b);
        };
        put_bytes(&mut out, self.law_name.as_bytes());
        put_bytes(&mut out, serde_json::to_string(&self.barrier_log).unwrap().as_bytes());
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        for f in &self.frames {
            out.extend_from_slice(&(f.len() as u64).to_le_bytes());
            f.positions.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            f.parent_index.iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
            f.running_min.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor(bytes);
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("not a population snapshot".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
        }
        let alive = r.take(1)?[0] != 0;
        let exploded = r.take(1)?[0] != 0;
        let len = r.u64()? as usize;
        let law_name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Snapshot(e.to_string()))?;
        let len = r.u64()? as usize;
        let barrier_log = serde_json::from_slice(r.take(len)?)?;
        let n_frames = r.u64()? as usize;
        let mut frames = Vec::with_capacity(n_frames.min(1 << 16));
        for _ in 0..n_frames {
            let k = r.u64()? as usize;
            let positions = r.f64s(k)?;
            let parent_index = r.take(4 * k)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
            let running_min = r.f64s(k)?;
            frames.push(GenerationFrame { positions, parent_index, running_min });
        }
        if frames.is_empty() {
            return Err(Error::Snapshot("snapshot has no frames".into()));
        }
        Ok(Population { frames, alive, law_name, barrier_log, exploded })
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;

    fn streams() -> Streams {
        Streams::new(11, "brw-tests")
    }

    #[test]
    fn point_mass_stays_at_origin() {
        let law = ReproductionLaw::point_mass();
        let pop = Population::simulate(&law, 6, &BarrierSpec::NONE, 16, &mut streams().rng(0)).unwrap();
        assert!(pop.frames.iter().all(|f| f.positions == vec![0.0]));
        assert_eq!(pop.path_of(0).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn dyadic_frames_double() {
        let pop = Population::simulate(&ReproductionLaw::gaussian_dyadic(), 8, &BarrierSpec::NONE, 1 << 10, &mut streams().rng(1)).unwrap();
        for (k, f) in pop.frames.iter().enumerate() {
            assert_eq!(f.len(), 1 << k);
            assert!(f.parent_index.iter().all(|&p| (p as usize) < pop.frames[k.saturating_sub(1)].len()));
        }
        for i in [0, 17, 255] {
            let path = pop.path_of(i).unwrap();
            let mut idx = i;
            for k in (0..=8).rev() {
                assert_eq!(path[k], pop.frames[k].positions[idx]);
                idx = pop.frames[k].parent_index[idx] as usize;
            }
        }
        assert!(matches!(pop.path_of(256), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn root_readout_and_stats() {
        let pop = Population::new(&ReproductionLaw::gaussian_dyadic());
        let r = pop.readout(1.3, None, None);
        assert_eq!((r.log_w, r.d, r.n_particles), (0.0, 0.0, 1));
        assert_eq!(pop.min_trajectory_stats(), (0.0, 0.0));
        assert_eq!(pop.path_of(0).unwrap(), vec![0.0]);
    }

    #[test]
    fn same_seed_same_tree() {
        let law = ReproductionLaw::two_config();
        let run = || {
            replicate(&law, 20, &BarrierSpec::NONE, 200, 1 << 20, &streams(), |_, p, _| {
                (p.alive, p.last().positions.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            })
            .into_iter()
            .map(Result::unwrap)
            .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lower_barrier_kills_and_never_moves() {
        let law = ReproductionLaw::gaussian_dyadic();
        for i in 0..20 {
            let killed = Population::simulate(&law, 8, &BarrierSpec::lower(1.0), 1 << 12, &mut streams().rng(i)).unwrap();
            let (gmin, _) = killed.min_trajectory_stats();
            assert!(gmin >= -1.0);
            assert!(killed.last().len() <= 256);
        }
    }

    #[test]
    fn barrier_on_fixed_tree_is_monotone() {
        // Filtering a fixed frame through a barrier can only lower W and D_L.
        let law = ReproductionLaw::gaussian_dyadic();
        let pop = Population::simulate(&law, 10, &BarrierSpec::NONE, 1 << 12, &mut streams().rng(3)).unwrap();
        let table = RenewalTable {
            grid: vec![0.0, 10.0],
            r_values: vec![1.0, 11.0],
            n_ladder_samples: 0,
            overruns: 0,
            direction: crate::walk::RenewalDirection::Descending,
            slope: 1.0,
            slope_se: 0.0,
        };
        let f = pop.last();
        let kept: Vec<usize> = (0..f.len()).filter(|&i| f.running_min[i] >= -1.0).collect();
        let sub = GenerationFrame {
            positions: kept.iter().map(|&i| f.positions[i]).collect(),
            parent_index: kept.iter().map(|&i| f.parent_index[i]).collect(),
            running_min: kept.iter().map(|&i| f.running_min[i]).collect(),
        };
        let a = readout(f, 1.0, Some(&table), Some(1.0));
        let b = readout(&sub, 1.0, Some(&table), Some(1.0));
        assert!(b.log_w <= a.log_w && b.n_particles <= a.n_particles);
        assert!((b.d_l.unwrap() - a.d_l.unwrap()).abs() < 1e-12);
        assert!(a.d_l.unwrap() >= 0.0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let pop = Population::simulate(&ReproductionLaw::gaussian_dyadic(), 9, &BarrierSpec::NONE, 1 << 12, &mut streams().rng(4)).unwrap();
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let naive: f64 = pop.last().positions.iter().map(|x| (-beta * x).exp()).sum();
            let r = pop.readout(beta, None, None);
            assert!((r.log_w.exp() / naive - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn additive_martingale_one_step() {
        let law = ReproductionLaw::two_config();
        let rs = replicate(&law, 1, &BarrierSpec::NONE, 100_000, 1 << 10, &streams(), |_, p, _| p.readout(1.0, None, None).log_w.exp());
        let m = Moments::from_slice(&rs.into_iter().map(Result::unwrap).collect::<Vec<_>>());
        assert!(m.estimate().within_se(1.0, 3.0));
    }

    #[test]
    fn conditional_growth_factor_is_laplace() {
        let law = ReproductionLaw::gaussian_dyadic();
        let beta = 1.4;
        let (psi, _, _) = law.psi_derivatives(beta);
        let rs = streams().par_map(20_000, |rng, _| {
            let mut pop = Population::simulate(&law, 4, &BarrierSpec::NONE, 1 << 10, rng).unwrap();
            let w0 = pop.readout(beta, None, None).log_w;
            pop.grow(&law, &BarrierSpec::NONE, rng, 1 << 10).unwrap();
            (pop.readout(beta, None, None).log_w - w0).exp()
        });
        let m = Moments::from_slice(&rs);
        assert!(m.estimate().within_se(psi.exp(), 3.0), "{:?} vs {}", m.estimate(), psi.exp());
    }

    #[test]
    fn explosion_guard_aborts() {
        let mut pop = Population::new(&ReproductionLaw::gaussian_dyadic());
        let mut rng = streams().rng(5);
        let law = ReproductionLaw::gaussian_dyadic();
        let mut res = Ok(());
        for _ in 0..6 {
            res = pop.grow(&law, &BarrierSpec::NONE, &mut rng, 16);
            if res.is_err() {
                break;
            }
        }
        assert!(matches!(res, Err(Error::PopulationExplosion { max_particles: 16, generation: 5 })));
        assert!(pop.exploded);
        assert_eq!(pop.generation(), 4);
    }

    #[test]
    fn window_intervals() {
        let w = WindowA { horizon: 100, l: 2.0, k_n: 8, alpha_minus: 1.0, alpha_plus: 5.0 };
        let lt = 1.5 * 100f64.ln();
        assert_eq!(w.interval(3), (-2.0, f64::INFINITY));
        assert_eq!(w.interval(8), (2.0, 8.0));
        assert_eq!(w.interval(50), (lt, f64::INFINITY));
        assert_eq!(w.interval(100), (lt + 1.0, lt + 5.0));
        let spec = BarrierSpec { window_a: Some(w), ..BarrierSpec::NONE };
        assert!(spec.validate().is_ok());
        assert!(!spec.admits(8, 1.0));
        let bad = BarrierSpec { window_a: Some(WindowA { k_n: 60, ..w }), ..BarrierSpec::NONE };
        assert!(bad.validate().is_err());
        let sb = SecondBarrier { k: 1.0, horizon: 100 };
        let s = BarrierSpec { second_barrier: Some(sb), ..BarrierSpec::NONE };
        assert!(s.admits(49, -10.0) && !s.admits(50, sb.level() - 1e-9));
    }

    #[test]
    fn snapshot_round_trip() {
        let pop = Population::simulate(&ReproductionLaw::two_config(), 6, &BarrierSpec::lower(1.0), 1 << 10, &mut streams().rng(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.bin");
        pop.write_snapshot(&path).unwrap();
        assert_eq!(Population::read_snapshot(&path).unwrap(), pop);
        let bytes = pop.to_bytes();
        assert!(Population::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Population::from_bytes(b"garbage!").is_err());
    }
}
