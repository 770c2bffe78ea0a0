//! Seeded, stream-split random number generation.
//!
//! Every replicate batch draws from its own ChaCha stream derived from
//! `(seed, salt, batch)`. Results therefore depend only on the seed and the
//! batch size, never on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Rng = ChaCha8Rng;

/// Default number of replicates that share one RNG stream.
pub const DEFAULT_BATCH: usize = 1024;

/// SplitMix64 finaliser, used to decorrelate stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a label into a salt so that distinct estimators never share streams.
pub fn salt(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn stream(seed: u64, salt: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix64(salt));
    rng.set_stream(mix64(index ^ salt.rotate_left(17)));
    rng
}

/// A reproducible family of RNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub seed: u64,
    pub salt: u64,
}

impl Streams {
    pub fn new(seed: u64, label: &str) -> Self {
        Streams { seed, salt: salt(label) }
    }

    /// A child family, for estimators that call other estimators.
    pub fn child(&self, label: &str) -> Self {
        Streams { seed: self.seed, salt: mix64(self.salt ^ salt(label)) }
    }

    pub fn rng(&self, index: u64) -> Rng {
        stream(self.seed, self.salt, index)
    }

    /// Run `total` replicates in batches, in parallel, and return per-batch
    /// results in batch order. `f(rng, range)` processes replicates `range`.
    pub fn par_batches<T, F>(&self, total: usize, batch: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut Rng, std::ops::Range<usize>) -> T + Sync,
    {
        let batch = batch.max(1);
        let n_batches = total.div_ceil(batch);
        (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = self.rng(b as u64);
                let lo = b * batch;
                let hi = (lo + batch).min(total);
                f(&mut rng, lo..hi)
            })
            .collect()
    }

    /// One RNG per replicate; results in replicate order.
    pub fn par_map<T, F>(&self, total: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut Rng, usize) -> T + Sync,
    {
        (0..total)
            .into_par_iter()
            .map(|i| {
                let mut rng = self.rng(i as u64);
                f(&mut rng, i)
            })
            .collect()
    }
}
