//! Continuous-time simulation.
//!
//! Two samplers share the rate definitions of [`crate::models`]:
//!
//! - [`Simulation`]: exact Gillespie sampling of one process, with per-site
//!   total rates kept in a sum tree.
//! - [`CoupledChain`]: uniformized simulation of several processes driven by
//!   the same Poisson marks, used to realize monotone couplings.
//!
//! Randomness is addressed by [`RngSeed`]: a master seed plus a replica index.
//! Each pair selects an independent ChaCha stream, so results do not depend on
//! how replicas are scheduled across threads.

mod coupled;
mod gillespie;
mod sumtree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use coupled::{
    check_admissible, simulate_coupled, simulate_coupled_unchecked, CoupleReport, CoupledChain, Marginal, MarkOutcome, Violation,
};
pub use gillespie::{simulate, EngineOptions, Sample, SampleGrid, Simulation, StepOutcome, Trajectory};

/// Rebuild the rate tree from scratch every this many events.
pub const RATE_CHECK_INTERVAL: u64 = 1 << 16;

/// Address of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub master: u64,
    pub replica: u64,
}

impl RngSeed {
    pub fn new(master: u64, replica: u64) -> Self {
        RngSeed { master, replica }
    }

    /// ChaCha8 keyed by `master` (expanded through `seed_from_u64`) on stream
    /// number `replica`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.replica);
        rng
    }
}

/// Derives an unrelated master seed for a sub-experiment labelled `tag`
/// (splitmix64 finalizer over `master ^ tag * golden`).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs independent replicas, in parallel when a pool is available. Output
/// order is replica order regardless of scheduling.
pub struct Runner {
    pool: Option<rayon::ThreadPool>,
}

impl Default for Runner {
    fn default() -> Self {
        Runner { pool: None }
    }
}

impl Runner {
    /// `threads = None` uses the global rayon pool; `Some(1)` runs serially.
    pub fn new(threads: Option<usize>) -> crate::Result<Self> {
        let pool = match threads {
            None => None,
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| crate::Error::Internal(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Runner { pool })
    }

    pub fn map<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        let run = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }

    /// Like [`Self::map`] for fallible replicas; returns the first error in
    /// replica order.
    pub fn try_map<T, F>(&self, count: u64, f: F) -> crate::Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> crate::Result<T> + Sync + Send,
    {
        self.map(count, f).into_iter().collect()
    }
}
