//! Deterministic replica-parallel Monte Carlo.
//!
//! Replica `i` of an experiment draws from a ChaCha8 stream keyed by
//! `SHA-256("loopperc/replica-seed/v1" ‖ master_seed (LE) ‖ tag)` with stream
//! number `i`. Replicas are grouped into fixed chunks of [`CHUNK`] indices,
//! each chunk folds its replicas in index order, and the chunk results are
//! merged in chunk order. The output therefore depends only on the
//! configuration and the master seed, never on the number of workers.

mod experiments;

pub use experiments::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stats::Z_95;

pub type ReplicaRng = ChaCha8Rng;

/// Domain separator mixed into every replica key.
pub const SEED_DOMAIN: &[u8] = b"loopperc/replica-seed/v1";

/// Replicas per scheduling unit.
pub const CHUNK: u64 = 256;

#[derive(Clone, Debug)]
pub struct SeedSequence {
    key: [u8; 32],
}

impl SeedSequence {
    pub fn new(master_seed: u64, tag: &str) -> Self {
        let mut h = Sha256::new();
        h.update(SEED_DOMAIN);
        h.update(master_seed.to_le_bytes());
        h.update(tag.as_bytes());
        SeedSequence { key: h.finalize().into() }
    }

    pub fn replica(&self, index: u64) -> ReplicaRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

/// What to run: replica count, seed and an experiment tag that separates
/// the random streams of different experiments sharing a seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub replicas: u64,
    pub master_seed: u64,
    pub tag: String,
    /// Worker cap; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunSpec {
    pub fn new(tag: impl Into<String>, replicas: u64, master_seed: u64) -> Self {
        RunSpec { replicas, master_seed, tag: tag.into(), threads: None }
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn tagged(&self, suffix: &str) -> Self {
        RunSpec { tag: format!("{}/{suffix}", self.tag), ..self.clone() }
    }
}

/// Sufficient statistics that can be combined. Merging must be associative
/// so that any partition of the replicas gives the same result.
pub trait Merge: Default + Send {
    fn merge(&mut self, other: Self);
}

impl<T: Merge> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        if self.is_empty() {
            *self = other;
        } else {
            assert_eq!(self.len(), other.len(), "merging tallies of different shapes");
            for (a, b) in self.iter_mut().zip(other) {
                a.merge(b);
            }
        }
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// Runs `spec.replicas` replicas of `f`, each with its own RNG stream.
/// `init` builds per-worker scratch space.
pub fn run_replicas_with<S, W, I, F>(spec: &RunSpec, init: I, f: F) -> Result<S>
where
    S: Merge,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, &mut ReplicaRng, &mut S) + Sync + Send,
{
    if spec.replicas == 0 {
        return Err(Error::param("replicas", "need at least one replica"));
    }
    let seeds = SeedSequence::new(spec.master_seed, &spec.tag);
    let chunks = spec.replicas.div_ceil(CHUNK);
    let work = || -> Vec<S> {
        (0..chunks)
            .into_par_iter()
            .map_init(&init, |scratch, c| {
                let mut acc = S::default();
                for i in c * CHUNK..((c + 1) * CHUNK).min(spec.replicas) {
                    let mut rng = seeds.replica(i);
                    f(scratch, &mut rng, &mut acc);
                }
                acc
            })
            .collect()
    };
    let parts = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut total = S::default();
    for p in parts {
        total.merge(p);
    }
    Ok(total)
}

pub fn run_replicas<S, F>(spec: &RunSpec, f: F) -> Result<S>
where
    S: Merge,
    F: Fn(&mut ReplicaRng, &mut S) + Sync + Send,
{
    run_replicas_with(spec, || (), |_, rng, acc| f(rng, acc))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bernoulli {
    pub trials: u64,
    pub successes: u64,
}

impl Bernoulli {
    pub fn record(&mut self, hit: bool) {
        self.trials += 1;
        self.successes += hit as u64;
    }

    pub fn mean(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

impl Merge for Bernoulli {
    fn merge(&mut self, other: Self) {
        self.trials += other.trials;
        self.successes += other.successes;
    }
}

/// Integer-valued observations: count, sum and sum of squares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n: u64,
    pub sum: i128,
    pub sum_sq: i128,
}

impl Counts {
    pub fn record(&mut self, x: i64) {
        self.n += 1;
        self.sum += x as i128;
        self.sum_sq += (x as i128) * (x as i128);
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        ((self.sum_sq as f64 - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

impl Merge for Counts {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

/// Raw real-valued samples, kept in replica order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples(pub Vec<f64>);

impl Merge for Samples {
    fn merge(&mut self, other: Self) {
        self.0.extend(other.0);
    }
}

/// A probability estimate with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub replicas: u64,
    pub successes: u64,
    pub std_error: f64,
    /// Wilson 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub master_seed: u64,
    pub config_hash: String,
}

impl EstimateReport {
    pub fn from_bernoulli(t: &Bernoulli, master_seed: u64, config_hash: impl Into<String>) -> Self {
        let p = t.mean();
        let (ci_low, ci_high) = wilson_interval(t.successes, t.trials, Z_95);
        EstimateReport {
            estimate: p,
            replicas: t.trials,
            successes: t.successes,
            std_error: (p * (1.0 - p) / t.trials as f64).sqrt(),
            ci_low,
            ci_high,
            master_seed,
            config_hash: config_hash.into(),
        }
    }

    /// `(estimate - target) / std_error`, using the standard error at the
    /// target when the sample has zero spread.
    pub fn z_score(&self, target: f64) -> f64 {
        let se = if self.std_error > 0.0 {
            self.std_error
        } else {
            (target * (1.0 - target) / self.replicas as f64).sqrt()
        };
        if se == 0.0 {
            if self.estimate == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - target) / se
        }
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Probability estimate of a replica-level event.
pub fn estimate_probability<F>(spec: &RunSpec, config_hash: &str, f: F) -> Result<EstimateReport>
where
    F: Fn(&mut ReplicaRng) -> bool + Sync + Send,
{
    let t: Bernoulli = run_replicas(spec, |rng, acc: &mut Bernoulli| acc.record(f(rng)))?;
    Ok(EstimateReport::from_bernoulli(&t, spec.master_seed, config_hash))
}

/// Hex SHA-256 prefix of the JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(&Sha256::digest(&bytes)[..16])
}
