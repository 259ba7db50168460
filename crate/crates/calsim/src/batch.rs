//! Independent batch jobs: seed sweeps and random max-plus matrices.
//!
//! Each item is computed in isolation, so results are identical whichever
//! [`Exec`] runs them. Without the `parallel` feature every batch runs
//! sequentially.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::maxplus::{classify_cycles, kleene_star, CycleClass, MaxPlusError, MaxPlusMatrix, MaxPlusVector};
use crate::metrics::Trace;
use crate::simnet::{run, SimConfig, SimError};
use crate::timekit::Interval;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `cfg` once per seed and applies `summarize` to each trace, in seed order.
pub fn sweep_seeds<U, F>(exec: Exec, cfg: &SimConfig, seeds: &[u64], summarize: F) -> Vec<Result<U, SimError>>
where
    U: Send,
    F: Fn(u64, &Trace) -> U + Sync + Send,
{
    map(exec, seeds, |&seed| {
        let mut c = cfg.clone();
        c.seed = seed;
        run(&c).map(|t| summarize(seed, &t))
    })
}

/// Parameters for [`random_matrices`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixDist {
    pub n: usize,
    /// Finite entries are drawn uniformly from `[lo, hi]` nanoseconds.
    pub lo: i64,
    pub hi: i64,
    /// Probability that an entry is `-inf`.
    pub sparsity: f64,
    /// Keep drawing until the matrix has only negative cycles.
    pub negative_cycles: bool,
}

impl Default for MatrixDist {
    fn default() -> Self {
        MatrixDist { n: 4, lo: -50_000_000, hi: 20_000_000, sparsity: 0.25, negative_cycles: true }
    }
}

fn draw(rng: &mut ChaCha8Rng, d: &MatrixDist) -> MaxPlusMatrix {
    MaxPlusMatrix::from_fn(d.n, |_, _| {
        if rng.gen_bool(d.sparsity) {
            Interval::NEG_INF
        } else {
            Interval::from_ns(rng.gen_range(d.lo..=d.hi))
        }
    })
}

/// Matrix `k` of a seeded family; independent of how many others are drawn.
pub fn random_matrix(seed: u64, k: u64, d: &MatrixDist) -> MaxPlusMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    loop {
        let m = draw(&mut rng, d);
        if !d.negative_cycles || classify_cycles(&m) == CycleClass::Negative {
            return m;
        }
    }
}

pub fn random_matrices(exec: Exec, seed: u64, count: usize, d: &MatrixDist) -> Vec<MaxPlusMatrix> {
    let ks: Vec<u64> = (0..count as u64).collect();
    map(exec, &ks, |&k| random_matrix(seed, k, d))
}

/// Vector `k` with every entry drawn from `[lo, hi]`.
pub fn random_vector(seed: u64, k: u64, n: usize, lo: i64, hi: i64) -> MaxPlusVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a);
    rng.set_stream(k);
    MaxPlusVector::new((0..n).map(|_| Interval::from_ns(rng.gen_range(lo..=hi))).collect())
}

pub fn kleene_stars(exec: Exec, ms: &[MaxPlusMatrix]) -> Vec<Result<MaxPlusMatrix, MaxPlusError>> {
    map(exec, ms, kleene_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::builtin;

    #[test]
    fn matrices_are_reproducible_and_negative() {
        let d = MatrixDist::default();
        let a = random_matrices(Exec::Parallel, 3, 20, &d);
        let b = random_matrices(Exec::Sequential, 3, 20, &d);
        assert_eq!(a, b);
        assert!(a.iter().all(|m| classify_cycles(m) == CycleClass::Negative));
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn sweep_matches_sequential() {
        let cfg = builtin("bulletin-logical-decentral").unwrap().config;
        let seeds: Vec<u64> = (0..6).collect();
        let render = |_: u64, t: &Trace| t.render();
        let par: Vec<String> = sweep_seeds(Exec::Parallel, &cfg, &seeds, render).into_iter().map(Result::unwrap).collect();
        let seq: Vec<String> = sweep_seeds(Exec::Sequential, &cfg, &seeds, render).into_iter().map(Result::unwrap).collect();
        assert_eq!(par, seq);
    }
}
