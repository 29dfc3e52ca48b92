//! Seeded, chunked Monte Carlo reductions.
//!
//! Samples are split into fixed-size chunks; chunk `c` draws from the ChaCha8
//! stream `c` of the run seed, so results do not depend on how many worker
//! threads evaluate the chunks. Chunk partials are combined in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::scalar::CompensatedSum;

/// Samples per chunk.
pub const CHUNK: usize = 1 << 14;

/// Running first and second moments of a sampled quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = (self.sum_sq / n - self.mean().powi(2)).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }
}

/// RNG for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Evaluates `f` on `samples` draws and returns the moments of its values.
pub fn sample_moments<F>(seed: u64, samples: usize, f: F) -> Moments
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut s = CompensatedSum::new();
            let mut s2 = CompensatedSum::new();
            for _ in 0..len {
                let v = f(&mut rng);
                s.add(v);
                s2.add(v * v);
            }
            (s.value(), s2.value())
        })
        .collect();
    let sum: CompensatedSum = partials.iter().map(|p| p.0).collect();
    let sum_sq: CompensatedSum = partials.iter().map(|p| p.1).collect();
    Moments {
        count: samples,
        sum: sum.value(),
        sum_sq: sum_sq.value(),
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_moments(7, 100_000, |r| r.gen::<f64>()))
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert!((a.mean() - 0.5).abs() < 5.0 * a.stderr());
    }
}
