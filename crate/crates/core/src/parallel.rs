//! Partitioned random substreams and order-independent parallel reduction.
//!
//! A sample budget is split into a fixed number of chunks. Chunk `i` draws
//! from stream `i` of a ChaCha8 generator keyed by the run seed, so results
//! depend only on `(seed, chunks)`, never on the worker count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type SimRng = ChaCha8Rng;

/// Default chunk count; fixed so that estimates are bit-reproducible.
pub const DEFAULT_CHUNKS: usize = 64;

/// Random stream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, used to give independent purposes their own key.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split `n` samples into `chunks` contiguous counts (first chunks take the
/// remainder).
pub fn chunk_sizes(n: usize, chunks: usize) -> Vec<usize> {
    let chunks = chunks.max(1).min(n.max(1));
    let base = n / chunks;
    let extra = n % chunks;
    (0..chunks).map(|i| base + usize::from(i < extra)).collect()
}

/// Run `work(chunk_index, count, rng)` on every chunk in parallel and fold
/// the partial results in chunk order.
pub fn map_reduce<A, W, M>(seed: u64, n: usize, chunks: usize, work: W, mut merge: M) -> Option<A>
where
    A: Send,
    W: Fn(usize, usize, &mut SimRng) -> A + Sync,
    M: FnMut(&mut A, A),
{
    let sizes = chunk_sizes(n, chunks);
    let parts: Vec<A> = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &count)| {
            let mut rng = substream(seed, i as u64);
            work(i, count, &mut rng)
        })
        .collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for part in iter {
        merge(&mut acc, part);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunk_sizes_cover_budget() {
        assert_eq!(chunk_sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(chunk_sizes(2, 64), vec![1, 1]);
        assert_eq!(chunk_sizes(0, 4), vec![0]);
        assert_eq!(chunk_sizes(1000, 64).iter().sum::<usize>(), 1000);
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let a: u64 = substream(7, 0).random();
        let b: u64 = substream(7, 1).random();
        let a2: u64 = substream(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }

    #[test]
    fn reduction_independent_of_pool_size() {
        let run = || {
            map_reduce(
                11,
                1000,
                16,
                |_, count, rng| (0..count).map(|_| rng.random::<f64>()).sum::<f64>(),
                |a, b| *a += b,
            )
            .unwrap()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
        assert_eq!(one.to_bits(), four.to_bits());
    }
}
