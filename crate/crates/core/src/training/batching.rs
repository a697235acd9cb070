use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A set of sample indices and their combined token count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub tokens: usize,
}

/// Groups samples into batches of at most `cap` tokens.
///
/// Indices are shuffled, split into buckets of `bucket` samples, sorted by
/// descending length inside each bucket and packed greedily; a sample longer
/// than `cap` forms its own batch. The batch order is shuffled again.
pub fn make_batches(lengths: &[usize], cap: usize, bucket: usize, seed: u64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(bucket.max(1)) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
        let mut current = Batch {
            indices: Vec::new(),
            tokens: 0,
        };
        for i in chunk {
            if !current.indices.is_empty() && current.tokens + lengths[i] > cap {
                batches.push(std::mem::replace(
                    &mut current,
                    Batch {
                        indices: Vec::new(),
                        tokens: 0,
                    },
                ));
            }
            current.indices.push(i);
            current.tokens += lengths[i];
        }
        if !current.indices.is_empty() {
            batches.push(current);
        }
    }
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(b: &[Batch], lengths: &[usize]) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = b
            .iter()
            .map(|b| {
                let mut v: Vec<usize> = b.indices.iter().map(|&i| lengths[i]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn packing_example() {
        let lengths = [100, 900, 1000, 1100];
        let b = make_batches(&lengths, 2048, 64, 1);
        assert_eq!(sets(&b, &lengths), vec![vec![100, 900, 1000], vec![1100]]);
    }

    #[test]
    fn oversized_sample_alone() {
        let b = make_batches(&[3000], 2048, 64, 0);
        assert_eq!(b, vec![Batch { indices: vec![0], tokens: 3000 }]);
    }

    #[test]
    fn deterministic_and_complete() {
        let lengths: Vec<usize> = (0..300).map(|i| 10 + (i * 37) % 90).collect();
        let a = make_batches(&lengths, 500, 50, 9);
        assert_eq!(a, make_batches(&lengths, 500, 50, 9));
        assert_ne!(a, make_batches(&lengths, 500, 50, 10));
        let mut all: Vec<usize> = a.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert!(a.iter().all(|b| b.tokens <= 500));
    }
}
