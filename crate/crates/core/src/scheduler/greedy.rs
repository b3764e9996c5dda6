//! Greedy maximal matching over nonempty VOQs, edges scanned in uniformly
//! random order.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::matrix::{Matching, QueueMatrix};

pub fn greedy_maximal_schedule<R: Rng + ?Sized>(q: &QueueMatrix, rng: &mut R) -> Matching {
    let n = q.n();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        if q.row_sum(i) == 0 {
            continue;
        }
        for j in 0..n {
            if q.get(i, j) > 0 {
                edges.push((i, j));
            }
        }
    }
    edges.shuffle(rng);
    let mut m = Matching::new(n);
    for (i, j) in edges {
        if !m.input_matched(i) && !m.output_matched(j) {
            m.insert(i, j).expect("both ports free");
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{is_matching, is_maximal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_positive_gives_perfect_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 5, 8] {
            let mut q = QueueMatrix::zero(n);
            for i in 0..n {
                for j in 0..n {
                    q.set(i, j, 1).unwrap();
                }
            }
            for _ in 0..50 {
                assert_eq!(greedy_maximal_schedule(&q, &mut rng).len(), n);
            }
        }
    }

    #[test]
    fn zero_matrix_gives_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        assert!(greedy_maximal_schedule(&QueueMatrix::zero(4), &mut rng).is_empty());
    }

    #[test]
    fn always_maximal_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10_000 {
            let n = rng.gen_range(2..=16);
            let mut q = QueueMatrix::zero(n);
            for i in 0..n {
                for j in 0..n {
                    if rng.gen_bool(0.4) {
                        q.set(i, j, rng.gen_range(1..5)).unwrap();
                    }
                }
            }
            let m = greedy_maximal_schedule(&q, &mut rng);
            assert!(is_matching(n, &m.pairs()));
            assert!(is_maximal(&m, &q));
            for (i, j) in m.pairs() {
                assert!(q.get(i, j) > 0);
            }
        }
    }
}
