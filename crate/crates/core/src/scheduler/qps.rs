//! QPS-r: r rounds of queue-proportional proposing and
//! longest-VOQ-first accepting.

use rand::Rng;

use crate::matrix::{Matching, QueueMatrix};
use crate::sampling::ProportionalSampler;

/// Runs r propose/accept iterations and returns the union matching.
///
/// Each iteration: every still-unmatched input with a nonempty row samples
/// one output proportionally to its full VOQ length vector (with
/// replacement across iterations — a rejected input may resample the same,
/// even already-matched, output). Every still-unmatched output that received
/// proposals accepts the one with the longest VOQ, ties broken uniformly at
/// random.
///
/// Randomness is consumed in a fixed order (inputs by index, then tie-breaks
/// by output index), so two runs from the same rng state agree on their
/// common prefix of iterations.
pub fn qps_r_schedule<R: Rng + ?Sized>(q: &QueueMatrix, r: usize, rng: &mut R) -> Matching {
    let samplers: Vec<ProportionalSampler> =
        (0..q.n()).map(|i| ProportionalSampler::new(q.row(i))).collect();
    qps_r_schedule_with(q, &samplers, r, rng)
}

/// Same algorithm, but with caller-maintained per-input samplers (the
/// simulator keeps them synchronized with Q incrementally instead of
/// rebuilding them every slot). Sampler i must hold exactly row i of q.
pub fn qps_r_schedule_with<R: Rng + ?Sized>(
    q: &QueueMatrix,
    samplers: &[ProportionalSampler],
    r: usize,
    rng: &mut R,
) -> Matching {
    assert!(r >= 1, "r must be >= 1");
    let n = q.n();
    debug_assert!(samplers.len() == n && (0..n).all(|i| samplers[i].total() == q.row_sum(i)));
    let mut m = Matching::new(n);

    // proposals[j] = inputs proposing to output j this iteration
    let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); n];
    for _ in 0..r {
        for p in proposals.iter_mut() {
            p.clear();
        }
        let mut any = false;
        for i in 0..n {
            if m.input_matched(i) {
                continue;
            }
            if let Some(j) = samplers[i].sample(rng) {
                // proposals to matched outputs are wasted, but the draw
                // still happens (sampling is over the full weight vector)
                if !m.output_matched(j) {
                    proposals[j].push(i);
                }
                any = true;
            }
        }
        if !any {
            break;
        }
        for (j, props) in proposals.iter().enumerate() {
            if props.is_empty() {
                continue;
            }
            let mut best = props[0];
            let mut best_len = q.get(best, j);
            let mut ties = 1u64;
            for &i in &props[1..] {
                let len = q.get(i, j);
                if len > best_len {
                    best = i;
                    best_len = len;
                    ties = 1;
                } else if len == best_len {
                    ties += 1;
                    // reservoir choice: replace with probability 1/ties
                    if rng.gen_range(0..ties) == 0 {
                        best = i;
                    }
                }
            }
            m.insert(best, j).expect("accept of unmatched ports");
        }
        if m.len() == n {
            break;
        }
    }
    m
}
