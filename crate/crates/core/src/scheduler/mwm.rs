//! Maximum weight matching with VOQ length as the edge weight.
//!
//! Solved as a dense assignment problem by the O(N^3) potential-based
//! augmenting-path method (the classic Hungarian algorithm formulation).
//! Weights are lifted to two-level integers so that among all
//! maximum-weight matchings the solver deterministically returns the one
//! minimizing the sum of flattened pair indices — a fixed, reproducible
//! tie-break.

use crate::matrix::{Matching, QueueMatrix};

/// Returns a matching maximizing the total queue length over matched pairs.
/// Pairs whose VOQ is empty are dropped from the result (they carry zero
/// weight and no packet could depart on them anyway).
pub fn mwm_schedule(q: &QueueMatrix) -> Matching {
    let n = q.n();
    if n == 0 {
        return Matching::new(0);
    }
    // two-level weight: primary q_ij, secondary preferring small (i,j)
    let scale = (n * n) as i128 + 1;
    let weight =
        |i: usize, j: usize| -> i128 { q.get(i, j) as i128 * scale + (n * n - (i * n + j)) as i128 };

    // min-cost assignment on cost = -weight, 1-based arrays with row/column
    // potentials u, v and column back-pointers (standard formulation)
    let inf = i128::MAX / 4;
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -weight(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut m = Matching::new(n);
    for j in 1..=n {
        let i = p[j];
        if i != 0 && q.get(i - 1, j - 1) > 0 {
            m.insert(i - 1, j - 1).expect("permutation is a matching");
        }
    }
    m
}
