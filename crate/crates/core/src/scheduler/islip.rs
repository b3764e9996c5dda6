//! iSLIP: iterative round-robin request/grant/accept.

use crate::matrix::{Matching, QueueMatrix};

/// Round-robin positions, one grant pointer per output and one accept
/// pointer per input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IslipPointers {
    pub grant: Vec<usize>,
    pub accept: Vec<usize>,
}

impl IslipPointers {
    pub fn new(n: usize) -> Self {
        IslipPointers {
            grant: vec![0; n],
            accept: vec![0; n],
        }
    }
}

/// Fixed-capacity bitset over port indices; keeps the per-slot inner loops
/// O(N/64) instead of O(N).
#[derive(Clone)]
struct PortSet {
    words: Vec<u64>,
}

impl PortSet {
    fn empty(n: usize) -> Self {
        PortSet {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn full(n: usize) -> Self {
        let mut s = PortSet::empty(n);
        for k in 0..n {
            s.insert(k);
        }
        s
    }

    #[inline]
    fn insert(&mut self, k: usize) {
        self.words[k / 64] |= 1u64 << (k % 64);
    }

    #[inline]
    fn remove(&mut self, k: usize) {
        self.words[k / 64] &= !(1u64 << (k % 64));
    }

    #[cfg(test)]
    fn contains(&self, k: usize) -> bool {
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    fn clear(&mut self) {
        self.words.fill(0);
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// First member at index >= from, scanning only set bits.
    fn next_at_or_after(&self, from: usize, other: &PortSet) -> Option<usize> {
        let mut w = from / 64;
        if w >= self.words.len() {
            return None;
        }
        let mut word = self.words[w] & other.words[w] & (!0u64 << (from % 64));
        loop {
            if word != 0 {
                return Some(w * 64 + word.trailing_zeros() as usize);
            }
            w += 1;
            if w == self.words.len() {
                return None;
            }
            word = self.words[w] & other.words[w];
        }
    }

    /// Smallest member of (self AND other) at index >= ptr, wrapping.
    fn pick_round_robin(&self, other: &PortSet, ptr: usize) -> Option<usize> {
        if let Some(k) = self.next_at_or_after(ptr, other) {
            return Some(k);
        }
        self.next_at_or_after(0, other).filter(|&k| k < ptr)
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    None
                } else {
                    let b = word.trailing_zeros() as usize;
                    word &= word - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }
}

/// One slot of iSLIP. Pointers advance to one past the accepted port only
/// when the accept happens in the first iteration; later-iteration matches
/// leave them untouched.
pub fn islip_schedule(q: &QueueMatrix, iterations: usize, state: &mut IslipPointers) -> Matching {
    assert!(iterations >= 1, "iterations must be >= 1");
    let n = q.n();
    let mut m = Matching::new(n);

    // requesters[j] = inputs with a packet for output j
    let mut requesters: Vec<PortSet> = vec![PortSet::empty(n); n];
    for i in 0..n {
        if q.row_sum(i) == 0 {
            continue;
        }
        for j in 0..n {
            if q.get(i, j) > 0 {
                requesters[j].insert(i);
            }
        }
    }
    let mut free_inputs = PortSet::full(n);
    let mut free_outputs = PortSet::full(n);
    let mut grants: Vec<PortSet> = vec![PortSet::empty(n); n]; // per input: granting outputs

    for iter in 0..iterations {
        for g in grants.iter_mut() {
            g.clear();
        }
        // grant phase: each free output grants one requesting free input
        let mut any_grant = false;
        for j in free_outputs.iter() {
            if let Some(i) = requesters[j].pick_round_robin(&free_inputs, state.grant[j]) {
                grants[i].insert(j);
                any_grant = true;
            }
        }
        if !any_grant {
            break;
        }
        // accept phase: each granted input accepts one output
        let mut matched_this_iter = false;
        for i in 0..n {
            if grants[i].is_empty() {
                continue;
            }
            let j = grants[i]
                .pick_round_robin(&free_outputs, state.accept[i])
                .expect("granting outputs are free");
            m.insert(i, j).expect("grant/accept of free ports");
            free_inputs.remove(i);
            free_outputs.remove(j);
            matched_this_iter = true;
            if iter == 0 {
                state.grant[j] = (i + 1) % n;
                state.accept[i] = (j + 1) % n;
            }
        }
        if !matched_this_iter || free_outputs.is_empty() {
            break;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::is_matching;

    fn qm(rows: &[&[u64]]) -> QueueMatrix {
        QueueMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn portset_round_robin_semantics() {
        let mut s = PortSet::empty(130);
        let full = PortSet::full(130);
        for k in [3usize, 64, 65, 129] {
            s.insert(k);
        }
        assert_eq!(s.pick_round_robin(&full, 0), Some(3));
        assert_eq!(s.pick_round_robin(&full, 4), Some(64));
        assert_eq!(s.pick_round_robin(&full, 66), Some(129));
        assert_eq!(s.pick_round_robin(&full, 130), Some(3)); // wraps past the end
        s.remove(129);
        assert_eq!(s.pick_round_robin(&full, 66), Some(3)); // wraps
        assert!(s.contains(64) && !s.contains(129));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![3, 64, 65]);
    }

    #[test]
    fn all_positive_2x2_pointers_at_zero() {
        // both outputs grant input 0; input 0 accepts output 0; second
        // iteration pairs input 1 with output 1
        let q = qm(&[&[1, 1], &[1, 1]]);
        let mut st = IslipPointers::new(2);
        let m = islip_schedule(&q, 2, &mut st);
        assert_eq!(m.pairs(), vec![(0, 0), (1, 1)]);
        // first-iteration accept moved those pointers, second-iteration one didn't
        assert_eq!(st.grant, vec![1, 0]);
        assert_eq!(st.accept, vec![1, 0]);
    }

    #[test]
    fn zero_matrix_empty_matching() {
        let q = QueueMatrix::zero(4);
        let mut st = IslipPointers::new(4);
        assert!(islip_schedule(&q, 2, &mut st).is_empty());
    }

    #[test]
    fn single_nonempty_voq_is_matched() {
        for (i, j) in [(0usize, 2usize), (2, 0), (1, 1)] {
            let mut q = QueueMatrix::zero(3);
            q.set(i, j, 4).unwrap();
            let mut st = IslipPointers::new(3);
            let m = islip_schedule(&q, 1, &mut st);
            assert_eq!(m.pairs(), vec![(i, j)]);
        }
    }

    #[test]
    fn desynchronizes_under_persistent_load() {
        // classic iSLIP behavior: under all-positive queues the pointers
        // desynchronize and every slot yields a full matching after warm-up
        let q = qm(&[&[9, 9, 9], &[9, 9, 9], &[9, 9, 9]]);
        let mut st = IslipPointers::new(3);
        let mut sizes = Vec::new();
        for _ in 0..10 {
            sizes.push(islip_schedule(&q, 1, &mut st).len());
        }
        assert!(sizes[3..].iter().all(|&s| s == 3), "sizes = {sizes:?}");
    }

    #[test]
    fn matches_reference_implementation() {
        // slow textbook version with plain index scans, as an oracle
        fn reference(q: &QueueMatrix, iterations: usize, state: &mut IslipPointers) -> Matching {
            let n = q.n();
            let mut m = Matching::new(n);
            for iter in 0..iterations {
                let mut grant_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
                let mut any = false;
                for j in 0..n {
                    if m.output_matched(j) {
                        continue;
                    }
                    let mut pick = None;
                    for off in 0..n {
                        let i = (state.grant[j] + off) % n;
                        if !m.input_matched(i) && q.get(i, j) > 0 {
                            pick = Some(i);
                            break;
                        }
                    }
                    if let Some(i) = pick {
                        grant_sets[i].push(j);
                        any = true;
                    }
                }
                if !any {
                    break;
                }
                for i in 0..n {
                    if grant_sets[i].is_empty() {
                        continue;
                    }
                    let mut choice = None;
                    for off in 0..n {
                        let j = (state.accept[i] + off) % n;
                        if grant_sets[i].contains(&j) {
                            choice = Some(j);
                            break;
                        }
                    }
                    let j = choice.unwrap();
                    m.insert(i, j).unwrap();
                    if iter == 0 {
                        state.grant[j] = (i + 1) % n;
                        state.accept[i] = (j + 1) % n;
                    }
                }
            }
            m
        }

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let n = rng.gen_range(2..=70); // crosses the 64-bit word boundary
            let mut q = QueueMatrix::zero(n);
            for i in 0..n {
                for j in 0..n {
                    if rng.gen_bool(0.3) {
                        q.set(i, j, rng.gen_range(1..5)).unwrap();
                    }
                }
            }
            let grant: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let accept: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let iters = rng.gen_range(1..=4);
            let mut st1 = IslipPointers {
                grant: grant.clone(),
                accept: accept.clone(),
            };
            let mut st2 = IslipPointers { grant, accept };
            let fast = islip_schedule(&q, iters, &mut st1);
            let slow = reference(&q, iters, &mut st2);
            assert_eq!(fast, slow);
            assert_eq!(st1, st2);
        }
    }

    #[test]
    fn always_valid_and_no_empty_voq_matched() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.gen_range(2..=9);
            let mut q = QueueMatrix::zero(n);
            for i in 0..n {
                for j in 0..n {
                    q.set(i, j, rng.gen_range(0..3)).unwrap();
                }
            }
            let mut st = IslipPointers {
                grant: (0..n).map(|_| rng.gen_range(0..n)).collect(),
                accept: (0..n).map(|_| rng.gen_range(0..n)).collect(),
            };
            let iters = rng.gen_range(1..=4);
            let m = islip_schedule(&q, iters, &mut st);
            assert!(is_matching(n, &m.pairs()));
            for (i, j) in m.pairs() {
                assert!(q.get(i, j) > 0);
            }
        }
    }
}
