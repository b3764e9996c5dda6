//! Randomized property tests over the core invariants.

use proptest::prelude::*;

use switchsim::matrix::{apply_slot, departures_from, is_matching, is_maximal, QueueMatrix};
use switchsim::matrix::ArrivalMatrix;
use switchsim::scheduler::{greedy_maximal_schedule, islip_schedule, mwm_schedule, qps_r_schedule, IslipPointers};
use switchsim::ProportionalSampler;

fn queue_strategy(max_n: usize, max_v: u64) -> impl Strategy<Value = QueueMatrix> {
    (2..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(proptest::collection::vec(0..=max_v, n), n)
            .prop_map(|rows| QueueMatrix::from_rows(&rows).unwrap())
    })
}

proptest! {
    #[test]
    fn cached_sums_match_recomputation(q in queue_strategy(8, 9)) {
        let n = q.n();
        let mut total = 0u64;
        for i in 0..n {
            let row: u64 = (0..n).map(|j| q.get(i, j)).sum();
            prop_assert_eq!(q.row_sum(i), row);
            total += row;
        }
        for j in 0..n {
            let col: u64 = (0..n).map(|i| q.get(i, j)).sum();
            prop_assert_eq!(q.col_sum(j), col);
        }
        prop_assert_eq!(q.total(), total);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(
                    q.neighborhood_sum(i, j).unwrap(),
                    q.row_sum(i) + q.col_sum(j) - 2 * q.get(i, j) + q.get(i, j)
                );
            }
        }
    }

    #[test]
    fn slot_update_conserves_and_bounds(q in queue_strategy(6, 5), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = q.n();
        let m = greedy_maximal_schedule(&q, &mut rng);
        let d = departures_from(&m, &q);
        // departures obey the matrix facts
        for i in 0..n {
            prop_assert!(d.row_sum(i) <= 1);
            for j in 0..n {
                prop_assert!(d.col_sum(j) <= 1);
                let dag = d.neighborhood_sum(i, j).unwrap();
                prop_assert!(dag <= 2);
                prop_assert_eq!(d.get(i, j) * dag, d.get(i, j));
            }
        }
        let mut a = ArrivalMatrix::zero(n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, (seed >> ((i * n + j) % 60)) & 1);
            }
        }
        let next = apply_slot(&q, &d, &a).unwrap();
        prop_assert_eq!(next.total(), q.total() - d.total() + a.total());
    }

    #[test]
    fn all_schedulers_emit_valid_matchings(q in queue_strategy(9, 4), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = q.n();
        let mut ptrs = IslipPointers::new(n);
        let schedules = [
            qps_r_schedule(&q, 1 + (seed % 4) as usize, &mut rng),
            islip_schedule(&q, 1 + (seed % 3) as usize, &mut ptrs),
            mwm_schedule(&q),
            greedy_maximal_schedule(&q, &mut rng),
        ];
        for m in &schedules {
            prop_assert!(is_matching(n, &m.pairs()));
            for (i, j) in m.pairs() {
                prop_assert!(q.get(i, j) > 0);
            }
        }
        prop_assert!(is_maximal(&schedules[3], &q));
    }

    #[test]
    fn sampler_prefixes_track_weights(ws in proptest::collection::vec(0u64..50, 1..20)) {
        let s = ProportionalSampler::new(&ws);
        let mut acc = 0u64;
        for (i, &w) in ws.iter().enumerate() {
            acc += w;
            prop_assert_eq!(s.prefix_sum(i), acc);
        }
        prop_assert_eq!(s.total(), acc);
    }

    #[test]
    fn sampler_updates_equal_rebuild(
        ws in proptest::collection::vec(0u64..20, 1..12),
        updates in proptest::collection::vec((0usize..12, 0u64..20), 0..24),
    ) {
        let mut s = ProportionalSampler::new(&ws);
        let mut w = ws.clone();
        for (idx, nv) in updates {
            let idx = idx % w.len();
            s.update(idx, nv).unwrap();
            w[idx] = nv;
        }
        let fresh = ProportionalSampler::new(&w);
        for i in 0..w.len() {
            prop_assert_eq!(s.prefix_sum(i), fresh.prefix_sum(i));
        }
    }
}
