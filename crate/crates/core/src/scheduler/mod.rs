//! Crossbar schedule generators behind one stateful interface.

mod greedy;
mod islip;
mod mwm;
mod qps;

pub use greedy::greedy_maximal_schedule;
pub use islip::{islip_schedule, IslipPointers};
pub use mwm::mwm_schedule;
pub use qps::{qps_r_schedule, qps_r_schedule_with};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::matrix::{Matching, QueueMatrix};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchedulerKind {
    Qps { r: usize },
    Islip { iters: usize },
    Mwm,
    Greedy,
}

/// A scheduler instance: algorithm choice, persistent state (iSLIP pointers)
/// and a private random stream. Same seed + same queue sequence gives the
/// same schedule sequence.
#[derive(Clone, Debug)]
pub struct Scheduler {
    kind: SchedulerKind,
    pointers: Option<IslipPointers>,
    rng: ChaCha8Rng,
}

/// ceil(log2 n), the iteration count the iSLIP baseline conventionally uses.
pub fn default_islip_iters(n: usize) -> usize {
    (usize::BITS - (n.max(2) - 1).leading_zeros()) as usize
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, n: usize, seed: u64) -> Self {
        let pointers = match kind {
            SchedulerKind::Islip { .. } => Some(IslipPointers::new(n)),
            _ => None,
        };
        Scheduler {
            kind,
            pointers,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Parses a config string: "qps:r=3", "islip:iters=6", "mwm", "greedy".
    /// "qps" defaults to r=3 and "islip" to ceil(log2 n) iterations.
    pub fn from_spec(spec: &str, n: usize, seed: u64) -> Result<Self> {
        let kind = parse_kind(spec, n)?;
        Ok(Scheduler::new(kind, n, seed))
    }

    pub fn kind(&self) -> &SchedulerKind {
        &self.kind
    }

    pub fn schedule(&mut self, q: &QueueMatrix) -> Matching {
        match self.kind {
            SchedulerKind::Qps { r } => qps_r_schedule(q, r, &mut self.rng),
            SchedulerKind::Islip { iters } => {
                islip_schedule(q, iters, self.pointers.as_mut().expect("islip state"))
            }
            SchedulerKind::Mwm => mwm_schedule(q),
            SchedulerKind::Greedy => greedy_maximal_schedule(q, &mut self.rng),
        }
    }

    /// Like [`Scheduler::schedule`], but QPS reuses caller-maintained
    /// per-input samplers instead of rebuilding them; other kinds ignore
    /// the samplers. Produces the identical schedule for identical state.
    pub fn schedule_with_samplers(
        &mut self,
        q: &QueueMatrix,
        samplers: &[crate::sampling::ProportionalSampler],
    ) -> Matching {
        match self.kind {
            SchedulerKind::Qps { r } => qps::qps_r_schedule_with(q, samplers, r, &mut self.rng),
            _ => self.schedule(q),
        }
    }
}

fn parse_kind(spec: &str, n: usize) -> Result<SchedulerKind> {
    let bad = |m: &str| Error::InvalidSchedulerSpec(format!("{spec:?}: {m}"));
    let (name, args) = match spec.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (spec, None),
    };
    match (name, args) {
        ("qps", None) => Ok(SchedulerKind::Qps { r: 3 }),
        ("qps", Some(a)) => {
            let r = a
                .strip_prefix("r=")
                .ok_or_else(|| bad("expected r=<count>"))?
                .parse::<usize>()
                .map_err(|e| bad(&e.to_string()))?;
            if r == 0 {
                return Err(bad("r must be >= 1"));
            }
            Ok(SchedulerKind::Qps { r })
        }
        ("islip", None) => Ok(SchedulerKind::Islip {
            iters: default_islip_iters(n),
        }),
        ("islip", Some(a)) => {
            let iters = a
                .strip_prefix("iters=")
                .ok_or_else(|| bad("expected iters=<count>"))?
                .parse::<usize>()
                .map_err(|e| bad(&e.to_string()))?;
            if iters == 0 {
                return Err(bad("iters must be >= 1"));
            }
            Ok(SchedulerKind::Islip { iters })
        }
        ("mwm", None) => Ok(SchedulerKind::Mwm),
        ("greedy", None) => Ok(SchedulerKind::Greedy),
        _ => Err(bad("unknown scheduler")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!(parse_kind("qps", 8).unwrap(), SchedulerKind::Qps { r: 3 });
        assert_eq!(parse_kind("qps:r=1", 8).unwrap(), SchedulerKind::Qps { r: 1 });
        assert_eq!(
            parse_kind("islip", 64).unwrap(),
            SchedulerKind::Islip { iters: 6 }
        );
        assert_eq!(
            parse_kind("islip:iters=2", 64).unwrap(),
            SchedulerKind::Islip { iters: 2 }
        );
        assert_eq!(parse_kind("mwm", 4).unwrap(), SchedulerKind::Mwm);
        assert_eq!(parse_kind("greedy", 4).unwrap(), SchedulerKind::Greedy);
        assert!(parse_kind("qps:r=0", 4).is_err());
        assert!(parse_kind("serena", 4).is_err());
        assert!(parse_kind("qps:iters=3", 4).is_err());
    }

    #[test]
    fn default_iters_is_ceil_log2() {
        assert_eq!(default_islip_iters(2), 1);
        assert_eq!(default_islip_iters(8), 3);
        assert_eq!(default_islip_iters(9), 4);
        assert_eq!(default_islip_iters(64), 6);
    }

    #[test]
    fn reproducible_given_seed() {
        let q = QueueMatrix::from_rows(&vec![vec![1, 2, 3], vec![3, 0, 1], vec![2, 2, 2]])
            .unwrap();
        for spec in ["qps:r=2", "islip", "mwm", "greedy"] {
            let mut a = Scheduler::from_spec(spec, 3, 99).unwrap();
            let mut b = Scheduler::from_spec(spec, 3, 99).unwrap();
            for _ in 0..20 {
                assert_eq!(a.schedule(&q), b.schedule(&q), "{spec}");
            }
        }
    }
}
