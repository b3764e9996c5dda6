//! Theoretical-bound evaluators, the Lyapunov function, the exact QPS-1
//! expectation oracle, and the departure-inequality verifiers.

use num::{BigRational, FromPrimitive, Zero};

use crate::error::{Error, Result};
use crate::matrix::{DepartureMatrix, QueueMatrix};
use crate::scheduler::Scheduler;
use crate::traffic::{ArrivalSource, TrafficRateMatrix};

/// L(Q) = sum q_ij * (row_i + col_j - q_ij).
pub fn lyapunov(q: &QueueMatrix) -> u128 {
    let n = q.n();
    let mut l: u128 = 0;
    for i in 0..n {
        for j in 0..n {
            l += q.get(i, j) as u128 * q.neighborhood_sum(i, j).unwrap() as u128;
        }
    }
    l
}

pub const ORACLE_MAX_N: usize = 6;

/// Exact conditional expectations of one QPS-1 propose/accept round.
#[derive(Clone, Debug)]
pub struct QpsOracleResult {
    pub n: usize,
    /// E[d_ij | Q], row-major
    pub expected_departures: Vec<f64>,
    /// alpha_ij: P[output j accepts | input i proposed to j]; 0 where q_ij = 0
    pub acceptance_prob: Vec<f64>,
    /// sum_ij q_ij E[D-dagger_ij | Q]
    pub weighted_dagger_sum: f64,
    /// enumerated proposal vectors
    pub outcome_count: u64,
}

impl QpsOracleResult {
    pub fn expected_departure(&self, i: usize, j: usize) -> f64 {
        self.expected_departures[i * self.n + j]
    }

    pub fn acceptance(&self, i: usize, j: usize) -> f64 {
        self.acceptance_prob[i * self.n + j]
    }

    /// E[D_*j | Q] = sum_i E[d_ij | Q]
    pub fn expected_column_departure(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.expected_departure(i, j)).sum()
    }

    pub fn expected_row_departure(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.expected_departure(i, j)).sum()
    }
}

/// Support of each nonzero row, or None for an all-zero (abstaining) row.
fn row_supports(q: &QueueMatrix) -> Vec<Option<Vec<usize>>> {
    (0..q.n())
        .map(|i| {
            if q.row_sum(i) == 0 {
                None
            } else {
                Some((0..q.n()).filter(|&j| q.get(i, j) > 0).collect())
            }
        })
        .collect()
}

/// Enumerates every proposal vector of one QPS-1 round (input i proposes to
/// j with probability q_ij / Q_i*, all-zero rows abstain) and every uniform
/// longest-VOQ-first tie-break, and returns the exact expectations.
pub fn exact_qps1_expectation(q: &QueueMatrix) -> Result<QpsOracleResult> {
    let n = q.n();
    if n > ORACLE_MAX_N {
        return Err(Error::EnumerationTooLarge(n, ORACLE_MAX_N));
    }
    let supports = row_supports(q);
    let mut exp_d = vec![0.0f64; n * n];
    let mut outcome_count: u64 = 0;

    // odometer over the proposal choices of each proposing row
    let proposers: Vec<usize> = (0..n).filter(|&i| supports[i].is_some()).collect();
    let mut idx = vec![0usize; proposers.len()];
    loop {
        // probability of this proposal vector and the proposals per output
        let mut p = 1.0f64;
        let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &i) in proposers.iter().enumerate() {
            let sup = supports[i].as_ref().unwrap();
            let j = sup[idx[k]];
            p *= q.get(i, j) as f64 / q.row_sum(i) as f64;
            proposals[j].push(i);
        }
        outcome_count += 1;
        // each output independently accepts a longest-VOQ proposer,
        // splitting p uniformly over the maxima
        for (j, props) in proposals.iter().enumerate() {
            if props.is_empty() {
                continue;
            }
            let best = props.iter().map(|&i| q.get(i, j)).max().unwrap();
            let winners: Vec<usize> = props.iter().copied().filter(|&i| q.get(i, j) == best).collect();
            let share = p / winners.len() as f64;
            for &i in &winners {
                exp_d[i * n + j] += share;
            }
        }
        // advance the odometer
        let mut k = 0;
        loop {
            if k == proposers.len() {
                break;
            }
            idx[k] += 1;
            if idx[k] < supports[proposers[k]].as_ref().unwrap().len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == proposers.len() {
            break;
        }
    }

    let mut alpha = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let qij = q.get(i, j);
            if qij > 0 {
                // E[d_ij] = P[i proposes j] * alpha_ij
                let p_prop = qij as f64 / q.row_sum(i) as f64;
                alpha[i * n + j] = exp_d[i * n + j] / p_prop;
            }
        }
    }

    // sum_ij q_ij D-dagger_ij = sum_i Q_i* D_i* + sum_j Q_*j D_*j - sum q_ij d_ij,
    // linear in d, so expectations substitute directly
    let mut wsum = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = exp_d[i * n + j];
            wsum += (q.row_sum(i) + q.col_sum(j)) as f64 * d - q.get(i, j) as f64 * d;
        }
    }

    Ok(QpsOracleResult {
        n,
        expected_departures: exp_d,
        acceptance_prob: alpha,
        weighted_dagger_sum: wsum,
        outcome_count,
    })
}

/// Exact-rational version of the oracle for small regression fixtures.
pub fn exact_qps1_weighted_dagger_rational(q: &QueueMatrix) -> Result<BigRational> {
    let n = q.n();
    if n > 3 {
        return Err(Error::EnumerationTooLarge(n, 3));
    }
    let supports = row_supports(q);
    let proposers: Vec<usize> = (0..n).filter(|&i| supports[i].is_some()).collect();
    let mut exp_d = vec![BigRational::zero(); n * n];
    let rat = |v: u64| BigRational::from_u64(v).unwrap();
    let mut idx = vec![0usize; proposers.len()];
    loop {
        let mut p = BigRational::from_u64(1).unwrap();
        let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &i) in proposers.iter().enumerate() {
            let sup = supports[i].as_ref().unwrap();
            let j = sup[idx[k]];
            p *= rat(q.get(i, j)) / rat(q.row_sum(i));
            proposals[j].push(i);
        }
        for (j, props) in proposals.iter().enumerate() {
            if props.is_empty() {
                continue;
            }
            let best = props.iter().map(|&i| q.get(i, j)).max().unwrap();
            let winners: Vec<usize> = props.iter().copied().filter(|&i| q.get(i, j) == best).collect();
            let share = p.clone() / rat(winners.len() as u64);
            for &i in &winners {
                exp_d[i * n + j] += share.clone();
            }
        }
        let mut k = 0;
        loop {
            if k == proposers.len() {
                break;
            }
            idx[k] += 1;
            if idx[k] < supports[proposers[k]].as_ref().unwrap().len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == proposers.len() {
            break;
        }
    }
    let mut wsum = BigRational::zero();
    for i in 0..n {
        for j in 0..n {
            let d = &exp_d[i * n + j];
            wsum += (rat(q.row_sum(i)) + rat(q.col_sum(j)) - rat(q.get(i, j))) * d;
        }
    }
    Ok(wsum)
}

#[derive(Clone, Debug)]
pub struct WeakInequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub const WEAK_INEQUALITY_TOL: f64 = 1e-9;

/// The conditional-expectation departure inequality for one QPS-1 round:
/// sum E[q_ij D-dagger_ij | Q] >= ||Q||_1.
pub fn verify_weak_departure_inequality(q: &QueueMatrix) -> Result<WeakInequalityReport> {
    let oracle = exact_qps1_expectation(q)?;
    let lhs = oracle.weighted_dagger_sum;
    let rhs = q.total() as f64;
    Ok(WeakInequalityReport {
        lhs,
        rhs,
        holds: lhs >= rhs - WEAK_INEQUALITY_TOL,
    })
}

/// The per-slot maximal-matching departure property:
/// q_ij * D-dagger_ij >= q_ij for all (i,j).
pub fn verify_strong_departure(q: &QueueMatrix, d: &DepartureMatrix) -> bool {
    let n = q.n();
    for i in 0..n {
        for j in 0..n {
            if q.get(i, j) > 0 && d.neighborhood_sum(i, j).unwrap() == 0 {
                return false;
            }
        }
    }
    true
}

/// Steady-state mean total queue length bound for i.i.d. arrivals:
/// (1 / (2(1-2 rho))) * sum_ij (sigma2_ij - lambda_ij Lambda-dagger_ij + lambda_ij).
/// `sigma2` is row-major, one entry per VOQ.
pub fn iid_queue_bound(lambda: &TrafficRateMatrix, sigma2: &[f64]) -> Result<f64> {
    let n = lambda.n();
    if sigma2.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: (sigma2.len() as f64).sqrt() as usize,
        });
    }
    let rho = lambda.rho();
    if rho >= 0.5 {
        return Err(Error::BoundUndefined(format!("rho = {rho} >= 1/2")));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let l = lambda.get(i, j);
            s += sigma2[i * n + j] - l * lambda.dagger(i, j) + l;
        }
    }
    Ok(s / (2.0 * (1.0 - 2.0 * rho)))
}

/// Convenience: the i.i.d. queue bound with Bernoulli variances
/// sigma2 = lambda (1 - lambda).
pub fn iid_queue_bound_bernoulli(lambda: &TrafficRateMatrix) -> Result<f64> {
    let n = lambda.n();
    let sigma2: Vec<f64> = (0..n * n)
        .map(|v| {
            let l = lambda.get(v / n, v % n);
            l - l * l
        })
        .collect();
    iid_queue_bound(lambda, &sigma2)
}

/// The size-independent mean-delay bound for Bernoulli traffic: 1/(1-2 rho).
pub fn bernoulli_delay_bound(rho: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::BoundUndefined(format!("rho = {rho} outside [0, 1/2)")));
    }
    Ok(1.0 / (1.0 - 2.0 * rho))
}

/// Inputs for the Markovian-arrival queue-length bound (independent chains).
#[derive(Clone, Debug)]
pub struct MarkovBoundInputs {
    pub lambda: TrafficRateMatrix,
    /// per-VOQ steady-state variance, row-major
    pub sigma2: Vec<f64>,
    /// theta[v][k-1] = lag-k autocovariance of VOQ v
    pub theta: Vec<Vec<f64>>,
    /// load proxy after k slots of mixing; must be < 1
    pub xi: f64,
    pub k: usize,
}

/// (1/(2(1-xi))) [ sum (sigma2 + lambda Lambda-dagger + lambda)
///                 + 2 sum_ij sum_{k=1..K} (lambda Lambda-dagger + theta(k)) ].
pub fn markovian_queue_bound(inputs: &MarkovBoundInputs) -> Result<f64> {
    if inputs.xi >= 1.0 {
        return Err(Error::BoundUndefined(format!("xi = {} >= 1", inputs.xi)));
    }
    if inputs.k < 1 {
        return Err(Error::BoundUndefined("K must be >= 1".into()));
    }
    let n = inputs.lambda.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = i * n + j;
            let l = inputs.lambda.get(i, j);
            let ldag = l * inputs.lambda.dagger(i, j);
            s += inputs.sigma2[v] + ldag + l;
            for k in 1..=inputs.k {
                let th = inputs.theta[v].get(k - 1).copied().unwrap_or(0.0);
                s += 2.0 * (ldag + th);
            }
        }
    }
    Ok(s / (2.0 * (1.0 - inputs.xi)))
}

#[derive(Clone, Debug)]
pub struct DriftEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub samples: usize,
}

/// Monte Carlo one-step Lyapunov drift E[L(Q(t+1)) - L(Q(t)) | Q(t) = q]
/// under a freshly seeded scheduler and arrival source per sample.
/// The CI is a 95% normal interval over the samples.
pub fn drift_estimate(
    q: &QueueMatrix,
    scheduler_spec: &str,
    source: &ArrivalSource,
    samples: usize,
    seed: u64,
) -> Result<DriftEstimate> {
    let n = q.n();
    let l0 = lyapunov(q) as f64;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for s in 0..samples {
        let mut sched = Scheduler::from_spec(scheduler_spec, n, seed.wrapping_add(s as u64))?;
        let mut src = source.clone_reseeded(seed.wrapping_add(0x5ca1ab1e).wrapping_add(s as u64));
        let m = sched.schedule(q);
        let d = crate::matrix::departures_from(&m, q);
        let a = src.next();
        let next = crate::matrix::apply_slot(q, &d, &a)?;
        let dl = lyapunov(&next) as f64 - l0;
        sum += dl;
        sumsq += dl * dl;
    }
    let mean = sum / samples as f64;
    let var = (sumsq / samples as f64 - mean * mean).max(0.0);
    Ok(DriftEstimate {
        mean,
        ci_halfwidth: 1.96 * (var / samples as f64).sqrt(),
        samples,
    })
}
