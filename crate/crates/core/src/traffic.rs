//! Traffic rate matrices, the four evaluation patterns, and the stochastic
//! arrival sources (Bernoulli i.i.d., bursty ON-OFF, Markov-modulated).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::ArrivalMatrix;

pub const NORMALIZATION_TOL: f64 = 1e-12;

/// N x N nonnegative real rates with cached row/column sums.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficRateMatrix {
    n: usize,
    lambda: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
}

impl TrafficRateMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut lambda = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            lambda.extend_from_slice(r);
        }
        for (k, &v) in lambda.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RateAboveOne {
                    rate: v,
                    i: k / n,
                    j: k % n,
                });
            }
        }
        let row_sums = (0..n).map(|i| lambda[i * n..(i + 1) * n].iter().sum()).collect();
        let col_sums = (0..n)
            .map(|j| (0..n).map(|i| lambda[i * n + j]).sum())
            .collect();
        Ok(TrafficRateMatrix {
            n,
            lambda,
            row_sums,
            col_sums,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lambda[i * self.n + j]
    }

    #[inline]
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_sums[i]
    }

    #[inline]
    pub fn col_sum(&self, j: usize) -> f64 {
        self.col_sums[j]
    }

    pub fn total(&self) -> f64 {
        self.row_sums.iter().sum()
    }

    /// Rate over the cross of (i,j): row + column with (i,j) counted once.
    pub fn dagger(&self, i: usize, j: usize) -> f64 {
        self.row_sums[i] + self.col_sums[j] - self.get(i, j)
    }

    /// Maximum load factor: largest row or column sum.
    pub fn rho(&self) -> f64 {
        self.row_sums
            .iter()
            .chain(self.col_sums.iter())
            .fold(0.0f64, |a, &b| a.max(b))
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.row_sums
            .iter()
            .chain(self.col_sums.iter())
            .all(|&s| (s - 1.0).abs() <= tol)
    }
}

pub fn max_load_factor(lambda: &TrafficRateMatrix) -> f64 {
    lambda.rho()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternKind {
    Uniform,
    QuasiDiagonal,
    LogDiagonal,
    Diagonal,
}

impl FromStr for PatternKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PatternKind::Uniform),
            "quasi-diagonal" | "quasidiagonal" => Ok(PatternKind::QuasiDiagonal),
            "log-diagonal" | "logdiagonal" => Ok(PatternKind::LogDiagonal),
            "diagonal" => Ok(PatternKind::Diagonal),
            other => Err(Error::UnknownPattern(other.to_string())),
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PatternKind::Uniform => "uniform",
            PatternKind::QuasiDiagonal => "quasi-diagonal",
            PatternKind::LogDiagonal => "log-diagonal",
            PatternKind::Diagonal => "diagonal",
        };
        f.write_str(s)
    }
}

pub const ALL_PATTERNS: [PatternKind; 4] = [
    PatternKind::Uniform,
    PatternKind::QuasiDiagonal,
    PatternKind::LogDiagonal,
    PatternKind::Diagonal,
];

/// The four doubly stochastic evaluation patterns.
///
/// uniform: 1/N everywhere. quasi-diagonal: 1/2 on the diagonal, the rest
/// spread evenly. log-diagonal: diagonal entry 2^(N-1)/(2^N - 1), then
/// halving cyclically (output index wraps). diagonal: 2/3 on the diagonal,
/// 1/3 on the cyclic super-diagonal.
pub fn pattern_matrix(kind: PatternKind, n: usize) -> Result<TrafficRateMatrix> {
    if n < 2 {
        return Err(Error::PortCountTooSmall(n));
    }
    let mut rows = vec![vec![0.0f64; n]; n];
    match kind {
        PatternKind::Uniform => {
            let v = 1.0 / n as f64;
            for r in rows.iter_mut() {
                r.fill(v);
            }
        }
        PatternKind::QuasiDiagonal => {
            let off = 1.0 / (2.0 * (n as f64 - 1.0));
            for (i, r) in rows.iter_mut().enumerate() {
                r.fill(off);
                r[i] = 0.5;
            }
        }
        PatternKind::LogDiagonal => {
            // diagonal entry 1/(2 - 2^(1-N)) = 2^(N-1)/(2^N - 1)
            let diag = 1.0 / (2.0 - (2.0f64).powi(1 - n as i32));
            for (i, r) in rows.iter_mut().enumerate() {
                let mut v = diag;
                for k in 0..n {
                    r[(i + k) % n] = v;
                    v *= 0.5;
                }
            }
        }
        PatternKind::Diagonal => {
            for (i, r) in rows.iter_mut().enumerate() {
                r[i] = 2.0 / 3.0;
                r[(i + 1) % n] = 1.0 / 3.0;
            }
        }
    }
    TrafficRateMatrix::from_rows(&rows)
}

/// Scales a normalized pattern by the offered load; the result has
/// rho = offered_load.
pub fn rate_matrix(pattern: &TrafficRateMatrix, offered_load: f64) -> Result<TrafficRateMatrix> {
    if !pattern.is_normalized(NORMALIZATION_TOL) {
        return Err(Error::NotNormalized(
            "pattern rows/columns must each sum to 1".into(),
        ));
    }
    if !(offered_load > 0.0 && offered_load <= 1.0) {
        return Err(Error::LoadOutOfRange(offered_load));
    }
    let n = pattern.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| offered_load * pattern.get(i, j)).collect())
        .collect();
    TrafficRateMatrix::from_rows(&rows)
}

/// Per-VOQ steady-state variance and autocovariance at lags 1..K.
#[derive(Clone, Debug)]
pub struct MomentProfile {
    pub n: usize,
    pub mean: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// theta[v][k-1] = lag-k autocovariance of VOQ v's arrival count
    pub theta: Vec<Vec<f64>>,
}

impl MomentProfile {
    pub fn sigma2_at(&self, i: usize, j: usize) -> f64 {
        self.sigma2[i * self.n + j]
    }

    pub fn theta_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.theta[i * self.n + j][k - 1]
    }
}

/// One finite modulating chain: row-stochastic transitions plus a
/// nonnegative integer emission per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    pub transitions: Vec<Vec<f64>>,
    pub emissions: Vec<u64>,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        let s = self.transitions.len();
        if s == 0 {
            return Err(Error::ChainSpec("chain has no states".into()));
        }
        if self.emissions.len() != s {
            return Err(Error::ChainSpec(format!(
                "{} emissions for {s} states",
                self.emissions.len()
            )));
        }
        for (k, row) in self.transitions.iter().enumerate() {
            if row.len() != s {
                return Err(Error::ChainSpec(format!(
                    "transition row {k} has {} entries, expected {s}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::ChainSpec(format!("row {k} has probability outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::ChainSpec(format!("row {k} sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    pub fn a_max(&self) -> u64 {
        self.emissions.iter().copied().max().unwrap_or(0)
    }

    /// Stationary distribution, solved from pi P = pi, sum pi = 1 by
    /// Gaussian elimination with partial pivoting.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let s = self.transitions.len();
        // rows of (P^T - I), last row replaced by the normalization
        let mut a = vec![vec![0.0f64; s + 1]; s];
        for r in 0..s {
            for c in 0..s {
                a[r][c] = self.transitions[c][r] - if r == c { 1.0 } else { 0.0 };
            }
        }
        for c in 0..s {
            a[s - 1][c] = 1.0;
        }
        a[s - 1][s] = 1.0;
        for col in 0..s {
            let piv = (col..s)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            if a[piv][col].abs() < 1e-14 {
                return Err(Error::ChainSpec("singular system; chain not irreducible?".into()));
            }
            a.swap(col, piv);
            let d = a[col][col];
            for c in col..=s {
                a[col][c] /= d;
            }
            for r in 0..s {
                if r != col && a[r][col] != 0.0 {
                    let f = a[r][col];
                    for c in col..=s {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let pi: Vec<f64> = (0..s).map(|r| a[r][s].max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        Ok(pi.iter().map(|p| p / total).collect())
    }

    /// Long-run emission rate sum_s pi_s eta_s.
    pub fn rate(&self) -> Result<f64> {
        let pi = self.stationary()?;
        Ok(pi
            .iter()
            .zip(self.emissions.iter())
            .map(|(&p, &e)| p * e as f64)
            .sum())
    }
}

/// Chain assignment for every VOQ: a pool of chain specs plus an index per
/// VOQ, so a shared chain is stored once.
#[derive(Clone, Debug)]
pub struct ChainSet {
    pub n: usize,
    pub chains: Vec<ChainSpec>,
    /// assign[i*n + j] indexes into `chains`
    pub assign: Vec<usize>,
}

impl ChainSet {
    pub fn shared(n: usize, chain: ChainSpec) -> Result<Self> {
        chain.validate()?;
        Ok(ChainSet {
            n,
            chains: vec![chain],
            assign: vec![0; n * n],
        })
    }

    pub fn chain_for(&self, i: usize, j: usize) -> &ChainSpec {
        &self.chains[self.assign[i * self.n + j]]
    }

    pub fn a_max(&self) -> u64 {
        self.chains.iter().map(ChainSpec::a_max).max().unwrap_or(0)
    }

    /// Implied rate matrix (long-run emission rate per VOQ).
    pub fn rate_matrix(&self) -> Result<TrafficRateMatrix> {
        let rates: Vec<f64> = self
            .chains
            .iter()
            .map(ChainSpec::rate)
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| rates[self.assign[i * self.n + j]]).collect())
            .collect();
        TrafficRateMatrix::from_rows(&rows)
    }

    /// Parses the chain-spec text format:
    ///
    /// ```text
    /// n 4
    /// chain all            # or: chain <i> <j> for one VOQ (0-based)
    /// states 2
    /// emit 0 1
    /// row 0.9 0.1
    /// row 0.5 0.5
    /// ```
    ///
    /// Later blocks override earlier assignments; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut chains: Vec<ChainSpec> = Vec::new();
        let mut assign: Vec<usize> = Vec::new();
        let mut target: Option<Option<(usize, usize)>> = None; // None=all
        let mut states: Option<usize> = None;
        let mut emissions: Vec<u64> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let err = |m: String| Error::ChainSpec(m);

        let flush = |target: &mut Option<Option<(usize, usize)>>,
                         states: &mut Option<usize>,
                         emissions: &mut Vec<u64>,
                         rows: &mut Vec<Vec<f64>>,
                         chains: &mut Vec<ChainSpec>,
                         assign: &mut Vec<usize>,
                         n: usize|
         -> Result<()> {
            if let Some(tgt) = target.take() {
                let s = states.take().ok_or_else(|| err("chain block missing 'states'".into()))?;
                if rows.len() != s {
                    return Err(err(format!("expected {s} 'row' lines, got {}", rows.len())));
                }
                let chain = ChainSpec {
                    transitions: std::mem::take(rows),
                    emissions: std::mem::take(emissions),
                };
                chain.validate()?;
                let idx = chains.len();
                chains.push(chain);
                match tgt {
                    None => assign.iter_mut().for_each(|a| *a = idx),
                    Some((i, j)) => {
                        if i >= n || j >= n {
                            return Err(err(format!("voq ({i},{j}) out of range for n={n}")));
                        }
                        assign[i * n + j] = idx;
                    }
                }
            }
            Ok(())
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            let ctx = |m: String| err(format!("line {}: {m}", lineno + 1));
            match key {
                "n" => {
                    let v: usize = rest
                        .first()
                        .ok_or_else(|| ctx("missing port count".into()))?
                        .parse()
                        .map_err(|e| ctx(format!("{e}")))?;
                    if v < 2 {
                        return Err(Error::PortCountTooSmall(v));
                    }
                    n = Some(v);
                    assign = vec![usize::MAX; v * v];
                }
                "chain" => {
                    let nn = n.ok_or_else(|| ctx("'n' must come before 'chain'".into()))?;
                    flush(&mut target, &mut states, &mut emissions, &mut rows, &mut chains, &mut assign, nn)?;
                    if rest == ["all"] {
                        target = Some(None);
                    } else if rest.len() == 2 {
                        let i = rest[0].parse().map_err(|e| ctx(format!("{e}")))?;
                        let j = rest[1].parse().map_err(|e| ctx(format!("{e}")))?;
                        target = Some(Some((i, j)));
                    } else {
                        return Err(ctx("expected 'chain all' or 'chain <i> <j>'".into()));
                    }
                }
                "states" => {
                    states = Some(
                        rest.first()
                            .ok_or_else(|| ctx("missing state count".into()))?
                            .parse()
                            .map_err(|e| ctx(format!("{e}")))?,
                    );
                }
                "emit" => {
                    emissions = rest
                        .iter()
                        .map(|t| t.parse::<u64>().map_err(|e| ctx(format!("{e}"))))
                        .collect::<Result<_>>()?;
                }
                "row" => {
                    rows.push(
                        rest.iter()
                            .map(|t| t.parse::<f64>().map_err(|e| ctx(format!("{e}"))))
                            .collect::<Result<_>>()?,
                    );
                }
                other => return Err(ctx(format!("unknown directive {other:?}"))),
            }
        }
        let nn = n.ok_or_else(|| err("missing 'n' directive".into()))?;
        flush(&mut target, &mut states, &mut emissions, &mut rows, &mut chains, &mut assign, nn)?;
        if assign.iter().any(|&a| a == usize::MAX) {
            return Err(err("some VOQs have no chain assigned (add a 'chain all' block)".into()));
        }
        Ok(ChainSet { n: nn, chains, assign })
    }
}

#[derive(Clone, Debug)]
enum SourceState {
    Bernoulli,
    OnOff {
        p_on_to_off: f64,
        p_off_to_on: f64,
        /// per input: ON phase flag and the burst destination while ON
        on: Vec<bool>,
        burst_dest: Vec<usize>,
    },
    Markov {
        chains: ChainSet,
        /// current state per VOQ, row-major
        state: Vec<usize>,
        /// cumulative transition rows per chain, precomputed
        cumrows: Vec<Vec<Vec<f64>>>,
    },
}

/// A stochastic arrival process emitting one ArrivalMatrix per slot.
#[derive(Clone, Debug)]
pub struct ArrivalSource {
    n: usize,
    lambda: TrafficRateMatrix,
    state: SourceState,
    rng: ChaCha8Rng,
}

impl ArrivalSource {
    pub fn bernoulli(lambda: TrafficRateMatrix, seed: u64) -> Result<Self> {
        Ok(ArrivalSource {
            n: lambda.n(),
            state: SourceState::Bernoulli,
            rng: ChaCha8Rng::seed_from_u64(seed),
            lambda,
        })
    }

    /// ON-OFF source. Per slot each input port emits one packet with
    /// probability equal to its row load. While ON all packets go to the
    /// burst destination (drawn from the row's destination law at ON entry);
    /// while OFF each packet's destination is drawn fresh from that law.
    /// Phase durations are geometric with means `mean_burst` (ON) and
    /// `off_mean` (OFF, defaults to `mean_burst`).
    pub fn onoff(
        lambda: TrafficRateMatrix,
        mean_burst: f64,
        off_mean: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if mean_burst < 1.0 {
            return Err(Error::InvalidSourceSpec(format!(
                "mean burst must be >= 1, got {mean_burst}"
            )));
        }
        let off_mean = off_mean.unwrap_or(mean_burst);
        if off_mean < 0.0 {
            return Err(Error::InvalidSourceSpec(format!(
                "off mean must be >= 0, got {off_mean}"
            )));
        }
        let n = lambda.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_on = mean_burst / (mean_burst + off_mean); // stationary P(ON)
        let mut on = vec![false; n];
        let mut burst_dest = vec![0usize; n];
        let mut src = ArrivalSource {
            n,
            lambda,
            state: SourceState::Bernoulli, // placeholder while we borrow rng
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15),
        };
        for i in 0..n {
            on[i] = rng.gen_bool(p_on);
            if on[i] {
                burst_dest[i] = src.draw_destination(i, &mut rng).unwrap_or(0);
            }
        }
        src.state = SourceState::OnOff {
            p_on_to_off: 1.0 / (mean_burst + 1.0),
            p_off_to_on: 1.0 / (off_mean + 1.0),
            on,
            burst_dest,
        };
        src.rng = rng;
        Ok(src)
    }

    /// Markov-modulated source; every chain starts from its stationary law.
    pub fn markov(chains: ChainSet, seed: u64) -> Result<Self> {
        let n = chains.n;
        let lambda = chains.rate_matrix()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stationaries: Vec<Vec<f64>> = chains
            .chains
            .iter()
            .map(ChainSpec::stationary)
            .collect::<Result<_>>()?;
        let mut state = vec![0usize; n * n];
        for v in 0..n * n {
            let pi = &stationaries[chains.assign[v]];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut s = pi.len() - 1;
            for (k, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    s = k;
                    break;
                }
            }
            state[v] = s;
        }
        let cumrows = chains
            .chains
            .iter()
            .map(|c| {
                c.transitions
                    .iter()
                    .map(|row| {
                        let mut acc = 0.0;
                        row.iter()
                            .map(|&p| {
                                acc += p;
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(ArrivalSource {
            n,
            lambda,
            state: SourceState::Markov { chains, state, cumrows },
            rng,
        })
    }

    /// Source config strings: "bernoulli", "onoff:burst=256" (optionally
    /// ",off_mean=128"), "markov:file=<chain-spec path>".
    pub fn from_spec(spec: &str, lambda: TrafficRateMatrix, seed: u64) -> Result<Self> {
        let bad = |m: String| Error::InvalidSourceSpec(format!("{spec:?}: {m}"));
        let (name, args) = match spec.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (spec, None),
        };
        match (name, args) {
            ("bernoulli", None) => ArrivalSource::bernoulli(lambda, seed),
            ("onoff", Some(a)) => {
                let mut burst: Option<f64> = None;
                let mut off_mean: Option<f64> = None;
                for part in a.split(',') {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
                    let val: f64 = v.parse().map_err(|e| bad(format!("{e}")))?;
                    match k {
                        "burst" => burst = Some(val),
                        "off_mean" => off_mean = Some(val),
                        other => return Err(bad(format!("unknown key {other:?}"))),
                    }
                }
                let b = burst.ok_or_else(|| bad("missing burst=<mean>".into()))?;
                ArrivalSource::onoff(lambda, b, off_mean, seed)
            }
            ("markov", Some(a)) => {
                let path = a
                    .strip_prefix("file=")
                    .ok_or_else(|| bad("expected file=<path>".into()))?;
                let text = std::fs::read_to_string(path)?;
                let chains = ChainSet::parse(&text)?;
                if chains.n != lambda.n() {
                    return Err(Error::DimensionMismatch {
                        expected: lambda.n(),
                        got: chains.n,
                    });
                }
                ArrivalSource::markov(chains, seed)
            }
            _ => Err(bad("unknown source".into())),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Long-run rate matrix of this source.
    pub fn rate(&self) -> &TrafficRateMatrix {
        &self.lambda
    }

    /// Copy of this source with a fresh random stream; modulation state is
    /// carried over unchanged.
    pub fn clone_reseeded(&self, seed: u64) -> ArrivalSource {
        let mut s = self.clone();
        s.rng = ChaCha8Rng::seed_from_u64(seed);
        s
    }

    /// Largest arrival count a single VOQ can receive in one slot.
    pub fn a_max(&self) -> u64 {
        match &self.state {
            SourceState::Bernoulli | SourceState::OnOff { .. } => 1,
            SourceState::Markov { chains, .. } => chains.a_max(),
        }
    }

    /// Destination drawn from row i's law lambda_i. / row_sum.
    fn draw_destination<R: Rng>(&self, i: usize, rng: &mut R) -> Option<usize> {
        let total = self.lambda.row_sum(i);
        if total <= 0.0 {
            return None;
        }
        let mut u: f64 = rng.gen::<f64>() * total;
        for j in 0..self.n {
            let w = self.lambda.get(i, j);
            if u < w {
                return Some(j);
            }
            u -= w;
        }
        Some(self.n - 1) // float round-off fallback
    }

    pub fn next(&mut self) -> ArrivalMatrix {
        let n = self.n;
        let mut a = ArrivalMatrix::zero(n);
        // split the borrow: state and rng are distinct fields
        match &mut self.state {
            SourceState::Bernoulli => {
                for i in 0..n {
                    for j in 0..n {
                        let p = self.lambda.get(i, j);
                        if p > 0.0 && self.rng.gen_bool(p) {
                            a.set(i, j, 1);
                        }
                    }
                }
            }
            SourceState::OnOff {
                p_on_to_off,
                p_off_to_on,
                on,
                burst_dest,
            } => {
                for i in 0..n {
                    let load = self.lambda.row_sum(i).min(1.0);
                    if load > 0.0 && self.rng.gen_bool(load) {
                        let j = if on[i] {
                            burst_dest[i]
                        } else {
                            // fresh draw per OFF-phase packet
                            let mut u: f64 = self.rng.gen::<f64>() * load;
                            let mut picked = n - 1;
                            for j in 0..n {
                                let w = self.lambda.get(i, j);
                                if u < w {
                                    picked = j;
                                    break;
                                }
                                u -= w;
                            }
                            picked
                        };
                        a.set(i, j, a.get(i, j) + 1);
                    }
                    // end-of-slot phase transition
                    if on[i] {
                        if self.rng.gen_bool(*p_on_to_off) {
                            on[i] = false;
                        }
                    } else if self.rng.gen_bool(*p_off_to_on) {
                        on[i] = true;
                        // new burst destination from the row law
                        let total = self.lambda.row_sum(i);
                        if total > 0.0 {
                            let mut u: f64 = self.rng.gen::<f64>() * total;
                            let mut picked = n - 1;
                            for j in 0..n {
                                let w = self.lambda.get(i, j);
                                if u < w {
                                    picked = j;
                                    break;
                                }
                                u -= w;
                            }
                            burst_dest[i] = picked;
                        }
                    }
                }
            }
            SourceState::Markov { chains, state, cumrows } => {
                for v in 0..n * n {
                    let c = chains.assign[v];
                    let cum = &cumrows[c][state[v]];
                    let u: f64 = self.rng.gen();
                    let mut next = cum.len() - 1;
                    for (k, &acc) in cum.iter().enumerate() {
                        if u < acc {
                            next = k;
                            break;
                        }
                    }
                    state[v] = next;
                    let emit = chains.chains[c].emissions[next];
                    if emit > 0 {
                        a.set(v / n, v % n, emit);
                    }
                }
            }
        }
        a
    }
}

/// Sample mean, variance, and autocovariance at lags 1..k_max of each VOQ's
/// per-slot arrival count over `slots` slots.
pub fn estimate_moments(src: &mut ArrivalSource, slots: usize, k_max: usize) -> MomentProfile {
    assert!(slots > k_max, "need more slots than the deepest lag");
    let n = src.n();
    let nn = n * n;
    let mut sum = vec![0.0f64; nn];
    let mut sumsq = vec![0.0f64; nn];
    let mut lag_prod = vec![vec![0.0f64; k_max]; nn];
    // ring buffer of the last k_max arrival vectors
    let mut ring: Vec<Vec<f64>> = vec![vec![0.0; nn]; k_max.max(1)];
    for t in 0..slots {
        let a = src.next();
        let mut cur = vec![0.0f64; nn];
        for v in 0..nn {
            cur[v] = a.get(v / n, v % n) as f64;
            sum[v] += cur[v];
            sumsq[v] += cur[v] * cur[v];
        }
        for k in 1..=k_max {
            if t >= k {
                let past = &ring[(t - k) % k_max.max(1)];
                for v in 0..nn {
                    lag_prod[v][k - 1] += cur[v] * past[v];
                }
            }
        }
        if k_max > 0 {
            ring[t % k_max] = cur;
        }
    }
    let t = slots as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let sigma2: Vec<f64> = (0..nn).map(|v| (sumsq[v] / t - mean[v] * mean[v]).max(0.0)).collect();
    let theta: Vec<Vec<f64>> = (0..nn)
        .map(|v| {
            (1..=k_max)
                .map(|k| lag_prod[v][k - 1] / (t - k as f64) - mean[v] * mean[v])
                .collect()
        })
        .collect();
    MomentProfile { n, mean, sigma2, theta }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn patterns_are_doubly_stochastic() {
        for kind in ALL_PATTERNS {
            for n in [2usize, 3, 8, 64, 257, 512] {
                let p = pattern_matrix(kind, n).unwrap();
                for i in 0..n {
                    assert!(close(p.row_sum(i), 1.0, 1e-12), "{kind} n={n} row {i}");
                    assert!(close(p.col_sum(i), 1.0, 1e-12), "{kind} n={n} col {i}");
                }
            }
        }
        assert!(pattern_matrix(PatternKind::Uniform, 1).is_err());
    }

    #[test]
    fn pattern_entries_match_definitions() {
        let p = pattern_matrix(PatternKind::Uniform, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.get(i, j), 0.25);
            }
        }
        let p = pattern_matrix(PatternKind::LogDiagonal, 2).unwrap();
        assert!(close(p.get(0, 0), 2.0 / 3.0, 1e-15));
        assert!(close(p.get(0, 1), 1.0 / 3.0, 1e-15));
        let p = pattern_matrix(PatternKind::Diagonal, 3).unwrap();
        assert!(close(p.get(2, 2), 2.0 / 3.0, 1e-15));
        assert!(close(p.get(2, 0), 1.0 / 3.0, 1e-15)); // wraps
        assert_eq!(p.get(2, 1), 0.0);
        let p = pattern_matrix(PatternKind::QuasiDiagonal, 5).unwrap();
        assert!(close(p.get(1, 1), 0.5, 1e-15));
        assert!(close(p.get(1, 3), 1.0 / 8.0, 1e-15));
    }

    #[test]
    fn rate_matrix_scales_and_validates() {
        let p = pattern_matrix(PatternKind::Uniform, 64).unwrap();
        let lam = rate_matrix(&p, 0.75).unwrap();
        assert!(close(lam.rho(), 0.75, 1e-12));
        let lam = rate_matrix(&p, 0.5).unwrap();
        for i in 0..64 {
            assert!(close(lam.get(i, i), p.get(i, i) / 2.0, 1e-15));
        }
        assert!(rate_matrix(&p, 0.0).is_err());
        assert!(rate_matrix(&p, 1.5).is_err());
        let not_norm = TrafficRateMatrix::from_rows(&vec![vec![0.2, 0.1], vec![0.3, 0.2]]).unwrap();
        assert!(rate_matrix(&not_norm, 0.5).is_err());
    }

    #[test]
    fn max_load_factor_examples() {
        let m = TrafficRateMatrix::from_rows(&vec![vec![0.2, 0.1], vec![0.3, 0.2]]).unwrap();
        assert!(close(max_load_factor(&m), 0.5, 1e-15));
        let z = TrafficRateMatrix::from_rows(&vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(max_load_factor(&z), 0.0);
        let id = TrafficRateMatrix::from_rows(&vec![
            vec![0.4, 0.0],
            vec![0.0, 0.4],
        ])
        .unwrap();
        assert!(close(max_load_factor(&id), 0.4, 1e-15));
    }

    #[test]
    fn dagger_identity() {
        let m = TrafficRateMatrix::from_rows(&vec![vec![0.2, 0.1], vec![0.3, 0.2]]).unwrap();
        assert!(close(m.dagger(0, 1), 0.3 + 0.3 - 0.1, 1e-15));
    }

    #[test]
    fn bernoulli_edge_cases_and_rate() {
        let z = TrafficRateMatrix::from_rows(&vec![vec![0.0; 2]; 2]).unwrap();
        let mut s = ArrivalSource::bernoulli(z, 1).unwrap();
        for _ in 0..100 {
            assert_eq!(s.next().total(), 0);
        }
        let one = TrafficRateMatrix::from_rows(&vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let mut s = ArrivalSource::bernoulli(one, 2).unwrap();
        for _ in 0..100 {
            assert_eq!(s.next().get(0, 0), 1);
        }
        let lam = TrafficRateMatrix::from_rows(&vec![vec![0.3; 2]; 2]).unwrap();
        let mut s = ArrivalSource::bernoulli(lam, 3).unwrap();
        let slots = 300_000;
        let mut count = 0u64;
        for _ in 0..slots {
            count += s.next().get(0, 0);
        }
        let p = count as f64 / slots as f64;
        let sigma = (0.3 * 0.7 / slots as f64).sqrt();
        assert!((p - 0.3).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn sources_are_reproducible() {
        let p = pattern_matrix(PatternKind::QuasiDiagonal, 4).unwrap();
        let lam = rate_matrix(&p, 0.6).unwrap();
        for spec in ["bernoulli", "onoff:burst=8"] {
            let mut a = ArrivalSource::from_spec(spec, lam.clone(), 77).unwrap();
            let mut b = ArrivalSource::from_spec(spec, lam.clone(), 77).unwrap();
            for _ in 0..200 {
                assert_eq!(a.next(), b.next(), "{spec}");
            }
        }
    }

    #[test]
    fn onoff_mean_rates_match_lambda() {
        let p = pattern_matrix(PatternKind::Diagonal, 4).unwrap();
        let lam = rate_matrix(&p, 0.6).unwrap();
        let mut s = ArrivalSource::onoff(lam.clone(), 16.0, None, 5).unwrap();
        let slots = 2_000_000;
        let mut counts = vec![0u64; 16];
        for _ in 0..slots {
            let a = s.next();
            for v in 0..16 {
                counts[v] += a.get(v / 4, v % 4);
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let emp = counts[i * 4 + j] as f64 / slots as f64;
                let lam_ij = lam.get(i, j);
                // bursts correlate samples, so allow a generous band
                assert!(
                    (emp - lam_ij).abs() < 0.02,
                    "voq ({i},{j}): {emp} vs {lam_ij}"
                );
            }
        }
    }

    #[test]
    fn onoff_zero_rows_never_arrive() {
        let lam = TrafficRateMatrix::from_rows(&vec![vec![0.0; 3]; 3]).unwrap();
        let mut s = ArrivalSource::onoff(lam, 4.0, None, 6).unwrap();
        for _ in 0..500 {
            assert_eq!(s.next().total(), 0);
        }
    }

    #[test]
    fn markov_single_state_constant() {
        let chain = ChainSpec {
            transitions: vec![vec![1.0]],
            emissions: vec![1],
        };
        let set = ChainSet::shared(2, chain).unwrap();
        let mut s = ArrivalSource::markov(set, 7).unwrap();
        for _ in 0..50 {
            let a = s.next();
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(a.get(i, j), 1);
                }
            }
        }
        assert_eq!(s.a_max(), 1);
    }

    #[test]
    fn markov_alternating_chain_rate_half() {
        let chain = ChainSpec {
            transitions: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            emissions: vec![0, 1],
        };
        assert!(close(chain.rate().unwrap(), 0.5, 1e-12));
        let set = ChainSet::shared(2, chain).unwrap();
        let mut s = ArrivalSource::markov(set, 8).unwrap();
        let mut count = 0u64;
        let slots = 10_000;
        for _ in 0..slots {
            count += s.next().get(0, 0);
        }
        let rate = count as f64 / slots as f64;
        assert!(close(rate, 0.5, 1e-3), "rate = {rate}");
    }

    #[test]
    fn markov_two_state_autocovariance_matches_spectral_formula() {
        // 2-state chain with stay probabilities (0.9, 0.7); second
        // eigenvalue mu = 0.9 + 0.7 - 1 = 0.6; with emissions (0,1),
        // theta(k) = pi0 pi1 mu^k
        let chain = ChainSpec {
            transitions: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            emissions: vec![0, 1],
        };
        let pi = chain.stationary().unwrap();
        assert!(close(pi[0], 0.75, 1e-12));
        let set = ChainSet::shared(2, chain).unwrap();
        let mut s = ArrivalSource::markov(set, 9).unwrap();
        let prof = estimate_moments(&mut s, 2_000_000, 4);
        let p0 = 0.75;
        let p1 = 0.25;
        let mu: f64 = 0.6;
        assert!(close(prof.sigma2_at(0, 0), p0 * p1, 0.003));
        for k in 1..=4usize {
            let expect = p0 * p1 * mu.powi(k as i32);
            let got = prof.theta_at(0, 0, k);
            assert!(close(got, expect, 0.003), "lag {k}: {got} vs {expect}");
        }
    }

    #[test]
    fn bernoulli_moments_iid() {
        let lam = TrafficRateMatrix::from_rows(&vec![vec![0.2; 2]; 2]).unwrap();
        let mut s = ArrivalSource::bernoulli(lam, 10).unwrap();
        let prof = estimate_moments(&mut s, 1_000_000, 3);
        assert!(close(prof.sigma2_at(0, 0), 0.16, 0.003));
        for k in 1..=3usize {
            assert!(prof.theta_at(1, 1, k).abs() < 0.003);
        }
    }

    #[test]
    fn chain_set_parsing() {
        let text = "
            n 2
            chain all
            states 2
            emit 0 1
            row 0.9 0.1
            row 0.5 0.5
            chain 0 1   # override one VOQ
            states 1
            emit 2
            row 1.0
        ";
        let set = ChainSet::parse(text).unwrap();
        assert_eq!(set.n, 2);
        assert_eq!(set.chains.len(), 2);
        assert_eq!(set.chain_for(0, 1).emissions, vec![2]);
        assert_eq!(set.chain_for(1, 1).emissions, vec![0, 1]);
        assert_eq!(set.a_max(), 2);

        assert!(ChainSet::parse("chain all\nstates 1\nemit 1\nrow 1.0").is_err()); // no n
        assert!(ChainSet::parse("n 2").is_err()); // nothing assigned
        assert!(ChainSet::parse("n 2\nchain all\nstates 1\nemit 1\nrow 0.5").is_err());
    }

    #[test]
    fn bernoulli_dagger_matches_rate_dagger() {
        // mean of A-dagger equals Lambda-dagger <= 2 rho for i.i.d. sources
        let p = pattern_matrix(PatternKind::QuasiDiagonal, 3).unwrap();
        let lam = rate_matrix(&p, 0.45).unwrap();
        let mut s = ArrivalSource::bernoulli(lam.clone(), 11).unwrap();
        let slots = 400_000;
        let mut dag_sum = vec![0.0f64; 9];
        for _ in 0..slots {
            let a = s.next();
            for i in 0..3 {
                for j in 0..3 {
                    dag_sum[i * 3 + j] += a.neighborhood_sum(i, j).unwrap() as f64;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let emp = dag_sum[i * 3 + j] / slots as f64;
                let expect = lam.dagger(i, j);
                assert!(close(emp, expect, 0.01), "({i},{j}): {emp} vs {expect}");
                assert!(expect <= 2.0 * lam.rho() + 1e-12);
            }
        }
    }
}
