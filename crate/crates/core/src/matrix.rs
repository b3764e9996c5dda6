//! VOQ length matrices, arrival/departure matrices and crossbar matchings.
//!
//! Indices are 0-based everywhere; documentation examples that speak of
//! "input 1" refer to index 0.

use crate::error::{Error, Result};

/// N x N grid of VOQ lengths with cached row/column/total sums.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueMatrix {
    n: usize,
    q: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl QueueMatrix {
    pub fn zero(n: usize) -> Self {
        QueueMatrix {
            n,
            q: vec![0; n * n],
            row_sums: vec![0; n],
            col_sums: vec![0; n],
            total: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
        }
        let mut m = QueueMatrix::zero(n);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v)?;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.q[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange { i, j, n: self.n });
        }
        let old = self.q[i * self.n + j];
        if v >= old {
            let delta = v - old;
            self.total = self
                .total
                .checked_add(delta)
                .ok_or(Error::Overflow { i, j })?;
            self.row_sums[i] = self.row_sums[i].checked_add(delta).ok_or(Error::Overflow { i, j })?;
            self.col_sums[j] = self.col_sums[j].checked_add(delta).ok_or(Error::Overflow { i, j })?;
        } else {
            let delta = old - v;
            self.total -= delta;
            self.row_sums[i] -= delta;
            self.col_sums[j] -= delta;
        }
        self.q[i * self.n + j] = v;
        Ok(())
    }

    #[inline]
    pub fn row_sum(&self, i: usize) -> u64 {
        self.row_sums[i]
    }

    #[inline]
    pub fn col_sum(&self, j: usize) -> u64 {
        self.col_sums[j]
    }

    /// Total queue length, the 1-norm of the matrix.
    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Row slice of length N for input port `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    /// Total length of the cross-shaped neighborhood of VOQ (i,j):
    /// row sum + column sum with the shared entry counted once.
    pub fn neighborhood_sum(&self, i: usize, j: usize) -> Result<u64> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange { i, j, n: self.n });
        }
        Ok(self.row_sums[i] - self.get(i, j) + self.col_sums[j])
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(self.n, |i, j| self.get(i, j))
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        QueueMatrix::from_rows(&grid_from_csv(s)?)
    }
}

/// Arrivals for one time slot; nonnegative packet counts per VOQ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrivalMatrix {
    n: usize,
    a: Vec<u64>,
}

impl ArrivalMatrix {
    pub fn zero(n: usize) -> Self {
        ArrivalMatrix { n, a: vec![0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            a.extend_from_slice(r);
        }
        Ok(ArrivalMatrix { n, a })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        self.a[i * self.n + j] = v;
    }

    pub fn total(&self) -> u64 {
        self.a.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.a[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn neighborhood_sum(&self, i: usize, j: usize) -> Result<u64> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange { i, j, n: self.n });
        }
        Ok(self.row_sum(i) - self.get(i, j) + self.col_sum(j))
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(self.n, |i, j| self.get(i, j))
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        ArrivalMatrix::from_rows(&grid_from_csv(s)?)
    }
}

/// A crossbar schedule: a partial one-to-one assignment of inputs to outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    n: usize,
    input_to_output: Vec<Option<usize>>,
    output_to_input: Vec<Option<usize>>,
}

impl Matching {
    pub fn new(n: usize) -> Self {
        Matching {
            n,
            input_to_output: vec![None; n],
            output_to_input: vec![None; n],
        }
    }

    /// Builds a matching from explicit pairs, rejecting duplicated ports.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matching::new(n);
        for &(i, j) in pairs {
            m.insert(i, j)?;
        }
        Ok(m)
    }

    pub fn insert(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange { i, j, n: self.n });
        }
        if self.input_to_output[i].is_some() {
            return Err(Error::InvalidMatching(format!("input {i} already matched")));
        }
        if self.output_to_input[j].is_some() {
            return Err(Error::InvalidMatching(format!("output {j} already matched")));
        }
        self.input_to_output[i] = Some(j);
        self.output_to_input[j] = Some(i);
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn output_of(&self, i: usize) -> Option<usize> {
        self.input_to_output[i]
    }

    #[inline]
    pub fn input_of(&self, j: usize) -> Option<usize> {
        self.output_to_input[j]
    }

    #[inline]
    pub fn input_matched(&self, i: usize) -> bool {
        self.input_to_output[i].is_some()
    }

    #[inline]
    pub fn output_matched(&self, j: usize) -> bool {
        self.output_to_input[j].is_some()
    }

    pub fn len(&self) -> usize {
        self.input_to_output.iter().filter(|o| o.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matched pairs in input-index order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.input_to_output
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.map(|j| (i, j)))
            .collect()
    }

    pub fn weight(&self, q: &QueueMatrix) -> u64 {
        self.pairs().iter().map(|&(i, j)| q.get(i, j)).sum()
    }
}

/// True iff no input or output appears in more than one pair.
pub fn is_matching(n: usize, pairs: &[(usize, usize)]) -> bool {
    Matching::from_pairs(n, pairs).is_ok()
}

/// True iff no nonempty-VOQ edge can be added to `m`.
pub fn is_maximal(m: &Matching, q: &QueueMatrix) -> bool {
    let n = q.n();
    for i in 0..n {
        if m.input_matched(i) || q.row_sum(i) == 0 {
            continue;
        }
        for j in 0..n {
            if !m.output_matched(j) && q.get(i, j) > 0 {
                return false;
            }
        }
    }
    true
}

/// 0/1 departures for one slot; at most one per row and per column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepartureMatrix {
    n: usize,
    d: Vec<u8>,
}

impl DepartureMatrix {
    pub fn zero(n: usize) -> Self {
        DepartureMatrix { n, d: vec![0; n * n] }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.d[i * self.n + j] as u64
    }

    pub fn total(&self) -> u64 {
        self.d.iter().map(|&x| x as u64).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.d[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|&x| x as u64)
            .sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn neighborhood_sum(&self, i: usize, j: usize) -> Result<u64> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange { i, j, n: self.n });
        }
        Ok(self.row_sum(i) - self.get(i, j) + self.col_sum(j))
    }

    /// Departing pairs in input-index order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Departures implied by a schedule: a matched pair departs one packet
/// iff its VOQ is nonempty.
pub fn departures_from(m: &Matching, q: &QueueMatrix) -> DepartureMatrix {
    let n = q.n();
    let mut d = DepartureMatrix::zero(n);
    for (i, j) in m.pairs() {
        if q.get(i, j) > 0 {
            d.d[i * n + j] = 1;
        }
    }
    d
}

/// One step of the queueing dynamics: q' = q - d + a, entrywise.
pub fn apply_slot(q: &QueueMatrix, d: &DepartureMatrix, a: &ArrivalMatrix) -> Result<QueueMatrix> {
    let n = q.n();
    if d.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: d.n() });
    }
    if a.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.n() });
    }
    let mut out = QueueMatrix::zero(n);
    for i in 0..n {
        for j in 0..n {
            let qi = q.get(i, j);
            let di = d.get(i, j);
            if di > qi {
                return Err(Error::DepartFromEmpty { i, j });
            }
            let v = (qi - di)
                .checked_add(a.get(i, j))
                .ok_or(Error::Overflow { i, j })?;
            out.set(i, j, v)?;
        }
    }
    Ok(out)
}

fn grid_to_csv(n: usize, get: impl Fn(usize, usize) -> u64) -> String {
    let mut s = String::new();
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&get(i, j).to_string());
        }
        s.push('\n');
    }
    s
}

fn grid_from_csv(s: &str) -> Result<Vec<Vec<u64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<u64>, _> =
            line.split(',').map(|f| f.trim().parse::<u64>()).collect();
        rows.push(row.map_err(|e| Error::CsvParse(format!("line {}: {e}", lineno + 1)))?);
    }
    Ok(rows)
}
