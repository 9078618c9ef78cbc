//! Pseudo-random LDPC codes with a systematic encoder and a normalized
//! min-sum decoder.
//!
//! Codes are built with column degree 3, spreading check degrees as evenly as
//! possible and rejecting length-4 cycles when an alternative exists. The
//! parity-check matrix is then brought to reduced row echelon form over GF(2);
//! the pivot columns become the parity positions and the remaining `k`
//! columns carry the information bits unchanged.
//!
//! LLR sign convention: a positive LLR favours bit 0.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Bit;
use crate::{Error, Result};

const COLUMN_DEGREE: usize = 3;
const CONSTRUCTION_RETRIES: u64 = 32;
/// Normalization applied to check-node magnitudes.
pub const MIN_SUM_SCALE: f64 = 0.8;
pub const DEFAULT_MAX_ITERS: usize = 25;

/// Sparse binary parity-check matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    n: usize,
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let mut cols = vec![Vec::new(); n];
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &j in row.iter() {
                if j >= n {
                    return Err(Error::InvalidParameter(format!(
                        "row {i} references column {j} >= n = {n}"
                    )));
                }
                cols[j].push(i);
            }
        }
        Ok(ParityCheckMatrix { n, rows, cols })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_checks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn column_degrees(&self) -> Vec<usize> {
        self.cols.iter().map(Vec::len).collect()
    }

    pub fn row_degrees(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// `H * c` over GF(2).
    pub fn syndrome(&self, word: &[Bit]) -> Vec<Bit> {
        self.rows
            .iter()
            .map(|row| row.iter().fold(0, |acc, &j| acc ^ (word[j] & 1)))
            .collect()
    }

    pub fn is_codeword(&self, word: &[Bit]) -> bool {
        word.len() == self.n && self.syndrome(word).iter().all(|&b| b == 0)
    }

    /// Writes the matrix in alist format.
    pub fn to_alist(&self) -> String {
        let col_deg = self.column_degrees();
        let row_deg = self.row_degrees();
        let max_col = col_deg.iter().copied().max().unwrap_or(0);
        let max_row = row_deg.iter().copied().max().unwrap_or(0);
        let mut out = String::new();
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        writeln!(out, "{} {}", self.n, self.rows.len()).unwrap();
        writeln!(out, "{max_col} {max_row}").unwrap();
        writeln!(out, "{}", join(&mut col_deg.iter().copied())).unwrap();
        writeln!(out, "{}", join(&mut row_deg.iter().copied())).unwrap();
        for col in &self.cols {
            let mut entries: Vec<usize> = col.iter().map(|i| i + 1).collect();
            entries.resize(max_col, 0);
            writeln!(out, "{}", join(&mut entries.into_iter())).unwrap();
        }
        for row in &self.rows {
            let mut entries: Vec<usize> = row.iter().map(|j| j + 1).collect();
            entries.resize(max_row, 0);
            writeln!(out, "{}", join(&mut entries.into_iter())).unwrap();
        }
        out
    }

    /// Parses the alist format. Column and row lists must agree.
    pub fn from_alist(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("alist: {msg}"));
        let mut nums = text.split_whitespace().map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Parse(format!("alist: bad integer {tok:?}")))
        });
        let mut next = || nums.next().unwrap_or_else(|| Err(bad("unexpected end of input")));
        let n = next()?;
        let m = next()?;
        let max_col = next()?;
        let max_row = next()?;
        let col_deg: Vec<usize> = (0..n).map(|_| next()).collect::<Result<_>>()?;
        let row_deg: Vec<usize> = (0..m).map(|_| next()).collect::<Result<_>>()?;
        let mut col_lists = Vec::with_capacity(n);
        for &d in &col_deg {
            let entries: Vec<usize> = (0..max_col).map(|_| next()).collect::<Result<_>>()?;
            if entries[..d].iter().any(|&e| e == 0 || e > m) {
                return Err(bad("column entry out of range"));
            }
            col_lists.push(entries[..d].iter().map(|e| e - 1).collect::<Vec<_>>());
        }
        let mut rows = Vec::with_capacity(m);
        for &d in &row_deg {
            let entries: Vec<usize> = (0..max_row).map(|_| next()).collect::<Result<_>>()?;
            if entries[..d].iter().any(|&e| e == 0 || e > n) {
                return Err(bad("row entry out of range"));
            }
            rows.push(entries[..d].iter().map(|e| e - 1).collect::<Vec<_>>());
        }
        let h = ParityCheckMatrix::from_rows(n, rows)?;
        for (j, list) in col_lists.iter_mut().enumerate() {
            list.sort_unstable();
            if *list != h.cols[j] {
                return Err(bad("column and row lists disagree"));
            }
        }
        Ok(h)
    }
}

/// Dense GF(2) row stored as 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(len: usize) -> Self {
        BitRow(vec![0; len.div_ceil(64)])
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn xor_with(&mut self, other: &BitRow) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a ^= b);
    }

    fn parity_with(&self, other: &BitRow) -> u8 {
        (self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones())
            .sum::<u32>()
            & 1) as u8
    }
}

/// Rank of a sparse GF(2) matrix by dense elimination.
pub fn gf2_rank(h: &ParityCheckMatrix) -> usize {
    rref(h).0.len()
}

/// Reduced row echelon form. Returns the nonzero rows and their pivot columns.
/// Columns are scanned from the last to the first so parity bits tend to sit
/// at the end of the codeword.
fn rref(h: &ParityCheckMatrix) -> (Vec<BitRow>, Vec<usize>) {
    let n = h.n;
    let mut rows: Vec<BitRow> = h
        .rows
        .iter()
        .map(|r| {
            let mut b = BitRow::zeros(n);
            r.iter().for_each(|&j| b.set(j));
            b
        })
        .collect();
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in (0..n).rev() {
        if rank == rows.len() {
            break;
        }
        let Some(p) = (rank..rows.len()).find(|&i| rows[i].get(col)) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot_row = rows[rank].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != rank && row.get(col) {
                row.xor_with(&pivot_row);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    rows.truncate(rank);
    (rows, pivots)
}

/// Result of [`LdpcCode::decode`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    /// Hard decisions on the information positions.
    pub info: Vec<Bit>,
    /// Hard decisions on the whole codeword.
    pub codeword: Vec<Bit>,
    /// True when the hard decisions satisfy every check with no erased bit.
    pub converged: bool,
    pub iterations: usize,
}

/// A parity-check matrix together with its systematic encoder.
#[derive(Clone, Debug)]
pub struct LdpcCode {
    h: ParityCheckMatrix,
    k: usize,
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    /// One row per parity bit, over the `k` information bits.
    encoder: Vec<BitRow>,
    edge_var: Vec<usize>,
    check_offsets: Vec<usize>,
}

impl LdpcCode {
    /// Builds a code of length `n` and dimension `k` from a seed.
    /// The same `(n, k, seed)` always yields the same matrix.
    pub fn construct(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::InvalidParameter(format!("LDPC needs 0 < k < n, got n={n}, k={k}")));
        }
        let m = n - k;
        if m < COLUMN_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "LDPC needs at least {COLUMN_DEGREE} parity rows, got {m}"
            )));
        }
        for attempt in 0..CONSTRUCTION_RETRIES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(attempt);
            let h = random_matrix(n, m, &mut rng);
            if let Ok(code) = LdpcCode::from_matrix(h) {
                if code.k == k {
                    return Ok(code);
                }
            }
        }
        Err(Error::CodeConstruction { n, k })
    }

    /// Wraps an externally supplied matrix; `k = n - rank(H)`.
    pub fn from_matrix(h: ParityCheckMatrix) -> Result<Self> {
        let n = h.n;
        let (mut rows, pivots) = rref(&h);
        let rank = pivots.len();
        if rank < h.num_checks() {
            // Redundant checks are harmless for decoding but the construction
            // path insists on full rank through `k`.
            rows.truncate(rank);
        }
        let k = n - rank;
        if k == 0 {
            return Err(Error::InvalidParameter("parity-check matrix leaves no information bits".into()));
        }
        let mut is_pivot = vec![false; n];
        pivots.iter().for_each(|&p| is_pivot[p] = true);
        let info_positions: Vec<usize> = (0..n).filter(|&j| !is_pivot[j]).collect();
        let encoder = rows
            .iter()
            .map(|row| {
                let mut e = BitRow::zeros(k);
                for (idx, &j) in info_positions.iter().enumerate() {
                    if row.get(j) {
                        e.set(idx);
                    }
                }
                e
            })
            .collect();
        let mut edge_var = Vec::new();
        let mut check_offsets = vec![0];
        for row in &h.rows {
            edge_var.extend_from_slice(row);
            check_offsets.push(edge_var.len());
        }
        Ok(LdpcCode {
            h,
            k,
            info_positions,
            parity_positions: pivots,
            encoder,
            edge_var,
            check_offsets,
        })
    }

    pub fn n(&self) -> usize {
        self.h.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &ParityCheckMatrix {
        &self.h
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn encode(&self, info: &[Bit]) -> Result<Vec<Bit>> {
        if info.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "LDPC encode expects {} bits, got {}",
                self.k,
                info.len()
            )));
        }
        let mut u = BitRow::zeros(self.k);
        info.iter().enumerate().filter(|(_, &b)| b & 1 == 1).for_each(|(i, _)| u.set(i));
        let mut word = vec![0; self.n()];
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            word[pos] = b & 1;
        }
        for (row, &pos) in self.encoder.iter().zip(&self.parity_positions) {
            word[pos] = row.parity_with(&u);
        }
        Ok(word)
    }

    pub fn extract_info(&self, codeword: &[Bit]) -> Vec<Bit> {
        self.info_positions.iter().map(|&j| codeword[j]).collect()
    }

    /// Normalized min-sum decoding with a flooding schedule.
    ///
    /// Stops as soon as the hard decisions form a codeword. A zero posterior
    /// counts as an erasure and prevents convergence.
    pub fn decode(&self, llrs: &[f64], max_iters: usize) -> Result<DecodeOutput> {
        let n = self.n();
        if llrs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "LDPC decode expects {} LLRs, got {}",
                n,
                llrs.len()
            )));
        }
        if max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        let mut post = llrs.to_vec();
        let mut msgs = vec![0.0f64; self.edge_var.len()];
        let mut hard = vec![0u8; n];
        let mut iterations = 0;
        let mut converged = false;
        for it in 1..=max_iters + 1 {
            hard_decide(&post, &mut hard);
            if post.iter().all(|&x| x != 0.0) && self.h.is_codeword(&hard) {
                converged = true;
                iterations = it.min(max_iters);
                break;
            }
            if it > max_iters {
                iterations = max_iters;
                break;
            }
            self.check_update(&post, &mut msgs);
            post.copy_from_slice(llrs);
            for (e, &v) in self.edge_var.iter().enumerate() {
                post[v] += msgs[e];
            }
        }
        Ok(DecodeOutput {
            info: self.extract_info(&hard),
            codeword: hard,
            converged,
            iterations,
        })
    }

    fn check_update(&self, post: &[f64], msgs: &mut [f64]) {
        for c in 0..self.h.num_checks() {
            let (lo, hi) = (self.check_offsets[c], self.check_offsets[c + 1]);
            let mut min1 = f64::INFINITY;
            let mut min2 = f64::INFINITY;
            let mut min_idx = usize::MAX;
            let mut sign_prod = 1.0;
            for e in lo..hi {
                let q = post[self.edge_var[e]] - msgs[e];
                if q < 0.0 {
                    sign_prod = -sign_prod;
                }
                let a = q.abs();
                if a < min1 {
                    min2 = min1;
                    min1 = a;
                    min_idx = e;
                } else if a < min2 {
                    min2 = a;
                }
            }
            for e in lo..hi {
                let q = post[self.edge_var[e]] - msgs[e];
                let own_sign = if q < 0.0 { -1.0 } else { 1.0 };
                let mag = if e == min_idx { min2 } else { min1 };
                msgs[e] = MIN_SUM_SCALE * sign_prod * own_sign * mag;
            }
        }
    }
}

fn hard_decide(llrs: &[f64], out: &mut [Bit]) {
    for (o, &x) in out.iter_mut().zip(llrs) {
        *o = (x < 0.0) as Bit;
    }
}

fn random_matrix(n: usize, m: usize, rng: &mut ChaCha8Rng) -> ParityCheckMatrix {
    let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut order: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    cols.shuffle(rng);
    for &j in &cols {
        let mut chosen: Vec<usize> = Vec::with_capacity(COLUMN_DEGREE);
        for _ in 0..COLUMN_DEGREE {
            // lowest degree first, random tie-break
            order.shuffle(rng);
            order.sort_by_key(|&r| row_cols[r].len());
            let creates_cycle = |r: usize| {
                chosen.iter().any(|&c| {
                    row_cols[r].iter().any(|col| row_cols[c].contains(col))
                })
            };
            let candidate = order
                .iter()
                .copied()
                .filter(|r| !chosen.contains(r))
                .take(m.min(64))
                .find(|&r| !creates_cycle(r))
                .or_else(|| order.iter().copied().find(|r| !chosen.contains(r)))
                .expect("m >= column degree");
            chosen.push(candidate);
        }
        for r in chosen {
            row_cols[r].push(j);
        }
    }
    // Guard against empty checks on tiny codes.
    for r in 0..m {
        if row_cols[r].is_empty() {
            row_cols[r].push(rng.random_range(0..n));
        }
    }
    ParityCheckMatrix::from_rows(n, row_cols).expect("indices in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_bits(k: usize, seed: u64) -> Vec<Bit> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k).map(|_| rng.random_range(0..2u8)).collect()
    }

    /// Independent elimination: row-reduce a dense `Vec<Vec<u8>>` copy.
    fn dense_rank(h: &ParityCheckMatrix) -> usize {
        let mut a: Vec<Vec<u8>> = h
            .rows()
            .iter()
            .map(|r| {
                let mut v = vec![0u8; h.n()];
                r.iter().for_each(|&j| v[j] = 1);
                v
            })
            .collect();
        let mut rank = 0;
        for col in 0..h.n() {
            if let Some(p) = (rank..a.len()).find(|&i| a[i][col] == 1) {
                a.swap(rank, p);
                for i in 0..a.len() {
                    if i != rank && a[i][col] == 1 {
                        let pr = a[rank].clone();
                        a[i].iter_mut().zip(pr).for_each(|(x, y)| *x ^= y);
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn construct_576_253() {
        let code = LdpcCode::construct(576, 253, 1).unwrap();
        assert_eq!(code.k(), 253);
        assert_eq!(code.info_positions().len(), 253);
        assert_eq!(dense_rank(code.matrix()), 323);
        assert!(code.matrix().column_degrees().iter().all(|&d| d == 3));
    }

    #[test]
    fn construct_toy() {
        let code = LdpcCode::construct(12, 6, 7).unwrap();
        assert_eq!(code.matrix().num_checks(), 6);
        assert!(code.matrix().column_degrees().iter().all(|&d| d >= 2));
        assert_eq!(dense_rank(code.matrix()), 6);
    }

    #[test]
    fn construct_rejects_degenerate() {
        assert!(LdpcCode::construct(10, 10, 0).is_err());
        assert!(LdpcCode::construct(10, 8, 0).is_err());
        assert!(LdpcCode::construct(10, 0, 0).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let a = LdpcCode::construct(200, 100, 42).unwrap();
        let b = LdpcCode::construct(200, 100, 42).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        let c = LdpcCode::construct(200, 100, 43).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn encode_examples() {
        let code = LdpcCode::construct(96, 48, 3).unwrap();
        assert!(code.encode(&vec![0; 48]).unwrap().iter().all(|&b| b == 0));
        let a = random_bits(48, 1);
        let b = random_bits(48, 2);
        let ab: Vec<Bit> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let ca = code.encode(&a).unwrap();
        let cb = code.encode(&b).unwrap();
        let cab = code.encode(&ab).unwrap();
        assert!(code.matrix().is_codeword(&ca));
        assert_eq!(code.extract_info(&ca), a);
        let xor: Vec<Bit> = ca.iter().zip(&cb).map(|(x, y)| x ^ y).collect();
        assert_eq!(xor, cab);
        assert!(code.encode(&[0; 47]).is_err());
    }

    #[test]
    fn decode_noiseless() {
        let code = LdpcCode::construct(576, 253, 1).unwrap();
        let info = random_bits(253, 9);
        let cw = code.encode(&info).unwrap();
        let llrs: Vec<f64> = cw.iter().map(|&b| if b == 0 { 20.0 } else { -20.0 }).collect();
        let out = code.decode(&llrs, 25).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.info, info);
    }

    #[test]
    fn decode_all_erasure() {
        let code = LdpcCode::construct(96, 48, 3).unwrap();
        let out = code.decode(&[0.0; 96], 10).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 10);
    }

    #[test]
    fn decode_scale_invariant() {
        let code = LdpcCode::construct(192, 96, 5).unwrap();
        let cw = code.encode(&random_bits(96, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let llrs: Vec<f64> = cw
            .iter()
            .map(|&b| (1.0 - 2.0 * b as f64) * 1.2 + rng.random_range(-2.0..2.0))
            .collect();
        let doubled: Vec<f64> = llrs.iter().map(|x| 2.0 * x).collect();
        let a = code.decode(&llrs, 25).unwrap();
        let b = code.decode(&doubled, 25).unwrap();
        assert_eq!(a.codeword, b.codeword);
        assert_eq!(a.converged, b.converged);
    }

    #[test]
    fn decode_repairs_errors() {
        let code = LdpcCode::construct(576, 253, 1).unwrap();
        let info = random_bits(253, 21);
        let cw = code.encode(&info).unwrap();
        let mut llrs: Vec<f64> = cw.iter().map(|&b| if b == 0 { 8.0 } else { -8.0 }).collect();
        for i in [3, 100, 250, 400, 511] {
            llrs[i] = -llrs[i] * 0.25;
        }
        let out = code.decode(&llrs, 25).unwrap();
        assert!(out.converged);
        assert_eq!(out.info, info);
    }

    #[test]
    fn alist_roundtrip() {
        let code = LdpcCode::construct(60, 30, 2).unwrap();
        let text = code.matrix().to_alist();
        let parsed = ParityCheckMatrix::from_alist(&text).unwrap();
        assert_eq!(&parsed, code.matrix());
        let again = LdpcCode::from_matrix(parsed).unwrap();
        assert_eq!(again.k(), 30);
        assert!(ParityCheckMatrix::from_alist("3 2\n1 1\n1 1").is_err());
    }
}
