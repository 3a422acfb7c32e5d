//! Binary attention masks and their block-level summaries.
//!
//! Preprocessing is a single block-summation pass ([`block_sums`]). Its integer
//! output feeds both the occupancy matrix ([`build_binblkmat`]) and the
//! dense-run metadata ([`build_dense_run_meta`]). Blocks at the right and bottom
//! edges may be partial when `N` is not a multiple of the block size; they are
//! counted over their true extent.

mod format;

pub use format::{
    binblk_read, binblk_write, decode_binblk, decode_mask, encode_binblk, encode_mask, mask_read,
    mask_write, BINBLK_MAGIC, FORMAT_VERSION, MASK_MAGIC,
};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square binary mask; row = query token, column = key token.
///
/// Rows are bit-packed into `u64` words, LSB first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask(n={}", self.n)?;
        if self.n <= 16 {
            for i in 0..self.n {
                f.write_str(if i == 0 { "; " } else { "/" })?;
                for j in 0..self.n {
                    f.write_str(if self.get(i, j) { "1" } else { "0" })?;
                }
            }
        } else {
            write!(f, ", ones={}", self.count_ones())?;
        }
        f.write_str(")")
    }
}

impl Mask {
    pub fn zeros(n: usize) -> Self {
        let words_per_row = n.div_ceil(64);
        Self {
            n,
            words_per_row,
            bits: vec![0; n * words_per_row],
        }
    }

    pub fn ones(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if f(i, j) {
                    mask.set(i, j, true);
                }
            }
        }
        mask
    }

    /// Builds a mask from 0/1 rows. Any nonzero entry counts as 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut mask = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "mask row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &b) in row.iter().enumerate() {
                if b != 0 {
                    mask.set(i, j, true);
                }
            }
        }
        Ok(mask)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n && j < self.n);
        (self.bits[i * self.words_per_row + j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        assert!(i < self.n && j < self.n, "mask index ({i}, {j}) out of range");
        let word = &mut self.bits[i * self.words_per_row + j / 64];
        let bit = 1u64 << (j % 64);
        if value {
            *word |= bit;
        } else {
            *word &= !bit;
        }
    }

    #[inline]
    pub(crate) fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub(crate) fn row_words_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// Number of ones in row `i` within columns `cols`.
    pub fn count_in_row(&self, i: usize, cols: Range<usize>) -> u64 {
        let Range { start, end } = cols;
        if start >= end {
            return 0;
        }
        let words = self.row_words(i);
        let (w0, w1) = (start / 64, (end - 1) / 64);
        let lo = !0u64 << (start % 64);
        let hi = !0u64 >> (63 - (end - 1) % 64);
        if w0 == w1 {
            return (words[w0] & lo & hi).count_ones() as u64;
        }
        let mut total = (words[w0] & lo).count_ones() as u64 + (words[w1] & hi).count_ones() as u64;
        for w in &words[w0 + 1..w1] {
            total += w.count_ones() as u64;
        }
        total
    }

    pub fn row_ones(&self, i: usize) -> u64 {
        self.row_words(i).iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn element_density(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.count_ones() as f64 / (self.n as f64 * self.n as f64)
    }

    /// Column indices of the ones in row `i`, ascending.
    pub fn row_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(i).iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + tz)
            })
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in self.row_indices(i) {
                t.set(j, i, true);
            }
        }
        t
    }
}

/// Rows and columns per mask block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_i: usize,
    pub block_j: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            block_i: 64,
            block_j: 64,
        }
    }
}

impl BlockSpec {
    pub fn new(block_i: usize, block_j: usize) -> Result<Self> {
        if block_i == 0 || block_j == 0 {
            return Err(Error::InvalidArgument(format!(
                "block sizes must be positive, got {block_i}x{block_j}"
            )));
        }
        Ok(Self { block_i, block_j })
    }

    pub fn row_blocks(&self, n: usize) -> usize {
        n.div_ceil(self.block_i)
    }

    pub fn col_blocks(&self, n: usize) -> usize {
        n.div_ceil(self.block_j)
    }

    pub fn row_range(&self, p: usize, n: usize) -> Range<usize> {
        p * self.block_i..((p + 1) * self.block_i).min(n)
    }

    pub fn col_range(&self, q: usize, n: usize) -> Range<usize> {
        q * self.block_j..((q + 1) * self.block_j).min(n)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.block_i, self.block_j).map(|_| ())
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.block_i, self.block_j)
    }
}

impl FromStr for BlockSpec {
    type Err = Error;

    /// Parses `"128x32"`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidArgument(format!("block spec {s:?} is not of the form IxJ")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidArgument(format!("block spec {s:?}: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Per-block count of mask ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSumMatrix {
    n: usize,
    spec: BlockSpec,
    row_blocks: usize,
    col_blocks: usize,
    sums: Vec<u64>,
}

impl BlockSumMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn col_blocks(&self) -> usize {
        self.col_blocks
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> u64 {
        self.sums[p * self.col_blocks + q]
    }

    /// True extent of block `(p, q)`; smaller than `block_i * block_j` on the edges.
    #[inline]
    pub fn block_area(&self, p: usize, q: usize) -> u64 {
        (self.spec.row_range(p, self.n).len() * self.spec.col_range(q, self.n).len()) as u64
    }

    #[inline]
    pub fn is_full(&self, p: usize, q: usize) -> bool {
        self.get(p, q) == self.block_area(p, q)
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.sums.chunks(self.col_blocks.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Block-summation preprocessing.
pub fn block_sums(mask: &Mask, spec: BlockSpec) -> BlockSumMatrix {
    let n = mask.n();
    let row_blocks = spec.row_blocks(n);
    let col_blocks = spec.col_blocks(n);
    let mut sums = vec![0u64; row_blocks * col_blocks];
    if col_blocks > 0 {
        sums.par_chunks_mut(col_blocks).enumerate().for_each(|(p, out)| {
            for i in spec.row_range(p, n) {
                for (q, cell) in out.iter_mut().enumerate() {
                    *cell += mask.count_in_row(i, spec.col_range(q, n));
                }
            }
        });
    }
    BlockSumMatrix {
        n,
        spec,
        row_blocks,
        col_blocks,
        sums,
    }
}

/// Block occupancy: 1 where the mask block holds at least one nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinBlkMat {
    n: usize,
    spec: BlockSpec,
    row_blocks: usize,
    col_blocks: usize,
    occupancy: Vec<bool>,
}

impl BinBlkMat {
    pub(crate) fn from_parts(n: usize, spec: BlockSpec, occupancy: Vec<bool>) -> Self {
        let row_blocks = spec.row_blocks(n);
        let col_blocks = spec.col_blocks(n);
        assert_eq!(occupancy.len(), row_blocks * col_blocks);
        Self {
            n,
            spec,
            row_blocks,
            col_blocks,
            occupancy,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn col_blocks(&self) -> usize {
        self.col_blocks
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> bool {
        self.occupancy[p * self.col_blocks + q]
    }

    pub fn count_nonzero(&self) -> u64 {
        self.occupancy.iter().filter(|&&b| b).count() as u64
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.row_blocks)
            .map(|p| (0..self.col_blocks).map(|q| self.get(p, q) as u8).collect())
            .collect()
    }
}

pub fn build_binblkmat(sums: &BlockSumMatrix) -> BinBlkMat {
    BinBlkMat {
        n: sums.n,
        spec: sums.spec,
        row_blocks: sums.row_blocks,
        col_blocks: sums.col_blocks,
        occupancy: sums.sums.iter().map(|&s| s > 0).collect(),
    }
}

/// Start and length (in blocks) of the first run of fully-one blocks per row-block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseRunMeta {
    n: usize,
    spec: BlockSpec,
    pub offset: Vec<usize>,
    pub total_ones: Vec<usize>,
}

impl DenseRunMeta {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    /// Whether column-block `q` of row-block `r` lies in the recorded run.
    #[inline]
    pub fn in_run(&self, r: usize, q: usize) -> bool {
        q >= self.offset[r] && q < self.offset[r] + self.total_ones[r]
    }

    pub fn total_run_blocks(&self) -> u64 {
        self.total_ones.iter().map(|&t| t as u64).sum()
    }
}

/// Only the first maximal run in each row-block is recorded; later runs are
/// left to ordinary masked processing.
pub fn build_dense_run_meta(sums: &BlockSumMatrix) -> DenseRunMeta {
    let mut offset = vec![0; sums.row_blocks];
    let mut total_ones = vec![0; sums.row_blocks];
    for p in 0..sums.row_blocks {
        if let Some(start) = (0..sums.col_blocks).find(|&q| sums.is_full(p, q)) {
            let len = (start..sums.col_blocks)
                .take_while(|&q| sums.is_full(p, q))
                .count();
            offset[p] = start;
            total_ones[p] = len;
        }
    }
    DenseRunMeta {
        n: sums.n,
        spec: sums.spec,
        offset,
        total_ones,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub blocks_total: u64,
    pub blocks_nonzero: u64,
    pub blocks_full: u64,
    pub block_density: f64,
    pub element_density: f64,
}

pub fn block_stats(sums: &BlockSumMatrix) -> BlockStats {
    let blocks_total = sums.sums.len() as u64;
    let blocks_nonzero = sums.sums.iter().filter(|&&s| s > 0).count() as u64;
    let mut blocks_full = 0;
    let mut ones = 0;
    for p in 0..sums.row_blocks {
        for q in 0..sums.col_blocks {
            let s = sums.get(p, q);
            ones += s;
            if s > 0 && s == sums.block_area(p, q) {
                blocks_full += 1;
            }
        }
    }
    let ratio = |a: u64, b: f64| if b > 0.0 { a as f64 / b } else { 0.0 };
    BlockStats {
        blocks_total,
        blocks_nonzero,
        blocks_full,
        block_density: ratio(blocks_nonzero, blocks_total as f64),
        element_density: ratio(ones, sums.n as f64 * sums.n as f64),
    }
}
