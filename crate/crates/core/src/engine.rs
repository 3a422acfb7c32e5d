//! Tiled attention with online softmax and mask-aware tile skipping.
//!
//! Query row-blocks are the parallel units; for each one the key column-blocks
//! are visited in ascending order. What happens to a visited tile depends on
//! the [`Variant`]:
//!
//! | variant         | occupancy 0 | inside dense run | otherwise           |
//! |-----------------|-------------|------------------|---------------------|
//! | `Dense`         | process     | process          | process, no mask    |
//! | `NaiveMasked`   | mask read   | mask read        | mask read           |
//! | `BinBlk`        | skip        | mask read        | mask read           |
//! | `DenseBinBlk`   | skip        | no mask read     | mask read           |
//!
//! Every masked variant applies the same arithmetic to the same tiles in the
//! same order, so their outputs are bit-identical. A tile that contributes
//! nothing to a row leaves that row's running state untouched.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{block_sums, build_binblkmat, build_dense_run_meta, BinBlkMat, BlockSpec, DenseRunMeta, Mask};
use crate::matrix::{axpy, dot, AttentionGrads, AttentionInputs, AttentionOutput, Element, Matrix};

/// Forward output reused by the backward pass for recomputation.
pub type SavedForwardState<T> = AttentionOutput<T>;

/// Upper bound on the number of partial dK/dV buffers in the backward pass.
/// Row-blocks are dealt round-robin to this many chunks, independent of the
/// thread count, so the reduction order never changes.
const BACKWARD_CHUNKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Mask-unaware blocked attention.
    Dense,
    /// Reads the mask tile on every iteration.
    NaiveMasked,
    /// Skips tiles whose mask block is empty.
    #[serde(rename = "binblk")]
    BinBlk,
    /// `BinBlk` plus mask-read elision inside the first fully-one run.
    #[serde(rename = "dense-binblk")]
    DenseBinBlk,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dense, Variant::NaiveMasked, Variant::BinBlk, Variant::DenseBinBlk];
    pub const MASKED: [Variant; 3] = [Variant::NaiveMasked, Variant::BinBlk, Variant::DenseBinBlk];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::NaiveMasked => "naive-masked",
            Variant::BinBlk => "binblk",
            Variant::DenseBinBlk => "dense-binblk",
        }
    }

    pub fn needs_mask(self) -> bool {
        self != Variant::Dense
    }

    pub fn needs_binblk(self) -> bool {
        matches!(self, Variant::BinBlk | Variant::DenseBinBlk)
    }

    pub fn needs_dense_run(self) -> bool {
        self == Variant::DenseBinBlk
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "dense" | "flash" => Ok(Variant::Dense),
            "naivemasked" | "naive" => Ok(Variant::NaiveMasked),
            "binblk" => Ok(Variant::BinBlk),
            "densebinblk" => Ok(Variant::DenseBinBlk),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

/// Logical tile events of one tile loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EngineCounters {
    pub blocks_visited: u64,
    pub blocks_processed: u64,
    pub mask_block_reads: u64,
    pub skipped_by_binblk: u64,
    pub skipped_mask_reads_by_run: u64,
}

impl EngineCounters {
    pub fn scaled(self, k: u64) -> Self {
        Self {
            blocks_visited: self.blocks_visited * k,
            blocks_processed: self.blocks_processed * k,
            mask_block_reads: self.mask_block_reads * k,
            skipped_by_binblk: self.skipped_by_binblk * k,
            skipped_mask_reads_by_run: self.skipped_mask_reads_by_run * k,
        }
    }
}

impl Add for EngineCounters {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for EngineCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.blocks_visited += rhs.blocks_visited;
        self.blocks_processed += rhs.blocks_processed;
        self.mask_block_reads += rhs.mask_block_reads;
        self.skipped_by_binblk += rhs.skipped_by_binblk;
        self.skipped_mask_reads_by_run += rhs.skipped_mask_reads_by_run;
    }
}

impl std::iter::Sum for EngineCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Mask preprocessing products consumed by the engine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Prep {
    pub binblk: Option<BinBlkMat>,
    pub dense_run: Option<DenseRunMeta>,
}

impl Prep {
    pub fn none() -> Self {
        Self::default()
    }

    /// Runs one block-summation pass and derives what `variant` needs.
    pub fn build(mask: &Mask, spec: BlockSpec, variant: Variant) -> Self {
        if !variant.needs_binblk() {
            return Self::none();
        }
        let sums = block_sums(mask, spec);
        Self {
            binblk: Some(build_binblkmat(&sums)),
            dense_run: variant.needs_dense_run().then(|| build_dense_run_meta(&sums)),
        }
    }

    /// Occupancy and dense-run metadata together, usable by every variant.
    pub fn build_all(mask: &Mask, spec: BlockSpec) -> Self {
        Self::build(mask, spec, Variant::DenseBinBlk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TileAction {
    Skip,
    /// Process without consulting the mask.
    Unmasked,
    /// Load the mask tile and apply it.
    Masked,
}

struct Plan<'a> {
    variant: Variant,
    mask: Option<&'a Mask>,
    binblk: Option<&'a BinBlkMat>,
    dense_run: Option<&'a DenseRunMeta>,
    spec: BlockSpec,
    n: usize,
}

impl<'a> Plan<'a> {
    fn new(n: usize, mask: Option<&'a Mask>, spec: BlockSpec, variant: Variant, prep: &'a Prep) -> Result<Self> {
        spec.validate()?;
        let mask = if variant.needs_mask() {
            let mask = mask.ok_or(Error::MissingPrep {
                variant: variant.name(),
                missing: "a mask",
            })?;
            if mask.n() != n {
                return Err(Error::Shape(format!(
                    "mask is {0}x{0} but inputs have {n} tokens",
                    mask.n()
                )));
            }
            Some(mask)
        } else {
            None
        };
        let binblk = if variant.needs_binblk() {
            let b = prep.binblk.as_ref().ok_or(Error::MissingPrep {
                variant: variant.name(),
                missing: "a BinBlkMat",
            })?;
            if b.n() != n || b.spec() != spec {
                return Err(Error::PrepMismatch(format!(
                    "BinBlkMat built for n={} spec={} used with n={n} spec={spec}",
                    b.n(),
                    b.spec()
                )));
            }
            Some(b)
        } else {
            None
        };
        let dense_run = if variant.needs_dense_run() {
            let d = prep.dense_run.as_ref().ok_or(Error::MissingPrep {
                variant: variant.name(),
                missing: "dense-run metadata",
            })?;
            if d.n() != n || d.spec() != spec {
                return Err(Error::PrepMismatch(format!(
                    "dense-run metadata built for n={} spec={} used with n={n} spec={spec}",
                    d.n(),
                    d.spec()
                )));
            }
            Some(d)
        } else {
            None
        };
        Ok(Self {
            variant,
            mask,
            binblk,
            dense_run,
            spec,
            n,
        })
    }

    #[inline]
    fn action(&self, r: usize, c: usize, counters: &mut EngineCounters) -> TileAction {
        counters.blocks_visited += 1;
        let action = match self.variant {
            Variant::Dense => TileAction::Unmasked,
            Variant::NaiveMasked => TileAction::Masked,
            Variant::BinBlk | Variant::DenseBinBlk => {
                let occupied = self.binblk.is_none_or(|b| b.get(r, c));
                if !occupied {
                    TileAction::Skip
                } else if self.dense_run.is_some_and(|d| d.in_run(r, c)) {
                    counters.skipped_mask_reads_by_run += 1;
                    TileAction::Unmasked
                } else {
                    TileAction::Masked
                }
            }
        };
        match action {
            TileAction::Skip => counters.skipped_by_binblk += 1,
            TileAction::Unmasked => counters.blocks_processed += 1,
            TileAction::Masked => {
                counters.blocks_processed += 1;
                counters.mask_block_reads += 1;
            }
        }
        action
    }
}

/// Scaled scores of one tile into `scores` (`rows.len() x cols.len()`),
/// with `-inf` at masked positions when `mask` is given.
#[inline]
fn tile_scores<T: Element>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    scale: f64,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    mask: Option<&Mask>,
    scores: &mut [f64],
) {
    let width = cols.len();
    for (ri, i) in rows.enumerate() {
        let qi = q.row(i);
        let out = &mut scores[ri * width..(ri + 1) * width];
        for (s, j) in out.iter_mut().zip(cols.clone()) {
            *s = scale * dot(qi, k.row(j)).to_f64();
        }
        if let Some(mask) = mask {
            for (s, j) in out.iter_mut().zip(cols.clone()) {
                if !mask.get(i, j) {
                    *s = f64::NEG_INFINITY;
                }
            }
        }
    }
}

fn check_saved<T: Element>(n: usize, d: usize, saved: &SavedForwardState<T>, d_out: &Matrix<T>) -> Result<()> {
    if saved.out.shape() != (n, d) || saved.row_max.len() != n || saved.row_sum.len() != n {
        return Err(Error::Shape(format!(
            "saved forward state (out {:?}, {} stats) does not match {n}x{d} inputs",
            saved.out.shape(),
            saved.row_max.len()
        )));
    }
    if d_out.shape() != (n, d) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match {n}x{d} inputs",
            d_out.shape()
        )));
    }
    Ok(())
}

/// Blocked forward pass of one head slot.
///
/// `mask` may be `None` only for [`Variant::Dense`]. `prep` must have been
/// built from the same mask and block spec.
pub fn blocked_forward<T: Element>(
    inputs: &AttentionInputs<T>,
    mask: Option<&Mask>,
    spec: BlockSpec,
    variant: Variant,
    prep: &Prep,
) -> Result<(AttentionOutput<T>, EngineCounters)> {
    let (n, d) = (inputs.n_tokens(), inputs.head_dim());
    let plan = Plan::new(n, mask, spec, variant, prep)?;
    let v64 = inputs.v().to_f64();
    let bi = spec.block_i;

    let mut out = Matrix::<T>::zeros(n, d);
    let mut row_max = vec![f64::NEG_INFINITY; n];
    let mut row_sum = vec![0.0; n];

    let counters: EngineCounters = out
        .as_mut_slice()
        .par_chunks_mut(bi * d)
        .zip(row_max.par_chunks_mut(bi))
        .zip(row_sum.par_chunks_mut(bi))
        .enumerate()
        .map(|(r, ((out_rows, m), l))| forward_row_block(inputs, &v64, &plan, r, out_rows, m, l))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();

    Ok((
        AttentionOutput {
            out,
            row_max,
            row_sum,
        },
        counters,
    ))
}

fn forward_row_block<T: Element>(
    inputs: &AttentionInputs<T>,
    v64: &Matrix<f64>,
    plan: &Plan<'_>,
    r: usize,
    out_rows: &mut [T],
    m: &mut [f64],
    l: &mut [f64],
) -> EngineCounters {
    let (n, d, spec) = (plan.n, inputs.head_dim(), plan.spec);
    let rows = spec.row_range(r, n);
    let height = rows.len();
    let mut acc = vec![0.0f64; height * d];
    let mut scores = vec![0.0f64; height * spec.block_j];
    let mut counters = EngineCounters::default();

    for c in 0..spec.col_blocks(n) {
        let action = plan.action(r, c, &mut counters);
        if action == TileAction::Skip {
            continue;
        }
        let cols = spec.col_range(c, n);
        let width = cols.len();
        let tile_mask = if action == TileAction::Masked { plan.mask } else { None };
        tile_scores(inputs.q(), inputs.k(), inputs.scale(), rows.clone(), cols.clone(), tile_mask, &mut scores);

        for ri in 0..height {
            let s = &mut scores[ri * width..(ri + 1) * width];
            let tile_max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if tile_max == f64::NEG_INFINITY {
                continue;
            }
            let m_old = m[ri];
            let m_new = m_old.max(tile_max);
            let a = &mut acc[ri * d..(ri + 1) * d];
            if m_new != m_old {
                // exp(-inf) = 0 resets the empty state
                let alpha = (m_old - m_new).exp();
                l[ri] *= alpha;
                a.iter_mut().for_each(|x| *x *= alpha);
                m[ri] = m_new;
            }
            let mut sum = 0.0;
            for (p, j) in s.iter_mut().zip(cols.clone()) {
                if *p == f64::NEG_INFINITY {
                    continue;
                }
                let e = (*p - m_new).exp();
                sum += e;
                axpy(a, e, v64.row(j));
            }
            l[ri] += sum;
        }
    }

    for ri in 0..height {
        let o = &mut out_rows[ri * d..(ri + 1) * d];
        if l[ri] > 0.0 {
            let inv = 1.0 / l[ri];
            for (x, &a) in o.iter_mut().zip(&acc[ri * d..(ri + 1) * d]) {
                *x = T::from_f64(a * inv);
            }
        }
    }
    counters
}

/// Blocked backward pass that recomputes probabilities tile by tile from the
/// saved row statistics.
/// dQ row blocks, dK and dV partial sums and counters of one backward chunk.
type ChunkPartial = (Vec<(usize, Vec<f64>)>, Vec<f64>, Vec<f64>, EngineCounters);

pub fn blocked_backward<T: Element>(
    inputs: &AttentionInputs<T>,
    mask: Option<&Mask>,
    spec: BlockSpec,
    variant: Variant,
    prep: &Prep,
    saved: &SavedForwardState<T>,
    d_out: &Matrix<T>,
) -> Result<(AttentionGrads<T>, EngineCounters)> {
    let (n, d) = (inputs.n_tokens(), inputs.head_dim());
    let plan = Plan::new(n, mask, spec, variant, prep)?;
    check_saved(n, d, saved, d_out)?;

    let q64 = inputs.q().to_f64();
    let k64 = inputs.k().to_f64();
    let v64 = inputs.v().to_f64();
    let do64 = d_out.to_f64();
    let delta: Vec<f64> = (0..n)
        .map(|i| {
            do64.row(i)
                .iter()
                .zip(saved.out.row(i))
                .map(|(&g, &o)| g * o.to_f64())
                .sum()
        })
        .collect();
    let ctx = BackwardCtx {
        inputs,
        plan: &plan,
        q64: &q64,
        k64: &k64,
        v64: &v64,
        do64: &do64,
        delta: &delta,
        saved,
    };

    let row_blocks = spec.row_blocks(n);
    let chunks = row_blocks.clamp(1, BACKWARD_CHUNKS);
    let partials: Vec<ChunkPartial> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dq_blocks = Vec::new();
            let mut counters = EngineCounters::default();
            for r in (chunk..row_blocks).step_by(chunks) {
                let dq = ctx.row_block(r, &mut dk, &mut dv, &mut counters);
                dq_blocks.push((r, dq));
            }
            (dq_blocks, dk, dv, counters)
        })
        .collect();

    let mut grads = AttentionGrads::<T>::zeros(n, d);
    let mut dk_total = vec![0.0; n * d];
    let mut dv_total = vec![0.0; n * d];
    let mut counters = EngineCounters::default();
    for (dq_blocks, dk, dv, c) in partials {
        for (r, dq) in dq_blocks {
            let start = spec.row_range(r, n).start * d;
            for (dst, &x) in grads.dq.as_mut_slice()[start..start + dq.len()].iter_mut().zip(&dq) {
                *dst = T::from_f64(x);
            }
        }
        dk_total.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
        dv_total.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        counters += c;
    }
    for (dst, &x) in grads.dk.as_mut_slice().iter_mut().zip(&dk_total) {
        *dst = T::from_f64(x);
    }
    for (dst, &x) in grads.dv.as_mut_slice().iter_mut().zip(&dv_total) {
        *dst = T::from_f64(x);
    }
    Ok((grads, counters))
}

struct BackwardCtx<'a, T> {
    inputs: &'a AttentionInputs<T>,
    plan: &'a Plan<'a>,
    q64: &'a Matrix<f64>,
    k64: &'a Matrix<f64>,
    v64: &'a Matrix<f64>,
    do64: &'a Matrix<f64>,
    delta: &'a [f64],
    saved: &'a SavedForwardState<T>,
}

impl<T: Element> BackwardCtx<'_, T> {
    /// Accumulates dK/dV of row-block `r` into the given buffers and returns its dQ rows.
    fn row_block(&self, r: usize, dk: &mut [f64], dv: &mut [f64], counters: &mut EngineCounters) -> Vec<f64> {
        let (plan, d) = (self.plan, self.inputs.head_dim());
        let (n, spec, scale) = (plan.n, plan.spec, self.inputs.scale());
        let rows = spec.row_range(r, n);
        let height = rows.len();
        let mut dq = vec![0.0f64; height * d];
        let mut scores = vec![0.0f64; height * spec.block_j];

        for c in 0..spec.col_blocks(n) {
            let action = plan.action(r, c, counters);
            if action == TileAction::Skip {
                continue;
            }
            let cols = spec.col_range(c, n);
            let width = cols.len();
            let tile_mask = if action == TileAction::Masked { plan.mask } else { None };
            tile_scores(
                self.inputs.q(),
                self.inputs.k(),
                scale,
                rows.clone(),
                cols.clone(),
                tile_mask,
                &mut scores,
            );

            for (ri, i) in rows.clone().enumerate() {
                let (m, l) = (self.saved.row_max[i], self.saved.row_sum[i]);
                if l <= 0.0 {
                    continue;
                }
                let inv_l = 1.0 / l;
                let do_i = self.do64.row(i);
                let q_i = self.q64.row(i);
                let dq_i = &mut dq[ri * d..(ri + 1) * d];
                for (&s, j) in scores[ri * width..(ri + 1) * width].iter().zip(cols.clone()) {
                    if s == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = (s - m).exp() * inv_l;
                    let dp = dot(do_i, self.v64.row(j));
                    let ds = scale * p * (dp - self.delta[i]);
                    axpy(&mut dv[j * d..(j + 1) * d], p, do_i);
                    axpy(&mut dk[j * d..(j + 1) * d], ds, q_i);
                    axpy(dq_i, ds, self.k64.row(j));
                }
            }
        }
        dq
    }
}

/// One shared mask applied to `batch * heads` head slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBatch<T> {
    batch: usize,
    heads: usize,
    slots: Vec<AttentionInputs<T>>,
}

impl<T: Element> AttentionBatch<T> {
    /// `slots` are ordered batch-major: slot `b * heads + h`.
    pub fn new(batch: usize, heads: usize, slots: Vec<AttentionInputs<T>>) -> Result<Self> {
        if batch == 0 || heads == 0 {
            return Err(Error::InvalidArgument("batch and heads must be positive".into()));
        }
        if slots.len() != batch * heads {
            return Err(Error::Shape(format!(
                "{} slots supplied for batch {batch} x heads {heads}",
                slots.len()
            )));
        }
        let shape = slots[0].q().shape();
        if let Some(bad) = slots.iter().position(|s| s.q().shape() != shape) {
            return Err(Error::Shape(format!(
                "slot {bad} is {:?}, slot 0 is {shape:?}",
                slots[bad].q().shape()
            )));
        }
        Ok(Self { batch, heads, slots })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn slots(&self) -> &[AttentionInputs<T>] {
        &self.slots
    }

    pub fn slot(&self, b: usize, h: usize) -> &AttentionInputs<T> {
        &self.slots[b * self.heads + h]
    }

    pub fn n_tokens(&self) -> usize {
        self.slots[0].n_tokens()
    }

    pub fn head_dim(&self) -> usize {
        self.slots[0].head_dim()
    }
}

/// Forward pass over every slot with one shared preprocessing result.
/// Counters are summed over slots.
pub fn run_attention_forward<T: Element>(
    batch: &AttentionBatch<T>,
    mask: Option<&Mask>,
    spec: BlockSpec,
    variant: Variant,
    prep: &Prep,
) -> Result<(Vec<AttentionOutput<T>>, EngineCounters)> {
    let results: Vec<_> = batch
        .slots
        .par_iter()
        .map(|s| blocked_forward(s, mask, spec, variant, prep))
        .collect::<Result<_>>()?;
    let counters = results.iter().map(|(_, c)| *c).sum();
    Ok((results.into_iter().map(|(o, _)| o).collect(), counters))
}

pub fn run_attention_backward<T: Element>(
    batch: &AttentionBatch<T>,
    mask: Option<&Mask>,
    spec: BlockSpec,
    variant: Variant,
    prep: &Prep,
    saved: &[SavedForwardState<T>],
    d_out: &[Matrix<T>],
) -> Result<(Vec<AttentionGrads<T>>, EngineCounters)> {
    if saved.len() != batch.slots.len() || d_out.len() != batch.slots.len() {
        return Err(Error::Shape(format!(
            "{} slots but {} saved states and {} upstream gradients",
            batch.slots.len(),
            saved.len(),
            d_out.len()
        )));
    }
    let results: Vec<_> = batch
        .slots
        .par_iter()
        .zip(saved)
        .zip(d_out)
        .map(|((s, sv), g)| blocked_backward(s, mask, spec, variant, prep, sv, g))
        .collect::<Result<_>>()?;
    let counters = results.iter().map(|(_, c)| *c).sum();
    Ok((results.into_iter().map(|(g, _)| g).collect(), counters))
}
