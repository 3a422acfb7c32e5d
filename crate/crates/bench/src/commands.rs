//! The five subcommands as library functions; the binary only parses flags
//! and prints what these return.

use std::path::Path;
use std::time::Instant;

use blockmask::mask::{block_stats, block_sums, mask_read, mask_write};
use blockmask::reference::{naive_backward, naive_forward};
use blockmask::reorder::{bandwidth, build_graph, permute_inputs, permute_mask, rcm_order, un_permute_output};
use blockmask::{
    run_attention_backward, run_attention_forward, AttentionBatch, AttentionGrads, AttentionOutput, BlockSpec,
    BlockStats, Element, EngineCounters, Mask, MaskSpec, Permutation, Prep, Variant,
};
use serde::Serialize;

use crate::config::{BenchConfig, Precision};
use crate::inputs::{make_batch, make_upstream};
use crate::record::BenchRecord;
use crate::{BenchError, Result};

/// Largest N the double-precision oracle is run on.
pub const ORACLE_MAX_N: usize = 2048;

pub const EXPECTED_MISMATCH_NOTE: &str = "mask-agnostic baseline, expected mismatch";

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenMaskReport {
    pub mask: String,
    pub n: usize,
    pub ones: u64,
    pub element_density: f64,
    pub block_spec: Option<BlockSpec>,
    pub stats: Option<BlockStats>,
}

pub fn cmd_gen_mask(spec: &MaskSpec, out_path: &Path, block: Option<BlockSpec>) -> Result<GenMaskReport> {
    let mask = spec.generate()?;
    mask_write(&mask, out_path)?;
    Ok(GenMaskReport {
        mask: spec.label(),
        n: mask.n(),
        ones: mask.count_ones(),
        element_density: mask.element_density(),
        block_spec: block,
        stats: block.map(|b| block_stats(&block_sums(&mask, b))),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub n: usize,
    pub ones: u64,
    pub bandwidth: usize,
    pub block_spec: BlockSpec,
    pub stats: BlockStats,
}

pub fn cmd_stats(mask_path: &Path, block: BlockSpec) -> Result<StatsReport> {
    let mask = mask_read(mask_path)?;
    block.validate()?;
    Ok(StatsReport {
        n: mask.n(),
        ones: mask.count_ones(),
        bandwidth: bandwidth(&mask),
        block_spec: block,
        stats: block_stats(&block_sums(&mask, block)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RcmReport {
    pub n: usize,
    pub block_spec: BlockSpec,
    pub bandwidth_before: usize,
    pub bandwidth_after: usize,
    pub blocks_nonzero_before: u64,
    pub blocks_nonzero_after: u64,
    /// `permutation[new] = old`.
    pub permutation: Vec<usize>,
}

pub fn cmd_rcm(mask_path: &Path, block: BlockSpec, perm_out: Option<&Path>, mask_out: Option<&Path>) -> Result<RcmReport> {
    block.validate()?;
    let mask = mask_read(mask_path)?;
    let perm = rcm_order(&build_graph(&mask));
    let reordered = permute_mask(&mask, &perm)?;
    let nonzero = |m: &Mask| block_stats(&block_sums(m, block)).blocks_nonzero;
    if let Some(path) = perm_out {
        std::fs::write(path, serde_json::to_string(perm.forward())?)?;
    }
    if let Some(path) = mask_out {
        mask_write(&reordered, path)?;
    }
    Ok(RcmReport {
        n: mask.n(),
        block_spec: block,
        bandwidth_before: bandwidth(&mask),
        bandwidth_after: bandwidth(&reordered),
        blocks_nonzero_before: nonzero(&mask),
        blocks_nonzero_after: nonzero(&reordered),
        permutation: perm.forward().to_vec(),
    })
}

/// Max-abs forward and gradient errors of one engine slot against the oracle.
/// `perm` maps engine rows back to the oracle's token order.
fn oracle_errors<T: Element>(
    inputs: &blockmask::AttentionInputs<T>,
    mask: &Mask,
    out: &AttentionOutput<T>,
    grads: &AttentionGrads<T>,
    d_out: &blockmask::Matrix<T>,
    perm: Option<&Permutation>,
) -> Result<(f64, f64)> {
    let restore = |m: &blockmask::Matrix<T>| -> Result<blockmask::Matrix<f64>> {
        Ok(match perm {
            Some(p) => un_permute_output(m, p)?.to_f64(),
            None => m.to_f64(),
        })
    };
    let inputs64 = inputs.cast::<f64>();
    let d_out64 = restore(d_out)?;
    let (oracle_inputs, oracle_d_out) = match perm {
        Some(p) => {
            let inv = Permutation::from_forward(p.inverse().to_vec())?;
            (permute_inputs(&inputs64, &inv)?, d_out64)
        }
        None => (inputs64, d_out64),
    };
    let want = naive_forward(&oracle_inputs, mask)?;
    let want_grads = naive_backward(&oracle_inputs, mask, &oracle_d_out)?;
    let fwd_err = restore(&out.out)?.max_abs_diff(&want.out);
    let got_grads = AttentionGrads {
        dq: restore(&grads.dq)?,
        dk: restore(&grads.dk)?,
        dv: restore(&grads.dv)?,
    };
    Ok((fwd_err, got_grads.max_abs_diff(&want_grads)))
}

/// One variant on one (possibly reordered) problem.
struct Case<'a, T> {
    variant: Variant,
    label: String,
    /// Mask the engine sees.
    mask: &'a Mask,
    /// Mask the oracle sees, in original token order.
    oracle_mask: &'a Mask,
    batch: &'a AttentionBatch<T>,
    d_out: &'a [blockmask::Matrix<T>],
    perm: Option<&'a Permutation>,
    /// Time spent on reordering before block summation.
    reorder_ms: f64,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Forward ms, backward ms, forward counters, outputs and gradients of one iteration.
type Iteration<T> = (f64, f64, EngineCounters, Vec<AttentionOutput<T>>, Vec<AttentionGrads<T>>);

fn run_case<T: Element>(config: &BenchConfig, case: &Case<'_, T>) -> Result<BenchRecord> {
    let spec = config.block_spec;
    let start = Instant::now();
    let prep = Prep::build(case.mask, spec, case.variant);
    let prepro_ms = case.reorder_ms + if case.variant.needs_binblk() { ms(start) } else { 0.0 };
    let mask = Some(case.mask);

    let step = || -> Result<Iteration<T>> {
        let t = Instant::now();
        let (outs, counters) = run_attention_forward(case.batch, mask, spec, case.variant, &prep)?;
        let fwd = ms(t);
        let t = Instant::now();
        let (grads, _) = run_attention_backward(case.batch, mask, spec, case.variant, &prep, &outs, case.d_out)?;
        Ok((fwd, ms(t), counters, outs, grads))
    };
    for _ in 0..config.warmup {
        step()?;
    }
    let mut fwd = Vec::with_capacity(config.runs);
    let mut bwd = Vec::with_capacity(config.runs);
    let mut last = None;
    for _ in 0..config.runs {
        let (f, b, counters, outs, grads) = step()?;
        fwd.push(f);
        bwd.push(b);
        last = Some((counters, outs, grads));
    }
    let (counters, outs, grads) = last.expect("runs >= 1");
    let (fwd_ms_mean, fwd_ms_std) = mean_std(&fwd);
    let (bwd_ms_mean, bwd_ms_std) = mean_std(&bwd);
    let totals: Vec<f64> = fwd.iter().zip(&bwd).map(|(f, b)| f + b).collect();

    let max_abs_err_vs_oracle = if config.check && case.mask.n() <= ORACLE_MAX_N {
        let (f, g) = oracle_errors(&case.batch.slots()[0], case.oracle_mask, &outs[0], &grads[0], &case.d_out[0], case.perm)?;
        Some(f.max(g))
    } else {
        None
    };
    let stats = block_stats(&block_sums(case.mask, spec));
    Ok(BenchRecord {
        variant: case.variant,
        mask: case.label.clone(),
        n: case.mask.n(),
        block_i: spec.block_i,
        block_j: spec.block_j,
        batch: config.batch,
        heads: config.heads,
        runs: config.runs,
        precision: config.precision,
        prepro_ms,
        fwd_ms_mean,
        fwd_ms_std,
        bwd_ms_mean,
        bwd_ms_std,
        total_ms_mean: mean_std(&totals).0,
        counters,
        block_density: stats.block_density,
        element_density: stats.element_density,
        max_abs_err_vs_oracle,
        bandwidth_before: None,
        bandwidth_after: None,
    })
}

fn check_size(config: &BenchConfig, n: usize) -> Result<()> {
    if n > config.max_n {
        return Err(BenchError::SizeGuard {
            what: "configured",
            n,
            limit: config.max_n,
        });
    }
    Ok(())
}

/// Reordering applied to one mask, with the time it took.
struct Reordered {
    perm: Permutation,
    mask: Mask,
    ms: f64,
    bandwidth_before: usize,
    bandwidth_after: usize,
}

fn reorder(mask: &Mask) -> Result<Reordered> {
    let start = Instant::now();
    let perm = rcm_order(&build_graph(mask));
    let reordered = permute_mask(mask, &perm)?;
    let elapsed = ms(start);
    Ok(Reordered {
        bandwidth_before: bandwidth(mask),
        bandwidth_after: bandwidth(&reordered),
        perm,
        mask: reordered,
        ms: elapsed,
    })
}

/// Variants that get a reordered row: the block-skipping ones requested, or BinBlk.
fn rcm_variants(config: &BenchConfig) -> Vec<Variant> {
    let skipping: Vec<Variant> = config.variants.iter().copied().filter(|v| v.needs_binblk()).collect();
    if skipping.is_empty() {
        vec![Variant::BinBlk]
    } else {
        skipping
    }
}

fn bench_typed<T: Element>(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for spec in config.mask_specs()? {
        let n = spec.n();
        check_size(config, n)?;
        let mask = spec.generate()?;
        let batch = make_batch::<T>(n, config.head_dim, config.batch, config.heads, config.seed)?;
        let d_out = make_upstream::<T>(n, config.head_dim, config.batch * config.heads, config.seed);
        let label = spec.label();
        for &variant in &config.variants {
            let case = Case {
                variant,
                label: label.clone(),
                mask: &mask,
                oracle_mask: &mask,
                batch: &batch,
                d_out: &d_out,
                perm: None,
                reorder_ms: 0.0,
            };
            records.push(run_case(config, &case)?);
        }
        if config.rcm {
            let r = reorder(&mask)?;
            let slots = batch
                .slots()
                .iter()
                .map(|s| permute_inputs(s, &r.perm))
                .collect::<blockmask::Result<Vec<_>>>()?;
            let batch_p = AttentionBatch::new(config.batch, config.heads, slots)?;
            let d_out_p: Vec<_> = d_out.iter().map(|g| g.gather_rows(r.perm.forward())).collect();
            for record in records.iter_mut().filter(|rec| rec.n == n && rec.variant == Variant::BinBlk) {
                record.bandwidth_before = Some(r.bandwidth_before);
                record.bandwidth_after = Some(r.bandwidth_after);
            }
            for variant in rcm_variants(config) {
                let case = Case {
                    variant,
                    label: format!("{label}+rcm"),
                    mask: &r.mask,
                    oracle_mask: &mask,
                    batch: &batch_p,
                    d_out: &d_out_p,
                    perm: Some(&r.perm),
                    reorder_ms: r.ms,
                };
                let mut record = run_case(config, &case)?;
                record.bandwidth_before = Some(r.bandwidth_before);
                record.bandwidth_after = Some(r.bandwidth_after);
                records.push(record);
            }
        }
    }
    Ok(records)
}

/// Preprocess once, warm up, then time `runs` forward+backward iterations for
/// every (mask size, variant) pair. Configurations run one after another.
pub fn cmd_bench(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    config.validate()?;
    match config.precision {
        Precision::Single => bench_typed::<f32>(config),
        Precision::Double => bench_typed::<f64>(config),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub mask: String,
    pub n: usize,
    pub variant: Variant,
    pub fwd_err: f64,
    pub grad_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Set for the mask-agnostic baseline, whose result is not judged.
    pub note: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub precision: Precision,
    pub rows: Vec<VerifyRow>,
    pub passed: bool,
}

fn verify_typed<T: Element>(config: &BenchConfig, tolerance: f64) -> Result<Vec<VerifyRow>> {
    let spec = config.block_spec;
    let d = config.head_dim;
    let mut rows = Vec::new();
    for mask_spec in config.mask_specs()? {
        let n = mask_spec.n();
        if n > ORACLE_MAX_N {
            return Err(BenchError::SizeGuard {
                what: "oracle",
                n,
                limit: ORACLE_MAX_N,
            });
        }
        let mask = mask_spec.generate()?;
        let batch = make_batch::<T>(n, d, 1, 1, config.seed)?;
        let d_out = make_upstream::<T>(n, d, 1, config.seed);
        let reordered = if config.rcm { Some(reorder(&mask)?) } else { None };
        let mut problems = vec![(mask_spec.label(), &mask, batch, d_out, None, config.variants.clone())];
        if let Some(r) = &reordered {
            let slot = permute_inputs(&problems[0].2.slots()[0], &r.perm)?;
            let g = problems[0].3[0].gather_rows(r.perm.forward());
            problems.push((
                format!("{}+rcm", mask_spec.label()),
                &r.mask,
                AttentionBatch::new(1, 1, vec![slot])?,
                vec![g],
                Some(&r.perm),
                rcm_variants(config),
            ));
        }
        for (label, engine_mask, batch, d_out, perm, variants) in &problems {
            for &variant in variants {
                let prep = Prep::build(engine_mask, spec, variant);
                let (outs, _) = run_attention_forward(batch, Some(engine_mask), spec, variant, &prep)?;
                let (grads, _) = run_attention_backward(batch, Some(engine_mask), spec, variant, &prep, &outs, d_out)?;
                let (fwd_err, grad_err) = oracle_errors(&batch.slots()[0], &mask, &outs[0], &grads[0], &d_out[0], *perm)?;
                rows.push(VerifyRow {
                    mask: label.clone(),
                    n,
                    variant,
                    fwd_err,
                    grad_err,
                    tolerance,
                    passed: fwd_err <= tolerance && grad_err <= tolerance,
                    note: (!variant.needs_mask()).then_some(EXPECTED_MISMATCH_NOTE),
                });
            }
        }
    }
    Ok(rows)
}

/// Compares every requested variant (slot 0 only) against the oracle.
/// `tolerance` defaults to the precision's bound.
pub fn cmd_verify(config: &BenchConfig, tolerance: Option<f64>) -> Result<VerifyReport> {
    config.validate()?;
    let tolerance = tolerance.unwrap_or(config.precision.tolerance());
    let rows = match config.precision {
        Precision::Single => verify_typed::<f32>(config, tolerance)?,
        Precision::Double => verify_typed::<f64>(config, tolerance)?,
    };
    let passed = rows.iter().all(|r| r.passed || r.note.is_some());
    Ok(VerifyReport {
        precision: config.precision,
        rows,
        passed,
    })
}
