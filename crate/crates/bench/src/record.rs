//! Benchmark rows and their CSV / JSON-lines encodings.

use std::io::{Read, Write};

use blockmask::{EngineCounters, Variant};
use serde::{Deserialize, Serialize};

use crate::config::Precision;
use crate::{BenchError, Result};

pub const CSV_HEADER: [&str; 23] = [
    "variant",
    "mask",
    "n",
    "block_i",
    "block_j",
    "batch",
    "heads",
    "runs",
    "precision",
    "prepro_ms",
    "fwd_ms_mean",
    "fwd_ms_std",
    "bwd_ms_mean",
    "bwd_ms_std",
    "total_ms_mean",
    "blocks_visited",
    "blocks_processed",
    "mask_block_reads",
    "skipped_by_binblk",
    "skipped_mask_reads_by_run",
    "block_density",
    "element_density",
    "max_abs_err_vs_oracle",
];

/// Columns that carry wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 6] = [
    "prepro_ms",
    "fwd_ms_mean",
    "fwd_ms_std",
    "bwd_ms_mean",
    "bwd_ms_std",
    "total_ms_mean",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: Variant,
    /// Mask label; rows run on the reordered mask carry a `+rcm` suffix.
    pub mask: String,
    pub n: usize,
    pub block_i: usize,
    pub block_j: usize,
    pub batch: usize,
    pub heads: usize,
    pub runs: usize,
    pub precision: Precision,
    pub prepro_ms: f64,
    pub fwd_ms_mean: f64,
    pub fwd_ms_std: f64,
    pub bwd_ms_mean: f64,
    pub bwd_ms_std: f64,
    pub total_ms_mean: f64,
    /// Forward-pass counters summed over all batch-head slots.
    pub counters: EngineCounters,
    pub block_density: f64,
    pub element_density: f64,
    pub max_abs_err_vs_oracle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_before: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_after: Option<usize>,
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize) -> Result<T> {
    let raw = row.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| BenchError::Config(format!("column {}: cannot parse {raw:?}", CSV_HEADER[idx])))
}

impl BenchRecord {
    pub fn csv_fields(&self) -> Vec<String> {
        let c = &self.counters;
        vec![
            self.variant.to_string(),
            self.mask.clone(),
            self.n.to_string(),
            self.block_i.to_string(),
            self.block_j.to_string(),
            self.batch.to_string(),
            self.heads.to_string(),
            self.runs.to_string(),
            self.precision.to_string(),
            self.prepro_ms.to_string(),
            self.fwd_ms_mean.to_string(),
            self.fwd_ms_std.to_string(),
            self.bwd_ms_mean.to_string(),
            self.bwd_ms_std.to_string(),
            self.total_ms_mean.to_string(),
            c.blocks_visited.to_string(),
            c.blocks_processed.to_string(),
            c.mask_block_reads.to_string(),
            c.skipped_by_binblk.to_string(),
            c.skipped_mask_reads_by_run.to_string(),
            self.block_density.to_string(),
            self.element_density.to_string(),
            self.max_abs_err_vs_oracle.map(|e| e.to_string()).unwrap_or_default(),
        ]
    }

    pub fn from_csv(row: &csv::StringRecord) -> Result<Self> {
        if row.len() != CSV_HEADER.len() {
            return Err(BenchError::Config(format!(
                "expected {} columns, found {}",
                CSV_HEADER.len(),
                row.len()
            )));
        }
        let err = row.get(22).unwrap_or("");
        Ok(Self {
            variant: field(row, 0)?,
            mask: row[1].to_string(),
            n: field(row, 2)?,
            block_i: field(row, 3)?,
            block_j: field(row, 4)?,
            batch: field(row, 5)?,
            heads: field(row, 6)?,
            runs: field(row, 7)?,
            precision: field(row, 8)?,
            prepro_ms: field(row, 9)?,
            fwd_ms_mean: field(row, 10)?,
            fwd_ms_std: field(row, 11)?,
            bwd_ms_mean: field(row, 12)?,
            bwd_ms_std: field(row, 13)?,
            total_ms_mean: field(row, 14)?,
            counters: EngineCounters {
                blocks_visited: field(row, 15)?,
                blocks_processed: field(row, 16)?,
                mask_block_reads: field(row, 17)?,
                skipped_by_binblk: field(row, 18)?,
                skipped_mask_reads_by_run: field(row, 19)?,
            },
            block_density: field(row, 20)?,
            element_density: field(row, 21)?,
            max_abs_err_vs_oracle: if err.is_empty() { None } else { Some(field(row, 22)?) },
            bandwidth_before: None,
            bandwidth_after: None,
        })
    }

    /// CSV fields with the timing columns blanked, for determinism comparisons.
    pub fn csv_fields_without_timing(&self) -> Vec<String> {
        let mut fields = self.csv_fields();
        for (i, name) in CSV_HEADER.iter().enumerate() {
            if TIMING_COLUMNS.contains(name) {
                fields[i].clear();
            }
        }
        fields
    }
}

pub fn write_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in records {
        writer.write_record(r.csv_fields())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?;
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::Config(format!("unexpected CSV header {header:?}")));
    }
    reader.records().map(|row| BenchRecord::from_csv(&row?)).collect()
}

pub fn write_json_lines<W: Write>(mut out: W, records: &[BenchRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}
