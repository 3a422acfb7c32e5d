//! Command-line surface: flag definitions, config merging and printing.

use std::io::Write;
use std::path::PathBuf;

use blockmask::{BlockSpec, MaskSpec, Variant};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{cmd_bench, cmd_gen_mask, cmd_rcm, cmd_stats, cmd_verify, with_threads};
use crate::config::{BenchConfig, Precision};
use crate::record::{write_csv, write_json_lines};
use crate::{BenchError, Result};

#[derive(Debug, Parser)]
#[command(name = "blockmask", version, about = "Mask-aware blocked attention harness")]
pub struct Cli {
    /// Worker threads for the engine (default: all cores).
    #[arg(long, global = true, env = "BLOCKMASK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mask and write it as a BBMK file.
    GenMask {
        family: Family,
        #[command(flatten)]
        mask: MaskArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Also print block statistics for this block size, e.g. 64x64.
        #[arg(long)]
        stats: Option<BlockSpec>,
        #[arg(long)]
        json: bool,
    },
    /// Block statistics of a BBMK file.
    Stats {
        path: PathBuf,
        #[arg(long, default_value_t = BlockSpec::default())]
        block: BlockSpec,
        #[arg(long)]
        json: bool,
    },
    /// Compare variants against the reference oracle; exits nonzero on failure.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Max-abs tolerance (default 1e-12 double, 1e-3 single).
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Time forward and backward passes; CSV by default.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Emit JSON lines instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Reverse Cuthill-McKee reordering of a BBMK file.
    Rcm {
        path: PathBuf,
        #[arg(long, default_value_t = BlockSpec::default())]
        block: BlockSpec,
        /// Where to write the permutation as a JSON array (`perm[new] = old`).
        #[arg(long)]
        perm_out: Option<PathBuf>,
        /// Where to write the reordered mask.
        #[arg(long)]
        mask_out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Causal,
    AllOnes,
    Medusa,
    PackedSequential,
    PackedBidirectional,
    Windowed,
    Dilated,
    Global,
    Random,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Restrict a windowed mask to its causal half.
    #[arg(long)]
    pub causal_window: bool,
    #[arg(long)]
    pub dilation: Option<usize>,
    #[arg(long)]
    pub global: Option<usize>,
    /// Children per tree level, e.g. 4,4,4,4.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<usize>,
    /// Packed sequence lengths, e.g. 100,200,50.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<usize>,
    /// Packed input:output segments, e.g. 30:70,10:20.
    #[arg(long, value_delimiter = ',', value_parser = parse_segment)]
    pub segments: Vec<(usize, usize)>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub no_diagonal: bool,
}

fn parse_segment(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected INPUT:OUTPUT, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl MaskArgs {
    pub fn to_spec(&self, family: Family) -> Result<MaskSpec> {
        let need = |v: Option<usize>, flag: &str| {
            v.ok_or_else(|| BenchError::Config(format!("--{flag} is required for this mask family")))
        };
        let nonempty = |v: &Vec<usize>, flag: &str| {
            if v.is_empty() {
                Err(BenchError::Config(format!("--{flag} is required for this mask family")))
            } else {
                Ok(v.clone())
            }
        };
        let spec = match family {
            Family::Causal => MaskSpec::Causal { n: need(self.n, "n")? },
            Family::AllOnes => MaskSpec::AllOnes { n: need(self.n, "n")? },
            Family::Medusa => MaskSpec::Medusa {
                candidates: nonempty(&self.candidates, "candidates")?,
            },
            Family::PackedSequential => MaskSpec::PackedSequential {
                lengths: nonempty(&self.lengths, "lengths")?,
            },
            Family::PackedBidirectional => {
                if self.segments.is_empty() {
                    return Err(BenchError::Config("--segments is required for this mask family".into()));
                }
                MaskSpec::PackedInputBidirectional {
                    segments: self.segments.clone(),
                }
            }
            Family::Windowed => MaskSpec::LongformerWindowed {
                n: need(self.n, "n")?,
                window: need(self.window, "window")?,
                causal: self.causal_window,
            },
            Family::Dilated => MaskSpec::LongformerDilated {
                n: need(self.n, "n")?,
                window: need(self.window, "window")?,
                dilation: need(self.dilation, "dilation")?,
            },
            Family::Global => MaskSpec::LongformerGlobal {
                n: need(self.n, "n")?,
                window: need(self.window, "window")?,
                global_count: need(self.global, "global")?,
            },
            Family::Random => MaskSpec::RandomSparse {
                n: need(self.n, "n")?,
                density: self
                    .density
                    .ok_or_else(|| BenchError::Config("--density is required for this mask family".into()))?,
                seed: self.mask_seed.unwrap_or(0),
                force_diagonal: !self.no_diagonal,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Config file plus overrides shared by `verify` and `bench`. Flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mask family; replaces the config's mask spec.
    #[arg(long)]
    pub mask: Option<Family>,
    #[command(flatten)]
    pub mask_args: MaskArgs,
    #[arg(long, value_delimiter = ',')]
    pub seq_lengths: Vec<usize>,
    #[arg(long)]
    pub block: Option<BlockSpec>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub rcm: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fill max_abs_err_vs_oracle (N <= 2048).
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub max_n: Option<usize>,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<BenchConfig> {
        let mut c = match &self.config {
            Some(path) => BenchConfig::load(path)?,
            None => BenchConfig::default(),
        };
        if let Some(family) = self.mask {
            c.mask_spec = self.mask_args.to_spec(family)?;
        }
        if !self.seq_lengths.is_empty() {
            c.seq_lengths = self.seq_lengths.clone();
        }
        if !self.variants.is_empty() {
            c.variants = self.variants.clone();
        }
        c.block_spec = self.block.unwrap_or(c.block_spec);
        c.batch = self.batch.unwrap_or(c.batch);
        c.heads = self.heads.unwrap_or(c.heads);
        c.head_dim = self.head_dim.unwrap_or(c.head_dim);
        c.runs = self.runs.unwrap_or(c.runs);
        c.warmup = self.warmup.unwrap_or(c.warmup);
        c.precision = self.precision.unwrap_or(c.precision);
        c.seed = self.seed.unwrap_or(c.seed);
        c.max_n = self.max_n.unwrap_or(c.max_n);
        c.rcm |= self.rcm;
        c.check |= self.check;
        c.validate()?;
        Ok(c)
    }
}

fn print_json<W: Write>(out: &mut W, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_stats<W: Write>(out: &mut W, block: BlockSpec, s: &blockmask::BlockStats) -> Result<()> {
    writeln!(out, "block_spec: {block}")?;
    writeln!(out, "blocks_total: {}", s.blocks_total)?;
    writeln!(out, "blocks_nonzero: {}", s.blocks_nonzero)?;
    writeln!(out, "blocks_full: {}", s.blocks_full)?;
    writeln!(out, "block_density: {:.6}", s.block_density)?;
    Ok(())
}

/// Runs one parsed command, writing human output to `out`. Returns the exit code.
pub fn run<W: Write + Send>(cli: Cli, out: &mut W) -> Result<i32> {
    let threads = cli.threads;
    with_threads(threads, move || execute(cli.command, out))?
}

fn execute<W: Write>(command: Command, out: &mut W) -> Result<i32> {
    match command {
        Command::GenMask {
            family,
            mask,
            out: path,
            stats,
            json,
        } => {
            let report = cmd_gen_mask(&mask.to_spec(family)?, &path, stats)?;
            if json {
                print_json(out, &report)?;
            } else {
                writeln!(out, "wrote {} ({}x{})", path.display(), report.n, report.n)?;
                writeln!(out, "mask: {}", report.mask)?;
                writeln!(out, "element_density: {:.6}", report.element_density)?;
                if let (Some(block), Some(s)) = (report.block_spec, &report.stats) {
                    print_stats(out, block, s)?;
                }
            }
        }
        Command::Stats { path, block, json } => {
            let report = cmd_stats(&path, block)?;
            if json {
                print_json(out, &report)?;
            } else {
                writeln!(out, "n: {}", report.n)?;
                writeln!(out, "bandwidth: {}", report.bandwidth)?;
                writeln!(out, "element_density: {:.6}", report.stats.element_density)?;
                print_stats(out, block, &report.stats)?;
            }
        }
        Command::Verify { run, tolerance, json } => {
            let report = cmd_verify(&run.to_config()?, tolerance)?;
            if json {
                print_json(out, &report)?;
            } else {
                for r in &report.rows {
                    let verdict = match (r.note, r.passed) {
                        (Some(note), _) => format!("SKIP ({note})"),
                        (None, true) => "PASS".to_string(),
                        (None, false) => "FAIL".to_string(),
                    };
                    writeln!(
                        out,
                        "{:<14} {:<28} n={:<5} fwd_err={:.3e} grad_err={:.3e} tol={:.0e} {verdict}",
                        r.variant.name(),
                        r.mask,
                        r.n,
                        r.fwd_err,
                        r.grad_err,
                        r.tolerance
                    )?;
                }
                writeln!(out, "verify: {}", if report.passed { "PASS" } else { "FAIL" })?;
            }
            return Ok(if report.passed { 0 } else { 1 });
        }
        Command::Bench { run, out: path, json } => {
            let records = cmd_bench(&run.to_config()?)?;
            match path {
                Some(p) => {
                    let file = std::io::BufWriter::new(std::fs::File::create(p)?);
                    if json {
                        write_json_lines(file, &records)?;
                    } else {
                        write_csv(file, &records)?;
                    }
                }
                None if json => write_json_lines(&mut *out, &records)?,
                None => write_csv(&mut *out, &records)?,
            }
        }
        Command::Rcm {
            path,
            block,
            perm_out,
            mask_out,
            json,
        } => {
            let report = cmd_rcm(&path, block, perm_out.as_deref(), mask_out.as_deref())?;
            if json {
                print_json(out, &report)?;
            } else {
                writeln!(out, "n: {}", report.n)?;
                writeln!(out, "block_spec: {}", report.block_spec)?;
                writeln!(out, "bandwidth: {} -> {}", report.bandwidth_before, report.bandwidth_after)?;
                writeln!(
                    out,
                    "blocks_nonzero: {} -> {}",
                    report.blocks_nonzero_before, report.blocks_nonzero_after
                )?;
            }
        }
    }
    Ok(0)
}
