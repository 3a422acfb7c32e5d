use std::fmt;
use std::path::Path;
use std::str::FromStr;

use blockmask::{BlockSpec, MaskSpec, Variant};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl Precision {
    /// Max-abs tolerance against the double-precision oracle.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-12,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

impl FromStr for Precision {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(BenchError::Config(format!("unknown precision {s:?}"))),
        }
    }
}

/// One benchmark sweep. Loaded from JSON; CLI flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub mask_spec: MaskSpec,
    /// Sequence lengths to sweep; empty means the mask spec's own size.
    pub seq_lengths: Vec<usize>,
    pub block_spec: BlockSpec,
    pub variants: Vec<Variant>,
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub runs: usize,
    pub warmup: usize,
    pub precision: Precision,
    pub rcm: bool,
    pub seed: u64,
    /// Compare slot 0 against the oracle and fill `max_abs_err_vs_oracle`.
    pub check: bool,
    /// Largest sequence length the harness will allocate for.
    pub max_n: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mask_spec: MaskSpec::Causal { n: 1024 },
            seq_lengths: Vec::new(),
            block_spec: BlockSpec::default(),
            variants: Variant::ALL.to_vec(),
            batch: 4,
            heads: 32,
            head_dim: 64,
            runs: 100,
            warmup: 5,
            precision: Precision::Single,
            rcm: false,
            seed: 0,
            check: false,
            max_n: 16384,
        }
    }
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(BenchError::Config(msg.to_string()));
        if self.runs == 0 {
            return fail("runs must be at least 1");
        }
        if self.batch == 0 || self.heads == 0 || self.head_dim == 0 {
            return fail("batch, heads and head_dim must be positive");
        }
        if self.variants.is_empty() {
            return fail("no variants selected");
        }
        self.block_spec.validate()?;
        self.mask_spec.validate()?;
        Ok(())
    }

    /// The mask spec at every requested sequence length.
    pub fn mask_specs(&self) -> Result<Vec<MaskSpec>> {
        if self.seq_lengths.is_empty() {
            return Ok(vec![self.mask_spec.clone()]);
        }
        self.seq_lengths
            .iter()
            .map(|&n| {
                self.mask_spec.resized(n, self.seed).ok_or_else(|| {
                    BenchError::Config(format!("mask {} cannot be resized to n = {n}", self.mask_spec))
                })
            })
            .collect()
    }
}
