//! Mask families: tree masks for speculative decoding, packed sequences,
//! Longformer-style windows, causal, all-ones and random sparse.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

fn default_true() -> bool {
    true
}

/// Parameters of one mask family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MaskSpec {
    Causal {
        n: usize,
    },
    AllOnes {
        n: usize,
    },
    /// Candidate tree with `candidates[k]` children per node at depth `k`.
    Medusa {
        candidates: Vec<usize>,
    },
    PackedSequential {
        lengths: Vec<usize>,
    },
    /// `(input_len, output_len)` per packed sequence.
    PackedInputBidirectional {
        segments: Vec<(usize, usize)>,
    },
    LongformerWindowed {
        n: usize,
        window: usize,
        #[serde(default)]
        causal: bool,
    },
    LongformerDilated {
        n: usize,
        window: usize,
        dilation: usize,
    },
    LongformerGlobal {
        n: usize,
        window: usize,
        global_count: usize,
    },
    RandomSparse {
        n: usize,
        density: f64,
        seed: u64,
        #[serde(default = "default_true")]
        force_diagonal: bool,
    },
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        let positive = |n: usize| if n == 0 { invalid("n must be positive".into()) } else { Ok(()) };
        match self {
            MaskSpec::Causal { n } | MaskSpec::AllOnes { n } => positive(*n),
            MaskSpec::Medusa { candidates } => {
                if candidates.is_empty() || candidates.contains(&0) {
                    return invalid(format!("candidate counts must be a non-empty list of positives, got {candidates:?}"));
                }
                medusa_size(candidates).map(|_| ())
            }
            MaskSpec::PackedSequential { lengths } => {
                if lengths.is_empty() || lengths.contains(&0) {
                    return invalid(format!("packed lengths must be a non-empty list of positives, got {lengths:?}"));
                }
                Ok(())
            }
            MaskSpec::PackedInputBidirectional { segments } => {
                if segments.is_empty() || segments.iter().any(|&(a, b)| a + b == 0) {
                    return invalid(format!("packed segments must be non-empty, got {segments:?}"));
                }
                Ok(())
            }
            MaskSpec::LongformerWindowed { n, window, .. } => {
                positive(*n)?;
                if window >= n {
                    return invalid(format!("window {window} must be smaller than n {n}"));
                }
                Ok(())
            }
            MaskSpec::LongformerDilated { n, window, dilation } => {
                positive(*n)?;
                if window >= n {
                    return invalid(format!("window {window} must be smaller than n {n}"));
                }
                if *dilation == 0 {
                    return invalid("dilation must be at least 1".into());
                }
                Ok(())
            }
            MaskSpec::LongformerGlobal { n, window, global_count } => {
                positive(*n)?;
                if window >= n {
                    return invalid(format!("window {window} must be smaller than n {n}"));
                }
                if global_count > n {
                    return invalid(format!("global count {global_count} exceeds n {n}"));
                }
                Ok(())
            }
            MaskSpec::RandomSparse { n, density, .. } => {
                positive(*n)?;
                if !(0.0..=1.0).contains(density) {
                    return invalid(format!("density {density} outside [0, 1]"));
                }
                Ok(())
            }
        }
    }

    /// Mask dimension.
    pub fn n(&self) -> usize {
        match self {
            MaskSpec::Causal { n }
            | MaskSpec::AllOnes { n }
            | MaskSpec::LongformerWindowed { n, .. }
            | MaskSpec::LongformerDilated { n, .. }
            | MaskSpec::LongformerGlobal { n, .. }
            | MaskSpec::RandomSparse { n, .. } => *n,
            MaskSpec::Medusa { candidates } => medusa_size(candidates).unwrap_or(0),
            MaskSpec::PackedSequential { lengths } => lengths.iter().sum(),
            MaskSpec::PackedInputBidirectional { segments } => segments.iter().map(|&(a, b)| a + b).sum(),
        }
    }

    pub fn generate(&self) -> Result<Mask> {
        self.validate()?;
        Ok(match self {
            MaskSpec::Causal { n } => gen_causal(*n),
            MaskSpec::AllOnes { n } => gen_all_ones(*n),
            MaskSpec::Medusa { candidates } => gen_medusa(candidates)?,
            MaskSpec::PackedSequential { lengths } => gen_packed_sequential(lengths),
            MaskSpec::PackedInputBidirectional { segments } => gen_packed_input_bidirectional(segments),
            MaskSpec::LongformerWindowed { n, window, causal } => {
                if *causal {
                    gen_longformer_causal_windowed(*n, *window)
                } else {
                    gen_longformer_windowed(*n, *window)
                }
            }
            MaskSpec::LongformerDilated { n, window, dilation } => gen_longformer_dilated(*n, *window, *dilation),
            MaskSpec::LongformerGlobal { n, window, global_count } => {
                gen_longformer_global(*n, *window, *global_count)
            }
            MaskSpec::RandomSparse {
                n,
                density,
                seed,
                force_diagonal,
            } => gen_random_sparse(*n, *density, *seed, *force_diagonal),
        })
    }

    /// The same family at dimension `n`.
    ///
    /// Packed families get synthetic segment lengths drawn uniformly from the
    /// range spanned by the current segments (ChaCha8 seeded with `seed`); the
    /// last segment is truncated to fit. Tree masks have a fixed size and
    /// return `None` unless `n` already matches.
    pub fn resized(&self, n: usize, seed: u64) -> Option<MaskSpec> {
        let mut spec = self.clone();
        match &mut spec {
            MaskSpec::Causal { n: m }
            | MaskSpec::AllOnes { n: m }
            | MaskSpec::LongformerWindowed { n: m, .. }
            | MaskSpec::LongformerDilated { n: m, .. }
            | MaskSpec::LongformerGlobal { n: m, .. }
            | MaskSpec::RandomSparse { n: m, .. } => *m = n,
            MaskSpec::Medusa { .. } => return (self.n() == n).then_some(spec),
            MaskSpec::PackedSequential { lengths } => {
                let lo = *lengths.iter().min()?;
                let hi = *lengths.iter().max()?;
                *lengths = synthetic_pack_lengths(n, lo, hi, seed);
            }
            MaskSpec::PackedInputBidirectional { segments } => {
                let (lo_in, hi_in) = min_max(segments.iter().map(|s| s.0))?;
                let (lo_out, hi_out) = min_max(segments.iter().map(|s| s.1))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::new();
                let mut remaining = n;
                while remaining > 0 {
                    let input = rng.random_range(lo_in..=hi_in).max(1).min(remaining);
                    let output = rng.random_range(lo_out..=hi_out).min(remaining - input);
                    out.push((input, output));
                    remaining -= input + output;
                }
                *segments = out;
            }
        }
        if spec.n() != n {
            return None;
        }
        Some(spec)
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

fn min_max(it: impl Iterator<Item = usize>) -> Option<(usize, usize)> {
    it.fold(None, |acc, x| match acc {
        None => Some((x, x)),
        Some((a, b)) => Some((a.min(x), b.max(x))),
    })
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        match self {
            MaskSpec::Causal { n } => write!(f, "causal(n={n})"),
            MaskSpec::AllOnes { n } => write!(f, "all-ones(n={n})"),
            MaskSpec::Medusa { candidates } => write!(f, "medusa(s={})", list(candidates)),
            MaskSpec::PackedSequential { lengths } => {
                write!(f, "packed-sequential(n={};segments={})", self.n(), lengths.len())
            }
            MaskSpec::PackedInputBidirectional { segments } => {
                write!(f, "packed-input-bidirectional(n={};segments={})", self.n(), segments.len())
            }
            MaskSpec::LongformerWindowed { n, window, causal } => {
                write!(f, "windowed(n={n};w={window}{})", if *causal { ";causal" } else { "" })
            }
            MaskSpec::LongformerDilated { n, window, dilation } => {
                write!(f, "dilated(n={n};w={window};d={dilation})")
            }
            MaskSpec::LongformerGlobal { n, window, global_count } => {
                write!(f, "global(n={n};w={window};g={global_count})")
            }
            MaskSpec::RandomSparse {
                n,
                density,
                seed,
                force_diagonal,
            } => write!(
                f,
                "random(n={n};p={density};seed={seed}{})",
                if *force_diagonal { "" } else { ";nodiag" }
            ),
        }
    }
}

/// Segment lengths in `[lo, hi]` summing to `total`; the final one is truncated.
pub fn synthetic_pack_lengths(total: usize, lo: usize, hi: usize, seed: u64) -> Vec<usize> {
    let lo = lo.max(1);
    let hi = hi.max(lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lengths = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        let len = rng.random_range(lo..=hi).min(remaining);
        lengths.push(len);
        remaining -= len;
    }
    lengths
}

/// Number of nodes of a tree with `candidates[k]` children per node at depth `k`.
pub fn medusa_size(candidates: &[usize]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate list is empty".into()));
    }
    let mut total = 0usize;
    let mut level = 1usize;
    for &s in candidates {
        level = level
            .checked_mul(s)
            .ok_or_else(|| Error::InvalidArgument(format!("tree size overflows for {candidates:?}")))?;
        total = total
            .checked_add(level)
            .ok_or_else(|| Error::InvalidArgument(format!("tree size overflows for {candidates:?}")))?;
    }
    Ok(total)
}

/// Tree mask laid out level by level; each node attends to itself and its ancestors.
pub fn gen_medusa(candidates: &[usize]) -> Result<Mask> {
    let n = medusa_size(candidates)?;
    // parent[i] = index of the parent node, None for first-level nodes
    let mut parent: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut prev_start = 0;
    let mut prev_len = 0;
    for (depth, &s) in candidates.iter().enumerate() {
        let start = parent.len();
        if depth == 0 {
            parent.extend(std::iter::repeat_n(None, s));
        } else {
            for p in prev_start..prev_start + prev_len {
                parent.extend(std::iter::repeat_n(Some(p), s));
            }
        }
        prev_start = start;
        prev_len = parent.len() - start;
    }
    debug_assert_eq!(parent.len(), n);
    let mut mask = Mask::zeros(n);
    for i in 0..n {
        let mut node = Some(i);
        while let Some(j) = node {
            mask.set(i, j, true);
            node = parent[j];
        }
    }
    Ok(mask)
}

/// Block-diagonal causal mask over consecutive segments.
pub fn gen_packed_sequential(lengths: &[usize]) -> Mask {
    let n = lengths.iter().sum();
    let mut mask = Mask::zeros(n);
    let mut start = 0;
    for &len in lengths {
        for i in start..start + len {
            for j in start..=i {
                mask.set(i, j, true);
            }
        }
        start += len;
    }
    mask
}

/// Per segment: inputs attend to all inputs; outputs attend to all inputs
/// and to preceding outputs (including themselves).
pub fn gen_packed_input_bidirectional(segments: &[(usize, usize)]) -> Mask {
    let n = segments.iter().map(|&(a, b)| a + b).sum();
    let mut mask = Mask::zeros(n);
    let mut start = 0;
    for &(input, output) in segments {
        let input_end = start + input;
        for i in start..input_end {
            for j in start..input_end {
                mask.set(i, j, true);
            }
        }
        for i in input_end..input_end + output {
            for j in start..=i {
                mask.set(i, j, true);
            }
        }
        start = input_end + output;
    }
    mask
}

/// `|i - j| <= w`.
pub fn gen_longformer_windowed(n: usize, w: usize) -> Mask {
    Mask::from_fn(n, |i, j| i.abs_diff(j) <= w)
}

/// `0 <= i - j <= w`.
pub fn gen_longformer_causal_windowed(n: usize, w: usize) -> Mask {
    Mask::from_fn(n, |i, j| j <= i && i - j <= w)
}

/// `|i - j| <= w * d` and `d` divides `i - j`.
pub fn gen_longformer_dilated(n: usize, w: usize, d: usize) -> Mask {
    let reach = w.saturating_mul(d);
    Mask::from_fn(n, |i, j| {
        let gap = i.abs_diff(j);
        gap <= reach && gap % d == 0
    })
}

/// Windowed mask plus full rows and columns for the first `g` tokens.
pub fn gen_longformer_global(n: usize, w: usize, g: usize) -> Mask {
    Mask::from_fn(n, |i, j| i < g || j < g || i.abs_diff(j) <= w)
}

pub fn gen_causal(n: usize) -> Mask {
    Mask::from_fn(n, |i, j| j <= i)
}

pub fn gen_all_ones(n: usize) -> Mask {
    Mask::ones(n)
}

/// Each entry is 1 with probability `density` (ChaCha8 seeded with `seed`,
/// row-major draw order). The diagonal is forced to 1 when `force_diagonal`.
pub fn gen_random_sparse(n: usize, density: f64, seed: u64, force_diagonal: bool) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::from_fn(n, |_, _| rng.random_bool(density.clamp(0.0, 1.0)));
    if force_diagonal {
        for i in 0..n {
            mask.set(i, i, true);
        }
    }
    mask
}
