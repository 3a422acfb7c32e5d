//! `BBMK` mask files and `BBLK` occupancy sidecars.
//!
//! ```text
//! BBMK: magic "BBMK" | version u8 = 1 | N u64 LE | N rows of ceil(N/8) bytes
//! BBLK: magic "BBLK" | version u8 = 1 | N u64 LE | block_i u32 LE | block_j u32 LE
//!       | ceil(N/block_i) rows of ceil(ceil(N/block_j)/8) bytes
//! ```
//!
//! Bits are LSB-first within each byte: bit 0 of byte 0 is column 0.

use std::fs;
use std::path::Path;

use super::{BinBlkMat, BlockSpec, Mask};
use crate::error::{FormatError, Result};

pub const MASK_MAGIC: [u8; 4] = *b"BBMK";
pub const BINBLK_MAGIC: [u8; 4] = *b"BBLK";
pub const FORMAT_VERSION: u8 = 1;

const MASK_HEADER: usize = 13;
const BINBLK_HEADER: usize = 21;

fn pack_bits(out: &mut Vec<u8>, len: usize, bit: impl Fn(usize) -> bool) {
    let start = out.len();
    out.resize(start + len.div_ceil(8), 0);
    for j in 0..len {
        if bit(j) {
            out[start + j / 8] |= 1 << (j % 8);
        }
    }
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let n = mask.n();
    let row_bytes = n.div_ceil(8);
    let mut out = Vec::with_capacity(MASK_HEADER + n * row_bytes);
    out.extend_from_slice(&MASK_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for i in 0..n {
        // the packed words are already LSB-first; their LE bytes are the row bytes
        let bytes: Vec<u8> = mask.row_words(i).iter().flat_map(|w| w.to_le_bytes()).collect();
        out.extend_from_slice(&bytes[..row_bytes]);
    }
    out
}

fn check_header(bytes: &[u8], magic: [u8; 4], header_len: usize) -> std::result::Result<u64, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: header_len as u64,
            found: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            expected: header_len as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    Ok(u64::from_le_bytes(bytes[5..13].try_into().expect("length checked")))
}

/// Payload size for `rows` rows of `row_bytes`, or `DimensionOverflow(n)`.
fn payload_len(n: u64, rows: u64, row_bytes: u64, header: usize) -> std::result::Result<usize, FormatError> {
    rows.checked_mul(row_bytes)
        .and_then(|p| p.checked_add(header as u64))
        .filter(|&total| usize::try_from(total).is_ok() && usize::try_from(n).is_ok())
        .map(|total| total as usize)
        .ok_or(FormatError::DimensionOverflow(n))
}

fn check_length(bytes: &[u8], expected: usize) -> std::result::Result<(), FormatError> {
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(FormatError::Truncated {
            expected: expected as u64,
            found: bytes.len() as u64,
        }),
        std::cmp::Ordering::Greater => Err(FormatError::TrailingBytes((bytes.len() - expected) as u64)),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn decode_mask(bytes: &[u8]) -> std::result::Result<Mask, FormatError> {
    let n64 = check_header(bytes, MASK_MAGIC, MASK_HEADER)?;
    let row_bytes = n64.div_ceil(8);
    let total = payload_len(n64, n64, row_bytes, MASK_HEADER)?;
    check_length(bytes, total)?;
    let n = n64 as usize;
    let row_bytes = row_bytes as usize;
    let mut mask = Mask::zeros(n);
    let mut word = [0u8; 8];
    for i in 0..n {
        let row = &bytes[MASK_HEADER + i * row_bytes..MASK_HEADER + (i + 1) * row_bytes];
        let words = mask.row_words_mut(i);
        for (w, chunk) in words.iter_mut().zip(row.chunks(8)) {
            word.fill(0);
            word[..chunk.len()].copy_from_slice(chunk);
            *w = u64::from_le_bytes(word);
        }
        // padding bits past column N-1 are ignored
        if !n.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }
    Ok(mask)
}

pub fn mask_write(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn mask_read(path: impl AsRef<Path>) -> Result<Mask> {
    let bytes = fs::read(path)?;
    Ok(decode_mask(&bytes)?)
}

pub fn encode_binblk(binblk: &BinBlkMat) -> Vec<u8> {
    let spec = binblk.spec();
    let mut out = Vec::new();
    out.extend_from_slice(&BINBLK_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(binblk.n() as u64).to_le_bytes());
    out.extend_from_slice(&(spec.block_i as u32).to_le_bytes());
    out.extend_from_slice(&(spec.block_j as u32).to_le_bytes());
    for p in 0..binblk.row_blocks() {
        pack_bits(&mut out, binblk.col_blocks(), |q| binblk.get(p, q));
    }
    out
}

pub fn decode_binblk(bytes: &[u8]) -> std::result::Result<BinBlkMat, FormatError> {
    let n64 = check_header(bytes, BINBLK_MAGIC, BINBLK_HEADER)?;
    let block_i = u32::from_le_bytes(bytes[13..17].try_into().expect("length checked"));
    let block_j = u32::from_le_bytes(bytes[17..21].try_into().expect("length checked"));
    for b in [block_i, block_j] {
        if b == 0 {
            return Err(FormatError::InvalidBlockSize(b));
        }
    }
    let rows = n64.div_ceil(block_i as u64);
    let cols = n64.div_ceil(block_j as u64);
    let row_bytes = cols.div_ceil(8);
    let total = payload_len(n64, rows, row_bytes, BINBLK_HEADER)?;
    check_length(bytes, total)?;
    let (rows, cols, row_bytes) = (rows as usize, cols as usize, row_bytes as usize);
    let mut occupancy = Vec::with_capacity(rows * cols);
    for p in 0..rows {
        let row = &bytes[BINBLK_HEADER + p * row_bytes..BINBLK_HEADER + (p + 1) * row_bytes];
        occupancy.extend((0..cols).map(|q| (row[q / 8] >> (q % 8)) & 1 == 1));
    }
    let spec = BlockSpec {
        block_i: block_i as usize,
        block_j: block_j as usize,
    };
    Ok(BinBlkMat::from_parts(n64 as usize, spec, occupancy))
}

pub fn binblk_write(binblk: &BinBlkMat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_binblk(binblk))?;
    Ok(())
}

pub fn binblk_read(path: impl AsRef<Path>) -> Result<BinBlkMat> {
    let bytes = fs::read(path)?;
    Ok(decode_binblk(&bytes)?)
}
