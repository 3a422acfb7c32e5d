//! Seeded Q, K, V and upstream gradients.

use blockmask::{AttentionBatch, AttentionInputs, Element, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Stream ids within one seed.
const STREAM_INPUTS: u64 = 0;
const STREAM_GRADS: u64 = 1 << 32;

fn uniform_matrix<T: Element>(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<T> {
    Matrix::from_fn(n, d, |_, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

fn slot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inputs for slot `slot`; entries uniform in `[-1, 1)` drawn in `f64` and rounded to `T`.
pub fn slot_inputs<T: Element>(n: usize, d: usize, seed: u64, slot: usize) -> Result<AttentionInputs<T>> {
    let mut rng = slot_rng(seed, STREAM_INPUTS + slot as u64);
    let q = uniform_matrix(&mut rng, n, d);
    let k = uniform_matrix(&mut rng, n, d);
    let v = uniform_matrix(&mut rng, n, d);
    Ok(AttentionInputs::new(q, k, v)?)
}

pub fn slot_upstream<T: Element>(n: usize, d: usize, seed: u64, slot: usize) -> Matrix<T> {
    uniform_matrix(&mut slot_rng(seed, STREAM_GRADS + slot as u64), n, d)
}

pub fn make_batch<T: Element>(n: usize, d: usize, batch: usize, heads: usize, seed: u64) -> Result<AttentionBatch<T>> {
    let slots = (0..batch * heads)
        .map(|s| slot_inputs(n, d, seed, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionBatch::new(batch, heads, slots)?)
}

pub fn make_upstream<T: Element>(n: usize, d: usize, slots: usize, seed: u64) -> Vec<Matrix<T>> {
    (0..slots).map(|s| slot_upstream(n, d, seed, s)).collect()
}
