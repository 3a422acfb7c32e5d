//! Naive double-precision masked attention used as ground truth.
//!
//! Masked scores are treated as `-inf` before the row softmax. A query row
//! with no unmasked key produces a zero output row and zero gradients.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::matrix::{AttentionGrads, AttentionInputs, AttentionOutput, Matrix};

fn check_mask(inputs: &AttentionInputs<f64>, mask: &Mask) -> Result<()> {
    if mask.n() != inputs.n_tokens() {
        return Err(Error::Shape(format!(
            "mask is {0}x{0} but inputs have {1} tokens",
            mask.n(),
            inputs.n_tokens()
        )));
    }
    Ok(())
}

fn check_upstream(inputs: &AttentionInputs<f64>, d_out: &Matrix<f64>) -> Result<()> {
    if d_out.shape() != inputs.q().shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match inputs {:?}",
            d_out.shape(),
            inputs.q().shape()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum in ascending value order, so the result does not depend on token order.
fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Masked softmax probabilities, `N x N`, plus per-row max and denominator.
fn softmax_rows(inputs: &AttentionInputs<f64>, mask: &Mask) -> (Matrix<f64>, Vec<f64>, Vec<f64>) {
    let n = inputs.n_tokens();
    let (q, k) = (inputs.q(), inputs.k());
    let mut probs = Matrix::zeros(n, n);
    let mut row_max = vec![f64::NEG_INFINITY; n];
    let mut row_sum = vec![0.0; n];
    for i in 0..n {
        let scores: Vec<(usize, f64)> = mask
            .row_indices(i)
            .map(|j| (j, inputs.scale() * dot(q.row(i), k.row(j))))
            .collect();
        if scores.is_empty() {
            continue;
        }
        let max = scores.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let sum = ordered_sum(&mut scores.iter().map(|&(_, s)| (s - max).exp()).collect::<Vec<_>>());
        for &(j, s) in &scores {
            probs.set(i, j, (s - max).exp() / sum);
        }
        row_max[i] = max;
        row_sum[i] = sum;
    }
    (probs, row_max, row_sum)
}

pub fn naive_forward(inputs: &AttentionInputs<f64>, mask: &Mask) -> Result<AttentionOutput<f64>> {
    check_mask(inputs, mask)?;
    let (n, d) = (inputs.n_tokens(), inputs.head_dim());
    let (probs, row_max, row_sum) = softmax_rows(inputs, mask);
    let v = inputs.v();
    let mut out = Matrix::zeros(n, d);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let cols: Vec<usize> = mask.row_indices(i).collect();
        for c in 0..d {
            terms.clear();
            terms.extend(cols.iter().map(|&j| probs.get(i, j) * v.get(j, c)));
            out.set(i, c, ordered_sum(&mut terms));
        }
    }
    Ok(AttentionOutput {
        out,
        row_max,
        row_sum,
    })
}

/// Analytic gradients of `<d_out, out>`:
/// `dV = P^T dO`, `dS = P * (dP - rowdot(dP, P))`, `dQ = scale dS K`, `dK = scale dS^T Q`.
pub fn naive_backward(
    inputs: &AttentionInputs<f64>,
    mask: &Mask,
    d_out: &Matrix<f64>,
) -> Result<AttentionGrads<f64>> {
    check_mask(inputs, mask)?;
    check_upstream(inputs, d_out)?;
    let (n, d) = (inputs.n_tokens(), inputs.head_dim());
    let (q, k, v) = (inputs.q(), inputs.k(), inputs.v());
    let scale = inputs.scale();
    let (probs, _, _) = softmax_rows(inputs, mask);
    let mut grads = AttentionGrads::zeros(n, d);

    for i in 0..n {
        let cols: Vec<usize> = mask.row_indices(i).collect();
        if cols.is_empty() {
            continue;
        }
        let dp: Vec<f64> = cols.iter().map(|&j| dot(d_out.row(i), v.row(j))).collect();
        let rowdot: f64 = cols.iter().zip(&dp).map(|(&j, &g)| g * probs.get(i, j)).sum();
        for (&j, &g) in cols.iter().zip(&dp) {
            let p = probs.get(i, j);
            let ds = p * (g - rowdot);
            for c in 0..d {
                let dv = grads.dv.get(j, c) + p * d_out.get(i, c);
                grads.dv.set(j, c, dv);
                let dq = grads.dq.get(i, c) + scale * ds * k.get(j, c);
                grads.dq.set(i, c, dq);
                let dk = grads.dk.get(j, c) + scale * ds * q.get(i, c);
                grads.dk.set(j, c, dk);
            }
        }
    }
    Ok(grads)
}

fn loss(inputs: &AttentionInputs<f64>, mask: &Mask, d_out: &Matrix<f64>) -> Result<f64> {
    let out = naive_forward(inputs, mask)?.out;
    Ok(dot(out.as_slice(), d_out.as_slice()))
}

/// Central finite differences of `<d_out, naive_forward(..)>` with respect to
/// every entry of Q, K and V.
pub fn finite_difference_grads(
    inputs: &AttentionInputs<f64>,
    mask: &Mask,
    d_out: &Matrix<f64>,
    step: f64,
) -> Result<AttentionGrads<f64>> {
    check_mask(inputs, mask)?;
    check_upstream(inputs, d_out)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let (n, d) = (inputs.n_tokens(), inputs.head_dim());
    let scale = inputs.scale();
    let mut grads = AttentionGrads::zeros(n, d);
    let base = [inputs.q().clone(), inputs.k().clone(), inputs.v().clone()];

    for which in 0..3 {
        for idx in 0..n * d {
            let eval = |delta: f64| -> Result<f64> {
                let mut mats = base.clone();
                mats[which].as_mut_slice()[idx] += delta;
                let [q, k, v] = mats;
                loss(&AttentionInputs::with_scale(q, k, v, scale)?, mask, d_out)
            };
            let g = (eval(step)? - eval(-step)?) / (2.0 * step);
            let target = match which {
                0 => &mut grads.dq,
                1 => &mut grads.dk,
                _ => &mut grads.dv,
            };
            target.as_mut_slice()[idx] = g;
        }
    }
    Ok(grads)
}
