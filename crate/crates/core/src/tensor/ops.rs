//! Value-level entry points for the differentiable building blocks.

use alloc::vec::Vec;


use super::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::math;

pub const QUICK_GELU_SLOPE: f64 = 1.702;

#[inline]
pub(crate) fn quick_gelu_scalar(x: f64) -> f64 {
    x * math::sigmoid(QUICK_GELU_SLOPE * x)
}

/// Derivative of `x * sigmoid(1.702 x)`.
#[inline]
pub fn quick_gelu_grad(x: f64) -> f64 {
    let s = math::sigmoid(QUICK_GELU_SLOPE * x);
    s + QUICK_GELU_SLOPE * x * s * (1.0 - s)
}

pub fn quick_gelu(x: &Tensor) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| quick_gelu_scalar(v)).collect())
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let (vx, vg, vb) = (tape.constant(x.clone()), tape.constant(gamma.clone()), tape.constant(beta.clone()));
    let y = tape.layer_norm(vx, vg, vb, eps)?;
    Ok(tape.value(y).clone())
}

/// Weights of one self-attention layer: packed query/key/value projection
/// `[D, 3D]` with bias `[3D]`, and output projection `[D, D]` with bias `[D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

fn attention_tape<'a>(
    tape: &mut Tape<'a>,
    x: &Tensor,
    mask: &[bool],
    p: &AttentionParams,
    heads: usize,
) -> Result<(super::Var, super::Var)> {
    let d = x.cols();
    if !d.is_multiple_of(heads.max(1)) || p.w_qkv.shape() != [d, 3 * d] || p.w_out.shape() != [d, d] {
        return Err(Error::ShapeMismatch(alloc::format!(
            "attention weights {:?}/{:?} for width {d} and {heads} heads",
            p.w_qkv.shape(),
            p.w_out.shape()
        )));
    }
    let vx = tape.constant(x.clone());
    let w = tape.constant(p.w_qkv.clone());
    let b = tape.constant(p.b_qkv.clone());
    let qkv = tape.matmul(vx, w)?;
    let qkv = tape.add_bias(qkv, b)?;
    let att = tape.attention(qkv, mask, heads)?;
    let wo = tape.constant(p.w_out.clone());
    let bo = tape.constant(p.b_out.clone());
    let out = tape.matmul(att, wo)?;
    let out = tape.add_bias(out, bo)?;
    Ok((att, out))
}

/// Multi-head self-attention over the rows of `x`; keys where `mask` is
/// false receive no weight.
pub fn multi_head_attention(x: &Tensor, mask: &[bool], params: &AttentionParams, heads: usize) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let (_, out) = attention_tape(&mut tape, x, mask, params, heads)?;
    Ok(tape.value(out).clone())
}

/// Per-head attention weight matrices, each `[T, T]`.
pub fn attention_probabilities(
    x: &Tensor,
    mask: &[bool],
    params: &AttentionParams,
    heads: usize,
) -> Result<Vec<Tensor>> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let (att, _) = attention_tape(&mut tape, x, mask, params, heads)?;
    let t = x.rows();
    let probs = tape.attention_weights(att).expect("attention op caches weights");
    Ok(probs.chunks(t * t).map(|c| Tensor::from_parts(alloc::vec![t, t], c.to_vec())).collect())
}

/// `-log softmax(logits)[target]` and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if target >= k {
        return Err(Error::TargetOutOfRange { target, classes: k });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| math::exp(v - max)).sum();
    let loss = -(logits[target] - max - math::ln(z));
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, v)| math::exp(v - max) / z - if i == target { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}
