//! Small building blocks shared by the encoder, the interaction modules and
//! the head: affine maps, layer normalization and multi-head attention.
//!
//! Weight matrices are stored `[d_in, d_out]` so a layer computes `x W + b`.

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix.
pub fn init_matrix<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<()> {
    let bound = 1.0 / (d_in as f64).sqrt();
    store.insert(name, Tensor::uniform(&[d_in, d_out], bound, rng))
}

/// `{prefix}.w` and a zero `{prefix}.b`.
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<()> {
    init_matrix(store, &format!("{prefix}.w"), d_in, d_out, rng)?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d_out]))
}

pub fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Input width expected by the linear map `{prefix}`.
pub fn linear_in_dim(store: &ParamStore, prefix: &str) -> Result<usize> {
    Ok(store.value(&format!("{prefix}.w"))?.shape()[0])
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<()> {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[d], 1.0))?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]))
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let g = tape.param(store, &format!("{prefix}.gain"))?;
    let b = tape.param(store, &format!("{prefix}.bias"))?;
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

pub fn init_mha<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{p}"), d, d, rng)?;
    }
    Ok(())
}

/// Output of one multi-head attention call.
#[derive(Clone, Debug)]
pub struct MhaOutput {
    /// `[n_q, d]` after the output projection.
    pub out: Var,
    /// One `[n_q, n_kv]` row-stochastic matrix per head.
    pub attn: Vec<Tensor>,
}

pub fn check_heads(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("width {d} is not divisible by {heads} heads")));
    }
    Ok(d / heads)
}

/// Scaled dot-product multi-head attention with queries from `q_in` and
/// keys/values from `kv_in`. Scores are scaled by `1/sqrt(d/heads)`.
pub fn mha(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
) -> Result<MhaOutput> {
    let d = tape.shape(q_in)[1];
    let dh = check_heads(d, heads)?;
    if tape.shape(kv_in).get(1) != Some(&d) {
        return Err(Error::dim(format!("attention query width {d} vs key/value shape {:?}", tape.shape(kv_in))));
    }
    let q = linear(tape, store, &format!("{prefix}.q"), q_in)?;
    let k = linear(tape, store, &format!("{prefix}.k"), kv_in)?;
    let v = linear(tape, store, &format!("{prefix}.v"), kv_in)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let a = tape.softmax(scores, 1)?;
        attn.push(tape.value(a).clone());
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = linear(tape, store, &format!("{prefix}.o"), cat)?;
    Ok(MhaOutput { out, attn })
}
