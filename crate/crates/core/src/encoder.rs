//! Contextual token encoder: learned token embeddings plus sinusoidal
//! positions, followed by pre-norm self-attention blocks and a final layer
//! normalization.
//!
//! Parameters live under `encoder.embed.tokens` and
//! `encoder.layer{i}.{block}.{tensor}`.

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{self, check_heads};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    /// Applied to the feed-forward hidden activation while training.
    pub dropout_p: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_heads(self.d_model, self.n_heads)?;
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::config("encoder needs a non-empty vocabulary and max_len >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

pub fn init_encoder<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    // embeddings are read row-wise, so fan-in is the model width
    let bound = 1.0 / (d as f64).sqrt();
    store.insert("encoder.embed.tokens", Tensor::uniform(&[cfg.vocab_size, d], bound, rng))?;
    for i in 0..cfg.n_layers {
        let p = format!("encoder.layer{i}");
        layers::init_layer_norm(store, &format!("{p}.ln_attn"), d)?;
        layers::init_mha(store, &format!("{p}.attn"), d, rng)?;
        layers::init_layer_norm(store, &format!("{p}.ln_ff"), d)?;
        layers::init_linear(store, &format!("{p}.ff.hidden"), d, 2 * d, rng)?;
        layers::init_linear(store, &format!("{p}.ff.out"), 2 * d, d, rng)?;
    }
    layers::init_layer_norm(store, "encoder.final_norm", d)
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for j in 0..d {
            let pair = (j / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, d, data).expect("consistent shape")
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[n, d_model]`; row `i` is the contextual embedding of token `i`.
    pub hidden: Var,
    /// `attn[layer][head]` is an `[n, n]` row-stochastic matrix.
    pub attn: Vec<Vec<Tensor>>,
}

/// Encode `token_ids`. The caller truncates to `max_len` beforehand.
pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    token_ids: &[usize],
    train: bool,
    rng: &mut R,
) -> Result<EncoderOutput> {
    let n = token_ids.len();
    if n == 0 || n > cfg.max_len {
        return Err(Error::contract(format!("encoder input length {n} outside 1..={}", cfg.max_len)));
    }
    if let Some(&bad) = token_ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::contract(format!("token id {bad} >= vocabulary size {}", cfg.vocab_size)));
    }
    let d = cfg.d_model;
    let table = tape.param(store, "encoder.embed.tokens")?;
    let emb = tape.gather_rows(table, token_ids)?;
    let pos = tape.leaf(sinusoidal_positions(n, d));
    let mut x = tape.add(emb, pos)?;
    let mut attn = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let p = format!("encoder.layer{i}");
        let a_in = layers::layer_norm(tape, store, &format!("{p}.ln_attn"), x)?;
        let a = layers::mha(tape, store, &format!("{p}.attn"), a_in, a_in, cfg.n_heads)?;
        attn.push(a.attn);
        x = tape.add(x, a.out)?;
        let f_in = layers::layer_norm(tape, store, &format!("{p}.ln_ff"), x)?;
        let h = layers::linear(tape, store, &format!("{p}.ff.hidden"), f_in)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, cfg.dropout_p, train, rng)?;
        let f = layers::linear(tape, store, &format!("{p}.ff.out"), h)?;
        x = tape.add(x, f)?;
    }
    let hidden = layers::layer_norm(tape, store, "encoder.final_norm", x)?;
    Ok(EncoderOutput { hidden, attn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, DEFAULT_EPS, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig { vocab_size: 10, d_model: 8, n_layers: 2, n_heads: 2, max_len: 6, dropout_p: 0.5 }
    }

    fn setup(seed: u64) -> (ParamStore, EncoderConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_encoder(&mut store, &cfg(), &mut rng).unwrap();
        (store, cfg())
    }

    fn run(store: &ParamStore, c: &EncoderConfig, ids: &[usize]) -> (Tensor, Vec<Vec<Tensor>>) {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = encode(&mut tape, store, c, ids, false, &mut rng).unwrap();
        (tape.value(out.hidden).clone(), out.attn)
    }

    #[test]
    fn single_token_shape() {
        let (store, c) = setup(1);
        let (h, attn) = run(&store, &c, &[4]);
        assert_eq!(h.shape(), &[1, 8]);
        assert!(h.is_finite());
        assert_eq!(attn.len(), 2);
        assert_eq!(attn[0][0].data(), &[1.0]);
    }

    #[test]
    fn order_matters() {
        let (store, c) = setup(2);
        let (ab, _) = run(&store, &c, &[4, 5]);
        let (ba, _) = run(&store, &c, &[5, 4]);
        assert!(ab.row(0).iter().zip(ba.row(1)).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (store, c) = setup(3);
        let (a, _) = run(&store, &c, &[2, 7, 3]);
        let (b, _) = run(&store, &c, &[2, 7, 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn attention_rows_sum_to_one_and_output_rms_is_banded() {
        let (store, c) = setup(4);
        let (h, attn) = run(&store, &c, &[1, 2, 3, 4, 5, 6]);
        for layer in &attn {
            for head in layer {
                for r in 0..6 {
                    assert!((head.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
        for r in 0..6 {
            let rms = (h.row(r).iter().map(|v| v * v).sum::<f64>() / 8.0).sqrt();
            assert!((0.5..=2.0).contains(&rms), "rms {rms}");
        }
    }

    #[test]
    fn rejects_unknown_ids_and_overlong_input() {
        let (store, c) = setup(5);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(encode(&mut tape, &store, &c, &[10], false, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(encode(&mut tape, &store, &c, &[1; 7], false, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(encode(&mut tape, &store, &c, &[], false, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_head_count_is_a_config_error() {
        let mut c = cfg();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn positions_match_closed_form() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(2)[2] - (2.0 / 100.0f64).sin()).abs() < 1e-15);
        assert!((pe.row(1)[1] - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn gradients_check_on_three_tokens() {
        let (store, c) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = Tensor::uniform(&[3, 8], 1.0, &mut rng);
        let report = grad_check_params(
            &store,
            |tape, s| {
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let out = encode(tape, s, &c, &[3, 1, 8], false, &mut r)?;
                let t = tape.leaf(target.clone());
                let prod = tape.mul(out.hidden, t)?;
                Ok(tape.sum(prod))
            },
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
