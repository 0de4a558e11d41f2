//! Feature fusion, the three-way classifier, auxiliary heads and the
//! combined training loss.

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::corpus::{ClassWeights, Sentiment, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{self, init_layer_norm, init_linear, linear, linear_in_dim};

pub const FUSE: &str = "head.fuse";
pub const NORM: &str = "head.norm";
pub const OUT: &str = "head.out";
pub const SPAN: &str = "head.span";
pub const PAIR_HIDDEN: &str = "head.pair.hidden";
pub const PAIR_OUT: &str = "head.pair.out";
pub const REL: &str = "head.rel";

/// Weights on the auxiliary losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_span: f64,
    pub lambda_pair: f64,
    pub lambda_rel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_span: 0.1, lambda_pair: 0.1, lambda_rel: 0.1 }
    }
}

impl LossWeights {
    pub const ZERO: Self = Self { lambda_span: 0.0, lambda_pair: 0.0, lambda_rel: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_span, self.lambda_pair, self.lambda_rel];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Classifier over `n_parts` concatenated width-`d` features.
pub fn init_classifier<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, n_parts: usize, rng: &mut R) -> Result<()> {
    init_linear(store, FUSE, n_parts * d, d, rng)?;
    init_layer_norm(store, NORM, d)?;
    init_linear(store, OUT, d, NUM_CLASSES, rng)
}

pub fn init_span_head<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_linear(store, SPAN, d, 1, rng)
}

pub fn init_pair_head<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_linear(store, PAIR_HIDDEN, 3 * d, d, rng)?;
    init_linear(store, PAIR_OUT, d, 1, rng)
}

pub fn init_rel_head<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_linear(store, REL, d, 1, rng)
}

/// `[parts...] -> linear -> ReLU -> dropout -> layer norm -> linear`,
/// giving `[1, 3]` logits. Every part must be a `[1, d]` row.
pub fn classify<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    parts: &[Var],
    dropout_p: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let expect = linear_in_dim(store, FUSE)?;
    let mut width = 0;
    for &p in parts {
        match tape.shape(p) {
            [1, w] => width += w,
            s => return Err(Error::contract(format!("fusion input must be a single row, got {s:?}"))),
        }
    }
    if width != expect {
        return Err(Error::contract(format!("fusion inputs total width {width}, classifier expects {expect}")));
    }
    let z = if parts.len() == 1 { parts[0] } else { tape.concat_cols(parts)? };
    let h = linear(tape, store, FUSE, z)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout_p, train, rng)?;
    let h = layers::layer_norm(tape, store, NORM, h)?;
    linear(tape, store, OUT, h)
}

/// Classifier over `[h_e | z_e_to_s | z_sent | m]`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_classify<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    h_e: Var,
    z_e_to_s: Var,
    z_sent: Var,
    m: Var,
    dropout_p: f64,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let d = tape.shape(h_e).to_vec();
    for v in [z_e_to_s, z_sent, m] {
        if tape.shape(v) != d.as_slice() {
            return Err(Error::contract(format!("fusion input shapes {d:?} and {:?} differ", tape.shape(v))));
        }
    }
    classify(tape, store, &[h_e, z_e_to_s, z_sent, m], dropout_p, train, rng)
}

/// One span-membership logit per token row of `tokens: [T, d]`, as `[T, 1]`.
pub fn span_logits(tape: &mut Tape, store: &ParamStore, tokens: Var) -> Result<Var> {
    linear(tape, store, SPAN, tokens)
}

/// Pair logits from `[h_e | h_s | h_e * h_s]` for each sentiment row of
/// `h_s: [N, d]`, as `[N, 1]`.
pub fn pair_logits(tape: &mut Tape, store: &ParamStore, h_e: Var, h_s: Var) -> Result<Var> {
    let n = tape.shape(h_s)[0];
    let e = if n == 1 { h_e } else { tape.gather_rows(h_e, &vec![0; n])? };
    let prod = tape.mul(e, h_s)?;
    let x = tape.concat_cols(&[e, h_s, prod])?;
    let h = linear(tape, store, PAIR_HIDDEN, x)?;
    let h = tape.relu(h);
    linear(tape, store, PAIR_OUT, h)
}

/// Relevance logit per sentiment row, as `[N, 1]`.
pub fn rel_logits(tape: &mut Tape, store: &ParamStore, h_s: Var) -> Result<Var> {
    linear(tape, store, REL, h_s)
}

/// Auxiliary losses of one example. An absent head contributes no term.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuxLosses {
    pub span: Option<Var>,
    pub pair: Option<Var>,
    pub rel: Option<Var>,
}

/// Mean binary cross-entropy for each auxiliary head: span logits against
/// `span_targets`, pair and relevance logits against all-ones targets.
pub fn aux_losses(
    tape: &mut Tape,
    span_logits: Option<(Var, &[f64])>,
    pair_logits: Option<Var>,
    rel_logits: Option<Var>,
) -> Result<AuxLosses> {
    let span = span_logits.map(|(l, t)| tape.bce_with_logits(l, t)).transpose()?;
    let ones = |tape: &Tape, v: Var| vec![1.0; tape.value(v).numel()];
    let pair = pair_logits
        .map(|l| {
            let t = ones(tape, l);
            tape.bce_with_logits(l, &t)
        })
        .transpose()?;
    let rel = rel_logits
        .map(|l| {
            let t = ones(tape, l);
            tape.bce_with_logits(l, &t)
        })
        .transpose()?;
    Ok(AuxLosses { span, pair, rel })
}

/// Class-weighted cross-entropy plus the weighted auxiliary terms. Terms
/// whose weight is zero are not added at all.
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    label: usize,
    class_weights: &ClassWeights,
    aux: &AuxLosses,
    lw: &LossWeights,
) -> Result<Var> {
    let class = Sentiment::from_id(label).ok_or_else(|| Error::contract(format!("label {label} out of range")))?;
    let mut loss = tape.weighted_cross_entropy(logits, label, class_weights.get(class))?;
    for (term, lambda) in [(aux.span, lw.lambda_span), (aux.pair, lw.lambda_pair), (aux.rel, lw.lambda_rel)] {
        if let (Some(t), true) = (term, lambda != 0.0) {
            let scaled = tape.scale(t, lambda);
            loss = tape.add(loss, scaled)?;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(tape: &mut Tape, data: Vec<f64>) -> Var {
        let n = data.len();
        tape.leaf(Tensor::matrix(1, n, data).unwrap())
    }

    #[test]
    fn zero_params_give_the_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_classifier(&mut store, 2, 4, &mut rng).unwrap();
        for (name, p) in store.iter_mut() {
            let v = if name == "head.out.b" { [0.3, -0.2, 0.1][..].to_vec() } else { vec![0.0; p.value.numel()] };
            p.value.data_mut().copy_from_slice(&v);
        }
        let mut tape = Tape::new();
        let z = leaf(&mut tape, vec![0.0, 0.0]);
        let logits = fuse_classify(&mut tape, &store, z, z, z, z, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.3, -0.2, 0.1]);
    }

    #[test]
    fn fusion_rejects_mismatched_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_classifier(&mut store, 2, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![0.0, 0.0]);
        let b = leaf(&mut tape, vec![0.0, 0.0, 1.0]);
        assert!(matches!(fuse_classify(&mut tape, &store, a, a, a, b, 0.0, false, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(classify(&mut tape, &store, &[a], 0.0, false, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn analytic_aux_losses() {
        let mut tape = Tape::new();
        let zeros = tape.leaf(Tensor::zeros(&[3, 1]));
        let aux = aux_losses(&mut tape, Some((zeros, &[1.0, 1.0, 1.0])), Some(zeros), Some(zeros)).unwrap();
        for v in [aux.span, aux.pair, aux.rel] {
            assert!((tape.value(v.unwrap()).item() - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let sat = tape.leaf(Tensor::matrix(3, 1, vec![30.0, -30.0, 30.0]).unwrap());
        let aux = aux_losses(&mut tape, Some((sat, &[1.0, 0.0, 1.0])), None, None).unwrap();
        assert!(tape.value(aux.span.unwrap()).item() < 1e-9);
        assert!(aux.pair.is_none() && aux.rel.is_none());
    }

    #[test]
    fn aux_losses_match_a_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let logits = Tensor::uniform(&[6, 1], 5.0, &mut rng);
            let targets: Vec<f64> = (0..6).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let mut tape = Tape::new();
            let l = tape.leaf(logits.clone());
            let aux = aux_losses(&mut tape, Some((l, &targets)), Some(l), None).unwrap();
            let mut span_ref = 0.0;
            let mut pair_ref = 0.0;
            for (x, y) in logits.data().iter().zip(&targets) {
                let p = 1.0 / (1.0 + (-x).exp());
                span_ref -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                pair_ref -= p.ln();
            }
            assert!((tape.value(aux.span.unwrap()).item() - span_ref / 6.0).abs() < 1e-12);
            assert!((tape.value(aux.pair.unwrap()).item() - pair_ref / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_sums_and_reduces() {
        let mut tape = Tape::new();
        let uniform = leaf(&mut tape, vec![0.0, 0.0, 0.0]);
        let w = ClassWeights::uniform();
        let none = AuxLosses::default();
        for label in 0..3 {
            let ce = total_loss(&mut tape, uniform, label, &w, &none, &LossWeights::default()).unwrap();
            assert!((tape.value(ce).item() - 3f64.ln()).abs() < 1e-12);
        }

        // CE = 0 up to rounding: a saturated correct logit
        let sure = leaf(&mut tape, vec![800.0, 0.0, 0.0]);
        let s = tape.leaf(Tensor::scalar(0.5));
        let q = tape.leaf(Tensor::scalar(0.25));
        let aux = AuxLosses { span: Some(s), pair: Some(q), rel: Some(q) };
        let ones = LossWeights { lambda_span: 1.0, lambda_pair: 1.0, lambda_rel: 1.0 };
        let t = total_loss(&mut tape, sure, 0, &w, &aux, &ones).unwrap();
        assert_eq!(tape.value(t).item(), 1.0);

        let main = tape.weighted_cross_entropy(uniform, 1, 1.0).unwrap();
        let zero = total_loss(&mut tape, uniform, 1, &w, &aux, &LossWeights::ZERO).unwrap();
        assert_eq!(tape.value(zero).item().to_bits(), tape.value(main).item().to_bits());
    }

    #[test]
    fn negative_loss_weight_is_rejected() {
        let lw = LossWeights { lambda_span: -0.1, ..LossWeights::default() };
        assert!(matches!(lw.validate(), Err(Error::Config(_))));
    }
}
