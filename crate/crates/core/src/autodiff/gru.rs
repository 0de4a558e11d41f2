use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const GATES: [&str; 3] = ["z", "r", "h"];

/// Register GRU parameters under `prefix`: `w_{z,r,h}` `[d_in, d_h]`,
/// `u_{z,r,h}` `[d_h, d_h]`, `b_{z,r,h}` `[d_h]`. The update-gate bias starts
/// at `update_bias`.
pub fn init_gru<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_h: usize,
    update_bias: f64,
    rng: &mut R,
) -> Result<()> {
    for g in GATES {
        let bound_w = 1.0 / (d_in as f64).sqrt();
        let bound_u = 1.0 / (d_h as f64).sqrt();
        store.insert(format!("{prefix}.w_{g}"), Tensor::uniform(&[d_in, d_h], bound_w, rng))?;
        store.insert(format!("{prefix}.u_{g}"), Tensor::uniform(&[d_h, d_h], bound_u, rng))?;
        let b = if g == "z" { update_bias } else { 0.0 };
        store.insert(format!("{prefix}.b_{g}"), Tensor::full(&[d_h], b))?;
    }
    Ok(())
}

/// One GRU step on row vectors `x: [1, d_in]`, `h_prev: [1, d_h]`:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_cell(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, h_prev: Var) -> Result<Var> {
    let p = |t: &mut Tape, n: &str| t.param(store, &format!("{prefix}.{n}"));
    let (d_in, d_h) = match store.value(&format!("{prefix}.w_z"))?.shape() {
        [a, b] => (*a, *b),
        s => return Err(Error::dim(format!("gru weight shape {s:?}"))),
    };
    if tape.shape(x) != [1, d_in] || tape.shape(h_prev) != [1, d_h] {
        return Err(Error::dim(format!(
            "gru_cell expects x [1, {d_in}] and h [1, {d_h}], got {:?} and {:?}",
            tape.shape(x),
            tape.shape(h_prev)
        )));
    }

    let gate = |t: &mut Tape, g: &str, h_in: Var| -> Result<Var> {
        let (w, u, b) = (p(t, &format!("w_{g}"))?, p(t, &format!("u_{g}"))?, p(t, &format!("b_{g}"))?);
        let xw = t.matmul(x, w)?;
        let hu = t.matmul(h_in, u)?;
        let s = t.add(xw, hu)?;
        t.add_row(s, b)
    };

    let z_pre = gate(tape, "z", h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, "r", h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let c_pre = gate(tape, "h", rh)?;
    let cand = tape.tanh(c_pre);

    // h + z * (h~ - h)
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store(d: usize) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_gru(&mut s, "gru", d, d, 0.0, &mut rng).unwrap();
        for (_, p) in s.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        s
    }

    #[test]
    fn zero_params_halve_the_state() {
        let store = zero_store(3);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 3, vec![5.0, -1.0, 2.0]).unwrap());
        let h = t.leaf(Tensor::matrix(1, 3, vec![0.4, -0.8, 1.2]).unwrap());
        let out = gru_cell(&mut t, &store, "gru", x, h).unwrap();
        assert_eq!(t.value(out).data(), &[0.2, -0.4, 0.6]);
    }

    #[test]
    fn zero_state_is_a_fixed_point_of_zero_params() {
        let store = zero_store(2);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let h = t.leaf(Tensor::zeros(&[1, 2]));
        let out = gru_cell(&mut t, &store, "gru", x, h).unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let store = zero_store(2);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 3]));
        let h = t.leaf(Tensor::zeros(&[1, 2]));
        assert!(matches!(gru_cell(&mut t, &store, "gru", x, h), Err(Error::Dimension(_))));
    }
}
