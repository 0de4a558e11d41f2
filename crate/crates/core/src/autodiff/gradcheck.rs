//! Central finite-difference check of tape gradients.

use std::fmt;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-3;

/// Denominator floor for the relative error. Gradients smaller than this are
/// effectively compared in absolute terms (`|a - n| / floor`), so an exactly
/// zero gradient is not reported as an infinite relative error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<40} max_rel_err={:.3e} at [{}] (analytic {:.6e}, numeric {:.6e})",
                t.name, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        write!(f, "{} (tol {:.1e})", if self.passed() { "PASS" } else { "FAIL" }, self.tol)
    }
}

fn eval_scalar(tape: &Tape, out: Var) -> Result<f64> {
    let t = tape.value(out);
    if t.numel() != 1 {
        return Err(Error::contract(format!("grad_check needs a scalar-valued function, got shape {:?}", t.shape())));
    }
    Ok(t.item())
}

/// Compare tape gradients of `f` with central differences at every
/// coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = run(inputs)?;
    eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut tensors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut check =
            TensorCheck { name: format!("input{i}"), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for k in 0..inputs[i].numel() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let (t, _, o) = run(&work)?;
            let plus = eval_scalar(&t, o)?;
            work[i].data_mut()[k] = orig - eps;
            let (t, _, o) = run(&work)?;
            let minus = eval_scalar(&t, o)?;
            work[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k], numeric);
            if err > check.max_rel_error || k == 0 {
                check = TensorCheck { max_rel_error: err, worst_index: k, analytic: analytic[k], numeric, ..check };
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, tol })
}

/// Same check, perturbing every coordinate of every parameter in `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    eval_scalar(&tape, out)?;
    tape.backward(out)?.accumulate_into(&tape, &mut work);

    let analytic: Vec<Vec<f64>> = work.iter().map(|(_, p)| p.grad.clone()).collect();
    let mut tensors = Vec::with_capacity(work.len());
    for (pi, analytic) in analytic.iter().enumerate() {
        let name = work.by_index(pi).0.to_string();
        let mut check = TensorCheck { name, max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for k in 0..analytic.len() {
            let orig = work.by_index(pi).1.value.data()[k];
            let probe = |delta: f64, work: &mut ParamStore| -> Result<f64> {
                work.by_index_mut(pi).1.value.data_mut()[k] = orig + delta;
                let mut t = Tape::new();
                let o = f(&mut t, work)?;
                eval_scalar(&t, o)
            };
            let plus = probe(eps, &mut work)?;
            let minus = probe(-eps, &mut work)?;
            work.by_index_mut(pi).1.value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k], numeric);
            if err > check.max_rel_error || k == 0 {
                check.max_rel_error = err;
                check.worst_index = k;
                check.analytic = analytic[k];
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_passes() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).reshape(vec![1, 3]).unwrap();
        let report = grad_check(|t, _| Ok(t.leaf(Tensor::scalar(4.0))), &[x], DEFAULT_EPS, DEFAULT_TOL).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn non_scalar_function_is_a_contract_error() {
        let x = Tensor::zeros(&[1, 3]);
        let err = grad_check(|_, v| Ok(v[0]), &[x], DEFAULT_EPS, DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // x * detach(x): the tape sees only one path, so analytic = x, numeric = 2x
        let x = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
        let report = grad_check(
            |t, v| {
                let detached = t.leaf(t.value(v[0]).clone());
                let y = t.mul(v[0], detached)?;
                Ok(t.sum(y))
            },
            &[x],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
