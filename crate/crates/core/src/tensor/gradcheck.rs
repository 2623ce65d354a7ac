//! Central finite-difference verification of reverse-mode gradients.

use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Finite-difference step (64-bit arithmetic).
pub const FD_STEP: f64 = 1e-5;

/// An op under the gradient-check contract: a forward built from tape
/// primitives plus a generator of representative inputs.
pub trait DifferentiableOp: Send + Sync {
    fn name(&self) -> &str;

    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Tensor>>;

    fn forward(&self, tape: &Tape, inputs: &[Var]) -> Result<Var>;

    /// Indices of the inputs that are differentiated; the rest are held constant.
    fn differentiable_inputs(&self, n_inputs: usize) -> Vec<usize> {
        (0..n_inputs).collect()
    }

    fn tolerance(&self) -> f64 {
        1e-5
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    /// Largest per-input `‖analytic − fd‖∞ / max(‖analytic‖∞, ‖fd‖∞)`.
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

fn loss_of<F>(inputs: &[Tensor], track: &[bool], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .zip(track)
        .map(|(t, &g)| tape.leaf(t.clone(), g))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    let loss = tape.sum(out)?;
    Ok((tape, vars, loss))
}

/// Compares the tape gradient of `sum(f(inputs))` against central differences
/// for every input. Non-finite values anywhere abort with the offending op.
pub fn grad_check<F>(name: &str, inputs: &[Tensor], f: F, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..inputs.len()).collect();
    grad_check_subset(name, inputs, &all, f, tol)
}

pub fn grad_check_subset<F>(
    name: &str,
    inputs: &[Tensor],
    wrt: &[usize],
    f: F,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite { op: name.into() });
    }
    let track: Vec<bool> = (0..inputs.len()).map(|i| wrt.contains(&i)).collect();
    let (tape, vars, loss) = loss_of(inputs, &track, &f)?;
    let mut grads = tape.backward(loss)?;
    drop(tape);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let none = vec![false; xs.len()];
        let (tape, _, loss) = loss_of(xs, &none, &f)?;
        let v = tape.value(loss).item();
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for &i in wrt {
        let analytic = grads
            .take(vars[i])
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut fd = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            fd.data_mut()[j] = (up - down) / (2.0 * FD_STEP);
        }
        let diff = analytic.max_abs_diff(&fd);
        let scale = analytic
            .data()
            .iter()
            .chain(fd.data())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let err = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(err);
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        max_rel_error: worst,
        tol,
        passed: worst <= tol,
    })
}

/// Runs `op` on inputs drawn from `rng` at the op's own tolerance, or `tol` if given.
pub fn check_op(op: &dyn DifferentiableOp, rng: &mut ChaCha8Rng, tol: Option<f64>) -> Result<GradCheckReport> {
    let inputs = op.sample_inputs(rng)?;
    let wrt = op.differentiable_inputs(inputs.len());
    grad_check_subset(
        op.name(),
        &inputs,
        &wrt,
        |tape, vars| op.forward(tape, vars),
        tol.unwrap_or_else(|| op.tolerance()),
    )
}

pub use crate::gradcheck_suite::registered_ops;
