//! Central-difference gradient checks.

use super::array::DenseArray;
use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, point: &DenseArray) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone())?;
    let out = f(&mut tape, x)?;
    tape.value(out).item()
}

/// Max relative error between the tape gradient of `f` at `point` and
/// central differences, over every coordinate of `point`.
pub fn grad_check<F>(f: F, point: &DenseArray) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone())?;
    let out = f(&mut tape, x)?;
    let analytic = tape.backward(out)?.wrt(&tape, x);

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same as [`grad_check`] but differentiates with respect to every entry of
/// every parameter in `store`.
pub fn grad_check_params<F>(store: &ParameterStore, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let analytic = tape.backward(out)?.param_grads(store);

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(&mut t, s)?;
        t.value(o).item()
    };

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.get(id).data()[i], numeric));
        }
    }
    Ok(worst)
}
