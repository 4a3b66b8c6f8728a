use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Compares the tape's analytic gradient of a scalar function against central
/// finite differences and returns the worst coordinate's relative error,
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-8)`.
///
/// `f` receives a fresh tape with `x` registered as a leaf and must return
/// a scalar.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |input: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(input);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item()?.as_f64())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![T::zero(); x.numel()]);

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] = T::of(x.data()[i].as_f64() + h);
        let mut minus = x.clone();
        minus.data_mut()[i] = T::of(x.data()[i].as_f64() - h);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
