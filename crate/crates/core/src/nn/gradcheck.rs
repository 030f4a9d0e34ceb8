use alloc::vec::Vec;

use super::tape::{NodeId, Tape};
use super::tensor::{absorb_grads, bind, Binding, Module};
use crate::math;
use crate::{Error, Result};

/// Denominator floor of the relative error, so components whose true
/// gradient is numerically zero are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Compares tape gradients against central finite differences for every
/// parameter component and returns the worst relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
///
/// `objective` records a scalar loss on the given tape using the model's
/// binding; it must be deterministic (fix dropout masks and sampling
/// outside the closure).
pub fn grad_check<M, F>(model: &M, epsilon: f64, objective: F) -> Result<f64>
where
    M: Module + Clone,
    F: Fn(&M, &mut Tape, &Binding) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config("epsilon must lie in [1e-7, 1e-3]".into()));
    }
    if model.param_count() == 0 {
        return Ok(0.0);
    }

    let mut analytic_model = model.clone();
    analytic_model.zero_grad();
    let mut tape = Tape::new();
    let binding = bind(&analytic_model, &mut tape);
    let loss = objective(&analytic_model, &mut tape, &binding)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grads = tape.backward(loss);
    absorb_grads(&mut analytic_model, &binding, &grads);
    let mut analytic = Vec::new();
    analytic_model.visit(&mut |t| analytic.extend_from_slice(t.grad().unwrap()));

    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let b = bind(m, &mut tape);
        let l = objective(m, &mut tape, &b)?;
        let v = tape.scalar(l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss"))
        }
    };

    let base = model.flat_values();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + epsilon;
        probe.load_flat(&values)?;
        let up = eval(&probe)?;
        values[i] = base[i] - epsilon;
        probe.load_flat(&values)?;
        let down = eval(&probe)?;
        values[i] = base[i];

        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let denom = math::abs(a).max(math::abs(numeric)).max(REL_ERROR_FLOOR);
        worst = worst.max(math::abs(a - numeric) / denom);
    }
    Ok(worst)
}
