//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Relative error with a guarded denominator, as used by every gradient
/// comparison in the test suite.
pub fn relative_error(a: f32, b: f32) -> f32 {
    (a - b).abs() / f32::max(a.abs().max(b.abs()), 1e-8)
}

/// Checks the analytic gradient of a scalar-valued tape function against a
/// central finite difference at `point`, returning the maximum relative error
/// over all elements.
///
/// `build` must record the function on the provided tape starting from the
/// given input node and return the scalar output node.
pub fn grad_check<F>(build: F, point: &Tensor, eps: f32) -> Result<f32>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let pairs = grad_check_pairs(build, point, eps)?;
    Ok(pairs.iter().map(|&(a, n)| relative_error(a, n)).fold(0.0, f32::max))
}

/// As [`grad_check`], but returns the raw per-element (analytic, numeric)
/// gradient pairs so callers can apply a mixed absolute/relative tolerance —
/// needed because an f32 finite difference has an absolute noise floor that
/// makes pure relative error meaningless on near-zero entries.
pub fn grad_check_pairs<F>(build: F, point: &Tensor, eps: f32) -> Result<Vec<(f32, f32)>>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }

    let eval = |data: &[f32]| -> Result<f32> {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(point.shape().to_vec(), data.to_vec())?.with_requires_grad(true),
        );
        let out = build(&mut tape, x)?;
        if tape.value(out).len() != 1 {
            return Err(Error::NonScalarOutput { len: tape.value(out).len() });
        }
        Ok(tape.value(out)[0])
    };

    // Analytic gradient at the base point.
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone().with_requires_grad(true));
    let out = build(&mut tape, x)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NonScalarOutput { len: tape.value(out).len() });
    }
    let analytic = tape.backward(out, &[x], false)?.remove(0);

    let mut pairs = Vec::with_capacity(point.len());
    let mut data = point.data().to_vec();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let plus = eval(&data)?;
        data[i] = orig - eps;
        let minus = eval(&data)?;
        data[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        pairs.push((analytic.data()[i], numeric));
    }
    Ok(pairs)
}
