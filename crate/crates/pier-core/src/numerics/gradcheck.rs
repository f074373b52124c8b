//! Central finite-difference verification of backward rules.
//!
//! The checker never touches a backward pass for its reference values: it
//! rebuilds the forward graph at `f64` under elementwise perturbations and
//! differences the loss. Analytic gradients from [`Tape::backward`] are then
//! compared against that reference, at both precisions.

use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Central-difference step, applied at 64-bit.
pub const FD_STEP: f64 = 1e-4;

/// Acceptable max relative error at 64-bit precision.
pub const TOL_F64: f64 = 1e-5;

/// Acceptable max relative error when the analytic side runs at 32-bit.
pub const TOL_F32: f64 = 1e-3;

/// A differentiable computation expressed over any scalar precision.
///
/// Implementations receive leaf variables in the same order as the `inputs`
/// slice passed to the checker and must return a scalar loss.
pub trait GraphSpec {
    fn build<F: Real>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> CoreResult<Var>;
}

/// One differentiable input: a shape plus its values at 64-bit.
#[derive(Debug, Clone)]
pub struct CheckInput {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckInput {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        CheckInput { shape, values }
    }
}

fn eval_f64<S: GraphSpec>(spec: &S, inputs: &[CheckInput]) -> CoreResult<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|inp| {
            tape.leaf(
                &Tensor::from_vec(inp.shape.clone(), inp.values.clone())
                    .expect("check input shape"),
            )
        })
        .collect();
    let loss = spec.build(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Central finite differences of the loss w.r.t. every input element,
/// evaluated at 64-bit regardless of the precision under test.
pub fn finite_differences<S: GraphSpec>(
    spec: &S,
    inputs: &[CheckInput],
) -> CoreResult<Vec<Vec<f64>>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[ti].values.len());
        for ei in 0..inputs[ti].values.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values[ei] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ti].values[ei] -= FD_STEP;
            let f_plus = eval_f64(spec, &plus)?;
            let f_minus = eval_f64(spec, &minus)?;
            g.push((f_plus - f_minus) / (2.0 * FD_STEP));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Analytic gradients at precision `F` via the tape's backward pass.
pub fn analytic_gradients<F: Real, S: GraphSpec>(
    spec: &S,
    inputs: &[CheckInput],
) -> CoreResult<Vec<Vec<f64>>> {
    let mut tape = Tape::<F>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|inp| {
            let data: Vec<F> = inp.values.iter().map(|v| F::from_f64(*v)).collect();
            tape.leaf(
                &Tensor::from_vec(inp.shape.clone(), data)
                    .expect("check input shape")
                    .with_requires_grad(true),
            )
        })
        .collect();
    let loss = spec.build(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|v| {
            tape.grad(*v)
                .expect("input requires grad")
                .iter()
                .map(|g| g.as_f64())
                .collect()
        })
        .collect())
}

/// Max relative error between analytic gradients at precision `F` and the
/// 64-bit finite-difference reference. Each element's error is scaled by the
/// sup-norm of its tensor's reference gradient, floored at a small fraction
/// of the instance-wide gradient scale so near-zero components do not blow
/// up the ratio.
pub fn max_rel_error<F: Real, S: GraphSpec>(spec: &S, inputs: &[CheckInput]) -> CoreResult<f64> {
    let analytic = analytic_gradients::<F, S>(spec, inputs)?;
    let reference = finite_differences(spec, inputs)?;
    let instance_scale = reference
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0f64;
    for (a, r) in analytic.iter().zip(reference.iter()) {
        let scale = r
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1e-3 * instance_scale)
            .max(1e-8);
        for (av, rv) in a.iter().zip(r.iter()) {
            let rel = (av - rv).abs() / scale;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Runs the dual-precision check and panics with context on failure. The
/// standard assertion used by every kernel's gradient suite.
pub fn assert_gradients<S: GraphSpec>(name: &str, spec: &S, inputs: &[CheckInput]) {
    let e64 = max_rel_error::<f64, S>(spec, inputs)
        .unwrap_or_else(|e| panic!("{name}: 64-bit check failed to run: {e}"));
    assert!(
        e64 <= TOL_F64,
        "{name}: 64-bit gradient error {e64:.3e} exceeds {TOL_F64:.0e}"
    );
    let e32 = max_rel_error::<f32, S>(spec, inputs)
        .unwrap_or_else(|e| panic!("{name}: 32-bit check failed to run: {e}"));
    assert!(
        e32 <= TOL_F32,
        "{name}: 32-bit gradient error {e32:.3e} exceeds {TOL_F32:.0e}"
    );
}
