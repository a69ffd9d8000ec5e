//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::numeric::{GradTape, Tensor, Var};

/// Elementwise relative error with a `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences with the given `step`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut GradTape<f64>, Var) -> Result<Var>,
{
    let errs = grad_check_params(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)?;
    Ok(errs[0])
}

/// Per-tensor max relative error for a scalar function of several inputs.
pub fn grad_check_params<F>(f: F, params: &[Tensor<f64>], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut GradTape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = GradTape::inference();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.value(out).data()[0];
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("f(x) = {f0}")));
    }
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut worst: f64 = 0.0;
        for c in 0..params[pi].len() {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite(format!("perturbed f at tensor {pi}, coordinate {c}")));
            }
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[c], numeric));
        }
        errors.push(worst);
    }
    Ok(errors)
}
