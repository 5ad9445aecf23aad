//! Central-difference gradient verification.

use super::params::{GradBuffer, ParamSet};
use crate::error::{Error, Result};

/// `(f(+ε) − f(−ε)) / 2ε` for a function of a scalar perturbation.
pub fn central_difference<F>(epsilon: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let plus = f(epsilon)?;
    let minus = f(-epsilon)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    Ok((plus - minus) / (2.0 * epsilon))
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` for every scalar in
/// `params` (or every `stride`-th one), returning the maximum of
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParamSet,
    analytic: &GradBuffer,
    epsilon: f64,
    stride: usize,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid("gradient buffer does not match parameter set"));
    }
    let base = f(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let stride = stride.max(1);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    let mut counter = 0usize;
    for id in params.ids() {
        for idx in 0..params.get(id).len() {
            counter += 1;
            if (counter - 1) % stride != 0 {
                continue;
            }
            let original = params.get(id).data()[idx];
            let numeric = central_difference(epsilon, |delta| {
                work.get_mut(id).data_mut()[idx] = original + delta;
                f(&work)
            })?;
            work.get_mut(id).data_mut()[idx] = original;
            let a = analytic.get(id).data()[idx];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), idx));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    fn square_problem(x: f64) -> (ParamSet, GradBuffer) {
        let mut p = ParamSet::new();
        let id = p.add("x", Tensor::scalar(x));
        let mut g = Graph::new();
        let v = g.param(id, p.get(id));
        let y = g.mul(v, v).unwrap();
        let grads = g.backward(y, 1.0).unwrap();
        let mut buf = GradBuffer::zeros_like(&p);
        grads.accumulate_into(&mut buf, 1.0).unwrap();
        (p, buf)
    }

    #[test]
    fn square_at_three() {
        let (p, buf) = square_problem(3.0);
        let report = finite_diff_check(
            |ps| Ok(ps.get(ps.find("x").unwrap()).data()[0].powi(2)),
            &p,
            &buf,
            1e-5,
            1,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn constant_function_passes() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::vector(vec![1.0, -2.0]));
        let buf = GradBuffer::zeros_like(&p);
        let report = finite_diff_check(|_| Ok(4.0), &p, &buf, 1e-5, 1).unwrap();
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn rejects_bad_epsilon_and_non_finite() {
        let (p, buf) = square_problem(1.0);
        assert!(finite_diff_check(|_| Ok(0.0), &p, &buf, 1e-2, 1).is_err());
        assert!(finite_diff_check(|_| Ok(f64::NAN), &p, &buf, 1e-5, 1).is_err());
    }
}
