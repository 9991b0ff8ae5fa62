use serde::Serialize;

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::DenseMatrix;
use crate::error::{Error, Result};

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    /// Worst entrywise relative error for each parameter, in input order.
    pub per_param: Vec<f64>,
    pub max_relative_error: f64,
}

/// Builds `f` on a fresh tape with `params` registered and returns the scalar
/// output value.
pub fn evaluate<F>(f: &F, params: &[DenseMatrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape
        .scalar_value(out)
        .ok_or_else(|| Error::Contract("checked function must return a 1x1 node".into()))?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value is {v}")));
    }
    Ok(v)
}

/// Analytic gradients of `f` at `params`.
pub fn analytic_gradients<F>(f: &F, params: &[DenseMatrix]) -> Result<(f64, Vec<DenseMatrix>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape
        .scalar_value(out)
        .ok_or_else(|| Error::Contract("checked function must return a 1x1 node".into()))?;
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("function value is {value}")));
    }
    let grads = tape.backward(out)?;
    let gs = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("parameters always have gradients"))
        .collect();
    Ok((value, gs))
}

/// Central-difference check `(f(p+h) − f(p−h)) / 2h` of every parameter
/// entry. Relative error uses `max(|analytic|, |numeric|, 1e-12)` as the
/// denominator.
pub fn grad_check<F>(f: F, params: &[DenseMatrix], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step h must be > 0, got {h}")));
    }
    let (_, analytic) = analytic_gradients(&f, params)?;
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..grad.data().len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let fp = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig - h;
            let fm = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
        per_param.push(worst);
    }
    let max_relative_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        max_relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = DenseMatrix::from_fn(3, 2, |i, j| (i as f64) - 0.7 * j as f64);
        let r = grad_check(|t, p| Ok(t.sum(p[0])), &[w], 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-10, "{r:?}");
    }

    #[test]
    fn non_finite_value_is_evaluation_error() {
        let w = DenseMatrix::filled(1, 1, 1000.0);
        let res = grad_check(
            |t, p| {
                let e = t.exp(p[0]);
                Ok(t.sum(e))
            },
            &[w],
            1e-5,
        );
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn report_max_dominates_entries() {
        let a = DenseMatrix::from_fn(2, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let b = DenseMatrix::from_fn(2, 2, |i, j| 0.5 - 0.4 * (i * j) as f64);
        let r = grad_check(
            |t, p| {
                let m = t.matmul(p[0], p[1])?;
                let e = t.exp(m);
                Ok(t.sum(e))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.per_param.len(), 2);
        assert!(r.per_param.iter().all(|v| *v <= r.max_relative_error));
    }
}
