use crate::diffcore::matrix::{norm2, DenseMatrix};
use crate::error::{Error, Result};

/// Leading singular triplet `A v = σ u`.
#[derive(Debug, Clone)]
pub struct TopSingular {
    pub sigma: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub iterations: usize,
}

/// Largest singular value of a square matrix, by power iteration on `AᵀA`.
pub fn spectral_norm(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    top_singular(a, tol, max_iter).map(|t| t.sigma)
}

/// Power iteration on `AᵀA`, stopped when the relative change of the
/// singular-value estimate drops below `tol`.
///
/// The first run starts from the uniform unit vector. Because the uniform
/// vector is an exact eigenvector of many structured matrices (anything built
/// from `I` and `𝟙𝟙ᵀ`), a second run from a fixed non-uniform vector is made
/// and the larger estimate kept. Both starts are constants, so the result is
/// deterministic.
pub fn top_singular(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<TopSingular> {
    if !a.is_square() {
        return Err(Error::shape(
            "spectral_norm",
            format!("{:?} not square", a.shape()),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("spectral tolerance must be > 0, got {tol}")));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(TopSingular {
            sigma: 0.0,
            left: vec![],
            right: vec![],
            iterations: 0,
        });
    }
    let uniform = vec![1.0 / (n as f64).sqrt(); n];
    let first = power_run(a, uniform, tol, max_iter)?;
    if n == 1 {
        return Ok(first);
    }
    let mut alt: Vec<f64> = (0..n).map(|i| (1.0 + 2.399_963_229_728_653 * i as f64).sin()).collect();
    let nrm = norm2(&alt);
    alt.iter_mut().for_each(|v| *v /= nrm);
    let second = power_run(a, alt, tol, max_iter)?;
    Ok(if second.sigma > first.sigma * (1.0 + tol) {
        second
    } else {
        first
    })
}

fn power_run(a: &DenseMatrix, mut v: Vec<f64>, tol: f64, max_iter: usize) -> Result<TopSingular> {
    let at = a.transpose();
    let mut sigma_prev = f64::NAN;
    for it in 1..=max_iter {
        let w = a.matvec(&v)?;
        let sigma = norm2(&w);
        if sigma == 0.0 {
            return Ok(TopSingular {
                sigma: 0.0,
                left: vec![0.0; v.len()],
                right: v,
                iterations: it,
            });
        }
        let x = at.matvec(&w)?;
        let nx = norm2(&x);
        let converged = (sigma - sigma_prev).abs() <= tol * sigma;
        if converged {
            let left = w.iter().map(|wi| wi / sigma).collect();
            return Ok(TopSingular {
                sigma,
                left,
                right: v,
                iterations: it,
            });
        }
        sigma_prev = sigma;
        v = x.into_iter().map(|xi| xi / nx).collect();
    }
    Err(Error::SpectralNotConverged {
        iterations: max_iter,
        estimate: sigma_prev,
    })
}
