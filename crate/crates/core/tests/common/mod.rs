//! Reference computations shared by the integration tests. Nothing here calls
//! into the numerical routines under test.

#![allow(dead_code)]

use gtmancer::diffcore::DenseMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

pub fn from_na(a: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    to_na(a).singular_values().max()
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Norm-wise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, or the absolute
/// gap when both are below `floor`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    max_abs_diff(a, b) / scale.max(floor)
}

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut acc = 0.0;
        for k in 0..a.cols() {
            acc += a.get(i, k) * b.get(k, j);
        }
        acc
    })
}

/// Symmetric non-negative matrix rescaled so that `‖S‖₂ = 3ρ`.
pub fn sym_with_radius(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> DenseMatrix {
    let a = uniform(rng, n, n, 0.0, 1.0);
    let s = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    s.scale(3.0 * rho / spectral_norm(&s))
}

/// Euclidean projection onto `{P = Pᵀ, P𝟙 = 𝟙}` by the least-squares KKT
/// system `p = r − Aᵀ(AAᵀ)⁺(Ar − b)`, with the redundant constraints handled
/// by the pseudo-inverse.
pub fn kkt_oracle(raw: &DenseMatrix) -> DenseMatrix {
    let m = raw.rows();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let mut r = vec![0.0; m * m];
            r[i * m + j] = 1.0;
            r[j * m + i] = -1.0;
            rows.push(r);
            b.push(0.0);
        }
    }
    for i in 0..m {
        let mut r = vec![0.0; m * m];
        for j in 0..m {
            r[i * m + j] = 1.0;
        }
        rows.push(r);
        b.push(1.0);
    }
    let a = DMatrix::from_fn(rows.len(), m * m, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_vec(b);
    let r = nalgebra::DVector::from_row_slice(raw.data());
    let gram_pinv = (&a * a.transpose()).pseudo_inverse(1e-12).expect("pseudo-inverse");
    let p = &r - a.transpose() * (gram_pinv * (&a * &r - b));
    DenseMatrix::from_fn(m, m, |i, j| p[i * m + j])
}

/// Multiplex objective by explicit loops: `½Σ_m tr(Zᵀ(I − S)Z)
/// + ¼Σ_en P_en‖Z^e − Z^n‖² + ½Σ_m‖Z − Z_init‖²`.
pub fn objective_oracle(z: &[DenseMatrix], z0: &[DenseMatrix], s: &[DenseMatrix], p: &DenseMatrix) -> f64 {
    let (n, d) = z[0].shape();
    let mut h = 0.0;
    for m in 0..z.len() {
        for c in 0..d {
            for i in 0..n {
                let mut si = 0.0;
                for j in 0..n {
                    si += s[m].get(i, j) * z[m].get(j, c);
                }
                h += 0.5 * z[m].get(i, c) * (z[m].get(i, c) - si);
            }
        }
        for i in 0..n {
            for c in 0..d {
                let r = z[m].get(i, c) - z0[m].get(i, c);
                h += 0.5 * r * r;
            }
        }
    }
    for e in 0..z.len() {
        for f in 0..z.len() {
            let mut dist = 0.0;
            for i in 0..n {
                for c in 0..d {
                    let r = z[e].get(i, c) - z[f].get(i, c);
                    dist += r * r;
                }
            }
            h += 0.25 * p.get(e, f) * dist;
        }
    }
    h
}

/// Central differences of `f` with respect to every entry of `params[k]`.
pub fn central_differences(f: &dyn Fn(&[DenseMatrix]) -> f64, params: &[DenseMatrix], h: f64) -> Vec<DenseMatrix> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|k| {
            let (r, c) = params[k].shape();
            DenseMatrix::from_fn(r, c, |i, j| {
                let x = params[k].get(i, j);
                work[k].set(i, j, x + h);
                let up = f(&work);
                work[k].set(i, j, x - h);
                let down = f(&work);
                work[k].set(i, j, x);
                (up - down) / (2.0 * h)
            })
        })
        .collect()
}

/// Multinomial logistic regression on standardized features, trained by
/// full-batch gradient descent with a small ridge penalty.
pub struct Logistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Logistic {
    pub fn fit(x: &DenseMatrix, y: &[usize], classes: usize, epochs: usize, lr: f64, l2: f64) -> Self {
        let (n, p) = x.shape();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for j in 0..p {
            mean[j] = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n as f64;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let mut model = Logistic {
            mean,
            scale,
            w: vec![vec![0.0; p]; classes],
            b: vec![0.0; classes],
        };
        let xs: Vec<Vec<f64>> = (0..n).map(|i| model.standardize(x.row(i))).collect();
        for _ in 0..epochs {
            let mut gw = vec![vec![0.0; p]; classes];
            let mut gb = vec![0.0; classes];
            for (xi, &yi) in xs.iter().zip(y) {
                let probs = model.probs_std(xi);
                for c in 0..classes {
                    let r = probs[c] - if c == yi { 1.0 } else { 0.0 };
                    gb[c] += r / n as f64;
                    for j in 0..p {
                        gw[c][j] += r * xi[j] / n as f64;
                    }
                }
            }
            for c in 0..classes {
                model.b[c] -= lr * gb[c];
                for j in 0..p {
                    model.w[c][j] -= lr * (gw[c][j] + l2 * model.w[c][j]);
                }
            }
        }
        model
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn probs_std(&self, xi: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(w, b)| b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let p = self.probs_std(&self.standardize(row));
        (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }
}

/// Accuracy and macro-F1 by explicit counting.
pub fn accuracy_macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> (f64, f64) {
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let mut f1 = 0.0;
    for c in 0..classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fneg = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        if tp > 0.0 {
            f1 += 2.0 * tp / (2.0 * tp + fp + fneg);
        }
    }
    (correct as f64 / truth.len() as f64, f1 / classes as f64)
}

/// Logistic oracle trained on `train` rows and scored on `test` rows.
pub fn logistic_scores(x: &DenseMatrix, labels: &[usize], classes: usize, train: &[usize], test: &[usize]) -> (f64, f64) {
    let xt = x.select_rows(train);
    let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = Logistic::fit(&xt, &yt, classes, 500, 0.5, 1e-3);
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let pred: Vec<usize> = test.iter().map(|&i| model.predict(x.row(i))).collect();
    accuracy_macro_f1(&truth, &pred, classes)
}
