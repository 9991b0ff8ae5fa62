//! Learned similarity structure: intra-modality sample attention, the
//! modality coupling matrix, and its projection onto symmetric matrices with
//! unit row and column sums.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseMatrix, Lu, Tape, Var};
use crate::error::{Error, Result};

/// Upper bound on `‖S‖₂` after the spectral-safety rescale (`ρ(S/3) ≤ 0.9`).
pub const SPECTRAL_LIMIT: f64 = 2.7;
pub const DYKSTRA_TOL: f64 = 1e-8;
pub const DYKSTRA_MAX_ITER: usize = 10_000;
pub const SPECTRAL_MAX_ITER: usize = 100_000;

/// Key/query projections for one propagation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    pub intra_key: Vec<DenseMatrix>,
    pub intra_query: Vec<DenseMatrix>,
    pub inter_key: DenseMatrix,
    pub inter_query: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub layers: Vec<LayerAttention>,
}

impl AttentionWeights {
    pub fn validate(&self, modalities: usize, d: usize) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            let ok = layer.intra_key.len() == modalities
                && layer.intra_query.len() == modalities
                && layer
                    .intra_key
                    .iter()
                    .chain(&layer.intra_query)
                    .chain([&layer.inter_key, &layer.inter_query])
                    .all(|w| w.shape() == (d, d));
            if !ok {
                return Err(Error::shape(
                    "attention_weights",
                    format!("layer {k} is not {modalities} pairs of {d}x{d} plus a shared pair"),
                ));
            }
        }
        Ok(())
    }
}

/// Stopping evidence from [`dykstra_project`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub iterations_used: usize,
    pub max_row_sum_violation: f64,
    pub max_asymmetry: f64,
    pub converged: bool,
}

/// The stages of one intra-attention evaluation.
#[derive(Debug, Clone)]
pub struct IntraAttention {
    /// `1 + cos(key_i, query_j)`, before symmetrization.
    pub raw: DenseMatrix,
    pub symmetrized: DenseMatrix,
    /// `symmetrized · factor`.
    pub s: DenseMatrix,
    pub factor: f64,
}

/// Intra-modality attention for one modality and layer.
pub fn intra_attention(
    z: &DenseMatrix,
    w_key: &DenseMatrix,
    w_query: &DenseMatrix,
    spectral_tol: f64,
) -> Result<IntraAttention> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let k = tape.constant(w_key.clone());
    let q = tape.constant(w_query.clone());
    let stages = intra_stages(&mut tape, zv, k, q, spectral_tol)?;
    Ok(IntraAttention {
        raw: tape.value(stages.raw).clone(),
        symmetrized: tape.value(stages.symmetrized).clone(),
        s: tape.value(stages.capped).clone(),
        factor: stages.factor,
    })
}

struct IntraStages {
    raw: Var,
    symmetrized: Var,
    capped: Var,
    factor: f64,
}

fn intra_stages(tape: &mut Tape, z: Var, w_key: Var, w_query: Var, tol: f64) -> Result<IntraStages> {
    let keys = tape.matmul(z, w_key)?;
    let keys = tape.row_normalize(keys)?;
    let queries = tape.matmul(z, w_query)?;
    let queries = tape.row_normalize(queries)?;
    let qt = tape.transpose(queries);
    let cos = tape.matmul(keys, qt)?;
    let raw = tape.add_scalar(cos, 1.0);
    let rt = tape.transpose(raw);
    let both = tape.add(raw, rt)?;
    let symmetrized = tape.scale(both, 0.5);
    let (capped, factor) = tape.spectral_cap(symmetrized, SPECTRAL_LIMIT, tol, SPECTRAL_MAX_ITER)?;
    Ok(IntraStages {
        raw,
        symmetrized,
        capped,
        factor,
    })
}

/// Recorded intra attention; returns the capped matrix and the factor applied.
pub fn intra_attention_on(tape: &mut Tape, z: Var, w_key: Var, w_query: Var, tol: f64) -> Result<(Var, f64)> {
    let st = intra_stages(tape, z, w_key, w_query, tol)?;
    Ok((st.capped, st.factor))
}

/// Scalar reduction of two projected `N × d` embeddings inside the coupling
/// score `1 + exp(−x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterReduction {
    /// `x = ⟨A, B⟩_F / (N d)`.
    Scaled,
    /// `x = ⟨A, B⟩_F / (‖A‖_F ‖B‖_F)`, so `x ∈ [−1, 1]`.
    #[default]
    Cosine,
}

impl std::fmt::Display for InterReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InterReduction::Scaled => "scaled",
            InterReduction::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for InterReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scaled" => Ok(InterReduction::Scaled),
            "cosine" => Ok(InterReduction::Cosine),
            other => Err(Error::Parameter(format!("unknown inter-attention reduction '{other}'"))),
        }
    }
}

/// `P_em = 1 + exp(−⟨Z^e W_K, Z^m W_Q⟩_F / (N d))`.
pub fn inter_attention_raw(z: &[DenseMatrix], w_key: &DenseMatrix, w_query: &DenseMatrix) -> Result<DenseMatrix> {
    inter_attention_raw_with(z, w_key, w_query, InterReduction::Scaled)
}

pub fn inter_attention_raw_with(
    z: &[DenseMatrix],
    w_key: &DenseMatrix,
    w_query: &DenseMatrix,
    reduction: InterReduction,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let zs: Vec<Var> = z.iter().map(|m| tape.constant(m.clone())).collect();
    let k = tape.constant(w_key.clone());
    let q = tape.constant(w_query.clone());
    let p = inter_attention_raw_on(&mut tape, &zs, k, q, reduction)?;
    Ok(tape.value(p).clone())
}

pub fn inter_attention_raw_on(
    tape: &mut Tape,
    z: &[Var],
    w_key: Var,
    w_query: Var,
    reduction: InterReduction,
) -> Result<Var> {
    let m = z.len();
    if m == 0 {
        return Err(Error::Contract("inter attention needs at least one modality".into()));
    }
    let (n, d) = tape.value(z[0]).shape();
    let mut keys: Vec<Var> = z.iter().map(|&v| tape.matmul(v, w_key)).collect::<Result<_>>()?;
    let mut queries: Vec<Var> = z.iter().map(|&v| tape.matmul(v, w_query)).collect::<Result<_>>()?;
    let scale = match reduction {
        InterReduction::Scaled => -1.0 / (n * d) as f64,
        InterReduction::Cosine => {
            keys = keys.into_iter().map(|v| tape.frob_normalize(v)).collect::<Result<_>>()?;
            queries = queries.into_iter().map(|v| tape.frob_normalize(v)).collect::<Result<_>>()?;
            -1.0
        }
    };
    let mut entries = Vec::with_capacity(m * m);
    for e in 0..m {
        for q in &queries {
            let ip = tape.frob_dot(keys[e], *q)?;
            let x = tape.scale(ip, scale);
            let ex = tape.exp(x);
            entries.push(tape.add_scalar(ex, 1.0));
        }
    }
    tape.from_scalars(&entries, m, m)
}

fn row_violation(p: &DenseMatrix) -> f64 {
    p.row_sums()
        .into_iter()
        .chain(p.col_sums())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn project_symmetric(x: &DenseMatrix) -> DenseMatrix {
    x.symmetrized().expect("square")
}

fn project_rows(x: &DenseMatrix) -> DenseMatrix {
    let m = x.rows();
    let sums = x.row_sums();
    DenseMatrix::from_fn(m, m, |i, j| x.get(i, j) + (1.0 - sums[i]) / m as f64)
}

fn project_cols(x: &DenseMatrix) -> DenseMatrix {
    let m = x.rows();
    let sums = x.col_sums();
    DenseMatrix::from_fn(m, m, |i, j| x.get(i, j) + (1.0 - sums[j]) / m as f64)
}

/// Dykstra's cyclic projection onto `{P = Pᵀ, P𝟙 = 𝟙, Pᵀ𝟙 = 𝟙}`.
pub fn dykstra_project(p_raw: &DenseMatrix, tol: f64, max_iter: usize) -> Result<(DenseMatrix, ProjectionReport)> {
    if !p_raw.is_square() {
        return Err(Error::shape("dykstra_project", format!("{:?} is not square", p_raw.shape())));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("projection tolerance must be positive, got {tol}")));
    }
    let m = p_raw.rows();
    let projections: [fn(&DenseMatrix) -> DenseMatrix; 3] = [project_symmetric, project_rows, project_cols];
    let mut increments = vec![DenseMatrix::zeros(m, m); 3];
    let mut x = p_raw.clone();
    let mut report = ProjectionReport {
        iterations_used: 0,
        max_row_sum_violation: row_violation(&x),
        max_asymmetry: x.max_asymmetry(),
        converged: false,
    };
    for cycle in 1..=max_iter {
        for (proj, inc) in projections.iter().zip(increments.iter_mut()) {
            let y = x.add(inc)?;
            let next = proj(&y);
            *inc = y.sub(&next)?;
            x = next;
        }
        report.iterations_used = cycle;
        report.max_row_sum_violation = row_violation(&x);
        report.max_asymmetry = x.max_asymmetry();
        if report.max_row_sum_violation <= tol && report.max_asymmetry <= tol {
            report.converged = true;
            return Ok((x, report));
        }
    }
    Err(Error::ProjectionNotConverged(report))
}

/// Orthogonal projection onto the tangent space
/// `{G = Gᵀ, G𝟙 = 0}` of the constraint set. Self-adjoint, so it is also
/// its own vector-Jacobian product.
pub fn tangent_projection(g: &DenseMatrix) -> DenseMatrix {
    let m = g.rows();
    let gs = g.symmetrized().expect("square");
    let r = gs.row_sums();
    let s = r.iter().sum::<f64>() / (2.0 * m as f64);
    let mu: Vec<f64> = r.iter().map(|ri| (ri - s) / m as f64).collect();
    DenseMatrix::from_fn(m, m, |i, j| gs.get(i, j) - mu[i] - mu[j])
}

/// Recorded projection: the forward value comes from [`dykstra_project`],
/// the backward pass is the tangent projection.
pub fn project_on(tape: &mut Tape, p_raw: Var, tol: f64, max_iter: usize) -> Result<(Var, ProjectionReport)> {
    let (value, report) = dykstra_project(tape.value(p_raw), tol, max_iter)?;
    let v = tape.linear_map(p_raw, value, tangent_projection)?;
    Ok((v, report))
}

/// Projection onto the same set by solving the KKT system of the reduced
/// constraints `X_ij = X_ji (i < j)` and `X𝟙 = 𝟙`.
pub fn kkt_projection(p_raw: &DenseMatrix) -> Result<DenseMatrix> {
    if !p_raw.is_square() {
        return Err(Error::shape("kkt_projection", format!("{:?} is not square", p_raw.shape())));
    }
    let m = p_raw.rows();
    let nv = m * m;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let mut a = vec![0.0; nv];
            a[i * m + j] = 1.0;
            a[j * m + i] = -1.0;
            rows.push(a);
            rhs.push(0.0);
        }
    }
    for i in 0..m {
        let mut a = vec![0.0; nv];
        a[i * m..(i + 1) * m].fill(1.0);
        rows.push(a);
        rhs.push(1.0);
    }
    let a = DenseMatrix::from_rows(&rows)?;
    let p = p_raw.data();
    let resid: Vec<f64> = a.matvec(p)?.iter().zip(&rhs).map(|(ap, b)| ap - b).collect();
    let aat = a.matmul_transposed(&a)?;
    let lambda = Lu::factor(&aat)?.solve_vec(&resid);
    let correction = a.transpose().matvec(&lambda)?;
    let data = p.iter().zip(&correction).map(|(pi, ci)| pi - ci).collect();
    DenseMatrix::new(m, m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    fn pseudo(r: usize, c: usize, salt: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |i, j| ((i * 19 + j * 5) as f64 * 0.73 + salt).sin())
    }

    #[test]
    fn identical_rows_give_full_similarity() {
        let z = DenseMatrix::from_fn(4, 3, |_, j| if j == 1 { 1.0 } else { 0.0 });
        let id = DenseMatrix::identity(3);
        let a = intra_attention(&z, &id, &id, 1e-12).unwrap();
        assert!(a.raw.data().iter().all(|v| (v - 2.0).abs() < 1e-15));
        // ‖2J‖₂ = 8 exceeds the limit
        assert!((a.factor - SPECTRAL_LIMIT / 8.0).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_rows_give_unit_offdiagonal() {
        let z = DenseMatrix::identity(2);
        let a = intra_attention(&z, &z, &z, 1e-12).unwrap();
        assert_eq!(a.raw.get(0, 1), 1.0);
        assert_eq!(a.raw.get(1, 0), 1.0);
        assert_eq!(a.raw.get(0, 0), 2.0);
    }

    #[test]
    fn raw_matches_pairwise_cosines() {
        let z = pseudo(6, 4, 0.3);
        let wk = pseudo(4, 4, 1.1);
        let wq = pseudo(4, 4, 2.9);
        let a = intra_attention(&z, &wk, &wq, 1e-12).unwrap();
        let k = z.matmul(&wk).unwrap();
        let q = z.matmul(&wq).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let (mut dot, mut nk, mut nq) = (0.0, 0.0, 0.0);
                for c in 0..4 {
                    dot += k.get(i, c) * q.get(j, c);
                    nk += k.get(i, c) * k.get(i, c);
                    nq += q.get(j, c) * q.get(j, c);
                }
                let expect = 1.0 + dot / (nk.sqrt() * nq.sqrt());
                assert!((a.raw.get(i, j) - expect).abs() < 1e-10);
                assert!((0.0..=2.0).contains(&a.raw.get(i, j)));
            }
        }
        assert_eq!(a.s.max_asymmetry(), 0.0);
    }

    #[test]
    fn zero_projection_names_row() {
        let z = pseudo(3, 2, 0.0);
        let err = intra_attention(&z, &DenseMatrix::zeros(2, 2), &DenseMatrix::identity(2), 1e-12).unwrap_err();
        assert!(matches!(&err, Error::DegenerateProjection(msg) if msg.contains("row 0")));
    }

    #[test]
    fn inter_attention_cases() {
        let z = vec![DenseMatrix::zeros(3, 2); 2];
        let id = DenseMatrix::identity(2);
        let p = inter_attention_raw(&z, &id, &id).unwrap();
        assert!(p.data().iter().all(|v| *v == 2.0));

        let z: Vec<_> = (0..3).map(|m| pseudo(5, 2, m as f64)).collect();
        let wk = pseudo(2, 2, 4.0);
        let wq = pseudo(2, 2, 5.0);
        let p = inter_attention_raw(&z, &wk, &wq).unwrap();
        for e in 0..3 {
            for m in 0..3 {
                let a = z[e].matmul(&wk).unwrap();
                let b = z[m].matmul(&wq).unwrap();
                let mut ip = 0.0;
                for i in 0..5 {
                    for c in 0..2 {
                        ip += a.get(i, c) * b.get(i, c);
                    }
                }
                let expect = 1.0 + (-ip / 10.0).exp();
                assert!((p.get(e, m) - expect).abs() < 1e-12);
                assert!(p.get(e, m) > 1.0);
                let c = inter_attention_raw_with(&z, &wk, &wq, InterReduction::Cosine).unwrap();
                let cos = ip / (a.frobenius_norm() * b.frobenius_norm());
                assert!((c.get(e, m) - (1.0 + (-cos).exp())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dykstra_fixed_point_and_two_by_two() {
        let u = DenseMatrix::filled(3, 3, 1.0 / 3.0);
        let (out, rep) = dykstra_project(&u, 1e-8, 100).unwrap();
        assert!(out.sub(&u).unwrap().max_abs() < 1e-15);
        assert_eq!(rep.iterations_used, 1);

        let p = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let (out, rep) = dykstra_project(&p, 1e-10, 10_000).unwrap();
        assert!(out.sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-8);
        assert!(rep.converged);
    }

    #[test]
    fn dykstra_matches_kkt_and_tangent_forms() {
        for m in 2..=4 {
            let p = pseudo(m, m, m as f64).map(|v| 1.0 + v.abs());
            let (out, rep) = dykstra_project(&p, 1e-12, 100_000).unwrap();
            assert!(rep.max_row_sum_violation <= 1e-12 && rep.max_asymmetry <= 1e-12);
            let kkt = kkt_projection(&p).unwrap();
            assert!(out.sub(&kkt).unwrap().max_abs() < 1e-10);
            let centre = DenseMatrix::filled(m, m, 1.0 / m as f64);
            let closed = centre.add(&tangent_projection(&p.sub(&centre).unwrap())).unwrap();
            assert!(out.sub(&closed).unwrap().max_abs() < 1e-10);
            let (again, _) = dykstra_project(&out, 1e-12, 100_000).unwrap();
            assert!(again.sub(&out).unwrap().max_abs() <= 1e-12);
        }
    }

    #[test]
    fn dykstra_errors() {
        let p = pseudo(3, 3, 0.0);
        assert!(dykstra_project(&p, 0.0, 10).is_err());
        assert!(dykstra_project(&pseudo(2, 3, 0.0), 1e-8, 10).is_err());
        // symmetrize, row-correct, column-correct lands on the set in one cycle
        let (_, rep) = dykstra_project(&p, 1e-14, 1).unwrap();
        assert_eq!(rep.iterations_used, 1);
        match dykstra_project(&p, 1e-8, 0) {
            Err(Error::ProjectionNotConverged(r)) => assert!(!r.converged && r.iterations_used == 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tangent_projection_is_idempotent_and_symmetric() {
        let g = pseudo(4, 4, 0.7);
        let t = tangent_projection(&g);
        assert!(tangent_projection(&t).sub(&t).unwrap().max_abs() < 1e-14);
        assert!(t.max_asymmetry() < 1e-15);
        assert!(t.row_sums().iter().all(|s| s.abs() < 1e-14));
        let h = pseudo(4, 4, 2.3);
        let lhs = tangent_projection(&g).frobenius_dot(&h).unwrap();
        let rhs = g.frobenius_dot(&tangent_projection(&h)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn capped_attention_gradients() {
        let z = pseudo(5, 3, 0.1);
        let c = pseudo(5, 5, 3.3);
        let report = grad_check(
            |t, p| {
                let zv = t.constant(z.clone());
                let (s, _) = intra_attention_on(t, zv, p[0], p[1], 1e-14)?;
                let cv = t.constant(c.clone());
                t.frob_dot(s, cv)
            },
            &[pseudo(3, 3, 1.0), pseudo(3, 3, 2.0)],
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn projected_inter_attention_gradients() {
        let z: Vec<_> = (0..3).map(|m| pseudo(4, 2, m as f64 * 1.7)).collect();
        let c = pseudo(3, 3, 0.9);
        let report = grad_check(
            |t, p| {
                let zs: Vec<Var> = z.iter().map(|m| t.constant(m.clone())).collect();
                let raw = inter_attention_raw_on(t, &zs, p[0], p[1], InterReduction::Cosine)?;
                let (proj, _) = project_on(t, raw, 1e-13, 100_000)?;
                let cv = t.constant(c.clone());
                t.frob_dot(proj, cv)
            },
            &[pseudo(2, 2, 1.0), pseudo(2, 2, 2.0)],
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}
