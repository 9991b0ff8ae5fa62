//! Multiplex graph smoothness objective and the descent steps built on it.
//!
//! The intra-modality term is evaluated in the Laplacian-style quadratic form
//! `½ tr(Zᵀ(I − S)Z)`, for which `(3I − S)Z − Σ_e P_em Z^e − Z_init` is the
//! exact gradient whenever `P` is symmetric with unit row sums. The pairwise
//! form is available separately as [`pairwise_smoothness`].

use serde::{Deserialize, Serialize};

use crate::diffcore::{spectral_norm, DenseMatrix, Lu, Tape, Var};
use crate::error::{Error, Result};

/// Iteration cap for the power iterations used here.
pub const SPECTRAL_MAX_ITER: usize = 100_000;

/// Condition estimate above which a Newton system is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub z: Vec<DenseMatrix>,
    z_init: Vec<DenseMatrix>,
    pub k: usize,
}

impl EmbeddingState {
    /// Starts at the anchors.
    pub fn new(z_init: Vec<DenseMatrix>) -> Result<Self> {
        Self::with_iterate(z_init.clone(), z_init)
    }

    pub fn with_iterate(z: Vec<DenseMatrix>, z_init: Vec<DenseMatrix>) -> Result<Self> {
        if z.is_empty() || z.len() != z_init.len() {
            return Err(Error::shape(
                "embedding_state",
                format!("{} iterates for {} anchors", z.len(), z_init.len()),
            ));
        }
        let shape = z[0].shape();
        for (a, b) in z.iter().zip(&z_init) {
            if a.shape() != shape || b.shape() != shape {
                return Err(Error::shape(
                    "embedding_state",
                    format!("expected {shape:?}, got {:?} / {:?}", a.shape(), b.shape()),
                ));
            }
        }
        Ok(Self { z, z_init, k: 0 })
    }

    pub fn z_init(&self) -> &[DenseMatrix] {
        &self.z_init
    }

    pub fn n_modalities(&self) -> usize {
        self.z.len()
    }

    pub fn n_samples(&self) -> usize {
        self.z[0].rows()
    }

    fn advanced(&self, z: Vec<DenseMatrix>) -> Self {
        Self {
            z,
            z_init: self.z_init.clone(),
            k: self.k + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexStructure {
    pub s: Vec<DenseMatrix>,
    pub p: DenseMatrix,
}

impl MultiplexStructure {
    pub fn new(s: Vec<DenseMatrix>, p: DenseMatrix) -> Result<Self> {
        let m = s.len();
        if m == 0 || p.shape() != (m, m) {
            return Err(Error::shape(
                "multiplex_structure",
                format!("{m} intra matrices but P is {:?}", p.shape()),
            ));
        }
        let n = s[0].rows();
        for sm in &s {
            if sm.shape() != (n, n) {
                return Err(Error::shape(
                    "multiplex_structure",
                    format!("intra matrix {:?}, expected {n}x{n}", sm.shape()),
                ));
            }
        }
        Ok(Self { s, p })
    }

    fn check(&self, state: &EmbeddingState) -> Result<()> {
        let m = state.n_modalities();
        let n = state.n_samples();
        if self.s.len() != m || self.p.shape() != (m, m) || self.s.iter().any(|s| s.shape() != (n, n)) {
            return Err(Error::shape(
                "multiplex",
                format!(
                    "state has M={m}, N={n}; structure has {} intra matrices, P {:?}",
                    self.s.len(),
                    self.p.shape()
                ),
            ));
        }
        Ok(())
    }

    /// `max_m ‖S^m‖₂ / 3`.
    pub fn spectral_radius_s_over_3(&self, tol: f64) -> Result<f64> {
        let mut r: f64 = 0.0;
        for s in &self.s {
            r = r.max(spectral_norm(s, tol, SPECTRAL_MAX_ITER)? / 3.0);
        }
        Ok(r)
    }
}

/// One record per propagation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub objective_before: f64,
    pub objective_after: f64,
    pub step_size_used: f64,
    pub bound: f64,
    #[serde(rename = "spectral_radius_S_over_3")]
    pub spectral_radius_s_over_3: f64,
}

/// `(1 − α)F + αAF`.
pub fn classic_step(f: &DenseMatrix, a: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    if !a.is_square() || a.cols() != f.rows() {
        return Err(Error::shape(
            "classic_step",
            format!("A is {:?}, F is {:?}", a.shape(), f.shape()),
        ));
    }
    let mut out = f.scale(1.0 - alpha);
    out.axpy(alpha, &a.matmul(f)?)?;
    Ok(out)
}

/// `½ Σ_ij S_ij ‖Z_i − Z_j‖²`.
pub fn pairwise_smoothness(z: &DenseMatrix, s: &DenseMatrix) -> Result<f64> {
    if s.shape() != (z.rows(), z.rows()) {
        return Err(Error::shape("pairwise_smoothness", format!("S {:?}, Z {:?}", s.shape(), z.shape())));
    }
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            total += s.get(i, j) * d2;
        }
    }
    Ok(0.5 * total)
}

fn intra_term(z: &DenseMatrix, s: &DenseMatrix) -> Result<f64> {
    let sz = s.matmul(z)?;
    Ok(0.5 * (z.frobenius_dot(z)? - z.frobenius_dot(&sz)?))
}

/// Value of the multiplex objective.
pub fn objective_value(state: &EmbeddingState, structure: &MultiplexStructure) -> Result<f64> {
    structure.check(state)?;
    let m = state.n_modalities();
    let mut h = 0.0;
    for (z, s) in state.z.iter().zip(&structure.s) {
        h += intra_term(z, s)?;
    }
    for e in 0..m {
        for n in 0..m {
            let p = structure.p.get(e, n);
            if p != 0.0 && e != n {
                let d = state.z[e].sub(&state.z[n])?;
                h += 0.25 * p * d.frobenius_dot(&d)?;
            }
        }
    }
    for (z, z0) in state.z.iter().zip(&state.z_init) {
        let d = z.sub(z0)?;
        h += 0.5 * d.frobenius_dot(&d)?;
    }
    Ok(h)
}

/// `Σ_e P_em Z^e`.
fn coupled(state: &EmbeddingState, p: &DenseMatrix, m: usize) -> DenseMatrix {
    let mut acc = DenseMatrix::zeros(state.z[m].rows(), state.z[m].cols());
    for (e, ze) in state.z.iter().enumerate() {
        acc.axpy(p.get(e, m), ze).expect("shapes checked");
    }
    acc
}

/// `(3I − S^m)Z^m − Σ_e P_em Z^e − Z^m_init`.
pub fn objective_gradient(
    state: &EmbeddingState,
    structure: &MultiplexStructure,
    m: usize,
) -> Result<DenseMatrix> {
    structure.check(state)?;
    if m >= state.n_modalities() {
        return Err(Error::Index {
            index: m,
            len: state.n_modalities(),
        });
    }
    let z = &state.z[m];
    let mut g = z.scale(3.0);
    g.axpy(-1.0, &structure.s[m].matmul(z)?)?;
    g.axpy(-1.0, &coupled(state, &structure.p, m))?;
    g.axpy(-1.0, &state.z_init[m])?;
    Ok(g)
}

/// Simultaneous gradient step `Z^m ← Z^m − α ∇_m H` for every modality.
pub fn first_order_step(
    state: &EmbeddingState,
    structure: &MultiplexStructure,
    alpha: f64,
) -> Result<EmbeddingState> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("step size must be finite and non-negative, got {alpha}")));
    }
    structure.check(state)?;
    let mut next = Vec::with_capacity(state.n_modalities());
    for m in 0..state.n_modalities() {
        if alpha == 0.0 {
            next.push(state.z[m].clone());
            continue;
        }
        let mut z = state.z[m].clone();
        z.axpy(-alpha, &objective_gradient(state, structure, m)?)?;
        next.push(z);
    }
    Ok(state.advanced(next))
}

/// `3I − S^m − P_mm 𝟙𝟙ᵀ`.
pub fn curvature_matrix(structure: &MultiplexStructure, m: usize) -> Result<DenseMatrix> {
    let s = structure.s.get(m).ok_or(Error::Index {
        index: m,
        len: structure.s.len(),
    })?;
    let pmm = structure.p.get(m, m);
    Ok(DenseMatrix::from_fn(s.rows(), s.cols(), |i, j| {
        let id = if i == j { 3.0 } else { 0.0 };
        id - s.get(i, j) - pmm
    }))
}

/// `min_m 2 / ‖3I − S^m − P_mm 𝟙𝟙ᵀ‖₂`.
pub fn max_stable_step(structure: &MultiplexStructure, tol: f64) -> Result<f64> {
    let mut bound = f64::INFINITY;
    for m in 0..structure.s.len() {
        let norm = spectral_norm(&curvature_matrix(structure, m)?, tol, SPECTRAL_MAX_ITER)?;
        bound = bound.min(2.0 / norm);
    }
    Ok(bound)
}

/// Newton update for modality `m`, solving against the curvature matrix.
pub fn newton_step_exact(
    state: &EmbeddingState,
    structure: &MultiplexStructure,
    m: usize,
) -> Result<DenseMatrix> {
    let g = objective_gradient(state, structure, m)?;
    let lu = Lu::factor(&curvature_matrix(structure, m)?)?;
    let condition = lu.condition_estimate();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    state.z[m].sub(&lu.solve(&g)?)
}

/// One-term Neumann approximation `(1/3)(I + S/3)` of `(3I − S)⁻¹`.
pub fn neumann_approx_inverse(s: &DenseMatrix) -> Result<DenseMatrix> {
    if !s.is_square() {
        return Err(Error::shape("neumann_approx_inverse", format!("{:?} is not square", s.shape())));
    }
    Ok(DenseMatrix::from_fn(s.rows(), s.cols(), |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        (id + s.get(i, j) / 3.0) / 3.0
    }))
}

/// `Z^m ← (S²/9)Z^m + ((3I + S)/9)(Σ_e P_em Z^e + Z^m_init)` for every modality.
pub fn second_order_step(state: &EmbeddingState, structure: &MultiplexStructure) -> Result<EmbeddingState> {
    structure.check(state)?;
    let mut next = Vec::with_capacity(state.n_modalities());
    for m in 0..state.n_modalities() {
        let s = &structure.s[m];
        let z = &state.z[m];
        let mut r = coupled(state, &structure.p, m);
        r.axpy(1.0, &state.z_init[m])?;
        let mut out = s.matmul(&s.matmul(z)?)?.scale(1.0 / 9.0);
        out.axpy(1.0 / 3.0, &r)?;
        out.axpy(1.0 / 9.0, &s.matmul(&r)?)?;
        next.push(out);
    }
    Ok(state.advanced(next))
}

/// [`second_order_step`] plus the evidence record for the step.
pub fn second_order_step_with_diagnostics(
    state: &EmbeddingState,
    structure: &MultiplexStructure,
    tol: f64,
) -> Result<(EmbeddingState, StepDiagnostics)> {
    let before = objective_value(state, structure)?;
    let next = second_order_step(state, structure)?;
    let diag = StepDiagnostics {
        objective_before: before,
        objective_after: objective_value(&next, structure)?,
        step_size_used: 1.0,
        bound: max_stable_step(structure, tol)?,
        spectral_radius_s_over_3: structure.spectral_radius_s_over_3(tol)?,
    };
    Ok((next, diag))
}

/// Recorded version of [`second_order_step`]; `p` is the `M × M` coupling node.
pub fn second_order_step_on(
    tape: &mut Tape,
    z: &[Var],
    z_init: &[Var],
    s: &[Var],
    p: Var,
) -> Result<Vec<Var>> {
    let m_count = z.len();
    if z_init.len() != m_count || s.len() != m_count || tape.value(p).shape() != (m_count, m_count) {
        return Err(Error::shape("second_order_step", "modality counts disagree"));
    }
    let mut weights = Vec::with_capacity(m_count * m_count);
    for e in 0..m_count {
        for m in 0..m_count {
            weights.push(tape.entry(p, e, m)?);
        }
    }
    let mut out = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let mut r = z_init[m];
        for e in 0..m_count {
            let term = tape.scalar_mul(weights[e * m_count + m], z[e])?;
            r = tape.add(r, term)?;
        }
        let sz = tape.matmul(s[m], z[m])?;
        let ssz = tape.matmul(s[m], sz)?;
        let a = tape.scale(ssz, 1.0 / 9.0);
        let sr = tape.matmul(s[m], r)?;
        let b = tape.scale(sr, 1.0 / 9.0);
        let c = tape.scale(r, 1.0 / 3.0);
        let ab = tape.add(a, b)?;
        out.push(tape.add(ab, c)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(r: usize, c: usize, salt: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |i, j| ((i * 13 + j * 7) as f64 * 0.61 + salt).sin())
    }

    fn sym(n: usize, salt: f64, scale: f64) -> DenseMatrix {
        pseudo(n, n, salt).map(f64::abs).symmetrized().unwrap().scale(scale)
    }

    fn instance(m: usize, n: usize, d: usize) -> (EmbeddingState, MultiplexStructure) {
        let z: Vec<_> = (0..m).map(|k| pseudo(n, d, k as f64)).collect();
        let z0: Vec<_> = (0..m).map(|k| pseudo(n, d, 10.0 + k as f64)).collect();
        let s: Vec<_> = (0..m).map(|k| sym(n, 3.0 + k as f64, 0.3)).collect();
        let p = DenseMatrix::filled(m, m, 1.0 / m as f64);
        (
            EmbeddingState::with_iterate(z, z0).unwrap(),
            MultiplexStructure::new(s, p).unwrap(),
        )
    }

    #[test]
    fn classic_step_degenerate_forms() {
        let f = pseudo(4, 3, 0.2);
        let a = sym(4, 1.0, 0.5);
        assert_eq!(classic_step(&f, &a, 0.0).unwrap(), f);
        assert_eq!(classic_step(&f, &a, 1.0).unwrap(), a.matmul(&f).unwrap());
        let h = classic_step(&f, &a, 0.5).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut af = 0.0;
                for k in 0..4 {
                    af += a.get(i, k) * f.get(k, j);
                }
                assert!((h.get(i, j) - (0.5 * f.get(i, j) + 0.5 * af)).abs() < 1e-12);
            }
        }
        assert!(classic_step(&f, &DenseMatrix::zeros(3, 3), 0.5).is_err());
    }

    #[test]
    fn objective_zero_and_regularizer_cases() {
        let z = vec![DenseMatrix::filled(1, 3, 0.7); 2];
        let state = EmbeddingState::new(z).unwrap();
        let st = MultiplexStructure::new(
            vec![DenseMatrix::scalar(1.0); 2],
            DenseMatrix::filled(2, 2, 0.5),
        )
        .unwrap();
        assert_eq!(objective_value(&state, &st).unwrap(), 0.0);

        let (n, d) = (4, 3);
        let z0 = pseudo(n, d, 0.4);
        let z = z0.map(|v| v + 1.0);
        let state = EmbeddingState::with_iterate(vec![z], vec![z0]).unwrap();
        let st = MultiplexStructure::new(vec![DenseMatrix::identity(n)], DenseMatrix::scalar(1.0)).unwrap();
        let h = objective_value(&state, &st).unwrap();
        assert!((h - (n * d) as f64 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_form_is_laplacian_of_degree() {
        let z = pseudo(5, 3, 0.9);
        let s = sym(5, 2.0, 1.0);
        let deg = DenseMatrix::diag(&s.row_sums());
        let lap = deg.sub(&s).unwrap();
        let expect = z.frobenius_dot(&lap.matmul(&z).unwrap()).unwrap();
        assert!((pairwise_smoothness(&z, &s).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn gradient_special_cases() {
        let z: Vec<_> = (0..2).map(|k| pseudo(3, 2, k as f64)).collect();
        let state = EmbeddingState::new(z.clone()).unwrap();
        let st = MultiplexStructure::new(vec![DenseMatrix::zeros(3, 3); 2], DenseMatrix::identity(2)).unwrap();
        for m in 0..2 {
            let g = objective_gradient(&state, &st, m).unwrap();
            assert!(g.sub(&z[m]).unwrap().max_abs() < 1e-15);
        }
        let state = EmbeddingState::with_iterate(vec![DenseMatrix::zeros(3, 2); 2], z.clone()).unwrap();
        let g = objective_gradient(&state, &st, 1).unwrap();
        assert_eq!(g, z[1].scale(-1.0));
        assert!(matches!(objective_gradient(&state, &st, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (state, st) = instance(3, 5, 4);
        let h = 1e-6;
        for m in 0..3 {
            let g = objective_gradient(&state, &st, m).unwrap();
            for idx in 0..g.data().len() {
                let mut plus = state.clone();
                plus.z[m].data_mut()[idx] += h;
                let mut minus = state.clone();
                minus.z[m].data_mut()[idx] -= h;
                let num = (objective_value(&plus, &st).unwrap() - objective_value(&minus, &st).unwrap()) / (2.0 * h);
                let a = g.data()[idx];
                assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-12) < 1e-6);
            }
        }
    }

    #[test]
    fn first_order_step_cases() {
        let (state, st) = instance(2, 4, 3);
        let same = first_order_step(&state, &st, 0.0).unwrap();
        assert_eq!(same.z, state.z);
        assert_eq!(same.k, 1);
        assert!(first_order_step(&state, &st, -0.1).is_err());
        assert!(first_order_step(&state, &st, f64::NAN).is_err());

        let step = first_order_step(&state, &st, 0.1).unwrap();
        for m in 0..2 {
            let mut expect = state.z[m].clone();
            expect.axpy(-0.1, &objective_gradient(&state, &st, m).unwrap()).unwrap();
            assert!(step.z[m].sub(&expect).unwrap().max_abs() < 1e-12);
        }

        let bare = MultiplexStructure::new(vec![DenseMatrix::zeros(4, 4); 2], DenseMatrix::identity(2)).unwrap();
        let step = first_order_step(&state, &bare, 1.0 / 3.0).unwrap();
        for m in 0..2 {
            let expect = state.z[m].add(&state.z_init()[m]).unwrap().scale(1.0 / 3.0);
            assert!(step.z[m].sub(&expect).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_stable_steps() {
        let a = MultiplexStructure::new(vec![DenseMatrix::scalar(1.0)], DenseMatrix::scalar(0.0)).unwrap();
        assert!((max_stable_step(&a, 1e-12).unwrap() - 1.0).abs() < 1e-12);
        let b = MultiplexStructure::new(vec![DenseMatrix::scalar(0.0)], DenseMatrix::scalar(1.0)).unwrap();
        assert!((max_stable_step(&b, 1e-12).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_cases() {
        let (state, _) = instance(2, 4, 3);
        let st = MultiplexStructure::new(
            vec![DenseMatrix::zeros(4, 4); 2],
            DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let g = objective_gradient(&state, &st, 0).unwrap();
        let z = newton_step_exact(&state, &st, 0).unwrap();
        let expect = state.z[0].sub(&g.scale(1.0 / 3.0)).unwrap();
        assert!(z.sub(&expect).unwrap().max_abs() < 1e-12);

        let (state, st) = instance(2, 5, 3);
        let z = newton_step_exact(&state, &st, 1).unwrap();
        let fixed = EmbeddingState::with_iterate(vec![state.z[0].clone(), z.clone()], state.z_init().to_vec()).unwrap();
        // one Newton step on a quadratic lands where the curvature-weighted residual vanishes
        let step = state.z[1].sub(&z).unwrap();
        let resid = curvature_matrix(&st, 1)
            .unwrap()
            .matmul(&step)
            .unwrap()
            .sub(&objective_gradient(&state, &st, 1).unwrap())
            .unwrap();
        assert!(resid.max_abs() < 1e-10);
        assert_eq!(fixed.z[1], z);

        let singular = MultiplexStructure::new(vec![DenseMatrix::identity(3).scale(3.0)], DenseMatrix::scalar(0.0)).unwrap();
        let s1 = EmbeddingState::new(vec![pseudo(3, 2, 0.0)]).unwrap();
        assert!(matches!(newton_step_exact(&s1, &singular, 0), Err(Error::Singular { .. })));
    }

    #[test]
    fn neumann_cases() {
        assert_eq!(
            neumann_approx_inverse(&DenseMatrix::zeros(3, 3)).unwrap(),
            DenseMatrix::identity(3).scale(1.0 / 3.0)
        );
        let approx = neumann_approx_inverse(&DenseMatrix::identity(2)).unwrap();
        assert!((approx.get(0, 0) - 4.0 / 9.0).abs() < 1e-15);
        assert!((approx.get(0, 0) - 0.5).abs() - 1.0 / 18.0 < 1e-15);
        assert!(neumann_approx_inverse(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn second_order_zero_attention() {
        let (state, st) = instance(3, 4, 2);
        let bare = MultiplexStructure::new(vec![DenseMatrix::zeros(4, 4); 3], st.p.clone()).unwrap();
        let next = second_order_step(&state, &bare).unwrap();
        for m in 0..3 {
            let expect = coupled(&state, &st.p, m).add(&state.z_init()[m]).unwrap().scale(1.0 / 3.0);
            assert!(next.z[m].sub(&expect).unwrap().max_abs() < 1e-14);
        }
    }

    #[test]
    fn second_order_is_newton_with_neumann_inverse() {
        let (state, st) = instance(3, 5, 3);
        let next = second_order_step(&state, &st).unwrap();
        for m in 0..3 {
            let g = objective_gradient(&state, &st, m).unwrap();
            let inv = neumann_approx_inverse(&st.s[m]).unwrap();
            let expect = state.z[m].sub(&inv.matmul(&g).unwrap()).unwrap();
            assert!(next.z[m].sub(&expect).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn second_order_is_permutation_equivariant() {
        let (state, st) = instance(2, 6, 3);
        let perm = [3, 0, 5, 1, 4, 2];
        let pz: Vec<_> = state.z.iter().map(|z| z.select_rows(&perm)).collect();
        let pz0: Vec<_> = state.z_init().iter().map(|z| z.select_rows(&perm)).collect();
        let ps: Vec<_> = st.s.iter().map(|s| s.permuted_symmetric(&perm)).collect();
        let pstate = EmbeddingState::with_iterate(pz, pz0).unwrap();
        let pst = MultiplexStructure::new(ps, st.p.clone()).unwrap();
        let a = second_order_step(&state, &st).unwrap();
        let b = second_order_step(&pstate, &pst).unwrap();
        for m in 0..2 {
            assert!(a.z[m].select_rows(&perm).sub(&b.z[m]).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_record_exact_objectives() {
        let (state, st) = instance(2, 4, 2);
        let (next, diag) = second_order_step_with_diagnostics(&state, &st, 1e-12).unwrap();
        assert_eq!(diag.objective_before, objective_value(&state, &st).unwrap());
        assert_eq!(diag.objective_after, objective_value(&next, &st).unwrap());
        let json = serde_json::to_string(&diag).unwrap();
        assert!(json.contains("spectral_radius_S_over_3"));
    }

    #[test]
    fn tape_step_matches_direct_step() {
        let (state, st) = instance(3, 4, 2);
        let mut tape = Tape::new();
        let z: Vec<_> = state.z.iter().map(|z| tape.constant(z.clone())).collect();
        let z0: Vec<_> = state.z_init().iter().map(|z| tape.constant(z.clone())).collect();
        let s: Vec<_> = st.s.iter().map(|s| tape.constant(s.clone())).collect();
        let p = tape.constant(st.p.clone());
        let out = second_order_step_on(&mut tape, &z, &z0, &s, p).unwrap();
        let direct = second_order_step(&state, &st).unwrap();
        for m in 0..3 {
            assert!(tape.value(out[m]).sub(&direct.z[m]).unwrap().max_abs() < 1e-13);
        }
    }
}
