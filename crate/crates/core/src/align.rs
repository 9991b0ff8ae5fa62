//! Shared-space encoders and the contrastive alignment loss.

use crate::dataio::{LabelMask, OmicsView};
use crate::diffcore::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};

/// Per-modality affine maps `V W + b` into a common width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseMatrix>,
}

impl Encoder {
    pub fn latent_dim(&self) -> usize {
        self.weights.first().map_or(0, DenseMatrix::cols)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim();
        if self.weights.len() != self.biases.len() {
            return Err(Error::shape("encoder", "weight/bias count mismatch"));
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if w.cols() != d || b.shape() != (1, d) {
                return Err(Error::shape(
                    "encoder",
                    format!("weight {:?} / bias {:?} for latent width {d}", w.shape(), b.shape()),
                ));
            }
        }
        Ok(())
    }

    /// `V W + b` for modality slot `m`.
    pub fn encode(&self, view: &OmicsView, m: usize) -> Result<DenseMatrix> {
        let (w, b) = self
            .weights
            .get(m)
            .zip(self.biases.get(m))
            .ok_or(Error::Index {
                index: m,
                len: self.weights.len(),
            })?;
        encode(&view.features, w, b)
    }
}

/// `features · W + b`, bias broadcast over rows.
pub fn encode(features: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let v = tape.constant(features.clone());
    let w = tape.constant(w.clone());
    let b = tape.constant(b.clone());
    let z = encode_on(&mut tape, v, w, b)?;
    Ok(tape.value(z).clone())
}

pub fn encode_on(tape: &mut Tape, features: Var, w: Var, b: Var) -> Result<Var> {
    if tape.value(features).cols() != tape.value(w).rows() {
        return Err(Error::shape(
            "encode",
            format!(
                "view width {} but encoder expects {}",
                tape.value(features).cols(),
                tape.value(w).rows()
            ),
        ));
    }
    let vw = tape.matmul(features, w)?;
    tape.add_row(vw, b)
}

/// Inputs of one alignment-loss evaluation.
#[derive(Debug, Clone)]
pub struct AlignmentBatch {
    pub z: Vec<DenseMatrix>,
    pub z_mean: DenseMatrix,
    pub tau: f64,
    pub target: DenseMatrix,
}

impl AlignmentBatch {
    pub fn new(z: Vec<DenseMatrix>, tau: f64, target: DenseMatrix) -> Result<Self> {
        let z_mean = modality_mean(&z)?;
        Ok(Self { z, z_mean, tau, target })
    }

    pub fn logits(&self) -> Result<Vec<DenseMatrix>> {
        self.z
            .iter()
            .map(|z| similarity_logits(z, &self.z_mean, self.tau))
            .collect()
    }

    pub fn loss(&self) -> Result<f64> {
        contrastive_loss(&self.logits()?, &self.target)
    }
}

pub fn modality_mean(z: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = z
        .first()
        .ok_or_else(|| Error::Contract("no modalities to average".into()))?;
    let mut acc = first.clone();
    for zm in &z[1..] {
        acc.axpy(1.0, zm)?;
    }
    Ok(acc.scale(1.0 / z.len() as f64))
}

pub fn modality_mean_on(tape: &mut Tape, z: &[Var]) -> Result<Var> {
    let (first, rest) = z
        .split_first()
        .ok_or_else(|| Error::Contract("no modalities to average".into()))?;
    let mut acc = *first;
    for zm in rest {
        acc = tape.add(acc, *zm)?;
    }
    Ok(tape.scale(acc, 1.0 / z.len() as f64))
}

/// `Γ = (Z/‖Z‖_F)(Z̄/‖Z̄‖_F)ᵀ · exp(τ)`.
pub fn similarity_logits(z: &DenseMatrix, z_mean: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let a = tape.constant(z.clone());
    let b = tape.constant(z_mean.clone());
    let g = similarity_logits_on(&mut tape, a, b, tau)?;
    Ok(tape.value(g).clone())
}

pub fn similarity_logits_on(tape: &mut Tape, z: Var, z_mean: Var, tau: f64) -> Result<Var> {
    tape.value(z).check_same_shape(tape.value(z_mean), "similarity_logits")?;
    let zn = tape.frob_normalize(z)?;
    let mn = tape.frob_normalize(z_mean)?;
    let mt = tape.transpose(mn);
    let g = tape.matmul(zn, mt)?;
    Ok(tape.scale(g, tau.exp()))
}

/// `T_ij = 1/k_i` when `i` and `j` are both labeled and share a class (`k_i`
/// labeled samples in that class, self-pair included), otherwise 0.
pub fn build_target_matrix(labels: &[usize], mask: &LabelMask) -> DenseMatrix {
    let n = labels.len();
    let labeled = mask.train_flags(n);
    let classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let mut per_class = vec![0usize; classes];
    for &i in &mask.train_indices {
        per_class[labels[i]] += 1;
    }
    DenseMatrix::from_fn(n, n, |i, j| {
        if labeled[i] && labeled[j] && labels[i] == labels[j] {
            1.0 / per_class[labels[i]] as f64
        } else {
            0.0
        }
    })
}

/// Symmetric cross-entropy between row-softmaxed logits (and their transpose)
/// and the target distribution `T`, averaged over modalities and samples.
pub fn contrastive_loss(logits: &[DenseMatrix], target: &DenseMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let gs: Vec<Var> = logits.iter().map(|g| tape.constant(g.clone())).collect();
    let t = tape.constant(target.clone());
    let l = contrastive_loss_on(&mut tape, &gs, t)?;
    Ok(tape.scalar_value(l).expect("loss is 1x1"))
}

pub fn contrastive_loss_on(tape: &mut Tape, logits: &[Var], target: Var) -> Result<Var> {
    if logits.is_empty() {
        return Err(Error::Contract("contrastive loss needs at least one modality".into()));
    }
    let n = tape.value(target).rows();
    let mut total: Option<Var> = None;
    for &g in logits {
        tape.value(g).check_same_shape(tape.value(target), "contrastive_loss")?;
        let row_term = tape.log_softmax_rows(g);
        let row_w = tape.hadamard(target, row_term)?;
        let a = tape.sum(row_w);
        let gt = tape.transpose(g);
        let col_term = tape.log_softmax_rows(gt);
        let col_w = tape.hadamard(target, col_term)?;
        let b = tape.sum(col_w);
        let both = tape.add(a, b)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, both)?,
            None => both,
        });
    }
    let total = total.expect("non-empty");
    Ok(tape.scale(total, -1.0 / (logits.len() as f64 * n as f64)))
}
