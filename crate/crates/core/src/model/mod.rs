//! The end-to-end network: encode, align, propagate, fuse, classify.

mod config;
mod container;
mod metrics;

pub use config::{Fusion, Optimizer, TrainConfig};
pub use container::{config_digest, load_model, save_model, ModelHeader, CONTAINER_VERSION, MAGIC};
pub use metrics::{classification_report, EvalReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    build_target_matrix, contrastive_loss_on, encode_on, modality_mean_on, similarity_logits_on, Encoder,
};
use crate::attention::{
    inter_attention_raw_on, intra_attention_on, project_on, AttentionWeights, LayerAttention, ProjectionReport,
};
use crate::dataio::{split_semi_supervised, LabelMask, MultiOmicsDataset};
use crate::diffcore::{softmax_rows, DenseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graphopt::{objective_value, second_order_step_on, EmbeddingState, MultiplexStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// All learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub attention: AttentionWeights,
    pub classifier: DenseMatrix,
}

impl ModelParams {
    /// Uniform in `±1/√fan_in` for every tensor.
    pub fn init(dims: &[usize], d: usize, classes: usize, k: usize, fusion: Fusion, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
        };
        let weights = dims.iter().map(|&dm| uniform(dm, d, dm)).collect();
        let biases = dims.iter().map(|&dm| uniform(1, d, dm)).collect();
        let m = dims.len();
        let layers = (0..k)
            .map(|_| LayerAttention {
                intra_key: (0..m).map(|_| uniform(d, d, d)).collect(),
                intra_query: (0..m).map(|_| uniform(d, d, d)).collect(),
                inter_key: uniform(d, d, d),
                inter_query: uniform(d, d, d),
            })
            .collect();
        let fused = fusion.fused_dim(m, d);
        Self {
            encoder: Encoder { weights, biases },
            attention: AttentionWeights { layers },
            classifier: uniform(fused, classes, fused),
        }
    }

    pub fn modalities(&self) -> usize {
        self.encoder.weights.len()
    }

    pub fn layers(&self) -> usize {
        self.attention.layers.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.cols()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.encoder.weights.iter().map(DenseMatrix::rows).collect()
    }

    /// Flat tensor list: encoder weights, encoder biases, then per layer the
    /// intra keys, intra queries, shared key and shared query, then the
    /// classifier.
    pub fn tensors(&self) -> Vec<DenseMatrix> {
        let mut out = self.encoder.weights.clone();
        out.extend(self.encoder.biases.iter().cloned());
        for layer in &self.attention.layers {
            out.extend(layer.intra_key.iter().cloned());
            out.extend(layer.intra_query.iter().cloned());
            out.push(layer.inter_key.clone());
            out.push(layer.inter_query.clone());
        }
        out.push(self.classifier.clone());
        out
    }

    pub fn tensor_count(m: usize, k: usize) -> usize {
        2 * m + k * (2 * m + 2) + 1
    }

    pub fn from_tensors(tensors: Vec<DenseMatrix>, m: usize, k: usize) -> Result<Self> {
        if tensors.len() != Self::tensor_count(m, k) {
            return Err(Error::shape(
                "model_params",
                format!("{} tensors for M={m}, K={k}", tensors.len()),
            ));
        }
        let mut it = tensors.into_iter();
        let mut take = |n: usize| -> Vec<DenseMatrix> { it.by_ref().take(n).collect() };
        let weights = take(m);
        let biases = take(m);
        let mut layers = Vec::with_capacity(k);
        for _ in 0..k {
            let intra_key = take(m);
            let intra_query = take(m);
            let mut shared = take(2);
            let inter_query = shared.pop().expect("counted");
            let inter_key = shared.pop().expect("counted");
            layers.push(LayerAttention {
                intra_key,
                intra_query,
                inter_key,
                inter_query,
            });
        }
        let classifier = take(1).pop().expect("counted");
        let params = Self {
            encoder: Encoder { weights, biases },
            attention: AttentionWeights { layers },
            classifier,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.latent_dim();
        self.attention.validate(self.modalities(), d)?;
        let fused = self.classifier.rows();
        if fused != d && fused != self.modalities() * d {
            return Err(Error::shape("model_params", format!("classifier has {fused} rows for d={d}")));
        }
        Ok(())
    }

    fn check_dataset(&self, dataset: &MultiOmicsDataset) -> Result<()> {
        if self.input_dims() != dataset.dims() || self.classes() != dataset.class_count {
            return Err(Error::shape(
                "forward",
                format!(
                    "model expects widths {:?} and {} classes; dataset has {:?} and {}",
                    self.input_dims(),
                    self.classes(),
                    dataset.dims(),
                    dataset.class_count
                ),
            ));
        }
        Ok(())
    }
}

struct LayerVars {
    intra_key: Vec<Var>,
    intra_query: Vec<Var>,
    inter_key: Var,
    inter_query: Var,
}

/// Parameter nodes laid out as in [`ModelParams::tensors`].
struct ParamVars {
    enc_w: Vec<Var>,
    enc_b: Vec<Var>,
    layers: Vec<LayerVars>,
    classifier: Var,
}

impl ParamVars {
    fn from_slice(vars: &[Var], m: usize, k: usize) -> Result<Self> {
        if vars.len() != ModelParams::tensor_count(m, k) {
            return Err(Error::shape("model_params", format!("{} nodes for M={m}, K={k}", vars.len())));
        }
        let enc_w = vars[..m].to_vec();
        let enc_b = vars[m..2 * m].to_vec();
        let mut at = 2 * m;
        let layers = (0..k)
            .map(|_| {
                let l = LayerVars {
                    intra_key: vars[at..at + m].to_vec(),
                    intra_query: vars[at + m..at + 2 * m].to_vec(),
                    inter_key: vars[at + 2 * m],
                    inter_query: vars[at + 2 * m + 1],
                };
                at += 2 * m + 2;
                l
            })
            .collect();
        Ok(Self {
            enc_w,
            enc_b,
            layers,
            classifier: vars[at],
        })
    }
}

/// Per-forward diagnostics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ForwardDiagnostics {
    /// Objective before the first layer and after each layer, each under the
    /// structure of the layer that produced (or consumes) the state.
    pub per_layer_objective: Vec<f64>,
    /// Spectral-safety factors, one list per layer.
    pub cap_factors: Vec<Vec<f64>>,
    pub projections: Vec<ProjectionReport>,
}

pub struct ForwardOutput {
    pub logits: DenseMatrix,
    pub fused: DenseMatrix,
    pub diagnostics: ForwardDiagnostics,
}

struct ForwardVars {
    encoded: Vec<Var>,
    logits: Var,
    fused: Var,
    diagnostics: ForwardDiagnostics,
}

/// Combines embeddings by mean, sum or column concatenation.
pub fn fuse(z: &[DenseMatrix], mode: Fusion) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = z.iter().map(|m| tape.constant(m.clone())).collect();
    let f = fuse_on(&mut tape, &vars, mode)?;
    Ok(tape.value(f).clone())
}

pub fn fuse_on(tape: &mut Tape, z: &[Var], mode: Fusion) -> Result<Var> {
    let (first, rest) = z
        .split_first()
        .ok_or_else(|| Error::Contract("nothing to fuse".into()))?;
    match mode {
        Fusion::Concat => tape.concat_cols(z),
        Fusion::Mean => modality_mean_on(tape, z),
        Fusion::Sum => {
            let mut acc = *first;
            for v in rest {
                acc = tape.add(acc, *v)?;
            }
            Ok(acc)
        }
    }
}

/// Inverted-dropout masks for the encoder outputs, entries `0` or
/// `1/(1 − rate)`. A row that would drop every unit is redrawn, since a
/// zero embedding row has no direction for the cosine attention.
pub fn dropout_masks(n: usize, d: usize, m: usize, rate: f64, rng: &mut impl Rng) -> Vec<DenseMatrix> {
    let keep = 1.0 / (1.0 - rate);
    (0..m)
        .map(|_| {
            let mut mask = DenseMatrix::zeros(n, d);
            for i in 0..n {
                loop {
                    let mut kept = false;
                    for j in 0..d {
                        let v = if rng.random::<f64>() < rate { 0.0 } else { keep };
                        kept |= v != 0.0;
                        mask.set(i, j, v);
                    }
                    if kept || d == 0 {
                        break;
                    }
                }
            }
            mask
        })
        .collect()
}

fn forward_on(
    tape: &mut Tape,
    dataset: &MultiOmicsDataset,
    p: &ParamVars,
    config: &TrainConfig,
    masks: Option<&[DenseMatrix]>,
) -> Result<ForwardVars> {
    let m = dataset.n_views();
    let mut z = Vec::with_capacity(m);
    for (i, view) in dataset.views.iter().enumerate() {
        let v = tape.constant(view.features.clone());
        let mut zi = encode_on(tape, v, p.enc_w[i], p.enc_b[i])?;
        if let Some(masks) = masks {
            let mask = tape.constant(masks[i].clone());
            zi = tape.hadamard(zi, mask)?;
        }
        z.push(zi);
    }
    let encoded = z.clone();
    let z_init = z.clone();
    let init_values: Vec<DenseMatrix> = z_init.iter().map(|v| tape.value(*v).clone()).collect();
    let mut diagnostics = ForwardDiagnostics::default();
    for (k, layer) in p.layers.iter().enumerate() {
        let mut s = Vec::with_capacity(m);
        let mut factors = Vec::with_capacity(m);
        for i in 0..m {
            let (si, f) = intra_attention_on(tape, z[i], layer.intra_key[i], layer.intra_query[i], config.spectral_tol)?;
            s.push(si);
            factors.push(f);
        }
        let p_raw = inter_attention_raw_on(tape, &z, layer.inter_key, layer.inter_query, config.inter_reduction)?;
        let (pv, report) = project_on(tape, p_raw, config.dykstra_tol, config.dykstra_max_iter)?;
        let structure = MultiplexStructure::new(
            s.iter().map(|v| tape.value(*v).clone()).collect(),
            tape.value(pv).clone(),
        )?;
        if k == 0 {
            let state = EmbeddingState::new(init_values.clone())?;
            diagnostics.per_layer_objective.push(objective_value(&state, &structure)?);
        }
        z = second_order_step_on(tape, &z, &z_init, &s, pv)?;
        let state = EmbeddingState::with_iterate(
            z.iter().map(|v| tape.value(*v).clone()).collect(),
            init_values.clone(),
        )?;
        diagnostics.per_layer_objective.push(objective_value(&state, &structure)?);
        diagnostics.cap_factors.push(factors);
        diagnostics.projections.push(report);
    }
    let fused = fuse_on(tape, &z, config.fusion)?;
    let logits = tape.matmul(fused, p.classifier)?;
    Ok(ForwardVars {
        encoded,
        logits,
        fused,
        diagnostics,
    })
}

fn register(tape: &mut Tape, params: &ModelParams, as_params: bool) -> Result<ParamVars> {
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| if as_params { tape.param(t) } else { tape.constant(t) })
        .collect();
    ParamVars::from_slice(&vars, params.modalities(), params.layers())
}

/// Runs the network. Train mode draws dropout masks from `rng`; eval mode is
/// deterministic and mask-free.
pub fn forward(
    dataset: &MultiOmicsDataset,
    params: &ModelParams,
    config: &TrainConfig,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    params.check_dataset(dataset)?;
    let masks = match (mode, rng) {
        (Mode::Train, Some(rng)) if config.dropout > 0.0 => Some(dropout_masks(
            dataset.n_samples(),
            params.latent_dim(),
            params.modalities(),
            config.dropout,
            rng,
        )),
        (Mode::Train, None) if config.dropout > 0.0 => {
            return Err(Error::Contract("train-mode forward needs a random source for dropout".into()))
        }
        _ => None,
    };
    let mut tape = Tape::new();
    let p = register(&mut tape, params, false)?;
    let out = forward_on(&mut tape, dataset, &p, config, masks.as_deref())?;
    Ok(ForwardOutput {
        logits: tape.value(out.logits).clone(),
        fused: tape.value(out.fused).clone(),
        diagnostics: out.diagnostics,
    })
}

fn one_hot_rows(labels: &[usize], classes: usize, rows: &[usize]) -> DenseMatrix {
    let mut y = DenseMatrix::zeros(labels.len(), classes);
    for &i in rows {
        y.set(i, labels[i], 1.0);
    }
    y
}

/// `−Σ_{i∈Φ} ln softmax(logits)_{i, y_i}`.
pub fn cross_entropy_loss(logits: &DenseMatrix, labels: &[usize], mask: &LabelMask) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = cross_entropy_loss_on(&mut tape, l, labels, mask)?;
    Ok(tape.scalar_value(out).expect("1x1"))
}

pub fn cross_entropy_loss_on(tape: &mut Tape, logits: Var, labels: &[usize], mask: &LabelMask) -> Result<Var> {
    if mask.train_indices.is_empty() {
        return Err(Error::Contract("cross-entropy needs at least one labeled sample".into()));
    }
    let (n, c) = tape.value(logits).shape();
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    let y = tape.constant(one_hot_rows(labels, c, &mask.train_indices));
    let lsm = tape.log_softmax_rows(logits);
    let ll = tape.frob_dot(y, lsm)?;
    Ok(tape.scale(ll, -1.0))
}

pub fn total_loss(l_ct: f64, l_ce: f64) -> f64 {
    l_ct + l_ce
}

/// Loss terms and forward results of one evaluation of the training objective.
pub struct LossOutput {
    pub total: Var,
    pub contrastive: Var,
    pub cross_entropy: Var,
    pub logits: Var,
    pub diagnostics: ForwardDiagnostics,
}

/// Records the full training objective on `tape`. `params` are nodes laid out
/// as in [`ModelParams::tensors`].
pub fn total_loss_on(
    tape: &mut Tape,
    dataset: &MultiOmicsDataset,
    params: &[Var],
    config: &TrainConfig,
    mask: &LabelMask,
    dropout: Option<&[DenseMatrix]>,
) -> Result<LossOutput> {
    let p = ParamVars::from_slice(params, dataset.n_views(), config.k)?;
    let fv = forward_on(tape, dataset, &p, config, dropout)?;
    let mean = modality_mean_on(tape, &fv.encoded)?;
    let gammas: Vec<Var> = fv
        .encoded
        .iter()
        .map(|&z| similarity_logits_on(tape, z, mean, config.tau))
        .collect::<Result<_>>()?;
    let target = tape.constant(build_target_matrix(&dataset.labels, mask));
    let contrastive = contrastive_loss_on(tape, &gammas, target)?;
    let cross_entropy = cross_entropy_loss_on(tape, fv.logits, &dataset.labels, mask)?;
    let total = tape.add(contrastive, cross_entropy)?;
    Ok(LossOutput {
        total,
        contrastive,
        cross_entropy,
        logits: fv.logits,
        diagnostics: fv.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub contrastive_loss: f64,
    pub cross_entropy_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
}

pub struct FitResult {
    pub params: ModelParams,
    pub mask: LabelMask,
    pub log: Vec<EpochLog>,
}

fn argmax_rows(x: &DenseMatrix) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Class predictions (row argmax of the logits).
pub fn predict(logits: &DenseMatrix) -> Vec<usize> {
    argmax_rows(logits)
}

/// Row-softmax class probabilities.
pub fn probabilities(logits: &DenseMatrix) -> DenseMatrix {
    softmax_rows(logits)
}

/// Trains on a stratified split drawn from `config.label_ratio` and
/// `config.seed`.
pub fn fit(dataset: &MultiOmicsDataset, config: &TrainConfig) -> Result<FitResult> {
    let mask = split_semi_supervised(dataset, config.label_ratio, config.seed)?;
    fit_with_mask(dataset, config, mask)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Updater {
    kind: Optimizer,
    lr: f64,
    decay: f64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
    step: i32,
}

impl Updater {
    fn new(config: &TrainConfig, tensors: &[DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = tensors.iter().map(|t| DenseMatrix::zeros(t.rows(), t.cols())).collect();
        Self {
            kind: config.optimizer,
            lr: config.learning_rate,
            decay: 1.0 - config.learning_rate * config.weight_decay,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    fn apply(&mut self, tensors: &mut [DenseMatrix], grads: &[&DenseMatrix]) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (i, (t, g)) in tensors.iter_mut().zip(grads).enumerate() {
            if self.decay != 1.0 {
                *t = t.scale(self.decay);
            }
            match self.kind {
                Optimizer::Gd => t.axpy(-self.lr, g)?,
                Optimizer::Adam => {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for (((w, &gj), mj), vj) in t
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * gj;
                        *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * gj * gj;
                        *w -= self.lr * (*mj / c1) / ((*vj / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Full-batch training with the configured update rule and decoupled weight
/// decay; returns the final-epoch parameters.
pub fn fit_with_mask(dataset: &MultiOmicsDataset, config: &TrainConfig, mask: LabelMask) -> Result<FitResult> {
    dataset.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        &dataset.dims(),
        config.latent_dim,
        dataset.class_count,
        config.k,
        config.fusion,
        &mut rng,
    );
    let (m, k) = (dataset.n_views(), config.k);
    let mut tensors = params.tensors();
    let mut log = Vec::with_capacity(config.epochs);
    let mut updater = Updater::new(config, &tensors);
    for epoch in 0..config.epochs {
        let masks = (config.dropout > 0.0).then(|| {
            dropout_masks(dataset.n_samples(), config.latent_dim, m, config.dropout, &mut rng)
        });
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = total_loss_on(&mut tape, dataset, &vars, config, &mask, masks.as_deref())
            .map_err(|e| match e {
                Error::DegenerateEmbedding(d) | Error::DegenerateProjection(d) | Error::Evaluation(d) => {
                    Error::Divergence { epoch, detail: d }
                }
                Error::SpectralNotConverged { estimate, .. } if !estimate.is_finite() => Error::Divergence {
                    epoch,
                    detail: "non-finite attention matrix".into(),
                },
                other => other,
            })?;
        let total = tape.scalar_value(out.total).expect("1x1");
        if !total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("loss is {total}"),
            });
        }
        let preds = argmax_rows(tape.value(out.logits));
        let correct = mask
            .train_indices
            .iter()
            .filter(|&&i| preds[i] == dataset.labels[i])
            .count();
        log.push(EpochLog {
            epoch,
            contrastive_loss: tape.scalar_value(out.contrastive).expect("1x1"),
            cross_entropy_loss: tape.scalar_value(out.cross_entropy).expect("1x1"),
            total_loss: total,
            train_accuracy: correct as f64 / mask.train_indices.len() as f64,
        });
        let grads = tape.backward(out.total)?;
        let gs: Vec<&DenseMatrix> = vars.iter().map(|v| grads.get(*v).expect("parameter gradient")).collect();
        if gs.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite gradient".into(),
            });
        }
        updater.apply(&mut tensors, &gs)?;
    }
    params = ModelParams::from_tensors(tensors, m, k)?;
    Ok(FitResult { params, mask, log })
}

/// Test-set metrics from eval-mode predictions.
pub fn evaluate(
    dataset: &MultiOmicsDataset,
    params: &ModelParams,
    config: &TrainConfig,
    mask: &LabelMask,
) -> Result<EvalReport> {
    let out = forward(dataset, params, config, Mode::Eval, None)?;
    let preds = predict(&out.logits);
    let truth: Vec<usize> = mask.test_indices.iter().map(|&i| dataset.labels[i]).collect();
    let predicted: Vec<usize> = mask.test_indices.iter().map(|&i| preds[i]).collect();
    let mut report = classification_report(&truth, &predicted, dataset.class_count);
    report.per_layer_objective = out.diagnostics.per_layer_objective;
    Ok(report)
}
