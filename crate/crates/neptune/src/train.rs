//! 1-N training: binary cross-entropy over all tails, analytic gradients,
//! and a from-scratch Adam optimizer.
//!
//! A training row is one `(head, relation)` pair with the multi-hot set of
//! all its true tails in the augmented training split. Each step pushes a
//! batch of rows through the full pipeline (dropout, batch norm, relation
//! plane contraction, activation, entity contraction, stable BCE) and
//! backpropagates by hand through every stage, including the batch-norm
//! mean/variance and the sampled dropout masks. Loss per row is the sum
//! over all entities; the batch reduces rows by mean so the learning rate
//! is independent of batch size.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::KnowledgeGraph;
use crate::eval::{evaluate, ScoreOpts, Split};
use crate::model::{pipeline_forward, Activation, ModelParams};
use crate::rng::{stream, StreamId};
use crate::tensor::{Matrix, Tensor3};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (epoch {epoch}): learning rate too high or parameters diverged")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
}

/// All training hyperparameters. Defaults are documented starting points,
/// not tuned claims.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Entity embedding dimension.
    pub d: usize,
    /// Relation embedding dimension.
    pub k: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate factor (1.0 = constant).
    pub lr_decay: f64,
    pub epochs: usize,
    /// Number of `(head, relation)` rows per optimizer step.
    pub batch_size: usize,
    /// Dropout rates at the three pipeline sites:
    /// input embedding, pre-activation hidden vector, post-activation vector.
    pub dropout: (f64, f64, f64),
    /// Target smoothing toward `1/|E|`; 0 disables it.
    pub label_smoothing: f64,
    pub activation: Activation,
    /// Apply batch normalization on the input and hidden representations.
    pub batch_norm: bool,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Compute validation MRR every this many epochs (0 = never).
    pub valid_every: usize,
    /// Keep the params with the best validation MRR seen (requires
    /// `valid_every > 0`).
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 200,
            k: 200,
            lr: 5e-4,
            lr_decay: 1.0,
            epochs: 500,
            batch_size: 128,
            dropout: (0.2, 0.2, 0.3),
            label_smoothing: 0.0,
            activation: Activation::Relu,
            batch_norm: true,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            valid_every: 0,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.d == 0 || self.k == 0 {
            return err("d and k must be positive".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return err(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        for (name, rate) in [
            ("dropout_input", self.dropout.0),
            ("dropout_hidden", self.dropout.1),
            ("dropout_output", self.dropout.2),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return err(format!("{} must be in [0, 1), got {}", name, rate));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return err(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            ));
        }
        Ok(())
    }
}

/// One batch of 1-N training rows: `(head, relation)` pairs with the set of
/// true tails of each pair in the augmented training split.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub rows: Vec<(usize, usize)>,
    /// Sorted, deduplicated tail ids per row; every row has at least one.
    pub targets: Vec<Vec<usize>>,
}

/// Gradients (or Adam moments) shaped exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub entity_emb: Matrix,
    pub relation_emb: Matrix,
    pub core: Tensor3,
    pub bn_input_scale: Vec<f64>,
    pub bn_input_shift: Vec<f64>,
    pub bn_hidden_scale: Vec<f64>,
    pub bn_hidden_shift: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let d = p.entity_dim();
        let k = p.relation_dim();
        Self {
            entity_emb: Matrix::zeros(p.num_entities(), d),
            relation_emb: Matrix::zeros(p.num_relations(), k),
            core: Tensor3::zeros(d, k, d),
            bn_input_scale: vec![0.0; d],
            bn_input_shift: vec![0.0; d],
            bn_hidden_scale: vec![0.0; d],
            bn_hidden_shift: vec![0.0; d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entity_emb.data().iter().all(|x| x.is_finite())
            && self.relation_emb.data().iter().all(|x| x.is_finite())
            && self.core.data().iter().all(|x| x.is_finite())
            && self.bn_input_scale.iter().all(|x| x.is_finite())
            && self.bn_input_shift.iter().all(|x| x.is_finite())
            && self.bn_hidden_scale.iter().all(|x| x.is_finite())
            && self.bn_hidden_shift.iter().all(|x| x.is_finite())
    }
}

/// Adam first/second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(p: &ModelParams) -> Self {
        Self {
            m: GradientSet::zeros_like(p),
            v: GradientSet::zeros_like(p),
            step: 0,
        }
    }
}

/// Numerically stable sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable per-term BCE from the logit: `max(x,0) - x*y + ln(1 + e^(-|x|))`.
#[inline]
fn bce_term(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// 1-N binary cross-entropy of one `(head, relation)` row: the sum over all
/// entities as candidate tails, with targets optionally smoothed toward
/// `1/|E|`. Computed in logit form so it never overflows.
pub fn loss_1n(logits: &[f64], targets: &[usize], label_smoothing: f64) -> f64 {
    let n = logits.len() as f64;
    let y_neg = label_smoothing / n;
    let y_pos = (1.0 - label_smoothing) + y_neg;
    let mut is_target = vec![false; logits.len()];
    for &t in targets {
        is_target[t] = true;
    }
    logits
        .iter()
        .zip(&is_target)
        .map(|(&x, &pos)| bce_term(x, if pos { y_pos } else { y_neg }))
        .sum()
}

/// Batch-mean 1-N loss and exact analytic gradients for every parameter
/// group, reusing the forward dropout masks and differentiating through the
/// batch-norm statistics.
pub fn forward_backward(
    p: &mut ModelParams,
    batch: &LossBatch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradientSet), TrainError> {
    assert_eq!(batch.rows.len(), batch.targets.len());
    assert!(!batch.rows.is_empty(), "batch must be nonempty");

    let trace = pipeline_forward(
        p,
        &batch.rows,
        cfg.activation,
        cfg.dropout,
        cfg.batch_norm,
        rng,
    );

    let n_entities = p.num_entities();
    let b = batch.rows.len();
    let inv_b = 1.0 / b as f64;
    let n = n_entities as f64;
    let y_neg = cfg.label_smoothing / n;
    let y_pos = (1.0 - cfg.label_smoothing) + y_neg;

    let mut grads = GradientSet::zeros_like(p);
    let mut total_loss = 0.0;

    // Loss and the entity-contraction backward per row. d_zp is the
    // gradient reaching the post-activation (post-dropout) vector.
    let mut is_target = vec![false; n_entities];
    let mut d_zp: Vec<Vec<f64>> = Vec::with_capacity(b);
    for bi in 0..b {
        for &t in &batch.targets[bi] {
            is_target[t] = true;
        }
        let logits = &trace.logits[bi];
        let zp = &trace.zp[bi];
        let mut row_loss = 0.0;
        let mut d_vec = vec![0.0; zp.len()];
        for t in 0..n_entities {
            let y = if is_target[t] { y_pos } else { y_neg };
            row_loss += bce_term(logits[t], y);
            let d_logit = (sigmoid(logits[t]) - y) * inv_b;
            // Phi[t] = E[t] . zp: rank-1 into the entity gradient, and the
            // entity row flows back into d_zp.
            let e_row = p.entity_emb.row(t);
            let g_row = grads.entity_emb.row_mut(t);
            for f in 0..zp.len() {
                g_row[f] += d_logit * zp[f];
                d_vec[f] += d_logit * e_row[f];
            }
        }
        total_loss += row_loss * inv_b;
        d_zp.push(d_vec);
        for &t in &batch.targets[bi] {
            is_target[t] = false;
        }
    }

    if !total_loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: 0, step: 0 });
    }

    // Output dropout, then the activation.
    let mut d_y1: Vec<Vec<f64>> = Vec::with_capacity(b);
    for bi in 0..b {
        let dv: Vec<f64> = (0..d_zp[bi].len())
            .map(|f| {
                let dz = d_zp[bi][f] * trace.mask2[bi][f];
                dz * cfg.activation.grad(trace.y1[bi][f], trace.z[bi][f])
            })
            .collect();
        d_y1.push(dv);
    }

    // Hidden batch norm (full chain rule through the batch statistics).
    let d_y0 = match &trace.bn_hid {
        Some(cache) => {
            let (d_in, d_scale, d_shift) = p.bn_hidden.backward(cache, &d_y1);
            grads.bn_hidden_scale = d_scale;
            grads.bn_hidden_shift = d_shift;
            d_in
        }
        None => d_y1,
    };

    // Hidden dropout, then the per-row plane contraction
    // pre[l] = sum_i A[i,l] * x1[i].
    let d_model = p.entity_dim();
    let mut d_planes: Vec<Matrix> = trace
        .planes
        .iter()
        .map(|_| Matrix::zeros(d_model, d_model))
        .collect();
    let mut d_x1: Vec<Vec<f64>> = Vec::with_capacity(b);
    for bi in 0..b {
        let d_pre: Vec<f64> = (0..d_model)
            .map(|l| d_y0[bi][l] * trace.mask1[bi][l])
            .collect();
        let plane_idx = trace.plane_of_row[bi];
        let x1 = &trace.x1[bi];
        let d_plane = &mut d_planes[plane_idx];
        for i in 0..d_model {
            let xi = x1[i];
            let row = d_plane.row_mut(i);
            for l in 0..d_model {
                row[l] += xi * d_pre[l];
            }
        }
        d_x1.push(trace.planes[plane_idx].1.matvec(&d_pre));
    }

    // Planes into the core tensor and the relation embeddings:
    // A[i,l] = sum_j core[i,j,l] * w[j].
    let k_dim = p.relation_dim();
    for (pi, (rel, _)) in trace.planes.iter().enumerate() {
        let d_plane = &d_planes[pi];
        let w = p.relation_emb.row(*rel);
        let d_w = grads.relation_emb.row_mut(*rel);
        for i in 0..d_model {
            let d_plane_row = d_plane.row(i);
            for j in 0..k_dim {
                let core_row = &p.core.data()[(i * k_dim + j) * d_model..(i * k_dim + j + 1) * d_model];
                let g_core = &mut grads.core.data_mut()[(i * k_dim + j) * d_model..(i * k_dim + j + 1) * d_model];
                let wj = w[j];
                let mut acc = 0.0;
                for l in 0..d_model {
                    g_core[l] += wj * d_plane_row[l];
                    acc += core_row[l] * d_plane_row[l];
                }
                d_w[j] += acc;
            }
        }
    }

    // Input batch norm, input dropout, and the head embedding rows.
    let d_x0 = match &trace.bn_in {
        Some(cache) => {
            let (d_in, d_scale, d_shift) = p.bn_input.backward(cache, &d_x1);
            grads.bn_input_scale = d_scale;
            grads.bn_input_shift = d_shift;
            d_in
        }
        None => d_x1,
    };
    for bi in 0..b {
        let (h, _) = batch.rows[bi];
        let g_row = grads.entity_emb.row_mut(h);
        for f in 0..d_model {
            g_row[f] += d_x0[bi][f] * trace.mask0[bi][f];
        }
    }

    // A finite loss can still ride on overflowing intermediates whose
    // products blow up in the backward pass; abort before Adam poisons the
    // parameters.
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: 0, step: 0 });
    }

    Ok((total_loss, grads))
}

/// Bias-corrected Adam update of one parameter slice, in place.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), m.len());
    assert_eq!(params.len(), v.len());
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step over every parameter group.
pub fn adam_step(
    p: &mut ModelParams,
    g: &GradientSet,
    s: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) {
    s.step += 1;
    let t = s.step;
    let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    adam_update(
        p.entity_emb.data_mut(),
        g.entity_emb.data(),
        s.m.entity_emb.data_mut(),
        s.v.entity_emb.data_mut(),
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        p.relation_emb.data_mut(),
        g.relation_emb.data(),
        s.m.relation_emb.data_mut(),
        s.v.relation_emb.data_mut(),
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        p.core.data_mut(),
        g.core.data(),
        s.m.core.data_mut(),
        s.v.core.data_mut(),
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        &mut p.bn_input.scale,
        &g.bn_input_scale,
        &mut s.m.bn_input_scale,
        &mut s.v.bn_input_scale,
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        &mut p.bn_input.shift,
        &g.bn_input_shift,
        &mut s.m.bn_input_shift,
        &mut s.v.bn_input_shift,
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        &mut p.bn_hidden.scale,
        &g.bn_hidden_scale,
        &mut s.m.bn_hidden_scale,
        &mut s.v.bn_hidden_scale,
        t,
        lr,
        b1,
        b2,
        eps,
    );
    adam_update(
        &mut p.bn_hidden.shift,
        &g.bn_hidden_shift,
        &mut s.m.bn_hidden_shift,
        &mut s.v.bn_hidden_shift,
        t,
        lr,
        b1,
        b2,
        eps,
    );
}

/// Group the augmented training split into 1-N rows: one row per distinct
/// `(head, relation)` pair in first-occurrence order, targets sorted and
/// deduplicated.
pub fn group_train_rows(g: &KnowledgeGraph) -> LossBatch {
    let mut index = std::collections::HashMap::new();
    let mut rows = Vec::new();
    let mut targets: Vec<Vec<usize>> = Vec::new();
    for t in &g.train {
        let key = (t.head, t.relation);
        let i = *index.entry(key).or_insert_with(|| {
            rows.push(key);
            targets.push(Vec::new());
            rows.len() - 1
        });
        targets[i].push(t.tail);
    }
    for tails in &mut targets {
        tails.sort_unstable();
        tails.dedup();
    }
    LossBatch { rows, targets }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_mrr: Option<f64>,
}

/// Snapshot of the best-validation params when `keep_best` is on.
#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub valid_mrr: f64,
    pub params: ModelParams,
    pub adam: AdamState,
}

#[derive(Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs: Vec<EpochStats>,
    pub best: Option<BestSnapshot>,
}

/// Full training loop: deterministic given the config seed.
///
/// Rows are shuffled each epoch from the shuffle stream, dropout draws from
/// the dropout stream, and initialization from the init stream, so the
/// single-threaded path reproduces bit-identical checkpoints.
pub fn train(g: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if g.train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }

    let mut params = ModelParams::init(g.num_entities(), g.num_relations(), cfg.d, cfg.k, cfg.seed);
    let mut adam = AdamState::new(&params);
    let all_rows = group_train_rows(g);
    let mut order: Vec<usize> = (0..all_rows.rows.len()).collect();

    let mut shuffle_rng = stream(cfg.seed, StreamId::Shuffle);
    let mut dropout_rng = stream(cfg.seed, StreamId::Dropout);

    let mut lr = cfg.lr;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestSnapshot> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut row_count = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = LossBatch {
                rows: chunk.iter().map(|&i| all_rows.rows[i]).collect(),
                targets: chunk.iter().map(|&i| all_rows.targets[i].clone()).collect(),
            };
            let (loss, grads) =
                forward_backward(&mut params, &batch, cfg, &mut dropout_rng).map_err(|e| {
                    match e {
                        TrainError::NonFiniteLoss { .. } => TrainError::NonFiniteLoss {
                            epoch: epoch + 1,
                            step: step + 1,
                        },
                        other => other,
                    }
                })?;
            adam_step(&mut params, &grads, &mut adam, lr, cfg);
            loss_sum += loss * chunk.len() as f64;
            row_count += chunk.len();
        }
        let mean_loss = loss_sum / row_count as f64;

        let valid_mrr = if cfg.valid_every > 0
            && (epoch + 1) % cfg.valid_every == 0
            && !g.valid.is_empty()
        {
            let report = evaluate(
                &params,
                g,
                Split::Valid,
                ScoreOpts {
                    activation: cfg.activation,
                    batch_norm: cfg.batch_norm,
                },
            );
            Some(report.mrr)
        } else {
            None
        };

        if let (true, Some(mrr)) = (cfg.keep_best, valid_mrr) {
            let improved = best.as_ref().map_or(true, |b| mrr > b.valid_mrr);
            if improved {
                best = Some(BestSnapshot {
                    epoch: epoch + 1,
                    valid_mrr: mrr,
                    params: params.clone(),
                    adam: adam.clone(),
                });
            }
        }

        log::info!(
            "epoch {} mean_loss {:.6}{}",
            epoch + 1,
            mean_loss,
            valid_mrr.map_or(String::new(), |m| format!(" valid_mrr {:.4}", m))
        );
        epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_loss,
            valid_mrr,
        });
        lr *= cfg.lr_decay;
    }

    Ok(TrainRun {
        params,
        adam,
        epochs,
        best,
    })
}
