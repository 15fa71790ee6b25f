//! Model parameters and scoring.
//!
//! The shared core tensor has shape `d x k x d` with mode 1 = head, mode 2 =
//! relation, mode 3 = tail. Scores are raw logits; the sigmoid lives in the
//! loss. Three scoring routes are provided:
//!
//! - [`score_tucker`]: the linear form `W x1 e_h x2 w_r x3 e_t`.
//! - [`score_neptune`]: `e_t . f_act(W x1 e_h x2 w_r)` - equal to TuckER
//!   under the identity activation.
//! - [`score_ntn_form`]: `w_r . f_act(W x1 e_h x3 e_t)` - a test-scale
//!   contrast case; equivalent to NePTuNe only without the nonlinearity.
//!
//! The 1-N path scores every tail of a `(head, relation)` query at once by
//! contracting in the cheap order: first the relation plane
//! `A = W x2 w_r` (`d x d`), then the head, then one pass over the entity
//! matrix. Regularizers sit on the head side of the pipeline:
//! `E . dropout(f_act(BN_hid(dropout(A x1 BN_in(dropout(e_h))))))`,
//! each dropout site independently configurable.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{stream, StreamId};
use crate::tensor::{dot, Matrix, Mode, Tensor3};

/// Elementwise scalar activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// Collapses the nonlinear score to the linear TuckER form.
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `pre` and post-activation `post`.
    #[inline]
    pub fn grad(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    pub fn apply_vec(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!(
                "unknown activation '{}' (expected identity, relu, or tanh)",
                other
            )),
        }
    }
}

/// Per-feature batch normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Saved forward quantities needed by [`BatchNormState::backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
}

impl BatchNormState {
    /// Fresh state: scale 1, shift 0, running stats (0, 1), momentum 0.1,
    /// epsilon 1e-5.
    pub fn new(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Train-mode forward: normalize by the batch's own (biased) statistics
    /// and fold them into the running stats.
    pub fn forward_train(&mut self, batch: &[Vec<f64>]) -> (Vec<Vec<f64>>, BnCache) {
        let b = batch.len();
        assert!(b > 0, "batch norm requires a nonempty batch in train mode");
        let d = self.dim();
        let mut out = vec![vec![0.0; d]; b];
        let mut x_hat = vec![vec![0.0; d]; b];
        let mut inv_std = vec![0.0; d];

        for j in 0..d {
            let mean = batch.iter().map(|x| x[j]).sum::<f64>() / b as f64;
            let var = batch
                .iter()
                .map(|x| {
                    let c = x[j] - mean;
                    c * c
                })
                .sum::<f64>()
                / b as f64;
            let inv = 1.0 / (var + self.epsilon).sqrt();
            inv_std[j] = inv;
            for (i, x) in batch.iter().enumerate() {
                let xh = (x[j] - mean) * inv;
                x_hat[i][j] = xh;
                out[i][j] = self.scale[j] * xh + self.shift[j];
            }
            self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean;
            self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * var;
        }
        (out, BnCache { x_hat, inv_std })
    }

    /// Eval-mode forward: normalize one vector by the running statistics.
    pub fn forward_eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "batch norm dim mismatch");
        (0..x.len())
            .map(|j| {
                let inv = 1.0 / (self.running_var[j] + self.epsilon).sqrt();
                self.scale[j] * (x[j] - self.running_mean[j]) * inv + self.shift[j]
            })
            .collect()
    }

    /// Backward through the train-mode forward, differentiating through the
    /// batch mean and variance. Returns `(d_input, d_scale, d_shift)`.
    pub fn backward(
        &self,
        cache: &BnCache,
        d_out: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let b = d_out.len();
        assert_eq!(b, cache.x_hat.len(), "batch norm cache/batch size mismatch");
        let d = self.dim();
        let mut d_in = vec![vec![0.0; d]; b];
        let mut d_scale = vec![0.0; d];
        let mut d_shift = vec![0.0; d];

        for j in 0..d {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..b {
                sum_dy += d_out[i][j];
                sum_dy_xhat += d_out[i][j] * cache.x_hat[i][j];
            }
            d_scale[j] = sum_dy_xhat;
            d_shift[j] = sum_dy;
            let coef = self.scale[j] * cache.inv_std[j];
            for i in 0..b {
                d_in[i][j] = coef
                    * (d_out[i][j]
                        - sum_dy / b as f64
                        - cache.x_hat[i][j] * sum_dy_xhat / b as f64);
            }
        }
        (d_in, d_scale, d_shift)
    }
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the
/// identity. Returns the output and the multiplier mask the backward pass
/// must reuse.
pub fn dropout_forward(
    x: &[f64],
    rate: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    if !train || rate == 0.0 {
        return (x.to_vec(), vec![1.0; x.len()]);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut out = vec![0.0; x.len()];
    let mut mask = vec![0.0; x.len()];
    for i in 0..x.len() {
        if rng.random::<f64>() >= rate {
            mask[i] = keep_scale;
            out[i] = x[i] * keep_scale;
        }
    }
    (out, mask)
}

/// All trainable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|E| x d` entity embeddings; row `i` is entity `i`.
    pub entity_emb: Matrix,
    /// `|R| x k` relation embeddings (reciprocal relations included).
    pub relation_emb: Matrix,
    /// Shared `d x k x d` core tensor (head, relation, tail).
    pub core: Tensor3,
    /// Batch norm over the head embedding entering the contraction.
    pub bn_input: BatchNormState,
    /// Batch norm over the contracted d-vector before the activation.
    pub bn_hidden: BatchNormState,
}

impl ModelParams {
    /// Seeded initialization: entity rows are normal with deviation
    /// `1/sqrt(d)`, relation rows normal with deviation `1/sqrt(k)`, core
    /// entries uniform in `(-1, 1)`, batch norm at identity.
    pub fn init(num_entities: usize, num_relations: usize, d: usize, k: usize, seed: u64) -> Self {
        assert!(num_entities > 0 && num_relations > 0 && d > 0 && k > 0);
        let mut rng = stream(seed, StreamId::Init);
        let normal = |rng: &mut ChaCha8Rng, n: usize, sd: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * sd
                })
                .collect()
        };
        let entity_emb = Matrix::from_vec(
            num_entities,
            d,
            normal(&mut rng, num_entities * d, 1.0 / (d as f64).sqrt()),
        );
        let relation_emb = Matrix::from_vec(
            num_relations,
            k,
            normal(&mut rng, num_relations * k, 1.0 / (k as f64).sqrt()),
        );
        let core_data = (0..d * k * d)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let core = Tensor3::from_vec(d, k, d, core_data);
        Self::from_parts(
            entity_emb,
            relation_emb,
            core,
            BatchNormState::new(d),
            BatchNormState::new(d),
        )
    }

    /// Assemble from existing pieces, checking dimension consistency.
    pub fn from_parts(
        entity_emb: Matrix,
        relation_emb: Matrix,
        core: Tensor3,
        bn_input: BatchNormState,
        bn_hidden: BatchNormState,
    ) -> Self {
        let d = entity_emb.cols();
        let k = relation_emb.cols();
        assert_eq!(core.dims(), (d, k, d), "core tensor must be d x k x d");
        assert_eq!(bn_input.dim(), d, "bn_input must span d features");
        assert_eq!(bn_hidden.dim(), d, "bn_hidden must span d features");
        Self {
            entity_emb,
            relation_emb,
            core,
            bn_input,
            bn_hidden,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_emb.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_emb.rows()
    }

    pub fn entity_dim(&self) -> usize {
        self.entity_emb.cols()
    }

    pub fn relation_dim(&self) -> usize {
        self.relation_emb.cols()
    }

    fn check_ids(&self, head: usize, relation: usize) {
        assert!(
            head < self.num_entities(),
            "entity id {} out of range ({} entities)",
            head,
            self.num_entities()
        );
        assert!(
            relation < self.num_relations(),
            "relation id {} out of range ({} relations)",
            relation,
            self.num_relations()
        );
    }
}

/// Contract core modes 1 and 2 with a head and relation embedding, leaving
/// the d-vector over the tail mode.
fn head_relation_vector(core: &Tensor3, e_h: &[f64], w_r: &[f64]) -> Vec<f64> {
    // W x1 e_h is a k x d matrix (relation rows, tail cols); contracting its
    // rows with w_r leaves the tail vector.
    core.mode_vec_product(Mode::One, e_h).vecmat(w_r)
}

/// Linear TuckER score of one triple (no regularizers).
pub fn score_tucker(p: &ModelParams, head: usize, relation: usize, tail: usize) -> f64 {
    score_neptune(p, head, relation, tail, Activation::Identity)
}

/// NePTuNe score of one triple (no regularizers): contract head and relation
/// into the core, apply the activation, then dot with the tail embedding.
pub fn score_neptune(
    p: &ModelParams,
    head: usize,
    relation: usize,
    tail: usize,
    act: Activation,
) -> f64 {
    p.check_ids(head, relation);
    assert!(
        tail < p.num_entities(),
        "entity id {} out of range ({} entities)",
        tail,
        p.num_entities()
    );
    let hr = head_relation_vector(&p.core, p.entity_emb.row(head), p.relation_emb.row(relation));
    dot(&act.apply_vec(&hr), p.entity_emb.row(tail))
}

/// Alternative nonlinear form contracting head and tail first and dotting
/// with the relation embedding. With the identity activation this equals
/// [`score_neptune`]; with a nonlinearity it generally does not. Test-scale
/// oracle over raw vectors and a (shared) core.
pub fn score_ntn_form(
    core: &Tensor3,
    w_r: &[f64],
    e_h: &[f64],
    e_t: &[f64],
    act: Activation,
) -> f64 {
    // W x1 e_h is k x d; contracting the tail columns leaves the k-vector.
    let ht = core.mode_vec_product(Mode::One, e_h).matvec(e_t);
    dot(&act.apply_vec(&ht), w_r)
}

/// The relation plane `A = W x2 w_r` (`d x d`, head rows / tail columns).
/// Reusable across every query sharing the relation.
pub fn relation_plane(p: &ModelParams, relation: usize) -> Matrix {
    assert!(
        relation < p.num_relations(),
        "relation id {} out of range ({} relations)",
        relation,
        p.num_relations()
    );
    p.core
        .mode_vec_product(Mode::Two, p.relation_emb.row(relation))
}

/// Eval-mode 1-N scores for every tail of `(head, relation)`, reusing a
/// precomputed relation plane. Dropout is disabled; batch norm (if enabled)
/// uses the running statistics.
pub fn score_all_tails_with_plane(
    p: &ModelParams,
    plane: &Matrix,
    head: usize,
    act: Activation,
    batch_norm: bool,
) -> Vec<f64> {
    assert!(
        head < p.num_entities(),
        "entity id {} out of range ({} entities)",
        head,
        p.num_entities()
    );
    let e_h = p.entity_emb.row(head);
    let x = if batch_norm {
        p.bn_input.forward_eval(e_h)
    } else {
        e_h.to_vec()
    };
    let pre = plane.vecmat(&x);
    let hidden = if batch_norm {
        p.bn_hidden.forward_eval(&pre)
    } else {
        pre
    };
    let b = act.apply_vec(&hidden);
    p.entity_emb.matvec(&b)
}

/// Eval-mode 1-N scores for every tail of `(head, relation)`.
pub fn score_all_tails_eval(
    p: &ModelParams,
    head: usize,
    relation: usize,
    act: Activation,
    batch_norm: bool,
) -> Vec<f64> {
    let plane = relation_plane(p, relation);
    score_all_tails_with_plane(p, &plane, head, act, batch_norm)
}

/// Train-mode 1-N scores for a single `(head, relation)` query: dropout is
/// sampled from `rng` and batch norm (if enabled) runs on this one-row
/// batch, updating the running statistics.
pub fn score_all_tails_train(
    p: &mut ModelParams,
    head: usize,
    relation: usize,
    act: Activation,
    dropout: (f64, f64, f64),
    batch_norm: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let trace = pipeline_forward(p, &[(head, relation)], act, dropout, batch_norm, rng);
    trace.logits.into_iter().next().unwrap()
}

/// Everything the batched train-mode forward saves for the backward pass.
#[derive(Debug)]
pub(crate) struct BatchTrace {
    /// Distinct relations of the batch in first-occurrence order, with their
    /// planes `A = W x2 w_r`.
    pub planes: Vec<(usize, Matrix)>,
    /// Index into `planes` per row.
    pub plane_of_row: Vec<usize>,
    pub mask0: Vec<Vec<f64>>,
    pub x1: Vec<Vec<f64>>,
    pub mask1: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub mask2: Vec<Vec<f64>>,
    pub zp: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub bn_in: Option<BnCache>,
    pub bn_hid: Option<BnCache>,
}

/// Train-mode forward over a batch of `(head, relation)` rows.
///
/// Batch norm couples the rows through the batch statistics, so the batch
/// moves through the pipeline stage by stage. The relation plane is computed
/// once per distinct relation in the batch.
pub(crate) fn pipeline_forward(
    p: &mut ModelParams,
    rows: &[(usize, usize)],
    act: Activation,
    dropout: (f64, f64, f64),
    batch_norm: bool,
    rng: &mut ChaCha8Rng,
) -> BatchTrace {
    assert!(!rows.is_empty(), "forward requires a nonempty batch");
    for &(h, r) in rows {
        p.check_ids(h, r);
    }

    let mut planes: Vec<(usize, Matrix)> = Vec::new();
    let mut plane_of_row = Vec::with_capacity(rows.len());
    for &(_, r) in rows {
        let idx = match planes.iter().position(|(rel, _)| *rel == r) {
            Some(i) => i,
            None => {
                planes.push((r, relation_plane(p, r)));
                planes.len() - 1
            }
        };
        plane_of_row.push(idx);
    }

    let mut x0 = Vec::with_capacity(rows.len());
    let mut mask0 = Vec::with_capacity(rows.len());
    for &(h, _) in rows {
        let (v, m) = dropout_forward(p.entity_emb.row(h), dropout.0, true, rng);
        x0.push(v);
        mask0.push(m);
    }

    let (x1, bn_in) = if batch_norm {
        let (out, cache) = p.bn_input.forward_train(&x0);
        (out, Some(cache))
    } else {
        (x0, None)
    };

    let mut pre = Vec::with_capacity(rows.len());
    for (b, x) in x1.iter().enumerate() {
        pre.push(planes[plane_of_row[b]].1.vecmat(x));
    }

    let mut y0 = Vec::with_capacity(rows.len());
    let mut mask1 = Vec::with_capacity(rows.len());
    for v in &pre {
        let (o, m) = dropout_forward(v, dropout.1, true, rng);
        y0.push(o);
        mask1.push(m);
    }

    let (y1, bn_hid) = if batch_norm {
        let (out, cache) = p.bn_hidden.forward_train(&y0);
        (out, Some(cache))
    } else {
        (y0, None)
    };

    let z: Vec<Vec<f64>> = y1.iter().map(|v| act.apply_vec(v)).collect();

    let mut zp = Vec::with_capacity(rows.len());
    let mut mask2 = Vec::with_capacity(rows.len());
    for v in &z {
        let (o, m) = dropout_forward(v, dropout.2, true, rng);
        zp.push(o);
        mask2.push(m);
    }

    let logits: Vec<Vec<f64>> = zp.iter().map(|v| p.entity_emb.matvec(v)).collect();

    BatchTrace {
        planes,
        plane_of_row,
        mask0,
        x1,
        mask1,
        y1,
        z,
        mask2,
        zp,
        logits,
        bn_in,
        bn_hid,
    }
}
