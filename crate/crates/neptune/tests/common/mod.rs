//! Shared helpers for the integration and acceptance suites.
//!
//! Each test binary compiles its own copy and uses a different subset.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::{Mutex, MutexGuard};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neptune::data::RawTriple;
use neptune::model::ModelParams;
use neptune::train::{forward_backward, GradientSet, LossBatch, TrainConfig};

static TIMING_LOCK: Mutex<()> = Mutex::new(());

/// Serialize tests that assert wall-clock budgets: the default parallel
/// test harness would otherwise let runs contend for cores and distort the
/// measured times.
pub fn timing_lock() -> MutexGuard<'static, ()> {
    TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Deterministic random triple set with dense entity/relation usage.
pub fn synthetic_triples(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
) -> Vec<RawTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(num_triples);
    // Touch every entity and relation at least once so the vocabulary is
    // exactly the requested size.
    for i in 0..num_entities.max(num_relations) {
        let h = i % num_entities;
        let r = i % num_relations;
        let t = (i + 1) % num_entities;
        if seen.insert((h, r, t)) {
            out.push((label("e", h), label("r", r), label("e", t)));
        }
    }
    while out.len() < num_triples {
        let h = rng.random_range(0..num_entities);
        let r = rng.random_range(0..num_relations);
        let t = rng.random_range(0..num_entities);
        if seen.insert((h, r, t)) {
            out.push((label("e", h), label("r", r), label("e", t)));
        }
    }
    out
}

fn label(prefix: &str, i: usize) -> String {
    format!("{}{:03}", prefix, i)
}

/// Write a triple list as a tab-separated split file.
pub fn write_split(path: &std::path::Path, triples: &[RawTriple]) {
    let mut text = String::new();
    for (h, r, t) in triples {
        text.push_str(&format!("{}\t{}\t{}\n", h, r, t));
    }
    std::fs::write(path, text).unwrap();
}

/// Max relative error between analytic and central finite-difference
/// gradients over every parameter group. `denominator floor 1e-6`: below
/// that scale the comparison is effectively absolute at 1e-10, which stays
/// above the ~3e-11 cancellation noise of the difference quotient.
pub fn max_gradient_error(params: &ModelParams, batch: &LossBatch, cfg: &TrainConfig) -> f64 {
    assert_eq!(cfg.dropout, (0.0, 0.0, 0.0), "gradient check needs dropout off");
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let analytic: GradientSet = {
        let mut p = params.clone();
        forward_backward(&mut p, batch, cfg, &mut rng).unwrap().1
    };

    let loss_with = |mutate: &dyn Fn(&mut ModelParams)| -> f64 {
        let mut p = params.clone();
        mutate(&mut p);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        forward_backward(&mut p, batch, cfg, &mut rng).unwrap().0
    };

    let mut max_err = 0.0f64;
    let mut check = |analytic_value: f64, set: &dyn Fn(&mut ModelParams, f64)| {
        let plus = loss_with(&|p| set(p, step));
        let minus = loss_with(&|p| set(p, -step));
        let numeric = (plus - minus) / (2.0 * step);
        let denom = (analytic_value.abs() + numeric.abs()).max(1e-6);
        let err = (analytic_value - numeric).abs() / denom;
        max_err = max_err.max(err);
    };

    let d = params.entity_dim();
    let k = params.relation_dim();
    for row in 0..params.num_entities() {
        for col in 0..d {
            check(analytic.entity_emb.get(row, col), &move |p, h| {
                let v = p.entity_emb.get(row, col);
                p.entity_emb.set(row, col, v + h);
            });
        }
    }
    for row in 0..params.num_relations() {
        for col in 0..k {
            check(analytic.relation_emb.get(row, col), &move |p, h| {
                let v = p.relation_emb.get(row, col);
                p.relation_emb.set(row, col, v + h);
            });
        }
    }
    for i in 0..d {
        for j in 0..k {
            for l in 0..d {
                check(analytic.core.at(i, j, l), &move |p, h| {
                    let v = p.core.at(i, j, l);
                    p.core.set(i, j, l, v + h);
                });
            }
        }
    }
    if cfg.batch_norm {
        for f in 0..d {
            check(analytic.bn_input_scale[f], &move |p, h| p.bn_input.scale[f] += h);
            check(analytic.bn_input_shift[f], &move |p, h| p.bn_input.shift[f] += h);
            check(analytic.bn_hidden_scale[f], &move |p, h| {
                p.bn_hidden.scale[f] += h
            });
            check(analytic.bn_hidden_shift[f], &move |p, h| {
                p.bn_hidden.shift[f] += h
            });
        }
    }
    max_err
}

/// Random 1-N batch over the given vocabulary sizes: every row gets at least
/// one target.
pub fn random_batch(
    num_entities: usize,
    num_relations: usize,
    rows: usize,
    seed: u64,
) -> LossBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch_rows = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        batch_rows.push((
            rng.random_range(0..num_entities),
            rng.random_range(0..num_relations),
        ));
        let mut tails: Vec<usize> = (0..num_entities)
            .filter(|_| rng.random::<f64>() < 0.3)
            .collect();
        if tails.is_empty() {
            tails.push(rng.random_range(0..num_entities));
        }
        targets.push(tails);
    }
    LossBatch {
        rows: batch_rows,
        targets,
    }
}
