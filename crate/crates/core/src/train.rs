//! Training a genotype on a path corpus.
//!
//! The loss unrolls the cell over each path and, at every step, scores
//! `v_t` against all entity embeddings with a full softmax. Step losses
//! are summed and divided by `batch · L`; padded steps are masked.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Table, Tape, Var};
use crate::cell::{forward_cell, required_weights, CellWeights, Genotype};
use crate::error::{Error, Result};
use crate::seed;
use crate::walk::{RelationalPath, PAD_RELATION};

pub const BATCH_SIZES: [usize; 5] = [128, 256, 512, 1024, 2048];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub dim: usize,
    pub epochs: usize,
    pub patience: usize,
    pub shuffle: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            l2: 1e-5,
            decay: 0.99,
            batch_size: 128,
            dropout: 0.0,
            dim: 32,
            epochs: 30,
            patience: 5,
            shuffle: true,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Structural checks every run needs.
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) {
            return Err(Error::config("train.lr", "must be finite and >= 0"));
        }
        if !finite_nonneg(self.l2) {
            return Err(Error::config("train.l2", "must be finite and >= 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("train.decay", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("train.dropout", "must lie in [0, 1)"));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::config("train.dim", "must be a positive even number"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience", "must be positive"));
        }
        Ok(())
    }

    /// Additionally enforces the tuning ranges for lr, l2, decay, batch
    /// size and dropout.
    pub fn validate_ranges(&self) -> Result<()> {
        self.validate()?;
        let check = |field: &str, v: f64, lo: f64, hi: f64| {
            if v < lo || v > hi {
                Err(Error::config(field, format!("{v} outside [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        check("train.lr", self.lr, 1e-5, 1e-3)?;
        check("train.l2", self.l2, 1e-5, 1e-2)?;
        check("train.decay", self.decay, 0.98, 1.0)?;
        check("train.dropout", self.dropout, 0.0, 0.6)?;
        if !BATCH_SIZES.contains(&self.batch_size) {
            return Err(Error::config(
                "train.batch_size",
                format!("{} not in {BATCH_SIZES:?}", self.batch_size),
            ));
        }
        Ok(())
    }
}

/// Paths of equal length laid out step-major for batched lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    subjects: Vec<Vec<u32>>,
    relations: Vec<Vec<u32>>,
    objects: Vec<Vec<u32>>,
}

impl PathBatch {
    pub fn new(paths: &[&RelationalPath]) -> Result<Self> {
        let first = paths.first().ok_or(Error::Empty("batch"))?;
        let len = first.len();
        if let Some(p) = paths.iter().find(|p| p.len() != len) {
            return Err(Error::Contract(format!(
                "batch mixes path lengths {len} and {}",
                p.len()
            )));
        }
        let mut b = PathBatch {
            subjects: vec![Vec::with_capacity(paths.len()); len],
            relations: vec![Vec::with_capacity(paths.len()); len],
            objects: vec![Vec::with_capacity(paths.len()); len],
        };
        for p in paths {
            for (t, step) in p.steps().iter().enumerate() {
                let pad = step.relation == PAD_RELATION;
                b.subjects[t].push(if pad { PAD_RELATION } else { step.subject });
                b.relations[t].push(step.relation);
                b.objects[t].push(step.object);
            }
        }
        Ok(b)
    }

    pub fn from_paths(paths: &[RelationalPath]) -> Result<Self> {
        Self::new(&paths.iter().collect::<Vec<_>>())
    }

    pub fn size(&self) -> usize {
        self.subjects[0].len()
    }

    pub fn path_len(&self) -> usize {
        self.subjects.len()
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

/// Records the batch loss on `tape` and returns it as a scalar var.
/// Dropout is applied to `s_t` and `r_t` when `dropout` carries a rate and
/// an RNG.
pub fn path_loss(
    tape: &mut Tape<'_>,
    g: &Genotype,
    batch: &PathBatch,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Var> {
    let (b, len) = (batch.size(), batch.path_len());
    let d = tape.store().dim();
    let w = CellWeights::bind(tape, g)?;
    let table = tape.param(ParamId::Entity)?;
    let norm = 1.0 / (b * len) as f64;
    let mut total: Option<Var> = None;
    let mut h: Option<Var> = None;
    for t in 0..len {
        let mut s = tape.gather(Table::Entity, &batch.subjects[t])?;
        let mut r = tape.gather(Table::Relation, &batch.relations[t])?;
        if let Some((p, rng)) = dropout.as_mut() {
            if *p > 0.0 {
                s = tape.mask(s, dropout_mask(rng, b, d, *p))?;
                r = tape.mask(r, dropout_mask(rng, b, d, *p))?;
            }
        }
        let (v, h_next) = forward_cell(tape, g, &w, s, r, h.unwrap_or(s))?;
        h = Some(h_next);
        let logits = tape.dot_scores(v, table)?;
        let weights: Vec<f64> = batch.relations[t]
            .iter()
            .map(|&r| if r == PAD_RELATION { 0.0 } else { norm })
            .collect();
        let step = tape.softmax_ce(logits, &batch.objects[t], &weights)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, step)?,
            None => step,
        });
    }
    Ok(total.expect("paths have at least one step"))
}

/// Loss of a batch without dropout or gradient.
pub fn eval_loss(g: &Genotype, store: &ParameterStore, batch: &PathBatch) -> Result<f64> {
    let mut tape = Tape::new(store);
    let l = path_loss(&mut tape, g, batch, None)?;
    Ok(tape.value(l)[[0, 0]])
}

fn diverged(g: &Genotype, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            genotype: g.to_string(),
            batch,
            msg: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// One forward/backward/Adam cycle. Returns the pre-update batch loss.
pub fn step_once(
    g: &Genotype,
    store: &mut ParameterStore,
    batch: &PathBatch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (loss, grads) = {
        let mut tape = Tape::new(store);
        let l = path_loss(&mut tape, g, batch, Some((cfg.dropout, rng))).map_err(|e| diverged(g, 0, e))?;
        (tape.value(l)[[0, 0]], tape.backward(l)?)
    };
    store
        .adam_step(&grads, lr, cfg.l2)
        .map_err(|e| diverged(g, 0, e))?;
    Ok(loss)
}

/// Fresh store with exactly the weights `g` uses.
pub fn init_store(
    g: &Genotype,
    num_entities: usize,
    num_relations: usize,
    cfg: &TrainConfig,
) -> Result<ParameterStore> {
    ParameterStore::new(
        num_entities,
        num_relations,
        cfg.dim,
        &required_weights(g),
        seed::derive(cfg.rng_seed, "init"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub valid: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters at the best validation score.
    pub store: ParameterStore,
    pub best_valid: Option<f64>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains from a fresh initialization. `valid` scores the current
/// parameters after each epoch (higher is better); training stops once it
/// has not improved for `cfg.patience` epochs.
pub fn fit(
    g: &Genotype,
    num_entities: usize,
    num_relations: usize,
    corpus: &[RelationalPath],
    cfg: &TrainConfig,
    valid: &mut dyn FnMut(&ParameterStore) -> Result<f64>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let store = init_store(g, num_entities, num_relations, cfg)?;
    fit_from(g, store, corpus, cfg, valid)
}

/// As [`fit`] but continuing from given parameters.
pub fn fit_from(
    g: &Genotype,
    mut store: ParameterStore,
    corpus: &[RelationalPath],
    cfg: &TrainConfig,
    valid: &mut dyn FnMut(&ParameterStore) -> Result<f64>,
) -> Result<FitOutcome> {
    let mut rng = seed::rng(seed::derive(cfg.rng_seed, "batches"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut lr = cfg.lr;
    let mut out = FitOutcome {
        store: store.clone(),
        best_valid: None,
        best_epoch: 0,
        history: Vec::new(),
    };
    let mut stale = 0;
    let mut batch_index = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let paths: Vec<&RelationalPath> = chunk.iter().map(|&i| &corpus[i]).collect();
            let batch = PathBatch::new(&paths)?;
            let loss = step_once(g, &mut store, &batch, cfg, lr, &mut rng).map_err(|e| match e {
                Error::Diverged { genotype, msg, .. } => Error::Diverged {
                    genotype,
                    batch: batch_index,
                    msg,
                },
                other => other,
            })?;
            loss_sum += loss;
            batches += 1;
            batch_index += 1;
        }
        let score = valid(&store)?;
        out.history.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            lr,
            valid: score,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::debug!(
            "{g} epoch {epoch}: loss {:.5} valid {score:.4}",
            loss_sum / batches as f64
        );
        if out.best_valid.map_or(true, |b| score > b) {
            out.best_valid = Some(score);
            out.best_epoch = epoch;
            out.store = store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        lr *= cfg.decay;
    }
    Ok(out)
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = Vec::new();
    for r in history {
        serde_json::to_writer(&mut text, r).expect("records serialize");
        text.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&text))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::preset;
    use crate::graph::Triplet;

    fn path(ids: &[(u32, u32, u32)]) -> RelationalPath {
        RelationalPath::new(ids.iter().map(|&(s, r, o)| Triplet::new(s, r, o)).collect()).unwrap()
    }

    #[test]
    fn zero_embeddings_give_log_entities() {
        let g = preset("transe").unwrap();
        let mut store = ParameterStore::new(5, 2, 4, &[], 0).unwrap();
        store.tensor_mut(ParamId::Entity).fill(0.0);
        store.tensor_mut(ParamId::Relation).fill(0.0);
        let batch = PathBatch::from_paths(&[path(&[(0, 1, 3)])]).unwrap();
        assert!((eval_loss(&g, &store, &batch).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_paths_keep_the_mean() {
        let g = preset("chains").unwrap();
        let store = ParameterStore::new(6, 3, 4, &required_weights(&g), 2).unwrap();
        let p = path(&[(0, 1, 3), (3, 2, 5)]);
        let one = eval_loss(&g, &store, &PathBatch::from_paths(&[p.clone()]).unwrap()).unwrap();
        let many = eval_loss(&g, &store, &PathBatch::from_paths(&vec![p; 4]).unwrap()).unwrap();
        assert!((one - many).abs() < 1e-12);
    }

    #[test]
    fn padded_steps_are_masked() {
        let g = preset("ptranse_add").unwrap();
        let store = ParameterStore::new(4, 2, 4, &[], 5).unwrap();
        let short = eval_loss(&g, &store, &PathBatch::from_paths(&[path(&[(0, 1, 2)])]).unwrap()).unwrap();
        let padded = path(&[(0, 1, 2), (2, PAD_RELATION, 2)]);
        let long = eval_loss(&g, &store, &PathBatch::from_paths(&[padded.clone()]).unwrap()).unwrap();
        // same summed loss, divided by twice the steps
        assert!((short - 2.0 * long).abs() < 1e-12);

        let mut tape = Tape::new(&store);
        let l = path_loss(&mut tape, &g, &PathBatch::from_paths(&[padded]).unwrap(), None).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads.touched_rows(ParamId::Relation) == vec![1]);
    }

    #[test]
    fn mixed_lengths_and_empty_batches_fail() {
        let a = path(&[(0, 0, 1)]);
        let b = path(&[(0, 0, 1), (1, 0, 2)]);
        assert!(PathBatch::from_paths(&[a, b]).is_err());
        assert!(matches!(PathBatch::from_paths(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let g = preset("rsn").unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            dim: 4,
            ..TrainConfig::default()
        };
        let mut store = init_store(&g, 5, 2, &cfg).unwrap();
        let before = store.clone();
        let batch = PathBatch::from_paths(&[path(&[(0, 1, 2), (2, 0, 4)])]).unwrap();
        step_once(&g, &mut store, &batch, &cfg, 0.0, &mut seed::rng(1)).unwrap();
        for id in store.param_ids() {
            assert_eq!(store.tensor(id), before.tensor(id));
        }
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let g = preset("transe").unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            dim: 4,
            ..TrainConfig::default()
        };
        let corpus = vec![path(&[(0, 0, 1)])];
        let out = fit(&g, 3, 1, &corpus, &cfg, &mut |_| Ok(0.0)).unwrap();
        assert_eq!(out.store, init_store(&g, 3, 1, &cfg).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn range_validation_names_fields() {
        let bad = TrainConfig {
            lr: 0.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_ok());
        let e = bad.validate_ranges().unwrap_err().to_string();
        assert!(e.contains("train.lr"), "{e}");
        let bad = TrainConfig {
            batch_size: 100,
            ..TrainConfig::default()
        };
        assert!(bad
            .validate_ranges()
            .unwrap_err()
            .to_string()
            .contains("batch_size"));
        let bad = TrainConfig {
            dim: 7,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
