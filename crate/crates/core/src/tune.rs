//! Seeded random search over training hyper-parameters.
//!
//! Learning rate and L2 weight are drawn log-uniformly, decay and dropout
//! uniformly, batch size uniformly from [`BATCH_SIZES`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::train::{TrainConfig, BATCH_SIZES};

pub const LR_RANGE: (f64, f64) = (1e-5, 1e-3);
pub const L2_RANGE: (f64, f64) = (1e-5, 1e-2);
pub const DECAY_RANGE: (f64, f64) = (0.98, 1.0);
pub const DROPOUT_RANGE: (f64, f64) = (0.0, 0.6);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
}

/// `base` with the tuned fields resampled; dimension, epochs and patience
/// are kept.
pub fn sample_config<R: Rng>(base: &TrainConfig, rng: &mut R) -> TrainConfig {
    TrainConfig {
        lr: log_uniform(rng, LR_RANGE),
        l2: log_uniform(rng, L2_RANGE),
        decay: rng.gen_range(DECAY_RANGE.0..=DECAY_RANGE.1),
        dropout: rng.gen_range(DROPOUT_RANGE.0..=DROPOUT_RANGE.1),
        batch_size: *BATCH_SIZES.choose(rng).unwrap(),
        ..base.clone()
    }
}

pub fn sample_trials(base: &TrainConfig, n_trials: usize, tuner_seed: u64) -> Vec<TrialSpec> {
    let mut rng = seed::rng(seed::derive(tuner_seed, "tune"));
    (0..n_trials)
        .map(|trial_id| {
            let mut config = sample_config(base, &mut rng);
            let seed = seed::mix(tuner_seed, trial_id as u64);
            config.rng_seed = seed;
            TrialSpec {
                trial_id,
                seed,
                config,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub valid: f64,
    pub test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub valid: Option<f64>,
    pub test: Option<f64>,
    pub error: Option<String>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub best: TrialRecord,
    pub table: Vec<TrialRecord>,
}

/// Runs the given trials (in parallel) and picks the best validation
/// score; ties go to the lower trial id. Failed trials are kept in the
/// table with their error.
pub fn run_trials(
    trials: &[TrialSpec],
    run: &(dyn Fn(&TrialSpec) -> Result<TrialScore> + Sync),
) -> Result<TuneOutcome> {
    if trials.is_empty() {
        return Err(Error::config("tune.trials", "must be at least 1"));
    }
    let table: Vec<TrialRecord> = trials
        .par_iter()
        .map(|spec| {
            let t = Instant::now();
            let res = run(spec);
            let (valid, test, error) = match res {
                Ok(s) => (Some(s.valid), s.test, None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            TrialRecord {
                trial_id: spec.trial_id,
                seed: spec.seed,
                config: spec.config.clone(),
                valid,
                test,
                error,
                wall_secs: t.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let best = table
        .iter()
        .filter(|r| r.valid.is_some_and(f64::is_finite))
        .fold(None::<&TrialRecord>, |best, r| match best {
            Some(b) if b.valid >= r.valid => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::Empty("successful trial set"))?
        .clone();
    Ok(TuneOutcome { best, table })
}

pub fn tune(
    base: &TrainConfig,
    n_trials: usize,
    tuner_seed: u64,
    run: &(dyn Fn(&TrialSpec) -> Result<TrialScore> + Sync),
) -> Result<TuneOutcome> {
    run_trials(&sample_trials(base, n_trials, tuner_seed), run)
}
