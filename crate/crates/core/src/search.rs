//! Hybrid architecture search.
//!
//! Every genotype field has an independent categorical distribution. Macro
//! fields are updated from stand-alone trainings (each candidate trained
//! from scratch and scored on validation data), micro fields from one-shot
//! measurements against a shared parameter store that every candidate
//! trains a little. One outer iteration:
//!
//! 1. sample a micro genotype and run `k1` macro rounds with it pinned;
//! 2. sample a macro genotype and run `k2` micro epochs with it pinned.
//!
//! The final answer is always taken from the stand-alone log.
//!
//! # Update rule
//!
//! For one component with probabilities `θ` (length `K`) and samples
//! `(a_i, M_i)`, `i = 1..m`:
//!
//! ```text
//! θ ← θ + ρ/m · Σ_i M̃_i · (e_{a_i} − θ) · (1 − θ_{a_i})
//! ```
//!
//! where `M̃` are the rewards, mean-centred over the batch by default. In
//! the two-category case this is exactly `θ₁ + ρ (T − θ₁)² M` with the
//! one-hot `T`, the natural-gradient step of the reduced `K − 1`
//! parametrization. The total change sums to zero, so the last coordinate
//! is implied; the result is floored at [`PROB_FLOOR`] and renormalized.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParameterStore;
use crate::cell::{
    Activation, Combinator, Connection, Genotype, Link, MacroGenotype, MicroGenotype, SUPERNET_WEIGHTS,
};
use crate::error::{Error, Result};
use crate::eval::{countries_auc_pr, ea_rank, lp_rank, search_measurement, LpMetric, Measurement};
use crate::graph::{EntityId, FilterIndex, Triplet};
use crate::seed;
use crate::train::{fit, step_once, FitOutcome, PathBatch, TrainConfig};
use crate::walk::RelationalPath;

pub const PROB_FLOOR: f64 = 1e-3;

/// Number of macro components; the remaining ones are micro.
pub const MACRO_COMPONENTS: usize = 5;
/// Category counts of all components, macro first.
pub const COMPONENT_SIZES: [usize; 13] = [4, 4, 4, 4, 4, 3, 3, 2, 2, 2, 2, 2, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParam {
    probs: Vec<f64>,
}

impl CategoricalParam {
    pub fn uniform(k: usize) -> Self {
        CategoricalParam {
            probs: vec![1.0 / k as f64; k],
        }
    }

    /// Takes a probability vector as is (no floor), e.g. a degenerate one.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.len() < 2 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("{probs:?} is not a probability vector")));
        }
        Ok(CategoricalParam { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// One natural-gradient step from `(category, reward)` samples whose
    /// rewards are already baselined.
    pub fn npg_step(&mut self, samples: &[(usize, f64)], rho: f64) {
        let k = self.probs.len();
        let m = samples.len() as f64;
        let mut delta = vec![0.0; k];
        for &(a, reward) in samples {
            let scale = rho / m * reward * (1.0 - self.probs[a]);
            for (j, d) in delta.iter_mut().enumerate() {
                let e = if j == a { 1.0 } else { 0.0 };
                *d += scale * (e - self.probs[j]);
            }
        }
        if delta.iter().all(|&d| d == 0.0) {
            return;
        }
        // the first K-1 coordinates carry the update, the last is implied
        for j in 0..k - 1 {
            self.probs[j] += delta[j];
        }
        self.probs[k - 1] = 1.0 - self.probs[..k - 1].iter().sum::<f64>();
        self.project();
    }

    fn project(&mut self) {
        let k = self.probs.len() as f64;
        if self.probs.iter().any(|&p| p < PROB_FLOOR) {
            let excess: Vec<f64> = self.probs.iter().map(|&p| (p - PROB_FLOOR).max(0.0)).collect();
            let total: f64 = excess.iter().sum();
            let room = 1.0 - k * PROB_FLOOR;
            for (p, e) in self.probs.iter_mut().zip(excess) {
                *p = PROB_FLOOR + e * room / total;
            }
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            self.probs.iter_mut().for_each(|p| *p /= sum);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    #[default]
    BatchMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub rho_macro: f64,
    pub rho_micro: f64,
    pub m_samples: usize,
    pub baseline: Baseline,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            rho_macro: 0.1,
            rho_micro: 0.05,
            m_samples: 2,
            baseline: Baseline::BatchMean,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, rho) in [
            ("controller.rho_macro", self.rho_macro),
            ("controller.rho_micro", self.rho_micro),
        ] {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.m_samples == 0 {
            return Err(Error::config("controller.m_samples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Macro,
    Micro,
    Both,
}

impl Part {
    fn covers(self, component: usize) -> bool {
        match self {
            Part::Macro => component < MACRO_COMPONENTS,
            Part::Micro => component >= MACRO_COMPONENTS,
            Part::Both => true,
        }
    }
}

/// Category index of every component of `g`, macro first.
pub fn categories(g: &Genotype) -> [usize; 13] {
    let m = &g.macro_part;
    let u = &g.micro_part;
    let mut c = [
        m.in_r.index(),
        m.in_v.index(),
        m.comb_s.index(),
        m.comb_r.index(),
        m.comb_v.index(),
        u.act_s.index(),
        u.act_r.index(),
        0,
        0,
        0,
        0,
        0,
        0,
    ];
    for (k, l) in u.links.iter().enumerate() {
        c[7 + k] = l.index();
    }
    c
}

fn from_categories(c: &[usize; 13]) -> Genotype {
    let mut links = [Link::Identity; 6];
    for (k, l) in links.iter_mut().enumerate() {
        *l = Link::from_index(c[7 + k]).unwrap();
    }
    Genotype::new(
        MacroGenotype {
            in_r: Connection::from_index(c[0]).unwrap(),
            in_v: Connection::from_index(c[1]).unwrap(),
            comb_s: Combinator::from_index(c[2]).unwrap(),
            comb_r: Combinator::from_index(c[3]).unwrap(),
            comb_v: Combinator::from_index(c[4]).unwrap(),
        },
        MicroGenotype {
            act_s: Activation::from_index(c[5]).unwrap(),
            act_r: Activation::from_index(c[6]).unwrap(),
            links,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub components: Vec<CategoricalParam>,
    pub config: ControllerConfig,
}

impl ControllerState {
    pub fn uniform(config: ControllerConfig) -> Self {
        ControllerState {
            components: COMPONENT_SIZES
                .iter()
                .map(|&k| CategoricalParam::uniform(k))
                .collect(),
            config,
        }
    }

    /// Draws the fields that are not pinned, in component order.
    pub fn sample_genotype<R: Rng>(
        &self,
        rng: &mut R,
        macro_pin: Option<MacroGenotype>,
        micro_pin: Option<MicroGenotype>,
    ) -> Genotype {
        let pinned = categories(&Genotype::new(
            macro_pin.unwrap_or_default(),
            micro_pin.unwrap_or_default(),
        ));
        let mut c = [0; 13];
        for (k, slot) in c.iter_mut().enumerate() {
            let is_pinned = if k < MACRO_COMPONENTS {
                macro_pin.is_some()
            } else {
                micro_pin.is_some()
            };
            *slot = if is_pinned {
                pinned[k]
            } else {
                self.components[k].sample(rng)
            };
        }
        from_categories(&c)
    }

    /// Natural-gradient update of the components in `part`.
    pub fn npg_update(&mut self, samples: &[(Genotype, f64)], part: Part) -> Result<()> {
        if samples.len() != self.config.m_samples {
            return Err(Error::Contract(format!(
                "npg_update expects {} samples, got {}",
                self.config.m_samples,
                samples.len()
            )));
        }
        if samples.iter().any(|(_, r)| !r.is_finite()) {
            return Err(Error::NonFinite { op: "npg_update" });
        }
        let mean = match self.config.baseline {
            Baseline::None => 0.0,
            Baseline::BatchMean => samples.iter().map(|(_, r)| r).sum::<f64>() / samples.len() as f64,
        };
        let cats: Vec<[usize; 13]> = samples.iter().map(|(g, _)| categories(g)).collect();
        for (k, comp) in self.components.iter_mut().enumerate() {
            if !part.covers(k) {
                continue;
            }
            let rho = if k < MACRO_COMPONENTS {
                self.config.rho_macro
            } else {
                self.config.rho_micro
            };
            let s: Vec<(usize, f64)> = cats
                .iter()
                .zip(samples)
                .map(|(c, (_, r))| (c[k], r - mean))
                .collect();
            comp.npg_step(&s, rho);
        }
        Ok(())
    }

    /// Most likely genotype under the current distributions.
    pub fn mode(&self) -> Genotype {
        let mut c = [0; 13];
        for (slot, comp) in c.iter_mut().zip(&self.components) {
            *slot = comp
                .probs()
                .iter()
                .enumerate()
                .fold(0, |best, (i, &p)| if p > comp.probs()[best] { i } else { best });
        }
        from_categories(&c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBudget {
    pub outer_iterations: usize,
    pub k1: usize,
    pub k2: usize,
    pub top_k: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            outer_iterations: 20,
            k1: 1,
            k2: 1,
            top_k: 5,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("search.k1", self.k1),
            ("search.k2", self.k2),
            ("search.top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// What a candidate is scored on.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Alignment: Hit@1 on validation pairs for stand-alone scoring,
    /// negative loss on the training batch for one-shot scoring.
    Alignment {
        valid: Vec<(EntityId, EntityId)>,
        candidates: Vec<EntityId>,
    },
    /// Link prediction: filtered metric on the validation triplets, or on
    /// a random validation mini-batch for one-shot scoring.
    Ranking {
        valid: Vec<Triplet>,
        filters: FilterIndex,
        metric: LpMetric,
    },
    /// Countries: pooled AUC-PR of the validation queries.
    Countries {
        valid: Vec<Triplet>,
        regions: Vec<EntityId>,
    },
}

impl Objective {
    /// Score on the full validation data.
    pub fn full(&self, g: &Genotype, store: &ParameterStore) -> Result<f64> {
        match self {
            Objective::Alignment { valid, candidates } => Ok(ea_rank(store, valid, candidates)?.hit1),
            Objective::Ranking {
                valid,
                filters,
                metric,
            } => {
                let r = lp_rank(g, store, valid, filters)?;
                Ok(match metric {
                    LpMetric::Hit1 => r.hit1,
                    LpMetric::Mrr => r.mrr,
                })
            }
            Objective::Countries { valid, regions } => countries_auc_pr(g, store, valid, regions),
        }
    }

    /// Mini-batch score for one-shot search.
    pub fn batch<R: Rng>(
        &self,
        g: &Genotype,
        store: &ParameterStore,
        train_batch: &PathBatch,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<f64> {
        match self {
            Objective::Alignment { .. } => search_measurement(g, store, Measurement::NegLoss(train_batch)),
            Objective::Ranking {
                valid,
                filters,
                metric,
            } => {
                let queries: Vec<Triplet> = valid
                    .choose_multiple(rng, batch_size.min(valid.len()))
                    .copied()
                    .collect();
                search_measurement(
                    g,
                    store,
                    Measurement::Ranking {
                        queries: &queries,
                        filters,
                        metric: *metric,
                    },
                )
            }
            Objective::Countries { valid, regions } => search_measurement(
                g,
                store,
                Measurement::AucPr {
                    queries: valid,
                    regions,
                },
            ),
        }
    }
}

/// Training services the search drives.
pub trait SearchTask: Sync {
    /// Trains `g` from scratch and returns its validation reward.
    fn stand_alone(&self, g: &Genotype, seed: u64) -> Result<f64>;
    /// A supernet store that every genotype can run on.
    fn shared_store(&self, seed: u64) -> Result<ParameterStore>;
    fn num_paths(&self) -> usize;
    fn batch_size(&self) -> usize;
    fn lr(&self, micro_epoch: usize) -> f64;
    /// One training step of `g` on the shared store with the given paths.
    fn shared_step(
        &self,
        g: &Genotype,
        store: &mut ParameterStore,
        paths: &[usize],
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<PathBatch>;
    /// One-shot reward of `g` on the shared store.
    fn shared_reward(
        &self,
        g: &Genotype,
        store: &ParameterStore,
        batch: &PathBatch,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64>;
}

/// The standard [`SearchTask`]: a fixed path corpus, a training
/// configuration and an objective.
pub struct CorpusTask<'a> {
    pub num_entities: usize,
    pub num_relations: usize,
    pub corpus: &'a [RelationalPath],
    pub train: TrainConfig,
    pub objective: Objective,
}

impl CorpusTask<'_> {
    /// Trains `g` from scratch with training seed `seed`.
    pub fn train_candidate(&self, g: &Genotype, seed: u64) -> Result<FitOutcome> {
        let cfg = TrainConfig {
            rng_seed: seed,
            ..self.train.clone()
        };
        fit(
            g,
            self.num_entities,
            self.num_relations,
            self.corpus,
            &cfg,
            &mut |s| self.objective.full(g, s),
        )
    }
}

impl SearchTask for CorpusTask<'_> {
    fn stand_alone(&self, g: &Genotype, seed: u64) -> Result<f64> {
        let out = self.train_candidate(g, seed)?;
        match out.best_valid {
            Some(v) => Ok(v),
            None => self.objective.full(g, &out.store),
        }
    }

    fn shared_store(&self, seed: u64) -> Result<ParameterStore> {
        ParameterStore::new(
            self.num_entities,
            self.num_relations,
            self.train.dim,
            &SUPERNET_WEIGHTS,
            seed,
        )
    }

    fn num_paths(&self) -> usize {
        self.corpus.len()
    }

    fn batch_size(&self) -> usize {
        self.train.batch_size
    }

    fn lr(&self, micro_epoch: usize) -> f64 {
        self.train.lr * self.train.decay.powi(micro_epoch as i32)
    }

    fn shared_step(
        &self,
        g: &Genotype,
        store: &mut ParameterStore,
        paths: &[usize],
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<PathBatch> {
        let refs: Vec<&RelationalPath> = paths.iter().map(|&i| &self.corpus[i]).collect();
        let batch = PathBatch::new(&refs)?;
        step_once(g, store, &batch, &self.train, lr, rng)?;
        Ok(batch)
    }

    fn shared_reward(
        &self,
        g: &Genotype,
        store: &ParameterStore,
        batch: &PathBatch,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        self.objective.batch(g, store, batch, self.train.batch_size, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Macro,
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub genotype: String,
    pub reward: f64,
    pub failed: bool,
    pub seed: u64,
    pub wall_secs: f64,
}

impl LogRecord {
    /// The record without its timing field, for reproducibility checks.
    pub fn timeless(&self) -> LogRecord {
        LogRecord {
            wall_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Reward for a candidate whose training failed: one standard deviation
/// below the worst reward of the same phase logged so far.
pub fn failure_reward(log: &[LogRecord], phase: Phase) -> f64 {
    let r: Vec<f64> = log
        .iter()
        .filter(|x| x.phase == phase && !x.failed)
        .map(|x| x.reward)
        .collect();
    if r.is_empty() {
        return -1.0;
    }
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let std = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    r.iter().copied().fold(f64::INFINITY, f64::min) - std
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Integrity("malformed RNG state in search checkpoint".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Mutable state of a running search.
pub struct SearchState {
    pub controller: ControllerState,
    pub shared: ParameterStore,
    pub log: Vec<LogRecord>,
    pub iteration: usize,
    pub micro_epochs: usize,
    pub standalone_count: u64,
    sample_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    seed: u64,
}

impl SearchState {
    pub fn new(task: &dyn SearchTask, config: ControllerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(SearchState {
            controller: ControllerState::uniform(config),
            shared: task.shared_store(seed::derive(seed, "shared-init"))?,
            log: Vec::new(),
            iteration: 0,
            micro_epochs: 0,
            standalone_count: 0,
            sample_rng: seed::rng(seed::derive(seed, "controller")),
            train_rng: seed::rng(seed::derive(seed, "shared-train")),
            seed,
        })
    }

    /// Stand-alone round with the micro part pinned: trains `m` sampled
    /// candidates (in parallel) and updates the macro distributions.
    pub fn macro_round(&mut self, task: &dyn SearchTask, micro: MicroGenotype) -> Result<()> {
        let m = self.controller.config.m_samples;
        let jobs: Vec<(Genotype, u64)> = (0..m)
            .map(|_| {
                let g = self
                    .controller
                    .sample_genotype(&mut self.sample_rng, None, Some(micro));
                let s = seed::mix(seed::derive(self.seed, "standalone"), self.standalone_count);
                self.standalone_count += 1;
                (g, s)
            })
            .collect();
        let results: Vec<(Result<f64>, f64)> = jobs
            .par_iter()
            .map(|(g, s)| {
                let t = Instant::now();
                (task.stand_alone(g, *s), t.elapsed().as_secs_f64())
            })
            .collect();
        let mut samples = Vec::with_capacity(m);
        for ((g, s), (res, secs)) in jobs.into_iter().zip(results) {
            let (reward, failed) = match res {
                Ok(r) if r.is_finite() => (r, false),
                Ok(_) => (failure_reward(&self.log, Phase::Macro), true),
                Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                    log::warn!("stand-alone training failed: {e}");
                    (failure_reward(&self.log, Phase::Macro), true)
                }
                Err(e) => return Err(e),
            };
            self.log.push(LogRecord {
                phase: Phase::Macro,
                iteration: self.iteration,
                genotype: g.to_string(),
                reward,
                failed,
                seed: s,
                wall_secs: secs,
            });
            samples.push((g, reward));
        }
        self.controller.npg_update(&samples, Part::Macro)
    }

    /// One epoch of one-shot training and micro updates with the macro
    /// part pinned.
    pub fn micro_round(&mut self, task: &dyn SearchTask, macro_part: MacroGenotype) -> Result<()> {
        let m = self.controller.config.m_samples;
        let mut order: Vec<usize> = (0..task.num_paths()).collect();
        order.shuffle(&mut self.train_rng);
        let lr = task.lr(self.micro_epochs);
        let batches: Vec<&[usize]> = order.chunks(task.batch_size()).collect();
        for group in batches.chunks(m) {
            if group.len() < m {
                break;
            }
            let mut samples = Vec::with_capacity(m);
            for paths in group {
                let t = Instant::now();
                let g = self
                    .controller
                    .sample_genotype(&mut self.sample_rng, Some(macro_part), None);
                let outcome = task
                    .shared_step(&g, &mut self.shared, paths, lr, &mut self.train_rng)
                    .and_then(|b| task.shared_reward(&g, &self.shared, &b, &mut self.train_rng));
                let (reward, failed) = match outcome {
                    Ok(r) if r.is_finite() => (r, false),
                    Ok(_) => (failure_reward(&self.log, Phase::Micro), true),
                    Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                        log::warn!("one-shot step failed: {e}");
                        (failure_reward(&self.log, Phase::Micro), true)
                    }
                    Err(e) => return Err(e),
                };
                self.log.push(LogRecord {
                    phase: Phase::Micro,
                    iteration: self.iteration,
                    genotype: g.to_string(),
                    reward,
                    failed,
                    seed: self.seed,
                    wall_secs: t.elapsed().as_secs_f64(),
                });
                samples.push((g, reward));
            }
            self.controller.npg_update(&samples, Part::Micro)?;
        }
        self.micro_epochs += 1;
        Ok(())
    }

    /// One outer iteration.
    pub fn iterate(&mut self, task: &dyn SearchTask, budget: &SearchBudget) -> Result<()> {
        let micro = self
            .controller
            .sample_genotype(&mut self.sample_rng, None, None)
            .micro_part;
        for _ in 0..budget.k1 {
            self.macro_round(task, micro)?;
        }
        let macro_part = self
            .controller
            .sample_genotype(&mut self.sample_rng, None, None)
            .macro_part;
        for _ in 0..budget.k2 {
            self.micro_round(task, macro_part)?;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Writes `state.json`, `shared.ckpt` and `search_log.jsonl` into `dir`.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shared = self.shared.to_bytes("supernet");
        let shared_path = dir.join("shared.ckpt");
        crate::codec::write_file(&shared_path, &shared)?;
        let log_path = dir.join("search_log.jsonl");
        let mut text = Vec::new();
        for r in &self.log {
            serde_json::to_writer(&mut text, r).expect("records serialize");
            text.push(b'\n');
        }
        crate::codec::write_file(&log_path, &text)?;
        let state = Checkpoint {
            version: 1,
            seed: self.seed,
            iteration: self.iteration,
            micro_epochs: self.micro_epochs,
            standalone_count: self.standalone_count,
            controller: self.controller.clone(),
            sample_rng: rng_state(&self.sample_rng),
            train_rng: rng_state(&self.train_rng),
            log_len: self.log.len(),
            shared_sha256: hex(&Sha256::digest(&shared)),
        };
        let json = serde_json::to_vec_pretty(&state).expect("state serializes");
        // write-then-rename so an interrupted checkpoint leaves the old one
        let tmp = dir.join("state.json.tmp");
        crate::codec::write_file(&tmp, &json)?;
        fs::rename(&tmp, dir.join("state.json")).map_err(|e| Error::io(dir, e))
    }

    pub fn resume(dir: &Path) -> Result<Self> {
        let state_path = dir.join("state.json");
        let text = crate::codec::read_file(&state_path)?;
        let state: Checkpoint = serde_json::from_slice(&text)
            .map_err(|e| Error::Integrity(format!("{}: {e}", state_path.display())))?;
        let shared_bytes = crate::codec::read_file(&dir.join("shared.ckpt"))?;
        if hex(&Sha256::digest(&shared_bytes)) != state.shared_sha256 {
            return Err(Error::Integrity(
                "shared store does not match search state".into(),
            ));
        }
        let (shared, _) = ParameterStore::from_bytes(&shared_bytes)?;
        let log_path = dir.join("search_log.jsonl");
        let file = fs::File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = Vec::with_capacity(state.log_len);
        for (i, line) in BufReader::new(file).lines().enumerate().take(state.log_len) {
            let line = line.map_err(|e| Error::io(&log_path, e))?;
            log.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: log_path.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        if log.len() != state.log_len {
            return Err(Error::Integrity("search log is shorter than recorded".into()));
        }
        Ok(SearchState {
            controller: state.controller,
            shared,
            log,
            iteration: state.iteration,
            micro_epochs: state.micro_epochs,
            standalone_count: state.standalone_count,
            sample_rng: state.sample_rng.restore()?,
            train_rng: state.train_rng.restore()?,
            seed: state.seed,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    iteration: usize,
    micro_epochs: usize,
    standalone_count: u64,
    controller: ControllerState,
    sample_rng: RngState,
    train_rng: RngState,
    log_len: usize,
    shared_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genotype: String,
    pub reward: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub log: Vec<LogRecord>,
    pub controller: ControllerState,
    /// Distinct stand-alone genotypes by best reward, at most `top_k`.
    pub ranked: Vec<Candidate>,
}

impl SearchOutcome {
    pub fn best(&self) -> Result<&Candidate> {
        self.ranked.first().ok_or(Error::Empty("stand-alone search log"))
    }
}

/// Stand-alone records ranked by reward (ties keep log order), one entry
/// per genotype.
pub fn rank_candidates(log: &[LogRecord], top_k: usize) -> Vec<Candidate> {
    let mut macro_records: Vec<&LogRecord> = log
        .iter()
        .filter(|r| r.phase == Phase::Macro && !r.failed)
        .collect();
    macro_records.sort_by(|a, b| b.reward.total_cmp(&a.reward));
    let mut seen = std::collections::HashSet::new();
    macro_records
        .into_iter()
        .filter(|r| seen.insert(r.genotype.clone()))
        .take(top_k)
        .map(|r| Candidate {
            genotype: r.genotype.clone(),
            reward: r.reward,
            seed: r.seed,
        })
        .collect()
}

/// Runs outer iterations until `budget.outer_iterations`, checkpointing to
/// `state_dir` after each one. With `resume`, continues from the state
/// found there.
pub fn hybrid_search(
    task: &dyn SearchTask,
    budget: &SearchBudget,
    config: &ControllerConfig,
    seed: u64,
    state_dir: Option<&Path>,
    resume: bool,
) -> Result<SearchOutcome> {
    budget.validate()?;
    let mut state = match (state_dir, resume) {
        (Some(dir), true) => SearchState::resume(dir)?,
        (None, true) => return Err(Error::config("resume", "needs a state directory")),
        _ => SearchState::new(task, config.clone(), seed)?,
    };
    while state.iteration < budget.outer_iterations {
        let t = Instant::now();
        state.iterate(task, budget)?;
        if let Some(dir) = state_dir {
            state.checkpoint(dir)?;
        }
        let best = rank_candidates(&state.log, 1);
        log::info!(
            "search iteration {}/{} in {:.1}s, best so far {}",
            state.iteration,
            budget.outer_iterations,
            t.elapsed().as_secs_f64(),
            best.first()
                .map_or("-".to_string(), |c| format!("{:.4} {}", c.reward, c.genotype))
        );
    }
    Ok(SearchOutcome {
        ranked: rank_candidates(&state.log, budget.top_k),
        controller: state.controller,
        log: state.log,
    })
}

/// Appends records to a line-delimited log file.
pub fn append_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn state_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("search_state")
}
