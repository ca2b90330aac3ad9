//! End-to-end drivers shared by the command line and the acceptance tests:
//! data loading, path sampling, candidate training, search and reporting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterStore;
use crate::cell::{Genotype, MicroGenotype, Subspace};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{countries_auc_pr, ea_rank, lp_rank, with_head_queries, RankReport};
use crate::graph::{
    filter_sets, load_alignment_dataset, load_countries, load_link_prediction, DatasetBundle, FilterIndex,
    TaskKind,
};
use crate::search::{hybrid_search, CorpusTask, Objective, SearchOutcome};
use crate::seed;
use crate::train::{FitOutcome, TrainConfig};
use crate::tune::{tune, TrialScore, TuneOutcome};
use crate::walk::{sample_paths, RelationalPath, WalkConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

fn pick<T>(split: Split, (_, valid, test): (T, T, T)) -> T {
    match split {
        Split::Valid => valid,
        Split::Test => test,
    }
}

/// Held-out scores of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub split: String,
    pub auc_pr: Option<f64>,
    pub ranking: Option<RankReport>,
}

impl Report {
    /// AUC-PR on Countries, Hit@1 otherwise.
    pub fn headline(&self) -> f64 {
        self.auc_pr.or(self.ranking.map(|r| r.hit1)).unwrap_or(f64::NAN)
    }
}

/// A loaded dataset with its path corpus.
pub struct Workspace {
    pub config: RunConfig,
    pub bundle: DatasetBundle,
    pub walk: WalkConfig,
    pub corpus: Vec<RelationalPath>,
    filters: FilterIndex,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetBundle> {
    match cfg.data.task {
        TaskKind::LinkPrediction => load_link_prediction(&cfg.data.dir),
        TaskKind::Countries => load_countries(&cfg.data.dir, cfg.countries.task),
        TaskKind::EntityAlignment => load_alignment_dataset(&cfg.data.dir),
    }
}

impl Workspace {
    /// Loads the dataset and samples the path corpus.
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let bundle = load_dataset(cfg)?;
        let walk = cfg.walk_config();
        let corpus = sample_paths(&bundle.graph, &bundle.walk_seeds(), &walk)?;
        Ok(Self::with_corpus(cfg, bundle, corpus))
    }

    pub fn with_corpus(cfg: &RunConfig, bundle: DatasetBundle, corpus: Vec<RelationalPath>) -> Self {
        let filters = match bundle.triplet_splits() {
            Some((a, b, c)) => filter_sets(&bundle.graph, &[a, b, c]),
            None => FilterIndex::default(),
        };
        Workspace {
            config: cfg.clone(),
            walk: cfg.walk_config(),
            bundle,
            corpus,
            filters,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.bundle.graph.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.bundle.graph.num_relations()
    }

    /// Validation objective used to select epochs and candidates.
    pub fn objective(&self) -> Objective {
        let b = &self.bundle;
        match b.task {
            TaskKind::Countries => Objective::Countries {
                valid: b.triplet_splits().unwrap().1.to_vec(),
                regions: b.regions.clone(),
            },
            TaskKind::LinkPrediction => Objective::Ranking {
                valid: with_head_queries(&b.graph, b.triplet_splits().unwrap().1),
                filters: self.filters.clone(),
                metric: self.config.eval.metric,
            },
            TaskKind::EntityAlignment => Objective::Alignment {
                valid: b.pair_splits().unwrap().1.to_vec(),
                candidates: b.alignment_candidates(),
            },
        }
    }

    pub fn task_with(&self, train: TrainConfig) -> CorpusTask<'_> {
        CorpusTask {
            num_entities: self.num_entities(),
            num_relations: self.num_relations(),
            corpus: &self.corpus,
            train,
            objective: self.objective(),
        }
    }

    pub fn task(&self) -> CorpusTask<'_> {
        self.task_with(self.config.train.clone())
    }

    pub fn train(&self, g: &Genotype, seed: u64) -> Result<FitOutcome> {
        self.task().train_candidate(g, seed)
    }

    pub fn evaluate(&self, g: &Genotype, store: &ParameterStore, split: Split) -> Result<Report> {
        let b = &self.bundle;
        let name = match split {
            Split::Valid => "valid",
            Split::Test => "test",
        };
        let mut report = Report {
            split: name.into(),
            auc_pr: None,
            ranking: None,
        };
        match b.task {
            TaskKind::Countries => {
                let queries = pick(split, b.triplet_splits().unwrap());
                report.auc_pr = Some(countries_auc_pr(g, store, queries, &b.regions)?);
            }
            TaskKind::LinkPrediction => {
                let queries = with_head_queries(&b.graph, pick(split, b.triplet_splits().unwrap()));
                report.ranking = Some(lp_rank(g, store, &queries, &self.filters)?);
            }
            TaskKind::EntityAlignment => {
                let pairs = pick(split, b.pair_splits().unwrap());
                report.ranking = Some(ea_rank(store, pairs, &b.alignment_candidates())?);
            }
        }
        Ok(report)
    }

    /// Runs (or resumes) the hybrid search, then retrains the best
    /// candidate with its recorded seed and scores it on test data.
    pub fn search(&self, state_dir: Option<&Path>, resume: bool) -> Result<SearchRun> {
        let cfg = &self.config;
        let outcome = hybrid_search(
            &self.task(),
            &cfg.search,
            &cfg.controller,
            cfg.seed_for("search"),
            state_dir,
            resume,
        )?;
        let best = outcome.best()?.clone();
        let genotype: Genotype = best.genotype.parse()?;
        let fit = self.train(&genotype, best.seed)?;
        let test = self.evaluate(&genotype, &fit.store, Split::Test)?;
        Ok(SearchRun {
            outcome,
            genotype,
            seed: best.seed,
            valid: fit.best_valid.unwrap_or(f64::NAN),
            test,
            fit,
        })
    }

    /// Trains `samples` random genotypes from `subspace` per repeat and
    /// keeps the best by validation score.
    pub fn random_search(
        &self,
        subspace: Subspace,
        samples: usize,
        repeats: usize,
    ) -> Result<RandomSearchRun> {
        let members = subspace.members();
        let base = self.config.seed_for("random-search");
        let mut runs = Vec::with_capacity(repeats);
        for repeat in 0..repeats {
            let repeat_seed = seed::mix(base, repeat as u64);
            let mut rng = seed::rng(repeat_seed);
            let draws: Vec<(Genotype, u64)> = (0..samples)
                .map(|i| {
                    let macro_part = *members.choose(&mut rng).expect("subspaces are nonempty");
                    let micro_part = MicroGenotype::from_index(rng.gen_range(0..MicroGenotype::COUNT))
                        .expect("index in range");
                    (
                        Genotype {
                            macro_part,
                            micro_part,
                        },
                        seed::mix(repeat_seed, i as u64 + 1),
                    )
                })
                .collect();
            let scored: Vec<Sample> = draws
                .par_iter()
                .map(|(g, s)| {
                    let valid = match self.train(g, *s) {
                        Ok(fit) => fit.best_valid,
                        Err(e) => {
                            log::warn!("candidate {g} failed: {e}");
                            None
                        }
                    };
                    Sample {
                        genotype: g.to_string(),
                        seed: *s,
                        valid,
                    }
                })
                .collect();
            let best = scored
                .iter()
                .filter(|s| s.valid.is_some_and(f64::is_finite))
                .fold(None::<&Sample>, |b, s| match b {
                    Some(b) if b.valid >= s.valid => Some(b),
                    _ => Some(s),
                })
                .ok_or(Error::Empty("successful candidate set"))?
                .clone();
            let g: Genotype = best.genotype.parse()?;
            let fit = self.train(&g, best.seed)?;
            let test = self.evaluate(&g, &fit.store, Split::Test)?;
            log::info!(
                "{subspace} repeat {}: best {} valid {:.4} test {:.4}",
                repeat + 1,
                best.genotype,
                best.valid.unwrap_or(f64::NAN),
                test.headline()
            );
            runs.push(RepeatRun {
                repeat,
                best,
                test,
                samples: scored,
            });
        }
        let tests: Vec<f64> = runs.iter().map(|r| r.test.headline()).collect();
        let (mean, std) = mean_std(&tests);
        Ok(RandomSearchRun {
            subspace: subspace.to_string(),
            repeats: runs,
            mean,
            std,
        })
    }

    /// Random search over training settings for a fixed genotype.
    pub fn tune(&self, g: &Genotype) -> Result<TuneOutcome> {
        let cfg = &self.config;
        tune(&cfg.train, cfg.tune.trials, cfg.seed_for("tune"), &|spec| {
            let task = self.task_with(spec.config.clone());
            let fit = task.train_candidate(g, spec.seed)?;
            let valid = fit.best_valid.ok_or(Error::Empty("training history"))?;
            let test = self.evaluate(g, &fit.store, Split::Test)?.headline();
            Ok(TrialScore {
                valid,
                test: Some(test),
            })
        })
    }
}

pub struct SearchRun {
    pub outcome: SearchOutcome,
    pub genotype: Genotype,
    pub seed: u64,
    pub valid: f64,
    pub test: Report,
    pub fit: FitOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub genotype: String,
    pub seed: u64,
    pub valid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRun {
    pub repeat: usize,
    pub best: Sample,
    pub test: Report,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchRun {
    pub subspace: String,
    pub repeats: Vec<RepeatRun>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
