//! Run configuration: a TOML file with one section per pipeline stage.
//!
//! ```toml
//! [run]
//! seed = 7
//!
//! [data]
//! task = "countries"
//! dir = "data/countries"
//!
//! [countries]
//! task = "S1"
//! mode = "search"
//!
//! [train]
//! epochs = 60
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! Every per-module seed is derived from `run.seed` with a label, so a
//! snapshot of the resolved config reproduces a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::Subspace;
use crate::error::{Error, Result};
use crate::eval::LpMetric;
use crate::graph::{resolve, CountriesTask, TaskKind};
use crate::search::{ControllerConfig, SearchBudget};
use crate::seed;
use crate::train::TrainConfig;
use crate::walk::WalkConfig;

/// Overrides `run.out_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "KGCELL_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub search: SearchBudget,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub countries: CountriesSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads for stand-alone trainings and tuner trials; 0 lets
    /// the thread pool decide.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            workers: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub task: TaskKind,
    pub dir: PathBuf,
}

/// Walk settings; unset fields take the defaults of the task kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    pub depth_bias: Option<f64>,
    pub cross_kg_bias: Option<f64>,
    pub path_length: Option<usize>,
    pub paths_per_triplet: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Validation metric that ranks link-prediction candidates.
    pub metric: LpMetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub trials: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection { trials: 50 }
    }
}

/// How the Countries command picks its model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountriesMode {
    /// Hybrid architecture search.
    Search,
    /// Best of `samples` random genotypes drawn from a subspace.
    Random(Subspace),
}

impl FromStr for CountriesMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("search") {
            return Ok(CountriesMode::Search);
        }
        s.parse().map(CountriesMode::Random)
    }
}

impl fmt::Display for CountriesMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CountriesMode::Search => f.write_str("search"),
            CountriesMode::Random(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for CountriesMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CountriesMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountriesSection {
    pub task: CountriesTask,
    pub mode: CountriesMode,
    /// Genotypes per repeat in random mode.
    pub samples: usize,
    pub repeats: usize,
}

impl Default for CountriesSection {
    fn default() -> Self {
        CountriesSection {
            task: CountriesTask::S1,
            mode: CountriesMode::Search,
            samples: 20,
            repeats: 3,
        }
    }
}

impl RunConfig {
    /// A config with every section at its default.
    pub fn new(task: TaskKind, dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            run: RunSection::default(),
            data: DataSection {
                task,
                dir: dir.into(),
            },
            walk: WalkSection::default(),
            train: TrainConfig::default(),
            search: SearchBudget::default(),
            controller: ControllerConfig::default(),
            eval: EvalSection::default(),
            tune: TuneSection::default(),
            countries: CountriesSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map_or_else(|| "config".to_string(), str::to_owned);
            Error::config(field, e.to_string().trim().to_owned())
        })
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.dir = resolve(base, &cfg.data.dir);
        if std::env::var_os(OUTPUT_ROOT_ENV).is_none() {
            cfg.run.out_dir = resolve(base, &cfg.run.out_dir);
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces the global seed and re-derives the module seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.resolve();
    }

    /// Fills task defaults for the walk and fans the global seed out.
    pub fn resolve(&mut self) {
        let d = self.walk_defaults();
        let w = &mut self.walk;
        w.depth_bias.get_or_insert(d.depth_bias);
        if w.cross_kg_bias.is_none() {
            w.cross_kg_bias = d.cross_kg_bias;
        }
        w.path_length.get_or_insert(d.path_length);
        w.paths_per_triplet.get_or_insert(d.paths_per_triplet);
        self.train.rng_seed = self.seed_for("train");
    }

    fn walk_defaults(&self) -> WalkConfig {
        match self.data.task {
            TaskKind::EntityAlignment => WalkConfig::entity_alignment(0),
            _ => WalkConfig::link_prediction(0),
        }
    }

    pub fn seed_for(&self, module: &str) -> u64 {
        seed::derive(self.run.seed, module)
    }

    pub fn walk_config(&self) -> WalkConfig {
        let d = self.walk_defaults();
        WalkConfig {
            depth_bias: self.walk.depth_bias.unwrap_or(d.depth_bias),
            cross_kg_bias: self.walk.cross_kg_bias.or(d.cross_kg_bias),
            path_length: self.walk.path_length.unwrap_or(d.path_length),
            paths_per_triplet: self.walk.paths_per_triplet.unwrap_or(d.paths_per_triplet),
            rng_seed: self.seed_for("walk"),
        }
    }

    /// Output root after the environment override.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.run.out_dir.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.dir.is_dir() {
            return Err(Error::config(
                "data.dir",
                format!("{} is not a directory", self.data.dir.display()),
            ));
        }
        let walk = self.walk_config();
        walk.validate()?;
        if self.data.task != TaskKind::EntityAlignment && walk.cross_kg_bias.is_some() {
            return Err(Error::config(
                "walk.cross_kg_bias",
                "only applies to entity alignment",
            ));
        }
        self.train.validate()?;
        self.train.validate_ranges()?;
        self.search.validate()?;
        self.controller.validate()?;
        if self.tune.trials == 0 {
            return Err(Error::config("tune.trials", "must be at least 1"));
        }
        if self.countries.samples == 0 {
            return Err(Error::config("countries.samples", "must be at least 1"));
        }
        if self.countries.repeats == 0 {
            return Err(Error::config("countries.repeats", "must be at least 1"));
        }
        Ok(())
    }
}
