use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use kgcell::autodiff::ParameterStore;
use kgcell::cell::resolve_genotype;
use kgcell::config::{CountriesMode, RunConfig};
use kgcell::graph::{CountriesTask, TaskKind};
use kgcell::pipeline::{load_dataset, Split, Workspace};
use kgcell::search::state_dir;
use kgcell::train::write_history;
use kgcell::walk::PathCorpus;

#[derive(Parser, Debug)]
#[command(
    name = "kgcell",
    version,
    about = "Knowledge-graph embeddings with a searchable path cell"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Threads for stand-alone trainings and tuner trials.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Global seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to a fresh directory under the output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Preset name or genotype string.
    #[arg(long, global = true)]
    genotype: Option<String>,
    /// Continue the run stored in this directory.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the relational path corpus.
    SamplePaths,
    /// Train one genotype and report held-out metrics.
    Train,
    /// Hybrid architecture search.
    Search,
    /// Random search over training settings for one genotype.
    Tune,
    /// Score a saved model checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Countries experiments: hybrid search or best-of-N random subspace
    /// sampling.
    Countries {
        #[arg(long)]
        task: Option<CountriesTask>,
        /// `search`, or a subspace name (P1..P4, full) for random sampling.
        #[arg(long)]
        mode: Option<CountriesMode>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SamplePaths => "sample-paths",
            Command::Train => "train",
            Command::Search => "search",
            Command::Tune => "tune",
            Command::Eval { .. } => "eval",
            Command::Countries { .. } => "countries",
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = match (&cli.config, &cli.resume) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("config.toml"),
        (None, None) => bail!("--config is required"),
    };
    let mut cfg = RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    if let Command::Countries {
        task,
        mode,
        samples,
        repeats,
    } = &cli.command
    {
        if cfg.data.task != TaskKind::Countries {
            bail!("the countries command needs data.task = \"countries\"");
        }
        let c = &mut cfg.countries;
        c.task = task.unwrap_or(c.task);
        c.mode = mode.unwrap_or(c.mode);
        c.samples = samples.unwrap_or(c.samples);
        c.repeats = repeats.unwrap_or(c.repeats);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = match (&cli.resume, &cli.out) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => d.clone(),
        (None, None) => {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_millis();
            cfg.output_root()
                .join(format!("{}-seed{}-{stamp}", cli.command.name(), cfg.run.seed))
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn genotype_arg(cli: &Cli) -> Result<kgcell::cell::Genotype> {
    let text = cli.genotype.as_deref().context("--genotype is required")?;
    Ok(resolve_genotype(text)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()?;
    }
    let dir = run_dir(&cli, &cfg)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    log::info!("run directory {}", dir.display());

    match &cli.command {
        Command::SamplePaths => {
            let ws = Workspace::open(&cfg)?;
            let corpus = PathCorpus {
                config: ws.walk,
                paths: ws.corpus.clone(),
            };
            corpus.write(dir.join("paths.bin"))?;
            corpus.write_tsv(&ws.bundle.graph, dir.join("paths.tsv"))?;
            let padded = ws.corpus.iter().filter(|p| p.real_len() < p.len()).count();
            write_json(
                &dir.join("report.json"),
                &serde_json::json!({ "paths": ws.corpus.len(), "padded": padded }),
            )?;
            println!("{} paths ({padded} padded)", ws.corpus.len());
        }
        Command::Train => {
            let g = genotype_arg(&cli)?;
            let ws = Workspace::open(&cfg)?;
            let fit = ws.train(&g, cfg.train.rng_seed)?;
            write_history(dir.join("history.jsonl"), &fit.history)?;
            fit.store.save(dir.join("model.ckpt"), &g.to_string())?;
            let valid = ws.evaluate(&g, &fit.store, Split::Valid)?;
            let test = ws.evaluate(&g, &fit.store, Split::Test)?;
            write_json(
                &dir.join("report.json"),
                &serde_json::json!({
                    "genotype": g.to_string(),
                    "best_epoch": fit.best_epoch,
                    "valid": valid,
                    "test": test,
                }),
            )?;
            println!("{g}: valid {:.4} test {:.4}", valid.headline(), test.headline());
            if let Some(r) = test.ranking {
                println!("test {r}");
            }
        }
        Command::Search => search(&cli, &cfg, &dir)?,
        Command::Tune => {
            let g = genotype_arg(&cli)?;
            let ws = Workspace::open(&cfg)?;
            let out = ws.tune(&g)?;
            write_lines(&dir.join("trials.jsonl"), &out.table)?;
            fs::write(dir.join("best_train.toml"), toml::to_string(&out.best.config)?)?;
            write_json(&dir.join("report.json"), &out.best)?;
            println!(
                "best trial {}: valid {:.4} test {:.4}",
                out.best.trial_id,
                out.best.valid.unwrap_or(f64::NAN),
                out.best.test.unwrap_or(f64::NAN)
            );
        }
        Command::Eval { checkpoint } => {
            let (store, text) = ParameterStore::load(checkpoint)?;
            let g = resolve_genotype(&text)?;
            let ws = Workspace::with_corpus(&cfg, load_dataset(&cfg)?, Vec::new());
            let valid = ws.evaluate(&g, &store, Split::Valid)?;
            let test = ws.evaluate(&g, &store, Split::Test)?;
            write_json(
                &dir.join("report.json"),
                &serde_json::json!({ "genotype": text, "valid": valid, "test": test }),
            )?;
            println!("{g}: valid {:.4} test {:.4}", valid.headline(), test.headline());
        }
        Command::Countries { .. } => match cfg.countries.mode {
            CountriesMode::Search => search(&cli, &cfg, &dir)?,
            CountriesMode::Random(space) => {
                let ws = Workspace::open(&cfg)?;
                let c = &cfg.countries;
                let out = ws.random_search(space, c.samples, c.repeats)?;
                write_json(&dir.join("report.json"), &out)?;
                println!(
                    "{} {} AUC-PR {:.3} ± {:.3} ({} repeats of {} samples)",
                    c.task, out.subspace, out.mean, out.std, c.repeats, c.samples
                );
            }
        },
    }
    Ok(())
}

fn search(cli: &Cli, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ws = Workspace::open(cfg)?;
    let state = state_dir(dir);
    let run = ws.search(Some(&state), cli.resume.is_some())?;
    write_lines(&dir.join("search_log.jsonl"), &run.outcome.log)?;
    write_json(&dir.join("candidates.json"), &run.outcome.ranked)?;
    write_history(dir.join("history.jsonl"), &run.fit.history)?;
    run.fit
        .store
        .save(dir.join("model.ckpt"), &run.genotype.to_string())?;
    write_json(
        &dir.join("report.json"),
        &serde_json::json!({
            "genotype": run.genotype.to_string(),
            "seed": run.seed,
            "valid": run.valid,
            "test": run.test,
        }),
    )?;
    println!(
        "best {}: valid {:.4} test {:.4}",
        run.genotype,
        run.valid,
        run.test.headline()
    );
    Ok(())
}
