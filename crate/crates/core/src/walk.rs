//! Relational paths from biased random walks.
//!
//! Every training triplet seeds `paths_per_triplet` walks. A walk at `cur`
//! having arrived from `prev` weights each out-edge `(r, next)` by
//!
//! * `depth_bias` if `next` is neither `prev` nor an (undirected) neighbour
//!   of `prev`, else `1 - depth_bias`;
//! * `cross_kg_bias` if `next` lies in the other graph partition than `cur`,
//!   else `1 - cross_kg_bias` (only when a cross bias is configured).
//!
//! Walks that hit a dead end restart from their seed triplet a bounded
//! number of times; after that the longest attempt is padded with
//! self-transitions through [`PAD_RELATION`], which training masks out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::codec::{self, ByteReader};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triplet};
use crate::seed;

/// Relation id used for padding steps after a dead end.
pub const PAD_RELATION: u32 = u32::MAX;

/// Restarts attempted before a walk is padded.
pub const MAX_RESTARTS: usize = 8;

const MAGIC: &[u8; 8] = b"KGCPATH\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WalkConfig {
    pub depth_bias: f64,
    pub cross_kg_bias: Option<f64>,
    pub path_length: usize,
    pub paths_per_triplet: usize,
    pub rng_seed: u64,
}

impl WalkConfig {
    /// Defaults for single-graph link prediction.
    pub fn link_prediction(rng_seed: u64) -> Self {
        WalkConfig {
            depth_bias: 0.7,
            cross_kg_bias: None,
            path_length: 3,
            paths_per_triplet: 2,
            rng_seed,
        }
    }

    /// Defaults for two-graph entity alignment.
    pub fn entity_alignment(rng_seed: u64) -> Self {
        WalkConfig {
            depth_bias: 0.9,
            cross_kg_bias: Some(0.9),
            path_length: 7,
            paths_per_triplet: 2,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_half = |v: f64| v > 0.5 && v < 1.0;
        if !open_half(self.depth_bias) {
            return Err(Error::config("walk.depth_bias", "must lie in (0.5, 1)"));
        }
        if let Some(b) = self.cross_kg_bias {
            if !open_half(b) {
                return Err(Error::config("walk.cross_kg_bias", "must lie in (0.5, 1)"));
            }
        }
        if self.path_length == 0 {
            return Err(Error::config("walk.path_length", "must be at least 1"));
        }
        if self.paths_per_triplet == 0 {
            return Err(Error::config("walk.paths_per_triplet", "must be at least 1"));
        }
        Ok(())
    }
}

/// A sequence of head-to-tail chained triplets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationalPath {
    steps: Vec<Triplet>,
}

impl RelationalPath {
    pub fn new(steps: Vec<Triplet>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Empty("path"));
        }
        if let Some(w) = steps.windows(2).find(|w| w[0].object != w[1].subject) {
            return Err(Error::Contract(format!(
                "path is not chained: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(RelationalPath { steps })
    }

    pub fn steps(&self) -> &[Triplet] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of real (non-pad) steps.
    pub fn real_len(&self) -> usize {
        self.steps
            .iter()
            .take_while(|t| t.relation != PAD_RELATION)
            .count()
    }

    /// Flat id sequence `s1, r1, o1, r2, o2, ..., rL, oL`.
    pub fn to_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(1 + 2 * self.steps.len());
        ids.push(self.steps[0].subject);
        for t in &self.steps {
            ids.push(t.relation);
            ids.push(t.object);
        }
        ids
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        if ids.len() < 3 || ids.len() % 2 == 0 {
            return Err(Error::Integrity(format!("bad path record of {} ids", ids.len())));
        }
        let steps = ids[1..]
            .chunks(2)
            .scan(ids[0], |s, c| {
                let t = Triplet::new(*s, c[0], c[1]);
                *s = c[1];
                Some(t)
            })
            .collect();
        Ok(RelationalPath { steps })
    }
}

/// Next-step probabilities over `graph.out_edges(cur)`, in adjacency order.
pub fn step_distribution(
    graph: &KnowledgeGraph,
    prev: Option<EntityId>,
    cur: EntityId,
    cfg: &WalkConfig,
) -> Result<Vec<f64>> {
    let edges = graph.out_edges(cur);
    if edges.is_empty() {
        return Err(Error::DeadEnd(cur));
    }
    let cur_part = graph.partition_of(cur);
    let mut w: Vec<f64> = edges
        .iter()
        .map(|&(_, next)| {
            let depth = match prev {
                None => 1.0,
                Some(p) if graph.within_one_hop(p, next) => 1.0 - cfg.depth_bias,
                Some(_) => cfg.depth_bias,
            };
            let cross = match cfg.cross_kg_bias {
                None => 1.0,
                Some(b) if graph.partition_of(next) != cur_part => b,
                Some(b) => 1.0 - b,
            };
            depth * cross
        })
        .collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

fn draw<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn walk_once<R: Rng>(graph: &KnowledgeGraph, seed: Triplet, cfg: &WalkConfig, rng: &mut R) -> Vec<Triplet> {
    let mut steps = Vec::with_capacity(cfg.path_length);
    steps.push(seed);
    let (mut prev, mut cur) = (seed.subject, seed.object);
    while steps.len() < cfg.path_length {
        let Ok(probs) = step_distribution(graph, Some(prev), cur, cfg) else {
            break;
        };
        let (rel, next) = graph.out_edges(cur)[draw(&probs, rng)];
        steps.push(Triplet::new(cur, rel, next));
        prev = cur;
        cur = next;
    }
    steps
}

fn walk_from<R: Rng>(graph: &KnowledgeGraph, seed: Triplet, cfg: &WalkConfig, rng: &mut R) -> RelationalPath {
    let mut best: Vec<Triplet> = Vec::new();
    for _ in 0..=MAX_RESTARTS {
        let steps = walk_once(graph, seed, cfg, rng);
        if steps.len() == cfg.path_length {
            return RelationalPath { steps };
        }
        if steps.len() > best.len() {
            best = steps;
        }
    }
    let end = best.last().unwrap().object;
    best.resize(cfg.path_length, Triplet::new(end, PAD_RELATION, end));
    RelationalPath { steps: best }
}

/// Samples `cfg.paths_per_triplet` walks from each seed triplet. Seed `i`
/// draws from its own stream derived from `(cfg.rng_seed, i)`, so the output
/// does not depend on scheduling.
pub fn sample_paths(
    graph: &KnowledgeGraph,
    seeds: &[Triplet],
    cfg: &WalkConfig,
) -> Result<Vec<RelationalPath>> {
    cfg.validate()?;
    if graph.triplets().is_empty() {
        return Err(Error::Empty("graph"));
    }
    let per_seed: Vec<Vec<RelationalPath>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut rng = seed::rng(seed::mix(cfg.rng_seed, i as u64));
            (0..cfg.paths_per_triplet)
                .map(|_| walk_from(graph, t, cfg, &mut rng))
                .collect()
        })
        .collect();
    Ok(per_seed.into_iter().flatten().collect())
}

/// A fixed path corpus with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathCorpus {
    pub config: WalkConfig,
    pub paths: Vec<RelationalPath>,
}

impl PathCorpus {
    pub fn sample(graph: &KnowledgeGraph, seeds: &[Triplet], config: WalkConfig) -> Result<Self> {
        Ok(PathCorpus {
            paths: sample_paths(graph, seeds, &config)?,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&c.depth_bias.to_le_bytes());
        buf.push(u8::from(c.cross_kg_bias.is_some()));
        buf.extend_from_slice(&c.cross_kg_bias.unwrap_or(0.0).to_le_bytes());
        buf.extend_from_slice(&(c.path_length as u32).to_le_bytes());
        buf.extend_from_slice(&(c.paths_per_triplet as u32).to_le_bytes());
        buf.extend_from_slice(&c.rng_seed.to_le_bytes());
        buf.extend_from_slice(&(self.paths.len() as u64).to_le_bytes());
        for p in &self.paths {
            for id in p.to_ids() {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
        codec::seal(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = codec::unseal(bytes, MAGIC, "path corpus")?;
        let mut r = ByteReader::new(body, MAGIC.len());
        if r.u32()? != VERSION {
            return Err(Error::Integrity("unsupported path corpus version".into()));
        }
        let depth_bias = r.f64()?;
        let has_cross = r.u8()? != 0;
        let cross = r.f64()?;
        let path_length = r.u32()? as usize;
        let paths_per_triplet = r.u32()? as usize;
        let rng_seed = r.u64()?;
        let count = r.u64()? as usize;
        let width = 1 + 2 * path_length;
        let mut paths = Vec::with_capacity(count);
        let mut ids = vec![0u32; width];
        for _ in 0..count {
            for id in ids.iter_mut() {
                *id = r.u32()?;
            }
            paths.push(RelationalPath::from_ids(&ids)?);
        }
        r.finish("path corpus")?;
        Ok(PathCorpus {
            config: WalkConfig {
                depth_bias,
                cross_kg_bias: has_cross.then_some(cross),
                path_length,
                paths_per_triplet,
                rng_seed,
            },
            paths,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }

    /// Reads a corpus; when `expected_seed` is given the header seed must match.
    pub fn read(path: impl AsRef<Path>, expected_seed: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let corpus = Self::from_bytes(&codec::read_file(path)?)?;
        if let Some(s) = expected_seed {
            if s != corpus.config.rng_seed {
                return Err(Error::Integrity(format!(
                    "corpus was sampled with seed {}, expected {s}",
                    corpus.config.rng_seed
                )));
            }
        }
        Ok(corpus)
    }

    /// Human-readable dump, one path per line as labels.
    pub fn write_tsv(&self, graph: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for p in &self.paths {
            let mut fields = vec![graph.entities().label(p.steps[0].subject).to_owned()];
            for t in &p.steps {
                fields.push(if t.relation == PAD_RELATION {
                    "<pad>".to_owned()
                } else {
                    graph.relations().label(t.relation).to_owned()
                });
                fields.push(graph.entities().label(t.object).to_owned());
            }
            writeln!(f, "{}", fields.join("\t")).map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}
