//! Knowledge graphs, vocabularies and dataset splits.
//!
//! A [`KnowledgeGraph`] is built once and never mutated afterwards, so it can
//! be shared freely between threads. Entity and relation ids are dense
//! `u32` indices assigned in first-appearance order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// Suffix appended to a relation label to name its inverse.
pub const INVERSE_SUFFIX: &str = "^-1";

/// Number of entities in the canonical Countries release.
pub const COUNTRIES_ENTITY_COUNT: usize = 271;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triplet {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Triplet {
            subject,
            relation,
            object,
        }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

/// Bijective label <-> id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `label`, assigning the next free id if unseen.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut v = Vocab::new();
        for l in iter {
            v.intern(&l);
        }
        v
    }
}

/// An immutable multi-relational graph with adjacency indexes.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triplets: Vec<Triplet>,
    members: HashSet<Triplet>,
    out_adjacency: Vec<Vec<(RelationId, EntityId)>>,
    // sorted, deduplicated, self excluded
    undirected: Vec<Vec<EntityId>>,
    partition: Option<Vec<u8>>,
    inverse_offset: Option<u32>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triplets == other.triplets
            && self.partition == other.partition
            && self.inverse_offset == other.inverse_offset
    }
}

impl KnowledgeGraph {
    /// Builds a graph, dropping duplicate triplets. Returns the graph and the
    /// number of duplicates that were dropped.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        triplets: impl IntoIterator<Item = Triplet>,
    ) -> Result<(Self, usize)> {
        let n_ent = entities.len();
        let mut members = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triplets {
            if t.subject as usize >= n_ent
                || t.object as usize >= n_ent
                || t.relation as usize >= relations.len()
            {
                return Err(Error::Contract(format!(
                    "triplet {t} outside vocabulary ({} entities, {} relations)",
                    n_ent,
                    relations.len()
                )));
            }
            if members.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let mut out_adjacency = vec![Vec::new(); n_ent];
        let mut undirected = vec![Vec::new(); n_ent];
        for t in &kept {
            out_adjacency[t.subject as usize].push((t.relation, t.object));
            if t.subject != t.object {
                undirected[t.subject as usize].push(t.object);
                undirected[t.object as usize].push(t.subject);
            }
        }
        for n in &mut undirected {
            n.sort_unstable();
            n.dedup();
        }
        Ok((
            KnowledgeGraph {
                entities,
                relations,
                triplets: kept,
                members,
                out_adjacency,
                undirected,
                partition: None,
                inverse_offset: None,
            },
            duplicates,
        ))
    }

    pub fn empty() -> Self {
        Self::new(Vocab::new(), Vocab::new(), []).unwrap().0
    }

    /// Tags every entity with a partition label (0 or 1) for two-graph
    /// alignment datasets.
    pub fn with_partition(mut self, tags: Vec<u8>) -> Result<Self> {
        if tags.len() != self.num_entities() {
            return Err(Error::Contract(format!(
                "partition has {} tags for {} entities",
                tags.len(),
                self.num_entities()
            )));
        }
        self.partition = Some(tags);
        Ok(self)
    }

    /// Appends an inverse `r^-1` for every relation and adds `(o, r^-1, s)`
    /// for every triplet.
    pub fn with_inverse_relations(&self) -> Result<Self> {
        if self.inverse_offset.is_some() {
            return Ok(self.clone());
        }
        let offset = self.relations.len() as u32;
        let mut relations = self.relations.clone();
        for label in self.relations.labels() {
            relations.intern(&format!("{label}{INVERSE_SUFFIX}"));
        }
        if relations.len() != 2 * offset as usize {
            return Err(Error::Contract(
                "relation vocabulary already contains inverse labels".into(),
            ));
        }
        let inverses = self
            .triplets
            .iter()
            .map(|t| Triplet::new(t.object, t.relation + offset, t.subject));
        let all: Vec<Triplet> = self.triplets.iter().copied().chain(inverses).collect();
        let (mut g, _) = KnowledgeGraph::new(self.entities.clone(), relations, all)?;
        g.partition = self.partition.clone();
        g.inverse_offset = Some(offset);
        Ok(g)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.members.contains(t)
    }

    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adjacency[e as usize]
    }

    /// Neighbours of `e` ignoring edge direction (self excluded).
    pub fn undirected_neighbors(&self, e: EntityId) -> &[EntityId] {
        &self.undirected[e as usize]
    }

    /// True if `other` is `e` itself or adjacent to it in either direction.
    pub fn within_one_hop(&self, e: EntityId, other: EntityId) -> bool {
        e == other || self.undirected[e as usize].binary_search(&other).is_ok()
    }

    pub fn partition(&self) -> Option<&[u8]> {
        self.partition.as_deref()
    }

    pub fn partition_of(&self, e: EntityId) -> Option<u8> {
        self.partition.as_ref().map(|p| p[e as usize])
    }

    /// Offset `k` such that relation `r + k` is the inverse of `r`, when
    /// inverse relations were added.
    pub fn inverse_offset(&self) -> Option<u32> {
        self.inverse_offset
    }

    pub fn inverse_of(&self, r: RelationId) -> Option<RelationId> {
        let k = self.inverse_offset?;
        Some(if r < k { r + k } else { r - k })
    }

    pub fn entity_id(&self, label: &str) -> Result<EntityId> {
        self.entities.get(label).ok_or_else(|| Error::Vocabulary {
            kind: "entity",
            label: label.to_owned(),
        })
    }

    pub fn relation_id(&self, label: &str) -> Result<RelationId> {
        self.relations.get(label).ok_or_else(|| Error::Vocabulary {
            kind: "relation",
            label: label.to_owned(),
        })
    }
}

/// How [`load_triplets`] treats labels.
#[derive(Clone, Copy, Debug)]
pub enum VocabMode<'a> {
    /// Assign ids in first-appearance order.
    Build,
    /// Use the vocabularies of an existing graph; unknown labels are errors.
    Reuse(&'a KnowledgeGraph),
}

#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub duplicates: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads tab-separated rows with exactly `N` fields. Blank lines are skipped.
fn read_rows<const N: usize>(path: &Path) -> Result<Vec<(usize, [String; N])>> {
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != N || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected {N} tab-separated fields, found {}", fields.len()),
            });
        }
        let row: [String; N] = std::array::from_fn(|k| fields[k].to_owned());
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn lookup(vocab: &Vocab, kind: &'static str, label: &str) -> Result<u32> {
    vocab.get(label).ok_or_else(|| Error::Vocabulary {
        kind,
        label: label.to_owned(),
    })
}

/// Reads a triplet list, interning labels into `entities`/`relations` when
/// `grow` is set and failing on unknown labels otherwise.
fn read_triplets_into(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    grow: bool,
) -> Result<Vec<Triplet>> {
    let rows = read_rows::<3>(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for (_, [s, r, o]) in rows {
        let t = if grow {
            let s = entities.intern(&s);
            let r = relations.intern(&r);
            let o = entities.intern(&o);
            Triplet::new(s, r, o)
        } else {
            Triplet::new(
                lookup(entities, "entity", &s)?,
                lookup(relations, "relation", &r)?,
                lookup(entities, "entity", &o)?,
            )
        };
        out.push(t);
    }
    Ok(out)
}

/// Loads a `subject\trelation\tobject` file into a graph.
pub fn load_triplets(path: impl AsRef<Path>, mode: VocabMode<'_>) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let (mut entities, mut relations, grow) = match mode {
        VocabMode::Build => (Vocab::new(), Vocab::new(), true),
        VocabMode::Reuse(g) => (g.entities.clone(), g.relations.clone(), false),
    };
    let triplets = read_triplets_into(path, &mut entities, &mut relations, grow)?;
    let (graph, duplicates) = KnowledgeGraph::new(entities, relations, triplets)?;
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} duplicate triplets", path.display());
    }
    Ok(LoadedGraph { graph, duplicates })
}

/// Loads `left\tright` entity pairs. Each pair must connect partition 0 to
/// partition 1; pairs written right-to-left are flipped.
pub fn load_alignment_pairs(
    path: impl AsRef<Path>,
    graph: &KnowledgeGraph,
) -> Result<Vec<(EntityId, EntityId)>> {
    let path = path.as_ref();
    let part = graph
        .partition()
        .ok_or_else(|| Error::Contract("alignment pairs need a partitioned graph".into()))?;
    let mut pairs = Vec::new();
    for (_, [l, r]) in read_rows::<2>(path)? {
        let a = graph.entity_id(&l)?;
        let b = graph.entity_id(&r)?;
        match (part[a as usize], part[b as usize]) {
            (0, 1) => pairs.push((a, b)),
            (1, 0) => pairs.push((b, a)),
            _ => return Err(Error::Partition { left: l, right: r }),
        }
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LinkPrediction,
    EntityAlignment,
    Countries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CountriesTask {
    S1,
    S2,
    S3,
}

impl std::str::FromStr for CountriesTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(CountriesTask::S1),
            "S2" => Ok(CountriesTask::S2),
            "S3" => Ok(CountriesTask::S3),
            _ => Err(Error::UnknownName {
                kind: "countries task",
                name: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for CountriesTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Splits {
    Triplets {
        train: Vec<Triplet>,
        valid: Vec<Triplet>,
        test: Vec<Triplet>,
    },
    Pairs {
        train: Vec<(EntityId, EntityId)>,
        valid: Vec<(EntityId, EntityId)>,
        test: Vec<(EntityId, EntityId)>,
    },
}

/// A graph together with its train/valid/test splits.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub task: TaskKind,
    /// The training graph used for walking. For link prediction it holds
    /// inverse relations; for alignment it is the union of both graphs.
    pub graph: KnowledgeGraph,
    pub splits: Splits,
    /// Candidate answers for Countries queries (the region entities).
    pub regions: Vec<EntityId>,
}

impl DatasetBundle {
    /// Triplets random walks start from.
    pub fn walk_seeds(&self) -> Vec<Triplet> {
        match &self.splits {
            Splits::Triplets { train, .. } => train.clone(),
            Splits::Pairs { .. } => self.graph.triplets().to_vec(),
        }
    }

    pub fn triplet_splits(&self) -> Option<(&[Triplet], &[Triplet], &[Triplet])> {
        match &self.splits {
            Splits::Triplets { train, valid, test } => Some((train, valid, test)),
            Splits::Pairs { .. } => None,
        }
    }

    pub fn pair_splits(
        &self,
    ) -> Option<(
        &[(EntityId, EntityId)],
        &[(EntityId, EntityId)],
        &[(EntityId, EntityId)],
    )> {
        match &self.splits {
            Splits::Pairs { train, valid, test } => Some((train, valid, test)),
            Splits::Triplets { .. } => None,
        }
    }

    /// Entities of the second graph, the candidates for alignment ranking.
    pub fn alignment_candidates(&self) -> Vec<EntityId> {
        match self.graph.partition() {
            Some(p) => (0..p.len() as u32).filter(|&e| p[e as usize] == 1).collect(),
            None => Vec::new(),
        }
    }
}

fn check_disjoint(lists: &[(&str, &[Triplet])]) -> Result<()> {
    for (i, (na, a)) in lists.iter().enumerate() {
        let set: HashSet<&Triplet> = a.iter().collect();
        for (nb, b) in &lists[i + 1..] {
            if let Some(t) = b.iter().find(|t| set.contains(t)) {
                return Err(Error::Integrity(format!(
                    "triplet {t} appears in both {na} and {nb}"
                )));
            }
        }
    }
    Ok(())
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`. Vocabulary order
/// follows train, then valid, then test.
pub fn load_link_prediction(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut read = |name: &str| read_triplets_into(&dir.join(name), &mut entities, &mut relations, true);
    let train = dedup(read("train.txt")?);
    let valid = dedup(read("valid.txt")?);
    let test = dedup(read("test.txt")?);
    check_disjoint(&[("train", &train), ("valid", &valid), ("test", &test)])?;
    let (base, _) = KnowledgeGraph::new(entities, relations, train.iter().copied())?;
    let graph = base.with_inverse_relations()?;
    Ok(DatasetBundle {
        task: TaskKind::LinkPrediction,
        graph,
        splits: Splits::Triplets { train, valid, test },
        regions: Vec::new(),
    })
}

fn dedup(v: Vec<Triplet>) -> Vec<Triplet> {
    let mut seen = HashSet::new();
    v.into_iter().filter(|t| seen.insert(*t)).collect()
}

/// Loads one of the Countries tasks. `dir` holds either `S1/` or
/// `countries_S1/` style subdirectories with `train/valid/test.txt`.
pub fn load_countries(dir: impl AsRef<Path>, task: CountriesTask) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let candidates = [dir.join(task.to_string()), dir.join(format!("countries_{task}"))];
    let sub = candidates
        .iter()
        .find(|p| p.is_dir())
        .cloned()
        .unwrap_or_else(|| dir.to_path_buf());
    let mut bundle = load_link_prediction(&sub)?;
    bundle.task = TaskKind::Countries;

    let n_ent = bundle.graph.num_entities();
    if n_ent != COUNTRIES_ENTITY_COUNT {
        warn!(
            "{}: {n_ent} entities, the canonical Countries release has {COUNTRIES_ENTITY_COUNT}",
            sub.display()
        );
    }
    let located = bundle.graph.relation_id("locatedin")?;
    let (train, valid, test) = bundle.triplet_splits().unwrap();
    let all = || train.iter().chain(valid).chain(test);
    // regions are locatedin targets that are never located in anything
    let located_subjects: HashSet<EntityId> = all()
        .filter(|t| t.relation == located)
        .map(|t| t.subject)
        .collect();
    let mut regions: Vec<EntityId> = all()
        .filter(|t| t.relation == located && !located_subjects.contains(&t.object))
        .map(|t| t.object)
        .collect();
    regions.sort_unstable();
    regions.dedup();
    if let Some(t) = valid.iter().chain(test).find(|t| t.relation != located) {
        return Err(Error::Integrity(format!(
            "Countries query {t} is not a locatedin fact"
        )));
    }
    bundle.regions = regions;
    Ok(bundle)
}

/// Loads a two-graph alignment dataset: `kg1.txt`, `kg2.txt` (triplets) and
/// `train_pairs.txt`, `valid_pairs.txt`, `test_pairs.txt`.
///
/// Training pairs connect the graphs by copying every triplet of one member
/// onto its counterpart, so walks can cross between the graphs.
pub fn load_alignment_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let kg1 = read_triplets_into(&dir.join("kg1.txt"), &mut entities, &mut relations, true)?;
    let n1 = entities.len();
    let kg2 = read_triplets_into(&dir.join("kg2.txt"), &mut entities, &mut relations, true)?;
    if kg2
        .iter()
        .any(|t| (t.subject as usize) < n1 || (t.object as usize) < n1)
    {
        return Err(Error::Integrity("kg1 and kg2 share entity labels".into()));
    }
    let tags: Vec<u8> = (0..entities.len()).map(|i| u8::from(i >= n1)).collect();
    let (base, _) = KnowledgeGraph::new(
        entities.clone(),
        relations.clone(),
        kg1.iter().chain(&kg2).copied(),
    )?;
    let base = base.with_partition(tags.clone())?;
    let train = load_alignment_pairs(dir.join("train_pairs.txt"), &base)?;
    let valid = load_alignment_pairs(dir.join("valid_pairs.txt"), &base)?;
    let test = load_alignment_pairs(dir.join("test_pairs.txt"), &base)?;

    let mut counterpart: HashMap<EntityId, EntityId> = HashMap::new();
    for &(a, b) in &train {
        counterpart.insert(a, b);
        counterpart.insert(b, a);
    }
    let mut all: Vec<Triplet> = base.triplets().to_vec();
    for t in base.triplets() {
        let s = counterpart.get(&t.subject).copied();
        let o = counterpart.get(&t.object).copied();
        if let Some(s) = s {
            all.push(Triplet::new(s, t.relation, t.object));
        }
        if let Some(o) = o {
            all.push(Triplet::new(t.subject, t.relation, o));
        }
    }
    let (graph, _) = KnowledgeGraph::new(entities, relations, all)?;
    let graph = graph.with_partition(tags)?;
    Ok(DatasetBundle {
        task: TaskKind::EntityAlignment,
        graph,
        splits: Splits::Pairs { train, valid, test },
        regions: Vec::new(),
    })
}

/// Known true objects per `(subject, relation)` for filtered ranking.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    map: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl FilterIndex {
    pub fn get(&self, subject: EntityId, relation: RelationId) -> Option<&HashSet<EntityId>> {
        self.map.get(&(subject, relation))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Builds the filter index over all splits. When the graph carries inverse
/// relations, the inverse of every triplet is indexed too so head queries
/// `(o, r^-1, ?)` are filtered the same way.
pub fn filter_sets(graph: &KnowledgeGraph, splits: &[&[Triplet]]) -> FilterIndex {
    let mut map: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
    for t in splits.iter().flat_map(|s| s.iter()) {
        map.entry((t.subject, t.relation)).or_default().insert(t.object);
        if let Some(inv) = graph.inverse_of(t.relation) {
            map.entry((t.object, inv)).or_default().insert(t.subject);
        }
    }
    FilterIndex { map }
}

fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: fmt::Display,
{
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    open(path)?
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Writes `entities.txt`, `relations.txt`, `triples.tsv` (ids) and, when
/// present, `partition.txt` and `graph.meta`.
pub fn save_graph(graph: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lines(&dir.join("entities.txt"), graph.entities.labels())?;
    write_lines(&dir.join("relations.txt"), graph.relations.labels())?;
    write_lines(
        &dir.join("triples.tsv"),
        graph
            .triplets
            .iter()
            .map(|t| format!("{}\t{}\t{}", t.subject, t.relation, t.object)),
    )?;
    if let Some(p) = &graph.partition {
        write_lines(&dir.join("partition.txt"), p)?;
    }
    if let Some(k) = graph.inverse_offset {
        write_lines(&dir.join("graph.meta"), [format!("inverse_offset={k}")])?;
    }
    Ok(())
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let dir = dir.as_ref();
    let entities: Vocab = read_lines(&dir.join("entities.txt"))?.into_iter().collect();
    let relations: Vocab = read_lines(&dir.join("relations.txt"))?.into_iter().collect();
    let triples_path = dir.join("triples.tsv");
    let mut triplets = Vec::new();
    for (i, line) in read_lines(&triples_path)?.iter().enumerate() {
        let ids: Vec<u32> = line
            .split('\t')
            .map(|f| f.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: triples_path.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if ids.len() != 3 {
            return Err(Error::Parse {
                path: triples_path.clone(),
                line: i + 1,
                msg: "expected three ids".into(),
            });
        }
        triplets.push(Triplet::new(ids[0], ids[1], ids[2]));
    }
    let (mut g, _) = KnowledgeGraph::new(entities, relations, triplets)?;
    let part_path = dir.join("partition.txt");
    if part_path.exists() {
        let tags = read_lines(&part_path)?
            .iter()
            .map(|l| l.parse::<u8>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: part_path.clone(),
                line: 0,
                msg: e.to_string(),
            })?;
        g = g.with_partition(tags)?;
    }
    let meta = dir.join("graph.meta");
    if meta.exists() {
        for l in read_lines(&meta)? {
            if let Some(v) = l.strip_prefix("inverse_offset=") {
                g.inverse_offset = Some(v.parse().map_err(|_| Error::Parse {
                    path: meta.clone(),
                    line: 1,
                    msg: format!("bad inverse offset `{v}`"),
                })?);
            }
        }
    }
    Ok(g)
}

/// Resolves the directory of a dataset path relative to `base` unless it is
/// absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn counts_small_file() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "a\tR\tb\nb\tR\tc\n");
        let g = load_triplets(&p, VocabMode::Build).unwrap().graph;
        assert_eq!(
            (g.num_entities(), g.num_relations(), g.triplets().len()),
            (3, 1, 2)
        );
        assert_eq!(g.entities().labels(), ["a", "b", "c"]);
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "");
        let g = load_triplets(&p, VocabMode::Build).unwrap().graph;
        assert_eq!(
            (g.num_entities(), g.num_relations(), g.triplets().len()),
            (0, 0, 0)
        );
    }

    #[test]
    fn duplicates_are_counted() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "a\tR\tb\na\tR\tb\n");
        let l = load_triplets(&p, VocabMode::Build).unwrap();
        assert_eq!(l.graph.triplets().len(), 1);
        assert_eq!(l.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "a\tR\tb\na R b\n");
        match load_triplets(&p, VocabMode::Build) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reuse_mode_rejects_unknown_and_is_idempotent() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "a\tR\tb\nb\tS\tc\n");
        let g = load_triplets(&p, VocabMode::Build).unwrap().graph;
        let again = load_triplets(&p, VocabMode::Reuse(&g)).unwrap().graph;
        assert_eq!(g, again);
        let q = file(d.path(), "u.txt", "a\tR\tz\n");
        assert!(matches!(
            load_triplets(&q, VocabMode::Reuse(&g)),
            Err(Error::Vocabulary { kind: "entity", .. })
        ));
    }

    #[test]
    fn adjacency_sums_to_triplet_count() {
        let d = tempfile::tempdir().unwrap();
        let p = file(d.path(), "t.txt", "a\tR\tb\na\tS\tb\nb\tR\tb\nc\tR\ta\n");
        let g = load_triplets(&p, VocabMode::Build).unwrap().graph;
        let total: usize = (0..g.num_entities() as u32).map(|e| g.out_edges(e).len()).sum();
        assert_eq!(total, g.triplets().len());
        // self loop and multi-edge are kept
        assert_eq!(g.out_edges(0).len(), 2);
        assert!(g.within_one_hop(0, 2));
    }

    fn two_kg() -> KnowledgeGraph {
        let ents: Vocab = ["e1", "e2", "f1", "f2"].iter().map(|s| s.to_string()).collect();
        let rels: Vocab = ["R"].iter().map(|s| s.to_string()).collect();
        let (g, _) = KnowledgeGraph::new(ents, rels, [Triplet::new(0, 0, 1), Triplet::new(2, 0, 3)]).unwrap();
        g.with_partition(vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn alignment_pairs() {
        let d = tempfile::tempdir().unwrap();
        let g = two_kg();
        let ok = file(d.path(), "p.txt", "e1\tf1\n");
        assert_eq!(load_alignment_pairs(&ok, &g).unwrap(), vec![(0, 2)]);
        let bad = file(d.path(), "q.txt", "e1\te2\n");
        assert!(matches!(
            load_alignment_pairs(&bad, &g),
            Err(Error::Partition { .. })
        ));
        let empty = file(d.path(), "r.txt", "");
        assert!(load_alignment_pairs(&empty, &g).unwrap().is_empty());
        let unknown = file(d.path(), "s.txt", "e1\tzz\n");
        assert!(matches!(
            load_alignment_pairs(&unknown, &g),
            Err(Error::Vocabulary { .. })
        ));
    }

    #[test]
    fn filter_union_and_set_semantics() {
        let ents: Vocab = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let rels: Vocab = ["R", "S"].iter().map(|s| s.to_string()).collect();
        let (g, _) = KnowledgeGraph::new(ents, rels, []).unwrap();
        let train = [Triplet::new(0, 0, 1)];
        let test = [Triplet::new(0, 0, 2), Triplet::new(3, 1, 0)];
        let valid = [Triplet::new(0, 0, 1)];
        let f = filter_sets(&g, &[&train, &valid, &test]);
        let mut ab: Vec<_> = f.get(0, 0).unwrap().iter().copied().collect();
        ab.sort();
        assert_eq!(ab, vec![1, 2]);
        assert_eq!(f.get(3, 1).unwrap().len(), 1);
    }

    #[test]
    fn inverse_relations_double_the_edges() {
        let ents: Vocab = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let rels: Vocab = ["R"].iter().map(|s| s.to_string()).collect();
        let (g, _) = KnowledgeGraph::new(ents, rels, [Triplet::new(0, 0, 1)]).unwrap();
        let gi = g.with_inverse_relations().unwrap();
        assert_eq!(gi.num_relations(), 2);
        assert_eq!(gi.relations().label(1), "R^-1");
        assert!(gi.contains(&Triplet::new(1, 1, 0)));
        assert_eq!(gi.inverse_of(0), Some(1));
        assert_eq!(gi.inverse_of(1), Some(0));
        let f = filter_sets(&gi, &[&[Triplet::new(0, 0, 1)]]);
        assert!(f.get(1, 1).unwrap().contains(&0));
    }

    #[test]
    fn save_load_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let g = two_kg().with_inverse_relations().unwrap();
        save_graph(&g, d.path()).unwrap();
        let back = load_graph(d.path()).unwrap();
        assert_eq!(g, back);
        for e in 0..g.num_entities() as u32 {
            assert_eq!(g.out_edges(e), back.out_edges(e));
        }
    }

    #[test]
    fn missing_countries_dir_is_io_error() {
        assert!(matches!(
            load_countries("/nonexistent/countries", CountriesTask::S1),
            Err(Error::Io { .. })
        ));
    }
}
