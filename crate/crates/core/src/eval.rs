//! Ranking metrics, AUC-PR and the search rewards built on them.
//!
//! Ties are broken against the model: a candidate scoring equal to the
//! target counts as ranked above it.

use std::collections::{HashMap, HashSet};
use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Table, Tape};
use crate::cell::{forward_cell, CellWeights, Genotype};
use crate::error::{Error, Result};
use crate::graph::{EntityId, FilterIndex, KnowledgeGraph, Triplet};
use crate::train::{eval_loss, PathBatch};

const QUERY_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub mrr: f64,
    pub hit1: f64,
    pub hit10: f64,
    pub n_queries: usize,
}

impl RankReport {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("query set"));
        }
        let n = ranks.len() as f64;
        let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(RankReport {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hit1: frac(1),
            hit10: frac(10),
            n_queries: ranks.len(),
        })
    }
}

impl fmt::Display for RankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MRR {:.4}  Hit@1 {:.4}  Hit@10 {:.4}  ({} queries)",
            self.mrr, self.hit1, self.hit10, self.n_queries
        )
    }
}

/// `1 + #{c ≠ target, not excluded, score_c ≥ score_target}`.
pub fn pessimistic_rank(scores: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| c != target && s >= t && !excluded(c))
        .count()
}

/// Scores of every entity as the object of one cell step from `(s, r)`,
/// with `h_0 = s`.
pub fn one_step_scores(
    g: &Genotype,
    store: &ParameterStore,
    subjects: &[u32],
    relations: &[u32],
) -> Result<Array2<f64>> {
    let mut tape = Tape::new(store);
    let w = CellWeights::bind(&mut tape, g)?;
    let s = tape.gather(Table::Entity, subjects)?;
    let r = tape.gather(Table::Relation, relations)?;
    let (v, _) = forward_cell(&mut tape, g, &w, s, r, s)?;
    let table = tape.param(ParamId::Entity)?;
    let z = tape.dot_scores(v, table)?;
    Ok(tape.value(z).as_standard_layout().into_owned())
}

fn check_queries(store: &ParameterStore, queries: &[Triplet]) -> Result<()> {
    for q in queries {
        if q.subject as usize >= store.num_entities()
            || q.object as usize >= store.num_entities()
            || q.relation as usize >= store.num_relations()
        {
            return Err(Error::Contract(format!("query {q} outside the vocabulary")));
        }
    }
    Ok(())
}

/// Filtered rank of each query's object.
pub fn lp_ranks(
    g: &Genotype,
    store: &ParameterStore,
    queries: &[Triplet],
    filters: &FilterIndex,
) -> Result<Vec<usize>> {
    check_queries(store, queries)?;
    let chunks: Vec<Vec<usize>> = queries
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let subj: Vec<u32> = chunk.iter().map(|q| q.subject).collect();
            let rel: Vec<u32> = chunk.iter().map(|q| q.relation).collect();
            let scores = one_step_scores(g, store, &subj, &rel)?;
            Ok(chunk
                .iter()
                .zip(scores.axis_iter(Axis(0)))
                .map(|(q, row)| {
                    let known = filters.get(q.subject, q.relation);
                    let row = row.as_slice().expect("rows are contiguous");
                    pessimistic_rank(row, q.object as usize, |c| {
                        known.is_some_and(|k| k.contains(&(c as EntityId)))
                    })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn lp_rank(
    g: &Genotype,
    store: &ParameterStore,
    queries: &[Triplet],
    filters: &FilterIndex,
) -> Result<RankReport> {
    RankReport::from_ranks(&lp_ranks(g, store, queries, filters)?)
}

/// Tail queries plus, when the graph has inverse relations, the head
/// queries rewritten as `(o, r⁻¹, s)`.
pub fn with_head_queries(graph: &KnowledgeGraph, queries: &[Triplet]) -> Vec<Triplet> {
    let mut out = queries.to_vec();
    out.extend(queries.iter().filter_map(|q| {
        graph
            .inverse_of(q.relation)
            .map(|inv| Triplet::new(q.object, inv, q.subject))
    }));
    out
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Ranks the right entity of each pair among `candidates` by cosine
/// similarity, ignoring other gold partners of the same left entity.
pub fn ea_ranks(
    store: &ParameterStore,
    pairs: &[(EntityId, EntityId)],
    candidates: &[EntityId],
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let n = store.num_entities();
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a as usize >= n || *b as usize >= n) {
        return Err(Error::Contract(format!("pair ({a}, {b}) outside the vocabulary")));
    }
    let pos: HashMap<EntityId, usize> = candidates.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut gold: HashMap<EntityId, HashSet<EntityId>> = HashMap::new();
    for &(a, b) in pairs {
        gold.entry(a).or_default().insert(b);
    }
    let emb = store.entities();
    let cand = unit_rows(&emb.select(
        Axis(0),
        &candidates.iter().map(|&c| c as usize).collect::<Vec<_>>(),
    ));
    pairs
        .iter()
        .map(|&(a, b)| {
            let target = *pos
                .get(&b)
                .ok_or_else(|| Error::Contract(format!("gold counterpart {b} is not a candidate")))?;
            let q: Array1<f64> = emb.row(a as usize).to_owned();
            let norm = q.dot(&q).sqrt();
            let scores = cand.dot(&q) / if norm > 0.0 { norm } else { 1.0 };
            let others = &gold[&a];
            Ok(pessimistic_rank(scores.as_slice().unwrap(), target, |c| {
                candidates[c] != b && others.contains(&candidates[c])
            }))
        })
        .collect()
}

pub fn ea_rank(
    store: &ParameterStore,
    pairs: &[(EntityId, EntityId)],
    candidates: &[EntityId],
) -> Result<RankReport> {
    RankReport::from_ranks(&ea_ranks(store, pairs, candidates)?)
}

/// Average precision over descending score thresholds; tied scores form a
/// single threshold.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "auc_pr",
            lhs: (scores.len(), 1),
            rhs: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "auc_pr" });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Empty("positive label set"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AUC-PR pooled over every (query country, candidate region) pair; the
/// query's object is its gold region.
pub fn countries_auc_pr(
    g: &Genotype,
    store: &ParameterStore,
    queries: &[Triplet],
    regions: &[EntityId],
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    check_queries(store, queries)?;
    let subj: Vec<u32> = queries.iter().map(|q| q.subject).collect();
    let rel: Vec<u32> = queries.iter().map(|q| q.relation).collect();
    let z = one_step_scores(g, store, &subj, &rel)?;
    let gold: HashSet<(EntityId, EntityId)> = queries.iter().map(|q| (q.subject, q.object)).collect();
    let mut scores = Vec::with_capacity(queries.len() * regions.len());
    let mut labels = Vec::with_capacity(scores.capacity());
    let mut seen = HashSet::new();
    for (q, row) in queries.iter().zip(z.axis_iter(Axis(0))) {
        if !seen.insert((q.subject, q.relation)) {
            continue;
        }
        for &r in regions {
            scores.push(row[r as usize]);
            labels.push(gold.contains(&(q.subject, r)));
        }
    }
    auc_pr(&scores, &labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpMetric {
    #[default]
    Hit1,
    Mrr,
}

/// What a search reward is measured on.
#[derive(Clone, Copy, Debug)]
pub enum Measurement<'a> {
    /// Negative path loss on a training batch (alignment).
    NegLoss(&'a PathBatch),
    /// Filtered ranking on validation triplets (link prediction).
    Ranking {
        queries: &'a [Triplet],
        filters: &'a FilterIndex,
        metric: LpMetric,
    },
    /// Pooled AUC-PR on validation queries (Countries).
    AucPr {
        queries: &'a [Triplet],
        regions: &'a [EntityId],
    },
}

/// Scalar reward for the controller; higher is better.
pub fn search_measurement(g: &Genotype, store: &ParameterStore, m: Measurement<'_>) -> Result<f64> {
    match m {
        Measurement::NegLoss(batch) => Ok(-eval_loss(g, store, batch)?),
        Measurement::Ranking {
            queries,
            filters,
            metric,
        } => {
            let r = lp_rank(g, store, queries, filters)?;
            Ok(match metric {
                LpMetric::Hit1 => r.hit1,
                LpMetric::Mrr => r.mrr,
            })
        }
        Measurement::AucPr { queries, regions } => countries_auc_pr(g, store, queries, regions),
    }
}
