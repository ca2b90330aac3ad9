//! Measurements shared by the property tests and the acceptance gate.
//! Each returns the observed quantity; callers decide the threshold.

use std::collections::{HashMap, HashSet};

use kgcell::autodiff::{ParamId, ParameterStore, Table, Tape, Var};
use kgcell::cell::{
    forward_cell, preset, CellWeights, Genotype, MacroGenotype, MicroGenotype, SUPERNET_WEIGHTS,
};
use kgcell::eval::{ea_ranks, lp_ranks};
use kgcell::graph::{filter_sets, KnowledgeGraph, Triplet, Vocab};
use kgcell::search::{categories, CategoricalParam, ControllerConfig, ControllerState, Part};
use kgcell::seed;
use kgcell::train::{path_loss, PathBatch};
use kgcell::walk::{sample_paths, step_distribution, RelationalPath, WalkConfig};
use kgcell::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_genotype<R: Rng>(rng: &mut R) -> Genotype {
    Genotype {
        macro_part: MacroGenotype::from_index(rng.gen_range(0..MacroGenotype::COUNT)).unwrap(),
        micro_part: MicroGenotype::from_index(rng.gen_range(0..MicroGenotype::COUNT)).unwrap(),
    }
}

fn uniform_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-6;
/// Denominator floor so vanishing gradients compare absolutely.
const FD_FLOOR: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Largest relative error between the tape's gradient and central finite
/// differences, over every parameter entry.
pub fn gradient_error(store: &ParameterStore, loss: &dyn Fn(&mut Tape<'_>) -> Result<Var>) -> f64 {
    let grads = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape).unwrap();
        tape.backward(l).unwrap()
    };
    let eval = |s: &ParameterStore| {
        let mut tape = Tape::new(s);
        let l = loss(&mut tape).unwrap();
        tape.value(l)[[0, 0]]
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.param_ids() {
        let zero = Array2::zeros(store.tensor(id).dim());
        let analytic = grads.get(id).unwrap_or(&zero).clone();
        for (idx, &a) in analytic.indexed_iter() {
            let x = probe.tensor(id)[idx];
            probe.tensor_mut(id)[idx] = x + FD_STEP;
            let up = eval(&probe);
            probe.tensor_mut(id)[idx] = x - FD_STEP;
            let down = eval(&probe);
            probe.tensor_mut(id)[idx] = x;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn small_store(seed: u64) -> ParameterStore {
    ParameterStore::new(6, 3, 4, &["A", "B", "WA", "WB"], seed).unwrap()
}

/// `sum(out ⊙ C)` for a fixed random `C`, so every output entry matters.
fn project(tape: &mut Tape<'_>, out: Var) -> Result<Var> {
    let (r, c) = tape.value(out).dim();
    let probe = tape.constant(uniform_matrix(99, r, c))?;
    let weighted = tape.mul(out, probe)?;
    tape.sum(weighted)
}

type Binary = fn(&mut Tape<'_>, Var, Var) -> Result<Var>;
type Unary = fn(&mut Tape<'_>, Var) -> Result<Var>;

/// Worst error per primitive over three random stores.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    let binary: [(&str, Binary); 5] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("hermitian", |t, a, b| t.hermitian(a, b)),
        ("matmul", |t, a, b| t.matmul(a, b)),
    ];
    let unary: [(&str, Unary); 4] = [
        ("sigmoid", |t, a| t.sigmoid(a)),
        ("tanh", |t, a| t.tanh(a)),
        ("scale", |t, a| t.scale(a, -2.5)),
        ("mask", |t, a| {
            let m = uniform_matrix(5, 4, 4).mapv(|x| if x > 0.0 { 2.0 } else { 0.0 });
            t.mask(a, m)
        }),
    ];
    let worst_over_seeds =
        |f: &dyn Fn(&ParameterStore) -> f64| (0..3).map(|s| f(&small_store(s))).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (name, op) in binary {
        out.push((
            name,
            worst_over_seeds(&|st| {
                gradient_error(st, &|t| {
                    let a = t.weight("A")?;
                    let b = t.weight("B")?;
                    let o = op(t, a, b)?;
                    project(t, o)
                })
            }),
        ));
    }
    for (name, op) in unary {
        out.push((
            name,
            worst_over_seeds(&|st| {
                gradient_error(st, &|t| {
                    let a = t.weight("A")?;
                    let o = op(t, a)?;
                    project(t, o)
                })
            }),
        ));
    }
    out.push((
        "gated",
        worst_over_seeds(&|st| {
            gradient_error(st, &|t| {
                let a = t.weight("A")?;
                let b = t.weight("B")?;
                let wa = t.weight("WA")?;
                let wb = t.weight("WB")?;
                let o = t.gated(a, b, wa, wb)?;
                project(t, o)
            })
        }),
    ));
    out.push((
        "lookup+scores+softmax_ce",
        worst_over_seeds(&|st| {
            gradient_error(st, &|t| {
                let e = t.gather(Table::Entity, &[0, 3, 3, 5])?;
                let r = t.gather(Table::Relation, &[1, 2, 0, 1])?;
                let x = t.hermitian(e, r)?;
                let table = t.param(ParamId::Entity)?;
                let logits = t.dot_scores(x, table)?;
                t.softmax_ce(logits, &[1, 2, 0, 5], &[0.25, 0.5, 0.0, 1.0])
            })
        }),
    ));
    out
}

fn random_batch<R: Rng>(rng: &mut R, n_ent: u32, n_rel: u32) -> PathBatch {
    let paths: Vec<RelationalPath> = (0..3)
        .map(|_| {
            let mut s = rng.gen_range(0..n_ent);
            let steps = (0..3)
                .map(|_| {
                    let o = rng.gen_range(0..n_ent);
                    let t = Triplet::new(s, rng.gen_range(0..n_rel), o);
                    s = o;
                    t
                })
                .collect();
            RelationalPath::new(steps).unwrap()
        })
        .collect();
    PathBatch::from_paths(&paths).unwrap()
}

/// Error of the full path loss for 20 random genotypes unrolled over
/// three steps.
pub fn unroll_gradient_errors() -> Vec<(Genotype, f64)> {
    let mut rng = seed::rng(2024);
    (0..20)
        .map(|case| {
            let g = random_genotype(&mut rng);
            let batch = random_batch(&mut rng, 7, 3);
            let store = ParameterStore::new(7, 3, 4, &SUPERNET_WEIGHTS, case).unwrap();
            let err = gradient_error(&store, &|t| path_loss(t, &g, &batch, None));
            (g, err)
        })
        .collect()
}

// ------------------------------------------------------------------ presets

/// Runs one batched cell step on rows of the given tables.
pub fn batched(
    store: &ParameterStore,
    g: &Genotype,
    s: &[u32],
    r: &[u32],
    h: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut tape = Tape::new(store);
    let w = CellWeights::bind(&mut tape, g).unwrap();
    let sv = tape.gather(Table::Entity, s).unwrap();
    let rv = tape.gather(Table::Relation, r).unwrap();
    let hv = tape.constant(h.clone()).unwrap();
    let (v, h) = forward_cell(&mut tape, g, &w, sv, rv, hv).unwrap();
    (tape.value(v).clone(), tape.value(h).clone())
}

pub fn preset_store(seed: u64) -> ParameterStore {
    ParameterStore::new(9, 4, 6, &SUPERNET_WEIGHTS, seed).unwrap()
}

fn max_diff(a: &Array2<f64>, b: impl Fn(usize, usize) -> f64) -> f64 {
    a.indexed_iter()
        .map(|((i, j), x)| (x - b(i, j)).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of each triplet/path preset from its model's unit
/// function over five random stores.
pub fn preset_unit_deviation() -> Vec<(&'static str, f64)> {
    let s_ids = [0, 3, 8, 5];
    let r_ids = [1, 0, 3, 2];
    let mut worst: HashMap<&str, f64> = HashMap::new();
    let mut note = |name, d: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(d);
    };
    for case in 0..5 {
        let st = preset_store(case);
        let e = st.entities();
        let rel = st.relations();
        let h = uniform_matrix(case + 100, 4, 6);
        let s = |i: usize, j: usize| e[[s_ids[i] as usize, j]];
        let r = |i: usize, j: usize| rel[[r_ids[i] as usize, j]];

        let (v, _) = batched(&st, &preset("transe").unwrap(), &s_ids, &r_ids, &h);
        note("transe", max_diff(&v, |i, j| s(i, j) + r(i, j)));

        let (v, _) = batched(&st, &preset("complex").unwrap(), &s_ids, &r_ids, &h);
        let complex = |i: usize, j: usize| {
            let (a1, a2, b1, b2) = (s(i, j % 3), s(i, j % 3 + 3), r(i, j % 3), r(i, j % 3 + 3));
            if j < 3 {
                a1 * b1 - a2 * b2
            } else {
                a1 * b2 - a2 * b1
            }
        };
        note("complex", max_diff(&v, complex));

        let (v, hn) = batched(&st, &preset("ptranse_add").unwrap(), &s_ids, &r_ids, &h);
        note(
            "ptranse_add",
            max_diff(&hn, |i, j| h[[i, j]] + r(i, j)).max(max_diff(&v, |i, j| hn[[i, j]])),
        );

        let (v, hn) = batched(&st, &preset("ptranse_mul").unwrap(), &s_ids, &r_ids, &h);
        note(
            "ptranse_mul",
            max_diff(&hn, |i, j| h[[i, j]] * r(i, j)).max(max_diff(&v, |i, j| hn[[i, j]])),
        );
    }
    ["transe", "complex", "ptranse_add", "ptranse_mul"]
        .into_iter()
        .map(|n| (n, worst[n]))
        .collect()
}

/// Deviation of chains from `v = h` and of rsn from `v = W5 s + W6 h`.
pub fn recurrent_preset_deviation() -> Vec<(&'static str, f64)> {
    let s_ids = [2, 4, 7];
    let r_ids = [3, 3, 0];
    let (mut chains, mut rsn) = (0.0f64, 0.0f64);
    for case in 0..5 {
        let st = preset_store(case);
        let h = uniform_matrix(case + 7, 3, 6);

        let (v, hn) = batched(&st, &preset("chains").unwrap(), &s_ids, &r_ids, &h);
        chains = chains.max(max_diff(&v, |i, j| hn[[i, j]]));

        let (v, hn) = batched(&st, &preset("rsn").unwrap(), &s_ids, &r_ids, &h);
        let w5 = st.weight("W5").unwrap();
        let w6 = st.weight("W6").unwrap();
        for (i, &sid) in s_ids.iter().enumerate() {
            let s = st.entities().row(sid as usize).to_vec();
            let a = super::apply(w5, &s);
            let b = super::apply(w6, &hn.row(i).to_vec());
            for j in 0..6 {
                rsn = rsn.max((v[[i, j]] - (a[j] + b[j])).abs());
            }
        }
    }
    vec![("chains", chains), ("rsn", rsn)]
}

// ------------------------------------------------------------------ ranking

/// Sorts all candidates by descending score, placing the target after
/// every candidate it ties with, and returns its 1-based position.
fn sorted_position(scores: &[(usize, f64)], target: usize) -> usize {
    let mut order: Vec<&(usize, f64)> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| (a.0 == target).cmp(&(b.0 == target)))
    });
    order.iter().position(|(c, _)| *c == target).unwrap() + 1
}

fn vocab(prefix: &str, n: usize) -> Vocab {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Cases (of 50) where filtered link-prediction ranks differ from the
/// oracle.
pub fn lp_rank_mismatches() -> Vec<String> {
    let mut rng = seed::rng(31);
    let mut bad = Vec::new();
    for case in 0..50 {
        let n_ent = rng.gen_range(3..=30);
        let n_rel = rng.gen_range(1..=4);
        let triplets: Vec<Triplet> = (0..rng.gen_range(n_ent..4 * n_ent))
            .map(|_| {
                Triplet::new(
                    rng.gen_range(0..n_ent) as u32,
                    rng.gen_range(0..n_rel) as u32,
                    rng.gen_range(0..n_ent) as u32,
                )
            })
            .collect();
        let (graph, _) = KnowledgeGraph::new(vocab("e", n_ent), vocab("r", n_rel), triplets).unwrap();
        let all = graph.triplets().to_vec();
        let queries: Vec<Triplet> = all
            .choose_multiple(&mut rng, 10.min(all.len()))
            .copied()
            .collect();
        let filters = filter_sets(&graph, &[&all]);
        let g = random_genotype(&mut rng);
        let mut store = ParameterStore::new(n_ent, n_rel, 4, &SUPERNET_WEIGHTS, case).unwrap();
        if case % 5 == 0 {
            // coarse values make exact score ties common
            let e = store.tensor_mut(ParamId::Entity);
            e.mapv_inplace(|x| (x * 2.0).round() / 2.0);
        }

        let known: HashMap<(u32, u32), HashSet<u32>> = all.iter().fold(HashMap::new(), |mut m, t| {
            m.entry((t.subject, t.relation)).or_default().insert(t.object);
            m
        });
        let expected: Vec<usize> = queries
            .iter()
            .map(|q| {
                let s = store.entities().row(q.subject as usize).to_vec();
                let r = store.relations().row(q.relation as usize).to_vec();
                let (v, _) = super::cell(&store, &g, &s, &r, &s);
                let others = &known[&(q.subject, q.relation)];
                let candidates: Vec<(usize, f64)> = super::scores(&store, &v)
                    .into_iter()
                    .enumerate()
                    .filter(|(c, _)| *c == q.object as usize || !others.contains(&(*c as u32)))
                    .collect();
                sorted_position(&candidates, q.object as usize)
            })
            .collect();
        let got = lp_ranks(&g, &store, &queries, &filters).unwrap();
        if got != expected {
            bad.push(format!("case {case} {g}: got {got:?}, oracle {expected:?}"));
        }
    }
    bad
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = super::dot(a, a).sqrt() * super::dot(b, b).sqrt();
    if n == 0.0 {
        0.0
    } else {
        super::dot(a, b) / n
    }
}

/// Cases (of 50) where alignment ranks differ from the cosine oracle.
pub fn ea_rank_mismatches() -> Vec<String> {
    let mut rng = seed::rng(32);
    let mut bad = Vec::new();
    for case in 0..50 {
        let n_ent = rng.gen_range(4..=30);
        let split = n_ent / 2;
        let store = ParameterStore::new(n_ent, 1, 6, &[] as &[&str], case).unwrap();
        let candidates: Vec<u32> = (split as u32..n_ent as u32).collect();
        let pairs: Vec<(u32, u32)> = (0..rng.gen_range(1..=split))
            .map(|_| {
                (
                    rng.gen_range(0..split) as u32,
                    *candidates.choose(&mut rng).unwrap(),
                )
            })
            .collect();
        let expected: Vec<usize> = pairs
            .iter()
            .map(|&(l, r)| {
                let lv = store.entities().row(l as usize).to_vec();
                let scored: Vec<(usize, f64)> = candidates
                    .iter()
                    .filter(|&&c| c == r || !pairs.contains(&(l, c)))
                    .map(|&c| {
                        (
                            c as usize,
                            cosine(&lv, &store.entities().row(c as usize).to_vec()),
                        )
                    })
                    .collect();
                sorted_position(&scored, r as usize)
            })
            .collect();
        let got = ea_ranks(&store, &pairs, &candidates).unwrap();
        if got != expected {
            bad.push(format!("case {case}: got {got:?}, oracle {expected:?}"));
        }
    }
    bad
}

// --------------------------------------------------------------- controller

pub const ARM_REWARDS: [f64; 4] = [1.0, 0.5, 0.2, 0.0];

/// Probability of the first category after one update rewarding it with
/// 1.0 at ρ = 0.1, starting from a fair coin.
pub fn single_update_probability() -> f64 {
    let mut p = CategoricalParam::uniform(2);
    p.npg_step(&[(0, 1.0)], 0.1);
    p.probs()[0]
}

/// Number of updates until the best arm holds at least 0.9 of the mass,
/// or the final distribution if it never does within 200 updates. Macro
/// component 0 (the relation-input connection) is the arm; the reward
/// ignores every other component.
pub fn bandit_updates(s: u64) -> std::result::Result<usize, Vec<f64>> {
    let config = ControllerConfig {
        rho_macro: 0.1,
        m_samples: 2,
        ..ControllerConfig::default()
    };
    let mut ctrl = ControllerState::uniform(config);
    let mut rng = seed::rng(seed::derive(s, "bandit"));
    for update in 1..=200 {
        let samples: Vec<(Genotype, f64)> = (0..2)
            .map(|_| {
                let g = ctrl.sample_genotype(&mut rng, None, None);
                let arm = categories(&g)[0];
                (g, ARM_REWARDS[arm])
            })
            .collect();
        ctrl.npg_update(&samples, Part::Macro).unwrap();
        if ctrl.components[0].probs()[0] >= 0.9 {
            return Ok(update);
        }
    }
    Err(ctrl.components[0].probs().to_vec())
}

// ------------------------------------------------------------------ sampler

pub const SAMPLER_DRAWS: usize = 100_000;

/// Five entities; from e1 the walker can return to e0, move to e3 (also a
/// neighbour of e0) or to e2/e4 (two hops from e0).
pub fn fan_graph() -> KnowledgeGraph {
    let ents: Vocab = (0..5).map(|i| format!("e{i}")).collect();
    let rels: Vocab = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let t = |s, r, o| Triplet::new(s, r, o);
    let (g, _) = KnowledgeGraph::new(
        ents,
        rels,
        [
            t(0, 0, 1),
            t(1, 1, 0),
            t(1, 0, 3),
            t(1, 1, 2),
            t(1, 0, 4),
            t(0, 1, 3),
            t(2, 0, 4),
        ],
    )
    .unwrap();
    g
}

/// Empirical second-step frequencies out of e1 after arriving from e0.
fn frequencies(graph: &KnowledgeGraph, cfg: &WalkConfig) -> Vec<f64> {
    let seeds = vec![Triplet::new(0, 0, 1); SAMPLER_DRAWS];
    let paths = sample_paths(graph, &seeds, cfg).unwrap();
    let edges = graph.out_edges(1);
    let mut counts = vec![0usize; edges.len()];
    for p in &paths {
        let step = p.steps()[1];
        let k = edges
            .iter()
            .position(|&(r, o)| r == step.relation && o == step.object)
            .expect("second step leaves e1");
        counts[k] += 1;
    }
    counts.iter().map(|&c| c as f64 / paths.len() as f64).collect()
}

/// Largest per-edge gap between empirical and analytic step frequencies.
pub fn sampler_deviation(graph: &KnowledgeGraph, cfg: &WalkConfig) -> f64 {
    let expected = step_distribution(graph, Some(0), 1, cfg).unwrap();
    let observed = frequencies(graph, cfg);
    expected
        .iter()
        .zip(&observed)
        .map(|(e, o)| (e - o).abs())
        .fold(0.0, f64::max)
}

/// The walk settings exercised by the sampler checks: three depth biases
/// on the plain graph and a cross-graph bias on a partitioned copy.
pub fn sampler_cases() -> Vec<(String, KnowledgeGraph, WalkConfig)> {
    let mut cases: Vec<(String, KnowledgeGraph, WalkConfig)> = [0.6, 0.7, 0.9]
        .into_iter()
        .map(|depth| {
            let cfg = WalkConfig {
                depth_bias: depth,
                path_length: 2,
                paths_per_triplet: 1,
                ..WalkConfig::link_prediction(7)
            };
            (format!("depth {depth}"), fan_graph(), cfg)
        })
        .collect();
    let cfg = WalkConfig {
        depth_bias: 0.7,
        cross_kg_bias: Some(0.9),
        path_length: 2,
        paths_per_triplet: 1,
        rng_seed: 8,
    };
    let graph = fan_graph().with_partition(vec![0, 0, 1, 0, 1]).unwrap();
    cases.push(("cross 0.9".into(), graph, cfg));
    cases
}
