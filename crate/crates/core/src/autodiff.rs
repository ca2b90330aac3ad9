//! Batched dense tensors with reverse-mode differentiation.
//!
//! Values are `Array2<f64>`: a batch of `B` row vectors of width `d`, a
//! `d x d` weight, or a `1 x 1` scalar. Weights act on column vectors, so
//! `matmul(x, w)` computes `x · wᵀ` row by row.
//!
//! A [`Tape`] borrows a [`ParameterStore`] immutably while the forward pass
//! is recorded; [`Tape::backward`] returns [`Gradients`] which are then
//! applied with [`ParameterStore::adam_step`].

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::codec::{self, ByteReader};
use crate::error::{Error, Result};
use crate::seed;
use crate::walk::PAD_RELATION;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const CKPT_MAGIC: &[u8; 8] = b"KGCCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Table {
    Entity,
    Relation,
}

/// Identifies one trainable tensor in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Entity,
    Relation,
    Weight(usize),
}

impl From<Table> for ParamId {
    fn from(t: Table) -> Self {
        match t {
            Table::Entity => ParamId::Entity,
            Table::Relation => ParamId::Relation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Param {
    fn new(value: Array2<f64>) -> Self {
        let z = Array2::zeros(value.raw_dim());
        Param {
            m: z.clone(),
            v: z,
            value,
        }
    }
}

/// Embedding tables, named `d x d` weights and their Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    dim: usize,
    entity: Param,
    relation: Param,
    weight_names: Vec<String>,
    weights: Vec<Param>,
    step: u64,
}

/// Half-width of the uniform initialization range for dimension `d`.
pub fn init_bound(dim: usize) -> f64 {
    (6.0 / (2.0 * dim as f64)).sqrt()
}

impl ParameterStore {
    /// Uniform(±√(6/2d)) initialization of every tensor, in the order
    /// entities, relations, then weights as listed.
    pub fn new(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        weight_names: &[&str],
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::OddDimension {
                op: "parameter store",
                dim,
            });
        }
        let mut rng = seed::rng(seed);
        let b = init_bound(dim);
        let dist = Uniform::new_inclusive(-b, b);
        let mut init = |rows: usize| {
            Param::new(Array2::from_shape_simple_fn((rows, dim), || {
                dist.sample(&mut rng)
            }))
        };
        let entity = init(num_entities);
        let relation = init(num_relations);
        let weights = weight_names.iter().map(|_| init(dim)).collect();
        Ok(ParameterStore {
            dim,
            entity,
            relation,
            weight_names: weight_names.iter().map(|s| s.to_string()).collect(),
            weights,
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entity.value.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation.value.nrows()
    }

    pub fn weight_names(&self) -> &[String] {
        &self.weight_names
    }

    pub fn weight_index(&self, name: &str) -> Option<usize> {
        self.weight_names.iter().position(|n| n == name)
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::Entity, ParamId::Relation];
        ids.extend((0..self.weights.len()).map(ParamId::Weight));
        ids
    }

    fn param(&self, id: ParamId) -> &Param {
        match id {
            ParamId::Entity => &self.entity,
            ParamId::Relation => &self.relation,
            ParamId::Weight(k) => &self.weights[k],
        }
    }

    fn param_mut(&mut self, id: ParamId) -> &mut Param {
        match id {
            ParamId::Entity => &mut self.entity,
            ParamId::Relation => &mut self.relation,
            ParamId::Weight(k) => &mut self.weights[k],
        }
    }

    pub fn tensor(&self, id: ParamId) -> &Array2<f64> {
        &self.param(id).value
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.param_mut(id).value
    }

    pub fn entities(&self) -> &Array2<f64> {
        &self.entity.value
    }

    pub fn relations(&self) -> &Array2<f64> {
        &self.relation.value
    }

    pub fn weight(&self, name: &str) -> Option<&Array2<f64>> {
        self.weight_index(name).map(|k| &self.weights[k].value)
    }

    /// One Adam update of the tensors (and embedding rows) present in
    /// `grads`. The L2 term `l2 · w` is added to the gradient first.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, l2: f64) -> Result<()> {
        for id in self.param_ids() {
            if let Some(g) = grads.get(id) {
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite { op: "adam_step" });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for id in self.param_ids() {
            let Some(g) = grads.get(id) else { continue };
            let rows = grads.touched_rows(id);
            let p = self.param_mut(id);
            for r in rows {
                Zip::from(p.value.row_mut(r))
                    .and(p.m.row_mut(r))
                    .and(p.v.row_mut(r))
                    .and(g.row(r))
                    .for_each(|w, m, v, &g| {
                        let g = g + l2 * *w;
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    });
            }
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<(&str, &Param)> {
        let mut out = vec![("entity", &self.entity), ("relation", &self.relation)];
        out.extend(
            self.weight_names
                .iter()
                .map(String::as_str)
                .zip(self.weights.iter()),
        );
        out
    }

    /// Serializes values, Adam moments and step count, tagged with the
    /// genotype string of the owning model.
    pub fn to_bytes(&self, genotype: &str) -> Vec<u8> {
        let mut buf = CKPT_MAGIC.to_vec();
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        codec::put_str(&mut buf, genotype);
        buf.extend_from_slice(&genotype_hash(genotype));
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let tensors = self.tensors();
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, p) in tensors {
            codec::put_str(&mut buf, name);
            buf.extend_from_slice(&(p.value.nrows() as u64).to_le_bytes());
            buf.extend_from_slice(&(p.value.ncols() as u64).to_le_bytes());
            for a in [&p.value, &p.m, &p.v] {
                for x in a.iter() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        codec::seal(buf)
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); returns the store and the
    /// genotype string it was saved with.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let body = codec::unseal(bytes, CKPT_MAGIC, "checkpoint")?;
        let mut r = ByteReader::new(body, CKPT_MAGIC.len());
        if r.u32()? != CKPT_VERSION {
            return Err(Error::Integrity("unsupported checkpoint version".into()));
        }
        let genotype = r.str()?;
        if r.bytes(32)? != genotype_hash(&genotype) {
            return Err(Error::Integrity("checkpoint genotype hash mismatch".into()));
        }
        let step = r.u64()?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            if cols != dim {
                return Err(Error::Integrity(format!("tensor {name} has width {cols}")));
            }
            let mut read = || -> Result<Array2<f64>> {
                let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
            };
            let (value, m, v) = (read()?, read()?, read()?);
            named.push((name, Param { value, m, v }));
        }
        r.finish("checkpoint")?;
        if named.len() < 2 || named[0].0 != "entity" || named[1].0 != "relation" {
            return Err(Error::Integrity("checkpoint lacks embedding tables".into()));
        }
        let mut it = named.into_iter();
        let entity = it.next().unwrap().1;
        let relation = it.next().unwrap().1;
        let (weight_names, weights) = it.unzip();
        Ok((
            ParameterStore {
                dim,
                entity,
                relation,
                weight_names,
                weights,
                step,
            },
            genotype,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, genotype: &str) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes(genotype))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }
}

pub fn genotype_hash(genotype: &str) -> [u8; 32] {
    Sha256::digest(genotype.as_bytes()).into()
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Gather(Table, Vec<u32>),
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Hermitian(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    Mask(Var, Array2<f64>),
    DotScores(Var, Var),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<u32>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

/// Forward record for one computation over a borrowed [`ParameterStore`].
#[derive(Debug)]
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op,
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    Ok(())
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Array2<f64>, op: Op) -> Result<Var> {
        if !value.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let tracked = match &op {
            Op::Const => false,
            Op::Gather(..) | Op::Param(_) => true,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Hermitian(a, b)
            | Op::MatMul(a, b)
            | Op::DotScores(a, b) => self.nodes[a.0].tracked || self.nodes[b.0].tracked,
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Scale(a, _) | Op::Mask(a, _) | Op::Sum(a) => {
                self.nodes[a.0].tracked
            }
            Op::SoftmaxCe { logits, .. } => self.nodes[logits.0].tracked,
        };
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push("constant", value, Op::Const)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push("zeros", Array2::zeros((rows, cols)), Op::Const)
            .expect("zeros are finite")
    }

    /// Embedding lookup. [`PAD_RELATION`] ids yield zero rows that receive
    /// no gradient.
    pub fn gather(&mut self, table: Table, ids: &[u32]) -> Result<Var> {
        let src = self.store.tensor(table.into());
        let mut out = Array2::zeros((ids.len(), src.ncols()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            if id == PAD_RELATION {
                continue;
            }
            if id as usize >= src.nrows() {
                return Err(Error::Contract(format!(
                    "embedding lookup: id {id} outside table of {} rows",
                    src.nrows()
                )));
            }
            row.assign(&src.row(id as usize));
        }
        self.push("embedding_lookup", out, Op::Gather(table, ids.to_vec()))
    }

    /// A whole stored tensor (embedding table or weight) as one value.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let value = self.store.tensor(id).clone();
        self.push("parameter", value, Op::Param(id))
    }

    pub fn weight(&mut self, name: &str) -> Result<Var> {
        let k = self.store.weight_index(name).ok_or_else(|| Error::UnknownName {
            kind: "weight",
            name: name.to_owned(),
        })?;
        self.param(ParamId::Weight(k))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("add", x, y)?;
        let v = x + y;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("sub", x, y)?;
        let v = x - y;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("elementwise_mul", x, y)?;
        let v = x * y;
        self.push("elementwise_mul", v, Op::Mul(a, b))
    }

    /// Complex-style product on the two halves of each row:
    /// `o₁ = a₁b₁ − a₂b₂`, `o₂ = a₁b₂ − a₂b₁`.
    pub fn hermitian(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("hermitian_product", x, y)?;
        let d = x.ncols();
        if d % 2 != 0 {
            return Err(Error::OddDimension {
                op: "hermitian_product",
                dim: d,
            });
        }
        let (a1, a2, b1, b2) = halves(x.view(), y.view());
        let o1 = &a1 * &b1 - &a2 * &b2;
        let o2 = &a1 * &b2 - &a2 * &b1;
        let v = concatenate(Axis(1), &[o1.view(), o2.view()]).unwrap();
        self.push("hermitian_product", v, Op::Hermitian(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    /// Row-batched `x · wᵀ`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ncols() != wv.ncols() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: xv.dim(),
                rhs: wv.dim(),
            });
        }
        let v = xv.dot(&wv.t());
        self.push("matmul", v, Op::MatMul(x, w))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) * c;
        self.push("scale", v, Op::Scale(a, c))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Result<Var> {
        check_same("dropout", self.value(a), &mask)?;
        let v = self.value(a) * &mask;
        self.push("dropout", v, Op::Mask(a, mask))
    }

    /// `g ⊙ a + (1 − g) ⊙ b` with `g = σ(a·Waᵀ + b·Wbᵀ)`.
    pub fn gated(&mut self, a: Var, b: Var, wa: Var, wb: Var) -> Result<Var> {
        let za = self.matmul(a, wa)?;
        let zb = self.matmul(b, wb)?;
        let z = self.add(za, zb)?;
        let g = self.sigmoid(z)?;
        let diff = self.sub(a, b)?;
        let gd = self.mul(g, diff)?;
        self.add(b, gd)
    }

    /// Logits `x · eᵀ` of every row against every row of `e`.
    pub fn dot_scores(&mut self, x: Var, e: Var) -> Result<Var> {
        let (xv, ev) = (self.value(x), self.value(e));
        if xv.ncols() != ev.ncols() {
            return Err(Error::Shape {
                op: "dot_scores",
                lhs: xv.dim(),
                rhs: ev.dim(),
            });
        }
        let v = xv.dot(&ev.t());
        self.push("dot_scores", v, Op::DotScores(x, e))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    /// `Σ_b w_b · (log Σ_j exp z_bj − z_{b,t_b})` as a `1 x 1` value.
    /// Rows with zero weight are skipped entirely.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[u32], weights: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.nrows() || weights.len() != z.nrows() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: z.dim(),
                rhs: (targets.len(), weights.len()),
            });
        }
        let mut probs = Array2::zeros(z.raw_dim());
        let mut loss = 0.0;
        for (b, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            if t as usize >= z.ncols() {
                return Err(Error::Contract(format!(
                    "softmax_cross_entropy: target {t} outside {} classes",
                    z.ncols()
                )));
            }
            let row = z.row(b);
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += w * (lse - row[t as usize]);
            probs.row_mut(b).assign(&row.mapv(|x| (x - lse).exp()));
        }
        self.push(
            "softmax_cross_entropy",
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        let store = self.store;
        let mut out = Gradients {
            entity: SparseGrad::new(store.num_entities()),
            relation: SparseGrad::new(store.num_relations()),
            weights: vec![None; store.weights.len()],
            nodes: vec![None; self.nodes.len()],
        };
        out.nodes[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = out.nodes[i].take() else { continue };
            self.propagate(node, &g, &mut out);
            out.nodes[i] = Some(g);
        }
        Ok(out)
    }

    fn send(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, out: &mut Gradients) {
        match &node.op {
            Op::Gather(table, ids) => return out.scatter(*table, ids, g),
            Op::Param(id) => return out.accumulate(*id, g),
            _ => {}
        }
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, delta: Array2<f64>| self.send(&mut out.nodes, v, delta);
        match &node.op {
            Op::Const => {}
            Op::Gather(..) | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                send(*a, g * val(*b));
                send(*b, g * val(*a));
            }
            Op::Hermitian(a, b) => {
                let (a1, a2, b1, b2) = halves(val(*a).view(), val(*b).view());
                let h = g.ncols() / 2;
                let (g1, g2) = (g.slice(s![.., ..h]), g.slice(s![.., h..]));
                let ga1 = &g1 * &b1 + &g2 * &b2;
                let ga2 = -(&g1 * &b2) - &g2 * &b1;
                let gb1 = &g1 * &a1 - &g2 * &a2;
                let gb2 = &g2 * &a1 - &g1 * &a2;
                send(*a, concatenate(Axis(1), &[ga1.view(), ga2.view()]).unwrap());
                send(*b, concatenate(Axis(1), &[gb1.view(), gb2.view()]).unwrap());
            }
            Op::Sigmoid(a) => {
                send(*a, g * &node.value.mapv(|y| y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                send(*a, g * &node.value.mapv(|y| 1.0 - y * y));
            }
            Op::MatMul(x, w) | Op::DotScores(x, w) => {
                send(*x, g.dot(val(*w)));
                send(*w, g.t().dot(val(*x)));
            }
            Op::Scale(a, c) => send(*a, g * *c),
            Op::Mask(a, m) => send(*a, g * m),
            Op::Sum(a) => send(*a, Array2::from_elem(val(*a).raw_dim(), g[[0, 0]])),
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
                probs,
            } => {
                let g0 = g[[0, 0]];
                let mut d = probs.clone();
                for (b, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let mut row = d.row_mut(b);
                    if w == 0.0 {
                        row.fill(0.0);
                        continue;
                    }
                    row[t as usize] -= 1.0;
                    row *= w * g0;
                }
                send(*logits, d);
            }
        }
    }
}

fn halves<'a>(
    a: ArrayView2<'a, f64>,
    b: ArrayView2<'a, f64>,
) -> (
    ArrayView2<'a, f64>,
    ArrayView2<'a, f64>,
    ArrayView2<'a, f64>,
    ArrayView2<'a, f64>,
) {
    let h = a.ncols() / 2;
    let (a1, a2) = a.split_at(Axis(1), h);
    let (b1, b2) = b.split_at(Axis(1), h);
    (a1, a2, b1, b2)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
struct SparseGrad {
    dense: Option<Array2<f64>>,
    touched: Vec<bool>,
}

impl SparseGrad {
    fn new(rows: usize) -> Self {
        SparseGrad {
            dense: None,
            touched: vec![false; rows],
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    entity: SparseGrad,
    relation: SparseGrad,
    weights: Vec<Option<Array2<f64>>>,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    fn scatter(&mut self, table: Table, ids: &[u32], g: &Array2<f64>) {
        let sg = match table {
            Table::Entity => &mut self.entity,
            Table::Relation => &mut self.relation,
        };
        let rows = sg.touched.len();
        let dense = sg.dense.get_or_insert_with(|| Array2::zeros((rows, g.ncols())));
        for (b, &id) in ids.iter().enumerate() {
            if id == PAD_RELATION {
                continue;
            }
            let mut row = dense.row_mut(id as usize);
            row += &g.row(b);
            sg.touched[id as usize] = true;
        }
    }

    fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        let slot = match id {
            ParamId::Entity | ParamId::Relation => {
                let sg = if id == ParamId::Entity {
                    &mut self.entity
                } else {
                    &mut self.relation
                };
                sg.touched.iter_mut().for_each(|t| *t = true);
                &mut sg.dense
            }
            ParamId::Weight(k) => &mut self.weights[k],
        };
        match slot {
            Some(acc) => *acc += g,
            None => *slot = Some(g.clone()),
        }
    }

    /// Dense gradient of a stored tensor, or `None` if it was not used.
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        match id {
            ParamId::Entity => self.entity.dense.as_ref(),
            ParamId::Relation => self.relation.dense.as_ref(),
            ParamId::Weight(k) => self.weights.get(k)?.as_ref(),
        }
    }

    /// Rows of `id` that received gradient.
    pub fn touched_rows(&self, id: ParamId) -> Vec<usize> {
        let flags = match id {
            ParamId::Entity => &self.entity.touched,
            ParamId::Relation => &self.relation.touched,
            ParamId::Weight(k) => {
                return match self.weights.get(k) {
                    Some(Some(w)) => (0..w.nrows()).collect(),
                    _ => Vec::new(),
                }
            }
        };
        flags
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i))
            .collect()
    }

    /// Gradient with respect to an intermediate value; `None` for values
    /// that do not depend on any parameter.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes.get(v.0)?.as_ref()
    }
}
