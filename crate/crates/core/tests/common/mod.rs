//! Scalar reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use kgcell::autodiff::ParameterStore;
use kgcell::cell::{Activation, Combinator, Connection, Genotype, Link};
use kgcell::walk::{RelationalPath, PAD_RELATION};

pub type Vector = Vec<f64>;

/// `W x` for a row-major `W`.
pub fn apply(w: &ndarray::Array2<f64>, x: &[f64]) -> Vector {
    (0..w.nrows())
        .map(|i| (0..x.len()).map(|j| w[[i, j]] * x[j]).sum())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn combine(store: &ParameterStore, site: &str, c: Combinator, a: &[f64], b: &[f64]) -> Vector {
    let d = a.len();
    match c {
        Combinator::Add => (0..d).map(|i| a[i] + b[i]).collect(),
        Combinator::Mul => (0..d).map(|i| a[i] * b[i]).collect(),
        Combinator::Hermitian => {
            let h = d / 2;
            let mut out = vec![0.0; d];
            for i in 0..h {
                let (a1, a2, b1, b2) = (a[i], a[i + h], b[i], b[i + h]);
                out[i] = a1 * b1 - a2 * b2;
                out[i + h] = a1 * b2 - a2 * b1;
            }
            out
        }
        Combinator::Gated => {
            let wa = store.weight(&format!("gate_{site}_a")).unwrap();
            let wb = store.weight(&format!("gate_{site}_b")).unwrap();
            let za = apply(wa, a);
            let zb = apply(wb, b);
            (0..d)
                .map(|i| {
                    let g = sigmoid(za[i] + zb[i]);
                    g * a[i] + (1.0 - g) * b[i]
                })
                .collect()
        }
    }
}

fn act(a: Activation, x: Vector) -> Vector {
    match a {
        Activation::Identity => x,
        Activation::Tanh => x.into_iter().map(f64::tanh).collect(),
        Activation::Sigmoid => x.into_iter().map(sigmoid).collect(),
    }
}

fn link(store: &ParameterStore, g: &Genotype, k: usize, x: &[f64]) -> Vector {
    match g.micro_part.links[k] {
        Link::Identity => x.to_vec(),
        Link::Weight => apply(store.weight(&format!("W{}", k + 1)).unwrap(), x),
    }
}

/// One cell step on single vectors; returns `(v, h)`.
pub fn cell(store: &ParameterStore, g: &Genotype, s: &[f64], r: &[f64], h_prev: &[f64]) -> (Vector, Vector) {
    let m = &g.macro_part;
    let d = s.len();
    let uses_os = m.in_r == Connection::OsOut || m.in_v == Connection::OsOut;
    let os = uses_os.then(|| {
        let a = link(store, g, 0, h_prev);
        let b = link(store, g, 1, s);
        act(g.micro_part.act_s, combine(store, "s", m.comb_s, &a, &b))
    });
    let pick = |c: Connection| -> Option<Vector> {
        match c {
            Connection::HPrev => Some(h_prev.to_vec()),
            Connection::OsOut => os.clone(),
            Connection::SCur => Some(s.to_vec()),
            Connection::Zero => None,
        }
    };
    let a = pick(m.in_r).map_or_else(|| vec![0.0; d], |x| link(store, g, 2, &x));
    let b = link(store, g, 3, r);
    let h = act(g.micro_part.act_r, combine(store, "r", m.comb_r, &a, &b));
    let a = pick(m.in_v).map_or_else(|| vec![0.0; d], |x| link(store, g, 4, &x));
    let b = link(store, g, 5, &h);
    (combine(store, "v", m.comb_v, &a, &b), h)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores of every entity for `v`.
pub fn scores(store: &ParameterStore, v: &[f64]) -> Vector {
    let e = store.entities();
    (0..e.nrows())
        .map(|i| dot(v, e.row(i).as_slice().unwrap()))
        .collect()
}

/// Mean softmax cross-entropy over all real steps of all paths, divided
/// by `paths × length` as the trainer does.
pub fn path_loss(store: &ParameterStore, g: &Genotype, paths: &[RelationalPath]) -> f64 {
    let e = store.entities();
    let rel = store.relations();
    let d = store.dim();
    let len = paths[0].len();
    let mut total = 0.0;
    for p in paths {
        let mut h: Option<Vector> = None;
        for t in p.steps() {
            let pad = t.relation == PAD_RELATION;
            let s = if pad {
                vec![0.0; d]
            } else {
                e.row(t.subject as usize).to_vec()
            };
            let r = if pad {
                vec![0.0; d]
            } else {
                rel.row(t.relation as usize).to_vec()
            };
            let hp = h.clone().unwrap_or_else(|| s.clone());
            let (v, hn) = cell(store, g, &s, &r, &hp);
            h = Some(hn);
            if pad {
                continue;
            }
            let z = scores(store, &v);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - z[t.object as usize];
        }
    }
    total / (paths.len() * len) as f64
}
