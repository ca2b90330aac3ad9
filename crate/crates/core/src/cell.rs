//! The searchable recurrent cell and its genotype space.
//!
//! One step maps `(s_t, r_t, h_{t-1})` to `(v_t, h_t)`:
//!
//! ```text
//! O_s = act_s(comb_s(T1 h_{t-1}, T2 s_t))
//! O_r = act_r(comb_r(T3 pick(in_r), T4 r_t))
//! v_t = comb_v(T5 pick(in_v), T6 O_r)
//! h_t = O_r
//! ```
//!
//! where `pick` selects `h_{t-1}`, `O_s`, zero or `s_t`, and each `T_i` is
//! either the identity or a `d x d` matrix `W_i` tied across steps. The
//! macro genotype fixes the wiring and combinators, the micro genotype the
//! activations and link transforms.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

macro_rules! choice_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::UnknownName { kind: stringify!($name), name: s.to_owned() }),
                }
            }
        }
    };
}

choice_enum!(
    /// First input of `O_r` or `O_v`.
    Connection { HPrev => "H", OsOut => "OS", Zero => "ZERO", SCur => "S" }
);
choice_enum!(Combinator { Add => "ADD", Mul => "MUL", Hermitian => "HERMITIAN", Gated => "GATED" });
choice_enum!(Activation { Identity => "IDENTITY", Tanh => "TANH", Sigmoid => "SIGMOID" });
choice_enum!(Link { Weight => "W", Identity => "I" });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacroGenotype {
    pub in_r: Connection,
    pub in_v: Connection,
    pub comb_s: Combinator,
    pub comb_r: Combinator,
    pub comb_v: Combinator,
}

/// Links, in order: `h→O_s`, `s→O_s`, `in_r→O_r`, `r→O_r`, `in_v→O_v`, `O_r→O_v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MicroGenotype {
    pub act_s: Activation,
    pub act_r: Activation,
    pub links: [Link; 6],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    pub macro_part: MacroGenotype,
    pub micro_part: MicroGenotype,
}

impl Default for MacroGenotype {
    fn default() -> Self {
        MacroGenotype {
            in_r: Connection::SCur,
            in_v: Connection::Zero,
            comb_s: Combinator::Add,
            comb_r: Combinator::Add,
            comb_v: Combinator::Add,
        }
    }
}

impl Default for MicroGenotype {
    fn default() -> Self {
        MicroGenotype {
            act_s: Activation::Identity,
            act_r: Activation::Identity,
            links: [Link::Identity; 6],
        }
    }
}

impl MacroGenotype {
    pub const COUNT: usize = 4 * 4 * 4 * 4 * 4;

    /// Mixed-radix index in `0..COUNT`.
    pub fn index(&self) -> usize {
        [
            self.in_r.index(),
            self.in_v.index(),
            self.comb_s.index(),
            self.comb_r.index(),
            self.comb_v.index(),
        ]
        .iter()
        .fold(0, |acc, &d| acc * 4 + d)
    }

    pub fn from_index(mut i: usize) -> Option<Self> {
        if i >= Self::COUNT {
            return None;
        }
        let mut digit = || {
            let d = i % 4;
            i /= 4;
            d
        };
        let comb_v = Combinator::from_index(digit())?;
        let comb_r = Combinator::from_index(digit())?;
        let comb_s = Combinator::from_index(digit())?;
        let in_v = Connection::from_index(digit())?;
        let in_r = Connection::from_index(digit())?;
        Some(MacroGenotype {
            in_r,
            in_v,
            comb_s,
            comb_r,
            comb_v,
        })
    }

    /// Whether `O_s` feeds anything downstream.
    pub fn uses_os(&self) -> bool {
        self.in_r == Connection::OsOut || self.in_v == Connection::OsOut
    }
}

impl MicroGenotype {
    pub const COUNT: usize = 3 * 3 * 64;

    pub fn index(&self) -> usize {
        let links = self.links.iter().fold(0, |acc, l| acc * 2 + l.index());
        (self.act_s.index() * 3 + self.act_r.index()) * 64 + links
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i >= Self::COUNT {
            return None;
        }
        let mut links = [Link::Weight; 6];
        for (k, l) in links.iter_mut().enumerate() {
            *l = Link::from_index((i >> (5 - k)) & 1)?;
        }
        let acts = i / 64;
        Some(MicroGenotype {
            act_s: Activation::from_index(acts / 3)?,
            act_r: Activation::from_index(acts % 3)?,
            links,
        })
    }
}

impl Genotype {
    pub const COUNT: usize = MacroGenotype::COUNT * MicroGenotype::COUNT;

    pub fn new(macro_part: MacroGenotype, micro_part: MicroGenotype) -> Self {
        Genotype {
            macro_part,
            micro_part,
        }
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.macro_part;
        let u = &self.micro_part;
        let links: String = u.links.iter().map(|l| l.as_str()).collect();
        write!(
            f,
            "inR={};inV={};cS={};cR={};cV={};aS={};aR={};links={links}",
            m.in_r, m.in_v, m.comb_s, m.comb_r, m.comb_v, u.act_s, u.act_r
        )
    }
}

impl FromStr for Genotype {
    type Err = Error;

    /// Parses the fixed-order `key=value;...` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::UnknownName {
            kind: "genotype",
            name: format!("{s} ({msg})"),
        };
        const KEYS: [&str; 8] = ["inR", "inV", "cS", "cR", "cV", "aS", "aR", "links"];
        let fields: Vec<&str> = s.trim().split(';').collect();
        if fields.len() != KEYS.len() {
            return Err(bad("expected 8 fields"));
        }
        let mut vals = [""; 8];
        for (i, (field, key)) in fields.iter().zip(KEYS).enumerate() {
            vals[i] = field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| bad(&format!("field {} must be {key}=...", i + 1)))?;
        }
        let link_text: Vec<char> = vals[7].chars().collect();
        if link_text.len() != 6 {
            return Err(bad("links must have 6 entries"));
        }
        let mut links = [Link::Identity; 6];
        for (l, c) in links.iter_mut().zip(link_text) {
            *l = c.to_string().parse()?;
        }
        Ok(Genotype {
            macro_part: MacroGenotype {
                in_r: vals[0].parse()?,
                in_v: vals[1].parse()?,
                comb_s: vals[2].parse()?,
                comb_r: vals[3].parse()?,
                comb_v: vals[4].parse()?,
            },
            micro_part: MicroGenotype {
                act_s: vals[5].parse()?,
                act_r: vals[6].parse()?,
                links,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Macro,
    Micro,
    Full,
}

/// Every genotype of a space. The macro space pins the micro part to its
/// default (identity everywhere) and vice versa.
pub fn enumerate(space: Space) -> Box<dyn Iterator<Item = Genotype>> {
    match space {
        Space::Macro => Box::new(
            (0..MacroGenotype::COUNT)
                .map(|i| Genotype::new(MacroGenotype::from_index(i).unwrap(), MicroGenotype::default())),
        ),
        Space::Micro => Box::new(
            (0..MicroGenotype::COUNT)
                .map(|i| Genotype::new(MacroGenotype::default(), MicroGenotype::from_index(i).unwrap())),
        ),
        Space::Full => Box::new((0..Genotype::COUNT).map(|i| {
            Genotype::new(
                MacroGenotype::from_index(i / MicroGenotype::COUNT).unwrap(),
                MicroGenotype::from_index(i % MicroGenotype::COUNT).unwrap(),
            )
        })),
    }
}

pub const PRESETS: [&str; 6] = ["transe", "complex", "ptranse_add", "ptranse_mul", "chains", "rsn"];

/// Published path/triplet models expressed as genotypes.
pub fn preset(name: &str) -> Result<Genotype> {
    use Combinator::*;
    use Connection::*;
    let base = MacroGenotype::default();
    let mut micro = MicroGenotype::default();
    let macro_part = match name {
        "transe" => base,
        "complex" => MacroGenotype {
            comb_r: Hermitian,
            ..base
        },
        "ptranse_add" => MacroGenotype { in_r: HPrev, ..base },
        "ptranse_mul" => MacroGenotype {
            in_r: HPrev,
            comb_r: Mul,
            ..base
        },
        "chains" => MacroGenotype {
            in_r: OsOut,
            comb_r: Gated,
            ..base
        },
        "rsn" => {
            micro.links[4] = Link::Weight;
            micro.links[5] = Link::Weight;
            MacroGenotype {
                in_r: OsOut,
                in_v: SCur,
                comb_s: Gated,
                comb_r: Gated,
                comb_v: Add,
            }
        }
        _ => {
            return Err(Error::UnknownName {
                kind: "preset",
                name: name.to_owned(),
            })
        }
    };
    Ok(Genotype::new(macro_part, micro))
}

/// Accepts a preset name or a genotype string.
pub fn resolve_genotype(text: &str) -> Result<Genotype> {
    if PRESETS.contains(&text) {
        preset(text)
    } else {
        text.parse()
    }
}

/// Macro subspaces distinguished by how the cell carries state over steps.
///
/// * `P1`: no recurrence. `O_r` reads `s_t` or nothing and `O_v` reads
///   `s_t` or nothing, so `h_{t-1}` is never used.
/// * `P2`: `h_{t-1}` reaches `v_t` only through `O_s` (`in_v = OS`) while
///   `O_r` reads `s_t` or nothing.
/// * `P3`: relation-only recurrence. `O_r` reads `h_{t-1}` and `O_v` reads
///   nothing or `h_{t-1}`, so `s_t` is unused after the first step.
/// * `P4`: entity and relation recurrence, `O_s` feeds `O_r`.
///
/// The four sets are pairwise disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subspace {
    P1,
    P2,
    P3,
    P4,
    Full,
}

impl Subspace {
    pub const ALL: [Subspace; 5] = [
        Subspace::P1,
        Subspace::P2,
        Subspace::P3,
        Subspace::P4,
        Subspace::Full,
    ];

    pub fn admits(self, m: &MacroGenotype) -> bool {
        use Connection::*;
        let plain = |c: Connection| matches!(c, SCur | Zero);
        match self {
            Subspace::P1 => plain(m.in_r) && plain(m.in_v),
            Subspace::P2 => plain(m.in_r) && m.in_v == OsOut,
            Subspace::P3 => m.in_r == HPrev && matches!(m.in_v, Zero | HPrev),
            Subspace::P4 => m.in_r == OsOut,
            Subspace::Full => true,
        }
    }

    pub fn members(self) -> Vec<MacroGenotype> {
        (0..MacroGenotype::COUNT)
            .filter_map(MacroGenotype::from_index)
            .filter(|m| self.admits(m))
            .collect()
    }
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subspace::P1 => "P1",
            Subspace::P2 => "P2",
            Subspace::P3 => "P3",
            Subspace::P4 => "P4",
            Subspace::Full => "FULL",
        })
    }
}

impl FromStr for Subspace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subspace::ALL
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownName {
                kind: "subspace",
                name: s.to_owned(),
            })
    }
}

/// Weight names of the supernet, which can run every genotype.
pub const SUPERNET_WEIGHTS: [&str; 12] = [
    "W1", "W2", "W3", "W4", "W5", "W6", "gate_s_a", "gate_s_b", "gate_r_a", "gate_r_b", "gate_v_a",
    "gate_v_b",
];

const LINK_WEIGHTS: [&str; 6] = ["W1", "W2", "W3", "W4", "W5", "W6"];

/// Weights a stand-alone model of `g` actually uses.
pub fn required_weights(g: &Genotype) -> Vec<&'static str> {
    let m = &g.macro_part;
    let links = &g.micro_part.links;
    let mut out = Vec::new();
    let mut link = |k: usize, used: bool| {
        if used && links[k] == Link::Weight {
            out.push(LINK_WEIGHTS[k]);
        }
    };
    let os = m.uses_os();
    link(0, os);
    link(1, os);
    link(2, m.in_r != Connection::Zero);
    link(3, true);
    link(4, m.in_v != Connection::Zero);
    link(5, true);
    let gates = [
        (os && m.comb_s == Combinator::Gated, ["gate_s_a", "gate_s_b"]),
        (m.comb_r == Combinator::Gated, ["gate_r_a", "gate_r_b"]),
        (m.comb_v == Combinator::Gated, ["gate_v_a", "gate_v_b"]),
    ];
    for (used, names) in gates {
        if used {
            out.extend(names);
        }
    }
    out
}

/// Weight variables bound once per tape so all steps share them.
#[derive(Clone, Debug)]
pub struct CellWeights {
    vars: [Option<Var>; 12],
}

impl CellWeights {
    pub fn bind(tape: &mut Tape<'_>, g: &Genotype) -> Result<Self> {
        let mut vars = [None; 12];
        for name in required_weights(g) {
            let k = SUPERNET_WEIGHTS.iter().position(|n| *n == name).unwrap();
            vars[k] = Some(tape.weight(name)?);
        }
        Ok(CellWeights { vars })
    }

    fn get(&self, name: &'static str) -> Var {
        let k = SUPERNET_WEIGHTS.iter().position(|n| *n == name).unwrap();
        self.vars[k].expect("weight bound for genotype")
    }
}

fn transform(tape: &mut Tape<'_>, w: &CellWeights, k: usize, link: Link, x: Var) -> Result<Var> {
    match link {
        Link::Identity => Ok(x),
        Link::Weight => tape.matmul(x, w.get(LINK_WEIGHTS[k])),
    }
}

fn combine(tape: &mut Tape<'_>, w: &CellWeights, site: char, c: Combinator, a: Var, b: Var) -> Result<Var> {
    match c {
        Combinator::Add => tape.add(a, b),
        Combinator::Mul => tape.mul(a, b),
        Combinator::Hermitian => tape.hermitian(a, b),
        Combinator::Gated => {
            let (ga, gb) = match site {
                's' => ("gate_s_a", "gate_s_b"),
                'r' => ("gate_r_a", "gate_r_b"),
                _ => ("gate_v_a", "gate_v_b"),
            };
            tape.gated(a, b, w.get(ga), w.get(gb))
        }
    }
}

fn activate(tape: &mut Tape<'_>, a: Activation, x: Var) -> Result<Var> {
    match a {
        Activation::Identity => Ok(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// One recurrent step over a batch of rows; returns `(v_t, h_t)`.
pub fn forward_cell(
    tape: &mut Tape<'_>,
    g: &Genotype,
    w: &CellWeights,
    s_t: Var,
    r_t: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let m = &g.macro_part;
    let u = &g.micro_part;
    let (rows, cols) = tape.value(s_t).dim();
    for (op, v) in [("cell r_t", r_t), ("cell h_prev", h_prev)] {
        if tape.value(v).dim() != (rows, cols) {
            return Err(Error::Shape {
                op,
                lhs: (rows, cols),
                rhs: tape.value(v).dim(),
            });
        }
    }
    let os = if m.uses_os() {
        let a = transform(tape, w, 0, u.links[0], h_prev)?;
        let b = transform(tape, w, 1, u.links[1], s_t)?;
        let c = combine(tape, w, 's', m.comb_s, a, b)?;
        Some(activate(tape, u.act_s, c)?)
    } else {
        None
    };
    let pick = |tape: &mut Tape<'_>, c: Connection| match c {
        Connection::HPrev => h_prev,
        Connection::OsOut => os.unwrap(),
        Connection::SCur => s_t,
        Connection::Zero => tape.zeros(rows, cols),
    };
    let first_r = pick(tape, m.in_r);
    let a = if m.in_r == Connection::Zero {
        first_r
    } else {
        transform(tape, w, 2, u.links[2], first_r)?
    };
    let b = transform(tape, w, 3, u.links[3], r_t)?;
    let c = combine(tape, w, 'r', m.comb_r, a, b)?;
    let h_t = activate(tape, u.act_r, c)?;

    let first_v = pick(tape, m.in_v);
    let a = if m.in_v == Connection::Zero {
        first_v
    } else {
        transform(tape, w, 4, u.links[4], first_v)?
    };
    let b = transform(tape, w, 5, u.links[5], h_t)?;
    let v_t = combine(tape, w, 'v', m.comb_v, a, b)?;
    Ok((v_t, h_t))
}
