//! Brute-force oracles and seeded instance generators shared by the
//! integration tests. Nothing here calls the code under test except to build
//! inputs.

#![allow(dead_code)]

use std::collections::BTreeSet;

use cornerscope::bdd::{BddManager, BddRef};
use cornerscope::encoding::BitString;
use cornerscope::monitor::{build_monitor, BoxedMonitor, MonitorBox};
use cornerscope::neuralnet::{Activation, Layer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Assignment `i` of `n` variables; variable 1 is the most significant bit,
/// so index order is lexicographic order.
pub fn assignment(i: usize, n: usize) -> BitString {
    BitString::new((0..n).map(|m| (i >> (n - 1 - m)) & 1 == 1).collect())
}

pub fn index_of(bits: &BitString) -> usize {
    bits.bits().iter().fold(0, |acc, b| (acc << 1) | usize::from(*b))
}

/// A set of assignments as an explicit truth table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub n: usize,
    pub rows: Vec<bool>,
}

impl Table {
    pub fn random(n: usize, density: f64, r: &mut impl Rng) -> Self {
        Self {
            n,
            rows: (0..1usize << n).map(|_| r.gen_bool(density)).collect(),
        }
    }

    pub fn from_strings(n: usize, strings: &BTreeSet<BitString>) -> Self {
        let mut rows = vec![false; 1 << n];
        for s in strings {
            rows[index_of(s)] = true;
        }
        Self { n, rows }
    }

    pub fn members(&self) -> Vec<BitString> {
        (0..self.rows.len())
            .filter(|i| self.rows[*i])
            .map(|i| assignment(i, self.n))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.rows.iter().filter(|b| **b).count()
    }

    pub fn zip(&self, other: &Table, f: impl Fn(bool, bool) -> bool) -> Table {
        Table {
            n: self.n,
            rows: self.rows.iter().zip(&other.rows).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn not(&self) -> Table {
        Table {
            n: self.n,
            rows: self.rows.iter().map(|a| !a).collect(),
        }
    }

    /// `exists v_m`: an assignment is in the result iff it or its flip in
    /// variable `m` is in the set.
    pub fn exists(&self, m: usize) -> Table {
        let bit = 1 << (self.n - m);
        Table {
            n: self.n,
            rows: (0..self.rows.len())
                .map(|i| self.rows[i] || self.rows[i ^ bit])
                .collect(),
        }
    }

    /// Every assignment within Hamming distance `d` of a member.
    pub fn hamming_ball(&self, d: usize) -> Table {
        let members: Vec<usize> = (0..self.rows.len()).filter(|i| self.rows[*i]).collect();
        Table {
            n: self.n,
            rows: (0..self.rows.len())
                .map(|i| members.iter().any(|j| ((i ^ j).count_ones() as usize) <= d))
                .collect(),
        }
    }

    pub fn to_bdd(&self, mgr: &mut BddManager) -> BddRef {
        let mut acc = mgr.mk_false();
        for s in self.members() {
            let c = mgr.cube(&s).unwrap();
            acc = mgr.or(acc, c).unwrap();
        }
        acc
    }

    /// Reads back a BDD by membership queries on every assignment.
    pub fn of_bdd(n: usize, mgr: &BddManager, a: BddRef) -> Table {
        Table {
            n,
            rows: (0..1usize << n)
                .map(|i| mgr.contains(a, &assignment(i, n)).unwrap())
                .collect(),
        }
    }
}

/// Independent block-level encoding of one coordinate: the lower corner wins
/// over everything, then the upper corner, then the middle interval found by
/// direct division.
pub fn oracle_level(a: f64, b: f64, delta: f64, phi: usize, v: f64) -> usize {
    if a == b {
        return 0;
    }
    if v <= a + delta {
        0
    } else if v >= b - delta {
        phi
    } else {
        let width = (b - a - 2.0 * delta) / (phi - 1) as f64;
        (((v - a - delta) / width).floor() as usize + 1).min(phi - 1)
    }
}

pub fn staircase(level: usize, phi: usize) -> Vec<bool> {
    (0..phi).map(|i| i >= phi - level).collect()
}

pub fn oracle_encode(bx: &MonitorBox, phi: usize, v: &[f64]) -> BitString {
    BitString::new(
        (0..bx.dim())
            .flat_map(|j| staircase(oracle_level(bx.lower()[j], bx.upper()[j], bx.delta[j], phi, v[j]), phi))
            .collect(),
    )
}

/// Every `phi`-block corner string of a `dims`-dimensional box, lexicographic.
pub fn all_corner_strings(phi: usize, dims: usize) -> Vec<BitString> {
    (0..1usize << dims)
        .map(|mask| {
            let sides: Vec<bool> = (0..dims).map(|j| (mask >> (dims - 1 - j)) & 1 == 1).collect();
            BitString::corner(&sides, phi)
        })
        .collect()
}

/// Explicit enumerate-and-filter version of the per-box prioritization:
/// corners (lower block only on zero-width dimensions) that no training
/// feature encodes to and that are farther than `delta_h` from all of them.
pub fn oracle_prioritize(
    features: &[Vec<f64>],
    bx: &MonitorBox,
    phi: usize,
    delta_h: usize,
    cap: usize,
) -> Vec<BitString> {
    let encodings: Vec<BitString> = features.iter().map(|f| oracle_encode(bx, phi, f)).collect();
    let degenerate: Vec<usize> = (0..bx.dim()).filter(|j| bx.lower()[*j] == bx.upper()[*j]).collect();
    all_corner_strings(phi, bx.dim())
        .into_iter()
        .filter(|c| degenerate.iter().all(|j| !c.get(j * phi)))
        .filter(|c| encodings.iter().all(|e| e.hamming(c) > delta_h))
        .take(cap)
        .collect()
}

/// Random clustered feature vectors; some coordinates are repeated exactly
/// so boxes sometimes have zero-width dimensions, and some points are pushed
/// to the cloud's extremes so that corners are sometimes supported.
pub fn random_features(r: &mut impl Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let flat: Vec<bool> = (0..dims).map(|_| r.gen_bool(0.1)).collect();
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dims)
                .map(|j| if flat[j] { 1.5 } else { r.gen_range(-2.0..3.0) })
                .collect()
        })
        .collect();
    for p in pts.iter_mut() {
        if r.gen_bool(0.3) {
            for (j, v) in p.iter_mut().enumerate() {
                if !flat[j] {
                    *v = if r.gen_bool(0.5) { -2.0 } else { 3.0 };
                }
            }
        }
    }
    pts
}

pub fn random_monitor(r: &mut impl Rng, n: usize, dims: usize, k: usize, phi: usize) -> (BoxedMonitor, Vec<Vec<f64>>) {
    loop {
        let pts = random_features(r, n, dims);
        let fraction = r.gen_range(0.0..0.45);
        if let Ok(mon) = build_monitor(&pts, k, 1, fraction, phi, r.gen()) {
            return (mon, pts);
        }
    }
}

pub fn random_network(r: &mut impl Rng, dims: &[usize]) -> Network {
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() {
                Activation::Softmax
            } else {
                Activation::Relu
            };
            let weights = (0..w[0])
                .map(|_| (0..w[1]).map(|_| r.gen_range(-1.0..1.0)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| r.gen_range(-0.5..0.5)).collect();
            Layer::new(weights, bias, act).unwrap()
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

/// Plain nested-loop forward pass returning every layer's pre-activation
/// and output.
#[allow(clippy::needless_range_loop)]
pub fn oracle_forward(net: &Network, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pre = Vec::new();
    let mut post = vec![x.to_vec()];
    for layer in net.layers() {
        let input = post.last().unwrap();
        let rows = layer.weight_rows();
        let mut z = Vec::new();
        for c in 0..layer.out_dim() {
            let mut s = layer.bias()[c];
            for (r, xr) in input.iter().enumerate() {
                s += xr * rows[r][c];
            }
            z.push(s);
        }
        let a = match layer.activation() {
            Activation::Relu => z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
            Activation::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        };
        pre.push(z);
        post.push(a);
    }
    (pre, post)
}

/// Smallest |pre-activation| over hidden relu units; finite differences are
/// only trusted away from kinks.
pub fn kink_margin(net: &Network, x: &[f64]) -> f64 {
    let (pre, _) = oracle_forward(net, x);
    pre[..pre.len() - 1]
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

pub fn oracle_cross_entropy(probs: &[f64], y: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(y)
        .filter(|(_, t)| **t > 0.0)
        .map(|(p, t)| t * p.ln())
        .sum::<f64>()
}

pub fn oracle_corner_loss(net: &Network, l: usize, x: &[f64], y: &[f64], p_c: &[f64], lambda: f64) -> f64 {
    let (_, post) = oracle_forward(net, x);
    let dist = post[l]
        .iter()
        .zip(p_c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    -lambda * oracle_cross_entropy(post.last().unwrap(), y) + dist
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Random Boolean formula over variables `1..=n`.
#[derive(Clone, Debug)]
pub enum Expr {
    Const(bool),
    Var(usize),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn random(r: &mut impl Rng, n: usize, depth: usize) -> Expr {
        if depth == 0 || r.gen_bool(0.2) {
            return if r.gen_bool(0.05) {
                Expr::Const(r.gen())
            } else {
                Expr::Var(r.gen_range(1..=n))
            };
        }
        match r.gen_range(0..3) {
            0 => Expr::Not(Box::new(Expr::random(r, n, depth - 1))),
            1 => Expr::And(
                Box::new(Expr::random(r, n, depth - 1)),
                Box::new(Expr::random(r, n, depth - 1)),
            ),
            _ => Expr::Or(
                Box::new(Expr::random(r, n, depth - 1)),
                Box::new(Expr::random(r, n, depth - 1)),
            ),
        }
    }

    pub fn eval(&self, bits: &BitString) -> bool {
        match self {
            Expr::Const(b) => *b,
            Expr::Var(m) => bits.get(m - 1),
            Expr::Not(e) => !e.eval(bits),
            Expr::And(a, b) => a.eval(bits) && b.eval(bits),
            Expr::Or(a, b) => a.eval(bits) || b.eval(bits),
        }
    }

    pub fn table(&self, n: usize) -> Table {
        Table {
            n,
            rows: (0..1usize << n).map(|i| self.eval(&assignment(i, n))).collect(),
        }
    }

    pub fn to_bdd(&self, mgr: &mut BddManager) -> BddRef {
        match self {
            Expr::Const(true) => mgr.mk_true(),
            Expr::Const(false) => mgr.mk_false(),
            Expr::Var(m) => mgr.mk_var(*m).unwrap(),
            Expr::Not(e) => {
                let a = e.to_bdd(mgr);
                mgr.not(a).unwrap()
            }
            Expr::And(a, b) => {
                let (a, b) = (a.to_bdd(mgr), b.to_bdd(mgr));
                mgr.and(a, b).unwrap()
            }
            Expr::Or(a, b) => {
                let (a, b) = (a.to_bdd(mgr), b.to_bdd(mgr));
                mgr.or(a, b).unwrap()
            }
        }
    }
}
