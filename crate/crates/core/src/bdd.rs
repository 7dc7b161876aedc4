//! Reduced ordered binary decision diagrams over a fixed variable count.
//!
//! Variables are numbered `1..=n` from the outside and ordered naturally
//! (variable 1 is the root-most). Nodes are hash-consed in an arena owned by
//! the manager and are never freed; operation results are memoised for the
//! lifetime of the manager. There are no complement edges.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::encoding::BitString;
use crate::error::{Error, Result};

type NodeId = u32;

const FALSE: NodeId = 0;
const TRUE: NodeId = 1;

static NEXT_MANAGER: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Node {
    /// 0-based variable; terminals use `variable_count`.
    var: u32,
    lo: NodeId,
    hi: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Op {
    And,
    Or,
    Not,
    Exists,
}

/// Handle to a BDD node inside one specific manager.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BddRef {
    manager: u64,
    node: NodeId,
}

impl BddRef {
    pub fn is_false(&self) -> bool {
        self.node == FALSE
    }

    pub fn is_true(&self) -> bool {
        self.node == TRUE
    }
}

pub struct BddManager {
    id: u64,
    vars: usize,
    nodes: Vec<Node>,
    unique: HashMap<Node, NodeId>,
    cache: HashMap<(Op, NodeId, NodeId), NodeId>,
}

impl std::fmt::Debug for BddManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BddManager")
            .field("variable_count", &self.vars)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl BddManager {
    pub fn new(variable_count: usize) -> Self {
        let terminal = variable_count as u32;
        let nodes = vec![
            Node {
                var: terminal,
                lo: FALSE,
                hi: FALSE,
            },
            Node {
                var: terminal,
                lo: TRUE,
                hi: TRUE,
            },
        ];
        Self {
            id: NEXT_MANAGER.fetch_add(1, Ordering::Relaxed),
            vars: variable_count,
            nodes,
            unique: HashMap::new(),
            cache: HashMap::new(),
        }
    }

    pub fn variable_count(&self) -> usize {
        self.vars
    }

    /// Number of nodes ever allocated, terminals included.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn handle(&self, node: NodeId) -> BddRef {
        BddRef { manager: self.id, node }
    }

    fn own(&self, r: BddRef) -> Result<NodeId> {
        if r.manager != self.id {
            return Err(Error::ManagerMismatch);
        }
        Ok(r.node)
    }

    fn check_var(&self, m: usize) -> Result<u32> {
        if m == 0 || m > self.vars {
            return Err(Error::VariableIndex {
                var: m,
                count: self.vars,
            });
        }
        Ok((m - 1) as u32)
    }

    pub fn mk_false(&self) -> BddRef {
        self.handle(FALSE)
    }

    pub fn mk_true(&self) -> BddRef {
        self.handle(TRUE)
    }

    /// The set of strings whose `m`-th bit (1-based) is 1.
    pub fn mk_var(&mut self, m: usize) -> Result<BddRef> {
        let v = self.check_var(m)?;
        let n = self.mk(v, FALSE, TRUE);
        Ok(self.handle(n))
    }

    /// The singleton set `{bits}`, built bottom-up.
    pub fn cube(&mut self, bits: &BitString) -> Result<BddRef> {
        if bits.len() != self.vars {
            return Err(Error::BitLength {
                expected: self.vars,
                got: bits.len(),
            });
        }
        let mut node = TRUE;
        for i in (0..self.vars).rev() {
            node = if bits.get(i) {
                self.mk(i as u32, FALSE, node)
            } else {
                self.mk(i as u32, node, FALSE)
            };
        }
        Ok(self.handle(node))
    }

    fn var_of(&self, n: NodeId) -> u32 {
        self.nodes[n as usize].var
    }

    fn mk(&mut self, var: u32, lo: NodeId, hi: NodeId) -> NodeId {
        if lo == hi {
            return lo;
        }
        let node = Node { var, lo, hi };
        if let Some(&id) = self.unique.get(&node) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(node);
        self.unique.insert(node, id);
        id
    }

    /// Cofactors of `n` with respect to variable `var` (which must be <= var(n)).
    fn cofactors(&self, n: NodeId, var: u32) -> (NodeId, NodeId) {
        let node = self.nodes[n as usize];
        if node.var == var {
            (node.lo, node.hi)
        } else {
            (n, n)
        }
    }

    fn apply(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        match op {
            Op::And => {
                if a == FALSE || b == FALSE {
                    return FALSE;
                }
                if a == TRUE || a == b {
                    return b;
                }
                if b == TRUE {
                    return a;
                }
            }
            Op::Or => {
                if a == TRUE || b == TRUE {
                    return TRUE;
                }
                if a == FALSE || a == b {
                    return b;
                }
                if b == FALSE {
                    return a;
                }
            }
            _ => unreachable!("binary apply only"),
        }
        let key = (op, a.min(b), a.max(b));
        if let Some(&r) = self.cache.get(&key) {
            return r;
        }
        let var = self.var_of(a).min(self.var_of(b));
        let (a0, a1) = self.cofactors(a, var);
        let (b0, b1) = self.cofactors(b, var);
        let lo = self.apply(op, a0, b0);
        let hi = self.apply(op, a1, b1);
        let r = self.mk(var, lo, hi);
        self.cache.insert(key, r);
        r
    }

    fn negate(&mut self, a: NodeId) -> NodeId {
        match a {
            FALSE => return TRUE,
            TRUE => return FALSE,
            _ => {}
        }
        let key = (Op::Not, a, 0);
        if let Some(&r) = self.cache.get(&key) {
            return r;
        }
        let Node { var, lo, hi } = self.nodes[a as usize];
        let lo = self.negate(lo);
        let hi = self.negate(hi);
        let r = self.mk(var, lo, hi);
        self.cache.insert(key, r);
        r
    }

    fn quantify(&mut self, a: NodeId, var: u32) -> NodeId {
        let node = self.nodes[a as usize];
        if node.var > var {
            return a;
        }
        let key = (Op::Exists, a, var);
        if let Some(&r) = self.cache.get(&key) {
            return r;
        }
        let r = if node.var == var {
            self.apply(Op::Or, node.lo, node.hi)
        } else {
            let lo = self.quantify(node.lo, var);
            let hi = self.quantify(node.hi, var);
            self.mk(node.var, lo, hi)
        };
        self.cache.insert(key, r);
        r
    }

    pub fn and(&mut self, a: BddRef, b: BddRef) -> Result<BddRef> {
        let (a, b) = (self.own(a)?, self.own(b)?);
        let r = self.apply(Op::And, a, b);
        Ok(self.handle(r))
    }

    pub fn or(&mut self, a: BddRef, b: BddRef) -> Result<BddRef> {
        let (a, b) = (self.own(a)?, self.own(b)?);
        let r = self.apply(Op::Or, a, b);
        Ok(self.handle(r))
    }

    pub fn not(&mut self, a: BddRef) -> Result<BddRef> {
        let a = self.own(a)?;
        let r = self.negate(a);
        Ok(self.handle(r))
    }

    /// `a \ b`, i.e. `and(a, not(b))`.
    pub fn setminus(&mut self, a: BddRef, b: BddRef) -> Result<BddRef> {
        let nb = self.not(b)?;
        self.and(a, nb)
    }

    /// Existential quantification of variable `m` (1-based).
    pub fn exists(&mut self, a: BddRef, m: usize) -> Result<BddRef> {
        let a = self.own(a)?;
        let v = self.check_var(m)?;
        let r = self.quantify(a, v);
        Ok(self.handle(r))
    }

    /// Membership test for a full-length string.
    pub fn contains(&self, a: BddRef, bits: &BitString) -> Result<bool> {
        let mut n = self.own(a)?;
        if bits.len() != self.vars {
            return Err(Error::BitLength {
                expected: self.vars,
                got: bits.len(),
            });
        }
        while n > TRUE {
            let node = self.nodes[n as usize];
            n = if bits.get(node.var as usize) { node.hi } else { node.lo };
        }
        Ok(n == TRUE)
    }

    /// Exact number of satisfying assignments over all variables.
    pub fn sat_count(&self, a: BddRef) -> Result<BigUint> {
        let a = self.own(a)?;
        let mut memo: HashMap<NodeId, BigUint> = HashMap::new();
        let below = self.count_from(a, &mut memo);
        Ok(below << self.var_of(a) as usize)
    }

    /// Assignments over variables `var(n)..n`.
    fn count_from(&self, n: NodeId, memo: &mut HashMap<NodeId, BigUint>) -> BigUint {
        match n {
            FALSE => return BigUint::zero(),
            TRUE => return BigUint::one(),
            _ => {}
        }
        if let Some(c) = memo.get(&n) {
            return c.clone();
        }
        let node = self.nodes[n as usize];
        let lo = self.count_from(node.lo, memo) << (self.var_of(node.lo) - node.var - 1) as usize;
        let hi = self.count_from(node.hi, memo) << (self.var_of(node.hi) - node.var - 1) as usize;
        let c = lo + hi;
        memo.insert(n, c.clone());
        c
    }

    /// The `limit` lexicographically smallest members (0 < 1, variable 1 most
    /// significant), with don't-care variables expanded.
    pub fn enumerate_sat(&self, a: BddRef, limit: usize) -> Result<Vec<BitString>> {
        let a = self.own(a)?;
        let mut out = Vec::new();
        let mut prefix = Vec::with_capacity(self.vars);
        if limit > 0 {
            self.enumerate_from(a, 0, &mut prefix, limit, &mut out);
        }
        Ok(out)
    }

    fn enumerate_from(&self, n: NodeId, pos: u32, prefix: &mut Vec<bool>, limit: usize, out: &mut Vec<BitString>) {
        if n == FALSE || out.len() >= limit {
            return;
        }
        if pos as usize == self.vars {
            out.push(BitString::new(prefix.clone()));
            return;
        }
        let node = self.nodes[n as usize];
        let (lo, hi) = if node.var == pos { (node.lo, node.hi) } else { (n, n) };
        for (bit, child) in [(false, lo), (true, hi)] {
            prefix.push(bit);
            self.enumerate_from(child, pos + 1, prefix, limit, out);
            prefix.pop();
            if out.len() >= limit {
                return;
            }
        }
    }

    /// Number of nodes reachable from `a`, terminals included.
    pub fn size(&self, a: BddRef) -> Result<usize> {
        let a = self.own(a)?;
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![a];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            if n > TRUE {
                let node = self.nodes[n as usize];
                stack.push(node.lo);
                stack.push(node.hi);
            }
        }
        Ok(seen.len())
    }

    /// Checks the structural invariants of every allocated node: no redundant
    /// node, no duplicate triple, children strictly below their parent.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (id, node) in self.nodes.iter().enumerate().skip(2) {
            if node.lo == node.hi {
                return Err(format!("node {id} has identical children"));
            }
            if !seen.insert(*node) {
                return Err(format!("node {id} duplicates another node"));
            }
            if node.var as usize >= self.vars {
                return Err(format!("node {id} has out-of-range variable"));
            }
            for child in [node.lo, node.hi] {
                if self.var_of(child) <= node.var {
                    return Err(format!("node {id} violates the variable order"));
                }
            }
            if self.unique.get(node) != Some(&(id as NodeId)) {
                return Err(format!("node {id} missing from the unique table"));
            }
        }
        Ok(())
    }

    /// Graphviz rendering: solid edges to the high child, dashed to the low.
    pub fn to_dot(&self, a: BddRef) -> Result<String> {
        let root = self.own(a)?;
        let mut out = String::from("digraph bdd {\n");
        out.push_str("  n0 [shape=box,label=\"0\"];\n  n1 [shape=box,label=\"1\"];\n");
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            if n <= TRUE || !seen.insert(n) {
                continue;
            }
            let node = self.nodes[n as usize];
            let _ = writeln!(out, "  n{n} [label=\"bv{}\"];", node.var + 1);
            let _ = writeln!(out, "  n{n} -> n{} [style=solid];", node.hi);
            let _ = writeln!(out, "  n{n} -> n{} [style=dashed];", node.lo);
            stack.push(node.lo);
            stack.push(node.hi);
        }
        out.push_str("}\n");
        Ok(out)
    }
}
