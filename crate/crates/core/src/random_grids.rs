//! Labeled random trees and the time grids they induce.
//!
//! Grid times are kept as integer tick counts in units of the finest step
//! `h_{l+D} = T / n^{l+D}`, so every grid identity is checked exactly.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::trees::{NeveuWord, Tree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("cannot draw {r} distinct indices out of {n}")]
    TooManyDraws { r: usize, n: u32 },
    #[error("insertion draw {xi} out of range for step {step} with n = {n}")]
    DrawOutOfRange { xi: u32, step: usize, n: u32 },
    #[error("node {0} is not in the tree")]
    UnknownNode(NeveuWord),
    #[error("{0} is not a leaf of the tree")]
    NotALeaf(NeveuWord),
    #[error("labels at node {0} are invalid")]
    BadLabel(NeveuWord),
}

/// Pure form of the insertion sampler.
///
/// `xis[k]` must lie in `0..=n-(k+1)`. Step `k` inserts the `xis[k]`-th
/// index not yet taken, so each sorted outcome is produced by exactly `r!`
/// input sequences.
pub fn order_stats_from_draws(xis: &[u32], n: u32) -> Result<Vec<u32>, GridError> {
    let r = xis.len();
    if r > n as usize {
        return Err(GridError::TooManyDraws { r, n });
    }
    let mut taken: Vec<u32> = Vec::with_capacity(r);
    for (k, &xi) in xis.iter().enumerate() {
        if xi > n - (k as u32 + 1) {
            return Err(GridError::DrawOutOfRange { xi, step: k + 1, n });
        }
        let shift = taken
            .iter()
            .enumerate()
            .filter(|&(i, &t)| xi + i as u32 >= t)
            .count() as u32;
        let pos = taken.partition_point(|&t| t < xi + shift);
        taken.insert(pos, xi + shift);
    }
    Ok(taken)
}

/// Uniform draw of `0 <= k_1 < ... < k_r < n`.
pub fn sample_order_stats<R: Rng + ?Sized>(
    r: usize,
    n: u32,
    rng: &mut R,
) -> Result<Vec<u32>, GridError> {
    if r > n as usize {
        return Err(GridError::TooManyDraws { r, n });
    }
    let xis: Vec<u32> = (0..r)
        .map(|k| rng.random_range(0..=n - (k as u32 + 1)))
        .collect();
    order_stats_from_draws(&xis, n)
}

/// A tree whose internal nodes carry order statistics `κ(u)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledTree {
    n: u32,
    kappa: Vec<u32>,
    children: Vec<LabeledTree>,
}

impl LabeledTree {
    /// Attach explicit labels; every internal node must be present in `kappa`.
    pub fn new(
        tree: &Tree,
        n: u32,
        kappa: &BTreeMap<NeveuWord, Vec<u32>>,
    ) -> Result<Self, GridError> {
        Self::build(tree, n, &NeveuWord::root(), kappa)
    }

    fn build(
        tree: &Tree,
        n: u32,
        at: &NeveuWord,
        kappa: &BTreeMap<NeveuWord, Vec<u32>>,
    ) -> Result<Self, GridError> {
        let r = tree.num_children();
        let labels = if r == 0 {
            Vec::new()
        } else {
            let k = kappa
                .get(at)
                .ok_or_else(|| GridError::BadLabel(at.clone()))?;
            let increasing = k.windows(2).all(|w| w[0] < w[1]);
            if k.len() != r || !increasing || k.last().is_some_and(|&v| v >= n) {
                return Err(GridError::BadLabel(at.clone()));
            }
            k.clone()
        };
        let children = tree
            .children()
            .iter()
            .enumerate()
            .map(|(i, c)| Self::build(c, n, &at.child(i as u32 + 1), kappa))
            .collect::<Result<_, _>>()?;
        Ok(LabeledTree {
            n,
            kappa: labels,
            children,
        })
    }

    /// Labels given in preorder of the internal nodes.
    pub fn from_preorder(tree: &Tree, n: u32, labels: &[Vec<u32>]) -> Result<Self, GridError> {
        let mut it = labels.iter();
        let out = Self::take_preorder(tree, n, &NeveuWord::root(), &mut it)?;
        if it.next().is_some() {
            return Err(GridError::BadLabel(NeveuWord::root()));
        }
        Ok(out)
    }

    fn take_preorder<'a, I: Iterator<Item = &'a Vec<u32>>>(
        tree: &Tree,
        n: u32,
        at: &NeveuWord,
        it: &mut I,
    ) -> Result<Self, GridError> {
        let kappa = if tree.is_leaf() {
            Vec::new()
        } else {
            it.next()
                .ok_or_else(|| GridError::BadLabel(at.clone()))?
                .clone()
        };
        let increasing = kappa.windows(2).all(|w| w[0] < w[1]);
        if kappa.len() != tree.num_children()
            || !increasing
            || kappa.last().is_some_and(|&v| v >= n)
        {
            return Err(GridError::BadLabel(at.clone()));
        }
        let children = tree
            .children()
            .iter()
            .enumerate()
            .map(|(i, c)| Self::take_preorder(c, n, &at.child(i as u32 + 1), it))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabeledTree { n, kappa, children })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn kappa(&self) -> &[u32] {
        &self.kappa
    }

    pub fn children(&self) -> &[LabeledTree] {
        &self.children
    }

    pub fn tree(&self) -> Tree {
        Tree::graft(self.children.iter().map(LabeledTree::tree).collect())
    }

    pub fn get(&self, word: &NeveuWord) -> Option<&LabeledTree> {
        let mut node = self;
        for &d in word.digits() {
            node = node.children.get(d as usize - 1)?;
        }
        Some(node)
    }

    /// Labels of internal nodes in preorder.
    pub fn preorder_labels(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels(&self, out: &mut Vec<Vec<u32>>) {
        if !self.children.is_empty() {
            out.push(self.kappa.clone());
        }
        for c in &self.children {
            c.collect_labels(out);
        }
    }
}

/// Independent order statistics at every internal node.
pub fn label_tree<R: Rng + ?Sized>(
    tree: &Tree,
    n: u32,
    rng: &mut R,
) -> Result<LabeledTree, GridError> {
    let kappa = if tree.is_leaf() {
        Vec::new()
    } else {
        sample_order_stats(tree.num_children(), n, rng)?
    };
    let children = tree
        .children()
        .iter()
        .map(|c| label_tree(c, n, rng))
        .collect::<Result<_, _>>()?;
    Ok(LabeledTree { n, kappa, children })
}

/// Every labeling of `tree`; there are `c(A)` of them.
pub fn all_labelings(tree: &Tree, n: u32) -> Vec<LabeledTree> {
    let mut per_child: Vec<Vec<LabeledTree>> = Vec::new();
    for c in tree.children() {
        per_child.push(all_labelings(c, n));
    }
    let roots: Vec<Vec<u32>> = if tree.is_leaf() {
        vec![Vec::new()]
    } else {
        combinations(n, tree.num_children())
    };
    let mut out = Vec::new();
    for kappa in roots {
        let mut partial: Vec<Vec<LabeledTree>> = vec![Vec::new()];
        for options in &per_child {
            let mut next = Vec::with_capacity(partial.len() * options.len());
            for p in &partial {
                for o in options {
                    let mut v = p.clone();
                    v.push(o.clone());
                    next.push(v);
                }
            }
            partial = next;
        }
        for children in partial {
            out.push(LabeledTree {
                n,
                kappa: kappa.clone(),
                children,
            });
        }
    }
    out
}

/// All increasing `r`-tuples from `0..n`, in lexicographic order.
pub fn combinations(n: u32, r: usize) -> Vec<Vec<u32>> {
    fn go(start: u32, n: u32, r: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            go(v + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, r, &mut Vec::new(), &mut out);
    out
}

/// `t_l(u)` as an exact multiple of `T`.
pub fn birth_time(lt: &LabeledTree, u: &NeveuWord, l: u32) -> Result<Ratio<i128>, GridError> {
    let n = lt.n as i128;
    let mut node = lt;
    let mut t = Ratio::from_integer(0i128);
    let mut scale = Ratio::from_integer(n.pow(l));
    for &d in u.digits() {
        let idx = d as usize - 1;
        if idx >= node.children.len() {
            return Err(GridError::UnknownNode(u.clone()));
        }
        scale *= n;
        t += Ratio::new(node.kappa[idx] as i128, 1) / scale;
        node = &node.children[idx];
    }
    Ok(t)
}

/// A discretization of `[0, h_l]` stored as ticks of `h_{l+finest}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    n: u32,
    level: u32,
    finest: u32,
    ticks: Vec<u128>,
}

impl Grid {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Exponent `D` such that ticks count multiples of `h_{l+D}`.
    pub fn finest(&self) -> u32 {
        self.finest
    }

    pub fn ticks(&self) -> &[u128] {
        &self.ticks
    }

    pub fn num_steps(&self) -> usize {
        self.ticks.len() - 1
    }

    /// Exact times as multiples of `T`.
    pub fn times(&self) -> Vec<Ratio<u128>> {
        let denom = (self.n as u128).pow(self.level + self.finest);
        self.ticks.iter().map(|&k| Ratio::new(k, denom)).collect()
    }

    /// `p_k` with `s_k − s_{k−1} = h_{l+p_k}`; `None` if some increment is
    /// not an exact power step.
    pub fn step_levels(&self) -> Option<Vec<u32>> {
        self.ticks
            .windows(2)
            .map(|w| {
                let mut d = w[1] - w[0];
                let mut p = self.finest;
                while d > 1 {
                    if d % self.n as u128 != 0 || p == 0 {
                        return None;
                    }
                    d /= self.n as u128;
                    p -= 1;
                }
                (d == 1).then_some(p)
            })
            .collect()
    }

    /// Re-express ticks in units of `h_{l+finest}` for a finer exponent.
    pub fn refined_to(&self, finest: u32) -> Grid {
        assert!(finest >= self.finest);
        let f = (self.n as u128).pow(finest - self.finest);
        Grid {
            n: self.n,
            level: self.level,
            finest,
            ticks: self.ticks.iter().map(|&k| k * f).collect(),
        }
    }

    pub fn is_subgrid_of(&self, other: &Grid) -> bool {
        let d = self.finest.max(other.finest);
        let a = self.refined_to(d);
        let b: BTreeSet<u128> = other.refined_to(d).ticks.into_iter().collect();
        a.ticks.iter().all(|t| b.contains(t))
    }

    /// Times rendered as reduced `k/n^p·T` strings.
    pub fn time_strings(&self) -> Vec<String> {
        let n = self.n as u128;
        self.ticks
            .iter()
            .map(|&k| {
                let (mut k, mut p) = (k, self.level + self.finest);
                if k == 0 {
                    return "0".to_string();
                }
                while p > 0 && k % n == 0 {
                    k /= n;
                    p -= 1;
                }
                match (k, p) {
                    (1, 0) => "T".to_string(),
                    (_, 0) => format!("{k}·T"),
                    _ => format!("{k}/{n}^{p}·T"),
                }
            })
            .collect()
    }
}

#[derive(Serialize)]
struct GridJson {
    n: u32,
    level: u32,
    times: Vec<String>,
    step_levels: Option<Vec<u32>>,
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GridJson {
            n: self.n,
            level: self.level,
            times: self.time_strings(),
            step_levels: self.step_levels(),
        }
        .serialize(s)
    }
}

fn finest_for(lt: &LabeledTree) -> u32 {
    lt.tree().depth() as u32 + 1
}

/// `G_l(A)` by the recursive refinement rule.
pub fn grid(lt: &LabeledTree, l: u32) -> Grid {
    pruned_grid_unchecked(lt, &BTreeSet::new(), l)
}

/// `G_l(A)` as the union of uniform grids started at every birth time.
pub fn grid_by_union(lt: &LabeledTree, l: u32) -> Grid {
    let finest = finest_for(lt);
    let n = lt.n as u128;
    let tree = lt.tree();
    let mut set = BTreeSet::new();
    for u in tree.words() {
        let t = birth_time(lt, &u, 0).expect("word taken from the tree");
        // level-independent: t_l(u) / h_l equals t_0(u) / T
        let unit = n.pow(finest);
        let start = (t * Ratio::from_integer(unit as i128)).to_integer() as u128;
        let step = n.pow(finest - u.depth() as u32 - 1);
        for k in 0..=lt.n as u128 {
            set.insert(start + k * step);
        }
    }
    Grid {
        n: lt.n,
        level: l,
        finest,
        ticks: set.into_iter().collect(),
    }
}

/// `G_l(A_Λ)`: leaves in `lambda` keep a single coarse step.
pub fn pruned_grid(
    lt: &LabeledTree,
    lambda: &BTreeSet<NeveuWord>,
    l: u32,
) -> Result<Grid, GridError> {
    for w in lambda {
        match lt.get(w) {
            None => return Err(GridError::UnknownNode(w.clone())),
            Some(node) if !node.children.is_empty() => return Err(GridError::NotALeaf(w.clone())),
            Some(_) => {}
        }
    }
    Ok(pruned_grid_unchecked(lt, lambda, l))
}

fn pruned_grid_unchecked(lt: &LabeledTree, lambda: &BTreeSet<NeveuWord>, l: u32) -> Grid {
    let finest = finest_for(lt);
    let mut set = BTreeSet::new();
    let span = (lt.n as u128).pow(finest);
    collect_pruned(lt, lambda, &NeveuWord::root(), 0, span, &mut set);
    Grid {
        n: lt.n,
        level: l,
        finest,
        ticks: set.into_iter().collect(),
    }
}

fn collect_pruned(
    node: &LabeledTree,
    lambda: &BTreeSet<NeveuWord>,
    at: &NeveuWord,
    offset: u128,
    span: u128,
    out: &mut BTreeSet<u128>,
) {
    if node.children.is_empty() && lambda.contains(at) {
        out.insert(offset);
        out.insert(offset + span);
        return;
    }
    let sub = span / node.n as u128;
    for q in 0..=node.n as u128 {
        out.insert(offset + q * sub);
    }
    for (i, c) in node.children.iter().enumerate() {
        let start = offset + node.kappa[i] as u128 * sub;
        collect_pruned(c, lambda, &at.child(i as u32 + 1), start, sub, out);
    }
}
