//! Neveu trees and the combinatorics of the correction scheme.
//!
//! A tree is stored recursively as an ordered list of subtrees, which makes
//! the three tree axioms (root present, prefix-closed, sibling-closed) hold
//! by construction. Conversions to and from explicit sets of Neveu words are
//! provided for validation, golden files and canonical ordering.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_integer::binomial;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

/// Exact rational used for the order parameters (alpha, pruning exponent).
pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("Neveu word digits must be >= 1, got {0:?}")]
    ZeroDigit(Vec<u32>),
    #[error("cannot parse Neveu word {0:?}")]
    BadWord(String),
    #[error("cannot parse tree {0:?}")]
    BadTree(String),
    #[error("tree is missing the root")]
    MissingRoot,
    #[error("node {0} has no parent in the tree")]
    NotPrefixClosed(NeveuWord),
    #[error("node {0} has a missing elder sibling")]
    NotSiblingClosed(NeveuWord),
    #[error("refinement factor n = {n} is smaller than the branching factor {branching}")]
    BranchingExceedsN { n: u32, branching: u32 },
    #[error("refinement factor must be at least 2, got {0}")]
    RefinementTooSmall(u32),
    #[error("order nu must be >= 1")]
    ZeroOrder,
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(Rational),
}

/// A node address: the finite sequence of son indices from the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeveuWord(Vec<u32>);

impl NeveuWord {
    pub fn root() -> Self {
        NeveuWord(Vec::new())
    }

    pub fn new(digits: Vec<u32>) -> Result<Self, TreeError> {
        if digits.contains(&0) {
            return Err(TreeError::ZeroDigit(digits));
        }
        Ok(NeveuWord(digits))
    }

    pub fn digits(&self) -> &[u32] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// `ui`
    pub fn child(&self, i: u32) -> Self {
        assert!(i >= 1, "son index starts at 1");
        let mut d = self.0.clone();
        d.push(i);
        NeveuWord(d)
    }

    /// `iu`
    pub fn prepend(&self, i: u32) -> Self {
        assert!(i >= 1, "son index starts at 1");
        let mut d = Vec::with_capacity(self.0.len() + 1);
        d.push(i);
        d.extend_from_slice(&self.0);
        NeveuWord(d)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(NeveuWord(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn last(&self) -> Option<u32> {
        self.0.last().copied()
    }

    /// Drop the first digit (`iu -> u`), returning the digit too.
    pub fn split_first(&self) -> Option<(u32, NeveuWord)> {
        self.0
            .split_first()
            .map(|(&h, rest)| (h, NeveuWord(rest.to_vec())))
    }
}

impl fmt::Display for NeveuWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("∅");
        }
        if self.0.iter().all(|&d| d < 10) {
            for d in &self.0 {
                write!(f, "{d}")?;
            }
        } else {
            let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
            f.write_str(&parts.join("."))?;
        }
        Ok(())
    }
}

impl FromStr for NeveuWord {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "∅" || s.is_empty() {
            return Ok(NeveuWord::root());
        }
        let bad = || TreeError::BadWord(s.to_string());
        let digits: Vec<u32> = if s.contains('.') {
            s.split('.')
                .map(|p| p.parse::<u32>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        } else {
            s.chars()
                .map(|c| c.to_digit(10).ok_or_else(bad))
                .collect::<Result<_, _>>()?
        };
        NeveuWord::new(digits)
    }
}

/// Check the tree axioms on an explicit set of words.
pub fn validate_words(words: &BTreeSet<NeveuWord>) -> Result<(), TreeError> {
    if !words.contains(&NeveuWord::root()) {
        return Err(TreeError::MissingRoot);
    }
    for w in words {
        if let Some(p) = w.parent() {
            if !words.contains(&p) {
                return Err(TreeError::NotPrefixClosed(w.clone()));
            }
            let last = w.last().unwrap_or(1);
            if (1..last).any(|i| !words.contains(&p.child(i))) {
                return Err(TreeError::NotSiblingClosed(w.clone()));
            }
        }
    }
    Ok(())
}

/// A finite ordered rooted tree in Neveu notation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Tree {
    children: Vec<Tree>,
}

impl Tree {
    /// The single-node tree `{∅}`.
    pub fn leaf() -> Self {
        Tree {
            children: Vec::new(),
        }
    }

    /// `{∅} ∪ 1T_1 ∪ ... ∪ mT_m`
    pub fn graft(children: Vec<Tree>) -> Self {
        Tree { children }
    }

    pub fn from_words<I: IntoIterator<Item = NeveuWord>>(words: I) -> Result<Self, TreeError> {
        let set: BTreeSet<NeveuWord> = words.into_iter().collect();
        validate_words(&set)?;
        Ok(Self::build(&set, &NeveuWord::root()))
    }

    fn build(set: &BTreeSet<NeveuWord>, at: &NeveuWord) -> Tree {
        let mut children = Vec::new();
        let mut i = 1;
        while set.contains(&at.child(i)) {
            children.push(Self::build(set, &at.child(i)));
            i += 1;
        }
        Tree { children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn children(&self) -> &[Tree] {
        &self.children
    }

    /// `j_∅(T)`
    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    /// `T'_i` for `1 <= i <= j_∅(T)`.
    pub fn subtree(&self, i: usize) -> Option<&Tree> {
        i.checked_sub(1).and_then(|k| self.children.get(k))
    }

    pub fn get(&self, word: &NeveuWord) -> Option<&Tree> {
        let mut node = self;
        for &d in word.digits() {
            node = node.subtree(d as usize)?;
        }
        Some(node)
    }

    pub fn contains(&self, word: &NeveuWord) -> bool {
        self.get(word).is_some()
    }

    /// `j_u(T)`; `None` if `u` is not a node.
    pub fn branching(&self, word: &NeveuWord) -> Option<usize> {
        self.get(word).map(Tree::num_children)
    }

    /// Number of nodes.
    pub fn card(&self) -> usize {
        1 + self.children.iter().map(Tree::card).sum::<usize>()
    }

    /// `|T|`: the maximal word length.
    pub fn depth(&self) -> usize {
        self.children
            .iter()
            .map(|c| 1 + c.depth())
            .max()
            .unwrap_or(0)
    }

    pub fn max_branching(&self) -> usize {
        self.children
            .iter()
            .map(Tree::max_branching)
            .chain(std::iter::once(self.children.len()))
            .max()
            .unwrap_or(0)
    }

    /// All nodes in preorder, which is the lexicographic order of words.
    pub fn words(&self) -> Vec<NeveuWord> {
        let mut out = Vec::with_capacity(self.card());
        self.walk(&NeveuWord::root(), &mut |w, _| out.push(w.clone()));
        out
    }

    /// `j_u` for every node, in preorder.
    pub fn branching_counts(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.card());
        self.walk(&NeveuWord::root(), &mut |_, t| {
            out.push(t.num_children() as u32)
        });
        out
    }

    /// `E(T)` in lexicographic order (which is also the time order of the
    /// refined intervals on any random grid built from the tree).
    pub fn leaves(&self) -> Vec<NeveuWord> {
        let mut out = Vec::new();
        self.walk(&NeveuWord::root(), &mut |w, t| {
            if t.is_leaf() {
                out.push(w.clone())
            }
        });
        out
    }

    /// `Σ_{u ∈ E(T)} |u|`
    pub fn leaf_depth_sum(&self) -> usize {
        self.leaves().iter().map(NeveuWord::depth).sum()
    }

    fn walk<F: FnMut(&NeveuWord, &Tree)>(&self, at: &NeveuWord, f: &mut F) {
        f(at, self);
        for (k, c) in self.children.iter().enumerate() {
            c.walk(&at.child(k as u32 + 1), f);
        }
    }

    /// Canonical serialization, e.g. `{∅,1,11,2}`.
    pub fn canonical(&self) -> String {
        let parts: Vec<String> = self.words().iter().map(|w| w.to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }

    /// Ordering key: the lexicographically sorted word sequence.
    pub fn order_key(&self) -> Vec<NeveuWord> {
        self.words()
    }

    /// Multi-line ASCII rendering; each node shows its word.
    pub fn render_ascii(&self) -> String {
        let mut out = String::from("∅\n");
        self.render_children(&NeveuWord::root(), "", &mut out);
        out
    }

    fn render_children(&self, at: &NeveuWord, prefix: &str, out: &mut String) {
        let k = self.children.len();
        for (idx, c) in self.children.iter().enumerate() {
            let last = idx + 1 == k;
            let w = at.child(idx as u32 + 1);
            out.push_str(prefix);
            out.push_str(if last { "└── " } else { "├── " });
            out.push_str(&w.to_string());
            out.push('\n');
            let next = format!("{prefix}{}", if last { "    " } else { "│   " });
            c.render_children(&w, &next, out);
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for Tree {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let inner = t
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| TreeError::BadTree(s.to_string()))?;
        let words = inner
            .split(',')
            .map(str::parse::<NeveuWord>)
            .collect::<Result<Vec<_>, _>>()?;
        Tree::from_words(words)
    }
}

impl Serialize for Tree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

fn check_order(nu: u32, alpha: Rational) -> Result<(), TreeError> {
    if nu == 0 {
        return Err(TreeError::ZeroOrder);
    }
    if alpha <= Rational::zero() {
        return Err(TreeError::NonPositiveAlpha(alpha));
    }
    Ok(())
}

/// `m(l, ν) = ⌈ν / ((1+α)l + α)⌉`
pub fn m_of(l: u32, nu: u32, alpha: Rational) -> i64 {
    let denom = (Rational::one() + alpha) * Rational::from(l as i64) + alpha;
    (Rational::from(nu as i64) / denom).ceil().to_integer()
}

/// `q_i(l, ν) = ν + ⌈i − (1+α)(l+1)(i−1)⌉`
pub fn q_of(i: u32, l: u32, nu: u32, alpha: Rational) -> i64 {
    let i_r = Rational::from(i as i64);
    let x =
        i_r - (Rational::one() + alpha) * Rational::from(l as i64 + 1) * (i_r - Rational::one());
    nu as i64 + x.ceil().to_integer()
}

/// The scheme tree `T^ν_l`.
pub fn scheme_tree(nu: u32, l: u32, alpha: Rational) -> Result<Tree, TreeError> {
    check_order(nu, alpha)?;
    Ok(scheme_tree_rec(nu as i64, l, alpha))
}

fn scheme_tree_rec(nu: i64, l: u32, alpha: Rational) -> Tree {
    if nu <= 0 {
        return Tree::leaf();
    }
    let m = m_of(l, nu as u32, alpha);
    let children = (1..m)
        .map(|i| scheme_tree_rec(q_of(i as u32, l, nu as u32, alpha), l + 1, alpha))
        .collect();
    Tree::graft(children)
}

/// The forest `F(T)`, sorted by [`Tree::order_key`].
pub fn forest_of(tree: &Tree) -> Vec<Tree> {
    let mut out = forest_unsorted(tree);
    out.sort_by_cached_key(Tree::order_key);
    debug_assert!(out.windows(2).all(|w| w[0] != w[1]));
    out
}

fn forest_unsorted(tree: &Tree) -> Vec<Tree> {
    let mut out = vec![Tree::leaf()];
    for i in 1..=tree.num_children() {
        let sub = forest_unsorted(&tree.children[i - 1]);
        // F^{⊗i}: every i-tuple of elements of F(T'_i)
        let mut tuples: Vec<Vec<Tree>> = vec![Vec::new()];
        for _ in 0..i {
            let mut next = Vec::with_capacity(tuples.len() * sub.len());
            for t in &tuples {
                for s in &sub {
                    let mut v = t.clone();
                    v.push(s.clone());
                    next.push(v);
                }
            }
            tuples = next;
        }
        out.extend(tuples.into_iter().map(Tree::graft));
    }
    out
}

/// `c(A) = Π_{u∈A} C(n, j_u(A))`, exact.
pub fn coefficient(tree: &Tree, n: u32) -> Result<BigUint, TreeError> {
    let counts = tree.branching_counts();
    coefficient_from_counts(&counts, n)
}

fn coefficient_from_counts(counts: &[u32], n: u32) -> Result<BigUint, TreeError> {
    let branching = counts.iter().copied().max().unwrap_or(0);
    if branching > n {
        return Err(TreeError::BranchingExceedsN { n, branching });
    }
    Ok(counts
        .iter()
        .map(|&j| binomial(BigUint::from(n), BigUint::from(j)))
        .product())
}

/// `E(A)`
pub fn leaves(tree: &Tree) -> Vec<NeveuWord> {
    tree.leaves()
}

/// Total number of elementary kernel steps over all `2^r` pruned grids,
/// `Σ_Λ (card Π_0(A_Λ) − 1) = 2^r [n + (card A − 1)(n − 1)] − r 2^{r−1} (n − 1)`.
pub fn flat_cost(tree: &Tree, n: u32) -> u64 {
    let r = tree.leaves().len() as u64;
    let card = tree.card() as u64;
    let n = n as u64;
    let full = (1u64 << r) * (n + (card - 1) * (n - 1));
    full - r * (1u64 << (r - 1)) * (n - 1)
}

/// Leading coefficient of [`flat_cost`] in `n`: `2^r card(A) − r 2^{r−1}`.
pub fn flat_cost_per_n(tree: &Tree) -> u64 {
    let r = tree.leaves().len() as u64;
    (1u64 << r) * tree.card() as u64 - r * (1u64 << (r - 1))
}

/// One element of `F(T^ν_0)` together with the data needed for weighting,
/// pruning and cost reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForestTerm {
    pub tree: Tree,
    /// `j_u(A)` in preorder; `c(A)` is the product of `C(n, j_u)`.
    pub branching: Vec<u32>,
    pub leaf_depth_sum: u32,
    pub flat_cost_per_n: u64,
}

impl ForestTerm {
    pub fn new(tree: Tree) -> Self {
        let branching = tree.branching_counts();
        let leaf_depth_sum = tree.leaf_depth_sum() as u32;
        let flat_cost_per_n = flat_cost_per_n(&tree);
        ForestTerm {
            tree,
            branching,
            leaf_depth_sum,
            flat_cost_per_n,
        }
    }

    pub fn coefficient(&self, n: u32) -> Result<BigUint, TreeError> {
        coefficient_from_counts(&self.branching, n)
    }

    /// `c(A)` rounded once to `f64`.
    pub fn weight(&self, n: u32) -> Result<f64, TreeError> {
        Ok(self.coefficient(n)?.to_f64().unwrap_or(f64::INFINITY))
    }

    pub fn flat_cost(&self, n: u32) -> u64 {
        flat_cost(&self.tree, n)
    }

    pub fn is_base(&self) -> bool {
        self.tree.is_leaf()
    }
}

#[derive(Serialize)]
struct ForestTermJson<'a> {
    tree: &'a Tree,
    coefficient_formula: &'a [u32],
    leaf_depth_sum: u32,
    flat_cost_units: u64,
}

impl Serialize for ForestTerm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ForestTermJson {
            tree: &self.tree,
            coefficient_formula: &self.branching,
            leaf_depth_sum: self.leaf_depth_sum,
            flat_cost_units: self.flat_cost_per_n,
        }
        .serialize(s)
    }
}

/// `F(T^ν_0)` as weighted terms.
pub fn scheme_forest(nu: u32, alpha: Rational) -> Result<Vec<ForestTerm>, TreeError> {
    let t = scheme_tree(nu, 0, alpha)?;
    Ok(forest_of(&t).into_iter().map(ForestTerm::new).collect())
}

/// Split a forest into the terms kept and the terms that cannot contribute at
/// order `ν` when `(a − 1) Σ_{u∈E(A)} |u| ≥ ν`.
pub fn partition_forest(
    forest: Vec<ForestTerm>,
    nu: u32,
    a: Rational,
) -> (Vec<ForestTerm>, Vec<ForestTerm>) {
    let excess = a - Rational::one();
    let nu = Rational::from(nu as i64);
    forest
        .into_iter()
        .partition(|t| excess * Rational::from(t.leaf_depth_sum as i64) < nu)
}

pub fn prune_forest(forest: Vec<ForestTerm>, nu: u32, a: Rational) -> Vec<ForestTerm> {
    partition_forest(forest, nu, a).0
}

/// `k(0, ν)`: how many derivatives of the payoff the error bound consumes.
pub fn smoothness_requirement(nu: u32, alpha: Rational, beta: u32) -> Result<u64, TreeError> {
    check_order(nu, alpha)?;
    Ok(smoothness_rec(nu as i64, 0, alpha, beta as u64))
}

fn smoothness_rec(nu: i64, l: u32, alpha: Rational, beta: u64) -> u64 {
    let m = if nu <= 0 {
        0
    } else {
        m_of(l, nu as u32, alpha)
    };
    let base = beta * m.max(0) as u64;
    (1..m)
        .map(|i| i as u64 * smoothness_rec(q_of(i as u32, l, nu as u32, alpha), l + 1, alpha, beta))
        .fold(base, u64::max)
}

/// Order parameters of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchemeOrderParams {
    pub nu: u32,
    pub alpha: Rational,
    /// Derivative loss of the kernel; only feeds [`smoothness_requirement`].
    pub beta: u32,
    pub n: u32,
}

impl SchemeOrderParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        check_order(self.nu, self.alpha)?;
        if self.n < 2 {
            return Err(TreeError::RefinementTooSmall(self.n));
        }
        let needed = (m_of(0, self.nu, self.alpha) - 1).max(0) as u32;
        if self.n < needed {
            return Err(TreeError::BranchingExceedsN {
                n: self.n,
                branching: needed,
            });
        }
        Ok(())
    }

    pub fn min_refinement(&self) -> u32 {
        (m_of(0, self.nu, self.alpha) - 1).max(2) as u32
    }
}

/// Parse `"1"`, `"3/2"` or `"0.5"`-free rationals.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().ok()?;
            let q: i64 = q.trim().parse().ok()?;
            (q != 0).then(|| Rational::new(p, q))
        }
        None => s.parse::<i64>().ok().map(Rational::from),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64) -> Rational {
        Rational::from(p)
    }

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn m_and_q_values() {
        assert_eq!(m_of(0, 4, r(1)), 4);
        assert_eq!(m_of(1, 3, r(1)), 1);
        assert_eq!(m_of(0, 6, r(1)), 6);
        for l in 0..4 {
            for nu in 1..8 {
                for a in [r(1), r(2), Rational::new(1, 2)] {
                    assert_eq!(q_of(1, l, nu, a), nu as i64 + 1);
                }
            }
        }
        assert_eq!(q_of(2, 0, 4, r(1)), 4);
        assert_eq!(q_of(3, 0, 4, r(1)), 3);
        assert_eq!(q_of(3, 0, 6, r(1)), 5);
    }

    #[test]
    fn ceiling_at_integer_boundary() {
        // alpha = 1/2, l = 1: denominator is 2
        assert_eq!(m_of(1, 4, Rational::new(1, 2)), 2);
        assert_eq!(m_of(1, 5, Rational::new(1, 2)), 3);
    }

    #[test]
    fn small_scheme_trees() {
        assert_eq!(scheme_tree(1, 0, r(1)).unwrap(), Tree::leaf());
        assert_eq!(
            scheme_tree(4, 0, r(1)).unwrap().canonical(),
            "{∅,1,11,111,2,21,3}"
        );
        assert_eq!(scheme_tree(2, 0, r(1)).unwrap().canonical(), "{∅,1}");
        assert!(scheme_tree(0, 0, r(1)).is_err());
    }

    #[test]
    fn word_roundtrip_and_axioms() {
        let w: NeveuWord = "312".parse().unwrap();
        assert_eq!(w.digits(), &[3, 1, 2]);
        assert_eq!(w.to_string(), "312");
        let big = NeveuWord::new(vec![1, 12]).unwrap();
        assert_eq!(big.to_string(), "1.12");
        assert_eq!("1.12".parse::<NeveuWord>().unwrap(), big);
        assert!(NeveuWord::new(vec![0]).is_err());

        let words =
            |v: &[&str]| -> BTreeSet<NeveuWord> { v.iter().map(|s| s.parse().unwrap()).collect() };
        assert_eq!(validate_words(&words(&["1"])), Err(TreeError::MissingRoot));
        assert!(matches!(
            validate_words(&words(&["∅", "11"])),
            Err(TreeError::NotPrefixClosed(_))
        ));
        assert!(matches!(
            validate_words(&words(&["∅", "1", "12", "2", "21"])),
            Err(TreeError::NotSiblingClosed(_))
        ));
        let example = t("{∅,1,2,3,11,12,31,311,312}");
        assert_eq!(example.canonical(), "{∅,1,11,12,2,3,31,311,312}");
        assert_eq!(example.depth(), 3);
        assert_eq!(example.branching(&"31".parse().unwrap()), Some(2));
    }

    #[test]
    fn leaves_examples() {
        assert_eq!(leaves(&Tree::leaf()), vec![NeveuWord::root()]);
        let s = |v: Vec<NeveuWord>| v.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        assert_eq!(s(leaves(&t("{∅,1,11,2}"))), vec!["11", "2"]);
        assert_eq!(s(leaves(&t("{∅,1,2,21}"))), vec!["1", "21"]);
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(coefficient(&Tree::leaf(), 7).unwrap(), BigUint::from(1u32));
        assert_eq!(coefficient(&t("{∅,1}"), 5).unwrap(), BigUint::from(5u32));
        assert_eq!(
            coefficient(&t("{∅,1,2,21}"), 5).unwrap(),
            BigUint::from(50u32)
        );
        assert!(matches!(
            coefficient(&t("{∅,1,2,3}"), 2),
            Err(TreeError::BranchingExceedsN { n: 2, branching: 3 })
        ));
    }

    #[test]
    fn forest_of_small_trees() {
        assert_eq!(forest_of(&Tree::leaf()), vec![Tree::leaf()]);
        let f: Vec<String> = forest_of(&t("{∅,1}")).iter().map(Tree::canonical).collect();
        assert_eq!(f, vec!["{∅}", "{∅,1}"]);
    }

    #[test]
    fn pruning() {
        let forest = scheme_forest(4, r(1)).unwrap();
        let (kept, dropped) = partition_forest(forest.clone(), 4, r(2));
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].tree.canonical(), "{∅,1,11,2,21}");
        assert_eq!(kept.len(), 8);
        assert_eq!(prune_forest(forest.clone(), 4, r(1)), forest);
        assert_eq!(prune_forest(forest.clone(), 4, Rational::new(3, 2)), forest);
    }

    #[test]
    fn flat_cost_examples() {
        for n in 2..10u32 {
            let n64 = n as u64;
            assert_eq!(flat_cost(&t("{∅,1}"), n), 3 * n64 - 1);
            assert_eq!(flat_cost(&t("{∅,1,2,3}"), n), 20 * n64 - 12);
            assert_eq!(flat_cost(&Tree::leaf(), n), n64 + 1);
        }
        assert_eq!(flat_cost_per_n(&t("{∅,1,11,2}")), 12);
    }

    // Hand-unrolled recursion for k(0, ν) with α = 1.
    #[test]
    fn smoothness_requirement_examples() {
        assert_eq!(smoothness_requirement(1, r(1), 4).unwrap(), 4);
        // ν=2: m(0,2)=2, q_1=3, k(1,3): m(1,3)=1 → β. k(0,2) = max(2β, 1·β) = 8
        assert_eq!(smoothness_requirement(2, r(1), 4).unwrap(), 8);
        // ν=4: m=4; q=(5,4,3) at l=1.
        //   k(1,5): m=2, q_1=6 at l=2: k(2,6): m=2, q_1=7 at l=3: k(3,7): m=1 → β
        //     k(2,6) = max(2β, β) = 2β; k(1,5) = max(2β, 2β) = 2β
        //   k(1,4): m=2, q_1=5 at l=2: k(2,5): m=1 → β; k(1,4) = max(2β, β) = 2β
        //   k(1,3): m=1 → β
        //   k(0,4) = max(4β, 1·2β, 2·2β, 3·β) = 4β = 16
        assert_eq!(smoothness_requirement(4, r(1), 4).unwrap(), 16);
    }

    #[test]
    fn order_params_validation() {
        let p = SchemeOrderParams {
            nu: 6,
            alpha: r(1),
            beta: 4,
            n: 4,
        };
        assert!(p.validate().is_err());
        let p = SchemeOrderParams { n: 5, ..p };
        assert!(p.validate().is_ok());
        let p = SchemeOrderParams { n: 1, nu: 1, ..p };
        assert_eq!(p.validate(), Err(TreeError::RefinementTooSmall(1)));
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("3/2"), Some(Rational::new(3, 2)));
        assert_eq!(parse_rational("2"), Some(r(2)));
        assert_eq!(parse_rational("x"), None);
        assert_eq!(parse_rational("1/0"), None);
    }
}
