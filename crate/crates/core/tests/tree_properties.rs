use std::collections::BTreeSet;

use num_bigint::BigUint;
use proptest::prelude::*;
use randgrid::random_grids::{all_labelings, pruned_grid};
use randgrid::trees::{
    coefficient, flat_cost, forest_of, m_of, q_of, scheme_forest, scheme_tree, validate_words,
    NeveuWord, Rational, Tree,
};

fn arb_tree(max_nodes: usize) -> impl Strategy<Value = Tree> {
    // grow by attaching each new node to a uniformly chosen existing node
    prop::collection::vec(any::<prop::sample::Index>(), 0..max_nodes).prop_map(|picks| {
        let mut parents: Vec<usize> = Vec::new();
        for p in picks {
            parents.push(p.index(parents.len() + 1));
        }
        build(&parents)
    })
}

// node k+1 hangs under node parents[k]; node 0 is the root
fn build(parents: &[usize]) -> Tree {
    fn rec(node: usize, parents: &[usize]) -> Tree {
        let kids: Vec<Tree> = parents
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == node)
            .map(|(k, _)| rec(k + 1, parents))
            .collect();
        Tree::graft(kids)
    }
    rec(0, parents)
}

fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

fn ceil_div(a: i64, b: i64) -> i64 {
    assert!(b > 0);
    a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
}

fn alphas() -> Vec<Rational> {
    vec![
        Rational::new(1, 2),
        Rational::from(1),
        Rational::new(3, 2),
        Rational::from(2),
    ]
}

#[test]
fn m_and_q_against_integer_ceilings() {
    for alpha in alphas() {
        let (p, q) = (*alpha.numer(), *alpha.denom());
        for l in 0..6i64 {
            for nu in 1..15i64 {
                // ν / ((1+α)l + α) = ν q / ((q+p) l + p)
                assert_eq!(
                    m_of(l as u32, nu as u32, alpha),
                    ceil_div(nu * q, (q + p) * l + p)
                );
                for i in 1..8i64 {
                    // i − (1+α)(l+1)(i−1) = (i q − (q+p)(l+1)(i−1)) / q
                    let want = nu + ceil_div(i * q - (q + p) * (l + 1) * (i - 1), q);
                    assert_eq!(q_of(i as u32, l as u32, nu as u32, alpha), want);
                }
            }
        }
    }
}

#[test]
fn scheme_forests_are_valid_sorted_and_distinct() {
    for alpha in alphas() {
        // forests grow very fast for alpha < 1
        let top = if alpha < Rational::from(1) { 4 } else { 7 };
        for nu in 1..=top {
            let t = scheme_tree(nu, 0, alpha).unwrap();
            validate_words(&t.words().into_iter().collect()).unwrap();
            let f = forest_of(&t);
            assert_eq!(f.iter().filter(|a| a.is_leaf()).count(), 1);
            assert!(f.windows(2).all(|w| w[0].order_key() < w[1].order_key()));
            for a in &f {
                validate_words(&a.words().into_iter().collect()).unwrap();
            }
        }
    }
}

#[test]
fn branching_total_bounded_by_leaf_depths() {
    for nu in 1..=8 {
        for term in scheme_forest(nu, Rational::from(1)).unwrap() {
            let total: u32 = term.branching.iter().sum();
            assert!(total <= term.leaf_depth_sum, "{}", term.tree);
        }
    }
}

#[test]
fn forest_members_are_subtrees_of_the_scheme_tree() {
    let t = scheme_tree(6, 0, Rational::from(1)).unwrap();
    let all: BTreeSet<NeveuWord> = t.words().into_iter().collect();
    for a in forest_of(&t) {
        assert!(a.words().iter().all(|w| all.contains(w)), "{a}");
    }
}

/// `Σ_Λ (card Π_0(A_Λ) − 1)` by materializing every pruned grid.
fn enumerated_cost(a: &Tree, n: u32) -> u64 {
    let lt = all_labelings(a, n).into_iter().next().unwrap();
    let leaves = a.leaves();
    (0u32..(1 << leaves.len()))
        .map(|mask| {
            let lam: BTreeSet<NeveuWord> = leaves
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, w)| w.clone())
                .collect();
            pruned_grid(&lt, &lam, 0).unwrap().num_steps() as u64
        })
        .sum()
}

#[test]
fn flat_cost_closed_form_on_small_forest() {
    let f = forest_of(&scheme_tree(4, 0, Rational::from(1)).unwrap());
    for a in &f {
        for n in 2..=6u32 {
            if a.max_branching() as u32 > n {
                continue;
            }
            assert_eq!(flat_cost(a, n), enumerated_cost(a, n), "{a} n={n}");
        }
    }
}

proptest! {
    #[test]
    fn coefficient_is_product_of_binomials(t in arb_tree(7), n in 1u32..=10) {
        let counts = t.branching_counts();
        let maxj = counts.iter().copied().max().unwrap_or(0);
        match coefficient(&t, n) {
            Ok(c) => {
                prop_assert!(maxj <= n);
                let want: u128 = counts.iter().map(|&j| binom(n as u64, j as u64)).product();
                prop_assert_eq!(c, BigUint::from(want));
            }
            Err(_) => prop_assert!(maxj > n),
        }
    }

    #[test]
    fn canonical_form_roundtrips(t in arb_tree(10)) {
        let s = t.canonical();
        let back: Tree = s.parse().unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.card(), t.words().len());
        prop_assert!(validate_words(&t.words().into_iter().collect()).is_ok());
    }

    #[test]
    fn flat_cost_closed_form_on_random_trees(t in arb_tree(4), n in 2u32..=6) {
        prop_assume!(t.max_branching() as u32 <= n);
        prop_assert_eq!(flat_cost(&t, n), enumerated_cost(&t, n));
    }
}
