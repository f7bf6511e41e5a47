//! Non-linear grammar support.
//!
//! A non-linear production may copy its parameters, so the derived tree can
//! be doubly exponential in the grammar size.  Equality-style questions are
//! answered by expanding the grammar into a node dag — one rank-0
//! nonterminal per distinct subtree — and running the linear pipeline on
//! the dag.  The expansion memoizes every nonterminal on the tuple of dag
//! nodes substituted for its parameters, so shared structure is expanded
//! only once; the dag may still be exponentially large, which a budget
//! keeps at desk scale.

use std::collections::HashMap;

use crate::bisim::bisim_equal;
use crate::canonize::iso_rooted;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarBuilder, NtId, RhsTree, Symbol};
use crate::slp::EqualityPolicy;
use crate::term::{Label, LabelOrder};

/// Caps for [`st_to_dag`].  The expansion is exponential in the worst
/// case; the budget makes it refuse instead of thrash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionBudget {
    /// Most dag nodes the expansion may create in total.
    pub max_nodes: usize,
    /// Most distinct parameter tuples any one nonterminal may be
    /// instantiated with.  Repeated tuples are memoized, not charged.
    pub max_instantiations: usize,
}

impl Default for ExpansionBudget {
    fn default() -> ExpansionBudget {
        ExpansionBudget { max_nodes: 1 << 20, max_instantiations: 1 << 16 }
    }
}

/// Expands a (possibly non-linear) grammar into a dag: a grammar with the
/// same value whose nonterminals all have rank 0 and derive pairwise
/// distinct trees.  Every nonterminal is expanded once per distinct tuple
/// of dag nodes substituted for its parameters, and right-hand sides are
/// hash-consed bottom-up, so equal subtrees share one node no matter where
/// they arise.
pub fn st_to_dag(g: &Grammar, budget: &ExpansionBudget) -> Result<Grammar> {
    if g.rank(g.start()) != 0 {
        return Err(Error::Grammar("start nonterminal has parameters".into()));
    }

    let mut out = GrammarBuilder::new();
    let mut cons: HashMap<(Label, Vec<NtId>), NtId> = HashMap::new();
    let mut memo: HashMap<(NtId, Vec<NtId>), NtId> = HashMap::new();
    let mut tuples = vec![0usize; g.nt_count()];

    // One frame per in-flight instantiation: the right-hand side in
    // postorder, a cursor, and the dag nodes built so far.  The frames
    // form a chain of suspended callers, so a key can never be in flight
    // twice (that would be a cyclic grammar).
    struct Frame<'g> {
        key: (NtId, Vec<NtId>),
        nodes: Vec<&'g RhsTree>,
        pos: usize,
        done: Vec<NtId>,
    }
    let open = |a: NtId, args: Vec<NtId>| Frame {
        nodes: g.rhs(a).postorder(),
        pos: 0,
        done: Vec::new(),
        key: (a, args),
    };

    tuples[g.start()] = 1;
    let mut stack = vec![open(g.start(), Vec::new())];
    loop {
        if stack.last().map_or(false, |f| f.pos == f.nodes.len()) {
            let frame = stack.pop().unwrap();
            debug_assert_eq!(frame.done.len(), 1);
            let root = frame.done[0];
            memo.insert(frame.key, root);
            match stack.last_mut() {
                Some(parent) => {
                    parent.done.push(root);
                    parent.pos += 1;
                }
                None => return out.finish(root),
            }
            continue;
        }
        let recurse = {
            let top = stack.last_mut().unwrap();
            let node = top.nodes[top.pos];
            match &node.sym {
                Symbol::Terminal(l) => {
                    let kids = top.done.split_off(top.done.len() - node.children.len());
                    let id = cons_node(&mut out, &mut cons, l.clone(), kids, budget)?;
                    top.done.push(id);
                    top.pos += 1;
                    None
                }
                Symbol::Param(i) => {
                    top.done.push(top.key.1[*i as usize]);
                    top.pos += 1;
                    None
                }
                Symbol::Nonterminal(b) => {
                    let kids = top.done.split_off(top.done.len() - node.children.len());
                    let key = (*b, kids);
                    match memo.get(&key) {
                        Some(&id) => {
                            top.done.push(id);
                            top.pos += 1;
                            None
                        }
                        None => Some(key),
                    }
                }
            }
        };
        if let Some((b, args)) = recurse {
            tuples[b] += 1;
            if tuples[b] > budget.max_instantiations {
                return Err(Error::Budget(format!(
                    "nonterminal {} needs more than {} distinct instantiations ({} dag nodes built)",
                    g.name(b),
                    budget.max_instantiations,
                    cons.len()
                )));
            }
            stack.push(open(b, args));
        }
    }
}

fn cons_node(
    out: &mut GrammarBuilder,
    cons: &mut HashMap<(Label, Vec<NtId>), NtId>,
    label: Label,
    kids: Vec<NtId>,
    budget: &ExpansionBudget,
) -> Result<NtId> {
    let key = (label, kids);
    if let Some(&id) = cons.get(&key) {
        return Ok(id);
    }
    if cons.len() >= budget.max_nodes {
        return Err(Error::Budget(format!(
            "dag node limit {} reached ({} nodes built, expansion incomplete)",
            budget.max_nodes,
            cons.len()
        )));
    }
    let id = out.declare(&format!("N{}", cons.len()), 0).expect("dag names are fresh");
    let args = key.1.iter().map(|&k| RhsTree::nt(k, Vec::new())).collect();
    out.define(id, RhsTree::term(key.0.clone(), args));
    cons.insert(key, id);
    Ok(id)
}

/// Decides whether the values of two possibly non-linear grammars are
/// isomorphic as rooted unordered trees, by expanding both into dags and
/// canonizing those.
pub fn iso_st(
    g1: &Grammar,
    g2: &Grammar,
    budget: &ExpansionBudget,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<bool> {
    let d1 = st_to_dag(g1, budget)?;
    let d2 = st_to_dag(g2, budget)?;
    iso_rooted(&d1, &d2, ord, policy)
}

/// Decides bisimulation equivalence of the values of two possibly
/// non-linear grammars, through the same dag expansion.
pub fn bisim_st(
    g1: &Grammar,
    g2: &Grammar,
    budget: &ExpansionBudget,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<bool> {
    let d1 = st_to_dag(g1, budget)?;
    let d2 = st_to_dag(g2, budget)?;
    bisim_equal(&d1, &d2, ord, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{eval, parse_grammar, size_of, tree_to_dag};
    use crate::normal::{gen_random, GenParams};
    use crate::term::{parse_term, Tree};
    use crate::BigCount;

    fn pg(s: &str) -> Grammar {
        parse_grammar(s).unwrap()
    }

    fn ev(g: &Grammar) -> Tree {
        eval(g, &BigCount::from(200_000u64)).unwrap()
    }

    fn big(n: u64) -> BigCount {
        BigCount::from(n)
    }

    fn wide() -> ExpansionBudget {
        ExpansionBudget::default()
    }

    /// `S = A0(a)`, `Ai(y) = Ai+1(Ai+1(y))`, `An(y) = f(y, y)`: a full
    /// binary tree of height `2^n`, hence `2^(2^n + 1) - 1` nodes.
    fn doubling_tower(n: usize) -> Grammar {
        let mut text = String::from("st v1\nstart S\nS = A0(a)\n");
        for i in 0..n {
            text.push_str(&format!("A{}(y) = A{}(A{}(y))\n", i, i + 1, i + 1));
        }
        text.push_str(&format!("A{}(y) = f(y, y)\n", n));
        pg(&text)
    }

    fn full(h: usize) -> Tree {
        let mut t = Tree::leaf(crate::term::Label::new("a"));
        for _ in 0..h {
            t = Tree::new(crate::term::Label::new("f"), vec![t.clone(), t]);
        }
        t
    }

    /// Same productions, different start.
    fn restart(g: &Grammar, a: NtId) -> Grammar {
        let mut b = GrammarBuilder::new();
        for id in 0..g.nt_count() {
            b.declare(g.name(id), g.rank(id)).unwrap();
        }
        for id in 0..g.nt_count() {
            b.define(id, g.rhs(id).clone());
        }
        b.finish(a).unwrap()
    }

    #[test]
    fn doubly_exponential_family_counts() {
        let want = [3u64, 7, 31, 511, 131_071];
        for (n, &w) in want.iter().enumerate() {
            let g = doubling_tower(n);
            assert_eq!(size_of(&g, g.start()), big(w), "n = {n}");
            let dag = st_to_dag(&g, &wide()).unwrap();
            assert_eq!(size_of(&dag, dag.start()), big(w), "n = {n}");
            assert!(dag.is_linear());
            assert_eq!(dag.max_rank(), 0);
            // one dag node per subtree height of the full binary tree
            assert_eq!(dag.nt_count(), (1 << n) + 1, "n = {n}");
            if w <= 200_000 {
                assert_eq!(ev(&dag), ev(&g), "n = {n}");
            }
            if n <= 2 {
                assert_eq!(ev(&g), full(1 << n));
            }
        }
    }

    #[test]
    fn expansion_matches_eval_on_linear_grammars() {
        let mut checked = 0;
        for seed in 0..40u64 {
            let g = gen_random(seed, &GenParams::default()).to_grammar();
            if size_of(&g, g.start()) > big(3_000) {
                continue;
            }
            let dag = st_to_dag(&g, &wide()).unwrap();
            assert_eq!(ev(&dag), ev(&g), "seed {seed}");
            checked += 1;
        }
        assert!(checked >= 15, "only {checked} grammars were small enough");
    }

    #[test]
    fn copying_productions_expand_correctly() {
        let g = pg("st v1\nstart S\nS = C(a, g(b))\nC(x, y) = f(x, g(y, x), y)\n");
        let dag = st_to_dag(&g, &wide()).unwrap();
        assert_eq!(ev(&dag), parse_term("f(a, g(g(b), a), g(b))").unwrap());
        assert_eq!(ev(&dag), ev(&g));
    }

    #[test]
    fn dag_nodes_derive_pairwise_distinct_trees() {
        let shared = pg("st v1\nstart S\nS = f(D(a), D(a), D(b))\nD(y) = g(y, y)\n");
        let dag = st_to_dag(&shared, &wide()).unwrap();
        // a, b, g(a,a), g(b,b), and the root
        assert_eq!(dag.nt_count(), 5);
        for g in [doubling_tower(2), shared] {
            let dag = st_to_dag(&g, &wide()).unwrap();
            let trees: Vec<Tree> = (0..dag.nt_count()).map(|a| ev(&restart(&dag, a))).collect();
            for i in 0..trees.len() {
                for j in 0..i {
                    assert_ne!(trees[i], trees[j], "dag nodes {j} and {i} coincide");
                }
            }
        }
    }

    #[test]
    fn budgets_stop_runaway_expansions() {
        let g = doubling_tower(4);
        let err = st_to_dag(&g, &ExpansionBudget { max_nodes: 10, max_instantiations: 1 << 16 })
            .unwrap_err();
        assert!(matches!(&err, Error::Budget(_)));
        assert!(err.to_string().contains("10 nodes built"), "{err}");

        let two = pg("st v1\nstart S\nS = f(D(a), D(b))\nD(y) = g(y)\n");
        assert!(st_to_dag(&two, &ExpansionBudget { max_nodes: 100, max_instantiations: 2 }).is_ok());
        let err = st_to_dag(&two, &ExpansionBudget { max_nodes: 100, max_instantiations: 1 })
            .unwrap_err();
        assert!(matches!(&err, Error::Budget(_)));

        // repeats of one tuple are memoized, not charged against the budget
        let thrice = pg("st v1\nstart S\nS = f(D(a), D(a), D(a))\nD(y) = g(y)\n");
        assert!(
            st_to_dag(&thrice, &ExpansionBudget { max_nodes: 100, max_instantiations: 1 }).is_ok()
        );

        let tiny = ExpansionBudget { max_nodes: 4, max_instantiations: 4 };
        assert!(matches!(
            iso_st(&g, &g, &tiny, LabelOrder::BaseThenRank, &EqualityPolicy::default()),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn iso_st_agrees_on_hand_cases() {
        let ord = LabelOrder::BaseThenRank;
        let pol = EqualityPolicy::default();
        let g = doubling_tower(3);
        assert!(iso_st(&g, &g, &wide(), ord, &pol).unwrap());
        // the same full binary tree of height 8, hash-consed explicitly
        assert!(iso_st(&g, &tree_to_dag(&full(8)), &wide(), ord, &pol).unwrap());
        assert!(!iso_st(&g, &tree_to_dag(&full(7)), &wide(), ord, &pol).unwrap());
        // argument order is invisible under the unordered reading
        let a = pg("st v1\nstart S\nS = f('0', '1')\n");
        let b = pg("st v1\nstart S\nS = f('1', '0')\n");
        assert!(iso_st(&a, &b, &wide(), ord, &pol).unwrap());
    }

    #[test]
    fn bisim_st_collapses_repetition() {
        let ord = LabelOrder::BaseThenRank;
        let pol = EqualityPolicy::default();
        let tri = pg("st v1\nstart S\nS = f(a, a, a)\n");
        let duo = pg("st v1\nstart S\nS = f(a, a)\n");
        assert!(bisim_st(&tri, &duo, &wide(), ord, &pol).unwrap());
        assert!(!iso_st(&tri, &duo, &wide(), ord, &pol).unwrap());
        assert!(bisim_st(&tri, &tri, &wide(), ord, &pol).unwrap());
        // copies of equal arguments collapse too
        let twice = pg("st v1\nstart S\nS = D(g(a))\nD(y) = f(y, y)\n");
        let once = pg("st v1\nstart S\nS = f(g(a))\n");
        assert!(bisim_st(&twice, &once, &wide(), ord, &pol).unwrap());
        assert!(!iso_st(&twice, &once, &wide(), ord, &pol).unwrap());
    }
}
