//! The four-type normal form and everything computed directly on it:
//! exact per-nonterminal tree statistics, value deduplication, and random
//! generation.
//!
//! Every production of a [`NormalGrammar`] is one of
//!
//! 1. `A → σ(A1,…,Ak)`
//! 2. `A → B(C)`
//! 3. `A(y) → σ(A1,…,Ai, y, A(i+1),…,Ak)`
//! 4. `A(y) → B(C(y))`
//!
//! so all ranks are ≤ 1 and every rank-1 value is a chain of elementary
//! contexts.  The compressed algorithms (dflr string programs, canonization,
//! center finding, bisimulation) all work on this shape.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grammar::{topo_bottom_up, Grammar, GrammarBuilder, NtId, RhsTree, Symbol};
use crate::slp::EqualityPolicy;
use crate::term::{Label, SUBDIVISION_LABEL};
use crate::{BigCount, Error, Result};

/// One production in normal form.  The type tag is the variant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NormalProd {
    /// `A → σ(A1,…,Ak)`, all arguments rank 0; `k = 0` is a leaf.
    Type1 { label: Label, args: Vec<NtId> },
    /// `A → B(C)` with `B` rank 1, `C` rank 0.
    Type2 { outer: NtId, inner: NtId },
    /// `A(y) → σ(A1,…,Ai, y, A(i+1),…,Ak)`, arguments rank 0.
    Type3 { label: Label, before: Vec<NtId>, after: Vec<NtId> },
    /// `A(y) → B(C(y))` with `B`, `C` rank 1.
    Type4 { outer: NtId, inner: NtId },
}

impl NormalProd {
    pub fn rank(&self) -> u32 {
        match self {
            NormalProd::Type1 { .. } | NormalProd::Type2 { .. } => 0,
            NormalProd::Type3 { .. } | NormalProd::Type4 { .. } => 1,
        }
    }
}

/// A grammar in normal form.  Like [`Grammar`], immutable and validated:
/// deterministic, acyclic, rank-consistent, nothing unreachable from start.
#[derive(Clone)]
pub struct NormalGrammar {
    names: Vec<String>,
    by_name: HashMap<String, NtId>,
    prods: Vec<NormalProd>,
    start: NtId,
    topo: Vec<NtId>,
}

impl NormalGrammar {
    pub(crate) fn from_parts(
        names: Vec<String>,
        prods: Vec<NormalProd>,
        start: NtId,
    ) -> Result<NormalGrammar> {
        let n = names.len();
        assert_eq!(prods.len(), n, "one production per nonterminal");
        assert!(start < n, "start nonterminal out of range");
        let mut deps: Vec<Vec<NtId>> = vec![Vec::new(); n];
        for (a, p) in prods.iter().enumerate() {
            let need = |b: NtId, want: u32| -> Result<NtId> {
                assert!(b < n, "nonterminal id out of range");
                if prods[b].rank() != want {
                    return Err(Error::Grammar(format!(
                        "nonterminal {} has rank {} where rank {} is required (in {})",
                        names[b],
                        prods[b].rank(),
                        want,
                        names[a]
                    )));
                }
                Ok(b)
            };
            match p {
                NormalProd::Type1 { args, .. } => {
                    for &b in args {
                        deps[a].push(need(b, 0)?);
                    }
                }
                NormalProd::Type2 { outer, inner } => {
                    deps[a].push(need(*outer, 1)?);
                    deps[a].push(need(*inner, 0)?);
                }
                NormalProd::Type3 { before, after, .. } => {
                    for &b in before.iter().chain(after) {
                        deps[a].push(need(b, 0)?);
                    }
                }
                NormalProd::Type4 { outer, inner } => {
                    deps[a].push(need(*outer, 1)?);
                    deps[a].push(need(*inner, 1)?);
                }
            }
        }
        let topo_full = topo_bottom_up(&deps, &names)?;

        let mut reach = vec![false; n];
        let mut queue = VecDeque::from([start]);
        reach[start] = true;
        while let Some(a) = queue.pop_front() {
            for &b in &deps[a] {
                if !reach[b] {
                    reach[b] = true;
                    queue.push_back(b);
                }
            }
        }
        let (names, prods, start, topo) = if reach.iter().all(|&r| r) {
            (names, prods, start, topo_full)
        } else {
            let mut map = vec![usize::MAX; n];
            let mut new_names = Vec::new();
            let mut new_prods = Vec::new();
            for (old, p) in prods.into_iter().enumerate() {
                if reach[old] {
                    map[old] = new_names.len();
                    new_names.push(names[old].clone());
                    new_prods.push(p);
                }
            }
            for p in &mut new_prods {
                match p {
                    NormalProd::Type1 { args, .. } => args.iter_mut().for_each(|b| *b = map[*b]),
                    NormalProd::Type3 { before, after, .. } => {
                        before.iter_mut().chain(after.iter_mut()).for_each(|b| *b = map[*b])
                    }
                    NormalProd::Type2 { outer, inner } | NormalProd::Type4 { outer, inner } => {
                        *outer = map[*outer];
                        *inner = map[*inner];
                    }
                }
            }
            let topo = topo_full.into_iter().filter(|&a| reach[a]).map(|a| map[a]).collect();
            (new_names, new_prods, map[start], topo)
        };
        let by_name = names.iter().cloned().zip(0..).collect();
        Ok(NormalGrammar { names, by_name, prods, start, topo })
    }

    pub fn nt_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: NtId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nt(&self, name: &str) -> Option<NtId> {
        self.by_name.get(name).copied()
    }

    pub fn prod(&self, id: NtId) -> &NormalProd {
        &self.prods[id]
    }

    pub fn prods(&self) -> &[NormalProd] {
        &self.prods
    }

    pub fn rank(&self, id: NtId) -> u32 {
        self.prods[id].rank()
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    /// Nonterminals ordered callees-before-callers.
    pub fn topo(&self) -> &[NtId] {
        &self.topo
    }

    /// The same grammar re-rooted at `id`, pruned to the productions `id`
    /// reaches.  Nonterminal ids are renumbered when anything is pruned.
    pub fn with_start(&self, id: NtId) -> NormalGrammar {
        NormalGrammar::from_parts(self.names.clone(), self.prods.clone(), id)
            .expect("sub-grammar of a valid grammar is valid")
    }

    /// Number of symbols on all right-hand sides (the grammar size all
    /// size bounds are stated against).
    pub fn size(&self) -> usize {
        self.prods
            .iter()
            .map(|p| match p {
                NormalProd::Type1 { args, .. } => 1 + args.len(),
                NormalProd::Type2 { .. } => 2,
                NormalProd::Type3 { before, after, .. } => 2 + before.len() + after.len(),
                NormalProd::Type4 { .. } => 3,
            })
            .sum()
    }

    /// View as a plain [`Grammar`] (for printing and evaluation).
    pub fn to_grammar(&self) -> Grammar {
        let mut b = GrammarBuilder::new();
        for id in 0..self.nt_count() {
            b.declare(&self.names[id], self.rank(id)).expect("names are unique");
        }
        let leaf = |id: NtId| RhsTree::nt(id, Vec::new());
        for (id, p) in self.prods.iter().enumerate() {
            let rhs = match p {
                NormalProd::Type1 { label, args } => {
                    RhsTree::term(label.clone(), args.iter().map(|&a| leaf(a)).collect())
                }
                NormalProd::Type2 { outer, inner } => RhsTree::nt(*outer, vec![leaf(*inner)]),
                NormalProd::Type3 { label, before, after } => {
                    let mut children: Vec<RhsTree> = before.iter().map(|&a| leaf(a)).collect();
                    children.push(RhsTree::param(0));
                    children.extend(after.iter().map(|&a| leaf(a)));
                    RhsTree::term(label.clone(), children)
                }
                NormalProd::Type4 { outer, inner } => {
                    RhsTree::nt(*outer, vec![RhsTree::nt(*inner, vec![RhsTree::param(0)])])
                }
            };
            b.define(id, rhs);
        }
        b.finish(self.start).expect("normal grammars are valid")
    }
}

impl fmt::Display for NormalGrammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_grammar(), f)
    }
}

impl fmt::Debug for NormalGrammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Brings a linear grammar of rank ≤ 1 into normal form, preserving the
/// derived tree exactly.  Fresh nonterminals are named `_N1`, `_N2`, …
/// (collision-checked against the input), so outputs are reproducible.
///
/// Productions the normal form cannot express are rewritten away first:
/// aliases `A = B` and `A(y) = B(y)` redirect their callers, the identity
/// `A(y) = y` splices its argument into call sites, and a rank-1 production
/// that never uses its parameter is demoted to rank 0 (callers drop the
/// argument, which the derived tree never contains).
pub fn normalize(g: &Grammar) -> Result<NormalGrammar> {
    if g.max_rank() > 1 {
        return Err(Error::Grammar("normalization requires all ranks ≤ 1".into()));
    }
    if !g.is_linear() {
        return Err(Error::Grammar("normalization requires a linear grammar".into()));
    }

    // -- preprocessing ------------------------------------------------------
    #[derive(Clone, Copy, PartialEq)]
    enum Pre {
        Keep,
        Alias(NtId),
        Identity,
    }
    let n = g.nt_count();
    let mut cls = vec![Pre::Keep; n];
    let mut ranks: Vec<u32> = (0..n).map(|i| g.rank(i)).collect();
    let mut pre_rhs: Vec<Option<RhsTree>> = (0..n).map(|_| None).collect();

    for &a in g.topo() {
        // rewrite the right-hand side by the callees' classes; arguments in
        // excess of a callee's (possibly demoted) rank are dropped
        let mut done: Vec<RhsTree> = Vec::new();
        for node in g.rhs(a).postorder() {
            let mut kids = done.split_off(done.len() - node.children.len());
            let rebuilt = match &node.sym {
                Symbol::Nonterminal(b) => match cls[*b] {
                    Pre::Identity => kids.pop().expect("identity callee takes one argument"),
                    Pre::Keep => {
                        kids.truncate(ranks[*b] as usize);
                        RhsTree::nt(*b, kids)
                    }
                    Pre::Alias(c) => {
                        kids.truncate(ranks[c] as usize);
                        RhsTree::nt(c, kids)
                    }
                },
                sym => RhsTree::new(sym.clone(), kids),
            };
            done.push(rebuilt);
        }
        let rhs = done.pop().unwrap();

        if ranks[a] == 1 && !rhs.postorder().iter().any(|nd| matches!(nd.sym, Symbol::Param(_)))
        {
            ranks[a] = 0;
        }
        cls[a] = match (&rhs.sym, rhs.children.as_slice()) {
            (Symbol::Param(0), []) => Pre::Identity,
            (Symbol::Nonterminal(b), []) if ranks[a] == 0 => Pre::Alias(*b),
            (Symbol::Nonterminal(b), [arg]) if matches!(arg.sym, Symbol::Param(0)) => {
                Pre::Alias(*b)
            }
            _ => Pre::Keep,
        };
        pre_rhs[a] = Some(rhs);
    }

    let start = match cls[g.start()] {
        Pre::Identity => {
            return Err(Error::Grammar(
                "start derives the identity context, which has no normal form".into(),
            ))
        }
        Pre::Alias(c) => c,
        Pre::Keep => g.start(),
    };

    // -- decomposition ------------------------------------------------------
    struct Emit {
        names: Vec<String>,
        prods: Vec<Option<NormalProd>>,
        used: HashSet<String>,
        next_fresh: usize,
    }
    impl Emit {
        fn fresh(&mut self, prod: NormalProd) -> NtId {
            let name = loop {
                let name = format!("_N{}", self.next_fresh);
                self.next_fresh += 1;
                if self.used.insert(name.clone()) {
                    break name;
                }
            };
            self.names.push(name);
            self.prods.push(Some(prod));
            self.names.len() - 1
        }

        fn place(&mut self, at: Option<NtId>, prod: NormalProd) -> NtId {
            match at {
                Some(id) => {
                    self.prods[id] = Some(prod);
                    id
                }
                None => self.fresh(prod),
            }
        }
    }

    let mut emit = Emit {
        names: Vec::new(),
        prods: Vec::new(),
        used: (0..n).map(|a| g.name(a).to_string()).collect(),
        next_fresh: 1,
    };
    let mut map: Vec<Option<NtId>> = vec![None; n];
    for a in 0..n {
        if cls[a] == Pre::Keep {
            map[a] = Some(emit.names.len());
            emit.names.push(g.name(a).to_string());
            emit.prods.push(None);
        }
    }

    // per-node result of the bottom-up walk: a rank-0 nonterminal, a rank-1
    // nonterminal (the subtree contains the parameter), or the bare parameter
    #[derive(Clone, Copy)]
    enum E {
        Atom(NtId),
        Ctx(NtId),
        Y,
    }
    fn atoms(kids: &[E]) -> Vec<NtId> {
        kids.iter()
            .map(|k| match k {
                E::Atom(id) => *id,
                _ => unreachable!("a linear body has one parameter path"),
            })
            .collect()
    }

    for a in 0..n {
        if cls[a] != Pre::Keep {
            continue;
        }
        let rhs = pre_rhs[a].take().unwrap();
        let nodes = rhs.postorder();
        let mut done: Vec<E> = Vec::new();
        for (idx, node) in nodes.iter().enumerate() {
            let slot = if idx == nodes.len() - 1 { map[a] } else { None };
            let mut kids = done.split_off(done.len() - node.children.len());
            let e = match &node.sym {
                Symbol::Param(_) => {
                    debug_assert!(slot.is_none(), "the identity was eliminated");
                    E::Y
                }
                Symbol::Terminal(label) => {
                    match kids.iter().position(|k| !matches!(k, E::Atom(_))) {
                        None => {
                            let t1 = NormalProd::Type1 { label: label.clone(), args: atoms(&kids) };
                            E::Atom(emit.place(slot, t1))
                        }
                        Some(i) => {
                            let t3 = NormalProd::Type3 {
                                label: label.clone(),
                                before: atoms(&kids[..i]),
                                after: atoms(&kids[i + 1..]),
                            };
                            match kids[i] {
                                E::Y => E::Ctx(emit.place(slot, t3)),
                                E::Ctx(inner) => {
                                    let outer = emit.fresh(t3);
                                    E::Ctx(emit.place(slot, NormalProd::Type4 { outer, inner }))
                                }
                                E::Atom(_) => unreachable!(),
                            }
                        }
                    }
                }
                Symbol::Nonterminal(b) => {
                    let ob = map[*b].expect("alias and identity callees were rewritten away");
                    if ranks[*b] == 0 {
                        debug_assert!(kids.is_empty());
                        debug_assert!(slot.is_none(), "rank-0 aliases were eliminated");
                        E::Atom(ob)
                    } else {
                        match kids.pop().unwrap() {
                            E::Atom(c) => {
                                E::Atom(emit.place(slot, NormalProd::Type2 { outer: ob, inner: c }))
                            }
                            E::Ctx(c) => {
                                E::Ctx(emit.place(slot, NormalProd::Type4 { outer: ob, inner: c }))
                            }
                            E::Y => {
                                debug_assert!(slot.is_none(), "rank-1 aliases were eliminated");
                                E::Ctx(ob)
                            }
                        }
                    }
                }
            };
            done.push(e);
        }
    }

    let prods: Vec<NormalProd> =
        emit.prods.into_iter().map(|p| p.expect("every kept nonterminal is defined")).collect();
    NormalGrammar::from_parts(emit.names, prods, map[start].unwrap())
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Exact per-nonterminal statistics of the derived trees, all measured in
/// edges and computed bottom-up in big-integer arithmetic.
///
/// Conventions, uniform across ranks so the composition rules stay total:
///
/// * `size` counts nodes; rank-1 values count the parameter leaf.
/// * `height` of a rank-1 value treats the parameter as an ordinary
///   height-0 leaf (h_⊥): the longest root-to-leaf path may avoid the
///   parameter entirely.
/// * `ecc` of a rank-1 value is the eccentricity of the parameter node; for
///   rank 0 it equals `height` (the eccentricity of the root).
/// * `rty` is the root-to-parameter distance; 0 for rank 0.
/// * `diam` is the unrooted diameter, with the parameter an ordinary leaf.
#[derive(Clone, Debug)]
pub struct NodeStats {
    pub size: Vec<BigCount>,
    pub height: Vec<BigCount>,
    pub rty: Vec<BigCount>,
    pub ecc: Vec<BigCount>,
    pub diam: Vec<BigCount>,
}

/// Computes [`NodeStats`] for every nonterminal.
///
/// Base cases for `A → σ(A1,…,Ak)` and `A(y) → σ(…,y,…)` read off the
/// children; a context composition `B(C(y))` or application `B(C)` uses
///
/// * `rty = rty(B) + rty(C)`
/// * `ecc = max{ecc(C), ecc(B) + rty(C)}`
/// * `height = max{height(B), rty(B) + height(C)}`
/// * `diam = max{diam(B), diam(C), ecc(B) + height(C)}`
///
/// where `height(B)` being h_⊥ keeps the height rule correct when the
/// longest path of `B` avoids the parameter.
pub fn stats(g: &NormalGrammar) -> NodeStats {
    let n = g.nt_count();
    let mut st = NodeStats {
        size: vec![BigCount::default(); n],
        height: vec![BigCount::default(); n],
        rty: vec![BigCount::default(); n],
        ecc: vec![BigCount::default(); n],
        diam: vec![BigCount::default(); n],
    };
    let one = || BigCount::from(1u32);
    for &a in g.topo() {
        match g.prod(a) {
            NormalProd::Type1 { args, .. } => {
                st.size[a] = args.iter().map(|&b| &st.size[b]).sum::<BigCount>() + 1u32;
                st.height[a] = args
                    .iter()
                    .map(|&b| &st.height[b])
                    .max()
                    .map_or_else(BigCount::default, |m| m + 1u32);
                st.ecc[a] = st.height[a].clone();
                st.diam[a] = diam_star(
                    args.iter().map(|&b| &st.diam[b]),
                    args.iter().map(|&b| &st.height[b] + 1u32),
                );
            }
            NormalProd::Type3 { before, after, .. } => {
                let args = || before.iter().chain(after).copied();
                st.size[a] = args().map(|b| &st.size[b]).sum::<BigCount>() + 2u32;
                let arg_h = args().map(|b| st.height[b].clone()).max();
                st.height[a] = arg_h.clone().unwrap_or_default() + 1u32;
                st.rty[a] = one();
                st.ecc[a] = arg_h.map_or_else(one, |m| m + 2u32);
                // the parameter is a height-0 child of the root
                st.diam[a] = diam_star(
                    args().map(|b| &st.diam[b]),
                    args().map(|b| &st.height[b] + 1u32).chain([one()]),
                );
            }
            &NormalProd::Type2 { outer: b, inner: c }
            | &NormalProd::Type4 { outer: b, inner: c } => {
                st.size[a] = &st.size[b] + &st.size[c] - 1u32;
                st.height[a] = (&st.height[b]).max(&(&st.rty[b] + &st.height[c])).clone();
                st.diam[a] = [
                    st.diam[b].clone(),
                    st.diam[c].clone(),
                    &st.ecc[b] + &st.height[c],
                ]
                .into_iter()
                .max()
                .unwrap();
                if matches!(g.prod(a), NormalProd::Type4 { .. }) {
                    st.rty[a] = &st.rty[b] + &st.rty[c];
                    st.ecc[a] = (&st.ecc[c]).max(&(&st.ecc[b] + &st.rty[c])).clone();
                } else {
                    st.ecc[a] = st.height[a].clone();
                }
            }
        }
    }
    st
}

/// Diameter of a star of subtrees: the best child diameter against the best
/// path through the root, which chains the two longest root-child drops.
fn diam_star<'a>(
    child_diams: impl Iterator<Item = &'a BigCount>,
    drops: impl Iterator<Item = BigCount>,
) -> BigCount {
    let (mut top, mut second): (Option<BigCount>, Option<BigCount>) = (None, None);
    for d in drops {
        if top.as_ref().is_none_or(|t| d > *t) {
            second = top.take();
            top = Some(d);
        } else if second.as_ref().is_none_or(|s| d > *s) {
            second = Some(d);
        }
    }
    let through = match (top, second) {
        (Some(t), Some(s)) => t + s,
        (Some(t), None) => t,
        (None, _) => BigCount::default(),
    };
    child_diams.max().map_or(through.clone(), |m| through.max(m.clone()))
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

/// [`crate::grammar::ranked_grammar`] on a normal grammar: relabels the
/// terminal of every type-1/3 production with its derived child count
/// (the parameter slot counts).  The result is again normal.
pub fn ranked_normal(g: &NormalGrammar) -> Result<NormalGrammar> {
    let mut prods = g.prods().to_vec();
    for p in &mut prods {
        let (label, k) = match p {
            NormalProd::Type1 { label, args } => (label, args.len()),
            NormalProd::Type3 { label, before, after } => (label, before.len() + after.len() + 1),
            _ => continue,
        };
        let text = label.as_str();
        if text.contains('#') && text != SUBDIVISION_LABEL {
            return Err(Error::ReservedLabel(text.to_string()));
        }
        *label = label.with_rank(k);
    }
    NormalGrammar::from_parts(g.names().to_vec(), prods, g.start())
}

/// Ranks a normal grammar unless every terminal already carries its correct
/// rank suffix (then returns it unchanged); half-ranked input is an error.
pub fn ensure_ranked_normal(g: &NormalGrammar) -> Result<NormalGrammar> {
    let mut saw_ranked = false;
    let mut saw_unranked = false;
    for p in g.prods() {
        let (label, k) = match p {
            NormalProd::Type1 { label, args } => (label, args.len()),
            NormalProd::Type3 { label, before, after } => (label, before.len() + after.len() + 1),
            _ => continue,
        };
        match label.base_and_rank() {
            (base, Some(r)) if !base.contains('#') || base == SUBDIVISION_LABEL => {
                if r as usize != k {
                    return Err(Error::MixedRanking);
                }
                saw_ranked = true;
            }
            _ => saw_unranked = true,
        }
    }
    match (saw_ranked, saw_unranked) {
        (true, true) => Err(Error::MixedRanking),
        (false, true) => ranked_normal(g),
        _ => Ok(g.clone()),
    }
}

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

/// Merges nonterminals with equal values into the smallest id: two rank-0
/// nonterminals merge when their traversal strings agree, two rank-1 ones
/// when both their prefix and suffix strings do.  The value of the grammar
/// is unchanged; afterwards no two distinct rank-0 nonterminals derive
/// equal trees (up to the policy's fingerprint guarantee).
pub fn dedup_equal(g: &NormalGrammar, policy: &EqualityPolicy) -> Result<NormalGrammar> {
    Ok(dedup_equal_with_map(g, policy)?.0)
}

/// [`dedup_equal`] together with the merge map: entry `a` holds the id of
/// `a`'s representative in the result, or `None` when that representative
/// ended up unreachable (possible when a merged nonterminal decomposed its
/// value differently than its representative).
pub fn dedup_equal_with_map(
    g: &NormalGrammar,
    policy: &EqualityPolicy,
) -> Result<(NormalGrammar, Vec<Option<NtId>>)> {
    use crate::slp::{build_dflr, SegCmp};
    use crate::term::LabelOrder;
    // Equality must see ranked labels: without ranks a traversal string does
    // not determine the tree (f(a,b) and f(a(b)) both read "f a b").
    let ranked = ensure_ranked_normal(g)?;
    let d = build_dflr(&ranked);
    let cmp = SegCmp::new(d.store(), LabelOrder::BaseThenRank, policy);
    let n = g.nt_count();
    let mut rep: Vec<NtId> = (0..n).collect();
    let mut pools: [Vec<NtId>; 2] = [Vec::new(), Vec::new()];
    for a in 0..n {
        let pool = &mut pools[g.rank(a) as usize];
        let mut found = None;
        for &b in pool.iter() {
            let eq = if g.rank(a) == 0 {
                cmp.equal(&cmp.whole(d.slp_rule(a)), &cmp.whole(d.slp_rule(b)))?
            } else {
                cmp.equal(&cmp.whole(d.pre_rule(a)), &cmp.whole(d.pre_rule(b)))?
                    && cmp.equal(&cmp.whole(d.suf_rule(a)), &cmp.whole(d.suf_rule(b)))?
            };
            if eq {
                found = Some(b);
                break;
            }
        }
        match found {
            Some(b) => rep[a] = b,
            None => pool.push(a),
        }
    }

    let mut prods = g.prods().to_vec();
    for p in &mut prods {
        match p {
            NormalProd::Type1 { args, .. } => args.iter_mut().for_each(|b| *b = rep[*b]),
            NormalProd::Type3 { before, after, .. } => {
                before.iter_mut().chain(after.iter_mut()).for_each(|b| *b = rep[*b])
            }
            NormalProd::Type2 { outer, inner } | NormalProd::Type4 { outer, inner } => {
                *outer = rep[*outer];
                *inner = rep[*inner];
            }
        }
    }
    let out = NormalGrammar::from_parts(g.names().to_vec(), prods, rep[g.start()])?;
    let map = rep.iter().map(|&r| out.nt(g.name(r))).collect();
    Ok((out, map))
}

// ---------------------------------------------------------------------------
// Random generation
// ---------------------------------------------------------------------------

/// Shape parameters for [`gen_random`].
#[derive(Clone, Debug)]
pub struct GenParams {
    /// Number of nonterminals to generate (before pruning unreachable ones).
    pub nonterminals: usize,
    /// Cap on the argument count of type-1 and type-3 productions.
    pub max_arity: usize,
    /// Terminal label pool.
    pub labels: Vec<String>,
}

impl Default for GenParams {
    fn default() -> GenParams {
        GenParams {
            nonterminals: 8,
            max_arity: 3,
            labels: ["f", "g", "a", "b"].map(String::from).to_vec(),
        }
    }
}

/// Generates a pseudo-random normal grammar, deterministically in `seed`.
///
/// Nonterminals `X0, …` are defined bottom-up, each referring only to
/// higher-numbered ones, with composition productions favored and callees
/// biased toward nearby ids so that chains (and value sizes) grow quickly.
/// Start is `X0`; unreachable productions are pruned, so the result can
/// have fewer nonterminals than requested.
pub fn gen_random(seed: u64, params: &GenParams) -> NormalGrammar {
    assert!(params.nonterminals > 0, "need at least one nonterminal");
    assert!(!params.labels.is_empty(), "need at least one label");
    let n = params.nonterminals;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prods: Vec<Option<NormalProd>> = vec![None; n];
    // already-defined nonterminals by rank, biggest value first, so that the
    // front bias of `pick` compounds sizes instead of chasing tiny newcomers
    let mut rank0: Vec<(NtId, u128)> = Vec::new();
    let mut rank1: Vec<(NtId, u128)> = Vec::new();

    fn pick(rng: &mut ChaCha8Rng, pool: &[(NtId, u128)]) -> (NtId, u128) {
        let mut i = 0;
        while i + 1 < pool.len() && rng.gen_bool(0.3) {
            i += 1;
        }
        pool[i]
    }
    fn pick_args(
        rng: &mut ChaCha8Rng,
        pool: &[(NtId, u128)],
        max: usize,
    ) -> (Vec<NtId>, u128) {
        let k = if pool.is_empty() { 0 } else { rng.gen_range(1..=max.max(1)) };
        let mut size = 0u128;
        let args = (0..k)
            .map(|_| {
                let (id, s) = pick(rng, pool);
                size = size.saturating_add(s);
                id
            })
            .collect();
        (args, size)
    }

    for a in (0..n).rev() {
        // weighted choice among the feasible production types; the start
        // (id 0) must have rank 0
        let mut types: Vec<(u32, u32)> = vec![(1, 1)];
        if a > 0 {
            types.push((3, 1));
            if !rank1.is_empty() {
                types.push((4, 4));
            }
        }
        if !rank1.is_empty() && !rank0.is_empty() {
            types.push((2, 4));
        }
        let total: u32 = types.iter().map(|&(_, w)| w).sum();
        let mut roll = rng.gen_range(0..total);
        let ty = types
            .iter()
            .find(|&&(_, w)| {
                if roll < w {
                    true
                } else {
                    roll -= w;
                    false
                }
            })
            .unwrap()
            .0;
        let label =
            |rng: &mut ChaCha8Rng| Label::new(&params.labels[rng.gen_range(0..params.labels.len())]);
        let (prod, size) = match ty {
            1 => {
                let (args, s) = pick_args(&mut rng, &rank0, params.max_arity);
                (NormalProd::Type1 { label: label(&mut rng), args }, s.saturating_add(1))
            }
            2 => {
                let (outer, so) = pick(&mut rng, &rank1);
                let (inner, si) = pick(&mut rng, &rank0);
                (NormalProd::Type2 { outer, inner }, so.saturating_add(si) - 1)
            }
            3 => {
                let label = label(&mut rng);
                let (mut before, s) = pick_args(&mut rng, &rank0, params.max_arity);
                let after = before.split_off(rng.gen_range(0..=before.len()));
                (NormalProd::Type3 { label, before, after }, s.saturating_add(2))
            }
            _ => {
                let (outer, so) = pick(&mut rng, &rank1);
                let (inner, si) = pick(&mut rng, &rank1);
                (NormalProd::Type4 { outer, inner }, so.saturating_add(si) - 1)
            }
        };
        let pool = if prod.rank() == 0 { &mut rank0 } else { &mut rank1 };
        let at = pool.partition_point(|&(_, s)| s >= size);
        pool.insert(at, (a, size));
        prods[a] = Some(prod);
    }

    let names = (0..n).map(|i| format!("X{i}")).collect();
    let prods = prods.into_iter().map(Option::unwrap).collect();
    NormalGrammar::from_parts(names, prods, 0).expect("generated grammar is valid")
}

// ---------------------------------------------------------------------------
