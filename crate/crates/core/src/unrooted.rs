//! The unrooted view of a compressed tree: center location, re-rooting,
//! and unrooted unordered isomorphism.
//!
//! Forgetting root and sibling order turns the derived tree into a
//! node-labelled graph.  Two such graphs are isomorphic exactly when the
//! trees re-rooted at their centers are isomorphic as rooted unordered
//! trees, which [`crate::canonize::iso_rooted`] decides — so the work here
//! is locating the center of a tree that may have astronomically many
//! nodes ([`find_center`]), and rebuilding a grammar for the re-rooted
//! tree ([`reroot`]).  Both run on compressed paths: a node is named not
//! by its (possibly exponentially long) address but by one address per
//! derivation step.
//!
//! The center search needs distances, never expansions: eccentricities and
//! heights of partially derived trees follow from per-nonterminal stats by
//! structural recurrences ([`mixed_stats`]).

use std::collections::HashSet;

use crate::canonize::iso_rooted;
use crate::grammar::{even_grammar, Grammar, GrammarBuilder, NtId, RhsTree, Symbol};
use crate::normal::{normalize, stats, NodeStats, NormalGrammar, NormalProd};
use crate::slp::{slp_length, EqualityPolicy, Slp, SlpSym};
use crate::term::{DeweyAddress, Label, LabelOrder};
use crate::{BigCount, Error, Result};

// ---------------------------------------------------------------------------
// Mixed trees
// ---------------------------------------------------------------------------

/// Distance summary of a mixed tree: a [`RhsTree`] over terminals,
/// nonterminals of one grammar, and at most one parameter leaf marking a
/// hole.  Conventions match [`crate::normal::NodeStats`]: `height` counts
/// edges and treats the hole as an ordinary leaf, `ecc` is the
/// eccentricity of the hole node and `rty` its distance from the root.
/// A tree without a hole reports `ecc == height` and `rty == 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedStats {
    pub height: BigCount,
    pub ecc: BigCount,
    pub rty: BigCount,
}

/// Computes [`MixedStats`] structurally, reading off per-nonterminal
/// [`stats`] instead of expanding: rank-0 nonterminals must be leaves,
/// rank-1 nonterminals carry their argument as a single child.
pub fn mixed_stats(g: &NormalGrammar, t: &RhsTree) -> Result<MixedStats> {
    mixed_with(&stats(g), g, t)
}

/// Per-node partial result: height plus, on the hole path, the hole's
/// eccentricity and depth within the subtree.
struct Mx {
    h: BigCount,
    hole: Option<(BigCount, BigCount)>,
}

fn mixed_with(st: &NodeStats, g: &NormalGrammar, t: &RhsTree) -> Result<MixedStats> {
    let mut done: Vec<Mx> = Vec::new();
    for node in t.postorder() {
        let kids = done.split_off(done.len() - node.children.len());
        if kids.iter().filter(|k| k.hole.is_some()).count() > 1 {
            return Err(Error::Grammar("mixed tree has more than one parameter".into()));
        }
        let res = match &node.sym {
            Symbol::Param(_) => {
                Mx { h: BigCount::default(), hole: Some((BigCount::default(), BigCount::default())) }
            }
            Symbol::Terminal(_) => {
                let h = kids.iter().map(|k| &k.h).max().map_or_else(BigCount::default, |m| m + 1u32);
                let hole = kids.iter().position(|k| k.hole.is_some()).map(|j| {
                    // this layer is a context σ(…, y, …) around the hole child
                    let sib = kids.iter().enumerate().filter(|&(i, _)| i != j);
                    let layer = sib
                        .map(|(_, k)| &k.h)
                        .max()
                        .map_or_else(|| BigCount::from(1u32), |m| m + 2u32);
                    let (e, r) = kids[j].hole.as_ref().expect("positioned on the hole child");
                    ((&layer + r).max(e.clone()), r + 1u32)
                });
                Mx { h, hole }
            }
            &Symbol::Nonterminal(b) => {
                if node.children.len() != g.rank(b) as usize {
                    return Err(Error::Grammar(format!(
                        "nonterminal {} has rank {} but {} children in a mixed tree",
                        g.name(b),
                        g.rank(b),
                        node.children.len()
                    )));
                }
                match kids.into_iter().next() {
                    None => Mx { h: st.height[b].clone(), hole: None },
                    Some(k) => {
                        let h = (&st.rty[b] + &k.h).max(st.height[b].clone());
                        let hole =
                            k.hole.map(|(e, r)| ((&st.ecc[b] + &r).max(e), &st.rty[b] + &r));
                        Mx { h, hole }
                    }
                }
            }
        };
        done.push(res);
    }
    let Mx { h, hole } = done.pop().expect("postorder of a tree is never empty");
    Ok(match hole {
        Some((ecc, rty)) => MixedStats { height: h, ecc, rty },
        None => MixedStats { height: h.clone(), ecc: h, rty: BigCount::default() },
    })
}

/// Replaces the unique parameter leaf of `ctx` with `fill`.
fn subst(ctx: &RhsTree, fill: RhsTree) -> RhsTree {
    let mut fill = Some(fill);
    let mut done: Vec<RhsTree> = Vec::new();
    for node in ctx.postorder() {
        let children = done.split_off(done.len() - node.children.len());
        done.push(match &node.sym {
            Symbol::Param(_) => fill.take().expect("context has exactly one parameter"),
            sym => RhsTree::new(sym.clone(), children),
        });
    }
    debug_assert!(fill.is_none(), "context has exactly one parameter");
    done.pop().expect("postorder of a tree is never empty")
}

/// The production right-hand side of `a` as an [`RhsTree`].
fn prod_rhs(g: &NormalGrammar, a: NtId) -> RhsTree {
    let leaf = |b: NtId| RhsTree::nt(b, Vec::new());
    match g.prod(a) {
        NormalProd::Type1 { label, args } => {
            RhsTree::term(label.clone(), args.iter().map(|&b| leaf(b)).collect())
        }
        &NormalProd::Type2 { outer, inner } => RhsTree::nt(outer, vec![leaf(inner)]),
        NormalProd::Type3 { label, before, after } => {
            let mut kids: Vec<RhsTree> = before.iter().map(|&b| leaf(b)).collect();
            kids.push(RhsTree::param(0));
            kids.extend(after.iter().map(|&b| leaf(b)));
            RhsTree::term(label.clone(), kids)
        }
        &NormalProd::Type4 { outer, inner } => {
            RhsTree::nt(outer, vec![RhsTree::nt(inner, vec![RhsTree::param(0)])])
        }
    }
}

// ---------------------------------------------------------------------------
// Compressed paths
// ---------------------------------------------------------------------------

/// A node of the derived tree named derivation step by derivation step:
/// one `(nonterminal, address)` pair per step, where the address points
/// into that nonterminal's production and the addressed symbol is the next
/// pair's nonterminal.  A full path ends at a terminal symbol; since each
/// nonterminal occurs at most once, the path stays short even when the
/// node it names sits exponentially deep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedPath {
    pub pairs: Vec<(NtId, DeweyAddress)>,
}

impl CompressedPath {
    /// `S@ε / B@1 / C@2`: one `name@address` segment per pair.
    pub fn render(&self, g: &NormalGrammar) -> String {
        let segs: Vec<String> =
            self.pairs.iter().map(|(a, u)| format!("{}@{}", g.name(*a), u)).collect();
        segs.join(" / ")
    }

    /// Parses the [`CompressedPath::render`] format; `ε` (or nothing
    /// after the `@`) is the root address.
    pub fn parse(text: &str, g: &NormalGrammar) -> Result<CompressedPath> {
        let mut pairs = Vec::new();
        for seg in text.split('/') {
            let seg = seg.trim();
            let (name, addr) = seg
                .rsplit_once('@')
                .ok_or_else(|| Error::Path(format!("segment {seg:?} is not name@address")))?;
            let a = g
                .nt(name.trim())
                .ok_or_else(|| Error::Path(format!("unknown nonterminal {name:?}")))?;
            let addr = addr.trim();
            let u = if addr.is_empty() || addr == "ε" {
                DeweyAddress::root()
            } else {
                let mut steps = Vec::new();
                for part in addr.split('.') {
                    match part.parse::<u32>() {
                        Ok(s) if s > 0 => steps.push(s),
                        _ => return Err(Error::Path(format!("bad address {addr:?}"))),
                    }
                }
                DeweyAddress(steps)
            };
            pairs.push((a, u));
        }
        Ok(CompressedPath { pairs })
    }
}

/// What a pair's address points at inside its production.
enum Hit {
    Nt(NtId),
    Term(Label),
}

fn pair_target(g: &NormalGrammar, a: NtId, u: &DeweyAddress) -> Result<Hit> {
    let bad =
        || Error::Path(format!("address {u} does not name a symbol in the production of {}", g.name(a)));
    let arg = |i: &u32, list: &[NtId]| {
        let i = *i as usize;
        (i >= 1).then(|| list.get(i - 1).copied()).flatten().map(Hit::Nt).ok_or_else(bad)
    };
    match (g.prod(a), u.0.as_slice()) {
        (NormalProd::Type1 { label, .. } | NormalProd::Type3 { label, .. }, []) => {
            Ok(Hit::Term(label.clone()))
        }
        (NormalProd::Type1 { args, .. }, [i]) => arg(i, args),
        (NormalProd::Type3 { before, after, .. }, [i]) => {
            let s = before.len() as u32 + 1;
            // the parameter slot names no symbol of the derivation
            if *i < s {
                arg(i, before)
            } else if *i > s {
                arg(&(*i - s), after)
            } else {
                Err(bad())
            }
        }
        (NormalProd::Type2 { outer, .. } | NormalProd::Type4 { outer, .. }, []) => {
            Ok(Hit::Nt(*outer))
        }
        (NormalProd::Type2 { inner, .. } | NormalProd::Type4 { inner, .. }, [1]) => {
            Ok(Hit::Nt(*inner))
        }
        _ => Err(bad()),
    }
}

/// Validates the chaining invariants and returns what each pair points at.
fn check_path(g: &NormalGrammar, p: &CompressedPath) -> Result<Vec<Hit>> {
    if p.pairs.is_empty() {
        return Err(Error::Path("empty path".into()));
    }
    if p.pairs[0].0 != g.start() {
        return Err(Error::Path("path must begin at the start nonterminal".into()));
    }
    let mut hits = Vec::with_capacity(p.pairs.len());
    for (i, (a, u)) in p.pairs.iter().enumerate() {
        let hit = pair_target(g, *a, u)?;
        if let Some(&(next, _)) = p.pairs.get(i + 1) {
            match hit {
                Hit::Nt(b) if b == next => {}
                _ => {
                    return Err(Error::Path(format!(
                        "pair {} does not lead to {}",
                        i + 1,
                        g.name(next)
                    )))
                }
            }
        }
        hits.push(hit);
    }
    Ok(hits)
}

// ---------------------------------------------------------------------------
// Center search
// ---------------------------------------------------------------------------

/// Locates the center node of the unrooted derived tree as a compressed
/// path.  The diameter must be even — subdivide with
/// [`even_grammar`] first otherwise — so that the center is unique.
///
/// The search walks the grammar top-down, keeping the part of the tree
/// above the current nonterminal as an explicit left context and the
/// argument it is applied to as an explicit right part; both stay no
/// larger than the grammar, because each production contributes its
/// symbols at most once.  At every step the tree is cut along a candidate
/// edge, and the side holding the center is read off a single comparison:
/// the center lies in the inner part exactly when the hole eccentricity
/// of the outer part is at most the inner part's height.
pub fn find_center(g: &NormalGrammar) -> Result<CompressedPath> {
    center_search(g, &stats(g), |_, _, _, _| ())
}

/// Candidate child slot of a flat production: a grammar argument, or the
/// already-built right part sitting in the parameter slot.
enum Slot {
    Arg(NtId),
    Right(RhsTree),
}

fn center_search(
    g: &NormalGrammar,
    st: &NodeStats,
    mut snap: impl FnMut(&RhsTree, NtId, Option<&RhsTree>, &[(NtId, DeweyAddress)]),
) -> Result<CompressedPath> {
    let diam = st.diam[g.start()].clone();
    if diam.bit(0) {
        return Err(Error::OddDiameter(diam));
    }
    let mut tl = RhsTree::param(0);
    let mut a = g.start();
    let mut tr: Option<RhsTree> = None;
    let mut pairs: Vec<(NtId, DeweyAddress)> = Vec::new();
    loop {
        snap(&tl, a, tr.as_ref(), &pairs);
        match g.prod(a) {
            &NormalProd::Type2 { outer, inner } | &NormalProd::Type4 { outer, inner } => {
                let tlb = subst(&tl, RhsTree::nt(outer, vec![RhsTree::param(0)]));
                let ctr = RhsTree::nt(inner, tr.iter().cloned().collect());
                let ecc_outer = mixed_with(st, g, &tlb)?.ecc;
                let h_inner = mixed_with(st, g, &ctr)?.height;
                if ecc_outer <= h_inner {
                    pairs.push((a, DeweyAddress(vec![1])));
                    tl = tlb;
                    a = inner;
                } else {
                    pairs.push((a, DeweyAddress::root()));
                    tr = Some(ctr);
                    a = outer;
                }
            }
            prod @ (NormalProd::Type1 { .. } | NormalProd::Type3 { .. }) => {
                let (label, slots) = match prod {
                    NormalProd::Type1 { label, args } => {
                        debug_assert!(tr.is_none(), "rank-0 steps carry no right part");
                        (label, args.iter().map(|&b| Slot::Arg(b)).collect::<Vec<_>>())
                    }
                    NormalProd::Type3 { label, before, after } => {
                        let right = tr.take().expect("rank-1 steps carry a right part");
                        let mut v: Vec<Slot> = before.iter().map(|&b| Slot::Arg(b)).collect();
                        v.push(Slot::Right(right));
                        v.extend(after.iter().map(|&b| Slot::Arg(b)));
                        (label, v)
                    }
                    _ => unreachable!(),
                };
                let mut found: Option<(usize, NtId, RhsTree)> = None;
                for (i, slot) in slots.iter().enumerate() {
                    let Slot::Arg(b) = slot else { continue };
                    let layer = RhsTree::term(
                        label.clone(),
                        slots
                            .iter()
                            .enumerate()
                            .map(|(j, s)| match s {
                                _ if j == i => RhsTree::param(0),
                                Slot::Arg(c) => RhsTree::nt(*c, Vec::new()),
                                Slot::Right(t) => t.clone(),
                            })
                            .collect(),
                    );
                    let ti = subst(&tl, layer);
                    if mixed_with(st, g, &ti)?.ecc <= st.height[*b] {
                        debug_assert!(found.is_none(), "at most one cut can contain the center");
                        found = Some((i, *b, ti));
                        if !cfg!(debug_assertions) {
                            break;
                        }
                    }
                }
                match found {
                    Some((i, b, ti)) => {
                        pairs.push((a, DeweyAddress(vec![i as u32 + 1])));
                        tl = ti;
                        a = b;
                        tr = None;
                    }
                    None => {
                        // no child part holds the center: this node is it
                        pairs.push((a, DeweyAddress::root()));
                        return Ok(CompressedPath { pairs });
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Address resolution
// ---------------------------------------------------------------------------

/// The address, in the derived tree, of the node a full path names (for a
/// partial path: of the root of the part still folded away), returned as
/// a straight-line program over decimal child-index symbols together with
/// its exact length, the node's depth.  The address itself can be
/// exponentially long: every composition step on the way contributes the
/// whole root-to-parameter address of its outer context.
pub fn resolve_path(g: &NormalGrammar, p: &CompressedPath) -> Result<(Slp, BigCount)> {
    check_path(g, p)?;
    // root-to-parameter address of every rank-1 value: a flat context
    // contributes its parameter slot, a composition outer then inner
    let mut rule_of = vec![usize::MAX; g.nt_count()];
    let mut rules: Vec<Vec<SlpSym>> = Vec::new();
    for &b in g.topo() {
        match g.prod(b) {
            NormalProd::Type3 { before, .. } => {
                rule_of[b] = rules.len();
                rules.push(vec![SlpSym::Term(step_label(before.len() as u32 + 1))]);
            }
            &NormalProd::Type4 { outer, inner } => {
                rule_of[b] = rules.len();
                rules.push(vec![SlpSym::Nt(rule_of[outer]), SlpSym::Nt(rule_of[inner])]);
            }
            _ => {}
        }
    }
    let mut root: Vec<SlpSym> = Vec::new();
    for (a, u) in &p.pairs {
        match (g.prod(*a), u.0.as_slice()) {
            (_, []) => {}
            (NormalProd::Type1 { .. } | NormalProd::Type3 { .. }, &[i]) => {
                root.push(SlpSym::Term(step_label(i)));
            }
            (NormalProd::Type2 { outer, .. } | NormalProd::Type4 { outer, .. }, &[1]) => {
                root.push(SlpSym::Nt(rule_of[*outer]));
            }
            _ => unreachable!("checked above"),
        }
    }
    let idx = rules.len();
    rules.push(root);
    let slp = Slp::build(rules, idx);
    let depth = slp_length(&slp);
    Ok((slp, depth))
}

fn step_label(i: u32) -> Label {
    Label::new(i.to_string())
}

// ---------------------------------------------------------------------------
// Path expansion
// ---------------------------------------------------------------------------

/// A compressed path expanded just far enough to see both of its ends:
/// `t` is a tree over terminals and nonterminals whose root is a terminal
/// (label `delta`) and which contains the path's node as an explicit
/// terminal node (label `sigma`) at address `u`.  Everything off the
/// root-to-node line stays folded behind nonterminals, keeping `t` within
/// twice the grammar size.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub t: RhsTree,
    pub u: DeweyAddress,
    pub sigma: Label,
    pub delta: Label,
}

/// Expands a full path, last pair first: an `@ε` pair over a composition
/// splices its inner argument into the hole of the part built so far, any
/// other pair wraps the part in one production layer.  Finally the root
/// is derived until it is a terminal (at most one step per nonterminal).
pub fn expand_path(g: &NormalGrammar, p: &CompressedPath) -> Result<Expansion> {
    let hits = check_path(g, p)?;
    let Some(Hit::Term(sigma)) = hits.last() else {
        return Err(Error::Path("expansion needs a full path, ending at a terminal".into()));
    };
    let sigma = sigma.clone();
    let (last, rest) = p.pairs.split_last().expect("checked non-empty");
    let mut t = prod_rhs(g, last.0);
    let mut u: Vec<u32> = last.1 .0.clone();
    for (a, addr) in rest.iter().rev() {
        match (g.prod(*a), addr.0.as_slice()) {
            (&NormalProd::Type2 { inner, .. }, []) => {
                t = subst(&t, RhsTree::nt(inner, Vec::new()));
            }
            (&NormalProd::Type4 { inner, .. }, []) => {
                t = subst(&t, RhsTree::nt(inner, vec![RhsTree::param(0)]));
            }
            (&NormalProd::Type2 { outer, .. } | &NormalProd::Type4 { outer, .. }, &[1]) => {
                t = RhsTree::nt(outer, vec![t]);
                u.insert(0, 1);
            }
            (NormalProd::Type1 { label, args }, &[i]) => {
                let mut prev = Some(std::mem::replace(&mut t, RhsTree::param(0)));
                let kids = args
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| {
                        if j + 1 == i as usize {
                            prev.take().expect("one slot on the path")
                        } else {
                            RhsTree::nt(b, Vec::new())
                        }
                    })
                    .collect();
                t = RhsTree::term(label.clone(), kids);
                u.insert(0, i);
            }
            (NormalProd::Type3 { label, before, after }, &[i]) => {
                let mut prev = Some(std::mem::replace(&mut t, RhsTree::param(0)));
                let s = before.len();
                let kids = (0..before.len() + after.len() + 1)
                    .map(|j| {
                        if j + 1 == i as usize {
                            prev.take().expect("one slot on the path")
                        } else if j == s {
                            RhsTree::param(0)
                        } else if j < s {
                            RhsTree::nt(before[j], Vec::new())
                        } else {
                            RhsTree::nt(after[j - s - 1], Vec::new())
                        }
                    })
                    .collect();
                t = RhsTree::term(label.clone(), kids);
                u.insert(0, i);
            }
            _ => unreachable!("checked above"),
        }
    }
    // derive the root until it is a terminal
    let mut steps = 0;
    while let &Symbol::Nonterminal(b) = &t.sym {
        steps += 1;
        assert!(steps <= g.nt_count(), "root derivation visits each nonterminal at most once");
        debug_assert_eq!(u.first(), Some(&1), "the named node sits under the applied argument");
        let arg = t.children.pop().expect("a rank-1 node carries its argument");
        match g.prod(b) {
            NormalProd::Type3 { label, before, after } => {
                let s = before.len();
                let mut arg = Some(arg);
                let kids = (0..before.len() + after.len() + 1)
                    .map(|j| {
                        if j == s {
                            arg.take().expect("one parameter slot")
                        } else if j < s {
                            RhsTree::nt(before[j], Vec::new())
                        } else {
                            RhsTree::nt(after[j - s - 1], Vec::new())
                        }
                    })
                    .collect();
                t = RhsTree::term(label.clone(), kids);
                u[0] = s as u32 + 1;
            }
            &NormalProd::Type4 { outer, inner } => {
                t = RhsTree::nt(outer, vec![RhsTree::nt(inner, vec![arg])]);
                u.insert(1, 1);
            }
            _ => unreachable!("rank-1 nonterminals have context productions"),
        }
    }
    let delta = match &t.sym {
        Symbol::Terminal(l) => l.clone(),
        _ => unreachable!("the loop above ends on a terminal root"),
    };
    debug_assert!(
        matches!(&node_at(&t, &u).expect("address stays valid").sym,
                 Symbol::Terminal(l) if *l == sigma),
        "the tracked address keeps naming the path's node"
    );
    Ok(Expansion { t, u: DeweyAddress(u), sigma, delta })
}

fn node_at<'a>(t: &'a RhsTree, addr: &[u32]) -> Option<&'a RhsTree> {
    let mut cur = t;
    for &s in addr {
        cur = cur.children.get(s as usize - 1)?;
    }
    Some(cur)
}

// ---------------------------------------------------------------------------
// Re-rooting
// ---------------------------------------------------------------------------

/// Reverses a context toward its hole: the parameter leaf ends up where
/// the old root was.  A flat layer keeps its children in place; nested
/// layers come out innermost first, so `f(a, g(c, y, d), b)` reverses to
/// `g(c, f(a, y, b), d)`.  A rank-1 nonterminal on the hole path is
/// replaced by `prime(id)`, which must name a nonterminal deriving the
/// reversed context ([`reroot`] builds those copies; pass the identity
/// when no nonterminal lies on the path).  Errors unless `ctx` contains
/// exactly one parameter leaf.
pub fn rooty(ctx: &RhsTree, mut prime: impl FnMut(NtId) -> NtId) -> Result<RhsTree> {
    let Some(addr) = param_address(ctx) else {
        return Err(Error::Grammar("rooty needs a context with exactly one parameter".into()));
    };
    // peel the layers along the hole path, root layer first
    let mut layers: Vec<RhsTree> = Vec::new();
    let mut cur = ctx.clone();
    for &step in &addr {
        let j = step as usize - 1;
        let child = std::mem::replace(&mut cur.children[j], RhsTree::param(0));
        layers.push(std::mem::replace(&mut cur, child));
    }
    debug_assert!(matches!(cur.sym, Symbol::Param(_)));
    // rebuild outward: each layer wraps around everything above it
    let mut acc = cur;
    for mut layer in layers {
        if let Symbol::Nonterminal(b) = &mut layer.sym {
            *b = prime(*b);
        }
        acc = subst(&layer, acc);
    }
    Ok(acc)
}

/// Address of the unique parameter leaf; `None` when there are zero or
/// several.
fn param_address(t: &RhsTree) -> Option<Vec<u32>> {
    let mut found: Option<Vec<u32>> = None;
    let mut path: Vec<u32> = Vec::new();
    let mut stack: Vec<(&RhsTree, usize)> = vec![(t, 0)];
    while let Some((node, i)) = stack.last_mut() {
        if *i == 0 && matches!(node.sym, Symbol::Param(_)) {
            if found.is_some() {
                return None;
            }
            found = Some(path.clone());
        }
        match node.children.get(*i) {
            Some(c) => {
                *i += 1;
                path.push(*i as u32);
                stack.push((c, 0));
            }
            None => {
                stack.pop();
                path.pop();
            }
        }
    }
    found
}

/// Removes the subtree at `addr` below `root`, leaving a parameter hole.
/// Returns the context, the removed node's children, and the rank-1
/// nonterminals passed on the way down.
fn carve(root: RhsTree, addr: &[u32]) -> (RhsTree, Vec<RhsTree>, Vec<NtId>) {
    let mut spine_nts = Vec::new();
    let mut stack: Vec<(RhsTree, usize)> = Vec::new();
    let mut cur = root;
    for &step in addr {
        if let Symbol::Nonterminal(x) = cur.sym {
            spine_nts.push(x);
        }
        let j = step as usize - 1;
        let child = std::mem::replace(&mut cur.children[j], RhsTree::param(0));
        stack.push((cur, j));
        cur = child;
    }
    let kids = std::mem::take(&mut cur.children);
    let mut ctx = RhsTree::param(0);
    while let Some((mut parent, j)) = stack.pop() {
        parent.children[j] = ctx;
        ctx = parent;
    }
    (ctx, kids, spine_nts)
}

/// Re-roots the derived tree at the node a full path names, returning a
/// normal grammar for the rooted version: same nodes, same labels, edges
/// oriented away from the new root.  The new start production hangs the
/// reversed root path off that node; every rank-1 nonterminal on the path
/// gets a reversed copy (`X_r`), with compositions reversed as
/// `X_r(y) → C_r(B_r(y))` for `X(y) → B(C(y))` and flat contexts kept
/// as they are.  Unreachable copies are pruned and the result is
/// renormalized, so helper names may differ.  A path to the root returns
/// the grammar unchanged.
pub fn reroot(g: &NormalGrammar, p: &CompressedPath) -> Result<NormalGrammar> {
    let ex = expand_path(g, p)?;
    if ex.u.is_root() {
        return Ok(g.clone());
    }
    let mut b = GrammarBuilder::new();
    for id in 0..g.nt_count() {
        b.declare(g.name(id), g.rank(id)).expect("grammar names are unique");
    }
    for id in 0..g.nt_count() {
        b.define(id, prod_rhs(g, id));
    }
    // split the expansion at its root: child i leads to the path's node
    let mut t = ex.t;
    let i = ex.u.0[0] as usize;
    let branch = t.children.remove(i - 1);
    let others = std::mem::take(&mut t.children);
    let (ctx, sig_kids, spine_nts) = carve(branch, &ex.u.0[1..]);
    // reversed copies for the path nonterminals and their compositions
    let mut need: Vec<NtId> = Vec::new();
    let mut seen: HashSet<NtId> = HashSet::new();
    for x in spine_nts {
        if seen.insert(x) {
            need.push(x);
        }
    }
    let mut qi = 0;
    while qi < need.len() {
        if let &NormalProd::Type4 { outer, inner } = g.prod(need[qi]) {
            for y in [outer, inner] {
                if seen.insert(y) {
                    need.push(y);
                }
            }
        }
        qi += 1;
    }
    let mut primed: Vec<Option<NtId>> = vec![None; g.nt_count()];
    for &x in g.topo() {
        if seen.contains(&x) {
            let name = b.fresh_name(&format!("{}_r", g.name(x)));
            primed[x] = Some(b.declare(&name, 1).expect("name is fresh"));
        }
    }
    for &x in g.topo() {
        let Some(px) = primed[x] else { continue };
        let rhs = match g.prod(x) {
            NormalProd::Type3 { .. } => prod_rhs(g, x),
            &NormalProd::Type4 { outer, inner } => RhsTree::nt(
                primed[inner].expect("closed under composition"),
                vec![RhsTree::nt(primed[outer].expect("closed under composition"), vec![
                    RhsTree::param(0),
                ])],
            ),
            _ => unreachable!("reversed copies exist only for rank-1 nonterminals"),
        };
        b.define(px, rhs);
    }
    let reversed = rooty(&ctx, |x| primed[x].expect("path nonterminals have reversed copies"))?;
    let tail = subst(&reversed, RhsTree::term(ex.delta.clone(), others));
    let mut kids = sig_kids;
    kids.push(tail);
    let start_name = b.fresh_name(&format!("{}_r", g.name(g.start())));
    let sid = b.declare(&start_name, 0).expect("name is fresh");
    b.define(sid, RhsTree::term(ex.sigma.clone(), kids));
    normalize(&b.finish(sid)?)
}

// ---------------------------------------------------------------------------
// Unrooted isomorphism
// ---------------------------------------------------------------------------

/// Unrooted unordered isomorphism of the two derived trees.  Every edge
/// of both trees is subdivided with a marker node — distances double, so
/// the diameter becomes even, the center unique, and the answer is
/// unchanged — then each tree is re-rooted at its center and the rooted
/// trees are compared.  Labels must be plain: rank tags encode the child
/// count under one particular rooting, which re-rooting invalidates.
pub fn iso_unrooted(
    g1: &Grammar,
    g2: &Grammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<bool> {
    let r1 = rooted_at_center(g1)?;
    let r2 = rooted_at_center(g2)?;
    iso_rooted(&r1.to_grammar(), &r2.to_grammar(), ord, policy)
}

/// even + center + reroot: a grammar whose value, with order forgotten,
/// is the subdivided input rooted at its center.
fn rooted_at_center(g: &Grammar) -> Result<NormalGrammar> {
    let n = normalize(&even_grammar(g)?)?;
    let p = find_center(&n)?;
    reroot(&n, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{eval, parse_grammar, tree_to_dag};
    use crate::normal::{gen_random, GenParams};
    use crate::oracle::{
        bfs_eccentricity, brute_force_iso, even_tree, naive_center, naive_reroot,
        naive_unrooted_iso, unrooted_diameter,
    };
    use crate::slp::slp_expand;
    use crate::term::{ahu_canon, parse_term, ranked_tree, Tree};
    use crate::testutil::{pseudo_random_tree, xorshift};

    fn big(x: u64) -> BigCount {
        BigCount::from(x)
    }

    fn ng(src: &str) -> NormalGrammar {
        normalize(&parse_grammar(src).unwrap()).unwrap()
    }

    fn ev(g: &NormalGrammar) -> Tree {
        eval(&g.to_grammar(), &big(200_000)).unwrap()
    }

    fn dag(t: &Tree) -> NormalGrammar {
        normalize(&tree_to_dag(t)).unwrap()
    }

    /// Decodes a resolved address program back into an explicit address.
    fn addr_of(slp: &Slp) -> DeweyAddress {
        let steps =
            slp_expand(slp, 100_000).unwrap().iter().map(|l| l.as_str().parse().unwrap()).collect();
        DeweyAddress(steps)
    }

    fn center_addr(g: &NormalGrammar) -> DeweyAddress {
        let p = find_center(g).unwrap();
        let (slp, depth) = resolve_path(g, &p).unwrap();
        let addr = addr_of(&slp);
        assert_eq!(depth, big(addr.0.len() as u64));
        addr
    }

    /// Expands a mixed tree, mapping the hole to a `?hole` leaf.
    fn expand_mixed(g: &NormalGrammar, t: &RhsTree) -> Tree {
        match &t.sym {
            Symbol::Param(_) => Tree::leaf(Label::new("?hole")),
            Symbol::Terminal(l) => {
                Tree::new(l.clone(), t.children.iter().map(|c| expand_mixed(g, c)).collect())
            }
            &Symbol::Nonterminal(b) => {
                let rhs = prod_rhs(g, b);
                let filled = match t.children.len() {
                    0 => rhs,
                    _ => subst(&rhs, t.children[0].clone()),
                };
                expand_mixed(g, &filled)
            }
        }
    }

    fn find_hole(t: &Tree) -> Option<DeweyAddress> {
        fn go(t: &Tree, path: &mut Vec<u32>) -> Option<Vec<u32>> {
            if t.label.as_str() == "?hole" {
                return Some(path.clone());
            }
            for (i, c) in t.children.iter().enumerate() {
                path.push(i as u32 + 1);
                if let Some(found) = go(c, path) {
                    return Some(found);
                }
                path.pop();
            }
            None
        }
        go(t, &mut Vec::new()).map(DeweyAddress)
    }

    #[test]
    fn mixed_stats_of_hand_cases() {
        let g = ng("slt v1\nstart S\nS = f(A)\nA = c1(A2)\nA2 = c2(A3)\nA3 = c3(A4)\n\
                    A4 = c4(A5)\nA5 = c5(L)\nL = l");
        let a = g.nt("A").unwrap();
        // the hole alone: everything is zero
        let m = mixed_stats(&g, &RhsTree::param(0)).unwrap();
        assert_eq!((m.height, m.ecc, m.rty), (big(0), big(0), big(0)));
        // f(A, y) with h(A) = 5: from the hole, climb to f and descend A
        let t = RhsTree::term(Label::new("f"), vec![RhsTree::nt(a, Vec::new()), RhsTree::param(0)]);
        let m = mixed_stats(&g, &t).unwrap();
        assert_eq!((m.height, m.ecc, m.rty), (big(6), big(7), big(1)));
        // a tree without a hole reads like a rank-0 value
        let m = mixed_stats(&g, &RhsTree::nt(a, Vec::new())).unwrap();
        assert_eq!((m.height, m.ecc, m.rty), (big(5), big(5), big(0)));
        // B(y) is exactly the per-nonterminal stats
        let g = ng("slt v1\nstart S\nS = W(L)\nW(y) = w(M, y)\nM = m\nL = l");
        let w = g.nt("W").unwrap();
        let st = stats(&g);
        let m = mixed_stats(&g, &RhsTree::nt(w, vec![RhsTree::param(0)])).unwrap();
        assert_eq!(m.height, st.height[w]);
        assert_eq!(m.ecc, st.ecc[w]);
        assert_eq!(m.rty, st.rty[w]);
        // two holes are malformed
        let t = RhsTree::term(Label::new("f"), vec![RhsTree::param(0), RhsTree::param(0)]);
        assert!(mixed_stats(&g, &t).is_err());
    }

    #[test]
    fn center_of_hand_trees() {
        // diameter 4, center at the root
        let t = parse_term("f(g(a),h(b))").unwrap();
        let g = dag(&t);
        assert_eq!(center_addr(&g), naive_center(&t).unwrap());
        assert_eq!(center_addr(&g), DeweyAddress::root());

        // a single node is its own center, via the one-pair path
        let g = dag(&parse_term("a").unwrap());
        let p = find_center(&g).unwrap();
        assert_eq!(p.pairs, vec![(g.start(), DeweyAddress::root())]);

        // odd diameter is refused with the diameter in the error
        let t = parse_term("f(a,g(b))").unwrap();
        assert_eq!(unrooted_diameter(&t), 3);
        match find_center(&dag(&t)) {
            Err(Error::OddDiameter(d)) => assert_eq!(d, big(3)),
            other => panic!("expected an odd-diameter error, got {other:?}"),
        }
        // after subdivision the center is the marker between f and g
        let e = normalize(&even_grammar(&tree_to_dag(&t)).unwrap()).unwrap();
        let addr = center_addr(&e);
        assert_eq!(addr, naive_center(&even_tree(&t)).unwrap());
        assert_eq!(addr, DeweyAddress(vec![2]));
    }

    #[test]
    fn center_matches_leaf_removal_on_random_trees() {
        let mut seed = 0x9e3779b97f4a7c15;
        let mut even_direct = 0;
        for _ in 0..120 {
            let size = 2 + (xorshift(&mut seed) % 34) as usize;
            let t = pseudo_random_tree(&mut seed, size, &["f", "g", "a", "b", "c"]);
            let et = even_tree(&t);
            let g = normalize(&even_grammar(&tree_to_dag(&t)).unwrap()).unwrap();
            assert_eq!(center_addr(&g), naive_center(&et).unwrap(), "tree {t}");
            // trees whose diameter is even already need no subdivision
            if unrooted_diameter(&t).is_multiple_of(2) {
                assert_eq!(center_addr(&dag(&t)), naive_center(&t).unwrap(), "tree {t}");
                even_direct += 1;
            }
        }
        assert!(even_direct >= 20, "corpus exercised {even_direct} unsubdivided trees");
    }

    #[test]
    fn center_matches_leaf_removal_on_random_grammars() {
        let mut checked = 0;
        for seed in 0..40u64 {
            let g0 = gen_random(seed, &GenParams::default());
            let st = stats(&g0);
            if st.size[g0.start()] > big(8_000) {
                continue;
            }
            let t = ev(&g0);
            let g = normalize(&even_grammar(&g0.to_grammar()).unwrap()).unwrap();
            assert_eq!(center_addr(&g), naive_center(&even_tree(&t)).unwrap(), "seed {seed}");
            checked += 1;
        }
        assert!(checked >= 15, "only {checked} grammars were small enough");
    }

    #[test]
    fn search_invariants_hold_step_by_step() {
        let mut seed = 0xfeedface;
        for round in 0..25 {
            let size = 2 + (xorshift(&mut seed) % 26) as usize;
            let t = pseudo_random_tree(&mut seed, size, &["f", "g", "a"]);
            let g = normalize(&even_grammar(&tree_to_dag(&t)).unwrap()).unwrap();
            let full = ev(&g);
            let center = naive_center(&even_tree(&t)).unwrap();
            let st = stats(&g);
            let mut steps = 0usize;
            let p = center_search(&g, &st, |tl, a, tr, _| {
                steps += 1;
                // the left context and right part stay grammar-sized
                let held = tl.node_count() + tr.map_or(0, RhsTree::node_count);
                assert!(held <= g.size() + 2, "round {round}: {held} nodes held");
                // distance summaries agree with breadth-first search on
                // the expansion
                let lt = expand_mixed(&g, tl);
                let hole = find_hole(&lt).expect("left context keeps its hole");
                let m = mixed_stats(&g, tl).unwrap();
                assert_eq!(m.ecc, big(bfs_eccentricity(&lt, &hole).unwrap() as u64));
                assert_eq!(m.rty, big(hole.0.len() as u64));
                // the pieces still assemble to the derived tree, and the
                // center stays inside the current nonterminal's part
                let here = RhsTree::nt(a, tr.iter().map(|r| (*r).clone()).collect());
                let whole = expand_mixed(&g, &subst(tl, here));
                assert_eq!(whole.to_string(), full.to_string());
                assert!(center.0.starts_with(&hole.0), "center left the active part");
            });
            let p = p.unwrap();
            assert!(steps >= 1 && steps <= g.nt_count());
            assert_eq!(addr_of(&resolve_path(&g, &p).unwrap().0), center);
        }
    }

    #[test]
    fn resolve_depth_of_a_power_chain() {
        // f^(2^60)(e) is a path graph; its center sits at depth 2^59
        let mut src = String::from("slt v1\nstart S\nS = T60(E)\nT0(y) = f(y)\nE = e\n");
        for j in 1..=60 {
            src += &format!("T{j}(y) = T{}(T{}(y))\n", j - 1, j - 1);
        }
        let g = ng(&src);
        let p = find_center(&g).unwrap();
        let (slp, depth) = resolve_path(&g, &p).unwrap();
        assert_eq!(depth, big(1u64 << 59));
        assert_eq!(slp_length(&slp), big(1u64 << 59));
        // the path needs one pair per nonterminal at most
        assert!(p.pairs.len() <= g.nt_count());
    }

    #[test]
    fn expansion_of_hand_paths() {
        let g = ng("slt v1\nstart S\nS = f(A, G)\nA = a\nG = g(B)\nB = b");
        let (s, a, gg, bb) =
            (g.start(), g.nt("A").unwrap(), g.nt("G").unwrap(), g.nt("B").unwrap());
        let path = CompressedPath {
            pairs: vec![(s, DeweyAddress(vec![2])), (gg, DeweyAddress::root())],
        };
        let e = expand_path(&g, &path).unwrap();
        assert_eq!(e.u, DeweyAddress(vec![2]));
        assert_eq!(e.sigma, Label::new("g"));
        assert_eq!(e.delta, Label::new("f"));
        let expected = RhsTree::term(Label::new("f"), vec![
            RhsTree::nt(a, Vec::new()),
            RhsTree::term(Label::new("g"), vec![RhsTree::nt(bb, Vec::new())]),
        ]);
        assert_eq!(e.t, expected);

        // a partial path cannot be expanded
        let partial = CompressedPath { pairs: vec![(s, DeweyAddress(vec![2]))] };
        assert!(expand_path(&g, &partial).is_err());
        // broken chains and stray addresses are rejected
        let broken = CompressedPath {
            pairs: vec![(s, DeweyAddress(vec![1])), (gg, DeweyAddress::root())],
        };
        assert!(check_path(&g, &broken).is_err());
        let stray = CompressedPath { pairs: vec![(s, DeweyAddress(vec![7]))] };
        assert!(check_path(&g, &stray).is_err());
        let late = CompressedPath { pairs: vec![(gg, DeweyAddress::root())] };
        assert!(check_path(&g, &late).is_err());

        // render and parse round-trip
        let text = path.render(&g);
        assert_eq!(text, "S@2 / G@ε");
        assert_eq!(CompressedPath::parse(&text, &g).unwrap(), path);
        assert_eq!(CompressedPath::parse("S@2/G@", &g).unwrap(), path);
        assert!(CompressedPath::parse("S@0", &g).is_err());
        assert!(CompressedPath::parse("Q@1", &g).is_err());
    }

    #[test]
    fn rooty_reverses_hand_contexts() {
        let y = RhsTree::param(0);
        let lf = |l: &str| RhsTree::term(Label::new(l), Vec::new());
        let tm = |l: &str, kids: Vec<RhsTree>| RhsTree::term(Label::new(l), kids);
        // a flat layer is untouched
        let flat = tm("f", vec![lf("a"), y.clone(), lf("b")]);
        assert_eq!(rooty(&flat, |x| x).unwrap(), flat);
        // nesting reverses: f(a, g(c, y, d), b) → g(c, f(a, y, b), d)
        let nested = tm("f", vec![lf("a"), tm("g", vec![lf("c"), y.clone(), lf("d")]), lf("b")]);
        let expect = tm("g", vec![lf("c"), flat.clone(), lf("d")]);
        assert_eq!(rooty(&nested, |x| x).unwrap(), expect);
        // the hole alone is a fixed point
        assert_eq!(rooty(&y, |x| x).unwrap(), y);
        // zero or two holes are malformed
        assert!(rooty(&lf("a"), |x| x).is_err());
        assert!(rooty(&tm("f", vec![y.clone(), y.clone()]), |x| x).is_err());
    }

    #[test]
    fn reroot_matches_path_reversal_on_hand_cases() {
        // a path to the root changes nothing
        let t = parse_term("f(g(a),h(b))").unwrap();
        let g = dag(&t);
        let p = find_center(&g).unwrap();
        let r = reroot(&g, &p).unwrap();
        assert_eq!(r.to_string(), g.to_string());

        // f(a, g(b)) re-rooted at the g node: g(b, f(a)) up to sibling order
        let g = ng("slt v1\nstart S\nS = f(A, G)\nA = a\nG = g(B)\nB = b");
        let path = CompressedPath {
            pairs: vec![
                (g.start(), DeweyAddress(vec![2])),
                (g.nt("G").unwrap(), DeweyAddress::root()),
            ],
        };
        let r = reroot(&g, &path).unwrap();
        assert!(brute_force_iso(&ev(&r), &parse_term("g(b,f(a))").unwrap()));

        // a unary chain re-rooted at its deepest leaf is the reversed chain
        let mut src = String::from("slt v1\nstart S\nS = C4(E)\nC0(y) = f(y)\nE = e\n");
        for j in 1..=4 {
            src += &format!("C{j}(y) = C{}(C{}(y))\n", j - 1, j - 1);
        }
        let g = ng(&src);
        let path = CompressedPath {
            pairs: vec![
                (g.start(), DeweyAddress(vec![1])),
                (g.nt("E").unwrap(), DeweyAddress::root()),
            ],
        };
        let r = reroot(&g, &path).unwrap();
        let t = ev(&g);
        let expect = naive_reroot(&t, &DeweyAddress(vec![1; 16])).unwrap();
        assert!(brute_force_iso(&ev(&r), &expect));
    }

    /// A path through a dag built from an explicit tree: one pair per
    /// address step (every production is flat), closed by the terminal.
    fn path_for_address(g: &NormalGrammar, addr: &DeweyAddress) -> CompressedPath {
        let mut pairs = Vec::new();
        let mut a = g.start();
        for &step in &addr.0 {
            pairs.push((a, DeweyAddress(vec![step])));
            let NormalProd::Type1 { args, .. } = g.prod(a) else { panic!("flat dag") };
            a = args[step as usize - 1];
        }
        pairs.push((a, DeweyAddress::root()));
        CompressedPath { pairs }
    }

    #[test]
    fn reroot_matches_path_reversal_on_random_trees() {
        let ord = LabelOrder::default();
        let canon = |t: &Tree| ahu_canon(&ranked_tree(t).unwrap(), ord).to_string();
        let mut seed = 0xabcdef0123;
        for _ in 0..60 {
            let size = 2 + (xorshift(&mut seed) % 28) as usize;
            let t = pseudo_random_tree(&mut seed, size, &["f", "g", "a", "b"]);
            let g = dag(&t);
            // a uniformly chosen node of the tree
            let mut addrs = vec![DeweyAddress::root()];
            let mut stack = vec![(&t, DeweyAddress::root())];
            while let Some((n, at)) = stack.pop() {
                for (i, c) in n.children.iter().enumerate() {
                    let ca = at.child(i as u32 + 1);
                    addrs.push(ca.clone());
                    stack.push((c, ca));
                }
            }
            let addr = &addrs[(xorshift(&mut seed) % addrs.len() as u64) as usize];
            let p = path_for_address(&g, addr);
            // the path names the node it was built for
            assert_eq!(&addr_of(&resolve_path(&g, &p).unwrap().0), addr);
            let r = reroot(&g, &p).unwrap();
            let expect = naive_reroot(&t, addr).unwrap();
            assert_eq!(canon(&ev(&r)), canon(&expect), "tree {t} at {addr}");
            // the expansion behind it stays small
            let e = expand_path(&g, &p).unwrap();
            assert!(e.t.node_count() <= 2 * g.size());
        }
    }

    #[test]
    fn iso_unrooted_on_hand_pairs() {
        let ord = LabelOrder::default();
        let policy = EqualityPolicy::default();
        let same_path = [
            parse_grammar("slt v1\nstart S\nS = a(B)\nB = b(C)\nC = c(D)\nD = d").unwrap(),
            parse_grammar("slt v1\nstart S\nS = d(C)\nC = c(B)\nB = b(A)\nA = a").unwrap(),
        ];
        // the same labelled path graph, rooted at either end
        assert!(iso_unrooted(&same_path[0], &same_path[1], ord, &policy).unwrap());
        assert!(iso_unrooted(&same_path[0], &same_path[0], ord, &policy).unwrap());
        // a path and a star on the same label multiset differ
        let path4 = parse_grammar("slt v1\nstart S\nS = x(B)\nB = x(C)\nC = x(D)\nD = x").unwrap();
        let star4 = parse_grammar("slt v1\nstart S\nS = x(B, C, D)\nB = x\nC = x\nD = x").unwrap();
        assert!(!iso_unrooted(&path4, &star4, ord, &policy).unwrap());
        // subdividing both sides never changes the answer
        for (a, b, want) in [
            (&same_path[0], &same_path[1], true),
            (&path4, &star4, false),
        ] {
            let (ea, eb) = (even_grammar(a).unwrap(), even_grammar(b).unwrap());
            assert_eq!(iso_unrooted(&ea, &eb, ord, &policy).unwrap(), want);
        }
    }

    #[test]
    fn iso_unrooted_is_an_equivalence_matching_the_oracle() {
        let ord = LabelOrder::default();
        let policy = EqualityPolicy::default();
        let mut seed = 0x5eed;
        let mut trees: Vec<Tree> = Vec::new();
        while trees.len() < 12 {
            let size = 2 + (xorshift(&mut seed) % 11) as usize;
            let t = pseudo_random_tree(&mut seed, size, &["f", "a", "b"]);
            // a re-rooted copy of every other tree joins its class
            if trees.len() % 2 == 1 {
                let prev = &trees[trees.len() - 1];
                let mut addrs = vec![DeweyAddress::root()];
                let mut stack = vec![(prev, DeweyAddress::root())];
                while let Some((n, at)) = stack.pop() {
                    for (i, c) in n.children.iter().enumerate() {
                        let ca = at.child(i as u32 + 1);
                        addrs.push(ca.clone());
                        stack.push((c, ca));
                    }
                }
                let at = &addrs[(xorshift(&mut seed) % addrs.len() as u64) as usize];
                trees.push(naive_reroot(prev, at).unwrap());
            } else {
                trees.push(t);
            }
        }
        let grams: Vec<Grammar> = trees.iter().map(tree_to_dag).collect();
        let n = trees.len();
        let mut m = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = iso_unrooted(&grams[i], &grams[j], ord, &policy).unwrap();
                assert_eq!(m[i][j], naive_unrooted_iso(&trees[i], &trees[j]), "{i} vs {j}");
            }
        }
        let mut classes = 0;
        for i in 0..n {
            assert!(m[i][i], "reflexive at {i}");
            classes += usize::from((0..i).all(|j| !m[i][j]));
            for j in 0..n {
                assert_eq!(m[i][j], m[j][i], "symmetric at {i},{j}");
                for k in 0..n {
                    if m[i][j] && m[j][k] {
                        assert!(m[i][k], "transitive at {i},{j},{k}");
                    }
                }
            }
        }
        // the re-rooted copies guarantee nontrivial classes
        assert!(classes < n, "every pair landed in its own class");
    }

    #[test]
    fn iso_unrooted_on_opposite_ends_of_a_long_chain() {
        let ord = LabelOrder::default();
        let policy = EqualityPolicy::default();
        // f^(2^30)(a) rooted at the f end …
        let mut src = String::from("slt v1\nstart S\nS = T30(E)\nT0(y) = f(y)\nE = a\n");
        for j in 1..=30 {
            src += &format!("T{j}(y) = T{}(T{}(y))\n", j - 1, j - 1);
        }
        let g1 = parse_grammar(&src).unwrap();
        // … and the same unrooted path viewed from the a end: the chain
        // a, f^(2^30 − 1), f-leaf
        let mut src = String::from("slt v1\nstart S\nS = A(U30(F))\nA(y) = a(y)\nT0(y) = f(y)\nF = f\n");
        for j in 1..=30 {
            src += &format!("T{j}(y) = T{}(T{}(y))\n", j - 1, j - 1);
        }
        src += "U1(y) = T0(y)\n";
        for j in 2..=30 {
            src += &format!("U{j}(y) = T{}(U{}(y))\n", j - 1, j - 1);
        }
        let g2 = parse_grammar(&src).unwrap();
        assert!(iso_unrooted(&g1, &g2, ord, &policy).unwrap());
        // a mismatched end label breaks it
        let g3 = parse_grammar(&g1.to_string().replace("E = a", "E = b")).unwrap();
        assert!(!iso_unrooted(&g3, &g2, ord, &policy).unwrap());
    }
}
