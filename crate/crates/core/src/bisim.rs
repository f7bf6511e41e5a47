//! Bisimulation canon and bisimulation equivalence of compressed trees.
//!
//! Two trees are bisimulation equivalent exactly when collapsing
//! repeated children — bottom-up, keeping one child per
//! unordered-isomorphism class — yields isomorphic trees.
//! [`bcanon_grammar`] performs that collapse directly on the grammar:
//! rank-0 nonterminals with isomorphic values are merged into one
//! representative per class, duplicate arguments are dropped from flat
//! productions, and each context chain `Z → B(A)`, `B ⇒ B1⋯BN(·)` is
//! cut wherever the subtree hanging below a layer is isomorphic to one
//! of that layer's own arguments.  Cut positions are found by binary
//! search on exact sizes: the collapsed subtree sizes grow strictly
//! from the bottom of a chain to its top, so every class of reachable
//! rank-0 values fits at most one position, and only a position whose
//! size matches exactly is probed with a real isomorphism test.  Probes
//! compare canonical traversal programs of throwaway start symbols, so
//! chains of astronomical depth cost polynomially many size
//! computations.
//!
//! Labels are compared as plain names throughout: collapsing changes
//! arities (`f(a,a)` collapses to `f(a)` without leaving its class), so
//! rank tags would split classes that belong together.  [`bisim_equal`]
//! collapses both inputs first and only then hands the results to
//! [`iso_rooted`], which ranks the already-collapsed values.

use std::collections::{HashMap, HashSet};

use crate::canonize::{canonical_form, iso_rooted};
use crate::grammar::{Grammar, NtId};
use crate::normal::{normalize, stats, NodeStats, NormalGrammar, NormalProd};
use crate::slp::{
    build_dflr, rule_weights, slp_equal, slp_length, slp_slice, slp_symbol_at, weighted_prefix,
    EqualityPolicy, Slp, SlpSym,
};
use crate::term::{Label, LabelOrder};
use crate::{BigCount, Result};

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Decides whether the values of `g1` and `g2` are bisimulation
/// equivalent: both are collapsed with [`bcanon_grammar`] and the
/// collapsed values are compared as rooted unordered trees.
pub fn bisim_equal(
    g1: &Grammar,
    g2: &Grammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<bool> {
    let b1 = bcanon_grammar(&normalize(g1)?, ord, policy)?;
    let b2 = bcanon_grammar(&normalize(g2)?, ord, policy)?;
    iso_rooted(&b1.to_grammar(), &b2.to_grammar(), ord, policy)
}

/// Rewrites `g` into a normal grammar deriving the bisimulation canon
/// of its value: the same tree with repeated children removed,
/// bottom-up, one survivor per unordered-isomorphism class of siblings.
/// Labels are taken as plain names; ranked labels pass through as
/// opaque text.
pub fn bcanon_grammar(
    g: &NormalGrammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<NormalGrammar> {
    Ok(bcanon_core(g, ord, policy)?.0)
}

/// The cut positions found on one context chain, in original chain
/// coordinates (1-based from the outermost layer; position `N+1` names
/// the chain's argument), strictly descending in the order the cuts
/// were made.  Subtree sizes grow strictly along a chain, so at most
/// one cut exists per unordered-isomorphism class of reachable rank-0
/// values.
#[derive(Debug, Clone, Default)]
pub struct SpinePositionSet {
    pub positions: Vec<BigCount>,
}

// Phases in dependency order, one per nonterminal, so everything an
// active production references is already final: its rank-0 arguments
// are class representatives and its argument lists are duplicate-free.
// Rebuilds prune and renumber, hence progress and identity are tracked
// by name.
fn bcanon_core(
    g0: &NormalGrammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<(NormalGrammar, Vec<SpinePositionSet>)> {
    enum Step {
        Flat,
        Chain,
        Skip,
    }
    let mut g = g0.clone();
    let mut fresh = Fresh::new(&g);
    let mut done: HashSet<String> = HashSet::new();
    let mut reps: Vec<Rep> = Vec::new();
    let mut cuts: Vec<SpinePositionSet> = Vec::new();
    loop {
        let next = g.topo().iter().copied().find(|&x| !done.contains(g.name(x)));
        let Some(x) = next else { break };
        let name = g.name(x).to_string();
        let step = match g.prod(x) {
            NormalProd::Type1 { .. } | NormalProd::Type3 { .. } => Step::Flat,
            NormalProd::Type2 { .. } => Step::Chain,
            NormalProd::Type4 { .. } => Step::Skip,
        };
        match step {
            Step::Flat => g = dedup_args(&g, x)?,
            Step::Chain => {
                let (g2, set) = Surgery::new(&g, x, &mut fresh)?.run(&mut reps, ord, policy)?;
                g = g2;
                cuts.push(set);
            }
            Step::Skip => {}
        }
        let id = g.nt(&name).expect("the active nonterminal survives its own phase");
        if g.rank(id) == 0 {
            g = merge_or_register(g, &name, &mut reps, ord, policy)?;
        }
        done.insert(name);
    }
    Ok((g, cuts))
}

// ---------------------------------------------------------------------------
// Class representatives
// ---------------------------------------------------------------------------

// One entry per unordered-isomorphism class of processed rank-0 values;
// `key` is the canonical traversal program of the value, filled on the
// first size collision.  Merged nonterminals drop out of the grammar
// but their entries stay; `g.nt` filters them out.
struct Rep {
    name: String,
    size: BigCount,
    key: Option<Slp>,
}

// the canonical traversal program of `id`'s value, comparable across
// grammars
fn key_for(g: &NormalGrammar, id: NtId, ord: LabelOrder, policy: &EqualityPolicy) -> Result<Slp> {
    let cf = canonical_form(&g.with_start(id).to_grammar(), ord, policy)?;
    Ok(build_dflr(&cf).slp(cf.start()))
}

// cached key of a live representative
fn class_key(
    reps: &mut [Rep],
    g: &NormalGrammar,
    id: NtId,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<Slp> {
    let name = g.name(id);
    let rep = reps
        .iter_mut()
        .find(|r| r.name == name)
        .expect("reachable rank-0 values are class representatives");
    if rep.key.is_none() {
        rep.key = Some(key_for(g, id, ord, policy)?);
    }
    Ok(rep.key.clone().expect("just filled"))
}

// After `name`'s own phase: if its value matches an existing class
// representative, redirect every reference — only productions processed
// later can hold one, so cached keys stay valid — and let the rebuild
// prune it; otherwise it becomes a representative itself.
fn merge_or_register(
    g: NormalGrammar,
    name: &str,
    reps: &mut Vec<Rep>,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<NormalGrammar> {
    let z = g.nt(name).expect("checked by the caller");
    let size = stats(&g).size[z].clone();
    let mut z_key: Option<Slp> = None;
    for rep in reps.iter_mut() {
        if rep.size != size {
            continue;
        }
        let Some(r) = g.nt(&rep.name) else { continue };
        let zk = match &z_key {
            Some(k) => k.clone(),
            None => {
                let k = key_for(&g, z, ord, policy)?;
                z_key = Some(k.clone());
                k
            }
        };
        if rep.key.is_none() {
            rep.key = Some(key_for(&g, r, ord, policy)?);
        }
        let rk = rep.key.as_ref().expect("just filled");
        if slp_equal(&zk, rk, policy)? {
            debug_assert_ne!(z, g.start(), "the start value strictly contains every other value");
            let mut prods = g.prods().to_vec();
            for p in &mut prods {
                redirect(p, z, r);
            }
            return NormalGrammar::from_parts(g.names().to_vec(), prods, g.start());
        }
    }
    reps.push(Rep { name: name.to_string(), size, key: z_key });
    Ok(g)
}

// rank-0 occurrences only; rank-1 positions can never hold `from`
fn redirect(p: &mut NormalProd, from: NtId, to: NtId) {
    match p {
        NormalProd::Type1 { args, .. } => {
            for b in args {
                if *b == from {
                    *b = to;
                }
            }
        }
        NormalProd::Type3 { before, after, .. } => {
            for b in before.iter_mut().chain(after.iter_mut()) {
                if *b == from {
                    *b = to;
                }
            }
        }
        NormalProd::Type2 { inner, .. } => {
            if *inner == from {
                *inner = to;
            }
        }
        NormalProd::Type4 { .. } => {}
    }
}

// Drops repeated arguments of a flat production.  By the time a
// production is active its arguments are class representatives, so
// duplicates are literally equal ids.
fn dedup_args(g: &NormalGrammar, x: NtId) -> Result<NormalGrammar> {
    let mut seen: HashSet<NtId> = HashSet::new();
    let mut keep =
        |list: &[NtId]| list.iter().copied().filter(|&b| seen.insert(b)).collect::<Vec<_>>();
    let new = match g.prod(x) {
        NormalProd::Type1 { label, args } => {
            NormalProd::Type1 { label: label.clone(), args: keep(args) }
        }
        NormalProd::Type3 { label, before, after } => {
            let b = keep(before);
            let a = keep(after);
            NormalProd::Type3 { label: label.clone(), before: b, after: a }
        }
        _ => unreachable!("only flat productions carry argument lists"),
    };
    if new == *g.prod(x) {
        return Ok(g.clone());
    }
    let mut prods = g.prods().to_vec();
    prods[x] = new;
    NormalGrammar::from_parts(g.names().to_vec(), prods, g.start())
}

// fresh, collision-free names for emitted helper nonterminals
struct Fresh {
    used: HashSet<String>,
    next: usize,
}

impl Fresh {
    fn new(g: &NormalGrammar) -> Fresh {
        Fresh { used: g.names().iter().cloned().collect(), next: 0 }
    }

    fn name(&mut self) -> String {
        loop {
            let cand = format!("_B{}", self.next);
            self.next += 1;
            if self.used.insert(cand.clone()) {
                return cand;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Chain surgery
// ---------------------------------------------------------------------------

// Nodes a chain layer contributes above its subordinate subtree: its
// root plus its argument values.  Always ≥ 1 — this is what makes
// subtree sizes along a chain strictly monotone.
fn layer_nodes(g: &NormalGrammar, st: &NodeStats, tok: &Label) -> BigCount {
    let x = g.nt(tok.as_str()).expect("tokens are context names");
    debug_assert!(matches!(g.prod(x), NormalProd::Type3 { .. }));
    let w = &st.size[x] - 1u32;
    debug_assert!(w >= BigCount::from(1u32));
    w
}

// A type-2 phase in progress: Z → B(A) with the chain B ⇒ B1⋯BN(·)
// held as a token string program, plus working copies of the grammar
// tables that collect every emitted helper.  Probe nonterminals become
// unreachable junk that the final rebuild prunes.
struct Surgery<'g> {
    g: &'g NormalGrammar,
    fresh: &'g mut Fresh,
    st: NodeStats,
    z: NtId,
    a: NtId,
    spine: Slp,
    n_tokens: BigCount,
    // per-token node contributions, for subtree sizes along the chain
    totals: Vec<BigCount>,
    // live class representatives reachable from z, grouped by size
    by_size: HashMap<BigCount, Vec<NtId>>,
    names: Vec<String>,
    prods: Vec<NormalProd>,
    // reduced layer copies, per (context, dropped argument)
    cut_copies: HashMap<(NtId, NtId), NtId>,
}

impl<'g> Surgery<'g> {
    fn new(g: &'g NormalGrammar, z: NtId, fresh: &'g mut Fresh) -> Result<Surgery<'g>> {
        let &NormalProd::Type2 { outer: b, inner: a } = g.prod(z) else {
            unreachable!("surgery runs on type-2 productions")
        };
        let st = stats(g);

        let mut reach = vec![false; g.nt_count()];
        reach[z] = true;
        let mut queue = vec![z];
        while let Some(x) = queue.pop() {
            let mut kids: Vec<NtId> = Vec::new();
            match g.prod(x) {
                NormalProd::Type1 { args, .. } => kids.extend(args.iter().copied()),
                NormalProd::Type3 { before, after, .. } => {
                    kids.extend(before.iter().chain(after).copied());
                }
                &NormalProd::Type2 { outer, inner } | &NormalProd::Type4 { outer, inner } => {
                    kids.extend([outer, inner]);
                }
            }
            for y in kids {
                if !reach[y] {
                    reach[y] = true;
                    queue.push(y);
                }
            }
        }
        let mut by_size: HashMap<BigCount, Vec<NtId>> = HashMap::new();
        for (x, &r) in reach.iter().enumerate() {
            if r && x != z && g.rank(x) == 0 {
                by_size.entry(st.size[x].clone()).or_default().push(x);
            }
        }

        // the chain as a string program: one terminal per type-3 context,
        // type-4 contexts concatenate
        let mut rule_of = vec![usize::MAX; g.nt_count()];
        let mut rules: Vec<Vec<SlpSym>> = Vec::new();
        for &x in g.topo() {
            match g.prod(x) {
                NormalProd::Type3 { .. } => {
                    rule_of[x] = rules.len();
                    rules.push(vec![SlpSym::Term(Label::new(g.name(x)))]);
                }
                NormalProd::Type4 { outer, inner } => {
                    rule_of[x] = rules.len();
                    rules.push(vec![SlpSym::Nt(rule_of[*outer]), SlpSym::Nt(rule_of[*inner])]);
                }
                _ => {}
            }
        }
        let spine = Slp::build(rules, rule_of[b]);
        let n_tokens = slp_length(&spine);
        let totals = rule_weights(&spine, |tok| layer_nodes(g, &st, tok));

        Ok(Surgery {
            g,
            fresh,
            st,
            z,
            a,
            spine,
            n_tokens,
            totals,
            by_size,
            names: g.names().to_vec(),
            prods: g.prods().to_vec(),
            cut_copies: HashMap::new(),
        })
    }

    fn token_nt(&self, l: &Label) -> NtId {
        self.g.nt(l.as_str()).expect("tokens are context names")
    }

    // total node contribution of chain layers 1..=k
    fn layers_above(&self, k: &BigCount) -> BigCount {
        weighted_prefix(&self.spine, &self.totals, |tok| layer_nodes(self.g, &self.st, tok), k)
    }

    fn push(&mut self, prod: NormalProd) -> NtId {
        let id = self.names.len();
        self.names.push(self.fresh.name());
        self.prods.push(prod);
        id
    }

    // rank-1 pieces, outermost first, composed into one context
    fn compose(&mut self, pieces: &[NtId]) -> NtId {
        let mut it = pieces.iter().copied().rev();
        let mut ctx = it.next().expect("the chain is nonempty");
        for outer in it {
            ctx = self.push(NormalProd::Type4 { outer, inner: ctx });
        }
        ctx
    }

    // Replays chain positions [lo, hi] as a type-4 composition over the
    // original contexts, translating the sliced token program rule by
    // rule.
    fn replay(&mut self, lo: &BigCount, hi: &BigCount) -> Result<NtId> {
        let part = slp_slice(&self.spine, lo, hi)?;
        let rules = part.store_rules();
        let root = part.root_rule();
        let mut need = vec![false; root + 1];
        need[root] = true;
        for r in (0..=root).rev() {
            if !need[r] {
                continue;
            }
            for sym in &rules[r] {
                if let SlpSym::Nt(x) = sym {
                    need[*x] = true;
                }
            }
        }
        let mut nt_of: Vec<Option<NtId>> = vec![None; root + 1];
        for r in 0..=root {
            if !need[r] {
                continue;
            }
            let syms: Vec<NtId> = rules[r]
                .iter()
                .map(|sym| match sym {
                    SlpSym::Term(tok) => self.token_nt(tok),
                    SlpSym::Nt(x) => nt_of[*x].expect("rules are translated bottom-up"),
                })
                .collect();
            nt_of[r] = Some(self.compose(&syms));
        }
        Ok(nt_of[root].expect("the slice root is translated"))
    }

    // the copy of context `c` with its argument `r` removed
    fn cut_copy(&mut self, c: NtId, r: NtId) -> NtId {
        if let Some(&id) = self.cut_copies.get(&(c, r)) {
            return id;
        }
        let NormalProd::Type3 { label, before, after } = self.g.prod(c) else {
            unreachable!("chain tokens are type-3 contexts")
        };
        debug_assert_eq!(
            before.iter().chain(after).filter(|&&x| x == r).count(),
            1,
            "arguments are duplicate-free"
        );
        let keep = |v: &[NtId]| v.iter().copied().filter(|&x| x != r).collect::<Vec<_>>();
        let prod =
            NormalProd::Type3 { label: label.clone(), before: keep(before), after: keep(after) };
        let id = self.push(prod);
        self.cut_copies.insert((c, r), id);
        id
    }

    // Scans the chain bottom-up in stretches.  Within a stretch nothing
    // below position q has pending work, so the collapsed subtree at
    // position i ∈ [1, q] has size s_q plus the original weights of
    // layers i..q−1 — one binary search per candidate class finds the
    // only position matching its size.  Exact matches are probed
    // deepest-first; a hit whose layer above carries an isomorphic
    // argument cuts the chain there: the reduced layer copy absorbs the
    // suffix (the dropped duplicate's nodes are re-supplied exactly by
    // the subtree below), and the next stretch continues above the cut.
    // Deeper positions keep their subtrees and their verdicts, and the
    // rebuilt sizes strictly increase, so each class cuts at most once.
    fn run(
        mut self,
        reps: &mut [Rep],
        ord: LabelOrder,
        policy: &EqualityPolicy,
    ) -> Result<(NormalGrammar, SpinePositionSet)> {
        let one = BigCount::from(1u32);
        let two = BigCount::from(2u32);
        // q: the chain position of the rebuilt subtree; s_q: its size;
        // below: its rank-1 pieces above the argument, outermost first
        let mut q = &self.n_tokens + 1u32;
        let mut s_q = self.st.size[self.a].clone();
        let mut below: Vec<NtId> = Vec::new();
        let mut set = SpinePositionSet::default();
        'stretch: while q > one {
            let above = self.layers_above(&(&q - 1u32));
            let mut cands: Vec<(BigCount, BigCount)> = Vec::new();
            {
                let size_at = |i: &BigCount| &s_q + &above - self.layers_above(&(i - 1u32));
                for n in self.by_size.keys() {
                    if *n < s_q || *n > &s_q + &above {
                        continue;
                    }
                    let (mut lo, mut hi) = (one.clone(), q.clone());
                    while lo < hi {
                        let mid = (&lo + &hi + 1u32) >> 1;
                        if size_at(&mid) >= *n {
                            lo = mid;
                        } else {
                            hi = mid - 1u32;
                        }
                    }
                    if lo >= two && size_at(&lo) == *n {
                        cands.push((lo, n.clone()));
                    }
                }
            }
            cands.sort();
            debug_assert!(
                cands.len() <= self.by_size.values().map(Vec::len).sum::<usize>(),
                "at most one candidate position per reachable rank-0 class"
            );
            debug_assert!(
                !below.is_empty() || cands.iter().any(|(i, _)| *i == q),
                "the chain argument itself always starts as a candidate"
            );
            for (i, n) in cands.into_iter().rev() {
                let seg = if i < q { Some(self.replay(&i, &(&q - 1u32))?) } else { None };
                let matched: Option<NtId> = if below.is_empty() && i == q {
                    // the untouched chain argument — a representative
                    Some(self.a)
                } else {
                    let mut pieces: Vec<NtId> = seg.iter().copied().collect();
                    pieces.extend(below.iter().copied());
                    let ctx = self.compose(&pieces);
                    let probe = self.push(NormalProd::Type2 { outer: ctx, inner: self.a });
                    let scratch =
                        NormalGrammar::from_parts(self.names.clone(), self.prods.clone(), probe)?;
                    let key = {
                        let cf = canonical_form(&scratch.to_grammar(), ord, policy)?;
                        build_dflr(&cf).slp(cf.start())
                    };
                    let mut hit = None;
                    for &c in &self.by_size[&n] {
                        if slp_equal(&key, &class_key(reps, self.g, c, ord, policy)?, policy)? {
                            hit = Some(c);
                            break;
                        }
                    }
                    hit
                };
                let Some(r) = matched else { continue };
                // a cut needs the layer above to carry r as an argument
                let tok = slp_symbol_at(&self.spine, &(&i - 1u32))?;
                let c = self.token_nt(&tok);
                let NormalProd::Type3 { before, after, .. } = self.g.prod(c) else {
                    unreachable!("chain tokens are type-3 contexts")
                };
                if !before.contains(&r) && !after.contains(&r) {
                    continue;
                }
                let reduced = self.cut_copy(c, r);
                let mut rebuilt = vec![reduced];
                rebuilt.extend(seg);
                rebuilt.extend(below.iter().copied());
                below = rebuilt;
                s_q = &self.st.size[c] - 1u32;
                q = &i - 1u32;
                set.positions.push(i);
                continue 'stretch;
            }
            break;
        }

        debug_assert!(
            set.positions.len() <= self.by_size.values().map(Vec::len).sum::<usize>(),
            "each class can cut the chain at most once"
        );
        if set.positions.is_empty() {
            return Ok((self.g.clone(), set));
        }
        let mut pieces: Vec<NtId> = Vec::new();
        if q >= two {
            pieces.push(self.replay(&one, &(&q - 1u32))?);
        }
        pieces.extend(below.iter().copied());
        let ctx = self.compose(&pieces);
        let (z, a, start) = (self.z, self.a, self.g.start());
        self.prods[z] = NormalProd::Type2 { outer: ctx, inner: a };
        let g = NormalGrammar::from_parts(self.names, self.prods, start)?;
        Ok((g, set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{eval, parse_grammar, tree_to_dag};
    use crate::normal::{gen_random, GenParams};
    use crate::oracle::{naive_bcanon, naive_bisim};
    use crate::term::{ahu_canon, parse_term, Tree};
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

    fn bc(g: &NormalGrammar) -> NormalGrammar {
        bcanon_grammar(g, LabelOrder::BaseThenRank, &EqualityPolicy::default()).unwrap()
    }

    fn assert_iso(x: &Tree, y: &Tree) {
        let ord = LabelOrder::BaseThenRank;
        assert_eq!(ahu_canon(x, ord), ahu_canon(y, ord));
    }

    #[test]
    fn collapses_repeated_children() {
        let tri = ng("slt v1\nstart S\nS = f(A, B, C)\nA = a\nB = a\nC = a");
        let duo = ng("slt v1\nstart S\nS = f(A, B)\nA = a\nB = a");
        let want = parse_term("f(a)").unwrap();
        assert_iso(&ev(&bc(&tri)), &want);
        assert_iso(&ev(&bc(&duo)), &want);

        // nested duplicates collapse bottom-up
        let nest =
            ng("slt v1\nstart S\nS = f(A, B)\nA = g(X, Y)\nB = g(U, V)\nX = a\nY = a\nU = a\nV = a");
        assert_iso(&ev(&bc(&nest)), &parse_term("f(g(a))").unwrap());

        // repeated arguments of a context drop around the parameter
        let ctx = ng("slt v1\nstart S\nS = B(C)\nB(y) = f(A1, y, A2)\nA1 = a\nA2 = a\nC = c");
        assert_iso(&ev(&bc(&ctx)), &parse_term("f(a, c)").unwrap());
    }

    // A chain that must be cut twice, where the upper cut only exists
    // relative to the already-collapsed suffix: the original subtree
    // f(a,a) below the g-layer has size 3 and duplicates nothing, but
    // once the bottom cut shrinks it to f(a) it matches the g-layer's
    // other argument.  Candidate positions must therefore be searched
    // against the rebuilt sizes, stretch by stretch, not against the
    // original chain alone.
    const STACKED: &str = concat!(
        "slt v1\nstart Z\nZ = B(A)\n",
        "B(y) = B1(B2(y))\n",
        "B1(y) = g(Y, y)\nB2(y) = f(X, y)\n",
        "Y = f(X2)\nX = a\nX2 = a\nA = a\n",
    );

    #[test]
    fn stacked_cuts_follow_the_rebuilt_sizes() {
        let ord = LabelOrder::BaseThenRank;
        let policy = EqualityPolicy::default();
        let g = ng(STACKED);
        let t = ev(&g);
        assert_iso(&t, &parse_term("g(f(a), f(a, a))").unwrap());
        let (b, sets) = bcanon_core(&g, ord, &policy).unwrap();
        assert_iso(&ev(&b), &parse_term("g(f(a))").unwrap());
        assert_iso(&ev(&b), &naive_bcanon(&t, ord));
        // the bottom cut at the argument position first, then the upper
        // one against the rebuilt suffix
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].positions, vec![big(3), big(2)]);
    }

    fn tower(k: usize) -> String {
        let mut src = format!("slt v1\nstart Z\nZ = T{k}(A)\n");
        for j in (1..=k).rev() {
            src.push_str(&format!("T{j}(y) = T{}(T{}(y))\n", j - 1, j - 1));
        }
        src.push_str("T0(y) = f(A, y)\nA = a\n");
        src
    }

    #[test]
    fn cuts_a_chain_of_depth_two_to_the_forty() {
        let ord = LabelOrder::BaseThenRank;
        let policy = EqualityPolicy::default();
        // f(a, f(a, … f(a, a))), 2^40 layers: only the innermost f(a, a)
        // collapses; every layer above has two non-isomorphic children
        let g = ng(&tower(40));
        let n = big(1u64 << 40);
        assert_eq!(stats(&g).size[g.start()], &n * 2u32 + 1u32);
        let (b, sets) = bcanon_core(&g, ord, &policy).unwrap();
        assert_eq!(stats(&b).size[b.start()], &n * 2u32);
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].positions, vec![&n + 1u32]);
        // the same shape at a depth the oracle can check
        let small = ng(&tower(3));
        assert_iso(&ev(&bc(&small)), &naive_bcanon(&ev(&small), ord));
    }

    #[test]
    fn matches_the_explicit_oracle_on_random_trees() {
        let ord = LabelOrder::BaseThenRank;
        let mut seed = 0x5eed_b15e_u64;
        for round in 0..150 {
            let labels: &[&str] = if round % 2 == 0 { &["f", "a"] } else { &["f", "g", "a"] };
            let size = 2 + (xorshift(&mut seed) % 26) as usize;
            let t = pseudo_random_tree(&mut seed, size, labels);
            let want = naive_bcanon(&t, ord);
            assert!(want.size() <= t.size());
            let b = bc(&normalize(&tree_to_dag(&t)).unwrap());
            assert_iso(&ev(&b), &want);
        }
    }

    #[test]
    fn matches_the_explicit_oracle_on_random_grammars() {
        let ord = LabelOrder::BaseThenRank;
        let mut checked = 0;
        for seed in 0..48u64 {
            let g = gen_random(seed, &GenParams::default());
            if stats(&g).size[g.start()] > big(8_000) {
                continue;
            }
            let t = ev(&g);
            assert_iso(&ev(&bc(&g)), &naive_bcanon(&t, ord));
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} grammars were small enough");
    }

    #[test]
    fn decides_the_hand_pairs() {
        let ord = LabelOrder::BaseThenRank;
        let policy = EqualityPolicy::default();
        let tri = parse_grammar("slt v1\nstart S\nS = f(A, B, C)\nA = a\nB = a\nC = a").unwrap();
        let duo = parse_grammar("slt v1\nstart S\nS = f(A, B)\nA = a\nB = a").unwrap();
        assert!(bisim_equal(&tri, &duo, ord, &policy).unwrap());
        assert!(bisim_equal(&tri, &tri, ord, &policy).unwrap());

        let split =
            parse_grammar("slt v1\nstart S\nS = f(G1, G2)\nG1 = g(A)\nG2 = g(B)\nA = a\nB = b")
                .unwrap();
        let joint = parse_grammar("slt v1\nstart S\nS = f(G)\nG = g(A, B)\nA = a\nB = b").unwrap();
        assert!(!bisim_equal(&split, &joint, ord, &policy).unwrap());

        // sensitive to a single deep label
        let duo_b = parse_grammar("slt v1\nstart S\nS = f(A, B)\nA = a\nB = b").unwrap();
        assert!(!bisim_equal(&duo, &duo_b, ord, &policy).unwrap());
    }

    // a bisimulation-equivalent variant: one child duplicated somewhere
    fn with_duplicated_child(t: &Tree, seed: &mut u64) -> Tree {
        fn rebuild(t: &Tree, path: &[usize], pick: usize) -> Tree {
            let mut kids = t.children.clone();
            match path {
                [] => kids.push(kids[pick].clone()),
                [j, rest @ ..] => kids[*j] = rebuild(&kids[*j], rest, pick),
            }
            Tree::new(t.label.clone(), kids)
        }
        let mut sites: Vec<(Vec<usize>, usize)> = Vec::new();
        let mut stack: Vec<(&Tree, Vec<usize>)> = vec![(t, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if !node.children.is_empty() {
                sites.push((path.clone(), node.children.len()));
            }
            for (j, c) in node.children.iter().enumerate() {
                let mut p = path.clone();
                p.push(j);
                stack.push((c, p));
            }
        }
        if sites.is_empty() {
            return t.clone();
        }
        let (path, n) = &sites[(xorshift(seed) % sites.len() as u64) as usize];
        let pick = (xorshift(seed) % *n as u64) as usize;
        rebuild(t, path, pick)
    }

    #[test]
    fn agrees_with_partition_refinement_on_random_pairs() {
        let ord = LabelOrder::BaseThenRank;
        let policy = EqualityPolicy::default();
        let mut seed = 0xb151_0cab_u64;
        let (mut eq, mut ne) = (0, 0);
        for round in 0..90 {
            let size = 2 + (xorshift(&mut seed) % 14) as usize;
            let t1 = pseudo_random_tree(&mut seed, size, &["f", "a", "b"]);
            let t2 = match round % 3 {
                0 => with_duplicated_child(&with_duplicated_child(&t1, &mut seed), &mut seed),
                1 => {
                    let size = 2 + (xorshift(&mut seed) % 14) as usize;
                    pseudo_random_tree(&mut seed, size, &["f", "a", "b"])
                }
                _ => naive_bcanon(&t1, ord),
            };
            let want = naive_bisim(&t1, &t2);
            let got = bisim_equal(&tree_to_dag(&t1), &tree_to_dag(&t2), ord, &policy).unwrap();
            assert_eq!(got, want, "round {round}");
            if want {
                eq += 1;
            } else {
                ne += 1;
            }
        }
        assert!(eq >= 20 && ne >= 20, "unbalanced corpus: {eq} equal vs {ne} different");
    }

    #[test]
    fn collapse_is_a_fixed_point_under_equivalence() {
        let ord = LabelOrder::BaseThenRank;
        let policy = EqualityPolicy::default();
        let mut inspected = 0;
        for seed in 0..24u64 {
            let g = gen_random(seed, &GenParams::default());
            if stats(&g).size[g.start()] > big(8_000) {
                continue;
            }
            let b = bc(&g);
            // collapsing changes nothing up to bisimulation…
            assert!(bisim_equal(&g.to_grammar(), &b.to_grammar(), ord, &policy).unwrap());
            // …never grows the value, and is idempotent on it
            assert!(ev(&b).size() <= ev(&g).size());
            assert_iso(&ev(&bc(&b)), &ev(&b));
            inspected += 1;
        }
        assert!(inspected >= 10, "only {inspected} grammars were small enough");
    }
}
