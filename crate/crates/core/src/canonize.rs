//! Canonization of compressed trees, and rooted unordered isomorphism.
//!
//! The canon of a tree sorts every sibling list ascending in length-lex
//! order ([`crate::term::ahu_canon`] does exactly that on explicit trees).
//! [`canonize`] applies the same reordering directly to a normal grammar,
//! processing rank-0 nonterminals bottom-up so that when `Z` is reached,
//! every rank-0 value strictly below it is already canonical.  A type-1
//! production just sorts its argument list.  A type-2 production
//! `Z → B(A)` derives through a chain of elementary contexts
//! `B ⇒ B1 B2 ⋯ BN (·)`, possibly astronomically long; the chain is kept
//! as a string program over context names and rewritten block-wise: each
//! block is the run of chain positions whose subordinate subtree falls
//! into the same gap between consecutive reference values, and within a
//! block every context is replaced by a copy whose arguments are sorted
//! around the parameter.  Sizes, breakpoints, and comparisons all run on
//! the compressed form.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};

use crate::grammar::{ensure_ranked, Grammar, NtId};
use crate::normal::{dedup_equal, dedup_equal_with_map, normalize, NormalGrammar, NormalProd};
use crate::slp::{
    build_dflr, compare_values, rule_weights, slp_equal, slp_length, slp_slice, slp_symbol_at,
    weighted_prefix, DflrSlps, EqualityPolicy, Seg, SegCmp, Slp, SlpSym,
};
use crate::term::{Label, LabelOrder, SUBDIVISION_LABEL};
use crate::{BigCount, Error, Result};

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Rewrites `g` into a normal grammar deriving the canon of its value: the
/// same tree with every sibling list sorted ascending in length-lex order
/// under `ord`.  Terminal labels must be ranked (without ranks, sibling
/// counts are not recoverable from traversal strings); the grammar is
/// deduplicated before the first phase and after every phase, keeping the
/// reference values pairwise distinct and the output size tame.
pub fn canonize(
    g: &NormalGrammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<NormalGrammar> {
    require_ranked(g)?;
    let mut fresh = Fresh::new(g);
    let mut g = dedup_equal(g, policy)?;
    // names whose values are canonical already — a property of the value,
    // so it survives merges
    let mut done: HashSet<String> = HashSet::new();
    loop {
        let next =
            g.topo().iter().copied().find(|&a| g.rank(a) == 0 && !done.contains(g.name(a)));
        let Some(z) = next else { break };
        let z_name = g.name(z).to_string();
        let out = phase(&g, z, ord, policy, &mut fresh)?;
        done.insert(z_name);
        let (merged, map) = dedup_equal_with_map(&out, policy)?;
        let mut kept = HashSet::new();
        for (a, rep) in map.iter().enumerate() {
            if done.contains(out.name(a)) {
                if let Some(b) = *rep {
                    kept.insert(merged.name(b).to_string());
                }
            }
        }
        done = kept;
        g = merged;
    }
    Ok(g)
}

/// Decides whether the values of two grammars are isomorphic as rooted
/// unordered trees.  Both run through the full pipeline — ranking,
/// normalization, deduplication, canonization — and isomorphism is then
/// plain equality of the two traversal programs.
pub fn iso_rooted(
    g1: &Grammar,
    g2: &Grammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<bool> {
    let c1 = canonical_form(g1, ord, policy)?;
    let c2 = canonical_form(g2, ord, policy)?;
    let (d1, d2) = (build_dflr(&c1), build_dflr(&c2));
    slp_equal(&d1.slp(c1.start()), &d2.slp(c2.start()), policy)
}

// the full pipeline from an arbitrary grammar of rank ≤ 1
pub(crate) fn canonical_form(
    g: &Grammar,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<NormalGrammar> {
    let ranked = ensure_ranked(g)?;
    let normal = normalize(&ranked)?;
    canonize(&normal, ord, policy)
}

/// The decomposition of one context chain into canonical-order blocks.
#[derive(Debug)]
pub struct BlockSplit {
    /// Breakpoints `k_m, …, k_1` (positions in `1..=N+1` for a chain of
    /// `N` contexts, non-decreasing in this order): `k_i` is the last
    /// chain position whose canonized suffix tree is still ≥ the `i`-th
    /// reference value.
    pub breakpoints: Vec<BigCount>,
    /// Token programs of the blocks `u_m, …, u_0` (one token per context
    /// name); they concatenate to the whole chain, empty blocks are ε.
    pub blocks: Vec<Slp>,
    /// References `S_1 < ⋯ < S_m`: the rank-0 nonterminals the chain's
    /// owner uses, strictly ascending by value.
    pub refs: Vec<NtId>,
}

/// Computes the block decomposition of `z`'s context chain.  `z` must
/// carry a type-2 production, and every rank-0 value strictly below `z`
/// must already be canonical (as holds for the active nonterminal during
/// [`canonize`]); on other inputs the split is still well defined but
/// describes the current, non-canonical values.
pub fn block_split(
    g: &NormalGrammar,
    z: NtId,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<BlockSplit> {
    require_ranked(g)?;
    let NormalProd::Type2 { outer, inner } = *g.prod(z) else {
        return Err(Error::Grammar(format!(
            "{} does not have a context-chain (type-2) production",
            g.name(z)
        )));
    };
    let mut fresh = Fresh::new(g);
    let mut ph = Phase2::new(g, z, outer, inner, ord, policy)?;
    let ks = ph.breakpoints(&mut fresh)?;
    let m = ph.s_list.len();
    let one = BigCount::from(1u32);
    let mut blocks = Vec::with_capacity(m + 1);
    for j in (0..=m).rev() {
        let lo = if j == m { one.clone() } else { ks[j + 1].clone() };
        let hi = &ks[j] - 1u32;
        blocks.push(if lo <= hi {
            slp_slice(&ph.spine, &lo, &hi)?
        } else {
            Slp::build(vec![Vec::new()], 0)
        });
    }
    let breakpoints = ks[1..].iter().rev().cloned().collect();
    Ok(BlockSplit { breakpoints, blocks, refs: ph.s_list })
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

fn require_ranked(g: &NormalGrammar) -> Result<()> {
    for p in g.prods() {
        let (label, k) = match p {
            NormalProd::Type1 { label, args } => (label, args.len()),
            NormalProd::Type3 { label, before, after } => (label, before.len() + after.len() + 1),
            _ => continue,
        };
        match label.base_and_rank() {
            (base, Some(r))
                if (!base.contains('#') || base == SUBDIVISION_LABEL) && r as usize == k => {}
            _ => {
                return Err(Error::Grammar(format!(
                    "canonization needs ranked labels, but {label} does not carry rank {k}"
                )))
            }
        }
    }
    Ok(())
}

// fresh nonterminal names, unique across a whole canonization run; names
// are never reused, even between phases
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
            let cand = format!("_C{}", self.next);
            self.next += 1;
            if self.used.insert(cand.clone()) {
                return cand;
            }
        }
    }
}

// stable ascending permutation of 0..n under a fallible comparator
fn sort_stable(
    n: usize,
    mut cmp: impl FnMut(usize, usize) -> Result<Ordering>,
) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let mut pos = out.len();
        while pos > 0 && cmp(out[pos - 1], i)? == Ordering::Greater {
            pos -= 1;
        }
        out.insert(pos, i);
    }
    Ok(out)
}

// one phase: make val(z) canonical, assuming every rank-0 value strictly
// below z is canonical already
fn phase(
    g: &NormalGrammar,
    z: NtId,
    ord: LabelOrder,
    policy: &EqualityPolicy,
    fresh: &mut Fresh,
) -> Result<NormalGrammar> {
    match g.prod(z) {
        NormalProd::Type1 { label, args } => {
            let d = build_dflr(g);
            let cmp = SegCmp::new(d.store(), ord, policy);
            let wholes: Vec<Vec<Seg>> = args.iter().map(|&x| cmp.whole(d.slp_rule(x))).collect();
            let perm = sort_stable(args.len(), |i, j| cmp.compare(&wholes[i], &wholes[j]))?;
            let sorted = perm.iter().map(|&i| args[i]).collect();
            let mut prods = g.prods().to_vec();
            prods[z] = NormalProd::Type1 { label: label.clone(), args: sorted };
            NormalGrammar::from_parts(g.names().to_vec(), prods, g.start())
        }
        NormalProd::Type2 { outer, inner } => {
            Phase2::new(g, z, *outer, *inner, ord, policy)?.rewrite(fresh)
        }
        _ => unreachable!("rank-0 nonterminals have type-1 or type-2 productions"),
    }
}

// A type-2 phase in progress: Z → B(A), with the chain B ⇒ B1⋯BN(·) held
// as a token string program (`spine`) and everything the phase emits
// appended to working copies of the grammar's name and production tables.
// Probe nonterminals left behind by breakpoint queries become unreachable
// junk that the final rebuild prunes.
struct Phase2<'g> {
    g: &'g NormalGrammar,
    z: NtId,
    a: NtId,
    ord: LabelOrder,
    policy: &'g EqualityPolicy,
    d: DflrSlps,
    cmp: SegCmp,
    spine: Slp,
    n_tokens: BigCount,
    // per-token traversal-length weights of the contexts, for |t_k|
    pre_totals: Vec<BigCount>,
    suf_totals: Vec<BigCount>,
    len_pre: BigCount,
    len_suf: BigCount,
    len_a: BigCount,
    a_rule: usize,
    // references sorted strictly ascending by value; s_pos[x] is the
    // 1-based list position of x, 0 when x is not a reference
    s_list: Vec<NtId>,
    s_pos: Vec<usize>,
    names: Vec<String>,
    prods: Vec<NormalProd>,
    // block-j argument-reordered copies of type-3 contexts, shared
    // between probes and the final emission
    copies: HashMap<(usize, NtId), NtId>,
}

impl<'g> Phase2<'g> {
    fn new(
        g: &'g NormalGrammar,
        z: NtId,
        b: NtId,
        a: NtId,
        ord: LabelOrder,
        policy: &'g EqualityPolicy,
    ) -> Result<Phase2<'g>> {
        let d = build_dflr(g);
        let cmp = SegCmp::new(d.store(), ord, policy);

        // the references: every rank-0 nonterminal z uses, except z itself
        let mut reach = vec![false; g.nt_count()];
        reach[z] = true;
        let mut queue = VecDeque::from([z]);
        while let Some(x) = queue.pop_front() {
            let mut visit = |y: NtId| {
                if !reach[y] {
                    reach[y] = true;
                    queue.push_back(y);
                }
            };
            match g.prod(x) {
                NormalProd::Type1 { args, .. } => args.iter().copied().for_each(&mut visit),
                NormalProd::Type3 { before, after, .. } => {
                    before.iter().chain(after).copied().for_each(&mut visit)
                }
                NormalProd::Type2 { outer, inner } | NormalProd::Type4 { outer, inner } => {
                    visit(*outer);
                    visit(*inner);
                }
            }
        }
        let refs: Vec<NtId> =
            (0..g.nt_count()).filter(|&x| reach[x] && x != z && g.rank(x) == 0).collect();
        let wholes: Vec<Vec<Seg>> = refs.iter().map(|&x| cmp.whole(d.slp_rule(x))).collect();
        let perm = sort_stable(refs.len(), |i, j| cmp.compare(&wholes[i], &wholes[j]))?;
        let s_list: Vec<NtId> = perm.iter().map(|&i| refs[i]).collect();
        for w in perm.windows(2) {
            if cmp.compare(&wholes[w[0]], &wholes[w[1]])? == Ordering::Equal {
                return Err(Error::Grammar(format!(
                    "{} and {} derive equal values; deduplicate before canonizing",
                    g.name(refs[w[0]]),
                    g.name(refs[w[1]])
                )));
            }
        }
        let mut s_pos = vec![0usize; g.nt_count()];
        for (i, &s) in s_list.iter().enumerate() {
            s_pos[s] = i + 1;
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

        let store = d.store().clone();
        let nt_of = |l: &Label| g.nt(l.as_str()).expect("tokens are context names");
        let pre_totals =
            rule_weights(&spine, |l| store.rule_len(d.pre_rule(nt_of(l))).clone());
        let suf_totals =
            rule_weights(&spine, |l| store.rule_len(d.suf_rule(nt_of(l))).clone());
        let len_pre = store.rule_len(d.pre_rule(b)).clone();
        let len_suf = store.rule_len(d.suf_rule(b)).clone();
        let a_rule = d.slp_rule(a);
        let len_a = store.rule_len(a_rule).clone();

        Ok(Phase2 {
            g,
            z,
            a,
            ord,
            policy,
            d,
            cmp,
            spine,
            n_tokens,
            pre_totals,
            suf_totals,
            len_pre,
            len_suf,
            len_a,
            a_rule,
            s_list,
            s_pos,
            names: g.names().to_vec(),
            prods: g.prods().to_vec(),
            copies: HashMap::new(),
        })
    }

    fn token_nt(&self, l: &Label) -> NtId {
        self.g.nt(l.as_str()).expect("tokens are context names")
    }

    // |t_k| for k ∈ [1, N+1], where t_k is the value of B_k⋯B_N(A): the
    // first k−1 chain layers' contributions drop off both traversal halves
    fn size_tk(&self, k: &BigCount) -> BigCount {
        let km1 = k - 1u32;
        let store = self.d.store();
        let l = weighted_prefix(
            &self.spine,
            &self.pre_totals,
            |t| store.rule_len(self.d.pre_rule(self.token_nt(t))).clone(),
            &km1,
        );
        let m = weighted_prefix(
            &self.spine,
            &self.suf_totals,
            |t| store.rule_len(self.d.suf_rule(self.token_nt(t))).clone(),
            &km1,
        );
        (&self.len_pre - l) + &self.len_a + (&self.len_suf - m)
    }

    // Breakpoints k_0 = N+1 ≥ k_1 ≥ ⋯ ≥ k_m ≥ 1, where k_i is the largest
    // k with canon(t_k) ≥llex val(S_i).  Since |t_k| strictly decreases in
    // k and length-lex order is size-first, nearly all probes are size
    // comparisons; per reference at most one position can tie the size,
    // and only there do actual symbols matter — of the *canonized* suffix.
    // (Comparing the raw t_k instead is wrong: reordering deeper layers
    // can flip a lex comparison at equal sizes, misplacing the cut.)
    fn breakpoints(&mut self, fresh: &mut Fresh) -> Result<Vec<BigCount>> {
        let one = BigCount::from(1u32);
        let mut ks: Vec<BigCount> = vec![&self.n_tokens + 1u32];
        for i in 1..=self.s_list.len() {
            let s = self.s_list[i - 1];
            let s_size = self.d.store().rule_len(self.d.slp_rule(s)).clone();
            // the largest k ≤ k_{i−1} with |t_k| ≥ |S_i|; references are
            // proper subtrees of t_1, so k = 1 always qualifies
            let (mut lo, mut hi) = (one.clone(), ks[i - 1].clone());
            while lo < hi {
                let mid = (&lo + &hi + 1u32) >> 1;
                if self.size_tk(&mid) >= s_size {
                    lo = mid;
                } else {
                    hi = mid - 1u32;
                }
            }
            let kk = lo;
            let ki = if self.size_tk(&kk) > s_size {
                kk
            } else {
                match self.canon_suffix_cmp(&kk, i, s, &ks, fresh)? {
                    Ordering::Less => &kk - 1u32,
                    _ => kk,
                }
            };
            debug_assert!(ki >= one);
            ks.push(ki);
        }
        Ok(ks)
    }

    // Orders canon(t_kk) against val(S_i) when their sizes tie.  Every
    // layer at position > kk has a suffix tree smaller than S_i, so its
    // block — and hence its argument order in the canon — is already fixed
    // by k_1…k_{i−1}; the probe materializes those reordered layers as a
    // throwaway chain over A and compares values in a scratch grammar.
    fn canon_suffix_cmp(
        &mut self,
        kk: &BigCount,
        i: usize,
        s: NtId,
        ks: &[BigCount],
        fresh: &mut Fresh,
    ) -> Result<Ordering> {
        if *kk == &self.n_tokens + 1u32 {
            // t_{N+1} is val(A), canonical as it stands
            return self
                .cmp
                .compare(&self.cmp.whole(self.a_rule), &self.cmp.whole(self.d.slp_rule(s)));
        }
        let start = kk + 1u32;
        // the context at position kk itself: its subordinate subtree is
        // canon(t_{kk+1}), which lies below S_i, in the block of the last
        // earlier reference its canonized suffix still dominates
        let jh = (1..i).rev().find(|&j| ks[j] >= start).unwrap_or(0);
        let head_tok = slp_symbol_at(&self.spine, kk)?;
        let head = self.copy(jh, self.token_nt(&head_tok), fresh);
        let mut parts = vec![head];
        for j in (0..i).rev() {
            let hi = &ks[j] - 1u32;
            let lo =
                if j + 1 < i { start.clone().max(ks[j + 1].clone()) } else { start.clone() };
            if lo <= hi {
                parts.push(self.chain_for(&lo, &hi, j, fresh)?);
            }
        }
        let mut ctx = *parts.last().expect("the head part is always present");
        for &x in parts[..parts.len() - 1].iter().rev() {
            ctx = self.push(fresh, NormalProd::Type4 { outer: x, inner: ctx });
        }
        let probe = self.push(fresh, NormalProd::Type2 { outer: ctx, inner: self.a });
        // a pair root keeps both sides reachable in the scratch grammar
        let pair = self.push(
            fresh,
            NormalProd::Type1 { label: Label::new("pair").with_rank(2), args: vec![probe, s] },
        );
        let probe_name = self.names[probe].clone();
        let pg = NormalGrammar::from_parts(self.names.clone(), self.prods.clone(), pair)?;
        let pt = pg.nt(&probe_name).expect("probe chain is reachable from the pair");
        let ps = pg.nt(self.g.name(s)).expect("reference is reachable from the pair");
        compare_values(&pg, pt, ps, self.ord, self.policy)
    }

    // a rank-1 nonterminal deriving the contexts at chain positions
    // lo..=hi, each taken as its block-j copy: the sliced token program is
    // replayed rule by rule as a type-4 chain
    fn chain_for(
        &mut self,
        lo: &BigCount,
        hi: &BigCount,
        j: usize,
        fresh: &mut Fresh,
    ) -> Result<NtId> {
        let part = slp_slice(&self.spine, lo, hi)?;
        let rules = part.store_rules();
        let root = part.root_rule();
        let mut need = vec![false; root + 1];
        need[root] = true;
        for r in (0..=root).rev() {
            if need[r] {
                for sym in &rules[r] {
                    if let SlpSym::Nt(x) = sym {
                        need[*x] = true;
                    }
                }
            }
        }
        let mut nt_of: Vec<Option<NtId>> = vec![None; root + 1];
        for (r, rule) in rules.iter().enumerate().take(root + 1) {
            if !need[r] {
                continue;
            }
            let mut syms = Vec::with_capacity(rule.len());
            for sym in rule {
                syms.push(match sym {
                    SlpSym::Term(tok) => self.copy(j, self.token_nt(tok), fresh),
                    SlpSym::Nt(x) => nt_of[*x].expect("rules are translated bottom-up"),
                });
            }
            let mut it = syms.into_iter().rev();
            let mut cur = it.next().expect("token rules are never empty");
            for outer in it {
                cur = self.push(fresh, NormalProd::Type4 { outer, inner: cur });
            }
            nt_of[r] = Some(cur);
        }
        Ok(nt_of[root].expect("the slice root is reachable"))
    }

    // The block-j copy of context c: same label, arguments sorted by
    // value with exactly those ≤ S_j moved before the parameter.  Any
    // block-j occurrence has a subordinate subtree in [S_j, S_{j+1}), so
    // this is precisely ascending order around it.
    fn copy(&mut self, j: usize, c: NtId, fresh: &mut Fresh) -> NtId {
        if let Some(&id) = self.copies.get(&(j, c)) {
            return id;
        }
        let NormalProd::Type3 { label, before, after } = self.g.prod(c) else {
            unreachable!("chain tokens are type-3 contexts");
        };
        let mut args: Vec<NtId> = before.iter().chain(after).copied().collect();
        debug_assert!(args.iter().all(|&x| self.s_pos[x] > 0));
        args.sort_by_key(|&x| self.s_pos[x]);
        let nu = args.iter().filter(|&&x| self.s_pos[x] <= j).count();
        let (bef, aft) = args.split_at(nu);
        let prod = NormalProd::Type3 {
            label: label.clone(),
            before: bef.to_vec(),
            after: aft.to_vec(),
        };
        let id = self.push(fresh, prod);
        self.copies.insert((j, c), id);
        id
    }

    fn push(&mut self, fresh: &mut Fresh, prod: NormalProd) -> NtId {
        let id = self.names.len();
        self.names.push(fresh.name());
        self.prods.push(prod);
        id
    }

    // computes the blocks and replaces z's production by the block chain
    fn rewrite(mut self, fresh: &mut Fresh) -> Result<NormalGrammar> {
        let ks = self.breakpoints(fresh)?;
        let m = self.s_list.len();
        let one = BigCount::from(1u32);
        // blocks top to bottom: u_j covers positions [k_{j+1}, k_j − 1],
        // with k_{m+1} = 1; empty blocks vanish
        let mut xs: Vec<NtId> = Vec::new();
        for j in (0..=m).rev() {
            let lo = if j == m { one.clone() } else { ks[j + 1].clone() };
            let hi = &ks[j] - 1u32;
            if lo <= hi {
                xs.push(self.chain_for(&lo, &hi, j, fresh)?);
            }
        }
        let mut ctx = *xs.last().expect("the chain is nonempty");
        for &x in xs[..xs.len() - 1].iter().rev() {
            ctx = self.push(fresh, NormalProd::Type4 { outer: x, inner: ctx });
        }
        self.prods[self.z] = NormalProd::Type2 { outer: ctx, inner: self.a };
        NormalGrammar::from_parts(self.names, self.prods, self.g.start())
    }
}

// ---------------------------------------------------------------------------
