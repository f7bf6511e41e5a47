//! Straight-line string programs over node labels.
//!
//! The traversal string dflr(t) lists the labels of t depth-first
//! left-to-right.  A normal grammar compresses into SLPs for these strings
//! ([`build_dflr`]), and everything downstream — equality, length-lex
//! comparison, region extraction, random access — runs on the compressed
//! form with big-integer positions.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use num_traits::ToPrimitive;

use crate::grammar::NtId;
use crate::normal::{NormalGrammar, NormalProd};
use crate::term::{Label, LabelOrder};
use crate::{BigCount, Error, Result};

/// One symbol on an SLP right-hand side.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SlpSym {
    Term(Label),
    Nt(usize),
}

#[derive(Debug)]
pub(crate) struct SlpStore {
    rules: Vec<Vec<SlpSym>>,
    lens: Vec<BigCount>,
}

impl SlpStore {
    pub(crate) fn rule_len(&self, rule: usize) -> &BigCount {
        &self.lens[rule]
    }
}

/// A string SLP: flat rules (possibly empty, arbitrary width) where rule
/// `i` references only rules `j < i`, so acyclicity is syntactic and
/// expansion lengths are precomputed in one forward pass.  Cheap to clone;
/// slices of the same program share the rule store where possible.
#[derive(Clone, Debug)]
pub struct Slp {
    store: Arc<SlpStore>,
    root: usize,
}

fn sym_len<'a>(sym: &SlpSym, lens: &'a [BigCount], one: &'a BigCount) -> &'a BigCount {
    match sym {
        SlpSym::Term(_) => one,
        SlpSym::Nt(j) => &lens[*j],
    }
}

fn compute_lens(rules: &[Vec<SlpSym>]) -> Vec<BigCount> {
    let one = BigCount::from(1u32);
    let mut lens: Vec<BigCount> = Vec::with_capacity(rules.len());
    for (i, rule) in rules.iter().enumerate() {
        let mut n = BigCount::default();
        for sym in rule {
            if let SlpSym::Nt(j) = sym {
                assert!(*j < i, "rule {i} may only reference earlier rules");
            }
            n += sym_len(sym, &lens, &one);
        }
        lens.push(n);
    }
    lens
}

impl Slp {
    /// Builds an SLP from flat rules.  Panics if rule `i` references a rule
    /// `j ≥ i` (the forward-reference discipline is what makes every other
    /// operation a single pass).
    pub fn build(rules: Vec<Vec<SlpSym>>, root: usize) -> Slp {
        assert!(root < rules.len(), "root rule out of range");
        let lens = compute_lens(&rules);
        Slp { store: Arc::new(SlpStore { rules, lens }), root }
    }

    pub(crate) fn store_rules(&self) -> &[Vec<SlpSym>] {
        &self.store.rules
    }

    pub(crate) fn root_rule(&self) -> usize {
        self.root
    }
}

/// Debug dump mirroring the grammar format: one `S<i> = sym …` line per
/// rule, root first.
impl fmt::Display for Slp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "start S{}", self.root)?;
        for (i, rule) in self.store.rules.iter().enumerate() {
            write!(f, "S{i} =")?;
            for sym in rule {
                match sym {
                    SlpSym::Term(l) => write!(f, " {l}")?,
                    SlpSym::Nt(j) => write!(f, " S{j}")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Exact expansion length.
pub fn slp_length(s: &Slp) -> BigCount {
    s.store.lens[s.root].clone()
}

/// Expands the value string, refusing beyond `max` symbols.
pub fn slp_expand(s: &Slp, max: usize) -> Result<Vec<Label>> {
    let len = &s.store.lens[s.root];
    if *len > BigCount::from(max as u64) {
        return Err(Error::ExactOverflow { len: len.clone(), max: BigCount::from(max as u64) });
    }
    let mut out = Vec::with_capacity(len.to_usize().expect("bounded by max"));
    let mut stack: Vec<(usize, usize)> = vec![(s.root, 0)];
    while let Some((r, i)) = stack.pop() {
        if let Some(sym) = s.store.rules[r].get(i) {
            stack.push((r, i + 1));
            match sym {
                SlpSym::Term(l) => out.push(l.clone()),
                SlpSym::Nt(j) => stack.push((*j, 0)),
            }
        }
    }
    Ok(out)
}

/// The `i`-th symbol (1-based) of the value string, found by descending
/// the rules with length arithmetic.
pub fn slp_symbol_at(s: &Slp, i: &BigCount) -> Result<Label> {
    if *i < BigCount::from(1u32) || *i > s.store.lens[s.root] {
        return Err(Error::SliceRange {
            lo: i.clone(),
            hi: i.clone(),
            len: s.store.lens[s.root].clone(),
        });
    }
    Ok(symbol_in(&s.store, s.root, i))
}

// the q-th symbol of rule's expansion; 1 ≤ q ≤ len(rule) is the caller's duty
fn symbol_in(store: &SlpStore, rule: usize, q: &BigCount) -> Label {
    let one = BigCount::from(1u32);
    let mut q = q.clone();
    let mut rule = rule;
    'down: loop {
        for sym in &store.rules[rule] {
            match sym {
                SlpSym::Term(l) => {
                    if q == one {
                        return l.clone();
                    }
                    q -= 1u32;
                }
                SlpSym::Nt(j) => {
                    if q <= store.lens[*j] {
                        rule = *j;
                        continue 'down;
                    }
                    q -= &store.lens[*j];
                }
            }
        }
        unreachable!("position checked against the total length");
    }
}

// index of the symbol of `rule` containing position q, and the position
// within that symbol (both 1-based; zero-width symbols never contain)
fn locate(rule: &[SlpSym], lens: &[BigCount], q: &BigCount) -> (usize, BigCount) {
    let one = BigCount::from(1u32);
    let mut q = q.clone();
    for (i, sym) in rule.iter().enumerate() {
        let w = sym_len(sym, lens, &one);
        if q <= *w {
            return (i, q);
        }
        q -= w;
    }
    unreachable!("position checked against the rule length");
}

// collects freshly cut rules on top of a read-only base store
struct Cutter<'a> {
    base: &'a SlpStore,
    extra: Vec<(Vec<SlpSym>, BigCount)>,
}

impl<'a> Cutter<'a> {
    fn len_of(&self, id: usize) -> &BigCount {
        if id < self.base.lens.len() {
            &self.base.lens[id]
        } else {
            &self.extra[id - self.base.lens.len()].1
        }
    }

    fn push(&mut self, rule: Vec<SlpSym>) -> usize {
        let one = BigCount::from(1u32);
        let mut n = BigCount::default();
        for sym in &rule {
            n += match sym {
                SlpSym::Term(_) => &one,
                SlpSym::Nt(j) => self.len_of(*j),
            };
        }
        self.extra.push((rule, n));
        self.base.rules.len() + self.extra.len() - 1
    }

    // the suffix of rule `j` from position `from` (2 ≤ from ≤ len(j)),
    // as a symbol to splice into a wider rule
    fn suffix(&mut self, j: usize, from: BigCount) -> SlpSym {
        let one = BigCount::from(1u32);
        let mut path: Vec<(usize, usize)> = Vec::new();
        let (mut j, mut from) = (j, from);
        let leaf = loop {
            debug_assert!(from > one);
            let (i, local) = locate(&self.base.rules[j], &self.base.lens, &from);
            path.push((j, i));
            match &self.base.rules[j][i] {
                SlpSym::Term(l) => break SlpSym::Term(l.clone()),
                SlpSym::Nt(k) => {
                    if local == one {
                        break SlpSym::Nt(*k);
                    }
                    j = *k;
                    from = local;
                }
            }
        };
        let mut cur = leaf;
        for &(rid, ci) in path.iter().rev() {
            let mut rule = vec![cur];
            rule.extend(self.base.rules[rid][ci + 1..].iter().cloned());
            cur = SlpSym::Nt(self.push(rule));
        }
        cur
    }

    // the prefix of rule `j` up to position `to` (1 ≤ to < len(j))
    fn prefix(&mut self, j: usize, to: BigCount) -> SlpSym {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let (mut j, mut to) = (j, to);
        let leaf = loop {
            let (i, local) = locate(&self.base.rules[j], &self.base.lens, &to);
            path.push((j, i));
            match &self.base.rules[j][i] {
                SlpSym::Term(l) => break SlpSym::Term(l.clone()),
                SlpSym::Nt(k) => {
                    if local == self.base.lens[*k] {
                        break SlpSym::Nt(*k);
                    }
                    j = *k;
                    to = local;
                }
            }
        };
        let mut cur = leaf;
        for &(rid, ci) in path.iter().rev() {
            let mut rule = self.base.rules[rid][..ci].to_vec();
            rule.push(cur);
            cur = SlpSym::Nt(self.push(rule));
        }
        cur
    }
}

/// An SLP for the region `val(s)[l..=r]` (1-based, inclusive).  Adds at
/// most two root-to-leaf chains of cut rules on top of the input rules;
/// when the region is exactly a rule's expansion the store is shared.
pub fn slp_slice(s: &Slp, l: &BigCount, r: &BigCount) -> Result<Slp> {
    let one = BigCount::from(1u32);
    if *l < one || l > r || *r > s.store.lens[s.root] {
        return Err(Error::SliceRange {
            lo: l.clone(),
            hi: r.clone(),
            len: s.store.lens[s.root].clone(),
        });
    }

    // descend while the region covers a single symbol exactly or sits
    // strictly inside one nonterminal
    let (mut rule, mut l, mut r) = (s.root, l.clone(), r.clone());
    let (il, ol, ir, or_) = loop {
        if l == one && r == s.store.lens[rule] {
            return Ok(Slp { store: s.store.clone(), root: rule });
        }
        let (il, ol) = locate(&s.store.rules[rule], &s.store.lens, &l);
        let (ir, or_) = locate(&s.store.rules[rule], &s.store.lens, &r);
        if il != ir {
            break (il, ol, ir, or_);
        }
        match &s.store.rules[rule][il] {
            SlpSym::Term(t) => {
                // l == r on a terminal: a one-symbol program
                let rules = vec![vec![SlpSym::Term(t.clone())]];
                return Ok(Slp { store: Arc::new(SlpStore { lens: compute_lens(&rules), rules }), root: 0 });
            }
            SlpSym::Nt(j) => {
                rule = *j;
                l = ol;
                r = or_;
            }
        }
    };

    let mut cutter = Cutter { base: &s.store, extra: Vec::new() };
    let mut root_rule: Vec<SlpSym> = Vec::new();
    root_rule.push(match &s.store.rules[rule][il] {
        sym if ol == one => sym.clone(),
        SlpSym::Nt(j) => cutter.suffix(*j, ol),
        SlpSym::Term(_) => unreachable!("a terminal is entered at position 1"),
    });
    root_rule.extend(s.store.rules[rule][il + 1..ir].iter().cloned());
    root_rule.push(match &s.store.rules[rule][ir] {
        sym if *sym_len(sym, &s.store.lens, &one) == or_ => sym.clone(),
        SlpSym::Nt(j) => cutter.prefix(*j, or_),
        SlpSym::Term(_) => unreachable!("a terminal is left at position 1"),
    });
    let root = cutter.push(root_rule);

    let mut rules = s.store.rules.clone();
    let mut lens = s.store.lens.clone();
    for (rule, len) in cutter.extra {
        rules.push(rule);
        lens.push(len);
    }
    Ok(Slp { store: Arc::new(SlpStore { rules, lens }), root })
}

// ---------------------------------------------------------------------------
// Equality
// ---------------------------------------------------------------------------

/// How string equality is decided: exact expansion up to a threshold,
/// Karp–Rabin fingerprints modulo `prime_count` seeded ~62-bit primes
/// beyond it.  `prime_count = 0` disables fingerprinting, making every
/// comparison past the threshold an error instead of a Monte Carlo answer.
///
/// Fingerprinting is one-sided: it can only err by calling unequal strings
/// equal, with probability about `(len / 2^61)^prime_count` per query.
#[derive(Clone, Debug)]
pub struct EqualityPolicy {
    pub prime_count: usize,
    pub seed: u64,
    pub exact_threshold: u64,
}

impl Default for EqualityPolicy {
    fn default() -> EqualityPolicy {
        EqualityPolicy { prime_count: 3, seed: 0, exact_threshold: 1_000_000 }
    }
}

fn splitmix(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mulmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn powmod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod(acc, b, p);
        }
        b = mulmod(b, b, p);
        e >>= 1;
    }
    acc
}

// deterministic Miller–Rabin; this witness set is exact for all u64
fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d & 1 == 0 {
        d >>= 1;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn prime_from(v: u64) -> u64 {
    // odd candidate in [2^61, 2^62)
    let mut c = (v & ((1 << 61) - 1)) | (1 << 61) | 1;
    while !is_prime_u64(c) {
        c += 2;
    }
    c
}

/// Seeded fingerprinting state: the prime moduli, one Karp–Rabin base per
/// prime, and the label-code hash.  Everything derives from the policy
/// seed, so verdicts are reproducible.
pub struct FingerprintCtx {
    primes: Vec<u64>,
    bases: Vec<u64>,
    seed: u64,
}

impl FingerprintCtx {
    pub fn new(policy: &EqualityPolicy) -> FingerprintCtx {
        let mut x = policy.seed ^ 0x9e37_79b9_7f4a_7c15;
        let primes: Vec<u64> = (0..policy.prime_count).map(|_| prime_from(splitmix(&mut x))).collect();
        let bases = primes.iter().map(|&p| 2 + splitmix(&mut x) % (p - 3)).collect();
        FingerprintCtx { primes, bases, seed: policy.seed }
    }

    fn code(&self, k: usize, label: &Label) -> u64 {
        // seeded FNV-1a over the label text
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.seed.rotate_left(17);
        for b in label.as_str().bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        h % self.primes[k]
    }

    // per rule and prime: (fingerprint of the expansion, base^len mod p)
    fn table(&self, store: &SlpStore) -> Vec<Vec<(u64, u64)>> {
        let mut out: Vec<Vec<(u64, u64)>> = Vec::with_capacity(store.rules.len());
        for rule in &store.rules {
            let row = (0..self.primes.len())
                .map(|k| {
                    let (p, b) = (self.primes[k], self.bases[k]);
                    let (mut fp, mut pow) = (0u64, 1u64);
                    for sym in rule {
                        let (sfp, spow) = match sym {
                            SlpSym::Term(l) => (self.code(k, l), b),
                            SlpSym::Nt(j) => out[*j][k],
                        };
                        fp = (mulmod(fp, spow, p) + sfp) % p;
                        pow = mulmod(pow, spow, p);
                    }
                    (fp, pow)
                })
                .collect();
            out.push(row);
        }
        out
    }

    /// Fingerprint of one program's value, usable as a grouping key for
    /// strings whose lengths were already compared.
    pub fn fingerprint(&self, s: &Slp) -> Vec<u64> {
        self.table(&s.store)[s.root].iter().map(|&(fp, _)| fp).collect()
    }
}

/// Decides `val(a) = val(b)`.  Lengths are compared exactly first; short
/// strings are expanded and compared; longer ones fall back to
/// fingerprints (or an error when the policy forbids them).
pub fn slp_equal(a: &Slp, b: &Slp, policy: &EqualityPolicy) -> Result<bool> {
    let (la, lb) = (&a.store.lens[a.root], &b.store.lens[b.root]);
    if la != lb {
        return Ok(false);
    }
    if *la <= BigCount::from(policy.exact_threshold) {
        let max = policy.exact_threshold as usize;
        return Ok(slp_expand(a, max)? == slp_expand(b, max)?);
    }
    if policy.prime_count == 0 {
        return Err(Error::ExactOverflow {
            len: la.clone(),
            max: BigCount::from(policy.exact_threshold),
        });
    }
    let ctx = FingerprintCtx::new(policy);
    Ok(ctx.fingerprint(a) == ctx.fingerprint(b))
}

// ---------------------------------------------------------------------------
// Length-lexicographic comparison
// ---------------------------------------------------------------------------

/// Length-lex comparison of two values: shorter strings sort first, equal
/// lengths compare lexicographically under `ord`.  Beyond the exact
/// threshold the first mismatch is found by binary search on prefix
/// equality, so only O(log n) fingerprint rounds are spent.
pub fn slp_compare_llex(
    a: &Slp,
    b: &Slp,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<Ordering> {
    let (la, lb) = (&a.store.lens[a.root], &b.store.lens[b.root]);
    match la.cmp(lb) {
        Ordering::Equal => {}
        other => return Ok(other),
    }
    let n = la.clone();
    if n == BigCount::default() {
        return Ok(Ordering::Equal);
    }
    if n <= BigCount::from(policy.exact_threshold) {
        let max = policy.exact_threshold as usize;
        let (ea, eb) = (slp_expand(a, max)?, slp_expand(b, max)?);
        for (x, y) in ea.iter().zip(&eb) {
            match ord.cmp(x, y) {
                Ordering::Equal => {}
                other => return Ok(other),
            }
        }
        return Ok(Ordering::Equal);
    }
    if policy.prime_count == 0 {
        return Err(Error::ExactOverflow {
            len: n.clone(),
            max: BigCount::from(policy.exact_threshold),
        });
    }
    if slp_equal(a, b, policy)? {
        return Ok(Ordering::Equal);
    }
    let one = BigCount::from(1u32);
    // cheap first-symbol probe before the search
    match ord.cmp(&slp_symbol_at(a, &one)?, &slp_symbol_at(b, &one)?) {
        Ordering::Equal => {}
        other => return Ok(other),
    }
    // lo..hi: shortest prefix length whose prefixes differ; prefixes of
    // length hi are known to differ
    let (mut lo, mut hi) = (one.clone(), n);
    while lo < hi {
        let mid = (&lo + &hi) >> 1;
        let pa = slp_slice(a, &one, &mid)?;
        let pb = slp_slice(b, &one, &mid)?;
        if slp_equal(&pa, &pb, policy)? {
            lo = mid + 1u32;
        } else {
            hi = mid;
        }
    }
    match ord.cmp(&slp_symbol_at(a, &lo)?, &slp_symbol_at(b, &lo)?) {
        Ordering::Equal => Err(Error::FingerprintContradiction),
        other => Ok(other),
    }
}

// ---------------------------------------------------------------------------
// Traversal strings of a normal grammar
// ---------------------------------------------------------------------------

/// The dflr traversal programs of a grammar: one string program per rank-0
/// nonterminal, and a (prefix, suffix) pair per rank-1 nonterminal with
/// `dflr(val(B(t))) = val(pre(B)) · dflr(t) · val(suf(B))`.  All share one
/// rule store.
pub struct DflrSlps {
    store: Arc<SlpStore>,
    slp: Vec<usize>,
    pre: Vec<usize>,
    suf: Vec<usize>,
}

impl DflrSlps {
    /// The traversal program of rank-0 nonterminal `a`.
    pub fn slp(&self, a: NtId) -> Slp {
        assert_ne!(self.slp[a], usize::MAX, "nonterminal has rank 1");
        Slp { store: self.store.clone(), root: self.slp[a] }
    }

    /// The prefix program of rank-1 nonterminal `a`.
    pub fn pre(&self, a: NtId) -> Slp {
        assert_ne!(self.pre[a], usize::MAX, "nonterminal has rank 0");
        Slp { store: self.store.clone(), root: self.pre[a] }
    }

    /// The suffix program of rank-1 nonterminal `a`.
    pub fn suf(&self, a: NtId) -> Slp {
        assert_ne!(self.suf[a], usize::MAX, "nonterminal has rank 0");
        Slp { store: self.store.clone(), root: self.suf[a] }
    }

    pub(crate) fn store(&self) -> &Arc<SlpStore> {
        &self.store
    }

    pub(crate) fn slp_rule(&self, a: NtId) -> usize {
        assert_ne!(self.slp[a], usize::MAX, "nonterminal has rank 1");
        self.slp[a]
    }

    pub(crate) fn pre_rule(&self, a: NtId) -> usize {
        assert_ne!(self.pre[a], usize::MAX, "nonterminal has rank 0");
        self.pre[a]
    }

    pub(crate) fn suf_rule(&self, a: NtId) -> usize {
        assert_ne!(self.suf[a], usize::MAX, "nonterminal has rank 0");
        self.suf[a]
    }
}

/// Builds the dflr traversal programs of every nonterminal in one
/// bottom-up pass: type (1) concatenates the children behind the label;
/// type (2) wraps the argument in the outer pair; type (3) splits at the
/// parameter; type (4) nests the pairs.
pub fn build_dflr(g: &NormalGrammar) -> DflrSlps {
    let n = g.nt_count();
    let mut rules: Vec<Vec<SlpSym>> = Vec::new();
    let (mut slp, mut pre, mut suf) = (vec![usize::MAX; n], vec![usize::MAX; n], vec![usize::MAX; n]);
    for &a in g.topo() {
        let mut push = |rule: Vec<SlpSym>| {
            rules.push(rule);
            rules.len() - 1
        };
        match g.prod(a) {
            NormalProd::Type1 { label, args } => {
                let mut rule = vec![SlpSym::Term(label.clone())];
                rule.extend(args.iter().map(|&b| SlpSym::Nt(slp[b])));
                slp[a] = push(rule);
            }
            NormalProd::Type2 { outer, inner } => {
                slp[a] = push(vec![
                    SlpSym::Nt(pre[*outer]),
                    SlpSym::Nt(slp[*inner]),
                    SlpSym::Nt(suf[*outer]),
                ]);
            }
            NormalProd::Type3 { label, before, after } => {
                let mut rule = vec![SlpSym::Term(label.clone())];
                rule.extend(before.iter().map(|&b| SlpSym::Nt(slp[b])));
                pre[a] = push(rule);
                suf[a] = push(after.iter().map(|&b| SlpSym::Nt(slp[b])).collect());
            }
            NormalProd::Type4 { outer, inner } => {
                pre[a] = push(vec![SlpSym::Nt(pre[*outer]), SlpSym::Nt(pre[*inner])]);
                suf[a] = push(vec![SlpSym::Nt(suf[*inner]), SlpSym::Nt(suf[*outer])]);
            }
        }
    }
    let lens = compute_lens(&rules);
    DflrSlps { store: Arc::new(SlpStore { rules, lens }), slp, pre, suf }
}

/// Length-lex order of `val(a)` and `val(b)` (both rank 0), decided on the
/// traversal programs without expansion.
pub fn compare_values(
    g: &NormalGrammar,
    a: NtId,
    b: NtId,
    ord: LabelOrder,
    policy: &EqualityPolicy,
) -> Result<Ordering> {
    assert_eq!(g.rank(a), 0, "compare_values takes rank-0 nonterminals");
    assert_eq!(g.rank(b), 0, "compare_values takes rank-0 nonterminals");
    let d = build_dflr(g);
    let cmp = SegCmp::new(d.store(), ord, policy);
    cmp.compare(&cmp.whole(d.slp_rule(a)), &cmp.whole(d.slp_rule(b)))
}

// ---------------------------------------------------------------------------
// Segment comparison over a shared store
// ---------------------------------------------------------------------------

/// A region of one rule's expansion: (rule, lo, hi), 1-based inclusive,
/// never empty.
pub(crate) type Seg = (usize, BigCount, BigCount);

// per rule and prime: (fingerprint of the expansion, base^len mod p)
type FpTable = Vec<Vec<(u64, u64)>>;

/// Equality and length-lex comparison of concatenated rule regions within
/// one store.  The fingerprint table is computed once, so a batch of
/// comparisons (sorting, deduplication, breakpoint probes) costs O(log n)
/// modular arithmetic per query instead of a table rebuild; region
/// fingerprints come from two prefix fingerprints and a modular inverse,
/// with no slicing.
pub(crate) struct SegCmp {
    store: Arc<SlpStore>,
    ord: LabelOrder,
    exact: u64,
    fp: Option<(FingerprintCtx, FpTable)>,
}

impl SegCmp {
    pub(crate) fn new(store: &Arc<SlpStore>, ord: LabelOrder, policy: &EqualityPolicy) -> SegCmp {
        let fp = (policy.prime_count > 0).then(|| {
            let ctx = FingerprintCtx::new(policy);
            let table = ctx.table(store);
            (ctx, table)
        });
        SegCmp { store: store.clone(), ord, exact: policy.exact_threshold, fp }
    }

    /// The whole expansion of `rule` as a segment list (empty for ε).
    pub(crate) fn whole(&self, rule: usize) -> Vec<Seg> {
        let len = &self.store.lens[rule];
        if *len == BigCount::default() {
            Vec::new()
        } else {
            vec![(rule, BigCount::from(1u32), len.clone())]
        }
    }

    pub(crate) fn total_len(&self, segs: &[Seg]) -> BigCount {
        let mut n = BigCount::default();
        for (_, lo, hi) in segs {
            n += hi - lo + 1u32;
        }
        n
    }

    pub(crate) fn symbol_at(&self, segs: &[Seg], q: &BigCount) -> Label {
        let mut q = q.clone();
        for (r, lo, hi) in segs {
            let w = hi - lo + 1u32;
            if q <= w {
                return symbol_in(&self.store, *r, &(lo + &q - 1u32));
            }
            q -= w;
        }
        unreachable!("position checked against the total length");
    }

    // (fingerprint, base^q mod p) of the first q symbols of rule's
    // expansion under prime k, by the same descent as random access
    fn prefix_fp(&self, k: usize, rule: usize, q: &BigCount) -> (u64, u64) {
        let (ctx, table) = self.fp.as_ref().expect("fingerprinting enabled");
        let (p, b) = (ctx.primes[k], ctx.bases[k]);
        let (mut fp, mut pow) = (0u64, 1u64);
        let fold = |fp: &mut u64, pow: &mut u64, sfp: u64, spow: u64| {
            *fp = (mulmod(*fp, spow, p) + sfp) % p;
            *pow = mulmod(*pow, spow, p);
        };
        let zero = BigCount::default();
        let mut q = q.clone();
        let mut rule = rule;
        'down: loop {
            if q == self.store.lens[rule] {
                let (sfp, spow) = table[rule][k];
                fold(&mut fp, &mut pow, sfp, spow);
                return (fp, pow);
            }
            for sym in &self.store.rules[rule] {
                if q == zero {
                    return (fp, pow);
                }
                match sym {
                    SlpSym::Term(l) => {
                        fold(&mut fp, &mut pow, ctx.code(k, l), b);
                        q -= 1u32;
                    }
                    SlpSym::Nt(j) => {
                        if self.store.lens[*j] <= q {
                            let (sfp, spow) = table[*j][k];
                            fold(&mut fp, &mut pow, sfp, spow);
                            q -= &self.store.lens[*j];
                        } else {
                            rule = *j;
                            continue 'down;
                        }
                    }
                }
            }
            return (fp, pow);
        }
    }

    // (fingerprint, base^width mod p) of one region under prime k
    fn seg_fp(&self, k: usize, rule: usize, lo: &BigCount, hi: &BigCount) -> (u64, u64) {
        let (ctx, _) = self.fp.as_ref().expect("fingerprinting enabled");
        let p = ctx.primes[k];
        let (f1, p1) = self.prefix_fp(k, rule, &(lo - 1u32));
        let (f2, p2) = self.prefix_fp(k, rule, hi);
        // base^(hi−lo+1) = p2/p1; the region drops the shifted shorter prefix
        let bw = mulmod(p2, powmod(p1, p - 2, p), p);
        ((f2 + p - mulmod(f1, bw, p)) % p, bw)
    }

    // fingerprint of the first q symbols of the concatenation
    fn concat_prefix_fp(&self, k: usize, segs: &[Seg], q: &BigCount) -> u64 {
        let p = self.fp.as_ref().expect("fingerprinting enabled").0.primes[k];
        let zero = BigCount::default();
        let mut fp = 0u64;
        let mut q = q.clone();
        for (rule, lo, hi) in segs {
            if q == zero {
                break;
            }
            let w = hi - lo + 1u32;
            let (sfp, spow) = if w <= q {
                q -= &w;
                self.seg_fp(k, *rule, lo, hi)
            } else {
                let hi = lo + &q - 1u32;
                q = zero.clone();
                self.seg_fp(k, *rule, lo, &hi)
            };
            fp = (mulmod(fp, spow, p) + sfp) % p;
        }
        fp
    }

    fn expand_segs(&self, segs: &[Seg]) -> Vec<Label> {
        let mut out = Vec::new();
        for (rule, lo, hi) in segs {
            self.expand_range(*rule, lo, hi, &mut out);
        }
        out
    }

    // appends symbols lo..=hi of rule's expansion; skipped sub-rules cost
    // length arithmetic only
    fn expand_range(&self, rule: usize, lo: &BigCount, hi: &BigCount, out: &mut Vec<Label>) {
        let zero = BigCount::default();
        let mut skip = lo - 1u32;
        let mut need = (hi - lo + 1u32).to_usize().expect("bounded by the exact threshold");
        let mut stack: Vec<(usize, usize)> = vec![(rule, 0)];
        while need > 0 {
            let (r, i) = stack.pop().expect("range checked against the rule length");
            let Some(sym) = self.store.rules[r].get(i) else { continue };
            stack.push((r, i + 1));
            match sym {
                SlpSym::Term(l) => {
                    if skip > zero {
                        skip -= 1u32;
                    } else {
                        out.push(l.clone());
                        need -= 1;
                    }
                }
                SlpSym::Nt(j) => {
                    if skip >= self.store.lens[*j] {
                        skip -= &self.store.lens[*j];
                    } else {
                        stack.push((*j, 0));
                    }
                }
            }
        }
    }

    /// Decides equality of two concatenations, exact below the threshold
    /// and by fingerprint rounds above it.
    pub(crate) fn equal(&self, a: &[Seg], b: &[Seg]) -> Result<bool> {
        let (la, lb) = (self.total_len(a), self.total_len(b));
        if la != lb {
            return Ok(false);
        }
        if la <= BigCount::from(self.exact) {
            return Ok(self.expand_segs(a) == self.expand_segs(b));
        }
        let Some((ctx, _)) = self.fp.as_ref() else {
            return Err(Error::ExactOverflow { len: la, max: BigCount::from(self.exact) });
        };
        for k in 0..ctx.primes.len() {
            if self.concat_prefix_fp(k, a, &la) != self.concat_prefix_fp(k, b, &la) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Length-lex comparison of two concatenations, with the same
    /// exact/fingerprint split and binary mismatch search as
    /// [`slp_compare_llex`].
    pub(crate) fn compare(&self, a: &[Seg], b: &[Seg]) -> Result<Ordering> {
        let (la, lb) = (self.total_len(a), self.total_len(b));
        match la.cmp(&lb) {
            Ordering::Equal => {}
            other => return Ok(other),
        }
        let n = la;
        if n == BigCount::default() {
            return Ok(Ordering::Equal);
        }
        if n <= BigCount::from(self.exact) {
            let (ea, eb) = (self.expand_segs(a), self.expand_segs(b));
            for (x, y) in ea.iter().zip(&eb) {
                match self.ord.cmp(x, y) {
                    Ordering::Equal => {}
                    other => return Ok(other),
                }
            }
            return Ok(Ordering::Equal);
        }
        let Some((ctx, _)) = self.fp.as_ref() else {
            return Err(Error::ExactOverflow { len: n, max: BigCount::from(self.exact) });
        };
        if self.equal(a, b)? {
            return Ok(Ordering::Equal);
        }
        let one = BigCount::from(1u32);
        match self.ord.cmp(&self.symbol_at(a, &one), &self.symbol_at(b, &one)) {
            Ordering::Equal => {}
            other => return Ok(other),
        }
        let rounds = ctx.primes.len();
        // lo..hi: shortest prefix length whose prefixes differ; prefixes
        // of length hi are known to differ
        let (mut lo, mut hi) = (one, n);
        while lo < hi {
            let mid = (&lo + &hi) >> 1;
            let same = (0..rounds)
                .all(|k| self.concat_prefix_fp(k, a, &mid) == self.concat_prefix_fp(k, b, &mid));
            if same {
                lo = mid + 1u32;
            } else {
                hi = mid;
            }
        }
        match self.ord.cmp(&self.symbol_at(a, &lo), &self.symbol_at(b, &lo)) {
            Ordering::Equal => Err(Error::FingerprintContradiction),
            other => Ok(other),
        }
    }
}

/// Per-rule totals of a weight function on terminal symbols, in one
/// bottom-up pass over an SLP's store.
pub(crate) fn rule_weights(s: &Slp, mut w: impl FnMut(&Label) -> BigCount) -> Vec<BigCount> {
    let mut out: Vec<BigCount> = Vec::with_capacity(s.store.rules.len());
    for rule in &s.store.rules {
        let mut t = BigCount::default();
        for sym in rule {
            match sym {
                SlpSym::Term(l) => t += w(l),
                SlpSym::Nt(j) => t += &out[*j],
            }
        }
        out.push(t);
    }
    out
}

/// Total weight of the first `k` symbols of `val(s)`, given the per-rule
/// totals from [`rule_weights`] for the same weight function.
pub(crate) fn weighted_prefix(
    s: &Slp,
    totals: &[BigCount],
    mut w: impl FnMut(&Label) -> BigCount,
    k: &BigCount,
) -> BigCount {
    debug_assert!(*k <= s.store.lens[s.root]);
    let zero = BigCount::default();
    let mut acc = BigCount::default();
    let mut k = k.clone();
    let mut rule = s.root;
    'down: loop {
        if k == s.store.lens[rule] {
            acc += &totals[rule];
            return acc;
        }
        for sym in &s.store.rules[rule] {
            if k == zero {
                return acc;
            }
            match sym {
                SlpSym::Term(l) => {
                    acc += w(l);
                    k -= 1u32;
                }
                SlpSym::Nt(j) => {
                    if s.store.lens[*j] <= k {
                        acc += &totals[*j];
                        k -= &s.store.lens[*j];
                    } else {
                        rule = *j;
                        continue 'down;
                    }
                }
            }
        }
        return acc;
    }
}

// ---------------------------------------------------------------------------
