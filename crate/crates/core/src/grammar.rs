//! The grammar data model: parsing, validation, bounded evaluation, and the
//! production-wise tree transformations (ranking, edge subdivision, dag
//! compression of explicit trees).
//!
//! A grammar here is deterministic (one production per nonterminal) and
//! acyclic, so it derives exactly one tree.  Right-hand sides mix terminal
//! symbols, nonterminal calls and parameter leaves; like explicit trees they
//! can be deep, so the traversals below avoid recursion.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use num_traits::One;

use crate::term::{is_bare_symbol, Label, Lexer, Tok, Tree, SUBDIVISION_LABEL};
use crate::{BigCount, Error, Result};

/// Index of a nonterminal within its grammar.
pub type NtId = usize;

/// One symbol in a right-hand side.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    Terminal(Label),
    Nonterminal(NtId),
    /// 0-based parameter of the production's left-hand side; labels a leaf.
    Param(u32),
}

/// A right-hand-side tree.  A node labelled by a nonterminal of rank `r`
/// has exactly `r` children (its arguments); parameters label leaves.
pub struct RhsTree {
    pub sym: Symbol,
    pub children: Vec<RhsTree>,
}

impl RhsTree {
    pub fn new(sym: Symbol, children: Vec<RhsTree>) -> RhsTree {
        RhsTree { sym, children }
    }

    pub fn leaf(sym: Symbol) -> RhsTree {
        RhsTree { sym, children: Vec::new() }
    }

    pub fn term(label: Label, children: Vec<RhsTree>) -> RhsTree {
        RhsTree::new(Symbol::Terminal(label), children)
    }

    pub fn nt(id: NtId, args: Vec<RhsTree>) -> RhsTree {
        RhsTree::new(Symbol::Nonterminal(id), args)
    }

    pub fn param(i: u32) -> RhsTree {
        RhsTree::leaf(Symbol::Param(i))
    }

    /// All nodes, children before parents, siblings left to right.
    pub fn postorder(&self) -> Vec<&RhsTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter());
        }
        out.reverse();
        out
    }

    pub fn node_count(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            count += 1;
            stack.extend(n.children.iter());
        }
        count
    }
}

impl Drop for RhsTree {
    fn drop(&mut self) {
        if self.children.is_empty() {
            return;
        }
        let mut stack = std::mem::take(&mut self.children);
        while let Some(mut t) = stack.pop() {
            stack.append(&mut t.children);
        }
    }
}

impl Clone for RhsTree {
    fn clone(&self) -> RhsTree {
        let mut done: Vec<RhsTree> = Vec::new();
        for node in self.postorder() {
            let children = done.split_off(done.len() - node.children.len());
            done.push(RhsTree { sym: node.sym.clone(), children });
        }
        done.pop().expect("postorder of a tree is never empty")
    }
}

impl PartialEq for RhsTree {
    fn eq(&self, other: &RhsTree) -> bool {
        let mut stack = vec![(self, other)];
        while let Some((a, b)) = stack.pop() {
            if a.sym != b.sym || a.children.len() != b.children.len() {
                return false;
            }
            stack.extend(a.children.iter().zip(b.children.iter()));
        }
        true
    }
}

impl Eq for RhsTree {}

impl fmt::Debug for RhsTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        enum It<'a> {
            Node(&'a RhsTree),
            Text(&'static str),
        }
        let mut stack = vec![It::Node(self)];
        while let Some(item) = stack.pop() {
            match item {
                It::Text(s) => f.write_str(s)?,
                It::Node(n) => {
                    match &n.sym {
                        Symbol::Terminal(l) => write!(f, "{l}")?,
                        Symbol::Nonterminal(b) => write!(f, "Nt({b})")?,
                        Symbol::Param(i) => write!(f, "y{}", i + 1)?,
                    }
                    if !n.children.is_empty() {
                        stack.push(It::Text(")"));
                        for (i, c) in n.children.iter().enumerate().rev() {
                            stack.push(It::Node(c));
                            if i > 0 {
                                stack.push(It::Text(","));
                            }
                        }
                        stack.push(It::Text("("));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A validated grammar: deterministic, acyclic, arities consistent, no
/// nonterminal unreachable from the start symbol.  Immutable once built.
#[derive(Clone)]
pub struct Grammar {
    names: Vec<String>,
    by_name: HashMap<String, NtId>,
    ranks: Vec<u32>,
    rhs: Vec<RhsTree>,
    start: NtId,
    linear: bool,
    topo: Vec<NtId>,
}

impl Grammar {
    pub fn nt_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: NtId) -> &str {
        &self.names[id]
    }

    pub fn nt(&self, name: &str) -> Option<NtId> {
        self.by_name.get(name).copied()
    }

    pub fn rank(&self, id: NtId) -> u32 {
        self.ranks[id]
    }

    pub fn rhs(&self, id: NtId) -> &RhsTree {
        &self.rhs[id]
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    /// True when every parameter occurs at most once in its production.
    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn max_rank(&self) -> u32 {
        self.ranks.iter().copied().max().unwrap_or(0)
    }

    /// Nonterminals ordered callees-before-callers.
    pub fn topo(&self) -> &[NtId] {
        &self.topo
    }

    /// Grammar size: total node count over all right-hand sides.
    pub fn size(&self) -> usize {
        self.rhs.iter().map(|r| r.node_count()).sum()
    }
}

impl FromStr for Grammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Grammar> {
        parse_grammar(s)
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = if self.linear && self.max_rank() <= 1 { "slt v1" } else { "st v1" };
        writeln!(f, "{header}")?;
        writeln!(f, "start {}", self.names[self.start])?;
        for id in 0..self.nt_count() {
            f.write_str(&self.names[id])?;
            let rank = self.ranks[id];
            match rank {
                0 => {}
                1 => f.write_str("(y)")?,
                k => {
                    f.write_str("(")?;
                    for i in 0..k {
                        if i > 0 {
                            f.write_str(",")?;
                        }
                        write!(f, "y{}", i + 1)?;
                    }
                    f.write_str(")")?;
                }
            }
            f.write_str(" = ")?;
            self.write_rhs(f, &self.rhs[id], rank)?;
            f.write_str("\n")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Grammar {
    fn write_rhs(&self, f: &mut fmt::Formatter<'_>, rhs: &RhsTree, rank: u32) -> fmt::Result {
        enum It<'a> {
            Node(&'a RhsTree),
            Text(&'static str),
        }
        let mut stack = vec![It::Node(rhs)];
        while let Some(item) = stack.pop() {
            match item {
                It::Text(s) => f.write_str(s)?,
                It::Node(n) => {
                    match &n.sym {
                        Symbol::Terminal(l) => {
                            // quote anything that would re-parse as a
                            // nonterminal or parameter reference
                            let text = l.as_str();
                            if is_bare_symbol(text)
                                && !self.by_name.contains_key(text)
                                && !looks_like_param(text)
                            {
                                f.write_str(text)?;
                            } else {
                                write!(f, "'{text}'")?;
                            }
                        }
                        Symbol::Nonterminal(b) => f.write_str(&self.names[*b])?,
                        Symbol::Param(i) => {
                            if rank == 1 {
                                f.write_str("y")?;
                            } else {
                                write!(f, "y{}", i + 1)?;
                            }
                        }
                    }
                    if !n.children.is_empty() {
                        stack.push(It::Text(")"));
                        for (i, c) in n.children.iter().enumerate().rev() {
                            stack.push(It::Node(c));
                            if i > 0 {
                                stack.push(It::Text(","));
                            }
                        }
                        stack.push(It::Text("("));
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(c) if c.is_ascii_alphabetic() || c == b'_')
        && bytes.all(|c| c.is_ascii_alphanumeric() || c == b'_')
}

/// `y`, `y1`, `y2`, … — names reserved for parameters.
fn looks_like_param(s: &str) -> bool {
    s.strip_prefix('y').is_some_and(|rest| rest.bytes().all(|b| b.is_ascii_digit()))
}

// ---------------------------------------------------------------------------
// Construction and validation
// ---------------------------------------------------------------------------

/// Builds a [`Grammar`] programmatically: declare all nonterminals, define
/// their productions, then `finish` to validate.
#[derive(Default)]
pub struct GrammarBuilder {
    names: Vec<String>,
    by_name: HashMap<String, NtId>,
    ranks: Vec<u32>,
    rhs: Vec<Option<RhsTree>>,
}

impl GrammarBuilder {
    pub fn new() -> GrammarBuilder {
        GrammarBuilder::default()
    }

    pub fn declare(&mut self, name: &str, rank: u32) -> Result<NtId> {
        if !is_ident(name) {
            return Err(Error::Grammar(format!("invalid nonterminal name {name:?}")));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::Grammar(format!("duplicate nonterminal {name}")));
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.ranks.push(rank);
        self.rhs.push(None);
        Ok(id)
    }

    pub fn nt(&self, name: &str) -> Option<NtId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: NtId) -> &str {
        &self.names[id]
    }

    pub fn rank(&self, id: NtId) -> u32 {
        self.ranks[id]
    }

    pub fn nt_count(&self) -> usize {
        self.names.len()
    }

    pub fn define(&mut self, id: NtId, rhs: RhsTree) {
        self.rhs[id] = Some(rhs);
    }

    /// A name not yet declared: `base`, then `base2`, `base3`, …
    pub fn fresh_name(&self, base: &str) -> String {
        if !self.by_name.contains_key(base) {
            return base.to_string();
        }
        for k in 2.. {
            let name = format!("{base}{k}");
            if !self.by_name.contains_key(&name) {
                return name;
            }
        }
        unreachable!()
    }

    pub fn finish(self, start: NtId) -> Result<Grammar> {
        let GrammarBuilder { names, by_name, ranks, rhs } = self;
        let n = names.len();
        if n == 0 {
            return Err(Error::Grammar("grammar has no productions".into()));
        }
        assert!(start < n, "start nonterminal out of range");
        let mut rhs_v: Vec<RhsTree> = Vec::with_capacity(n);
        for (id, r) in rhs.into_iter().enumerate() {
            rhs_v.push(
                r.ok_or_else(|| Error::Grammar(format!("nonterminal {} has no production", names[id])))?,
            );
        }

        // structural checks, dependency lists, per-production linearity
        let mut deps: Vec<Vec<NtId>> = vec![Vec::new(); n];
        let mut prod_linear = vec![true; n];
        for a in 0..n {
            let rank = ranks[a] as usize;
            let mut occ = vec![0usize; rank];
            for node in rhs_v[a].postorder() {
                match &node.sym {
                    Symbol::Terminal(_) => {}
                    Symbol::Param(i) => {
                        let i = *i as usize;
                        if i >= rank {
                            return Err(Error::Grammar(format!(
                                "production {} refers to parameter {} but has rank {}",
                                names[a],
                                i + 1,
                                rank
                            )));
                        }
                        if !node.children.is_empty() {
                            return Err(Error::Grammar(format!(
                                "parameter applied to arguments in production {}",
                                names[a]
                            )));
                        }
                        occ[i] += 1;
                    }
                    Symbol::Nonterminal(b) => {
                        let b = *b;
                        assert!(b < n, "nonterminal id out of range");
                        if node.children.len() != ranks[b] as usize {
                            return Err(Error::Grammar(format!(
                                "nonterminal {} has rank {} but {} arguments in production {}",
                                names[b],
                                ranks[b],
                                node.children.len(),
                                names[a]
                            )));
                        }
                        deps[a].push(b);
                    }
                }
            }
            prod_linear[a] = occ.iter().all(|&c| c <= 1);
        }

        let topo_full = topo_bottom_up(&deps, &names)?;

        // prune nonterminals unreachable from start
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
        if reach.iter().all(|&r| r) {
            let linear = prod_linear.iter().all(|&l| l);
            return Ok(Grammar { names, by_name, ranks, rhs: rhs_v, start, linear, topo: topo_full });
        }

        let mut map = vec![usize::MAX; n];
        let mut new_names = Vec::new();
        let mut new_ranks = Vec::new();
        let mut new_rhs = Vec::new();
        let mut linear = true;
        for (old, r) in rhs_v.into_iter().enumerate() {
            if !reach[old] {
                continue;
            }
            map[old] = new_names.len();
            new_names.push(names[old].clone());
            new_ranks.push(ranks[old]);
            new_rhs.push(r);
            linear &= prod_linear[old];
        }
        for r in &mut new_rhs {
            let mut stack: Vec<&mut RhsTree> = vec![r];
            while let Some(node) = stack.pop() {
                if let Symbol::Nonterminal(b) = &mut node.sym {
                    *b = map[*b];
                }
                stack.extend(node.children.iter_mut());
            }
        }
        let new_by_name = new_names.iter().cloned().zip(0..).collect();
        let topo = topo_full.into_iter().filter(|&a| reach[a]).map(|a| map[a]).collect();
        Ok(Grammar {
            names: new_names,
            by_name: new_by_name,
            ranks: new_ranks,
            rhs: new_rhs,
            start: map[start],
            linear,
            topo,
        })
    }
}

/// Kahn's algorithm; errors on a cycle.
pub(crate) fn topo_bottom_up(deps: &[Vec<NtId>], names: &[String]) -> Result<Vec<NtId>> {
    let n = deps.len();
    let mut indeg = vec![0usize; n];
    let mut users: Vec<Vec<NtId>> = vec![Vec::new(); n];
    for a in 0..n {
        for &b in &deps[a] {
            indeg[a] += 1;
            users[b].push(a);
        }
    }
    let mut queue: VecDeque<NtId> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(b) = queue.pop_front() {
        out.push(b);
        for &a in &users[b] {
            indeg[a] -= 1;
            if indeg[a] == 0 {
                queue.push_back(a);
            }
        }
    }
    if out.len() < n {
        let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
        return Err(Error::Grammar(format!(
            "cyclic nonterminal dependencies involving {}",
            names[stuck]
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parses the grammar file format:
///
/// ```text
/// slt v1            # or `st v1`; `st` admits multiple parameters and copying
/// start S           # optional; defaults to the first left-hand side
/// S = f(A, B(a))
/// A = a
/// B(y) = g(y, 'y')  # unquoted y is the parameter, quoted 'y' a terminal
/// ```
///
/// An unquoted symbol resolves to the production's parameter, else to a
/// nonterminal (any left-hand-side name), else to a terminal; `y`-shaped
/// names that resolve to neither are rejected as undeclared parameters.
/// Comment lines start with `#`.
pub fn parse_grammar(text: &str) -> Result<Grammar> {
    struct RawProd<'a> {
        name: String,
        params: Vec<String>,
        line_no: usize,
        line: &'a str,
    }

    let mut linear_required: Option<bool> = None;
    let mut start_name: Option<String> = None;
    let mut prods: Vec<RawProd> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if linear_required.is_none() {
            linear_required = Some(match line {
                "slt v1" => true,
                "st v1" => false,
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        col: 1,
                        msg: "expected header `slt v1` or `st v1`".into(),
                    })
                }
            });
            continue;
        }
        let mut lx = Lexer::at_line(raw_line, line_no);
        let (tok, at) = lx.next_tok()?;
        let name = match tok {
            Tok::Sym(s, false) => s,
            Tok::Sym(_, true) => {
                return Err(lx.error(at, "left-hand side names must be unquoted identifiers"))
            }
            other => return Err(lx.error(at, format!("expected a production, found {other}"))),
        };
        if name == "start" && matches!(lx.peek()?, Tok::Sym(..)) {
            let (tok, at2) = lx.next_tok()?;
            let Tok::Sym(s, quoted) = tok else { unreachable!() };
            if quoted {
                return Err(lx.error(at2, "start nonterminal must be unquoted"));
            }
            lx.expect_eof()?;
            if start_name.replace(s).is_some() {
                return Err(lx.error(at, "duplicate start directive"));
            }
            continue;
        }
        if !is_ident(&name) {
            return Err(lx.error(at, format!("invalid nonterminal name {name:?}")));
        }
        let mut params: Vec<String> = Vec::new();
        if matches!(lx.peek()?, Tok::LParen) {
            lx.next_tok()?;
            loop {
                let (tok, pat) = lx.next_tok()?;
                let p = match tok {
                    Tok::Sym(s, false) if is_ident(&s) => s,
                    Tok::Sym(s, _) => {
                        return Err(lx.error(pat, format!("invalid parameter name {s:?}")))
                    }
                    other => {
                        return Err(lx.error(pat, format!("expected a parameter name, found {other}")))
                    }
                };
                if params.contains(&p) {
                    return Err(lx.error(pat, format!("duplicate parameter {p}")));
                }
                params.push(p);
                match lx.next_tok()? {
                    (Tok::Comma, _) => {}
                    (Tok::RParen, _) => break,
                    (other, at2) => {
                        return Err(lx.error(at2, format!("expected ',' or ')', found {other}")))
                    }
                }
            }
        }
        if linear_required == Some(true) && params.len() > 1 {
            return Err(Error::Parse {
                line: line_no,
                col: 1,
                msg: "productions with more than one parameter need an `st v1` header".into(),
            });
        }
        match lx.next_tok()? {
            (Tok::Equals, _) => {}
            (other, at2) => return Err(lx.error(at2, format!("expected '=', found {other}"))),
        }
        if seen.insert(name.clone(), line_no).is_some() {
            return Err(Error::Parse {
                line: line_no,
                col: 1,
                msg: format!("duplicate left-hand side {name}"),
            });
        }
        prods.push(RawProd { name, params, line_no, line: raw_line });
    }

    if linear_required.is_none() {
        return Err(Error::Parse {
            line: 1,
            col: 1,
            msg: "empty grammar file (expected `slt v1` or `st v1`)".into(),
        });
    }
    if prods.is_empty() {
        return Err(Error::Grammar("grammar has no productions".into()));
    }

    let mut builder = GrammarBuilder::new();
    for p in &prods {
        builder.declare(&p.name, p.params.len() as u32)?;
    }
    for (id, p) in prods.iter().enumerate() {
        let mut lx = Lexer::at_line(p.line, p.line_no);
        loop {
            match lx.next_tok()?.0 {
                Tok::Equals => break,
                Tok::Eof => unreachable!("production line validated in the first pass"),
                _ => {}
            }
        }
        let params: HashMap<&str, u32> =
            p.params.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
        let rhs = parse_rhs(&mut lx, &builder, &params)?;
        lx.expect_eof()?;
        if linear_required == Some(true) {
            let mut occ = vec![0usize; p.params.len()];
            for node in rhs.postorder() {
                if let Symbol::Param(i) = node.sym {
                    occ[i as usize] += 1;
                }
            }
            if let Some(i) = occ.iter().position(|&c| c > 1) {
                return Err(Error::Parse {
                    line: p.line_no,
                    col: 1,
                    msg: format!(
                        "parameter {} occurs more than once; `slt` grammars are linear",
                        p.params[i]
                    ),
                });
            }
        }
        builder.define(id, rhs);
    }
    let start = match &start_name {
        Some(s) => builder
            .nt(s)
            .ok_or_else(|| Error::Grammar(format!("start nonterminal {s} has no production")))?,
        None => 0,
    };
    builder.finish(start)
}

fn resolve_symbol(
    lx: &Lexer<'_>,
    builder: &GrammarBuilder,
    params: &HashMap<&str, u32>,
    text: &str,
    quoted: bool,
    argc: usize,
    at: usize,
) -> Result<Symbol> {
    if !quoted {
        if let Some(&i) = params.get(text) {
            if argc != 0 {
                return Err(lx.error(at, format!("parameter {text} cannot take arguments")));
            }
            return Ok(Symbol::Param(i));
        }
        if let Some(id) = builder.nt(text) {
            if argc != builder.rank(id) as usize {
                return Err(lx.error(
                    at,
                    format!(
                        "nonterminal {text} has rank {} but {argc} arguments here",
                        builder.rank(id)
                    ),
                ));
            }
            return Ok(Symbol::Nonterminal(id));
        }
        if looks_like_param(text) {
            return Err(lx.error(at, format!("undeclared parameter {text}")));
        }
    }
    Ok(Symbol::Terminal(Label::new(text)))
}

fn parse_rhs(
    lx: &mut Lexer<'_>,
    builder: &GrammarBuilder,
    params: &HashMap<&str, u32>,
) -> Result<RhsTree> {
    let mut frames: Vec<(String, bool, usize, Vec<RhsTree>)> = Vec::new();
    loop {
        let (tok, at) = lx.next_tok()?;
        let (text, quoted) = match tok {
            Tok::Sym(s, q) => (s, q),
            other => return Err(lx.error(at, format!("expected a symbol, found {other}"))),
        };
        let mut done: RhsTree;
        if matches!(lx.peek()?, Tok::LParen) {
            lx.next_tok()?;
            frames.push((text, quoted, at, Vec::new()));
            continue;
        } else {
            done = RhsTree::leaf(resolve_symbol(lx, builder, params, &text, quoted, 0, at)?);
        }
        loop {
            let Some(top) = frames.last_mut() else {
                return Ok(done);
            };
            top.3.push(done);
            let (tok, at2) = lx.next_tok()?;
            match tok {
                Tok::Comma => break,
                Tok::RParen => {
                    let (text, quoted, at, children) = frames.pop().unwrap();
                    let sym =
                        resolve_symbol(lx, builder, params, &text, quoted, children.len(), at)?;
                    done = RhsTree::new(sym, children);
                }
                other => {
                    return Err(lx.error(at2, format!("expected ',' or ')', found {other}")));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sizes and evaluation
// ---------------------------------------------------------------------------

/// Per-nonterminal value size (counting parameter leaves) and, per
/// parameter, how many times it occurs in the value.  Occurrence counts
/// are what make sizes exact for copying (`st`) grammars.
pub(crate) fn sizes_and_occs(g: &Grammar) -> (Vec<BigCount>, Vec<Vec<BigCount>>) {
    let n = g.nt_count();
    let mut size: Vec<BigCount> = vec![BigCount::default(); n];
    let mut occ: Vec<Vec<BigCount>> = vec![Vec::new(); n];
    for &a in g.topo() {
        let rank = g.rank(a) as usize;
        let mut done: Vec<(BigCount, Vec<BigCount>)> = Vec::new();
        for node in g.rhs(a).postorder() {
            let kids = done.split_off(done.len() - node.children.len());
            let v = match &node.sym {
                Symbol::Param(i) => {
                    let mut o = vec![BigCount::default(); rank];
                    o[*i as usize] = BigCount::one();
                    (BigCount::one(), o)
                }
                Symbol::Terminal(_) => {
                    let mut s = BigCount::one();
                    let mut o = vec![BigCount::default(); rank];
                    for (ks, ko) in &kids {
                        s += ks;
                        for (oi, koi) in o.iter_mut().zip(ko) {
                            *oi += koi;
                        }
                    }
                    (s, o)
                }
                Symbol::Nonterminal(b) => {
                    let mut s = size[*b].clone();
                    let mut o = vec![BigCount::default(); rank];
                    for (j, (ks, ko)) in kids.iter().enumerate() {
                        // each occurrence of parameter j replaces a leaf
                        s += &occ[*b][j] * &(ks - 1u32);
                        for (oi, koi) in o.iter_mut().zip(ko) {
                            *oi += &occ[*b][j] * koi;
                        }
                    }
                    (s, o)
                }
            };
            done.push(v);
        }
        let (s, o) = done.pop().unwrap();
        size[a] = s;
        occ[a] = o;
    }
    (size, occ)
}

/// `|val(A)|`, counting parameter leaves of rank-≥1 nonterminals.
pub fn size_of(g: &Grammar, a: NtId) -> BigCount {
    sizes_and_occs(g).0[a].clone()
}

/// Derives `val(g)`.  Refuses up front when the value is larger than
/// `max_nodes` — the size check is exact and cheap, the expansion is not.
pub fn eval(g: &Grammar, max_nodes: &BigCount) -> Result<Tree> {
    if g.rank(g.start()) != 0 {
        return Err(Error::Grammar("start nonterminal has parameters; use eval_mixed".into()));
    }
    eval_mixed(g, max_nodes)
}

/// Like [`eval`], but a start nonterminal of rank ≥ 1 is allowed: its
/// parameters stay in the output as `y`/`y1`…-labelled leaves.
pub fn eval_mixed(g: &Grammar, max_nodes: &BigCount) -> Result<Tree> {
    let size = size_of(g, g.start());
    if &size > max_nodes {
        return Err(Error::TooLarge { size, limit: max_nodes.clone() });
    }
    let rank = g.rank(g.start());
    let free: Vec<RhsTree> = (0..rank)
        .map(|i| RhsTree::leaf(Symbol::Terminal(Label::new(param_name(i, rank)))))
        .collect();

    // Explicit machine: environments live in an arena (no recursion, no
    // recursive drops), thunks are (rhs node, environment) pairs.
    enum Task<'a> {
        Open(&'a RhsTree, usize),
        Close(Label, usize),
    }
    let mut arena: Vec<Vec<(&RhsTree, usize)>> = vec![free.iter().map(|t| (t, 0)).collect()];
    let mut stack = vec![Task::Open(g.rhs(g.start()), 0)];
    let mut done: Vec<Tree> = Vec::new();
    while let Some(task) = stack.pop() {
        match task {
            Task::Close(label, k) => {
                let children = done.split_off(done.len() - k);
                done.push(Tree::new(label, children));
            }
            Task::Open(node, env) => match &node.sym {
                Symbol::Terminal(l) => {
                    stack.push(Task::Close(l.clone(), node.children.len()));
                    for c in node.children.iter().rev() {
                        stack.push(Task::Open(c, env));
                    }
                }
                Symbol::Param(i) => {
                    let (thunk, thunk_env) = arena[env][*i as usize];
                    stack.push(Task::Open(thunk, thunk_env));
                }
                Symbol::Nonterminal(b) => {
                    let slots = node.children.iter().map(|c| (c, env)).collect();
                    arena.push(slots);
                    stack.push(Task::Open(g.rhs(*b), arena.len() - 1));
                }
            },
        }
    }
    debug_assert_eq!(done.len(), 1);
    Ok(done.pop().unwrap())
}

pub(crate) fn param_name(i: u32, rank: u32) -> String {
    if rank == 1 {
        "y".to_string()
    } else {
        format!("y{}", i + 1)
    }
}

// ---------------------------------------------------------------------------
// Production-wise transformations
// ---------------------------------------------------------------------------

fn map_rhs(rhs: &RhsTree, mut node_fn: impl FnMut(&RhsTree, Vec<RhsTree>) -> Result<RhsTree>) -> Result<RhsTree> {
    let mut done: Vec<RhsTree> = Vec::new();
    for node in rhs.postorder() {
        let kids = done.split_off(done.len() - node.children.len());
        done.push(node_fn(node, kids)?);
    }
    Ok(done.pop().unwrap())
}

/// Relabels every terminal node `σ` with `k` children as `σ#k`, so equal
/// labels imply equal child counts in the derived tree.  Nonterminal and
/// parameter nodes are untouched.  Labels already containing `#` are
/// rejected, except the bare subdivision marker.
pub fn ranked_grammar(g: &Grammar) -> Result<Grammar> {
    let mut out = g.clone();
    for r in &mut out.rhs {
        *r = map_rhs(r, |node, kids| {
            let sym = match &node.sym {
                Symbol::Terminal(l) => {
                    let text = l.as_str();
                    if text.contains('#') && text != SUBDIVISION_LABEL {
                        return Err(Error::ReservedLabel(text.to_string()));
                    }
                    Symbol::Terminal(l.with_rank(kids.len()))
                }
                other => other.clone(),
            };
            Ok(RhsTree::new(sym, kids))
        })?;
    }
    Ok(out)
}

/// Ranks a grammar unless it is ranked already (then returns it unchanged),
/// erring when it is half-ranked.  Lets ranked pipelines accept both raw
/// and pre-ranked inputs idempotently.
pub fn ensure_ranked(g: &Grammar) -> Result<Grammar> {
    let mut saw_ranked = false;
    let mut saw_unranked = false;
    for a in 0..g.nt_count() {
        for node in g.rhs(a).postorder() {
            if let Symbol::Terminal(l) = &node.sym {
                match l.base_and_rank() {
                    (base, Some(k)) if !base.contains('#') || base == SUBDIVISION_LABEL => {
                        if k as usize != node.children.len() {
                            return Err(Error::MixedRanking);
                        }
                        saw_ranked = true;
                    }
                    _ => saw_unranked = true,
                }
            }
        }
    }
    match (saw_ranked, saw_unranked) {
        (true, true) => Err(Error::MixedRanking),
        (false, true) => ranked_grammar(g),
        _ => Ok(g.clone()),
    }
}

/// Subdivides every edge of the derived tree with a `#` node by wrapping
/// the children of every terminal node in every right-hand side.  Edges
/// into nonterminal arguments are covered inside the callee's production.
pub fn even_grammar(g: &Grammar) -> Result<Grammar> {
    if !g.is_linear() {
        return Err(Error::Grammar("edge subdivision requires a linear grammar".into()));
    }
    let mut out = g.clone();
    for r in &mut out.rhs {
        *r = map_rhs(r, |node, kids| {
            let kids = if matches!(node.sym, Symbol::Terminal(_)) {
                kids.into_iter()
                    .map(|c| RhsTree::term(Label::new(SUBDIVISION_LABEL), vec![c]))
                    .collect()
            } else {
                kids
            };
            Ok(RhsTree::new(node.sym.clone(), kids))
        })?;
    }
    Ok(out)
}

/// Hash-cons an explicit tree into a minimal dag, presented as a grammar
/// whose nonterminals all have rank 0: no two nonterminals derive equal
/// trees, and `eval` inverts the compression exactly.
pub fn tree_to_dag(t: &Tree) -> Grammar {
    let mut ids: HashMap<(Label, Vec<NtId>), NtId> = HashMap::new();
    let mut builder = GrammarBuilder::new();
    let mut done: Vec<NtId> = Vec::new();
    for node in t.postorder() {
        let kids = done.split_off(done.len() - node.children.len());
        let key = (node.label.clone(), kids);
        let id = match ids.get(&key) {
            Some(&id) => id,
            None => {
                let id = builder
                    .declare(&format!("N{}", ids.len()), 0)
                    .expect("dag names are fresh");
                let args = key.1.iter().map(|&k| RhsTree::nt(k, Vec::new())).collect();
                builder.define(id, RhsTree::term(key.0.clone(), args));
                ids.insert(key, id);
                id
            }
        };
        done.push(id);
    }
    let root = done.pop().unwrap();
    builder.finish(root).expect("dag construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::even_tree;
    use crate::term::{parse_term, ranked_tree};
    use crate::testutil::pseudo_random_tree;

    fn pg(s: &str) -> Grammar {
        parse_grammar(s).unwrap()
    }

    fn ev(g: &Grammar) -> Tree {
        eval(g, &BigCount::from(1_000_000u64)).unwrap()
    }

    #[test]
    fn parse_and_eval_basics() {
        let g = pg("slt v1\nstart S\nS = B(A)\nA = a\nB(y) = f(b, y)");
        assert_eq!(ev(&g), parse_term("f(b,a)").unwrap());
        assert!(g.is_linear());

        let g = pg("st v1\nS = F(a)\nF(y) = f(y,y)");
        assert_eq!(ev(&g), parse_term("f(a,a)").unwrap());
        assert!(!g.is_linear());
    }

    #[test]
    fn parse_errors_grammar() {
        let cases: &[(&str, &str)] = &[
            ("slt v1\nS = A\nA = S", "cyclic"),
            ("slt v1\nS = a\nS = b", "duplicate left-hand side"),
            ("slt v1\nS = B(a,b)\nB(y) = f(y)", "rank 1 but 2 arguments"),
            ("slt v1\nS = B\nB(y) = f(y)", "rank 1 but 0 arguments"),
            ("slt v1\nS = f(y)", "undeclared parameter"),
            ("slt v1\nB(y) = f(y, y2)", "undeclared parameter"),
            ("slt v1\nB(y) = f(y,y)", "linear"),
            ("slt v1\nB(y1,y2) = f(y1,y2)", "st v1"),
            ("S = a", "header"),
            ("", "empty"),
            ("slt v1\nstart T\nS = a", "start nonterminal T"),
            ("slt v1\nB(y) = g(y(a))", "cannot take arguments"),
            ("slt v1\nstart S", "no productions"),
        ];
        for (src, needle) in cases {
            match parse_grammar(src) {
                Err(e) => {
                    let msg = e.to_string();
                    assert!(msg.contains(needle), "error {msg:?} should mention {needle:?}");
                }
                Ok(_) => panic!("{src:?} should fail"),
            }
        }
    }

    #[test]
    fn start_defaults_to_first_lhs() {
        let g = pg("slt v1\nA = f(B)\nB = b");
        assert_eq!(g.name(g.start()), "A");
        let g = pg("slt v1\nstart B\nA = f(B)\nB = b");
        assert_eq!(g.name(g.start()), "B");
        // pruning: A is unreachable from B
        assert_eq!(g.nt_count(), 1);
        assert_eq!(ev(&g), parse_term("b").unwrap());
    }

    #[test]
    fn print_round_trip() {
        let sources = [
            "slt v1\nstart S\nS = B(A)\nA = a\nB(y) = f(b,y)",
            "st v1\nstart S\nS = F(a,b)\nF(y1,y2) = f(y2,y1,y2)",
            "slt v1\nstart S\nS = f('x y','#'(a),'A','y2')\nA = q",
        ];
        for src in sources {
            let g = pg(src);
            let printed = g.to_string();
            let reparsed = parse_grammar(&printed).unwrap();
            assert_eq!(reparsed.to_string(), printed, "for {src:?}");
            assert_eq!(
                eval(&reparsed, &BigCount::from(100u32)).unwrap(),
                eval(&g, &BigCount::from(100u32)).unwrap()
            );
        }
        // terminals that collide with nonterminal or parameter names stay quoted
        let g = pg("slt v1\nS = f('A',A)\nA = a");
        assert_eq!(g.to_string(), "slt v1\nstart S\nS = f('A',A)\nA = a\n");
    }

    #[test]
    fn eval_chain_and_size_guard() {
        let g = pg("slt v1\nS = D(A)\nD(y) = C(C(y))\nC(y) = B(B(y))\nB(y) = g(y)\nA = a");
        assert_eq!(ev(&g), parse_term("g(g(g(g(a))))").unwrap());

        // 2^60+1 nodes: size is exact, eval refuses
        let mut src = String::from("slt v1\nstart S\nS = B0(A)\nA = a\n");
        for i in 0..60 {
            src.push_str(&format!("B{i}(y) = B{}(B{}(y))\n", i + 1, i + 1));
        }
        src.push_str("B60(y) = g(y)\n");
        let g = pg(&src);
        let expect = (BigCount::one() << 60u32) + 1u32;
        assert_eq!(size_of(&g, g.nt("B0").unwrap()), expect);
        match eval(&g, &BigCount::from(1_000_000u64)) {
            Err(Error::TooLarge { size, .. }) => assert_eq!(size, expect),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_nonlinear_doubly_exponential() {
        let g = pg("st v1\nstart S\nS = A0(a)\nA0(y) = A1(A1(y))\nA1(y) = A2(A2(y))\nA2(y) = f(y,y)");
        assert_eq!(size_of(&g, g.start()), BigCount::from(31u32));
        let t = ev(&g);
        // full binary tree: four doublings over a single leaf
        let mut expect = parse_term("a").unwrap();
        for _ in 0..4 {
            expect = Tree::new(Label::new("f"), vec![expect.clone(), expect]);
        }
        assert_eq!(t, expect);
    }

    #[test]
    fn size_of_examples() {
        let g = pg("slt v1\nS = B(A)\nA = a\nB(y) = f(b,y)");
        assert_eq!(size_of(&g, g.nt("B").unwrap()), BigCount::from(3u32));

        // size only, far beyond anything evaluable: n = 3 gives 2^(2^3+1)-1
        let g = pg("st v1\nS = A0(a)\nA0(y) = A1(A1(y))\nA1(y) = A2(A2(y))\nA2(y) = A3(A3(y))\nA3(y) = f(y,y)");
        assert_eq!(size_of(&g, g.start()), BigCount::from(511u32));
    }

    #[test]
    fn ranked_identities() {
        let g = pg("slt v1\nS = a(a(a))");
        assert_eq!(ranked_grammar(&g).unwrap().to_string(), "slt v1\nstart S\nS = a#1(a#1(a#0))\n");
        let g = pg("slt v1\nS = f(A,A)\nA = a");
        assert_eq!(
            ranked_grammar(&g).unwrap().to_string(),
            "slt v1\nstart S\nS = f#2(A,A)\nA = a#0\n"
        );
        assert!(matches!(
            ranked_grammar(&pg("slt v1\nS = 'a#1'")),
            Err(Error::ReservedLabel(_))
        ));
        // oracle identity on a corpus of dag-compressed random trees
        let mut seed = 0x9001u64;
        for _ in 0..40 {
            let t = pseudo_random_tree(&mut seed, 30, &["a", "b", "f", "g"]);
            let g = tree_to_dag(&t);
            assert_eq!(ev(&ranked_grammar(&g).unwrap()), ranked_tree(&t).unwrap());
        }
    }

    #[test]
    fn even_identities() {
        let g = pg("slt v1\nS = f(a,b)");
        assert_eq!(ev(&even_grammar(&g).unwrap()), parse_term("f('#'(a),'#'(b))").unwrap());
        let g = pg("slt v1\nS = a");
        assert_eq!(even_grammar(&g).unwrap().to_string(), g.to_string());
        let g = pg("slt v1\nstart B\nB(y) = f(b,y)");
        assert_eq!(
            even_grammar(&g).unwrap().to_string(),
            "slt v1\nstart B\nB(y) = f('#'(b),'#'(y))\n"
        );
        let mut seed = 0xe77u64;
        for _ in 0..40 {
            let t = pseudo_random_tree(&mut seed, 30, &["a", "b", "f"]);
            let g = tree_to_dag(&t);
            assert_eq!(ev(&even_grammar(&g).unwrap()), even_tree(&t));
        }
    }

    #[test]
    fn ensure_ranked_states() {
        let raw = pg("slt v1\nS = f(A,A)\nA = a");
        let ranked = ensure_ranked(&raw).unwrap();
        assert_eq!(ranked.to_string(), "slt v1\nstart S\nS = f#2(A,A)\nA = a#0\n");
        // idempotent on ranked input
        assert_eq!(ensure_ranked(&ranked).unwrap().to_string(), ranked.to_string());
        // half-ranked is rejected
        assert!(matches!(
            ensure_ranked(&pg("slt v1\nS = f#2(A,A)\nA = a")),
            Err(Error::MixedRanking)
        ));
        // a ranked label with the wrong child count is also mixed
        assert!(matches!(
            ensure_ranked(&pg("slt v1\nS = f#1(a#0,a#0)")),
            Err(Error::MixedRanking)
        ));
    }

    #[test]
    fn dag_compression() {
        let t = parse_term("f(g(a),g(a))").unwrap();
        let g = tree_to_dag(&t);
        // three distinct subtrees: a, g(a), and the root
        assert_eq!(g.nt_count(), 3);
        assert_eq!(ev(&g), t);
        let Symbol::Terminal(_) = g.rhs(g.start()).sym else { panic!() };
        assert_eq!(g.rhs(g.start()).children[0], g.rhs(g.start()).children[1]);

        let leaf = parse_term("a").unwrap();
        assert_eq!(ev(&tree_to_dag(&leaf)), leaf);

        let mut seed = 0xdadau64;
        for _ in 0..40 {
            let t = pseudo_random_tree(&mut seed, 40, &["a", "b", "f"]);
            assert_eq!(ev(&tree_to_dag(&t)), t);
        }
    }

    #[test]
    fn eval_mixed_context() {
        let g = pg("slt v1\nB(y) = f(b,y)");
        assert_eq!(g.rank(g.start()), 1);
        assert!(eval(&g, &BigCount::from(100u32)).is_err());
        let t = eval_mixed(&g, &BigCount::from(100u32)).unwrap();
        assert_eq!(t.to_string(), "f(b,y)");
    }

    #[test]
    fn deep_rhs_does_not_recurse() {
        let depth = 20_000;
        let mut src = String::from("slt v1\nS = ");
        for _ in 0..depth {
            src.push_str("f(");
        }
        src.push('a');
        src.push_str(&")".repeat(depth));
        let g = pg(&src);
        assert_eq!(g.size(), depth + 1);
        let t = eval(&g, &BigCount::from(100_000u64)).unwrap();
        assert_eq!(t.height(), depth);
        let printed = g.to_string();
        let g2 = parse_grammar(&printed).unwrap();
        assert_eq!(g2.to_string(), printed);
    }
}
