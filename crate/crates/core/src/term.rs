//! Explicit ordered trees and the term syntax.
//!
//! Everything here is the uncompressed side of the story: parse/print of
//! `f(a,'x y',g(b))`-style terms, depth-first-left-to-right traversals,
//! rank mangling, length-lexicographic comparison, and the canonical form
//! that decides unordered isomorphism on explicit trees.
//!
//! Trees can be deep (a 10^5-node chain is legal input), so every traversal
//! in this module, including `Drop`, `Clone` and `PartialEq`, uses an
//! explicit stack instead of recursion.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::{Error, Result};

/// The subdivision marker inserted on every edge by the `even` transforms.
/// It is the only label containing `#` that the ranking functions accept.
pub const SUBDIVISION_LABEL: &str = "#";

/// A node label.  Cheap to clone; compares and hashes by text.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(Arc<str>);

impl Label {
    /// Panics on the empty string or embedded quotes, neither of which can
    /// round-trip through the term syntax.
    pub fn new(text: impl AsRef<str>) -> Label {
        let text = text.as_ref();
        assert!(!text.is_empty(), "empty label");
        assert!(!text.contains('\''), "label may not contain a quote: {text:?}");
        Label(Arc::from(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Splits a rank-mangled label `base#k` into its parts.  Labels without
    /// a trailing `#<digits>` suffix report no rank.
    pub fn base_and_rank(&self) -> (&str, Option<u64>) {
        if let Some(pos) = self.0.rfind('#') {
            let digits = &self.0[pos + 1..];
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(k) = digits.parse() {
                    return (&self.0[..pos], Some(k));
                }
            }
        }
        (&self.0, None)
    }

    /// The mangled form `base#k`.
    pub fn with_rank(&self, k: usize) -> Label {
        Label(Arc::from(format!("{}#{}", self.0, k)))
    }

    fn is_bare(&self) -> bool {
        is_bare_symbol(&self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bare() {
            f.write_str(&self.0)
        } else {
            write!(f, "'{}'", self.0)
        }
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Label {
        Label::new(s)
    }
}

/// `ident` or `ident#digits` — everything else must be quoted when printed.
pub(crate) fn is_bare_symbol(s: &str) -> bool {
    let (head, rank) = match s.rfind('#') {
        Some(pos) if !s[pos + 1..].is_empty() && s[pos + 1..].bytes().all(|b| b.is_ascii_digit()) => {
            (&s[..pos], true)
        }
        _ => (s, false),
    };
    let _ = rank;
    let mut bytes = head.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Total order on labels used by all length-lexicographic comparisons.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelOrder {
    /// Bytewise on the base text, with the mangled rank as a numeric
    /// tiebreaker, so `a#2 < a#10` and `a#10 < b#0`.
    #[default]
    BaseThenRank,
    /// Plain bytewise comparison of the full label text.
    Bytewise,
}

impl LabelOrder {
    pub fn cmp(&self, a: &Label, b: &Label) -> Ordering {
        match self {
            LabelOrder::BaseThenRank => {
                let (ab, ar) = a.base_and_rank();
                let (bb, br) = b.base_and_rank();
                ab.cmp(bb).then(ar.cmp(&br))
            }
            LabelOrder::Bytewise => a.as_str().cmp(b.as_str()),
        }
    }
}

/// A node address: the 1-based child indices on the path from the root.
/// The empty address is the root, written `ε`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DeweyAddress(pub Vec<u32>);

impl DeweyAddress {
    pub fn root() -> DeweyAddress {
        DeweyAddress(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, i: u32) -> DeweyAddress {
        let mut v = self.0.clone();
        v.push(i);
        DeweyAddress(v)
    }
}

impl fmt::Display for DeweyAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        for (i, step) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for DeweyAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for DeweyAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<DeweyAddress> {
        let s = s.trim();
        if s.is_empty() || s == "ε" || s == "e" {
            return Ok(DeweyAddress::root());
        }
        let mut steps = Vec::new();
        for part in s.split('.') {
            let step: u32 = part
                .trim()
                .parse()
                .map_err(|_| Error::Path(format!("bad address step {part:?}")))?;
            if step == 0 {
                return Err(Error::Path("address steps are 1-based".into()));
            }
            steps.push(step);
        }
        Ok(DeweyAddress(steps))
    }
}

/// An ordered, labelled tree.
pub struct Tree {
    pub label: Label,
    pub children: Vec<Tree>,
}

impl Tree {
    pub fn new(label: Label, children: Vec<Tree>) -> Tree {
        Tree { label, children }
    }

    pub fn leaf(label: Label) -> Tree {
        Tree { label, children: Vec::new() }
    }

    pub fn size(&self) -> usize {
        self.postorder().len()
    }

    /// Height in edges; a single node has height 0.
    pub fn height(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            stack.extend(n.children.iter().map(|c| (c, d + 1)));
        }
        best
    }

    /// All nodes, children before parents, siblings left to right.
    pub fn postorder(&self) -> Vec<&Tree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter());
        }
        out.reverse();
        out
    }

    pub fn subtree_at(&self, addr: &DeweyAddress) -> Option<&Tree> {
        let mut cur = self;
        for &step in &addr.0 {
            cur = cur.children.get(step as usize - 1)?;
        }
        Some(cur)
    }

    /// The depth-first left-to-right label sequence (preorder).  For ranked
    /// trees this determines the tree.
    pub fn dflr(&self) -> Vec<Label> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n.label.clone());
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

impl Drop for Tree {
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

impl Clone for Tree {
    fn clone(&self) -> Tree {
        let mut done: Vec<Tree> = Vec::new();
        for node in self.postorder() {
            let children = done.split_off(done.len() - node.children.len());
            done.push(Tree { label: node.label.clone(), children });
        }
        done.pop().expect("postorder of a tree is never empty")
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Tree) -> bool {
        let mut stack = vec![(self, other)];
        while let Some((a, b)) = stack.pop() {
            if a.label != b.label || a.children.len() != b.children.len() {
                return false;
            }
            stack.extend(a.children.iter().zip(b.children.iter()));
        }
        true
    }
}

impl Eq for Tree {}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        enum It<'a> {
            Node(&'a Tree),
            Text(&'static str),
        }
        let mut stack = vec![It::Node(self)];
        while let Some(item) = stack.pop() {
            match item {
                It::Text(s) => f.write_str(s)?,
                It::Node(n) => {
                    write!(f, "{}", n.label)?;
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

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Tree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tree> {
        parse_term(s)
    }
}

// ---------------------------------------------------------------------------
// Lexing and parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// A symbol plus whether it was quoted (quoting matters to grammar
    /// files, where unquoted names can resolve to nonterminals).
    Sym(String, bool),
    LParen,
    RParen,
    Comma,
    Equals,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Sym(s, _) => write!(f, "symbol {s:?}"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::Equals => f.write_str("'='"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

pub(crate) struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    line_start: usize,
    peeked: Option<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Lexer<'a> {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, line_start: 0, peeked: None }
    }

    /// Lexer for text known to start at the given 1-based line (used when
    /// parsing one line of a grammar file).
    pub fn at_line(src: &'a str, line: usize) -> Lexer<'a> {
        Lexer { src: src.as_bytes(), pos: 0, line, line_start: 0, peeked: None }
    }

    fn col(&self, at: usize) -> usize {
        at - self.line_start + 1
    }

    pub fn error(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, col: self.col(at), msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while let Some(&b) = self.src.get(self.pos) {
            if b == b'\n' {
                self.line += 1;
                self.line_start = self.pos + 1;
                self.pos += 1;
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next token plus its starting byte offset.
    pub fn next_tok(&mut self) -> Result<(Tok, usize)> {
        if let Some(t) = self.peeked.take() {
            return Ok(t);
        }
        self.skip_ws();
        let start = self.pos;
        let Some(&b) = self.src.get(self.pos) else {
            return Ok((Tok::Eof, start));
        };
        let tok = match b {
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'=' => {
                self.pos += 1;
                Tok::Equals
            }
            b'\'' => {
                self.pos += 1;
                let text_start = self.pos;
                while let Some(&c) = self.src.get(self.pos) {
                    if c == b'\'' {
                        break;
                    }
                    if c == b'\n' {
                        return Err(self.error(start, "unterminated quoted symbol"));
                    }
                    self.pos += 1;
                }
                if self.src.get(self.pos) != Some(&b'\'') {
                    return Err(self.error(start, "unterminated quoted symbol"));
                }
                let text = std::str::from_utf8(&self.src[text_start..self.pos])
                    .map_err(|_| self.error(start, "symbol is not valid utf-8"))?;
                self.pos += 1;
                if text.is_empty() {
                    return Err(self.error(start, "empty quoted symbol"));
                }
                Tok::Sym(text.to_string(), true)
            }
            b if b.is_ascii_alphabetic() || b == b'_' => {
                while let Some(&c) = self.src.get(self.pos) {
                    if c.is_ascii_alphanumeric() || c == b'_' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                // optional rank suffix, so ranked grammars stay readable
                if self.src.get(self.pos) == Some(&b'#')
                    && self.src.get(self.pos + 1).is_some_and(|c| c.is_ascii_digit())
                {
                    self.pos += 1;
                    while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                Tok::Sym(text.to_string(), false)
            }
            other => {
                return Err(self.error(start, format!("unexpected character {:?}", other as char)));
            }
        };
        Ok((tok, start))
    }

    pub fn peek(&mut self) -> Result<&Tok> {
        if self.peeked.is_none() {
            let t = self.next_tok()?;
            self.peeked = Some(t);
        }
        Ok(&self.peeked.as_ref().unwrap().0)
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        match self.next_tok()? {
            (Tok::Eof, _) => Ok(()),
            (tok, at) => Err(self.error(at, format!("expected end of input, found {tok}"))),
        }
    }
}

/// Parses a term: `term := sym | sym '(' term (',' term)* ')'`.
pub fn parse_term(src: &str) -> Result<Tree> {
    let mut lx = Lexer::new(src);
    let t = parse_term_with(&mut lx)?;
    lx.expect_eof()?;
    Ok(t)
}

/// Parses one term from an ongoing token stream, leaving trailing input.
pub(crate) fn parse_term_with(lx: &mut Lexer<'_>) -> Result<Tree> {
    let mut frames: Vec<(Label, Vec<Tree>)> = Vec::new();
    loop {
        // read one symbol, opening a frame if it is applied to arguments
        let (tok, at) = lx.next_tok()?;
        let sym = match tok {
            Tok::Sym(s, _) => Label::new(s),
            other => return Err(lx.error(at, format!("expected a symbol, found {other}"))),
        };
        let mut done: Tree;
        if matches!(lx.peek()?, Tok::LParen) {
            lx.next_tok()?;
            frames.push((sym, Vec::new()));
            continue;
        } else {
            done = Tree::leaf(sym);
        }
        // attach the completed subtree, closing as many frames as possible
        loop {
            let Some(top) = frames.last_mut() else {
                return Ok(done);
            };
            top.1.push(done);
            let (tok, at) = lx.next_tok()?;
            match tok {
                Tok::Comma => break,
                Tok::RParen => {
                    let (label, children) = frames.pop().unwrap();
                    done = Tree::new(label, children);
                }
                other => {
                    return Err(lx.error(at, format!("expected ',' or ')', found {other}")));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ranking, comparison, canonical form
// ---------------------------------------------------------------------------

/// Relabels every node `σ` with `k` children as `σ#k`, making equal labels
/// imply equal child counts.  Labels containing `#` are rejected, except
/// the bare subdivision marker [`SUBDIVISION_LABEL`], which mangles to
/// `##k` without ambiguity.
pub fn ranked_tree(t: &Tree) -> Result<Tree> {
    let mut done: Vec<Tree> = Vec::new();
    for node in t.postorder() {
        let text = node.label.as_str();
        if text.contains('#') && text != SUBDIVISION_LABEL {
            return Err(Error::ReservedLabel(text.to_string()));
        }
        let children = done.split_off(done.len() - node.children.len());
        done.push(Tree::new(node.label.with_rank(children.len()), children));
    }
    Ok(done.pop().unwrap())
}

/// Length-lexicographic comparison: first by node count, then by the
/// depth-first label sequences under `ord`.
pub fn llex_compare_trees(a: &Tree, b: &Tree, ord: LabelOrder) -> Ordering {
    match a.size().cmp(&b.size()) {
        Ordering::Equal => {}
        other => return other,
    }
    cmp_dflr(a, b, ord)
}

/// Lexicographic comparison of the dflr sequences, ignoring length.
fn cmp_dflr(a: &Tree, b: &Tree, ord: LabelOrder) -> Ordering {
    let mut sa = vec![a];
    let mut sb = vec![b];
    loop {
        match (sa.pop(), sb.pop()) {
            (Some(x), Some(y)) => {
                match ord.cmp(&x.label, &y.label) {
                    Ordering::Equal => {}
                    other => return other,
                }
                sa.extend(x.children.iter().rev());
                sb.extend(y.children.iter().rev());
            }
            (None, None) => return Ordering::Equal,
            (Some(_), None) => return Ordering::Greater,
            (None, Some(_)) => return Ordering::Less,
        }
    }
}

/// Canonical ordered form of an unordered tree: children at every node are
/// replaced by their canons and sorted llex-ascending.  Two trees have equal
/// canons exactly when they are isomorphic as unordered rooted trees.
/// Intended for ranked trees; the recursion itself works for any tree.
pub fn ahu_canon(t: &Tree, ord: LabelOrder) -> Tree {
    let mut done: Vec<(Tree, usize)> = Vec::new();
    for node in t.postorder() {
        let mut kids = done.split_off(done.len() - node.children.len());
        kids.sort_by(|(x, sx), (y, sy)| sx.cmp(sy).then_with(|| cmp_dflr(x, y, ord)));
        let size = 1 + kids.iter().map(|(_, s)| *s).sum::<usize>();
        let children = kids.into_iter().map(|(c, _)| c).collect();
        done.push((Tree::new(node.label.clone(), children), size));
    }
    done.pop().unwrap().0
}
