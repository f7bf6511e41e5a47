//! Quantified boolean formulas and their encoding as grammar pairs.
//!
//! A closed formula `Q1 z1 … Qn zn : φ` in negation normal form is turned
//! into two non-linear grammars whose values are isomorphic as rooted
//! unordered trees — and bisimulation-equivalent — exactly when the
//! formula is true.  Every subformula becomes a nonterminal pair A/B over
//! the alphabet `{f, a, b, 0, 1}`, parameterized by its free variables:
//! conjunction pairs the two sides componentwise under the distinct unary
//! tags `a` and `b`, disjunction crosses them, and a quantifier
//! instantiates its variable with both constants, conjunction-style for ∀
//! and disjunction-style for ∃.  A literal `z` becomes the tagged pair
//! `f(a(z), b(1))` / `f(a(1), b(z))` (with `0` when negated): the sides
//! agree exactly when the substituted constant matches, and the tags keep
//! the two children apart under the unordered reading — the plain pair
//! `f(z, 1)` / `f(1, z)` would not, since `f(0, 1)` and `f(1, 0)` are the
//! same unordered tree.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarBuilder, RhsTree};
use crate::term::Label;

/// A prefix quantifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    Forall,
    Exists,
}

/// A quantifier-free matrix in negation normal form: negation occurs only
/// inside literals.  `var` indexes the quantifier prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matrix {
    Lit { var: usize, positive: bool },
    And(Box<Matrix>, Box<Matrix>),
    Or(Box<Matrix>, Box<Matrix>),
}

/// A closed quantified boolean formula `Q1 z1 … Qn zn : φ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QbfFormula {
    prefix: Vec<(Quantifier, String)>,
    matrix: Matrix,
}

impl QbfFormula {
    /// Builds a formula, rejecting duplicate variable names and literals
    /// that point outside the prefix (the formula must be closed).
    pub fn new(prefix: Vec<(Quantifier, String)>, matrix: Matrix) -> Result<QbfFormula> {
        let n = prefix.len();
        let mut seen = HashMap::new();
        for (i, (_, name)) in prefix.iter().enumerate() {
            if seen.insert(name.clone(), i).is_some() {
                return Err(Error::Qbf(format!("variable {name} is bound twice")));
            }
        }
        let mut todo = vec![&matrix];
        while let Some(m) = todo.pop() {
            match m {
                Matrix::Lit { var, .. } => {
                    if *var >= n {
                        return Err(Error::Qbf(format!(
                            "literal references variable {var} but only {n} are bound"
                        )));
                    }
                }
                Matrix::And(l, r) | Matrix::Or(l, r) => {
                    todo.push(l);
                    todo.push(r);
                }
            }
        }
        Ok(QbfFormula { prefix, matrix })
    }

    pub fn prefix(&self) -> &[(Quantifier, String)] {
        &self.prefix
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn var_count(&self) -> usize {
        self.prefix.len()
    }
}

impl fmt::Display for QbfFormula {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (q, name) in &self.prefix {
            let q = match q {
                Quantifier::Forall => 'A',
                Quantifier::Exists => 'E',
            };
            write!(out, "{q} {name}. ")?;
        }
        enum Tok<'m> {
            Sub(&'m Matrix),
            Text(&'static str),
        }
        let mut stack = vec![Tok::Sub(&self.matrix)];
        while let Some(t) = stack.pop() {
            match t {
                Tok::Text(s) => out.write_str(s)?,
                Tok::Sub(Matrix::Lit { var, positive }) => {
                    if !positive {
                        out.write_str("!")?;
                    }
                    out.write_str(&self.prefix[*var].1)?;
                }
                Tok::Sub(Matrix::And(l, r)) => {
                    stack.extend([Tok::Text(")"), Tok::Sub(r), Tok::Text(" & "), Tok::Sub(l), Tok::Text("(")]);
                }
                Tok::Sub(Matrix::Or(l, r)) => {
                    stack.extend([Tok::Text(")"), Tok::Sub(r), Tok::Text(" | "), Tok::Sub(l), Tok::Text("(")]);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Dot,
    And,
    Or,
    Not,
    LPar,
    RPar,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '.' => Tok::Dot,
            '&' => Tok::And,
            '|' => Tok::Or,
            '!' => Tok::Not,
            '(' => Tok::LPar,
            ')' => Tok::RPar,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => return Err(Error::Qbf(format!("unexpected character {c:?} at byte {i}"))),
        };
        toks.push((tok, i));
        i += 1;
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
    vars: HashMap<String, usize>,
}

/// Recursion guard for `!` chains and parenthesis nests.
const MAX_NEST: usize = 512;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|(t, _)| t.clone());
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn fail(&self, msg: &str) -> Error {
        match self.toks.get(self.i) {
            Some((t, at)) => Error::Qbf(format!("{msg}, found {t:?} at byte {at}")),
            None => Error::Qbf(format!("{msg}, found end of input")),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    /// `A z.` / `E w.` groups; `A`/`E` only acts as a quantifier when an
    /// identifier follows, so a variable may shadow the keywords.
    fn prefix(&mut self) -> Result<Vec<(Quantifier, String)>> {
        let mut prefix = Vec::new();
        loop {
            let q = match (self.peek(), self.toks.get(self.i + 1).map(|(t, _)| t)) {
                (Some(Tok::Ident(k)), Some(Tok::Ident(_))) if k == "A" => Quantifier::Forall,
                (Some(Tok::Ident(k)), Some(Tok::Ident(_))) if k == "E" => Quantifier::Exists,
                _ => return Ok(prefix),
            };
            self.i += 1;
            let Some(Tok::Ident(name)) = self.bump() else { unreachable!() };
            if !self.eat(&Tok::Dot) {
                return Err(self.fail("expected '.' after the bound variable"));
            }
            if self.vars.insert(name.clone(), prefix.len()).is_some() {
                return Err(Error::Qbf(format!("variable {name} is bound twice")));
            }
            prefix.push((q, name));
        }
    }

    // `&` binds tighter than `|`; under an odd number of negations the
    // textual operators build the dual nodes.
    fn disjunction(&mut self, neg: bool, depth: usize) -> Result<Matrix> {
        let mut m = self.conjunction(neg, depth)?;
        while self.eat(&Tok::Or) {
            let r = self.conjunction(neg, depth)?;
            m = if neg {
                Matrix::And(Box::new(m), Box::new(r))
            } else {
                Matrix::Or(Box::new(m), Box::new(r))
            };
        }
        Ok(m)
    }

    fn conjunction(&mut self, neg: bool, depth: usize) -> Result<Matrix> {
        let mut m = self.atom(neg, depth)?;
        while self.eat(&Tok::And) {
            let r = self.atom(neg, depth)?;
            m = if neg {
                Matrix::Or(Box::new(m), Box::new(r))
            } else {
                Matrix::And(Box::new(m), Box::new(r))
            };
        }
        Ok(m)
    }

    fn atom(&mut self, neg: bool, depth: usize) -> Result<Matrix> {
        if depth > MAX_NEST {
            return Err(self.fail("expression nested too deeply"));
        }
        match self.bump() {
            Some(Tok::Not) => self.atom(!neg, depth + 1),
            Some(Tok::LPar) => {
                let m = self.disjunction(neg, depth + 1)?;
                if !self.eat(&Tok::RPar) {
                    return Err(self.fail("expected ')'"));
                }
                Ok(m)
            }
            Some(Tok::Ident(name)) => match self.vars.get(&name) {
                Some(&var) => Ok(Matrix::Lit { var, positive: !neg }),
                None => Err(Error::Qbf(format!("unbound variable {name}"))),
            },
            _ => {
                self.i = self.i.saturating_sub(1);
                Err(self.fail("expected a variable, '!' or '('"))
            }
        }
    }
}

/// Parses `A z. E w. (z | !w) & (w | !z)`: an `A`/`E` quantifier prefix
/// with `.` after each bound variable, then a matrix over `&`, `|`, `!`
/// and parentheses.  `!` may negate any subformula; negations are pushed
/// down to the literals, so the result is in negation normal form.
pub fn qbf_parse(text: &str) -> Result<QbfFormula> {
    let mut p = Parser { toks: lex(text)?, i: 0, vars: HashMap::new() };
    let prefix = p.prefix()?;
    let matrix = p.disjunction(false, 0)?;
    if p.i < p.toks.len() {
        return Err(p.fail("trailing input after the matrix"));
    }
    QbfFormula::new(prefix, matrix)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum FlatOp {
    Lit { var: usize, positive: bool },
    And,
    Or,
}

fn flatten(m: &Matrix) -> Vec<FlatOp> {
    enum Walk<'m> {
        Visit(&'m Matrix),
        Emit(&'m Matrix),
    }
    let mut prog = Vec::new();
    let mut stack = vec![Walk::Visit(m)];
    while let Some(w) = stack.pop() {
        match w {
            Walk::Visit(Matrix::Lit { var, positive }) => {
                prog.push(FlatOp::Lit { var: *var, positive: *positive });
            }
            Walk::Visit(m @ (Matrix::And(l, r) | Matrix::Or(l, r))) => {
                stack.push(Walk::Emit(m));
                stack.push(Walk::Visit(r));
                stack.push(Walk::Visit(l));
            }
            Walk::Emit(Matrix::And(..)) => prog.push(FlatOp::And),
            Walk::Emit(Matrix::Or(..)) => prog.push(FlatOp::Or),
            Walk::Emit(Matrix::Lit { .. }) => unreachable!(),
        }
    }
    prog
}

/// Evaluates a formula by tabulating the matrix over all assignments and
/// folding the quantifiers innermost-first.  Refuses more than 24
/// variables — the table would no longer be desk-sized.
pub fn qbf_eval(f: &QbfFormula) -> Result<bool> {
    let n = f.prefix.len();
    if n > 24 {
        return Err(Error::Qbf(format!("{n} variables, over the 24-variable evaluation limit")));
    }
    let prog = flatten(&f.matrix);
    let mut table = Vec::with_capacity(1usize << n);
    let mut vals: Vec<bool> = Vec::new();
    for asg in 0..1u32 << n {
        vals.clear();
        for op in &prog {
            let v = match op {
                FlatOp::Lit { var, positive } => ((asg >> var) & 1 == 1) == *positive,
                FlatOp::And => {
                    let (b, a) = (vals.pop().unwrap(), vals.pop().unwrap());
                    a && b
                }
                FlatOp::Or => {
                    let (b, a) = (vals.pop().unwrap(), vals.pop().unwrap());
                    a || b
                }
            };
            vals.push(v);
        }
        debug_assert_eq!(vals.len(), 1);
        table.push(vals[0]);
    }
    for (i, (q, _)) in f.prefix.iter().enumerate().rev() {
        let half = 1usize << i;
        for a in 0..half {
            table[a] = match q {
                Quantifier::Forall => table[a] && table[a + half],
                Quantifier::Exists => table[a] || table[a + half],
            };
        }
        table.truncate(half);
    }
    Ok(table[0])
}

// ---------------------------------------------------------------------------
// The grammar encoding
// ---------------------------------------------------------------------------

fn t(label: &str, kids: Vec<RhsTree>) -> RhsTree {
    RhsTree::term(Label::new(label), kids)
}

fn bit(c: bool) -> RhsTree {
    t(if c { "1" } else { "0" }, Vec::new())
}

fn pair(l: RhsTree, r: RhsTree) -> RhsTree {
    t("f", vec![l, r])
}

fn tag_a(x: RhsTree) -> RhsTree {
    t("a", vec![x])
}

fn tag_b(x: RhsTree) -> RhsTree {
    t("b", vec![x])
}

/// Encodes a formula as two grammars over `{f, a, b, 0, 1}` whose values
/// are isomorphic as rooted unordered trees — equivalently, bisimulation
/// equivalent — exactly when the formula is true.  The first grammar
/// starts on the A side, the second on the B side; unreached nonterminals
/// of the shared production family are pruned from each.
pub fn qbf_to_st(f: &QbfFormula) -> (Grammar, Grammar) {
    (emit(f, true), emit(f, false))
}

fn emit(f: &QbfFormula, a_side: bool) -> Grammar {
    let n = f.prefix.len();
    let flat = flatten(&f.matrix);

    // free-variable tuples (sorted) and child indices, in matrix postorder
    let mut frees: Vec<Vec<usize>> = Vec::with_capacity(flat.len());
    let mut kids: Vec<Option<(usize, usize)>> = Vec::with_capacity(flat.len());
    let mut open: Vec<usize> = Vec::new();
    for (k, op) in flat.iter().enumerate() {
        match op {
            FlatOp::Lit { var, .. } => {
                frees.push(vec![*var]);
                kids.push(None);
            }
            FlatOp::And | FlatOp::Or => {
                let r = open.pop().unwrap();
                let l = open.pop().unwrap();
                let mut u = [frees[l].clone(), frees[r].clone()].concat();
                u.sort_unstable();
                u.dedup();
                frees.push(u);
                kids.push(Some((l, r)));
            }
        }
        open.push(k);
    }
    let root = open.pop().unwrap();

    // free variables of the subformula starting at quantifier i (0-based):
    // the matrix frees below the binder
    let qfree: Vec<Vec<usize>> =
        (0..=n).map(|i| frees[root].iter().copied().filter(|&v| v < i).collect()).collect();

    let mut b = GrammarBuilder::new();
    let mut a_nt = Vec::with_capacity(flat.len());
    let mut b_nt = Vec::with_capacity(flat.len());
    for k in 0..flat.len() {
        let rank = frees[k].len() as u32;
        a_nt.push(b.declare(&format!("A{k}"), rank).expect("fresh"));
        b_nt.push(b.declare(&format!("B{k}"), rank).expect("fresh"));
    }
    let mut a_q = Vec::with_capacity(n);
    let mut b_q = Vec::with_capacity(n);
    for (i, q) in qfree.iter().enumerate().take(n) {
        let rank = q.len() as u32;
        a_q.push(b.declare(&format!("AQ{}", i + 1), rank).expect("fresh"));
        b_q.push(b.declare(&format!("BQ{}", i + 1), rank).expect("fresh"));
    }

    // pass a parent's parameters on to a child with fewer free variables
    let sel = |child: &[usize], parent: &[usize]| -> Vec<RhsTree> {
        child
            .iter()
            .map(|v| RhsTree::param(parent.binary_search(v).expect("child frees nest") as u32))
            .collect()
    };

    for k in 0..flat.len() {
        match (&flat[k], kids[k]) {
            (FlatOp::Lit { positive, .. }, None) => {
                let c = bit(*positive);
                let y = || RhsTree::param(0);
                b.define(a_nt[k], pair(tag_a(y()), tag_b(c.clone())));
                b.define(b_nt[k], pair(tag_a(c), tag_b(y())));
            }
            (FlatOp::And, Some((l, r))) => {
                let al = || RhsTree::nt(a_nt[l], sel(&frees[l], &frees[k]));
                let ar = || RhsTree::nt(a_nt[r], sel(&frees[r], &frees[k]));
                let bl = || RhsTree::nt(b_nt[l], sel(&frees[l], &frees[k]));
                let br = || RhsTree::nt(b_nt[r], sel(&frees[r], &frees[k]));
                b.define(a_nt[k], pair(tag_a(al()), tag_b(ar())));
                b.define(b_nt[k], pair(tag_a(bl()), tag_b(br())));
            }
            (FlatOp::Or, Some((l, r))) => {
                let al = || RhsTree::nt(a_nt[l], sel(&frees[l], &frees[k]));
                let ar = || RhsTree::nt(a_nt[r], sel(&frees[r], &frees[k]));
                let bl = || RhsTree::nt(b_nt[l], sel(&frees[l], &frees[k]));
                let br = || RhsTree::nt(b_nt[r], sel(&frees[r], &frees[k]));
                b.define(
                    a_nt[k],
                    pair(pair(tag_a(al()), tag_b(br())), pair(tag_a(bl()), tag_b(ar()))),
                );
                b.define(
                    b_nt[k],
                    pair(pair(tag_a(al()), tag_b(ar())), pair(tag_a(bl()), tag_b(br()))),
                );
            }
            _ => unreachable!(),
        }
    }

    for i in (0..n).rev() {
        let (inner_a, inner_b, inner_free) = if i + 1 == n {
            (a_nt[root], b_nt[root], &frees[root])
        } else {
            (a_q[i + 1], b_q[i + 1], &qfree[i + 1])
        };
        // instantiate the bound variable with a constant, pass the rest on
        let inst = |nt: crate::grammar::NtId, c: bool| -> RhsTree {
            let args = inner_free
                .iter()
                .map(|&v| {
                    if v == i {
                        bit(c)
                    } else {
                        RhsTree::param(qfree[i].binary_search(&v).expect("outer frees nest") as u32)
                    }
                })
                .collect();
            RhsTree::nt(nt, args)
        };
        match f.prefix[i].0 {
            Quantifier::Forall => {
                b.define(a_q[i], pair(tag_a(inst(inner_a, false)), tag_b(inst(inner_a, true))));
                b.define(b_q[i], pair(tag_a(inst(inner_b, false)), tag_b(inst(inner_b, true))));
            }
            Quantifier::Exists => {
                b.define(
                    a_q[i],
                    pair(
                        pair(tag_a(inst(inner_a, false)), tag_b(inst(inner_b, true))),
                        pair(tag_a(inst(inner_b, false)), tag_b(inst(inner_a, true))),
                    ),
                );
                b.define(
                    b_q[i],
                    pair(
                        pair(tag_a(inst(inner_a, false)), tag_b(inst(inner_a, true))),
                        pair(tag_a(inst(inner_b, false)), tag_b(inst(inner_b, true))),
                    ),
                );
            }
        }
    }

    let start = if n == 0 {
        if a_side { a_nt[root] } else { b_nt[root] }
    } else if a_side {
        a_q[0]
    } else {
        b_q[0]
    };
    b.finish(start).expect("gadget grammars are acyclic and complete")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slp::EqualityPolicy;
    use crate::st::{bisim_st, iso_st, ExpansionBudget};
    use crate::term::LabelOrder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lit(var: usize, positive: bool) -> Matrix {
        Matrix::Lit { var, positive }
    }

    fn and(l: Matrix, r: Matrix) -> Matrix {
        Matrix::And(Box::new(l), Box::new(r))
    }

    fn or(l: Matrix, r: Matrix) -> Matrix {
        Matrix::Or(Box::new(l), Box::new(r))
    }

    fn decide(f: &QbfFormula) -> (bool, bool) {
        let (g1, g2) = qbf_to_st(f);
        let ord = LabelOrder::BaseThenRank;
        let pol = EqualityPolicy::default();
        let budget = ExpansionBudget::default();
        (
            iso_st(&g1, &g2, &budget, ord, &pol).unwrap(),
            bisim_st(&g1, &g2, &budget, ord, &pol).unwrap(),
        )
    }

    #[test]
    fn parses_the_surface_syntax() {
        let f = qbf_parse("E z. z").unwrap();
        assert_eq!(f.prefix(), &[(Quantifier::Exists, "z".to_string())]);
        assert_eq!(f.matrix(), &lit(0, true));

        let f = qbf_parse("A z. z").unwrap();
        assert_eq!(f.prefix()[0].0, Quantifier::Forall);

        let f = qbf_parse("E z. !(z)").unwrap();
        assert_eq!(f.matrix(), &lit(0, false));

        let f = qbf_parse("A z. E w. (z | !w) & (w | !z)").unwrap();
        assert_eq!(f.var_count(), 2);
        assert_eq!(
            f.matrix(),
            &and(or(lit(0, true), lit(1, false)), or(lit(1, true), lit(0, false)))
        );

        // `&` binds tighter than `|`
        let f = qbf_parse("E x. E y. E z. x | y & z").unwrap();
        assert_eq!(f.matrix(), &or(lit(0, true), and(lit(1, true), lit(2, true))));
    }

    #[test]
    fn pushes_negation_to_the_literals() {
        let f = qbf_parse("E z. E w. !(z & !w)").unwrap();
        assert_eq!(f.matrix(), &or(lit(0, false), lit(1, true)));
        let f = qbf_parse("E z. !!z").unwrap();
        assert_eq!(f.matrix(), &lit(0, true));
        let f = qbf_parse("E z. E w. !(z | (w & !z))").unwrap();
        assert_eq!(f.matrix(), &and(lit(0, false), or(lit(1, false), lit(0, true))));
    }

    #[test]
    fn rejects_malformed_input() {
        let bad = [
            "",
            "z",
            "E z. w",
            "E z.",
            "E z z",
            "E z. (z",
            "E z. z )",
            "E z. z &",
            "E z. z @ w",
            "A z. E z. z",
            "E z. z z",
        ];
        for text in bad {
            assert!(qbf_parse(text).is_err(), "{text:?} parsed");
        }
    }

    #[test]
    fn display_round_trips_through_the_parser() {
        let texts = [
            "E z. z",
            "A z. E w. (z | !w) & (w | !z)",
            "E x. A y. !x | y & (x | !y)",
            "A p. E q. A r. !(p & (q | !r))",
        ];
        for text in texts {
            let f = qbf_parse(text).unwrap();
            assert_eq!(qbf_parse(&f.to_string()).unwrap(), f, "{text:?} via {f}");
        }
    }

    #[test]
    fn evaluates_hand_formulas() {
        let cases = [
            ("E z. z", true),
            ("A z. z", false),
            ("E z. !z", true),
            ("A z. !z", false),
            ("A z. z | !z", true),
            ("E z. z & !z", false),
            ("A z. E w. (z | !w) & (w | !z)", true),
            // alternation order matters
            ("E z. A w. (z & w) | (!z & !w)", false),
            ("A w. E z. (z & w) | (!z & !w)", true),
            ("A x. A y. E z. (x | y | z) & (!x | !y | !z)", true),
        ];
        for (text, want) in cases {
            assert_eq!(qbf_eval(&qbf_parse(text).unwrap()).unwrap(), want, "{text}");
        }
    }

    #[test]
    fn eval_refuses_too_many_variables() {
        let mut text = String::new();
        for i in 0..25 {
            text.push_str(&format!("E v{i}. "));
        }
        text.push_str("v0");
        let f = qbf_parse(&text).unwrap();
        assert!(matches!(qbf_eval(&f), Err(Error::Qbf(_))));
    }

    fn flip(q: Quantifier) -> Quantifier {
        match q {
            Quantifier::Forall => Quantifier::Exists,
            Quantifier::Exists => Quantifier::Forall,
        }
    }

    fn negate(m: &Matrix) -> Matrix {
        match m {
            Matrix::Lit { var, positive } => lit(*var, !positive),
            Matrix::And(l, r) => or(negate(l), negate(r)),
            Matrix::Or(l, r) => and(negate(l), negate(r)),
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, vars: usize, leaves: usize) -> Matrix {
        if leaves <= 1 {
            return lit(rng.gen_range(0..vars), rng.gen());
        }
        let left = rng.gen_range(1..leaves);
        let l = random_matrix(rng, vars, left);
        let r = random_matrix(rng, vars, leaves - left);
        if rng.gen() {
            and(l, r)
        } else {
            or(l, r)
        }
    }

    fn random_formula(rng: &mut ChaCha8Rng, max_vars: usize, max_leaves: usize) -> QbfFormula {
        let n = rng.gen_range(1..=max_vars);
        let prefix = (0..n)
            .map(|i| {
                let q = if rng.gen() { Quantifier::Forall } else { Quantifier::Exists };
                (q, format!("v{i}"))
            })
            .collect();
        let leaves = rng.gen_range(1..=max_leaves);
        let matrix = random_matrix(rng, n, leaves);
        QbfFormula::new(prefix, matrix).unwrap()
    }

    #[test]
    fn negating_the_matrix_and_swapping_quantifiers_flips_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let f = random_formula(&mut rng, 5, 7);
            let dual = QbfFormula::new(
                f.prefix().iter().map(|(q, z)| (flip(*q), z.clone())).collect(),
                negate(f.matrix()),
            )
            .unwrap();
            assert_eq!(qbf_eval(&f).unwrap(), !qbf_eval(&dual).unwrap(), "{f}");
        }
    }

    #[test]
    fn decides_the_one_variable_formulas() {
        for (text, want) in
            [("E z. z", true), ("A z. z", false), ("E z. !z", true), ("A z. !z", false)]
        {
            let f = qbf_parse(text).unwrap();
            assert_eq!(qbf_eval(&f).unwrap(), want, "{text}");
            assert_eq!(decide(&f), (want, want), "{text}");
        }
    }

    #[test]
    fn gadget_pairs_decide_truth_on_two_variable_templates() {
        let lits = ["z", "!z", "w", "!w"];
        let mut checked = 0;
        let (mut trues, mut falses) = (0, 0);
        for p in ["A z. A w.", "A z. E w.", "E z. A w.", "E z. E w."] {
            for l1 in lits {
                for op in ["&", "|"] {
                    for l2 in lits {
                        let text = format!("{p} ({l1}) {op} ({l2})");
                        let f = qbf_parse(&text).unwrap();
                        let want = qbf_eval(&f).unwrap();
                        let (iso, bi) = decide(&f);
                        assert_eq!(iso, want, "{text}");
                        assert_eq!(bi, want, "{text}");
                        if want {
                            trues += 1;
                        } else {
                            falses += 1;
                        }
                        checked += 1;
                    }
                }
            }
        }
        assert_eq!(checked, 128);
        assert!(trues >= 30 && falses >= 30, "{trues} true, {falses} false");
    }

    #[test]
    fn gadget_pairs_match_eval_on_random_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (mut trues, mut falses) = (0, 0);
        for round in 0..40 {
            let f = random_formula(&mut rng, 4, 6);
            let want = qbf_eval(&f).unwrap();
            let (g1, g2) = qbf_to_st(&f);
            let ord = LabelOrder::BaseThenRank;
            let pol = EqualityPolicy::default();
            let budget = ExpansionBudget::default();
            assert_eq!(iso_st(&g1, &g2, &budget, ord, &pol).unwrap(), want, "{f}");
            if round % 4 == 0 {
                assert_eq!(bisim_st(&g1, &g2, &budget, ord, &pol).unwrap(), want, "{f}");
            }
            if want {
                trues += 1;
            } else {
                falses += 1;
            }
        }
        assert!(trues >= 8 && falses >= 8, "{trues} true, {falses} false");
    }

    #[test]
    fn emitted_grammars_copy_parameters() {
        // ∀∃ over a two-variable matrix exercises every gadget; the
        // emitted grammars must be genuinely non-linear
        let f = qbf_parse("A z. E w. (z | !w) & (w | !z)").unwrap();
        let (g1, g2) = qbf_to_st(&f);
        assert!(!g1.is_linear());
        assert!(!g2.is_linear());
        for g in [&g1, &g2] {
            assert_eq!(g.rank(g.start()), 0);
        }
    }

    #[test]
    fn rejects_open_formulas_at_construction() {
        assert!(QbfFormula::new(vec![(Quantifier::Exists, "z".into())], lit(1, true)).is_err());
        assert!(QbfFormula::new(
            vec![(Quantifier::Exists, "z".into()), (Quantifier::Forall, "z".into())],
            lit(0, true)
        )
        .is_err());
    }
}
