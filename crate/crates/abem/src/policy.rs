//! Access-policy language: threshold trees, the text grammar, top-down secret
//! sharing, and Lagrange recombination.
//!
//! Grammar (whitespace-insensitive between tokens):
//!
//! ```text
//! policy   := or_expr
//! or_expr  := and_expr ("or" and_expr)*
//! and_expr := atom ("and" atom)*
//! atom     := attribute
//!           | INT "of" "(" policy ("," policy)+ ")"
//!           | "(" policy ")"
//! attribute := [A-Za-z_][A-Za-z0-9_:.-]*
//! ```
//!
//! `and` binds tighter than `or`; `and`/`or` are sugar for n-of-n and 1-of-n
//! thresholds, and runs of the same operator flatten into one n-ary
//! [`PolicyAst::Threshold`] node. `and`, `or`, `of` are reserved words.
//!
//! Secret sharing assigns each threshold node a random polynomial of degree
//! k-1 whose constant term is the node's value; child i receives the
//! evaluation at i (1-based position). Leaf shares are reported in preorder
//! (0-based leaf index). Shifting every leaf share by a constant yields a
//! valid sharing of the shifted secret, which is what lets a cached
//! encryption be re-randomized without re-walking the tree.

use crate::bilinear::{random_scalar, RandomnessError, Scalar};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

/// Maximum tree depth accepted by the parser and [`PolicyAst::validate`]
/// (a lone attribute has depth 1).
pub const MAX_DEPTH: u32 = 32;
/// Maximum number of leaves accepted by the parser and [`PolicyAst::validate`].
pub const MAX_LEAVES: usize = 4096;

/// Parenthesis/threshold nesting the parser will follow before giving up;
/// protects the recursive descent from stack exhaustion on adversarial input.
const MAX_SYNTACTIC_NESTING: u32 = 128;

/// Threshold access tree. `Threshold { k, children }` is satisfied when at
/// least `k` children are satisfied; a leaf is satisfied when its attribute
/// is held.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyAst {
    Leaf(String),
    Threshold { k: u32, children: Vec<PolicyAst> },
}

/// Structural or evaluation failure outside parsing.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("threshold k={k} outside 1..={n}")]
    InvalidThreshold { k: u32, n: usize },
    #[error("threshold node has no children")]
    NoChildren,
    #[error("policy depth {depth} exceeds maximum {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("policy has {leaves} leaves, exceeding maximum {max}")]
    TooManyLeaves { leaves: usize, max: usize },
    #[error("index {i} not in evaluation set")]
    IndexNotInSet { i: u64 },
    #[error("duplicate index {i} in evaluation set")]
    DuplicateIndex { i: u64 },
    #[error("index zero is not a valid share position")]
    ZeroIndex,
    #[error("missing share for leaf {leaf_index}")]
    MissingShare { leaf_index: usize },
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
}

impl PolicyAst {
    /// Parses policy text; see the module docs for the grammar.
    pub fn parse(src: &str) -> Result<PolicyAst, ParseError> {
        parse_policy(src)
    }

    /// Depth in node levels; a lone leaf has depth 1.
    pub fn depth(&self) -> u32 {
        match self {
            PolicyAst::Leaf(_) => 1,
            PolicyAst::Threshold { children, .. } => {
                1 + children.iter().map(PolicyAst::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            PolicyAst::Leaf(_) => 1,
            PolicyAst::Threshold { children, .. } => {
                children.iter().map(PolicyAst::leaf_count).sum()
            }
        }
    }

    /// Leaf attributes in preorder; index into this with the leaf indices
    /// used by shares and satisfying assignments.
    pub fn leaf_attrs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a PolicyAst, out: &mut Vec<&'a str>) {
            match node {
                PolicyAst::Leaf(a) => out.push(a.as_str()),
                PolicyAst::Threshold { children, .. } => {
                    for c in children {
                        walk(c, out);
                    }
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Checks threshold bounds and the depth/leaf limits. Parsed trees always
    /// pass; programmatically built trees are checked before sharing.
    pub fn validate(&self) -> Result<(), PolicyError> {
        fn walk(node: &PolicyAst) -> Result<(), PolicyError> {
            if let PolicyAst::Threshold { k, children } = node {
                if children.is_empty() {
                    return Err(PolicyError::NoChildren);
                }
                if *k == 0 || *k as usize > children.len() {
                    return Err(PolicyError::InvalidThreshold {
                        k: *k,
                        n: children.len(),
                    });
                }
                for c in children {
                    walk(c)?;
                }
            }
            Ok(())
        }
        walk(self)?;
        let depth = self.depth();
        if depth > MAX_DEPTH {
            return Err(PolicyError::DepthExceeded {
                depth,
                max: MAX_DEPTH,
            });
        }
        let leaves = self.leaf_count();
        if leaves > MAX_LEAVES {
            return Err(PolicyError::TooManyLeaves {
                leaves,
                max: MAX_LEAVES,
            });
        }
        Ok(())
    }

    /// Renders the tree as policy text that parses back to an equal tree.
    ///
    /// Every grammar-expressible tree (all thresholds with >= 2 children and
    /// attributes within the grammar's charset) round-trips exactly. A
    /// single-child threshold is not expressible and collapses to its child.
    pub fn pretty_print(&self) -> String {
        let mut out = String::new();
        render(self, &mut out);
        out
    }
}

fn render(node: &PolicyAst, out: &mut String) {
    match node {
        PolicyAst::Leaf(a) => out.push_str(a),
        PolicyAst::Threshold { children, .. } if children.len() == 1 => {
            render(&children[0], out);
        }
        PolicyAst::Threshold { k, children } => {
            let n = children.len() as u32;
            if *k == n || *k == 1 {
                let sep = if *k == 1 { " or " } else { " and " };
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        out.push_str(sep);
                    }
                    render_operand(c, out);
                }
            } else {
                out.push_str(&format!("{k} of ("));
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    render(c, out);
                }
                out.push(')');
            }
        }
    }
}

/// Operand of an and/or chain. Nested and/or nodes take parentheses (both
/// for precedence and so same-operator nesting survives reparsing without
/// flattening); leaves and general "k of (...)" nodes are self-delimiting.
fn render_operand(node: &PolicyAst, out: &mut String) {
    match node {
        PolicyAst::Threshold { k, children }
            if children.len() > 1 && (*k == 1 || *k as usize == children.len()) =>
        {
            out.push('(');
            render(node, out);
            out.push(')');
        }
        _ => render(node, out),
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// Parse failure with a 1-based source position.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected {found}, expected {expected}")]
    UnexpectedToken {
        found: String,
        expected: &'static str,
    },
    #[error("unexpected end of input, expected {expected}")]
    UnexpectedEnd { expected: &'static str },
    #[error("threshold must be at least 1")]
    ThresholdZero,
    #[error("threshold {k} exceeds its {children} children")]
    ThresholdTooLarge { k: u64, children: usize },
    #[error("threshold needs at least two children")]
    ThresholdTooFewChildren,
    #[error("threshold value too large")]
    IntegerOverflow,
    #[error("nesting deeper than {max} levels")]
    NestingTooDeep { max: u32 },
    #[error("policy depth {depth} exceeds maximum {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("policy has {leaves} leaves, exceeding maximum {max}")]
    TooManyLeaves { leaves: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    LParen,
    RParen,
    Comma,
    And,
    Or,
    Of,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(a) => format!("attribute `{a}`"),
            Tok::Int(n) => format!("number `{n}`"),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::And => "keyword `and`".to_string(),
            Tok::Or => "keyword `or`".to_string(),
            Tok::Of => "keyword `of`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

fn is_attr_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_attr_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | ':' | '.' | '-')
}

/// Tokenizes the source; returns the tokens plus the position just past the
/// end of input (for "unexpected end" diagnostics).
fn lex(src: &str) -> Result<(Vec<Token>, (u32, u32)), ParseError> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    while let Some(&c) = chars.peek() {
        let (tok_line, tok_col) = (line, col);
        let bump = |c: char, line: &mut u32, col: &mut u32| {
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        if c.is_whitespace() {
            chars.next();
            bump(c, &mut line, &mut col);
            continue;
        }
        let tok = if is_attr_start(c) {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if !is_attr_continue(c) {
                    break;
                }
                word.push(c);
                chars.next();
                bump(c, &mut line, &mut col);
            }
            match word.as_str() {
                "and" => Tok::And,
                "or" => Tok::Or,
                "of" => Tok::Of,
                _ => Tok::Ident(word),
            }
        } else if c.is_ascii_digit() {
            let mut value: u64 = 0;
            while let Some(&c) = chars.peek() {
                if !c.is_ascii_digit() {
                    break;
                }
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((c as u8 - b'0') as u64))
                    .ok_or(ParseError {
                        line: tok_line,
                        col: tok_col,
                        kind: ParseErrorKind::IntegerOverflow,
                    })?;
                chars.next();
                bump(c, &mut line, &mut col);
            }
            Tok::Int(value)
        } else {
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                other => {
                    return Err(ParseError {
                        line: tok_line,
                        col: tok_col,
                        kind: ParseErrorKind::UnexpectedChar(other),
                    })
                }
            };
            chars.next();
            bump(c, &mut line, &mut col);
            tok
        };
        tokens.push(Token {
            tok,
            line: tok_line,
            col: tok_col,
        });
    }
    Ok((tokens, (line, col)))
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (u32, u32),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error_at_current(&self, expected: &'static str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError {
                line: t.line,
                col: t.col,
                kind: ParseErrorKind::UnexpectedToken {
                    found: t.tok.describe(),
                    expected,
                },
            },
            None => ParseError {
                line: self.end.0,
                col: self.end.1,
                kind: ParseErrorKind::UnexpectedEnd { expected },
            },
        }
    }

    fn expect(&mut self, want: &Tok, expected: &'static str) -> Result<Token, ParseError> {
        match self.peek() {
            Some(t) if t.tok == *want => Ok(self.next().unwrap()),
            _ => Err(self.error_at_current(expected)),
        }
    }

    fn parse_or(&mut self, nesting: u32) -> Result<PolicyAst, ParseError> {
        let mut children = vec![self.parse_and(nesting)?];
        while matches!(self.peek(), Some(t) if t.tok == Tok::Or) {
            self.next();
            children.push(self.parse_and(nesting)?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            PolicyAst::Threshold { k: 1, children }
        })
    }

    fn parse_and(&mut self, nesting: u32) -> Result<PolicyAst, ParseError> {
        let mut children = vec![self.parse_atom(nesting)?];
        while matches!(self.peek(), Some(t) if t.tok == Tok::And) {
            self.next();
            children.push(self.parse_atom(nesting)?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            PolicyAst::Threshold {
                k: children.len() as u32,
                children,
            }
        })
    }

    fn parse_atom(&mut self, nesting: u32) -> Result<PolicyAst, ParseError> {
        if nesting >= MAX_SYNTACTIC_NESTING {
            let (line, col) = self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end);
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::NestingTooDeep {
                    max: MAX_SYNTACTIC_NESTING,
                },
            });
        }
        let token = match self.peek() {
            Some(t) => t.clone(),
            None => return Err(self.error_at_current("an attribute, a threshold, or `(`")),
        };
        match token.tok {
            Tok::Ident(attr) => {
                self.next();
                Ok(PolicyAst::Leaf(attr))
            }
            Tok::LParen => {
                self.next();
                let inner = self.parse_or(nesting + 1)?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Int(k) => {
                self.next();
                self.expect(&Tok::Of, "keyword `of`")?;
                self.expect(&Tok::LParen, "`(`")?;
                let mut children = vec![self.parse_or(nesting + 1)?];
                while matches!(self.peek(), Some(t) if t.tok == Tok::Comma) {
                    self.next();
                    children.push(self.parse_or(nesting + 1)?);
                }
                let close = self.expect(&Tok::RParen, "`,` or `)`")?;
                if children.len() < 2 {
                    return Err(ParseError {
                        line: close.line,
                        col: close.col,
                        kind: ParseErrorKind::ThresholdTooFewChildren,
                    });
                }
                if k == 0 {
                    return Err(ParseError {
                        line: token.line,
                        col: token.col,
                        kind: ParseErrorKind::ThresholdZero,
                    });
                }
                if k > children.len() as u64 {
                    return Err(ParseError {
                        line: token.line,
                        col: token.col,
                        kind: ParseErrorKind::ThresholdTooLarge {
                            k,
                            children: children.len(),
                        },
                    });
                }
                Ok(PolicyAst::Threshold {
                    k: k as u32,
                    children,
                })
            }
            _ => Err(self.error_at_current("an attribute, a threshold, or `(`")),
        }
    }
}

fn parse_policy(src: &str) -> Result<PolicyAst, ParseError> {
    let (tokens, end) = lex(src)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end,
    };
    let ast = parser.parse_or(0)?;
    if let Some(t) = parser.peek() {
        return Err(ParseError {
            line: t.line,
            col: t.col,
            kind: ParseErrorKind::UnexpectedToken {
                found: t.tok.describe(),
                expected: "end of input",
            },
        });
    }
    let depth = ast.depth();
    if depth > MAX_DEPTH {
        return Err(ParseError {
            line: 1,
            col: 1,
            kind: ParseErrorKind::DepthExceeded {
                depth,
                max: MAX_DEPTH,
            },
        });
    }
    let leaves = ast.leaf_count();
    if leaves > MAX_LEAVES {
        return Err(ParseError {
            line: 1,
            col: 1,
            kind: ParseErrorKind::TooManyLeaves {
                leaves,
                max: MAX_LEAVES,
            },
        });
    }
    Ok(ast)
}

// ---------------------------------------------------------------------------
// Secret sharing and recombination

/// Shares `secret` over the tree. Returns one share per leaf in preorder.
pub fn share_secret<R: rand::RngCore + rand::CryptoRng + ?Sized>(
    tree: &PolicyAst,
    secret: &Scalar,
    rng: &mut R,
) -> Result<Vec<Scalar>, PolicyError> {
    share_secret_with(tree, secret, &mut |_| {
        random_scalar(rng).map_err(PolicyError::from)
    })
}

/// Sharing with an injectable coefficient source; `sample(d)` supplies the
/// degree-d coefficient of the polynomial currently being built. Tests use
/// this to pin polynomials; production goes through [`share_secret`].
fn share_secret_with(
    tree: &PolicyAst,
    secret: &Scalar,
    sample: &mut dyn FnMut(usize) -> Result<Scalar, PolicyError>,
) -> Result<Vec<Scalar>, PolicyError> {
    tree.validate()?;
    let mut shares = Vec::with_capacity(tree.leaf_count());
    share_node(tree, *secret, sample, &mut shares)?;
    Ok(shares)
}

fn share_node(
    node: &PolicyAst,
    value: Scalar,
    sample: &mut dyn FnMut(usize) -> Result<Scalar, PolicyError>,
    out: &mut Vec<Scalar>,
) -> Result<(), PolicyError> {
    match node {
        PolicyAst::Leaf(_) => {
            out.push(value);
            Ok(())
        }
        PolicyAst::Threshold { k, children } => {
            // Degree k-1 polynomial with q(0) = value; child i gets q(i).
            let mut coeffs = Vec::with_capacity(*k as usize);
            coeffs.push(value);
            for d in 1..*k as usize {
                coeffs.push(sample(d)?);
            }
            for (i, child) in children.iter().enumerate() {
                let x = Scalar::from_u64(i as u64 + 1);
                share_node(child, eval_poly(&coeffs, &x), sample, out)?;
            }
            Ok(())
        }
    }
}

fn eval_poly(coeffs: &[Scalar], x: &Scalar) -> Scalar {
    let mut acc = Scalar::zero();
    for c in coeffs.iter().rev() {
        acc = acc * *x + *c;
    }
    acc
}

/// Lagrange coefficient for index `i` within `set`, evaluated at zero.
pub fn lagrange_at_zero(i: u64, set: &[u64]) -> Result<Scalar, PolicyError> {
    if set.iter().any(|&j| j == 0) || i == 0 {
        return Err(PolicyError::ZeroIndex);
    }
    let mut seen = HashSet::with_capacity(set.len());
    for &j in set {
        if !seen.insert(j) {
            return Err(PolicyError::DuplicateIndex { i: j });
        }
    }
    if !seen.contains(&i) {
        return Err(PolicyError::IndexNotInSet { i });
    }
    let xi = Scalar::from_u64(i);
    let mut num = Scalar::one();
    let mut den = Scalar::one();
    for &j in set {
        if j == i {
            continue;
        }
        let xj = Scalar::from_u64(j);
        num = num * -xj;
        den = den * (xi - xj);
    }
    // Indices are distinct, so the denominator is a product of nonzero terms.
    Ok(num * den.inverse().expect("nonzero denominator"))
}

/// A witness that a policy is satisfied: for every threshold node on the
/// chosen path set, exactly k children and, at the bottom, which leaves.
/// Produced by [`find_satisfying`]; consumed by recombination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SatisfyingAssignment {
    pub(crate) root: SatNode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum SatNode {
    Leaf {
        leaf_index: usize,
    },
    /// Chosen children as (1-based position, subtree), sorted by position.
    Gate {
        children: Vec<(u32, SatNode)>,
    },
}

impl SatisfyingAssignment {
    /// Preorder indices of the leaves this assignment uses, ascending.
    pub fn used_leaf_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        fn walk(node: &SatNode, out: &mut Vec<usize>) {
            match node {
                SatNode::Leaf { leaf_index } => out.push(*leaf_index),
                SatNode::Gate { children } => {
                    for (_, c) in children {
                        walk(c, out);
                    }
                }
            }
        }
        walk(&self.root, &mut out);
        out.sort_unstable();
        out
    }
}

/// Finds a minimal satisfying assignment (fewest leaves used), or `None` if
/// the attribute set does not satisfy the tree. Deterministic: ties are
/// broken toward earlier children, so equal inputs yield equal assignments.
/// Attributes are compared byte-for-byte; callers normalize beforehand.
pub fn find_satisfying<S: AsRef<str>>(
    tree: &PolicyAst,
    attrs: &[S],
) -> Option<SatisfyingAssignment> {
    let held: HashSet<&str> = attrs.iter().map(|s| s.as_ref()).collect();
    let mut counter = 0usize;
    search(tree, &held, &mut counter).map(|(_, root)| SatisfyingAssignment { root })
}

fn search(node: &PolicyAst, held: &HashSet<&str>, counter: &mut usize) -> Option<(usize, SatNode)> {
    match node {
        PolicyAst::Leaf(attr) => {
            let leaf_index = *counter;
            *counter += 1;
            held.contains(attr.as_str())
                .then_some((1, SatNode::Leaf { leaf_index }))
        }
        PolicyAst::Threshold { k, children } => {
            // Every child is visited so leaf numbering stays global.
            let mut satisfied: Vec<(usize, u32, SatNode)> = Vec::new();
            for (i, child) in children.iter().enumerate() {
                if let Some((cost, sat)) = search(child, held, counter) {
                    satisfied.push((cost, i as u32 + 1, sat));
                }
            }
            if satisfied.len() < *k as usize {
                return None;
            }
            // k cheapest children; stable sort keeps position order on ties.
            satisfied.sort_by_key(|(cost, pos, _)| (*cost, *pos));
            satisfied.truncate(*k as usize);
            satisfied.sort_by_key(|(_, pos, _)| *pos);
            let cost = satisfied.iter().map(|(c, _, _)| c).sum();
            let chosen = satisfied
                .into_iter()
                .map(|(_, pos, sat)| (pos, sat))
                .collect();
            Some((cost, SatNode::Gate { children: chosen }))
        }
    }
}

/// Recombines leaf shares along an assignment, yielding the shared secret.
/// `shares` maps preorder leaf index to that leaf's share.
pub fn reconstruct(
    assignment: &SatisfyingAssignment,
    shares: &BTreeMap<usize, Scalar>,
) -> Result<Scalar, PolicyError> {
    fn walk(node: &SatNode, shares: &BTreeMap<usize, Scalar>) -> Result<Scalar, PolicyError> {
        match node {
            SatNode::Leaf { leaf_index } => {
                shares
                    .get(leaf_index)
                    .copied()
                    .ok_or(PolicyError::MissingShare {
                        leaf_index: *leaf_index,
                    })
            }
            SatNode::Gate { children } => {
                let set: Vec<u64> = children.iter().map(|(pos, _)| *pos as u64).collect();
                let mut acc = Scalar::zero();
                for (pos, child) in children {
                    let value = walk(child, shares)?;
                    acc = acc + value * lagrange_at_zero(*pos as u64, &set)?;
                }
                Ok(acc)
            }
        }
    }
    walk(&assignment.root, shares)
}
