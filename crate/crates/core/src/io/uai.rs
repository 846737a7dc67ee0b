//! Reader for UAI `MARKOV` network files restricted to unary and pairwise
//! cliques.

use std::collections::HashMap;

use crate::model::{Edge, Graph};

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UaiOptions {
    /// Table entries are already log potentials.
    pub log_domain: bool,
    /// Floor applied before taking logs of linear-domain entries.
    pub zero_floor: f64,
}

impl Default for UaiOptions {
    fn default() -> Self {
        Self { log_domain: true, zero_floor: 1e-300 }
    }
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

struct Tokens<'a> {
    inner: std::vec::IntoIter<Token<'a>>,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut out = Vec::new();
        for (l, line) in text.lines().enumerate() {
            let mut rest = line;
            let mut offset = 0;
            while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
                let after = &rest[start..];
                let len = after.find(char::is_whitespace).unwrap_or(after.len());
                out.push(Token { text: &after[..len], line: l + 1, column: offset + start + 1 });
                offset += start + len;
                rest = &after[len..];
            }
        }
        Self { inner: out.into_iter() }
    }

    fn next(&mut self, what: &str) -> Result<Token<'a>, ParseError> {
        self.inner.next().ok_or_else(|| ParseError::UnexpectedEof(what.to_string()))
    }

    fn usize(&mut self, what: &str) -> Result<(usize, Token<'a>), ParseError> {
        let t = self.next(what)?;
        let v = t.text.parse().map_err(|_| ParseError::Syntax {
            line: t.line,
            column: t.column,
            message: format!("expected {what} (non-negative integer), found '{}'", t.text),
        })?;
        Ok((v, t))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ParseError> {
        let t = self.next(what)?;
        t.text.parse().map_err(|_| ParseError::Syntax {
            line: t.line,
            column: t.column,
            message: format!("expected {what} (number), found '{}'", t.text),
        })
    }
}

struct Clique {
    scope: Vec<usize>,
    line: usize,
    column: usize,
}

/// Parse a UAI `MARKOV` network. Repeated cliques over the same scope are
/// summed; arity-0 cliques are constants and are dropped.
pub fn parse_uai(text: &str, opts: &UaiOptions) -> Result<Graph, ParseError> {
    let mut tok = Tokens::new(text);
    let header = tok.next("header")?;
    if !header.text.eq_ignore_ascii_case("MARKOV") {
        return Err(ParseError::Syntax {
            line: header.line,
            column: header.column,
            message: format!("expected MARKOV header, found '{}'", header.text),
        });
    }
    let (n, _) = tok.usize("variable count")?;
    let mut cards = Vec::with_capacity(n);
    for _ in 0..n {
        let (c, t) = tok.usize("cardinality")?;
        if c == 0 {
            return Err(ParseError::Syntax { line: t.line, column: t.column, message: "cardinality must be positive".into() });
        }
        cards.push(c);
    }
    let (m, _) = tok.usize("clique count")?;
    let mut cliques = Vec::with_capacity(m);
    for _ in 0..m {
        let (arity, at) = tok.usize("clique arity")?;
        if arity > 2 {
            return Err(ParseError::Arity { line: at.line, column: at.column, arity });
        }
        let mut scope = Vec::with_capacity(arity);
        for _ in 0..arity {
            let (v, t) = tok.usize("clique variable")?;
            if v >= n {
                return Err(ParseError::Syntax {
                    line: t.line,
                    column: t.column,
                    message: format!("variable {v} out of range for {n} variables"),
                });
            }
            scope.push(v);
        }
        if arity == 2 && scope[0] == scope[1] {
            return Err(ParseError::Syntax { line: at.line, column: at.column, message: "pairwise clique repeats a variable".into() });
        }
        cliques.push(Clique { scope, line: at.line, column: at.column });
    }

    let value = |x: f64| if opts.log_domain { x } else { x.max(opts.zero_floor).ln() };
    let mut local: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    for clique in &cliques {
        let expected: usize = clique.scope.iter().map(|&v| cards[v]).product();
        let (count, t) = tok.usize("table size")?;
        if count != expected {
            return Err(ParseError::TableLength { line: t.line, column: t.column, expected, found: count });
        }
        let table = (0..count).map(|_| tok.f64("table entry").map(value)).collect::<Result<Vec<_>, _>>()?;
        match clique.scope[..] {
            [] => {}
            [v] => {
                for (p, x) in local[v].iter_mut().zip(&table) {
                    *p += x;
                }
            }
            [a, b] => {
                let key = (a.min(b), a.max(b));
                let id = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge::new(a, b, vec![0.0; expected]));
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.s == a {
                    for (p, x) in e.table.iter_mut().zip(&table) {
                        *p += x;
                    }
                } else {
                    // stored as (b, a): transpose
                    let (ca, cb) = (cards[a], cards[b]);
                    for i in 0..ca {
                        for j in 0..cb {
                            e.table[j * ca + i] += table[i * cb + j];
                        }
                    }
                }
            }
            _ => unreachable!("arity checked at {}:{}", clique.line, clique.column),
        }
    }
    if let Some(t) = tok.inner.next() {
        return Err(ParseError::Syntax { line: t.line, column: t.column, message: format!("unexpected trailing token '{}'", t.text) });
    }
    Ok(Graph::new(cards, local, edges)?)
}
