//! Text model format.
//!
//! ```text
//! HOMRF 1
//! <node_count>
//! <l_0> <l_1> ...
//! <unary table of node 0>
//! ...
//! <clique_count>
//! <k> <node ids>
//! DENSE
//! <prod l_i reals, row-major, last node fastest>
//! <k> <node ids>
//! PATTERN <s> <default>
//! <x_1> ... <x_k> <value>        (s lines)
//! ```
//!
//! Tokens are whitespace separated; `#` starts a comment. Reals are written
//! with the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::{Clique, Labeling, MrfModel, PatternPotential, Potential};
use crate::error::{Error, Result};

pub const MAGIC: &str = "HOMRF";
pub const VERSION: u32 = 1;

struct Tokens<'a> {
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(|t| (ln + 1, t)));
        }
        let last_line = text.lines().count().max(1);
        Self { tokens, pos: 0, last_line }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self.tokens.get(self.pos).copied().ok_or_else(|| Error::Parse {
            line: self.last_line,
            message: format!("unexpected end of file, expected {what}"),
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, tok) = self.next(what)?;
        tok.parse().map_err(|_| Error::Parse { line, message: format!("expected {what}, found {tok:?}") })
    }

    fn real(&mut self, what: &str) -> Result<f64> {
        let (line, tok) = self.next(what)?;
        let v: f64 =
            tok.parse().map_err(|_| Error::Parse { line, message: format!("expected {what}, found {tok:?}") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, message: format!("non-finite {what}") });
        }
        Ok(v)
    }
}

pub fn parse_model(text: &str) -> Result<MrfModel> {
    let mut t = Tokens::new(text);
    let (line, magic) = t.next("header")?;
    if magic != MAGIC {
        return Err(Error::Parse { line, message: format!("expected {MAGIC} header") });
    }
    let (line, ver) = t.next("version")?;
    if ver != VERSION.to_string() {
        return Err(Error::Parse { line, message: format!("unsupported version {ver}") });
    }
    let n: usize = t.parse("node count")?;
    let labels = (0..n).map(|_| t.parse::<usize>("label count")).collect::<Result<Vec<_>>>()?;
    let unaries = labels
        .iter()
        .map(|&l| (0..l).map(|_| t.real("unary value")).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let nc: usize = t.parse("clique count")?;
    let mut cliques = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (line, _) = *t.tokens.get(t.pos).unwrap_or(&(t.last_line, ""));
        let k: usize = t.parse("clique order")?;
        let nodes = (0..k).map(|_| t.parse::<usize>("node id")).collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = nodes.iter().find(|&&i| i >= n) {
            return Err(Error::Parse { line, message: format!("node id {bad} out of range") });
        }
        let dims: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
        let (kline, kind) = t.next("potential kind")?;
        match kind {
            "DENSE" => {
                let size = super::domain_size(&dims)
                    .ok_or_else(|| Error::Parse { line: kline, message: "domain overflows".into() })?;
                let table = (0..size).map(|_| t.real("potential value")).collect::<Result<Vec<_>>>()?;
                cliques.push(Clique::dense(nodes, table));
            }
            "PATTERN" => {
                let s: usize = t.parse("pattern size")?;
                let default = t.real("pattern default")?;
                let mut entries = Vec::with_capacity(s);
                for _ in 0..s {
                    let x = (0..k).map(|_| t.parse::<usize>("pattern label")).collect::<Result<Vec<_>>>()?;
                    entries.push((x, t.real("pattern value")?));
                }
                let p = PatternPotential::new(&dims, default, entries)
                    .map_err(|e| Error::Parse { line: kline, message: e.to_string() })?;
                cliques.push(Clique::pattern(nodes, p));
            }
            other => return Err(Error::Parse { line: kline, message: format!("unknown potential kind {other:?}") }),
        }
    }
    if let Some(&(line, tok)) = t.tokens.get(t.pos) {
        return Err(Error::Parse { line, message: format!("trailing token {tok:?}") });
    }
    MrfModel::new(labels, unaries, cliques).map_err(|e| Error::Parse { line: 1, message: e.to_string() })
}

fn push_reals(out: &mut String, values: &[f64]) {
    for (j, v) in values.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

pub fn format_model(model: &MrfModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "{}", model.node_count());
    let labels: Vec<String> = model.labels().iter().map(|l| l.to_string()).collect();
    let _ = writeln!(out, "{}", labels.join(" "));
    for u in model.unaries() {
        push_reals(&mut out, u);
    }
    let _ = writeln!(out, "{}", model.cliques().len());
    for c in model.cliques() {
        let nodes: Vec<String> = c.nodes().iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{} {}", c.order(), nodes.join(" "));
        match c.potential() {
            Potential::Dense(table) => {
                out.push_str("DENSE\n");
                push_reals(&mut out, table);
            }
            Potential::Pattern(p) => {
                let _ = writeln!(out, "PATTERN {} {:?}", p.len(), p.default_value());
                for (x, v) in p.entries() {
                    for xi in x {
                        let _ = write!(out, "{xi} ");
                    }
                    let _ = writeln!(out, "{v:?}");
                }
            }
        }
    }
    out
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MrfModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn save_model(model: &MrfModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_model(model))?;
    Ok(())
}

/// Chain file: one chain per line, clique ids separated by whitespace.
pub fn parse_chains(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut chains = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let chain = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| Error::Parse { line: ln + 1, message: format!("expected clique id, found {tok:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        chains.push(chain);
    }
    Ok(chains)
}

pub fn format_chains(chains: &[Vec<usize>]) -> String {
    chains.iter().map(|c| c.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ") + "\n").collect()
}

/// Labeling file: whitespace separated labels in node order.
pub fn parse_labeling(text: &str) -> Result<Labeling> {
    let mut t = Tokens::new(text);
    let mut x = Vec::new();
    while t.pos < t.tokens.len() {
        x.push(t.parse::<usize>("label")?);
    }
    Ok(x)
}

pub fn format_labeling(x: &[usize]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n"
}
