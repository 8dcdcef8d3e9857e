//! Plain-text LP export in the CPLEX-style format accepted by most solvers.
//!
//! Layout (see `docs/lp-format.md`): a comment header, `Minimize` with the
//! objective row `obj:`, `Subject To` with one named row per constraint in
//! model order, `Bounds` for every variable in model order, `Binaries`, then
//! `End`. Numbers use Rust's shortest round-trip
//! formatting, so parsing the file back reproduces the model bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LinExpr, MilpModel, Sense, Tag, VarId, VarKind};

const TERMS_PER_LINE: usize = 8;

fn push_terms(out: &mut String, model: &MilpModel, terms: &[(VarId, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, &(v, a)) in terms.iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if a < 0.0 || (a == 0.0 && a.is_sign_negative()) {
            '-'
        } else {
            '+'
        };
        let _ = write!(out, " {sign} {:?} {}", a.abs(), model.vars[v.0].name);
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

/// Renders `model` as LP text.
pub fn write_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str("\\ amrplan model\n");
    let _ = writeln!(
        out,
        "\\ variables: {}, binaries: {}, rows: {}",
        model.vars.len(),
        model.binary_count(),
        model.rows.len()
    );
    if model.objective_constant != 0.0 {
        let _ = writeln!(out, "\\ objective constant: {:?}", model.objective_constant);
    }
    out.push_str("Minimize\n obj:");
    push_terms(&mut out, model, &model.objective_expr().terms);
    out.push('\n');
    if !model.rows.is_empty() {
        out.push_str("Subject To\n");
        for r in &model.rows {
            let _ = write!(out, " {}:", r.name);
            push_terms(&mut out, model, &r.terms);
            let _ = writeln!(out, " {} {:?}", r.sense.symbol(), r.rhs);
        }
    }
    out.push_str("Bounds\n");
    for v in &model.vars {
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else if v.lower == v.upper {
            let _ = writeln!(out, " {} = {:?}", v.name, v.lower);
        } else {
            let _ = writeln!(
                out,
                " {} <= {} <= {}",
                fmt_bound(v.lower),
                v.name,
                fmt_bound(v.upper)
            );
        }
    }
    if model.binary_count() > 0 {
        out.push_str("Binaries\n");
        for v in model.vars.iter().filter(|v| v.kind == VarKind::Binary) {
            let _ = writeln!(out, " {}", v.name);
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_lp_file(model: &MilpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_lp(model)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Head,
    Objective,
    Rows,
    Bounds,
    Binaries,
    Done,
}

fn parse_number(tok: &str) -> Result<f64> {
    match tok {
        "+inf" | "inf" | "+infinity" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse()
            .map_err(|_| Error::Config(format!("LP parse: expected a number, found {tok:?}"))),
    }
}

/// Reads `sign coef name` triples.
fn parse_terms(tokens: &[&str], lookup: &mut impl FnMut(&str) -> VarId) -> Result<LinExpr> {
    let mut expr = LinExpr::default();
    if tokens == ["0"] {
        return Ok(expr);
    }
    if !tokens.len().is_multiple_of(3) {
        return Err(Error::Config(format!(
            "LP parse: malformed terms {tokens:?}"
        )));
    }
    for chunk in tokens.chunks(3) {
        let sign = match chunk[0] {
            "+" => 1.0,
            "-" => -1.0,
            other => {
                return Err(Error::Config(format!(
                    "LP parse: expected sign, found {other:?}"
                )))
            }
        };
        let coef = parse_number(chunk[1])?;
        expr.terms.push((lookup(chunk[2]), sign * coef));
    }
    Ok(expr)
}

/// Parses LP text written by [`write_lp`]. Row provenance is not stored in
/// the file, so every parsed row is tagged as an envelope row.
pub fn parse_lp(text: &str) -> Result<MilpModel> {
    // Join continuation lines first: any line starting with more than one
    // space continues the previous statement.
    let mut statements: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.starts_with('\\') || line.trim().is_empty() {
            continue;
        }
        if line.starts_with("   ") {
            if let Some(last) = statements.last_mut() {
                last.push_str(line);
                continue;
            }
        }
        statements.push(line.to_string());
    }
    let constant = text
        .lines()
        .find_map(|l| l.strip_prefix("\\ objective constant: "))
        .map(parse_number)
        .transpose()?
        .unwrap_or(0.0);

    // The bounds section lists every variable in model order.
    let mut section = Section::Head;
    let mut decls: Vec<(String, VarKind, f64, f64)> = Vec::new();
    let mut objective_tokens: Vec<String> = Vec::new();
    let mut row_stmts: Vec<String> = Vec::new();
    for s in &statements {
        match s.trim() {
            "Minimize" => {
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Bounds" => {
                section = Section::Bounds;
                continue;
            }
            "Binaries" => {
                section = Section::Binaries;
                continue;
            }
            "End" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        let toks: Vec<&str> = s.split_whitespace().collect();
        match section {
            Section::Objective => {
                objective_tokens = toks.iter().skip(1).map(|t| t.to_string()).collect();
            }
            Section::Rows => row_stmts.push(s.clone()),
            Section::Bounds => match toks.as_slice() {
                [name, "free"] => decls.push((
                    name.to_string(),
                    VarKind::Continuous,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                )),
                [name, "=", x] => {
                    let x = parse_number(x)?;
                    decls.push((name.to_string(), VarKind::Continuous, x, x));
                }
                [lo, "<=", name, "<=", hi] => decls.push((
                    name.to_string(),
                    VarKind::Continuous,
                    parse_number(lo)?,
                    parse_number(hi)?,
                )),
                _ => return Err(Error::Config(format!("LP parse: bad bound line {s:?}"))),
            },
            Section::Binaries => {
                let d = decls.iter_mut().find(|d| d.0 == toks[0]).ok_or_else(|| {
                    Error::Config(format!("LP parse: binary {} has no bounds", toks[0]))
                })?;
                d.1 = VarKind::Binary;
            }
            Section::Head | Section::Done => {
                return Err(Error::Config(format!("LP parse: unexpected line {s:?}")));
            }
        }
    }

    let mut model = MilpModel::new();
    for (name, kind, lo, hi) in &decls {
        model.add_var(name.clone(), *kind, *lo, *hi, Tag::Control);
    }
    let mut lookup_err = None;
    let names: std::collections::HashMap<String, VarId> = model
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), VarId(i)))
        .collect();
    let mut lookup = |n: &str| -> VarId {
        names.get(n).copied().unwrap_or_else(|| {
            lookup_err.get_or_insert_with(|| n.to_string());
            VarId(0)
        })
    };
    let obj_refs: Vec<&str> = objective_tokens.iter().map(String::as_str).collect();
    let mut obj = parse_terms(&obj_refs, &mut lookup)?;
    obj.constant = constant;
    for s in &row_stmts {
        let (name, rest) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("LP parse: unnamed row {s:?}")))?;
        let toks: Vec<&str> = rest.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(Error::Config(format!("LP parse: short row {s:?}")));
        }
        let (lhs, tail) = toks.split_at(toks.len() - 2);
        let sense = match tail[0] {
            "<=" => Sense::Le,
            ">=" => Sense::Ge,
            "=" => Sense::Eq,
            other => return Err(Error::Config(format!("LP parse: bad sense {other:?}"))),
        };
        let rhs = parse_number(tail[1])?;
        let mut expr = parse_terms(lhs, &mut lookup)?;
        expr.constant = -rhs;
        model.rows.push(crate::model::Constraint {
            name: name.to_string(),
            terms: expr.terms,
            sense,
            rhs,
            tag: Tag::Envelope,
        });
    }
    if let Some(n) = lookup_err {
        return Err(Error::Config(format!("LP parse: undeclared variable {n}")));
    }
    model.add_objective(&obj);
    Ok(model)
}
