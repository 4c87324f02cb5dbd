//! CPLEX-LP-format emission and round-trip parsing.
//!
//! Grammar used (one row per line):
//!
//! ```text
//! \ comment lines; variable name map and objective constant live here
//! Maximize
//!  obj: <signed linear terms>
//! Subject To
//!  c<i>: <signed linear terms> (<=|>=|=) <rhs>
//!  pdef<i>: <w> - [ <a> * <b> ] = 0
//! Bounds
//!  <lo> <= v<i> <= <hi>
//! Binary
//!  v<i> ...
//! End
//! ```
//!
//! Product definitions stay quadratic (`pdef` rows); no McCormick rows are
//! emitted, since relaxation is the solver's job. Implications are
//! expanded into plain big-M rows before emission. Variables are renamed
//! `v<i>` because the internal names contain LP-hostile characters; the
//! original names are kept in comments.

use super::program::{LinCon, Product, ProgramError, VarId, VerificationProgram};
use super::LinExpr;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Emit the program as LP text.
pub fn emit_lp_file(prog: &VerificationProgram) -> Result<String, ProgramError> {
    let expanded = prog.expand_implications()?;
    let mut out = String::new();
    out.push_str("\\ scpverify verification program\n");
    let _ = writeln!(out, "\\ objective_constant: {}", fmt_f64(prog.objective.constant));
    for (i, v) in prog.vars.iter().enumerate() {
        let _ = writeln!(out, "\\ v{i} = {}", v.name);
    }
    out.push_str("Maximize\n obj:");
    if prog.objective.terms.is_empty() {
        out.push_str(" 0");
    } else {
        write_terms(&mut out, &prog.objective.terms);
    }
    out.push('\n');
    out.push_str("Subject To\n");
    let mut row_idx = 0usize;
    for con in prog.linear_cons.iter().chain(&expanded) {
        write_lincon(&mut out, con, &mut row_idx);
    }
    for (i, p) in prog.products.iter().enumerate() {
        let _ = writeln!(
            out,
            " pdef{i}: v{} - [ v{} * v{} ] = 0",
            p.w.0, p.a.0, p.b.0
        );
    }
    out.push_str("Bounds\n");
    for (i, v) in prog.vars.iter().enumerate() {
        if v.binary {
            continue; // binary declaration implies [0, 1]
        }
        let _ = writeln!(out, " {} <= v{i} <= {}", fmt_f64(v.lo), fmt_f64(v.hi));
    }
    let binaries: Vec<String> = prog
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.binary)
        .map(|(i, _)| format!("v{i}"))
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binary\n ");
        out.push_str(&binaries.join(" "));
        out.push('\n');
    }
    out.push_str("End\n");
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn write_terms(out: &mut String, terms: &[(VarId, f64)]) {
    for (v, c) in terms {
        if *c < 0.0 {
            let _ = write!(out, " - {} v{}", fmt_f64(-c), v.0);
        } else {
            let _ = write!(out, " + {} v{}", fmt_f64(*c), v.0);
        }
    }
}

fn write_lincon(out: &mut String, con: &LinCon, row_idx: &mut usize) {
    let mut emit = |op: &str, rhs: f64| {
        let _ = write!(out, " c{row_idx}:");
        write_terms(out, &con.terms);
        let _ = writeln!(out, " {op} {}", fmt_f64(rhs));
        *row_idx += 1;
    };
    if con.lo == con.hi {
        emit("=", con.lo);
        return;
    }
    if con.hi.is_finite() {
        emit("<=", con.hi);
    }
    if con.lo.is_finite() {
        emit(">=", con.lo);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LpParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown variable {0}")]
    UnknownVariable(String),
}

/// Parse LP text produced by [`emit_lp_file`] back into a program.
/// Implications were expanded before emission, so the parsed program has
/// none; everything else round-trips.
pub fn parse_lp_file(text: &str) -> Result<VerificationProgram, LpParseError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Objective,
        Rows,
        Bounds,
        Binary,
        Done,
    }
    let mut prog = VerificationProgram::new();
    let mut names: HashMap<String, VarId> = HashMap::new();
    let mut objective_constant = 0.0;
    let mut section = Section::Preamble;
    // first pass: variable comments declare the variable set in order
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('\\') {
            let rest = rest.trim();
            if let Some((lhs, rhs)) = rest.split_once('=') {
                let lhs = lhs.trim();
                if lhs.starts_with('v') && lhs[1..].chars().all(|c| c.is_ascii_digit()) {
                    let id = prog.add_var(rhs.trim().to_string(), f64::NEG_INFINITY, f64::INFINITY);
                    names.insert(lhs.to_string(), id);
                }
            } else if let Some(c) = rest.strip_prefix("objective_constant:") {
                objective_constant = c.trim().parse().map_err(|_| LpParseError::Syntax {
                    line: ln + 1,
                    message: "bad objective constant".into(),
                })?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match line {
            "Maximize" => {
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
            "Binary" => {
                section = Section::Binary;
                continue;
            }
            "End" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        let lookup = |name: &str| -> Result<VarId, LpParseError> {
            names
                .get(name)
                .copied()
                .ok_or_else(|| LpParseError::UnknownVariable(name.to_string()))
        };
        match section {
            Section::Objective => {
                let body = line.split_once(':').map(|(_, b)| b).unwrap_or(line);
                let terms = parse_terms(body, ln + 1, &lookup)?;
                prog.objective = LinExpr { constant: objective_constant, terms };
            }
            Section::Rows => {
                let (name, body) = line.split_once(':').ok_or_else(|| LpParseError::Syntax {
                    line: ln + 1,
                    message: "missing row name".into(),
                })?;
                if name.trim().starts_with("pdef") {
                    // w - [ a * b ] = 0
                    let toks: Vec<&str> = body.split_whitespace().collect();
                    // expected: vW - [ vA * vB ] = 0
                    if toks.len() != 9 || toks[1] != "-" || toks[2] != "[" {
                        return Err(LpParseError::Syntax {
                            line: ln + 1,
                            message: "malformed product definition".into(),
                        });
                    }
                    let w = lookup(toks[0])?;
                    let a = lookup(toks[3])?;
                    let b = lookup(toks[5])?;
                    prog.products.push(Product { w, a, b });
                } else {
                    let (expr_part, op, rhs) = split_relation(body, ln + 1)?;
                    let terms = parse_terms(expr_part, ln + 1, &lookup)?;
                    let (lo, hi) = match op {
                        "<=" => (f64::NEG_INFINITY, rhs),
                        ">=" => (rhs, f64::INFINITY),
                        _ => (rhs, rhs),
                    };
                    prog.linear_cons.push(LinCon { lo, hi, terms });
                }
            }
            Section::Bounds => {
                // lo <= v <= hi
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 5 || toks[1] != "<=" || toks[3] != "<=" {
                    return Err(LpParseError::Syntax {
                        line: ln + 1,
                        message: "malformed bound".into(),
                    });
                }
                let id = lookup(toks[2])?;
                let lo = parse_bound(toks[0], ln + 1)?;
                let hi = parse_bound(toks[4], ln + 1)?;
                prog.vars[id.0].lo = lo;
                prog.vars[id.0].hi = hi;
            }
            Section::Binary => {
                for tok in line.split_whitespace() {
                    let id = lookup(tok)?;
                    prog.vars[id.0].binary = true;
                    prog.vars[id.0].lo = 0.0;
                    prog.vars[id.0].hi = 1.0;
                }
            }
            Section::Preamble | Section::Done => {}
        }
    }
    Ok(prog)
}

fn parse_bound(tok: &str, line: usize) -> Result<f64, LpParseError> {
    match tok {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse().map_err(|_| LpParseError::Syntax {
            line,
            message: format!("bad number {tok}"),
        }),
    }
}

fn split_relation<'b>(body: &'b str, line: usize) -> Result<(&'b str, &'b str, f64), LpParseError> {
    for op in ["<=", ">=", "="] {
        if let Some(pos) = body.rfind(op) {
            // make sure this is the relation, not part of a term
            let (lhs, rest) = body.split_at(pos);
            let rhs_str = rest[op.len()..].trim();
            if let Ok(rhs) = parse_bound(rhs_str, line) {
                return Ok((lhs, op, rhs));
            }
        }
    }
    Err(LpParseError::Syntax { line, message: "no relation found".into() })
}

fn parse_terms(
    body: &str,
    line: usize,
    lookup: &dyn Fn(&str) -> Result<VarId, LpParseError>,
) -> Result<Vec<(VarId, f64)>, LpParseError> {
    let toks: Vec<&str> = body.split_whitespace().collect();
    let mut terms = Vec::new();
    let mut i = 0;
    let mut sign = 1.0;
    while i < toks.len() {
        match toks[i] {
            "+" => {
                sign = 1.0;
                i += 1;
            }
            "-" => {
                sign = -1.0;
                i += 1;
            }
            "0" if toks.len() == 1 => return Ok(vec![]),
            tok => {
                let coeff: f64 = tok.parse().map_err(|_| LpParseError::Syntax {
                    line,
                    message: format!("bad coefficient {tok}"),
                })?;
                let var_tok = toks.get(i + 1).ok_or_else(|| LpParseError::Syntax {
                    line,
                    message: "dangling coefficient".into(),
                })?;
                terms.push((lookup(var_tok)?, sign * coeff));
                sign = 1.0;
                i += 2;
            }
        }
    }
    Ok(terms)
}
