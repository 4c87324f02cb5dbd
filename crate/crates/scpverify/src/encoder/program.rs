//! Normal form of a compiled verification problem.
//!
//! A program is a set of bounded continuous variables (some flagged
//! binary), two-sided linear rows, bilinear product definitions
//! `w = v_i * v_j`, big-M implications, and a linear objective to maximize
//! over variables (products are variables too, so quadratic objectives and
//! constraints are linear here). Complementarity pairs are products pinned
//! to zero; the global solver branches on them directly instead of using
//! big-M rows.

use crate::interval::Interval;
use std::collections::HashMap;

/// Index of a program variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
pub struct Var {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub binary: bool,
}

/// Linear expression over program variables.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl LinExpr {
    pub fn new() -> Self {
        LinExpr { constant: 0.0, terms: vec![] }
    }

    pub fn constant(v: f64) -> Self {
        LinExpr { constant: v, terms: vec![] }
    }

    pub fn term(v: VarId, c: f64) -> Self {
        LinExpr { constant: 0.0, terms: vec![(v, c)] }
    }

    pub fn push(&mut self, v: VarId, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn add(&mut self, other: &LinExpr) {
        self.constant += other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn scaled(&self, a: f64) -> LinExpr {
        LinExpr {
            constant: a * self.constant,
            terms: self.terms.iter().map(|(v, c)| (*v, a * c)).collect(),
        }
    }

    pub fn simplify(&mut self) {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        self.terms = merged;
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * vals[v.0]).sum::<f64>()
    }
}

/// Two-sided linear row `lo <= expr <= hi` (expr carries no constant; the
/// constant is folded into the bounds on construction).
#[derive(Debug, Clone)]
pub struct LinCon {
    pub lo: f64,
    pub hi: f64,
    pub terms: Vec<(VarId, f64)>,
}

impl LinCon {
    pub fn value(&self, vals: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * vals[v.0]).sum()
    }
}

/// Bilinear definition `w = a * b` (square when a = b).
#[derive(Debug, Clone, Copy)]
pub struct Product {
    pub w: VarId,
    pub a: VarId,
    pub b: VarId,
}

/// `bin = value  ==>  row holds`; compiled to big-M rows at emit time.
#[derive(Debug, Clone)]
pub struct Implication {
    pub bin: VarId,
    pub value: bool,
    pub row: LinCon,
}

#[derive(Debug, Clone, Default)]
pub struct VerificationProgram {
    pub vars: Vec<Var>,
    pub linear_cons: Vec<LinCon>,
    pub products: Vec<Product>,
    /// Indices into `products` that are complementarity pairs `s * y = 0`;
    /// the solver branches on these.
    pub comp_pairs: Vec<usize>,
    pub implications: Vec<Implication>,
    /// Maximize `objective` (linear over vars; products are vars).
    pub objective: LinExpr,
    product_index: HashMap<(VarId, VarId), VarId>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("variable {name} has unbounded range [{lo}, {hi}]")]
    UnboundedVariable { name: String, lo: f64, hi: f64 },
    #[error("implication row over {name} has no finite big-M")]
    InfiniteBigM { name: String },
}

impl VerificationProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn bound(&self, v: VarId) -> Interval {
        Interval::new(self.vars[v.0].lo, self.vars[v.0].hi)
    }

    pub fn set_bound(&mut self, v: VarId, b: Interval) {
        self.vars[v.0].lo = b.lo;
        self.vars[v.0].hi = b.hi;
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Var { name: name.into(), lo, hi, binary: false });
        id
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Var { name: name.into(), lo: 0.0, hi: 1.0, binary: true });
        id
    }

    /// Pin a variable to a constant (bounds collapse to a point).
    pub fn add_constant(&mut self, name: impl Into<String>, v: f64) -> VarId {
        self.add_var(name, v, v)
    }

    /// Row `lo <= expr <= hi`; the expression's constant folds into the
    /// bounds. Rows with no terms are checked immediately and dropped.
    pub fn add_con(&mut self, lo: f64, hi: f64, mut expr: LinExpr) {
        expr.simplify();
        let lo = if lo.is_finite() { lo - expr.constant } else { lo };
        let hi = if hi.is_finite() { hi - expr.constant } else { hi };
        self.linear_cons.push(LinCon { lo, hi, terms: expr.terms });
    }

    pub fn add_eq(&mut self, expr: LinExpr) {
        self.add_con(0.0, 0.0, expr);
    }

    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.add_con(f64::NEG_INFINITY, rhs, expr);
    }

    /// Product variable `w = a * b`, deduplicated by operand pair. Bounds
    /// come from interval arithmetic over the operands' current bounds.
    pub fn add_product(&mut self, a: VarId, b: VarId) -> VarId {
        let key = if a <= b { (a, b) } else { (b, a) };
        if let Some(&w) = self.product_index.get(&key) {
            return w;
        }
        let (a, b) = key;
        let ia = self.bound(a);
        let ib = self.bound(b);
        let range = if a == b { ia.square() } else { ia * ib };
        let name = if a == b {
            format!("sq({})", self.vars[a.0].name)
        } else {
            format!("prod({},{})", self.vars[a.0].name, self.vars[b.0].name)
        };
        let w = self.add_var(name, range.lo, range.hi);
        self.products.push(Product { w, a, b });
        self.product_index.insert(key, w);
        w
    }

    /// Complementarity pair `s * y = 0`: the product is pinned to zero and
    /// registered for complementarity branching.
    pub fn add_comp_pair(&mut self, s: VarId, y: VarId) {
        let w = self.add_product(s, y);
        self.set_bound(w, Interval::ZERO);
        // the pinned product may have been deduplicated into an earlier
        // registration; only record it once
        let idx = self
            .products
            .iter()
            .position(|p| p.w == w)
            .expect("product registered above");
        if !self.comp_pairs.contains(&idx) {
            self.comp_pairs.push(idx);
        }
    }

    pub fn add_implication(&mut self, bin: VarId, value: bool, lo: f64, hi: f64, mut expr: LinExpr) {
        expr.simplify();
        let lo = if lo.is_finite() { lo - expr.constant } else { lo };
        let hi = if hi.is_finite() { hi - expr.constant } else { hi };
        self.implications.push(Implication {
            bin,
            value,
            row: LinCon { lo, hi, terms: expr.terms },
        });
    }

    /// All variables have finite bounds?
    pub fn check_bounded(&self) -> Result<(), ProgramError> {
        for v in &self.vars {
            if !v.lo.is_finite() || !v.hi.is_finite() {
                return Err(ProgramError::UnboundedVariable {
                    name: v.name.clone(),
                    lo: v.lo,
                    hi: v.hi,
                });
            }
        }
        Ok(())
    }

    /// Expand every implication into plain big-M rows using current
    /// variable bounds. Fails loudly when a row admits no finite M.
    pub fn expand_implications(&self) -> Result<Vec<LinCon>, ProgramError> {
        let mut out = Vec::new();
        for imp in &self.implications {
            let mut range = Interval::point(0.0);
            for (v, c) in &imp.row.terms {
                range = range + self.bound(*v).scale(*c);
            }
            // b_active = 1 exactly when the implication fires; the switch
            // coefficient multiplies the binary so the row relaxes when
            // the binary takes the other value.
            // hi side: expr <= hi + M_hi * (1 - b_active_expr)
            if imp.row.hi.is_finite() {
                let m = range.hi - imp.row.hi;
                if !m.is_finite() {
                    return Err(ProgramError::InfiniteBigM {
                        name: self.vars[imp.bin.0].name.clone(),
                    });
                }
                let m = m.max(0.0);
                let mut terms = imp.row.terms.clone();
                let mut hi = imp.row.hi;
                if imp.value {
                    // expr + M*b <= hi + M
                    terms.push((imp.bin, m));
                    hi += m;
                } else {
                    // expr - M*b <= hi
                    terms.push((imp.bin, -m));
                }
                let mut e = LinExpr { constant: 0.0, terms };
                e.simplify();
                out.push(LinCon { lo: f64::NEG_INFINITY, hi, terms: e.terms });
            }
            if imp.row.lo.is_finite() {
                let m = imp.row.lo - range.lo;
                if !m.is_finite() {
                    return Err(ProgramError::InfiniteBigM {
                        name: self.vars[imp.bin.0].name.clone(),
                    });
                }
                let m = m.max(0.0);
                let mut terms = imp.row.terms.clone();
                let mut lo = imp.row.lo;
                if imp.value {
                    // expr - M*b >= lo - M
                    terms.push((imp.bin, -m));
                    lo -= m;
                } else {
                    // expr + M*b >= lo
                    terms.push((imp.bin, m));
                }
                let mut e = LinExpr { constant: 0.0, terms };
                e.simplify();
                out.push(LinCon { lo, hi: f64::INFINITY, terms: e.terms });
            }
        }
        Ok(out)
    }

    /// Check a full assignment against every construct of the program.
    /// Returns human-readable violation descriptions (empty = feasible).
    pub fn check_assignment(&self, vals: &[f64], tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if vals.len() != self.vars.len() {
            out.push(format!(
                "assignment length {} != variable count {}",
                vals.len(),
                self.vars.len()
            ));
            return out;
        }
        for (i, v) in self.vars.iter().enumerate() {
            let val = vals[i];
            if val < v.lo - tol || val > v.hi + tol {
                out.push(format!(
                    "var {} = {val} outside [{}, {}]",
                    v.name, v.lo, v.hi
                ));
            }
            if v.binary && (val - val.round()).abs() > tol {
                out.push(format!("binary {} = {val} not integral", v.name));
            }
        }
        for (i, con) in self.linear_cons.iter().enumerate() {
            let val = con.value(vals);
            if val < con.lo - tol || val > con.hi + tol {
                out.push(format!(
                    "row {i} value {val} outside [{}, {}]",
                    con.lo, con.hi
                ));
            }
        }
        for p in &self.products {
            let w = vals[p.w.0];
            let exact = vals[p.a.0] * vals[p.b.0];
            if (w - exact).abs() > tol * (1.0 + exact.abs()) {
                out.push(format!(
                    "product {} = {w} but {} * {} = {exact}",
                    self.vars[p.w.0].name, self.vars[p.a.0].name, self.vars[p.b.0].name
                ));
            }
        }
        for (i, imp) in self.implications.iter().enumerate() {
            let active = (vals[imp.bin.0] > 0.5) == imp.value;
            if active {
                let val = imp.row.value(vals);
                if val < imp.row.lo - tol || val > imp.row.hi + tol {
                    out.push(format!(
                        "implication {i} (bin {}) row value {val} outside [{}, {}]",
                        self.vars[imp.bin.0].name, imp.row.lo, imp.row.hi
                    ));
                }
            }
        }
        out
    }

    /// Objective value of an assignment.
    pub fn objective_value(&self, vals: &[f64]) -> f64 {
        self.objective.eval(vals)
    }

    /// Debug dump.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "vars": self.vars.iter().map(|v| serde_json::json!({
                "name": v.name, "lo": v.lo, "hi": v.hi, "binary": v.binary,
            })).collect::<Vec<_>>(),
            "linear_cons": self.linear_cons.iter().map(|c| serde_json::json!({
                "lo": c.lo, "hi": c.hi,
                "terms": c.terms.iter().map(|(v, a)| serde_json::json!([v.0, a])).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "products": self.products.iter().map(|p| serde_json::json!([p.w.0, p.a.0, p.b.0])).collect::<Vec<_>>(),
            "comp_pairs": self.comp_pairs,
            "implications": self.implications.iter().map(|imp| serde_json::json!({
                "bin": imp.bin.0, "value": imp.value,
                "lo": imp.row.lo, "hi": imp.row.hi,
                "terms": imp.row.terms.iter().map(|(v, a)| serde_json::json!([v.0, a])).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "objective": {
                "constant": self.objective.constant,
                "terms": self.objective.terms.iter().map(|(v, a)| serde_json::json!([v.0, a])).collect::<Vec<_>>(),
            },
        })
    }
}
