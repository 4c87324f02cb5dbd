//! Desk-scale global solver for verification programs.
//!
//! The programs are mixed-binary linear programs plus bilinear product
//! definitions w = a * b. Spatial branch and bound handles the products:
//! each node carries a variable box, the node relaxation replaces every
//! product with its McCormick envelope (squares additionally get the secant
//! upper estimator and three tangent lower cuts), and branching picks, in
//! order of priority, a fractional binary, an operand of a violated product
//! that carries objective weight, a violated complementarity pair, or the
//! operand of the worst McCormick violation.
//!
//! Node relaxations go to a bounded-variable dual simplex warm started from
//! the parent basis. Bounds are made rigorous through weak duality: whatever
//! the LP solver returns, the Lagrangian of its (clipped) dual vector
//! evaluated over the node box is a true bound, so an inaccurate or stalled
//! LP solve can only weaken the bound, never break it. Incumbents are full
//! variable assignments re-checked against the original program before they
//! are accepted.

mod oracle;
mod seq;

pub use oracle::{fixed_oracle, reference_oracle, OracleError, OracleOptions};
pub use seq::{solve_encoded, verify_sequential, SequentialEntry};

use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::encoder::program::{LinCon, Product, VarId, VerificationProgram};
use crate::interval::Interval;
use crate::par;
use crate::qpcore::{solve_bounded_lp, BoundedLp, QpError, SimplexStatus};

/// Tolerance for accepting an incumbent assignment.
pub const WITNESS_TOL: f64 = 1e-6;

/// Search node: a box over all program variables. Branching decisions
/// (fixed binaries, complementarity side choices) are recorded directly as
/// collapsed intervals in the box.
#[derive(Debug, Clone)]
pub struct Node {
    pub bounds: Vec<Interval>,
    pub depth: usize,
    /// Inherited upper bound on the maximization over this box.
    pub ub: f64,
    pub id: u64,
    /// Parent LP basis, reused as a dual-simplex warm start. A child box
    /// differs from the parent's by one bound, so the parent basis stays
    /// dual feasible and the re-solve takes a handful of pivots.
    pub warm: Option<Arc<WarmPoint>>,
}

/// Simplex basis from a solved relaxation; a child whose relaxation has a
/// different row count starts cold (the solver checks dimensions itself).
#[derive(Debug)]
pub struct WarmPoint {
    pub basis: crate::qpcore::Basis,
}

/// Solver status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum GlobalStatus {
    Converged,
    GapReached,
    TimeLimit,
    Infeasible,
}

/// Outcome of a global solve.
#[derive(Debug, Clone)]
pub struct GlobalResult {
    /// Best feasible objective value found (the incumbent), if any.
    pub best_value: Option<f64>,
    /// Proven upper bound on the maximum.
    pub upper_bound: f64,
    /// `(upper_bound - best_value) / max(1, |best_value|)`.
    pub gap: f64,
    /// Full variable assignment behind `best_value`.
    pub witness: Option<Vec<f64>>,
    pub nodes_explored: usize,
    pub status: GlobalStatus,
    /// A dual variable sat at its artificial cap somewhere relevant; the
    /// certificate is then not trustworthy and callers must not treat the
    /// bound as verified.
    pub dual_cap_active: bool,
    /// Root box after propagation (and OBBT when enabled), for bound reuse
    /// across sequential solves.
    pub root_bounds: Vec<Interval>,
}

impl GlobalResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "best_value": self.best_value,
            "upper_bound": self.upper_bound,
            "gap": self.gap,
            "nodes_explored": self.nodes_explored,
            "dual_cap_active": self.dual_cap_active,
            "witness": self.witness,
        })
    }
}

/// Options for [`solve_global`].
#[derive(Debug, Clone)]
pub struct GlobalOptions {
    /// Relative gap target, default 2e-2.
    pub rel_gap: f64,
    /// Absolute gap target.
    pub abs_gap: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub node_limit: usize,
    /// Run a bound-tightening pass at the root.
    pub obbt: bool,
    /// Per-variable time budget for OBBT, seconds.
    pub obbt_time_per_var: f64,
    /// Progress lines on stderr, one per 100 nodes.
    pub log: bool,
    /// Single-worker node processing (results are deterministic either
    /// way; this also fixes the exploration order exactly).
    pub deterministic: bool,
    /// Pivot cap per node LP solve.
    pub lp_max_iter: usize,
    /// Variables with artificial caps to watch (typically dual variables),
    /// with the cap value they were declared with.
    pub cap_vars: Vec<(VarId, f64)>,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        GlobalOptions {
            rel_gap: 2e-2,
            abs_gap: 1e-9,
            time_limit: None,
            node_limit: 100_000,
            obbt: false,
            obbt_time_per_var: 5.0,
            log: false,
            deterministic: false,
            lp_max_iter: 5_000,
            cap_vars: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GlobError {
    #[error("variable {0} has no finite bounds")]
    Unbounded(String),
    #[error("lp subsolver: {0}")]
    Qp(#[from] QpError),
    #[error("encoding: {0}")]
    Encode(#[from] crate::encoder::EncodeError),
}

/// Candidate-completion hook: given the node LP values and the node box,
/// produce a full assignment to try as an incumbent.
pub type IncumbentHint<'a> = &'a (dyn Fn(&[f64], &[Interval]) -> Option<Vec<f64>> + Sync);

// ---------------------------------------------------------------------------
// interval propagation

const PROP_EPS: f64 = 1e-9;

fn round_binary_bounds(bounds: &mut [Interval], binary: &[bool]) {
    for (b, &is_bin) in bounds.iter_mut().zip(binary) {
        if !is_bin {
            continue;
        }
        if b.hi < 1.0 - 1e-6 {
            b.hi = b.hi.min(0.0);
        }
        if b.lo > 1e-6 {
            b.lo = b.lo.max(1.0);
        }
    }
}

/// Feasibility-based bound tightening over linear rows and products.
/// Returns false when some interval empties (the region is infeasible).
pub(crate) fn fbbt(
    bounds: &mut [Interval],
    rows: &[LinCon],
    products: &[Product],
    binary: &[bool],
    passes: usize,
) -> bool {
    round_binary_bounds(bounds, binary);
    for _ in 0..passes {
        let mut changed = false;
        for row in rows {
            // total activity interval, then peel one term at a time
            let mut total = Interval::point(0.0);
            for &(v, c) in &row.terms {
                total = total + bounds[v.0].scale(c);
            }
            let row_iv = Interval::new(row.lo, row.hi);
            if total.lo > row.hi + 1e-7 || total.hi < row.lo - 1e-7 {
                return false;
            }
            for (i, &(v, c)) in row.terms.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                // sum the other terms directly: subtracting this term's
                // interval from the total would widen (interval x - x is
                // not zero) and never tighten anything
                let mut rest = Interval::point(0.0);
                for (k, &(ov, oc)) in row.terms.iter().enumerate() {
                    if k != i {
                        rest = rest + bounds[ov.0].scale(oc);
                    }
                }
                let target = (row_iv - rest).scale(1.0 / c);
                let target = Interval::new(target.lo - PROP_EPS, target.hi + PROP_EPS);
                let tightened = bounds[v.0].intersect(&target);
                if tightened.lo > bounds[v.0].lo + PROP_EPS || tightened.hi < bounds[v.0].hi - PROP_EPS {
                    changed = true;
                }
                bounds[v.0] = tightened;
                if bounds[v.0].is_empty() {
                    return false;
                }
            }
        }
        for p in products {
            let fa = bounds[p.a.0];
            let fb = bounds[p.b.0];
            let fwd = if p.a == p.b { fa.square() } else { fa * fb };
            let fwd = Interval::new(fwd.lo - PROP_EPS, fwd.hi + PROP_EPS);
            let tightened = bounds[p.w.0].intersect(&fwd);
            if tightened.lo > bounds[p.w.0].lo + PROP_EPS || tightened.hi < bounds[p.w.0].hi - PROP_EPS {
                changed = true;
            }
            bounds[p.w.0] = tightened;
            if bounds[p.w.0].is_empty() {
                return false;
            }
            let w = bounds[p.w.0];
            if p.a == p.b {
                // |a| <= sqrt(max w)
                let s = w.hi.max(0.0).sqrt() + PROP_EPS;
                let back = Interval::new(-s, s);
                bounds[p.a.0] = bounds[p.a.0].intersect(&back);
                if bounds[p.a.0].is_empty() {
                    return false;
                }
            } else {
                for (target, other) in [(p.a, p.b), (p.b, p.a)] {
                    let o = bounds[other.0];
                    if o.lo > PROP_EPS || o.hi < -PROP_EPS {
                        let recip = Interval::new(1.0 / o.hi, 1.0 / o.lo);
                        let back = w * recip;
                        let back = Interval::new(back.lo - PROP_EPS, back.hi + PROP_EPS);
                        bounds[target.0] = bounds[target.0].intersect(&back);
                        if bounds[target.0].is_empty() {
                            return false;
                        }
                    }
                }
            }
        }
        round_binary_bounds(bounds, binary);
        if bounds.iter().any(|b| b.is_empty()) {
            return false;
        }
        if !changed {
            break;
        }
    }
    true
}

fn declared_bounds(prog: &VerificationProgram) -> Vec<Interval> {
    prog.vars.iter().map(|v| Interval::new(v.lo, v.hi)).collect()
}

fn binary_mask(prog: &VerificationProgram) -> Vec<bool> {
    prog.vars.iter().map(|v| v.binary).collect()
}

/// Hard rows valid at a node: the program's rows plus every implication
/// whose binary the node has fixed to the firing value.
fn hard_rows(prog: &VerificationProgram, bounds: &[Interval]) -> Vec<LinCon> {
    let mut rows = prog.linear_cons.clone();
    for imp in &prog.implications {
        let b = bounds[imp.bin.0];
        if b.hi - b.lo < 1e-9 {
            let fired = b.lo > 0.5;
            if fired == imp.value {
                rows.push(imp.row.clone());
            }
        }
    }
    rows
}

/// Tightened bounds valid for every feasible point of the program.
/// `None` means propagation proved the program infeasible.
pub fn interval_propagate(prog: &VerificationProgram) -> Option<Vec<Interval>> {
    let mut bounds = declared_bounds(prog);
    let rows = hard_rows(prog, &bounds);
    let binary = binary_mask(prog);
    if fbbt(&mut bounds, &rows, &prog.products, &binary, 10) {
        Some(bounds)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// node relaxation

/// One-sided row `terms <= rhs` in sparse form.
type SparseRow = (Vec<(usize, f64)>, f64);

fn push_lincon(out: &mut Vec<SparseRow>, row: &LinCon) {
    if row.hi.is_finite() {
        out.push((row.terms.iter().map(|&(v, c)| (v.0, c)).collect(), row.hi));
    }
    if row.lo.is_finite() {
        out.push((row.terms.iter().map(|&(v, c)| (v.0, -c)).collect(), -row.lo));
    }
}

/// Big-M rows for implications whose binary is still free, derived from the
/// node box. Fixed-binary implications are covered by [`hard_rows`].
fn bigm_rows(prog: &VerificationProgram, bounds: &[Interval]) -> Vec<SparseRow> {
    let mut out = Vec::new();
    for imp in &prog.implications {
        let bb = bounds[imp.bin.0];
        if bb.hi - bb.lo < 1e-9 {
            continue;
        }
        let mut range = Interval::point(0.0);
        for &(v, c) in &imp.row.terms {
            range = range + bounds[v.0].scale(c);
        }
        if imp.row.hi.is_finite() {
            let m = (range.hi - imp.row.hi).max(0.0);
            let mut terms: Vec<(usize, f64)> =
                imp.row.terms.iter().map(|&(v, c)| (v.0, c)).collect();
            let rhs = if imp.value {
                terms.push((imp.bin.0, m));
                imp.row.hi + m
            } else {
                terms.push((imp.bin.0, -m));
                imp.row.hi
            };
            out.push((terms, rhs));
        }
        if imp.row.lo.is_finite() {
            // flip to <= form: -expr <= -lo, relaxed by M on the off value
            let m = (imp.row.lo - range.lo).max(0.0);
            let mut terms: Vec<(usize, f64)> =
                imp.row.terms.iter().map(|&(v, c)| (v.0, -c)).collect();
            let rhs = if imp.value {
                terms.push((imp.bin.0, m));
                -imp.row.lo + m
            } else {
                terms.push((imp.bin.0, -m));
                -imp.row.lo
            };
            out.push((terms, rhs));
        }
    }
    out
}

/// McCormick rows for every product, from the node box. Squares get the
/// secant over-estimator and tangent under-estimators at both ends and the
/// midpoint.
fn mccormick_rows(products: &[Product], bounds: &[Interval]) -> Vec<SparseRow> {
    let mut out = Vec::new();
    for p in products {
        let (w, a, b) = (p.w.0, p.a.0, p.b.0);
        if p.a == p.b {
            let (l, h) = (bounds[a].lo, bounds[a].hi);
            // secant: w <= (l+h) u - l h
            out.push((vec![(w, 1.0), (a, -(l + h))], -l * h));
            for t in [l, 0.5 * (l + h), h] {
                // tangent at t: w >= 2 t u - t^2
                out.push((vec![(w, -1.0), (a, 2.0 * t)], t * t));
            }
        } else {
            let (al, ah) = (bounds[a].lo, bounds[a].hi);
            let (bl, bh) = (bounds[b].lo, bounds[b].hi);
            out.push((vec![(w, -1.0), (b, al), (a, bl)], al * bl));
            out.push((vec![(w, -1.0), (b, ah), (a, bh)], ah * bh));
            out.push((vec![(w, 1.0), (b, -al), (a, -bh)], -al * bh));
            out.push((vec![(w, 1.0), (b, -ah), (a, -bl)], -ah * bl));
        }
    }
    out
}

/// Full one-sided row set of the node relaxation (box excluded).
pub(crate) fn relax_rows(prog: &VerificationProgram, bounds: &[Interval]) -> Vec<SparseRow> {
    let mut rows = Vec::new();
    for row in &hard_rows(prog, bounds) {
        push_lincon(&mut rows, row);
    }
    rows.extend(bigm_rows(prog, bounds));
    rows.extend(mccormick_rows(&prog.products, bounds));
    rows
}

struct LpOutcome {
    vals: Vec<f64>,
    /// Weak-duality bound: true upper bound on the maximization over the
    /// node, valid regardless of how well the LP converged.
    rigorous_max: f64,
    /// A Farkas-style certificate proves the node empty.
    infeasible_certified: bool,
    /// Solution pair for warm-starting child nodes.
    warm: Arc<WarmPoint>,
    /// The inner solver stopped on its iteration cap; the bound may be
    /// loose and worth re-solving with more effort.
    hit_cap: bool,
    /// The solve ended with an unverified infeasibility claim: the bound
    /// (from the clipped ray) is still valid, but `vals` are meaningless
    /// and must not drive branching or candidate generation.
    untrusted: bool,
}

/// Minimize `c' v` over the row set and box; rigorous bounds come from the
/// returned dual vector through the box Lagrangian.
fn solve_relaxation(
    c_min: &DVector<f64>,
    rows: &[SparseRow],
    bounds: &[Interval],
    obj_constant: f64,
    max_iter: usize,
    warm: Option<&WarmPoint>,
) -> Result<LpOutcome, QpError> {
    let n = c_min.len();
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut rhs = DVector::zeros(m);
    for (i, (terms, r)) in rows.iter().enumerate() {
        for &(j, cj) in terms {
            a[(i, j)] += cj;
        }
        rhs[i] = *r;
    }
    let lp = BoundedLp {
        c: c_min.clone(),
        a,
        b: rhs,
        lo: DVector::from_fn(n, |j, _| bounds[j].lo),
        hi: DVector::from_fn(n, |j, _| bounds[j].hi),
    };
    let sol = solve_bounded_lp(&lp, warm.map(|w| &w.basis), max_iter);

    // Lagrangian over the box with the clipped row duals: for any y >= 0,
    // min c'v >= -b'y + min over box of (c + A'y)'v. Exact at a simplex
    // optimum, still a true bound when the solve stops early.
    let mut r = c_min.clone();
    let mut lb = 0.0;
    for (i, (terms, bi)) in rows.iter().enumerate() {
        let yi = sol.y[i].max(0.0);
        lb -= bi * yi;
        for &(j, cj) in terms {
            r[j] += cj * yi;
        }
    }
    for (j, b) in bounds.iter().enumerate() {
        lb += (r[j] * b.lo).min(r[j] * b.hi);
    }
    let rigorous_max = obj_constant - lb;
    if (lb - sol.objective).abs() > 1e-6 * (1.0 + sol.objective.abs())
        && sol.status == SimplexStatus::Optimal
        && std::env::var("SCPVERIFY_DUMP_RAW").is_ok()
    {
        eprintln!(
            "duality mismatch: status={:?} cx {} dual {} iters={} warm={}",
            sol.status, sol.objective, lb, sol.iterations, warm.is_some()
        );
    }

    let mut infeasible_certified = false;
    let untrusted = sol.status == SimplexStatus::Infeasible;
    if sol.status == SimplexStatus::Infeasible {
        // same functional with c = 0 and the certificate ray: a positive
        // value proves the rows and the box incompatible
        let mut q: DVector<f64> = DVector::zeros(n);
        let mut t = 0.0;
        let mut yscale = 0.0_f64;
        for (i, (terms, bi)) in rows.iter().enumerate() {
            let yi = sol.y[i].max(0.0);
            yscale = yscale.max(yi);
            t -= bi * yi;
            for &(j, cj) in terms {
                q[j] += cj * yi;
            }
        }
        for (j, b) in bounds.iter().enumerate() {
            t += (q[j] * b.lo).min(q[j] * b.hi);
        }
        if t > 1e-7 * (1.0 + yscale) {
            infeasible_certified = true;
        }
    }

    let vals = (0..n)
        .map(|j| sol.x[j].clamp(bounds[j].lo, bounds[j].hi))
        .collect();
    Ok(LpOutcome {
        vals,
        rigorous_max,
        infeasible_certified,
        hit_cap: sol.status == SimplexStatus::IterLimit,
        untrusted,
        warm: Arc::new(WarmPoint { basis: sol.basis }),
    })
}

// ---------------------------------------------------------------------------
// branching

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Decision {
    /// Fix a fractional binary to 0 / 1.
    Binary(VarId),
    /// Complementarity pair: product index into `prog.products`.
    Comp(usize),
    /// Split a product operand at the given point.
    Spatial(VarId, f64),
    /// Relaxation is exact on this node.
    Exact,
}

pub(crate) fn decide_branch(
    prog: &VerificationProgram,
    bounds: &[Interval],
    vals: &[f64],
) -> Decision {
    // fractional binaries first, most fractional wins
    let mut best: Option<(f64, VarId)> = None;
    for v in prog.binaries() {
        let b = bounds[v.0];
        if b.hi - b.lo < 0.5 {
            continue;
        }
        let x = vals[v.0].clamp(0.0, 1.0);
        let frac = x.min(1.0 - x);
        if frac > 1e-6 && best.map_or(true, |(f, _)| frac > f) {
            best = Some((frac, v));
        }
    }
    if let Some((_, v)) = best {
        return Decision::Binary(v);
    }
    // Products carrying objective weight next: their envelope slack feeds
    // the bound directly, so closing it pays immediately. Ranking by raw
    // violation alone lets products buried in the constraint rows soak up
    // every split while the bound stalls.
    let mut obj_coef = vec![0.0; vals.len()];
    for &(v, c) in &prog.objective.terms {
        obj_coef[v.0] += c;
    }
    let spatial_of = |p: &Product| -> Option<Decision> {
        let (wa, wb) = (bounds[p.a.0].width(), bounds[p.b.0].width());
        let target = if p.a == p.b || wa >= wb { p.a } else { p.b };
        let b = bounds[target.0];
        if b.width() > 1e-10 {
            // split at the LP point, clamped to the middle half of the box
            // so an extreme LP point still shrinks the box geometrically
            let lo = b.lo + 0.25 * b.width();
            let hi = b.hi - 0.25 * b.width();
            let point = vals[target.0].clamp(lo, hi);
            return Some(Decision::Spatial(target, point));
        }
        None
    };
    let viol_of = |p: &Product| (vals[p.w.0] - vals[p.a.0] * vals[p.b.0]).abs();
    let mut best: Option<(f64, &Product)> = None;
    for p in &prog.products {
        let weight = obj_coef[p.w.0].abs();
        if weight == 0.0 {
            continue;
        }
        let score = weight * viol_of(p);
        if score > 1e-8 && best.map_or(true, |(f, _)| score > f) {
            best = Some((score, p));
        }
    }
    if let Some(d) = best.and_then(|(_, p)| spatial_of(p)) {
        return d;
    }
    // complementarity pairs, largest product in the relaxation
    let mut best: Option<(f64, usize)> = None;
    for &idx in &prog.comp_pairs {
        let p = &prog.products[idx];
        let (ba, bb) = (bounds[p.a.0], bounds[p.b.0]);
        if ba.hi.abs() < 1e-12 || bb.hi.abs() < 1e-12 {
            continue; // a side is already decided
        }
        let viol = (vals[p.a.0] * vals[p.b.0]).abs();
        if viol > 1e-8 && best.map_or(true, |(f, _)| viol > f) {
            best = Some((viol, idx));
        }
    }
    if let Some((_, idx)) = best {
        return Decision::Comp(idx);
    }
    // spatial: worst McCormick violation
    let mut best: Option<(f64, &Product)> = None;
    for p in &prog.products {
        let viol = viol_of(p);
        if viol > 1e-8 && best.map_or(true, |(f, _)| viol > f) {
            best = Some((viol, p));
        }
    }
    if let Some(d) = best.and_then(|(_, p)| spatial_of(p)) {
        return d;
    }
    Decision::Exact
}

/// Branching without LP guidance, for nodes whose relaxation did not
/// produce usable values: a free binary if any, else the widest interval
/// split at its midpoint.
pub(crate) fn branch_structural(prog: &VerificationProgram, node: &Node) -> Option<(Node, Node)> {
    for v in prog.binaries() {
        let b = node.bounds[v.0];
        if b.hi - b.lo >= 0.5 {
            return apply_decision(prog, node, Decision::Binary(v));
        }
    }
    let widest = (0..node.bounds.len())
        .filter(|&j| node.bounds[j].width() > 1e-7)
        .max_by(|&a, &b| {
            node.bounds[a]
                .width()
                .partial_cmp(&node.bounds[b].width())
                .unwrap()
        })?;
    let mid = node.bounds[widest].mid();
    apply_decision(prog, node, Decision::Spatial(VarId(widest), mid))
}

/// Children of a node under a branching decision; their boxes cover the
/// node's box.
pub(crate) fn branch(prog: &VerificationProgram, node: &Node, vals: &[f64]) -> Option<(Node, Node)> {
    let decision = decide_branch(prog, &node.bounds, vals);
    apply_decision(prog, node, decision)
}

fn apply_decision(prog: &VerificationProgram, node: &Node, decision: Decision) -> Option<(Node, Node)> {
    let mut left = Node {
        bounds: node.bounds.clone(),
        depth: node.depth + 1,
        ub: node.ub,
        id: 0,
        warm: None,
    };
    let mut right = left.clone();
    match decision {
        Decision::Binary(v) => {
            left.bounds[v.0] = left.bounds[v.0].intersect(&Interval::point(0.0));
            right.bounds[v.0] = right.bounds[v.0].intersect(&Interval::point(1.0));
        }
        Decision::Comp(idx) => {
            let p = prog.products[idx];
            left.bounds[p.a.0] = left.bounds[p.a.0].intersect(&Interval::point(0.0));
            right.bounds[p.b.0] = right.bounds[p.b.0].intersect(&Interval::point(0.0));
        }
        Decision::Spatial(v, point) => {
            left.bounds[v.0] = Interval::new(left.bounds[v.0].lo, point);
            right.bounds[v.0] = Interval::new(point, right.bounds[v.0].hi);
        }
        Decision::Exact => return None,
    }
    Some((left, right))
}

// ---------------------------------------------------------------------------
// the branch-and-bound loop

#[derive(PartialEq)]
struct HeapEntry {
    ub: f64,
    depth: usize,
    id: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // best bound first; deeper first among equals (plunge flavor);
        // node id breaks remaining ties deterministically
        self.ub
            .partial_cmp(&other.ub)
            .expect("bounds are never NaN")
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct NodeOutcome {
    children: Vec<Node>,
    candidates: Vec<Vec<f64>>,
    cap_active: bool,
    /// Set on exact nodes; if no accepted incumbent covers this value the
    /// bound survives in the result (never silently dropped).
    unresolved_ub: Option<f64>,
}

fn objective_cmin(prog: &VerificationProgram) -> DVector<f64> {
    let mut c = DVector::zeros(prog.n_vars());
    for &(v, coef) in &prog.objective.terms {
        c[v.0] -= coef;
    }
    c
}

/// Candidate assignment straight from the LP point: clamp to the box,
/// round binaries, recompute products exactly.
fn lp_candidate(prog: &VerificationProgram, bounds: &[Interval], vals: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = vals
        .iter()
        .zip(bounds)
        .map(|(&v, b)| b.clamp(v))
        .collect();
    for v in prog.binaries() {
        out[v.0] = if out[v.0] >= 0.5 { 1.0 } else { 0.0 };
    }
    for p in &prog.products {
        out[p.w.0] = out[p.a.0] * out[p.b.0];
    }
    // pinned complementarity products: tiny s*y rounds to exactly zero
    for &idx in &prog.comp_pairs {
        let p = &prog.products[idx];
        if (out[p.a.0] * out[p.b.0]).abs() <= WITNESS_TOL {
            out[p.w.0] = 0.0;
        }
    }
    out
}

fn process_node(
    prog: &VerificationProgram,
    mut node: Node,
    lb_snapshot: f64,
    opts: &GlobalOptions,
    binary: &[bool],
    hint: Option<IncumbentHint>,
) -> NodeOutcome {
    let pruned = NodeOutcome {
        children: vec![],
        candidates: vec![],
        cap_active: false,
        unresolved_ub: None,
    };
    let rows_hard = hard_rows(prog, &node.bounds);
    if !fbbt(&mut node.bounds, &rows_hard, &prog.products, binary, 4) {
        return pruned;
    }
    let rows = relax_rows(prog, &node.bounds);
    let c_min = objective_cmin(prog);
    let mut lp = match solve_relaxation(
        &c_min,
        &rows,
        &node.bounds,
        prog.objective.constant,
        opts.lp_max_iter,
        node.warm.as_deref(),
    ) {
        Ok(lp) => lp,
        Err(_) => return pruned, // malformed LP: treat as pruned, bound kept by parent
    };
    if lp.infeasible_certified {
        return pruned;
    }
    // A capped solve whose bound made under 1% progress on the node gap
    // usually signals an inaccurate dual, not a tight relaxation; one
    // high-effort re-solve restores the bound before branching multiplies
    // the stall across the subtree.
    let stalled = lp.hit_cap
        && node.ub.is_finite()
        && node.ub - lp.rigorous_max < 0.01 * (node.ub - lb_snapshot).max(0.0)
        && lp.rigorous_max > lb_snapshot + 1e-12;
    if stalled {
        if let Ok(better) = solve_relaxation(
            &c_min,
            &rows,
            &node.bounds,
            prog.objective.constant,
            opts.lp_max_iter * 10,
            Some(&lp.warm),
        ) {
            if better.infeasible_certified {
                return pruned;
            }
            if better.rigorous_max < lp.rigorous_max {
                lp = better;
            }
        }
    }
    let node_ub = node.ub.min(lp.rigorous_max);
    if node_ub <= lb_snapshot + 1e-12 {
        return pruned;
    }
    node.ub = node_ub;

    if lp.untrusted {
        // unverified infeasibility claim: the bound survives through the
        // ray Lagrangian, the primal values do not; split the box without
        // LP guidance and let the children settle it
        return match branch_structural(prog, &node) {
            Some((mut l, mut r)) => {
                l.ub = node_ub;
                r.ub = node_ub;
                NodeOutcome {
                    children: [l, r]
                        .into_iter()
                        .filter(|c| !c.bounds.iter().any(|b| b.is_empty()))
                        .collect(),
                    candidates: vec![],
                    cap_active: false,
                    unresolved_ub: None,
                }
            }
            None => {
                if opts.log {
                    eprintln!("unresolved(untrusted) depth={} ub={}", node.depth, node_ub);
                }
                NodeOutcome {
                    children: vec![],
                    candidates: vec![],
                    cap_active: false,
                    unresolved_ub: Some(node_ub),
                }
            }
        };
    }

    let cap_active = opts.cap_vars.iter().any(|&(v, cap)| {
        lp.vals[v.0] >= cap - 1e-6 * (1.0 + cap.abs())
    });

    let mut candidates = vec![lp_candidate(prog, &node.bounds, &lp.vals)];
    if let Some(h) = hint {
        if let Some(cand) = h(&lp.vals, &node.bounds) {
            candidates.push(cand);
        }
    }

    match branch(prog, &node, &lp.vals) {
        Some((mut l, mut r)) => {
            l.ub = node_ub;
            r.ub = node_ub;
            l.warm = Some(lp.warm.clone());
            r.warm = Some(lp.warm.clone());
            let children = [l, r]
                .into_iter()
                .filter(|c| !c.bounds.iter().any(|b| b.is_empty()))
                .collect();
            NodeOutcome {
                children,
                candidates,
                cap_active,
                unresolved_ub: None,
            }
        }
        None => {
            if opts.log {
                eprintln!(
                    "unresolved(exact) depth={} ub={} hit_cap={} cand_obj={} lp_obj={}",
                    node.depth,
                    node_ub,
                    lp.hit_cap,
                    prog.objective_value(&candidates[0]),
                    prog.objective_value(&lp.vals)
                );
                for p in &prog.products {
                    let viol = (lp.vals[p.w.0] - lp.vals[p.a.0] * lp.vals[p.b.0]).abs();
                    if viol > 1e-9 {
                        eprintln!(
                            "  prod {} viol={} widths=({:e},{:e})",
                            prog.vars[p.w.0].name,
                            viol,
                            node.bounds[p.a.0].width(),
                            node.bounds[p.b.0].width()
                        );
                    }
                }
            }
            NodeOutcome {
                children: vec![],
                candidates,
                cap_active,
                unresolved_ub: Some(node_ub),
            }
        }
    }
}

/// Maximize the program objective globally over the program's feasible set.
pub fn solve_global(
    prog: &VerificationProgram,
    opts: &GlobalOptions,
) -> Result<GlobalResult, GlobError> {
    solve_global_with(prog, opts, None)
}

/// [`solve_global`] with a candidate-completion hook for incumbents.
pub fn solve_global_with(
    prog: &VerificationProgram,
    opts: &GlobalOptions,
    hint: Option<IncumbentHint>,
) -> Result<GlobalResult, GlobError> {
    prog.check_bounded()
        .map_err(|e| GlobError::Unbounded(e.to_string()))?;
    let start = Instant::now();
    let binary = binary_mask(prog);

    let root_bounds = match interval_propagate(prog) {
        Some(b) => b,
        None => {
            return Ok(GlobalResult {
                best_value: None,
                upper_bound: f64::NEG_INFINITY,
                gap: f64::INFINITY,
                witness: None,
                nodes_explored: 0,
                status: GlobalStatus::Infeasible,
                dual_cap_active: false,
                root_bounds: declared_bounds(prog),
            })
        }
    };
    let root_bounds = if opts.obbt {
        obbt_on_bounds(prog, root_bounds, opts)?
    } else {
        root_bounds
    };

    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut store: std::collections::HashMap<u64, Node> = std::collections::HashMap::new();
    let mut next_id: u64 = 0;
    let push = |heap: &mut BinaryHeap<HeapEntry>,
                    store: &mut std::collections::HashMap<u64, Node>,
                    next_id: &mut u64,
                    mut node: Node| {
        node.id = *next_id;
        *next_id += 1;
        heap.push(HeapEntry { ub: node.ub, depth: node.depth, id: node.id });
        store.insert(node.id, node);
    };
    push(
        &mut heap,
        &mut store,
        &mut next_id,
        Node { bounds: root_bounds.clone(), depth: 0, ub: f64::INFINITY, id: 0, warm: None },
    );

    let mut lb = f64::NEG_INFINITY;
    let mut incumbent: Option<Vec<f64>> = None;
    let mut residual_ub = f64::NEG_INFINITY;
    let mut nodes_explored = 0usize;
    let mut cap_flag = false;
    let workers = if opts.deterministic { 1 } else { par::worker_count() };

    let status = loop {
        let heap_ub = heap.peek().map_or(f64::NEG_INFINITY, |e| e.ub);
        let ub = heap_ub.max(residual_ub).max(lb);
        if heap.is_empty() {
            if incumbent.is_some() {
                let gap = rel_gap_of(ub, lb);
                break if gap <= 1e-12 {
                    GlobalStatus::Converged
                } else if gap <= opts.rel_gap || ub - lb <= opts.abs_gap {
                    GlobalStatus::GapReached
                } else {
                    // exact nodes whose witnesses never validated; the
                    // bound is honest, the gap is not closed
                    GlobalStatus::TimeLimit
                };
            }
            break if residual_ub > f64::NEG_INFINITY {
                GlobalStatus::TimeLimit
            } else {
                GlobalStatus::Infeasible
            };
        }
        if incumbent.is_some() {
            let gap = rel_gap_of(ub, lb);
            if gap <= opts.rel_gap || ub - lb <= opts.abs_gap {
                break GlobalStatus::GapReached;
            }
        }
        if let Some(limit) = opts.time_limit {
            if start.elapsed().as_secs_f64() > limit {
                break GlobalStatus::TimeLimit;
            }
        }
        if nodes_explored >= opts.node_limit {
            break GlobalStatus::TimeLimit;
        }

        let mut batch: Vec<Node> = Vec::new();
        while batch.len() < workers {
            match heap.pop() {
                Some(e) => batch.push(store.remove(&e.id).expect("heap and store in sync")),
                None => break,
            }
        }
        let lb_snapshot = lb;
        let outcomes = par::map_slice(&batch, |node| {
            process_node(prog, node.clone(), lb_snapshot, opts, &binary, hint)
        });
        for (node, outcome) in batch.iter().zip(outcomes) {
            nodes_explored += 1;
            cap_flag |= outcome.cap_active;
            for cand in outcome.candidates {
                let obj = prog.objective_value(&cand);
                if obj > lb {
                    let findings = prog.check_assignment(&cand, WITNESS_TOL);
                    if findings.is_empty() {
                        lb = obj;
                        incumbent = Some(cand);
                    } else if opts.log && outcome.unresolved_ub.is_some() {
                        eprintln!(
                            "exact-node candidate obj={} rejected: {}",
                            obj, findings[0]
                        );
                    }
                }
            }
            if let Some(u) = outcome.unresolved_ub {
                if lb < u - 1e-6 * (1.0 + u.abs()) {
                    residual_ub = residual_ub.max(u);
                }
            }
            for child in outcome.children {
                if child.ub > lb + 1e-12 {
                    push(&mut heap, &mut store, &mut next_id, child);
                }
            }
            if opts.log && nodes_explored % 100 == 0 {
                let cur_ub = heap.peek().map_or(lb, |e| e.ub).max(residual_ub).max(lb);
                eprintln!(
                    "node={} depth={} bound={} incumbent={} gap={}",
                    nodes_explored,
                    node.depth,
                    cur_ub,
                    lb,
                    rel_gap_of(cur_ub, lb)
                );
            }
        }
    };

    let heap_ub = heap.peek().map_or(f64::NEG_INFINITY, |e| e.ub);
    if opts.log {
        eprintln!(
            "done status={:?} nodes={} heap_ub={} residual_ub={} lb={}",
            status, nodes_explored, heap_ub, residual_ub, lb
        );
    }
    let upper_bound = match status {
        GlobalStatus::Converged => lb,
        GlobalStatus::Infeasible => f64::NEG_INFINITY,
        _ => heap_ub.max(residual_ub).max(lb),
    };
    let gap = if incumbent.is_some() {
        rel_gap_of(upper_bound, lb)
    } else {
        f64::INFINITY
    };
    Ok(GlobalResult {
        best_value: incumbent.as_ref().map(|_| lb),
        upper_bound,
        gap,
        witness: incumbent,
        nodes_explored,
        status,
        dual_cap_active: cap_flag,
        root_bounds,
    })
}

fn rel_gap_of(ub: f64, lb: f64) -> f64 {
    if !lb.is_finite() {
        return f64::INFINITY;
    }
    ((ub - lb) / lb.abs().max(1.0)).max(0.0)
}

// ---------------------------------------------------------------------------
// optimization-based bound tightening

/// One tightening pass: minimize and maximize each selected variable over
/// the root relaxation. Binaries, constants, and the parameter block
/// (already boxed by the parameter set) are skipped; duals, products, and
/// iterate variables are the targets.
pub fn obbt_pass(
    prog: &VerificationProgram,
    per_var_time_limit: f64,
) -> Result<Vec<Interval>, GlobError> {
    let opts = GlobalOptions { obbt_time_per_var: per_var_time_limit, ..GlobalOptions::default() };
    let bounds = match interval_propagate(prog) {
        Some(b) => b,
        None => return Ok(declared_bounds(prog)), // empty set: any box contains it
    };
    obbt_on_bounds(prog, bounds, &opts)
}

fn obbt_on_bounds(
    prog: &VerificationProgram,
    mut bounds: Vec<Interval>,
    opts: &GlobalOptions,
) -> Result<Vec<Interval>, GlobError> {
    let rows = relax_rows(prog, &bounds);
    let binary = binary_mask(prog);
    let n = prog.n_vars();
    for j in 0..n {
        let v = &prog.vars[j];
        if v.binary || bounds[j].width() < 1e-9 {
            continue;
        }
        if v.name.starts_with("x[") || v.name.starts_with("bx[") {
            continue;
        }
        let var_start = Instant::now();
        for sense in [1.0, -1.0] {
            if var_start.elapsed().as_secs_f64() > opts.obbt_time_per_var {
                break;
            }
            let mut c = DVector::zeros(n);
            c[j] = sense;
            let lp = solve_relaxation(&c, &rows, &bounds, 0.0, opts.lp_max_iter, None)?;
            // rigorous_max bounds max of -c'v; translate per sense
            if sense > 0.0 {
                let lo = -lp.rigorous_max - 1e-9;
                if lo > bounds[j].lo {
                    bounds[j].lo = lo.min(bounds[j].hi);
                }
            } else {
                let hi = lp.rigorous_max + 1e-9;
                if hi < bounds[j].hi {
                    bounds[j].hi = hi.max(bounds[j].lo);
                }
            }
        }
    }
    // propagate the new box once more; the pass never proves infeasibility
    // on a feasible program, so a failure here is left to the main solve
    let hard = hard_rows(prog, &bounds);
    let _ = fbbt(&mut bounds, &hard, &prog.products, &binary, 4);
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::program::LinExpr;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight_opts() -> GlobalOptions {
        GlobalOptions { rel_gap: 1e-6, abs_gap: 1e-9, ..GlobalOptions::default() }
    }

    #[test]
    fn propagate_square_box() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        let w = prog.add_product(u, u);
        let bounds = interval_propagate(&prog).unwrap();
        assert!(bounds[w.0].lo >= -1e-9 && bounds[w.0].hi <= 1.0 + 1e-9);
    }

    #[test]
    fn propagate_linear_row() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        let v = prog.add_var("v", 0.6, 2.0);
        let mut e = LinExpr::term(u, 1.0);
        e.push(v, 1.0);
        prog.add_con(1.0, 1.0, e);
        let bounds = interval_propagate(&prog).unwrap();
        assert!(bounds[u.0].hi <= 0.4 + 1e-6, "u hi {}", bounds[u.0].hi);
        assert!(bounds[v.0].hi <= 1.0 + 1e-6, "v hi {}", bounds[v.0].hi);
    }

    #[test]
    fn propagate_contradiction() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        prog.add_con(2.0, f64::INFINITY, LinExpr::term(u, 1.0));
        assert!(interval_propagate(&prog).is_none());
    }

    #[test]
    fn mccormick_unit_box_max() {
        // maximize w = u*v on [0,1]^2: the envelope peaks at exactly 1
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        let v = prog.add_var("v", 0.0, 1.0);
        let w = prog.add_product(u, v);
        prog.objective = LinExpr::term(w, 1.0);
        let res = solve_global(&prog, &tight_opts()).unwrap();
        assert!(matches!(res.status, GlobalStatus::Converged | GlobalStatus::GapReached));
        assert_relative_eq!(res.best_value.unwrap(), 1.0, epsilon = 1e-5);
        assert!(res.gap <= 1e-6 + 1e-12);
    }

    #[test]
    fn degenerate_mccormick_is_exact() {
        // u fixed to 0.3: the envelope collapses to w = 0.3 v
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.3, 0.3);
        let v = prog.add_var("v", -1.0, 2.0);
        let w = prog.add_product(u, v);
        let bounds = declared_bounds(&prog);
        let rows = mccormick_rows(&prog.products, &bounds);
        // at any v, the four rows force w = 0.3 v
        for vv in [-1.0, 0.25, 2.0] {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for (terms, rhs) in &rows {
                // rows are c_w w + ... <= rhs with c_w = +-1
                let mut cw = 0.0;
                let mut rest = 0.0;
                for &(j, c) in terms {
                    if j == w.0 {
                        cw = c;
                    } else if j == v.0 {
                        rest += c * vv;
                    } else {
                        rest += c * 0.3;
                    }
                }
                if cw > 0.0 {
                    hi = hi.min(rhs - rest);
                } else {
                    lo = lo.max(rest - rhs);
                }
            }
            assert_relative_eq!(lo, 0.3 * vv, epsilon = 1e-12);
            assert_relative_eq!(hi, 0.3 * vv, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_secant_symmetric_box() {
        // relax w = u^2 on [-1, 1]: secant caps w at 1, tangents touch below
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", -1.0, 1.0);
        let w = prog.add_product(u, u);
        prog.objective = LinExpr::term(w, 1.0);
        let res = solve_global(&prog, &tight_opts()).unwrap();
        assert_relative_eq!(res.best_value.unwrap(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn branch_fractional_binary() {
        let mut prog = VerificationProgram::new();
        let b = prog.add_binary("b");
        let mut vals = vec![0.0; prog.n_vars()];
        vals[b.0] = 0.4;
        let bounds = declared_bounds(&prog);
        assert_eq!(decide_branch(&prog, &bounds, &vals), Decision::Binary(b));
        let node = Node { bounds, depth: 0, ub: 1.0, id: 0, warm: None };
        let (l, r) = branch(&prog, &node, &vals).unwrap();
        assert_eq!(l.bounds[b.0], Interval::point(0.0));
        assert_eq!(r.bounds[b.0], Interval::point(1.0));
    }

    #[test]
    fn branch_complementarity_pair() {
        let mut prog = VerificationProgram::new();
        let s = prog.add_var("s", 0.0, 2.0);
        let y = prog.add_var("y", 0.0, 2.0);
        prog.add_comp_pair(s, y);
        let mut vals = vec![0.0; prog.n_vars()];
        vals[s.0] = 0.3;
        vals[y.0] = 0.2;
        let bounds = declared_bounds(&prog);
        assert_eq!(decide_branch(&prog, &bounds, &vals), Decision::Comp(0));
        let node = Node { bounds, depth: 0, ub: 1.0, id: 0, warm: None };
        let (l, r) = branch(&prog, &node, &vals).unwrap();
        assert_eq!(l.bounds[s.0].hi, 0.0);
        assert_eq!(r.bounds[y.0].hi, 0.0);
    }

    #[test]
    fn branch_spatial_splits_at_lp_point() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        let v = prog.add_var("v", 0.0, 1.0);
        let w = prog.add_product(u, v);
        let mut vals = vec![0.0; prog.n_vars()];
        vals[u.0] = 0.5;
        vals[v.0] = 0.5;
        vals[w.0] = 0.5; // exact value would be 0.25
        let bounds = declared_bounds(&prog);
        match decide_branch(&prog, &bounds, &vals) {
            Decision::Spatial(var, point) => {
                assert!(var == u || var == v);
                assert_relative_eq!(point, 0.5, epsilon = 1e-12);
            }
            other => panic!("expected spatial branch, got {other:?}"),
        }
    }

    #[test]
    fn perfect_tracking_maximum_is_zero() {
        // maximize -(u - x)^2 with u forced to track x: the optimum is 0
        let mut prog = VerificationProgram::new();
        let x = prog.add_var("x", 2.0, 4.0);
        let u = prog.add_var("u", 2.0, 4.0);
        let r = prog.add_var("r", -2.0, 2.0);
        let mut e = LinExpr::term(r, 1.0);
        e.push(u, -1.0);
        e.push(x, 1.0);
        prog.add_eq(e);
        // tracking row u = x
        let mut e = LinExpr::term(u, 1.0);
        e.push(x, -1.0);
        prog.add_eq(e);
        let w = prog.add_product(r, r);
        prog.objective = LinExpr::term(w, -1.0);
        let res = solve_global(&prog, &tight_opts()).unwrap();
        assert!(res.best_value.unwrap().abs() <= 1e-6);
        assert!(res.upper_bound.abs() <= 1e-6);
    }

    #[test]
    fn comp_pinned_product_forces_a_side_to_zero() {
        // maximize s + y with s*y = 0 and s, y in [0, 1]: optimum 1
        let mut prog = VerificationProgram::new();
        let s = prog.add_var("s", 0.0, 1.0);
        let y = prog.add_var("y", 0.0, 1.0);
        prog.add_comp_pair(s, y);
        let mut obj = LinExpr::term(s, 1.0);
        obj.push(y, 1.0);
        prog.objective = obj;
        let res = solve_global(&prog, &tight_opts()).unwrap();
        let v = res.best_value.unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-5);
        let w = res.witness.unwrap();
        assert!((w[s.0] * w[y.0]).abs() <= 1e-6);
    }

    /// Brute-force grid maximum of a box-constrained bilinear program over
    /// its base (non-product) variables.
    fn grid_max(prog: &VerificationProgram, base: &[VarId], points: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; base.len()];
        loop {
            let mut vals = vec![0.0; prog.n_vars()];
            for (pos, &v) in base.iter().enumerate() {
                let b = &prog.vars[v.0];
                let t = idx[pos] as f64 / (points - 1) as f64;
                vals[v.0] = b.lo + t * (b.hi - b.lo);
            }
            for p in &prog.products {
                vals[p.w.0] = vals[p.a.0] * vals[p.b.0];
            }
            best = best.max(prog.objective_value(&vals));
            // odometer
            let mut pos = 0;
            loop {
                if pos == base.len() {
                    return best;
                }
                idx[pos] += 1;
                if idx[pos] < points {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn random_bilinear_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let opts = tight_opts();
        for trial in 0..50 {
            let nb = rng.gen_range(2..=3);
            let mut prog = VerificationProgram::new();
            let base: Vec<VarId> = (0..nb)
                .map(|j| {
                    let lo = rng.gen_range(-1.0..0.0);
                    let hi = rng.gen_range(0.1..1.5);
                    prog.add_var(format!("v{j}"), lo, hi)
                })
                .collect();
            let np = rng.gen_range(1..=3);
            let mut obj = LinExpr::new();
            for _ in 0..np {
                let a = base[rng.gen_range(0..nb)];
                let b = base[rng.gen_range(0..nb)];
                let w = prog.add_product(a, b);
                obj.push(w, rng.gen_range(-2.0..2.0));
            }
            for &v in &base {
                obj.push(v, rng.gen_range(-1.0..1.0));
            }
            obj.simplify();
            prog.objective = obj;

            let res = solve_global(&prog, &opts).unwrap();
            let points = 41;
            let reference = grid_max(&prog, &base, points);
            // the grid under-estimates the true maximum by at most the
            // objective's modulus of continuity over one grid cell
            let mut slack = 0.0;
            for &v in &base {
                let b = &prog.vars[v.0];
                let h = (b.hi - b.lo) / (points - 1) as f64;
                let mut grad: f64 = prog
                    .objective
                    .terms
                    .iter()
                    .filter(|(id, _)| *id == v)
                    .map(|(_, c)| c.abs())
                    .sum();
                for p in &prog.products {
                    if p.a == v || p.b == v {
                        let other = if p.a == v { p.b } else { p.a };
                        let ob = &prog.vars[other.0];
                        let omax = ob.lo.abs().max(ob.hi.abs());
                        let coef: f64 = prog
                            .objective
                            .terms
                            .iter()
                            .filter(|(id, _)| *id == p.w)
                            .map(|(_, c)| c.abs())
                            .sum();
                        grad += coef * omax * if p.a == p.b { 2.0 } else { 1.0 };
                    }
                }
                slack += grad * h * 0.5;
            }
            let best = res.best_value.unwrap();
            assert!(
                best >= reference - 1e-6,
                "trial {trial}: solver {best} below grid {reference}"
            );
            assert!(
                best <= reference + slack + 1e-6,
                "trial {trial}: solver {best} above grid {reference} + slack {slack}"
            );
        }
    }

    #[test]
    fn relaxation_validity_random_points() {
        // feasible points of random programs satisfy every node relaxation
        // row built from a box that contains them
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let mut prog = VerificationProgram::new();
            let u = prog.add_var("u", rng.gen_range(-2.0..0.0), rng.gen_range(0.1..2.0));
            let v = prog.add_var("v", rng.gen_range(-2.0..0.0), rng.gen_range(0.1..2.0));
            let w = prog.add_product(u, v);
            let sq = prog.add_product(u, u);
            let bounds = interval_propagate(&prog).unwrap();
            let rows = relax_rows(&prog, &bounds);
            for _ in 0..10 {
                let bu = bounds[u.0];
                let bv = bounds[v.0];
                let uu = rng.gen_range(bu.lo..=bu.hi);
                let vv = rng.gen_range(bv.lo..=bv.hi);
                let mut vals = vec![0.0; prog.n_vars()];
                vals[u.0] = uu;
                vals[v.0] = vv;
                vals[w.0] = uu * vv;
                vals[sq.0] = uu * uu;
                for (terms, rhs) in &rows {
                    let lhs: f64 = terms.iter().map(|&(j, c)| c * vals[j]).sum();
                    assert!(lhs <= rhs + 1e-9, "relaxation row cut off a feasible point");
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn bound_monotone_down_a_branch_path() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        let v = prog.add_var("v", 0.0, 1.0);
        let w = prog.add_product(u, v);
        let mut obj = LinExpr::term(w, 1.0);
        obj.push(u, -0.3);
        prog.objective = obj;
        let binary = binary_mask(&prog);
        let opts = GlobalOptions::default();
        let c_min = objective_cmin(&prog);
        let mut node = Node { bounds: declared_bounds(&prog), depth: 0, ub: f64::INFINITY, id: 0, warm: None };
        let mut last = f64::INFINITY;
        for _ in 0..6 {
            let rows_hard = hard_rows(&prog, &node.bounds);
            assert!(fbbt(&mut node.bounds, &rows_hard, &prog.products, &binary, 4));
            let rows = relax_rows(&prog, &node.bounds);
            let lp = solve_relaxation(&c_min, &rows, &node.bounds, 0.0, opts.lp_max_iter, None)
                .unwrap();
            let ub = node.ub.min(lp.rigorous_max);
            assert!(ub <= last + 1e-9, "bound increased down the path");
            last = ub;
            node.ub = ub;
            match branch(&prog, &node, &lp.vals) {
                Some((l, _)) => node = l,
                None => break,
            }
        }
    }

    #[test]
    fn obbt_collapses_forced_variable() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 4.0);
        let mut e = LinExpr::term(u, 1.0);
        e.constant = -3.0;
        prog.add_eq(e);
        let bounds = obbt_pass(&prog, 5.0).unwrap();
        assert!(bounds[u.0].lo >= 3.0 - 1e-6);
        assert!(bounds[u.0].hi <= 3.0 + 1e-6);
    }

    #[test]
    fn obbt_keeps_tight_bounds() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", -1.0, 1.0);
        prog.objective = LinExpr::term(u, 1.0);
        let bounds = obbt_pass(&prog, 5.0).unwrap();
        assert!(bounds[u.0].lo <= -1.0 + 1e-6);
        assert!(bounds[u.0].hi >= 1.0 - 1e-6);
    }

    #[test]
    fn infeasible_program_is_reported() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", 0.0, 1.0);
        prog.add_con(2.0, 3.0, LinExpr::term(u, 1.0));
        prog.objective = LinExpr::term(u, 1.0);
        let res = solve_global(&prog, &GlobalOptions::default()).unwrap();
        assert_eq!(res.status, GlobalStatus::Infeasible);
        assert!(res.witness.is_none());
    }
}
