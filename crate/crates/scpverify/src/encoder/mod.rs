//! Compilation of verification problems into explicit mixed-integer
//! bilinear programs.
//!
//! Each QP-valued step contributes its KKT system: primal feasibility
//! `A u + s = b`, dual stationarity `P u + A' y + c = 0`, sign constraints,
//! and complementarity `s_i y_i = 0` as pinned product variables. Step data
//! that depends on the parameter or the previous iterate turns into
//! bilinear products. Rounding steps contribute the binary projection rows
//! (v - u <= 1/2, u - v <= 1/2) or the sparsity selection machinery with
//! binaries, a threshold variable, and big-M implications. The three
//! metric builders assemble full programs: worst-case suboptimality (with a
//! feasibility-constrained reference point z*), squared constraint
//! violation, and final-step feasibility through Farkas certificates.
//!
//! Every program compiled here is sound against the forward runner: a
//! forward trace extends to a feasible assignment of the program, so the
//! verified worst case always dominates sampled values.

pub mod lp;
pub mod program;

pub use program::{LinCon, LinExpr, Product, ProgramError, VarId, VerificationProgram};

use crate::interval::Interval;
use crate::model::{
    AlgorithmSchedule, DiscreteConstraint, ParametricProblem, ParameterSet, PerformanceMetric,
    QuadraticForm, RoundTarget, StepSpec,
};
use crate::scprun::IterateTrace;
use crate::steps::{
    build_ccp, build_polish, build_prox_linear, build_relax, build_trust_region, Aff, Atom,
    AtomBoxes, QAff, StepError, SymQp, ZSource,
};
use nalgebra::DVector;

/// How exactly subproblem solutions are assumed to satisfy their KKT
/// systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InexactnessModel {
    /// Iterates are exact KKT points.
    Exact,
    /// The returned iterate lies within an infinity-norm distance `eps` of
    /// an exact solution.
    DistanceToOpt { eps: f64 },
    /// Primal and dual residual equalities hold within `eps` bands.
    KktResidual { eps: f64 },
}

/// Compilation options shared by all metric builders.
#[derive(Debug, Clone)]
pub struct EncodeOptions {
    pub inexact: InexactnessModel,
    /// Upper bound on every dual variable; results where a dual sits at
    /// this cap are flagged unverified by the solver.
    pub dual_cap: f64,
    /// Fallback box for iterate coordinates when the steps themselves do
    /// not bound them.
    pub iterate_lo: Vec<f64>,
    pub iterate_hi: Vec<f64>,
}

impl EncodeOptions {
    pub fn new(iterate_lo: Vec<f64>, iterate_hi: Vec<f64>) -> Self {
        EncodeOptions {
            inexact: InexactnessModel::Exact,
            dual_cap: 1e4,
            iterate_lo,
            iterate_hi,
        }
    }

    pub fn with_inexact(mut self, inexact: InexactnessModel) -> Self {
        self.inexact = inexact;
        self
    }

    fn iterate_box(&self) -> Vec<Interval> {
        self.iterate_lo
            .iter()
            .zip(&self.iterate_hi)
            .map(|(&lo, &hi)| Interval::new(lo, hi))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("variable {name} needs a finite bound for encoding")]
    InfiniteBound { name: String },
    #[error("binary rounding requires iterate bounds inside [0, 1]; coordinate {index} has [{lo}, {hi}]")]
    RoundBoundsExceedUnitBox { index: usize, lo: f64, hi: f64 },
    #[error("sparsity rounding needs the |z| block produced by a relax step with lambda > 0")]
    MissingAbsBlock,
    #[error("step {index} needs a previous iterate but the schedule has no initial point")]
    MissingInitialPoint { index: usize },
    #[error("feasibility compilation requires the final step's constraint data to be affine in (z, x)")]
    FarkasFinalStepNotAffine,
    #[error("feasibility compilation requires at least one step")]
    FarkasEmptySchedule,
    #[error("iterate box has {got} coordinates, problem has {expected}")]
    IterateBoxDimension { expected: usize, got: usize },
}

/// Variable handles for one encoded step.
#[derive(Debug, Clone, Default)]
pub struct StepVarIds {
    pub u: Vec<VarId>,
    pub s: Vec<VarId>,
    pub y: Vec<VarId>,
    /// Present under the DistanceToOpt model; downstream steps read these.
    pub u_inexact: Option<Vec<VarId>>,
    /// Rounding binaries (Proposition 1 v's / Proposition 2 alphas).
    pub round_bins: Vec<VarId>,
}

/// Assignment completion hook: computes derived variables from already
/// assigned ones.
pub type Filler = Box<dyn Fn(&mut Vec<f64>) + Send + Sync>;

/// Variable map of a compiled program, used to rebuild a full assignment
/// from a forward trace (soundness checks and warm incumbents).
pub struct ProgramMeta {
    pub metric: PerformanceMetric,
    pub x: Vec<VarId>,
    /// Aligned with `IterateTrace::iterates`.
    pub z: Vec<Vec<VarId>>,
    pub steps: Vec<StepVarIds>,
    pub z_star: Vec<VarId>,
    pub farkas_y: Vec<VarId>,
    fillers: Vec<Filler>,
}

impl std::fmt::Debug for ProgramMeta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProgramMeta")
            .field("metric", &self.metric)
            .field("x", &self.x)
            .field("z", &self.z)
            .field("z_star", &self.z_star)
            .field("farkas_y", &self.farkas_y)
            .field("fillers", &self.fillers.len())
            .finish()
    }
}

/// A compiled verification problem.
pub struct Encoded {
    pub prog: VerificationProgram,
    pub meta: ProgramMeta,
}

struct Enc<'a> {
    problem: &'a ParametricProblem,
    opts: &'a EncodeOptions,
    prog: VerificationProgram,
    meta: ProgramMeta,
    /// Current iterate variable ids.
    z_cur: Option<Vec<VarId>>,
    /// Current sparsity selection binaries (PrevAux atoms).
    aux_ids: Vec<VarId>,
    /// |z| block from the last relax step.
    abs_ids: Option<Vec<VarId>>,
    step_idx: usize,
}

impl<'a> Enc<'a> {
    fn new(
        problem: &'a ParametricProblem,
        pset: &'a ParameterSet,
        opts: &'a EncodeOptions,
        metric: PerformanceMetric,
    ) -> Result<Self, EncodeError> {
        if opts.iterate_lo.len() != problem.n || opts.iterate_hi.len() != problem.n {
            return Err(EncodeError::IterateBoxDimension {
                expected: problem.n,
                got: opts.iterate_lo.len(),
            });
        }
        let mut prog = VerificationProgram::new();
        let mut fillers: Vec<Filler> = Vec::new();
        let mut x = Vec::with_capacity(problem.d);
        for j in 0..problem.d {
            let id = prog.add_var(format!("x[{j}]"), pset.lower[j], pset.upper[j]);
            x.push(id);
            if pset.discrete_coords.contains(&j) && pset.lower[j] < pset.upper[j] {
                let b = prog.add_binary(format!("bx[{j}]"));
                // x_j = lo + (hi - lo) b
                let mut e = LinExpr::constant(pset.lower[j]);
                e.push(b, pset.upper[j] - pset.lower[j]);
                e.push(id, -1.0);
                prog.add_eq(e);
                let (lo, width) = (pset.lower[j], pset.upper[j] - pset.lower[j]);
                fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                    vals[b.0] = ((vals[id.0] - lo) / width).round().clamp(0.0, 1.0);
                }));
            }
        }
        Ok(Enc {
            problem,
            opts,
            prog,
            meta: ProgramMeta {
                metric,
                x,
                z: vec![],
                steps: vec![],
                z_star: vec![],
                farkas_y: vec![],
                fillers,
            },
            z_cur: None,
            aux_ids: vec![],
            abs_ids: None,
            step_idx: 0,
        })
    }

    fn set_initial(&mut self, z0: &DVector<f64>) {
        let ids: Vec<VarId> = (0..self.problem.n)
            .map(|i| self.prog.add_constant(format!("z0[{i}]"), z0[i]))
            .collect();
        self.meta.z.push(ids.clone());
        self.z_cur = Some(ids);
    }

    fn atom_var(&self, atom: Atom) -> VarId {
        match atom {
            Atom::X(j) => self.meta.x[j],
            Atom::Prev(i) => self.z_cur.as_ref().expect("previous iterate encoded")[i],
            Atom::PrevAux(i) => self.aux_ids[i],
        }
    }

    fn atom_boxes(&self) -> AtomBoxes {
        AtomBoxes {
            x: self.meta.x.iter().map(|&v| self.prog.bound(v)).collect(),
            prev: self
                .z_cur
                .as_ref()
                .map(|ids| ids.iter().map(|&v| self.prog.bound(v)).collect())
                .unwrap_or_default(),
            aux: vec![Interval::new(0.0, 1.0); self.aux_ids.len()],
        }
    }

    fn aff_expr(&self, aff: &Aff) -> LinExpr {
        let mut e = LinExpr::constant(aff.constant);
        for (atom, c) in &aff.terms {
            e.push(self.atom_var(*atom), *c);
        }
        e
    }

    fn qaff_expr(&mut self, q: &QAff) -> LinExpr {
        let mut e = self.aff_expr(&q.lin);
        for (a, b, c) in &q.quad {
            let w = self.prog.add_product(self.atom_var(*a), self.atom_var(*b));
            e.push(w, *c);
        }
        e
    }

    /// `aff * v` lifted into the program: the constant part stays linear,
    /// atom terms become products.
    fn aff_times(&mut self, aff: &Aff, v: VarId) -> LinExpr {
        let mut e = LinExpr::term(v, aff.constant);
        for (atom, c) in &aff.terms {
            let w = self.prog.add_product(self.atom_var(*atom), v);
            e.push(w, *c);
        }
        e
    }

    fn expr_interval(&self, e: &LinExpr) -> Interval {
        let mut acc = Interval::point(e.constant);
        for (v, c) in &e.terms {
            acc = acc + self.prog.bound(*v).scale(*c);
        }
        acc
    }

    fn require_finite(&self, b: Interval, name: &str) -> Result<Interval, EncodeError> {
        if b.is_finite() {
            Ok(b)
        } else {
            Err(EncodeError::InfiniteBound { name: name.to_string() })
        }
    }

    /// Encode the KKT system of one symbolic QP step. Returns the variable
    /// ids of the next iterate.
    fn encode_qp_step(&mut self, sym: &SymQp) -> Result<Vec<VarId>, EncodeError> {
        let k = self.step_idx;
        let m = sym.rows.len();
        let boxes = self.atom_boxes();

        let mut u = Vec::with_capacity(sym.n_u);
        for j in 0..sym.n_u {
            let b = self.require_finite(sym.u_bounds[j], &format!("u{k}[{j}]"))?;
            u.push(self.prog.add_var(format!("u{k}[{j}]"), b.lo, b.hi));
        }
        let mut s = Vec::with_capacity(m);
        for (i, row) in sym.rows.iter().enumerate() {
            // s = b - A u >= 0, capped via interval arithmetic
            let mut range = row.rhs.interval(&boxes);
            for (j, coeff) in row.coeffs.iter().enumerate() {
                range = range - coeff.interval(&boxes) * sym.u_bounds[j];
            }
            let cap = self
                .require_finite(range, &format!("s{k}[{i}]"))?
                .intersect(&Interval::new(0.0, f64::INFINITY));
            s.push(self.prog.add_var(format!("s{k}[{i}]"), 0.0, cap.hi.max(0.0)));
        }
        let y: Vec<VarId> = (0..m)
            .map(|i| self.prog.add_var(format!("y{k}[{i}]"), 0.0, self.opts.dual_cap))
            .collect();

        let band = match self.opts.inexact {
            InexactnessModel::KktResidual { eps } => eps,
            _ => 0.0,
        };

        // primal: A u + s - b = 0 (within +-band)
        for (i, row) in sym.rows.iter().enumerate() {
            let mut e = LinExpr::new();
            for (j, coeff) in row.coeffs.iter().enumerate() {
                e.add(&self.aff_times(coeff, u[j]));
            }
            e.push(s[i], 1.0);
            let rhs = self.qaff_expr(&row.rhs);
            e.add(&rhs.scaled(-1.0));
            self.prog.add_con(-band, band, e);
        }
        // dual: P u + A' y + c = 0 (within +-band)
        for j in 0..sym.n_u {
            let mut e = LinExpr::new();
            for l in 0..sym.n_u {
                e.push(u[l], sym.p[(j, l)]);
            }
            for (i, row) in sym.rows.iter().enumerate() {
                e.add(&self.aff_times(&row.coeffs[j], y[i]));
            }
            let c = self.qaff_expr(&sym.cost[j]);
            e.add(&c);
            self.prog.add_con(-band, band, e);
        }
        // complementarity s_i y_i = 0, branched on by the solver
        for i in 0..m {
            self.prog.add_comp_pair(s[i], y[i]);
        }

        // inexactness: downstream consumers read u_down
        let u_down: Vec<VarId> = match self.opts.inexact {
            InexactnessModel::DistanceToOpt { eps } => {
                let mut down = Vec::with_capacity(sym.n_u);
                for j in 0..sym.n_u {
                    let b = sym.u_bounds[j];
                    let id = self.prog.add_var(
                        format!("uin{k}[{j}]"),
                        b.lo - eps,
                        b.hi + eps,
                    );
                    let mut e = LinExpr::term(u[j], 1.0);
                    e.push(id, -1.0);
                    self.prog.add_con(-eps, eps, e);
                    down.push(id);
                }
                let (ue, ui) = (u.clone(), down.clone());
                self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                    for (a, b) in ue.iter().zip(&ui) {
                        vals[b.0] = vals[a.0];
                    }
                }));
                down
            }
            _ => u.clone(),
        };

        let next: Vec<VarId> = sym
            .z_next
            .iter()
            .map(|src| match src {
                ZSource::U(j) => u_down[*j],
                ZSource::Prev(i) => self.z_cur.as_ref().expect("passthrough has prev")[*i],
            })
            .collect();

        self.abs_ids = sym
            .abs_block
            .as_ref()
            .map(|idx| idx.iter().map(|&j| u_down[j]).collect());
        self.meta.steps.push(StepVarIds {
            u,
            s,
            y,
            u_inexact: matches!(self.opts.inexact, InexactnessModel::DistanceToOpt { .. })
                .then_some(u_down),
            round_bins: vec![],
        });
        Ok(next)
    }

    fn encode_round(&mut self, target: &RoundTarget) -> Result<Vec<VarId>, EncodeError> {
        let k = self.step_idx;
        let prev = self
            .z_cur
            .clone()
            .ok_or(EncodeError::MissingInitialPoint { index: k })?;
        let mut next = prev.clone();
        let mut ids = StepVarIds::default();
        match target {
            RoundTarget::Binary(idx) => {
                for &i in idx {
                    let v =
                        encode_binary_round_coord(&mut self.prog, prev[i], &format!("z{k}v[{i}]"))?;
                    next[i] = v;
                    ids.round_bins.push(v);
                }
            }
            RoundTarget::PlusMinusOne(idx) => {
                for &i in idx {
                    let u = prev[i];
                    let b = self.prog.add_binary(format!("bsign{k}[{i}]"));
                    let v = self.prog.add_var(format!("z{k}v[{i}]"), -1.0, 1.0);
                    // v = 2b - 1
                    let mut e = LinExpr::term(v, 1.0);
                    e.push(b, -2.0);
                    e.constant = 1.0;
                    self.prog.add_eq(e);
                    // b = 1 ==> u >= 0; b = 0 ==> u <= 0 (ties adversarial)
                    self.prog
                        .add_implication(b, true, 0.0, f64::INFINITY, LinExpr::term(u, 1.0));
                    self.prog
                        .add_implication(b, false, f64::NEG_INFINITY, 0.0, LinExpr::term(u, 1.0));
                    self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                        vals[b.0] = if vals[v.0] >= 0.0 { 1.0 } else { 0.0 };
                    }));
                    next[i] = v;
                    ids.round_bins.push(b);
                }
            }
            RoundTarget::Sparsity(kk) => {
                let w_ids = self.abs_ids.clone().ok_or(EncodeError::MissingAbsBlock)?;
                let (v_ids, alpha, _t) = encode_sparsity_round(
                    &mut self.prog,
                    &prev,
                    &w_ids,
                    *kk,
                    &format!("{k}"),
                    &mut self.meta.fillers,
                )?;
                next = v_ids;
                self.aux_ids = alpha.clone();
                ids.round_bins = alpha;
            }
        }
        self.meta.steps.push(ids);
        Ok(next)
    }

    fn encode_step(&mut self, spec: &StepSpec) -> Result<(), EncodeError> {
        let boxes = self.atom_boxes();
        let iterate_box = self.opts.iterate_box();
        let next = match spec {
            StepSpec::Round { target } => self.encode_round(target)?,
            StepSpec::TrustRegion { rho_k } => {
                let sym = build_trust_region(self.problem, *rho_k, &boxes, &iterate_box)?;
                self.encode_qp_step(&sym)?
            }
            StepSpec::PenalizedCcp { tau_k } => {
                let sym = build_ccp(self.problem, *tau_k, &boxes, &iterate_box)?;
                self.encode_qp_step(&sym)?
            }
            StepSpec::ProxLinear { rho } => {
                let sym = build_prox_linear(self.problem, *rho, &boxes, &iterate_box)?;
                self.encode_qp_step(&sym)?
            }
            StepSpec::Relax { lambda } => {
                let sym = build_relax(self.problem, *lambda, &boxes, &iterate_box)?;
                self.encode_qp_step(&sym)?
            }
            StepSpec::Polish => {
                let sym = build_polish(self.problem, &boxes, &iterate_box)?;
                self.encode_qp_step(&sym)?
            }
        };
        self.meta.z.push(next.clone());
        self.z_cur = Some(next);
        self.step_idx += 1;
        Ok(())
    }

    /// Linear-over-(vars, products) expression of a quadratic form at the
    /// given iterate variables.
    fn form_expr(&mut self, form: &QuadraticForm, z_ids: &[VarId]) -> LinExpr {
        let n = z_ids.len();
        let mut e = LinExpr::constant(form.constant);
        for a in 0..n {
            for b in 0..n {
                let coeff = 0.5 * form.p[(a, b)];
                if coeff != 0.0 {
                    let w = self.prog.add_product(z_ids[a], z_ids[b]);
                    e.push(w, coeff);
                }
            }
        }
        for i in 0..n {
            e.push(z_ids[i], form.c[i]);
            for j in 0..form.d() {
                let coeff = form.k[(i, j)];
                if coeff != 0.0 {
                    let w = self.prog.add_product(self.meta.x[j], z_ids[i]);
                    e.push(w, coeff);
                }
            }
        }
        for j in 0..form.d() {
            e.push(self.meta.x[j], form.lin_x[j]);
        }
        e.simplify();
        e
    }

    /// `p = |expr|` with a filler. When the objective pushes `p` up, a
    /// binary caps it from above so the encoding is exact either way.
    fn encode_abs(
        &mut self,
        expr: LinExpr,
        name: &str,
        adversarial_up: bool,
    ) -> Result<VarId, EncodeError> {
        let range = self.require_finite(self.expr_interval(&expr), name)?;
        let cap = range.hi.abs().max(range.lo.abs());
        let p = self.prog.add_var(name.to_string(), 0.0, cap);
        // p >= expr and p >= -expr
        let mut e = LinExpr::term(p, 1.0);
        e.add(&expr.scaled(-1.0));
        self.prog.add_con(0.0, f64::INFINITY, e);
        let mut e = LinExpr::term(p, 1.0);
        e.add(&expr);
        self.prog.add_con(0.0, f64::INFINITY, e);
        if adversarial_up {
            let beta = self.prog.add_binary(format!("{name}_sign"));
            // beta = 1 ==> p <= expr; beta = 0 ==> p <= -expr
            let mut e = LinExpr::term(p, 1.0);
            e.add(&expr.scaled(-1.0));
            self.prog.add_implication(beta, true, f64::NEG_INFINITY, 0.0, e);
            let mut e = LinExpr::term(p, 1.0);
            e.add(&expr);
            self.prog.add_implication(beta, false, f64::NEG_INFINITY, 0.0, e);
            let expr_c = expr.clone();
            self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                vals[beta.0] = if expr_c.eval(vals) >= 0.0 { 1.0 } else { 0.0 };
            }));
        }
        let expr_c = expr;
        self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
            vals[p.0] = expr_c.eval(vals).abs();
        }));
        Ok(p)
    }

    /// Full objective value f(z, x) at the given iterate variables,
    /// including the composite term.
    fn objective_expr(&mut self, z_ids: &[VarId], tag: &str, adversarial_up: bool) -> Result<LinExpr, EncodeError> {
        let obj = self.problem.objective.clone();
        let mut e = self.form_expr(&obj, z_ids);
        if let Some(comp) = &self.problem.composite {
            let weight = comp.weight;
            let pieces = comp.pieces.clone();
            for (i, piece) in pieces.iter().enumerate() {
                let q = self.form_expr(piece, z_ids);
                let p = self.encode_abs(q, &format!("abs_{tag}[{i}]"), adversarial_up)?;
                e.push(p, weight);
            }
        }
        Ok(e)
    }

    /// Declare z* constrained to the feasible set Omega(x), including the
    /// discrete constraint.
    fn encode_zstar(&mut self) -> Result<Vec<VarId>, EncodeError> {
        let n = self.problem.n;
        let box_ = self.opts.iterate_box();
        let mut ids = Vec::with_capacity(n);
        let binary_coords: Vec<usize> = match &self.problem.discrete {
            Some(DiscreteConstraint::Binary(idx)) => idx.clone(),
            _ => vec![],
        };
        for i in 0..n {
            let id = if binary_coords.contains(&i) {
                self.prog.add_binary(format!("zstar[{i}]"))
            } else {
                let b = self.require_finite(box_[i], &format!("zstar[{i}]"))?;
                self.prog.add_var(format!("zstar[{i}]"), b.lo, b.hi)
            };
            ids.push(id);
        }
        match &self.problem.discrete {
            Some(DiscreteConstraint::PlusMinusOne(idx)) => {
                for &i in idx {
                    let b = self.prog.add_binary(format!("bstar[{i}]"));
                    self.prog.set_bound(ids[i], Interval::new(-1.0, 1.0));
                    let mut e = LinExpr::term(ids[i], 1.0);
                    e.push(b, -2.0);
                    e.constant = 1.0;
                    self.prog.add_eq(e);
                    let z = ids[i];
                    self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                        vals[b.0] = if vals[z.0] >= 0.0 { 1.0 } else { 0.0 };
                    }));
                }
            }
            Some(DiscreteConstraint::Sparsity(k)) => {
                let mut alphas = Vec::with_capacity(n);
                let mut sum = LinExpr::new();
                for (i, &z) in ids.iter().enumerate() {
                    let a = self.prog.add_binary(format!("astar[{i}]"));
                    sum.push(a, 1.0);
                    // alpha = 0 ==> z_i = 0
                    self.prog
                        .add_implication(a, false, 0.0, 0.0, LinExpr::term(z, 1.0));
                    alphas.push(a);
                }
                self.prog.add_con(*k as f64, *k as f64, sum);
                let kk = *k;
                let zc = ids.clone();
                self.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
                    // support first, then pad with lowest indices to reach
                    // k; polished zeros are tiny, not exact
                    const ZERO_TOL: f64 = 1e-9;
                    let mut count = 0usize;
                    for (a, z) in alphas.iter().zip(&zc) {
                        let on = vals[z.0].abs() > ZERO_TOL;
                        vals[a.0] = if on { 1.0 } else { 0.0 };
                        count += usize::from(on);
                    }
                    for (a, z) in alphas.iter().zip(&zc) {
                        if count >= kk {
                            break;
                        }
                        if vals[z.0].abs() <= ZERO_TOL && vals[a.0] == 0.0 {
                            vals[a.0] = 1.0;
                            count += 1;
                        }
                    }
                }));
            }
            _ => {}
        }
        // z* in Omega(x): quadratic inequalities and affine equalities
        let ineqs = self.problem.ineq.clone();
        for g in &ineqs {
            let e = self.form_expr(g, &ids);
            self.prog.add_le(e, 0.0);
        }
        let eqs = self.problem.eq.clone();
        for h in &eqs {
            let mut e = LinExpr::constant(h.b);
            for (i, &z) in ids.iter().enumerate() {
                e.push(z, h.a_z[i]);
            }
            for j in 0..self.problem.d {
                e.push(self.meta.x[j], h.a_x[j]);
            }
            self.prog.add_eq(e);
        }
        self.meta.z_star = ids.clone();
        Ok(ids)
    }

    fn finish(mut self, objective: LinExpr) -> Result<Encoded, EncodeError> {
        self.prog.objective = objective;
        self.prog.objective.simplify();
        self.prog.check_bounded()?;
        // big-M derivability check up front, not at emit time
        self.prog.expand_implications()?;
        Ok(Encoded { prog: self.prog, meta: self.meta })
    }
}

/// Proposition-1 rounding of one coordinate: returns the binary v with
/// `v - u <= 1/2` and `u - v <= 1/2`. The bounds of `u` must lie in
/// [0, 1].
pub fn encode_binary_round_coord(
    prog: &mut VerificationProgram,
    u: VarId,
    name: &str,
) -> Result<VarId, EncodeError> {
    let b = prog.bound(u);
    let tol = 1e-9;
    if b.lo < -tol || b.hi > 1.0 + tol {
        return Err(EncodeError::RoundBoundsExceedUnitBox {
            index: u.0,
            lo: b.lo,
            hi: b.hi,
        });
    }
    let v = prog.add_binary(name.to_string());
    let mut e = LinExpr::term(v, 1.0);
    e.push(u, -1.0);
    prog.add_con(-0.5, 0.5, e);
    Ok(v)
}

/// Proposition-2 sparsity rounding: keep the k entries of largest
/// magnitude. `w_vars` carry |u| (from the relax step's l1 epigraph).
/// Returns (v ids, alpha ids, threshold id).
pub fn encode_sparsity_round(
    prog: &mut VerificationProgram,
    u_vars: &[VarId],
    w_vars: &[VarId],
    k: usize,
    tag: &str,
    fillers: &mut Vec<Filler>,
) -> Result<(Vec<VarId>, Vec<VarId>, VarId), EncodeError> {
    let n = u_vars.len();
    assert_eq!(w_vars.len(), n, "|u| block must cover every coordinate");
    let w_cap = w_vars
        .iter()
        .map(|&w| prog.bound(w).hi)
        .fold(0.0f64, f64::max);
    if !w_cap.is_finite() {
        return Err(EncodeError::InfiniteBound { name: format!("round_threshold_t{tag}") });
    }
    let t = prog.add_var(format!("round_threshold_t{tag}"), 0.0, w_cap);
    let mut alphas = Vec::with_capacity(n);
    let mut v_ids = Vec::with_capacity(n);
    let mut sum = LinExpr::new();
    for i in 0..n {
        let a = prog.add_binary(format!("alpha{tag}[{i}]"));
        sum.push(a, 1.0);
        let ub = prog.bound(u_vars[i]).hull(&Interval::ZERO);
        let v = prog.add_var(format!("z{tag}v[{i}]"), ub.lo, ub.hi);
        // alpha = 0 ==> w_i <= t;  alpha = 1 ==> w_i >= t
        let mut e = LinExpr::term(w_vars[i], 1.0);
        e.push(t, -1.0);
        prog.add_implication(a, false, f64::NEG_INFINITY, 0.0, e.clone());
        prog.add_implication(a, true, 0.0, f64::INFINITY, e);
        // alpha = 0 ==> v_i = 0;  alpha = 1 ==> v_i = u_i
        prog.add_implication(a, false, 0.0, 0.0, LinExpr::term(v, 1.0));
        let mut e = LinExpr::term(v, 1.0);
        e.push(u_vars[i], -1.0);
        prog.add_implication(a, true, 0.0, 0.0, e);
        alphas.push(a);
        v_ids.push(v);
    }
    prog.add_con(k as f64, k as f64, sum);
    let w_ids: Vec<VarId> = w_vars.to_vec();
    fillers.push(Box::new(move |vals: &mut Vec<f64>| {
        let mut ws: Vec<f64> = w_ids.iter().map(|w| vals[w.0]).collect();
        ws.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals[t.0] = if k == 0 {
            ws.first().copied().unwrap_or(0.0)
        } else {
            ws[k - 1]
        };
    }));
    Ok((v_ids, alphas, t))
}

fn walk_schedule<'a>(
    problem: &'a ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &'a ParameterSet,
    opts: &'a EncodeOptions,
    metric: PerformanceMetric,
    upto: usize,
) -> Result<Enc<'a>, EncodeError> {
    let mut enc = Enc::new(problem, pset, opts, metric)?;
    if let Some(z0) = schedule.init.point() {
        enc.set_initial(z0);
    }
    for spec in schedule.steps.iter().take(upto) {
        enc.encode_step(spec)?;
    }
    Ok(enc)
}

/// Worst-case suboptimality program: maximize f(z^K, x) - f(z*, x) with z*
/// constrained to feasibility (tight by the relaxation argument: the true
/// optimum is feasible and maximization picks the best reference).
pub fn build_suboptimality(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    opts: &EncodeOptions,
) -> Result<Encoded, EncodeError> {
    let mut enc = walk_schedule(
        problem,
        schedule,
        pset,
        opts,
        PerformanceMetric::Suboptimality,
        schedule.k(),
    )?;
    let z_k = enc
        .meta
        .z
        .last()
        .cloned()
        .ok_or(EncodeError::MissingInitialPoint { index: 0 })?;
    let f_final = enc.objective_expr(&z_k, "final", true)?;
    let zstar = enc.encode_zstar()?;
    let f_star = enc.objective_expr(&zstar, "star", false)?;
    let mut obj = f_final;
    obj.add(&f_star.scaled(-1.0));
    enc.finish(obj)
}

/// Worst-case squared constraint violation of the final iterate.
pub fn build_violation(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    opts: &EncodeOptions,
) -> Result<Encoded, EncodeError> {
    let mut enc = walk_schedule(
        problem,
        schedule,
        pset,
        opts,
        PerformanceMetric::ViolationSquaredL2,
        schedule.k(),
    )?;
    let z_k = enc
        .meta
        .z
        .last()
        .cloned()
        .ok_or(EncodeError::MissingInitialPoint { index: 0 })?;
    let mut obj = LinExpr::new();
    let ineqs = enc.problem.ineq.clone();
    for (i, g) in ineqs.iter().enumerate() {
        let expr = enc.form_expr(g, &z_k);
        let range = enc.require_finite(enc.expr_interval(&expr), &format!("viol_p[{i}]"))?;
        let p = enc.prog.add_var(format!("viol_p[{i}]"), 0.0, range.hi.max(0.0));
        // p >= g(z^K, x)
        let mut e = LinExpr::term(p, 1.0);
        e.add(&expr.scaled(-1.0));
        enc.prog.add_con(0.0, f64::INFINITY, e.clone());
        // exactness cap: beta = 1 ==> p <= g; beta = 0 ==> p <= 0
        let beta = enc.prog.add_binary(format!("viol_b[{i}]"));
        enc.prog.add_implication(beta, true, f64::NEG_INFINITY, 0.0, e.scaled(1.0));
        enc.prog
            .add_implication(beta, false, f64::NEG_INFINITY, 0.0, LinExpr::term(p, 1.0));
        let expr_c = expr;
        enc.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
            let g = expr_c.eval(vals);
            vals[p.0] = g.max(0.0);
            vals[beta.0] = if g > 0.0 { 1.0 } else { 0.0 };
        }));
        let sq = enc.prog.add_product(p, p);
        obj.push(sq, 1.0);
    }
    let eqs = enc.problem.eq.clone();
    for (j, h) in eqs.iter().enumerate() {
        let mut expr = LinExpr::constant(h.b);
        for (i, &z) in z_k.iter().enumerate() {
            expr.push(z, h.a_z[i]);
        }
        for jx in 0..enc.problem.d {
            expr.push(enc.meta.x[jx], h.a_x[jx]);
        }
        let range = enc.require_finite(enc.expr_interval(&expr), &format!("viol_h[{j}]"))?;
        let q = enc.prog.add_var(format!("viol_h[{j}]"), range.lo, range.hi);
        let mut e = LinExpr::term(q, 1.0);
        e.add(&expr.scaled(-1.0));
        enc.prog.add_eq(e);
        let expr_c = expr;
        enc.meta.fillers.push(Box::new(move |vals: &mut Vec<f64>| {
            vals[q.0] = expr_c.eval(vals);
        }));
        let sq = enc.prog.add_product(q, q);
        obj.push(sq, 1.0);
    }
    enc.finish(obj)
}

/// Final-step feasibility program: steps 0..K-2 run normally; the final
/// step contributes only its constraint block through a normalized Farkas
/// certificate. The compiled value gamma is <= 0 exactly when the final
/// subproblem is feasible for every reachable (z^{K-1}, x).
pub fn build_farkas(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
    opts: &EncodeOptions,
) -> Result<Encoded, EncodeError> {
    let kk = schedule.k();
    if kk == 0 {
        return Err(EncodeError::FarkasEmptySchedule);
    }
    let mut enc = walk_schedule(
        problem,
        schedule,
        pset,
        opts,
        PerformanceMetric::SubproblemFeasibility,
        kk - 1,
    )?;
    // symbolic constraint block of the final step
    let boxes = enc.atom_boxes();
    let iterate_box = enc.opts.iterate_box();
    let sym = match &schedule.steps[kk - 1] {
        StepSpec::Round { .. } => return Err(EncodeError::FarkasFinalStepNotAffine),
        StepSpec::TrustRegion { rho_k } => build_trust_region(problem, *rho_k, &boxes, &iterate_box)?,
        StepSpec::PenalizedCcp { tau_k } => build_ccp(problem, *tau_k, &boxes, &iterate_box)?,
        StepSpec::ProxLinear { rho } => build_prox_linear(problem, *rho, &boxes, &iterate_box)?,
        StepSpec::Relax { lambda } => build_relax(problem, *lambda, &boxes, &iterate_box)?,
        StepSpec::Polish => build_polish(problem, &boxes, &iterate_box)?,
    };
    if sym.rows.iter().any(|r| !r.rhs.is_affine()) {
        return Err(EncodeError::FarkasFinalStepNotAffine);
    }
    let m = sym.rows.len();
    let y: Vec<VarId> = (0..m)
        .map(|i| enc.prog.add_var(format!("yK[{i}]"), 0.0, 1.0))
        .collect();
    // A' y = 0
    for j in 0..sym.n_u {
        let mut e = LinExpr::new();
        for (i, row) in sym.rows.iter().enumerate() {
            e.add(&enc.aff_times(&row.coeffs[j], y[i]));
        }
        enc.prog.add_eq(e);
    }
    // normalization 1' y <= 1 keeps gamma finite; only its sign matters
    let mut sum = LinExpr::new();
    for &yi in &y {
        sum.push(yi, 1.0);
    }
    enc.prog.add_le(sum, 1.0);
    // gamma = -b' y
    let mut obj = LinExpr::new();
    for (i, row) in sym.rows.iter().enumerate() {
        let term = enc.aff_times(&row.rhs.lin, y[i]);
        obj.add(&term.scaled(-1.0));
    }
    enc.meta.farkas_y = y;
    enc.finish(obj)
}

/// Extend a forward trace (plus optional reference optimum) to a full
/// assignment of the compiled program. The result is feasible whenever the
/// trace came from the same configuration; `check_assignment` verifies it.
pub fn assignment_from_trace(
    encoded: &Encoded,
    x: &DVector<f64>,
    trace: &IterateTrace,
    z_star: Option<&DVector<f64>>,
) -> Vec<f64> {
    let prog = &encoded.prog;
    let meta = &encoded.meta;
    let mut vals = vec![0.0; prog.n_vars()];
    // default every variable to a bound-feasible point
    for (i, v) in prog.vars.iter().enumerate() {
        if v.lo.is_finite() && v.hi.is_finite() {
            vals[i] = if v.lo <= 0.0 && 0.0 <= v.hi { 0.0 } else { v.lo };
        }
    }
    for (id, &xv) in meta.x.iter().zip(x.iter()) {
        vals[id.0] = xv;
    }
    for (ids, z) in meta.z.iter().zip(&trace.iterates) {
        for (id, &zv) in ids.iter().zip(z.iter()) {
            vals[id.0] = zv;
        }
    }
    for (step_ids, art) in meta.steps.iter().zip(&trace.steps) {
        if let Some((_, sol)) = &art.qp {
            for (id, &v) in step_ids.u.iter().zip(sol.u.iter()) {
                vals[id.0] = v;
            }
            for (id, &v) in step_ids.s.iter().zip(sol.s.iter()) {
                vals[id.0] = v.max(0.0);
            }
            for (id, &v) in step_ids.y.iter().zip(sol.y.iter()) {
                vals[id.0] = v.max(0.0);
            }
        }
        // sparsity selection mask: alpha binaries straight from the trace
        if !art.aux.is_empty() && !step_ids.round_bins.is_empty() {
            for (id, &v) in step_ids.round_bins.iter().zip(art.aux.iter()) {
                vals[id.0] = v;
            }
        }
    }
    if let Some(zs) = z_star {
        for (id, &v) in meta.z_star.iter().zip(zs.iter()) {
            vals[id.0] = v;
        }
    }
    // products feed fillers (quadratic expressions), fillers feed products
    // (squares of derived vars); two passes settle both
    let product_pass = |vals: &mut Vec<f64>| {
        for p in &prog.products {
            vals[p.w.0] = vals[p.a.0] * vals[p.b.0];
        }
    };
    product_pass(&mut vals);
    for filler in &meta.fillers {
        filler(&mut vals);
    }
    product_pass(&mut vals);
    // complementarity products are pinned to exactly zero; numerically
    // tiny s*y values from the forward solver round down
    for &ci in &prog.comp_pairs {
        vals[prog.products[ci].w.0] = 0.0;
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        AlgorithmSchedule, CompositeTerm, InitialSet, ParameterSet, QuadraticForm, RoundTarget,
    };
    use crate::scprun::run_schedule;
    use nalgebra::{DMatrix, DVector};

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    const SOUND_TOL: f64 = 1e-6;

    fn assert_sound(
        problem: &ParametricProblem,
        schedule: &AlgorithmSchedule,
        pset: &ParameterSet,
        opts: &EncodeOptions,
        encoded: &Encoded,
        samples: u64,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1234);
        let _ = opts;
        for _ in 0..samples {
            let x = crate::scprun::sample_parameter(pset, &mut rng);
            let trace = run_schedule(problem, schedule, &x).expect("forward run succeeds");
            let zs = trace.final_iterate().clone();
            let z_star = if encoded.meta.z_star.is_empty() { None } else { Some(&zs) };
            let vals = assignment_from_trace(encoded, &x, &trace, z_star);
            let violations = encoded.prog.check_assignment(&vals, SOUND_TOL);
            assert!(
                violations.is_empty(),
                "forward trace infeasible in encoding at x = {x:?}:\n{}",
                violations.join("\n")
            );
        }
    }

    #[test]
    fn soundness_trust_region_box_qp() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let problem = crate::model::tests::box_qp(p);
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::TrustRegion { rho_k: 0.5 },
                StepSpec::TrustRegion { rho_k: 0.5 },
            ],
            InitialSet::Cold(DVector::zeros(2)),
        );
        let pset = ParameterSet::box_set(dvec(&[2.0, 2.0]), dvec(&[4.0, 4.0]));
        let opts = EncodeOptions::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let encoded = build_violation(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
        // suboptimality program too, with z* = final iterate (feasible)
        let encoded = build_suboptimality(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
    }

    fn knapsack_problem(n: usize, cap: f64) -> ParametricProblem {
        let mut ineq = Vec::new();
        for i in 0..n {
            let mut p = DMatrix::zeros(n, n);
            p[(i, i)] = -2.0;
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            ineq.push(QuadraticForm::new(p, DMatrix::zeros(n, n), c));
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            ineq.push(
                QuadraticForm::linear(n, DMatrix::zeros(n, n), c)
                    .with_offset(DVector::zeros(n), -1.0),
            );
            let mut c = DVector::zeros(n);
            c[i] = -1.0;
            ineq.push(QuadraticForm::linear(n, DMatrix::zeros(n, n), c));
        }
        ineq.push(
            QuadraticForm::linear(n, DMatrix::zeros(n, n), DVector::from_element(n, 1.0))
                .with_offset(DVector::zeros(n), -cap),
        );
        ParametricProblem {
            n,
            d: n,
            objective: QuadraticForm::linear(n, -DMatrix::identity(n, n), DVector::zeros(n)),
            ineq,
            eq: vec![],
            discrete: None,
            composite: None,
        }
    }

    #[test]
    fn soundness_ccp_knapsack() {
        let problem = knapsack_problem(3, 1.5);
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::PenalizedCcp { tau_k: 1.0 },
                StepSpec::PenalizedCcp { tau_k: 2.0 },
            ],
            InitialSet::Cold(DVector::from_element(3, 0.5)),
        );
        let pset = ParameterSet::box_set(dvec(&[1.0, 1.0, 1.0]), dvec(&[6.0, 6.0, 6.0]));
        let opts = EncodeOptions::new(vec![0.0; 3], vec![1.0; 3]);
        let encoded = build_violation(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
    }

    fn binary_knapsack(n: usize, cap: f64) -> ParametricProblem {
        // binary constraint carried in `discrete`; box rows for the relax QP
        let mut problem = knapsack_problem(n, cap);
        problem.ineq.retain(|g| g.p.amax() == 0.0);
        problem.discrete = Some(DiscreteConstraint::Binary((0..n).collect()));
        problem
    }

    #[test]
    fn soundness_relax_round_polish_binary() {
        let n = 3;
        let mut problem = binary_knapsack(n, n as f64);
        // strictly convex objective: the relaxed iterate sits at x, so the
        // round step is non-trivial, while the slack capacity row keeps the
        // pinned polish step feasible for every rounding
        problem.objective = QuadraticForm::new(
            DMatrix::identity(n, n),
            -DMatrix::identity(n, n),
            DVector::zeros(n),
        );
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::Relax { lambda: 1.0 },
                StepSpec::Round { target: RoundTarget::Binary((0..n).collect()) },
                StepSpec::Polish,
            ],
            InitialSet::Omitted,
        );
        let pset = ParameterSet::box_set(dvec(&[0.1, 0.1, 0.1]), dvec(&[0.9, 0.9, 0.9]));
        let opts = EncodeOptions::new(vec![0.0; n], vec![1.0; n]);
        let encoded = build_violation(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
        let encoded = build_suboptimality(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
    }

    fn sparse_ls_problem(n: usize) -> ParametricProblem {
        // min 1/2 |z - x|^2 with ||z||_0 <= 1: P = I, K = -I
        ParametricProblem {
            n,
            d: n,
            objective: QuadraticForm::new(
                DMatrix::identity(n, n),
                -DMatrix::identity(n, n),
                DVector::zeros(n),
            ),
            ineq: vec![],
            eq: vec![],
            discrete: Some(DiscreteConstraint::Sparsity(1)),
            composite: None,
        }
    }

    #[test]
    fn soundness_sparsity_round() {
        let n = 3;
        let problem = sparse_ls_problem(n);
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::Relax { lambda: 0.1 },
                StepSpec::Round { target: RoundTarget::Sparsity(1) },
                StepSpec::Polish,
            ],
            InitialSet::Omitted,
        );
        let pset = ParameterSet::box_set(dvec(&[-2.0, -2.0, -2.0]), dvec(&[2.0, 2.0, 2.0]));
        let opts = EncodeOptions::new(vec![-3.0; n], vec![3.0; n]);
        let encoded = build_suboptimality(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 8);
    }

    #[test]
    fn soundness_prox_linear() {
        // phase-retrieval style: min (1/2) sum |(a_i' z)^2 - x_i|
        let n = 2;
        let d = 2;
        let rows = [dvec(&[1.0, 0.3]), dvec(&[-0.2, 1.0])];
        let mut pieces = Vec::new();
        for (i, a) in rows.iter().enumerate() {
            // (a' z)^2 - x_i: P = 2 a a', K row -e_i
            let p = 2.0 * a * a.transpose();
            let mut k = DMatrix::zeros(n, d);
            k[(0, i)] = 0.0;
            let mut piece = QuadraticForm::new(p, k, DVector::zeros(n));
            let mut lin_x = DVector::zeros(d);
            lin_x[i] = -1.0;
            piece = piece.with_offset(lin_x, 0.0);
            pieces.push(piece);
        }
        let problem = ParametricProblem {
            n,
            d,
            objective: QuadraticForm::linear(n, DMatrix::zeros(n, d), DVector::zeros(n)),
            ineq: vec![],
            eq: vec![],
            discrete: None,
            composite: Some(CompositeTerm { weight: 0.5, pieces }),
        };
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::ProxLinear { rho: 1.0 }, StepSpec::ProxLinear { rho: 1.0 }],
            InitialSet::Cold(dvec(&[0.5, 0.5])),
        );
        let pset = ParameterSet::box_set(dvec(&[0.5, 0.5]), dvec(&[2.0, 2.0]));
        let opts = EncodeOptions::new(vec![-3.0; n], vec![3.0; n]);
        let encoded = build_suboptimality(&problem, &schedule, &pset, &opts).unwrap();
        assert_sound(&problem, &schedule, &pset, &opts, &encoded, 6);
    }

    #[test]
    fn soundness_inexact_models() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let problem = crate::model::tests::box_qp(p);
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::TrustRegion { rho_k: 0.5 }],
            InitialSet::Cold(DVector::zeros(2)),
        );
        let pset = ParameterSet::box_set(dvec(&[2.0, 2.0]), dvec(&[4.0, 4.0]));
        for inexact in [
            InexactnessModel::DistanceToOpt { eps: 0.0 },
            InexactnessModel::DistanceToOpt { eps: 0.01 },
            InexactnessModel::KktResidual { eps: 0.01 },
        ] {
            let opts =
                EncodeOptions::new(vec![-1.0, -1.0], vec![1.0, 1.0]).with_inexact(inexact);
            let encoded = build_violation(&problem, &schedule, &pset, &opts).unwrap();
            assert_sound(&problem, &schedule, &pset, &opts, &encoded, 5);
        }
    }

    #[test]
    fn binary_round_set_equivalence_small() {
        // Prop 1 rows: v binary with |v - u| <= 1/2
        for (u_val, allowed) in [
            (0.3, vec![0.0]),
            (0.5, vec![0.0, 1.0]),
            (0.9, vec![1.0]),
        ] {
            let mut prog = VerificationProgram::new();
            let u = prog.add_constant("u", u_val);
            let v = encode_binary_round_coord(&mut prog, u, "v").unwrap();
            let feasible: Vec<f64> = [0.0, 1.0]
                .into_iter()
                .filter(|&vv| {
                    let vals = vec![u_val, vv];
                    prog.check_assignment(&vals, 1e-9).is_empty()
                })
                .collect();
            assert_eq!(feasible, allowed, "u = {u_val}");
            let _ = v;
        }
    }

    #[test]
    fn binary_round_rejects_out_of_unit_bounds() {
        let mut prog = VerificationProgram::new();
        let u = prog.add_var("u", -0.5, 1.0);
        assert!(matches!(
            encode_binary_round_coord(&mut prog, u, "v"),
            Err(EncodeError::RoundBoundsExceedUnitBox { .. })
        ));
    }

    #[test]
    fn sparsity_round_set_equivalence_small() {
        // u = (2, 2, 0), k = 1: both single-coordinate selections feasible,
        // nothing else.
        let u_vals = [2.0, 2.0, 0.0];
        let k = 1;
        let build = || {
            let mut prog = VerificationProgram::new();
            let mut fillers: Vec<Filler> = Vec::new();
            let u: Vec<VarId> = u_vals
                .iter()
                .enumerate()
                .map(|(i, &v)| prog.add_constant(format!("u[{i}]"), v))
                .collect();
            let w: Vec<VarId> = u_vals
                .iter()
                .enumerate()
                .map(|(i, &v)| prog.add_constant(format!("w[{i}]"), v.abs()))
                .collect();
            let (v_ids, alphas, t) =
                encode_sparsity_round(&mut prog, &u, &w, k, "0", &mut fillers).unwrap();
            (prog, v_ids, alphas, t)
        };
        let (prog, v_ids, alphas, t) = build();
        // enumerate alpha patterns and check which v vectors are feasible
        let mut feasible_v = Vec::new();
        for pat in 0..8u32 {
            let a: Vec<f64> = (0..3).map(|i| f64::from((pat >> i) & 1)).collect();
            if a.iter().sum::<f64>() as usize != k {
                continue;
            }
            // v determined by alpha; threshold t must separate magnitudes
            let v: Vec<f64> = (0..3)
                .map(|i| if a[i] == 1.0 { u_vals[i] } else { 0.0 })
                .collect();
            for t_val in [0.0, 1.0, 2.0, 2.5] {
                let mut vals = vec![0.0; prog.n_vars()];
                for i in 0..3 {
                    vals[i] = u_vals[i]; // u constants
                    vals[3 + i] = u_vals[i].abs(); // w constants
                }
                vals[t.0] = t_val;
                for i in 0..3 {
                    vals[alphas[i].0] = a[i];
                    vals[v_ids[i].0] = v[i];
                }
                if prog.check_assignment(&vals, 1e-9).is_empty() {
                    feasible_v.push(v.clone());
                    break;
                }
            }
        }
        feasible_v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(feasible_v, vec![vec![0.0, 2.0, 0.0], vec![2.0, 0.0, 0.0]]);
    }

    #[test]
    fn farkas_reachable_infeasible_final_step() {
        // final polish constraints u <= 0 and -u <= -1 are jointly
        // infeasible; gamma from the certificate y = (1/2, 1/2) is 1/2
        let n = 1;
        let mut ineq = Vec::new();
        let mut c = DVector::zeros(n);
        c[0] = 1.0;
        ineq.push(QuadraticForm::linear(n, DMatrix::zeros(n, 1), c.clone()));
        c[0] = -1.0;
        ineq.push(
            QuadraticForm::linear(n, DMatrix::zeros(n, 1), c)
                .with_offset(DVector::zeros(1), 1.0),
        );
        let problem = ParametricProblem {
            n,
            d: 1,
            objective: QuadraticForm::new(
                DMatrix::identity(1, 1),
                DMatrix::zeros(1, 1),
                DVector::zeros(1),
            ),
            ineq,
            eq: vec![],
            discrete: Some(DiscreteConstraint::Binary(vec![])),
            composite: None,
        };
        let schedule = AlgorithmSchedule::new(
            vec![StepSpec::Polish],
            InitialSet::Cold(DVector::zeros(1)),
        );
        let pset = ParameterSet::box_set(dvec(&[0.0]), dvec(&[0.0]));
        let opts = EncodeOptions::new(vec![-2.0], vec![2.0]);
        let encoded = build_farkas(&problem, &schedule, &pset, &opts).unwrap();
        assert_eq!(encoded.meta.farkas_y.len(), 2);
        // assignment: y = (1/2, 1/2) satisfies A'y = 1/2 - 1/2 = 0 and
        // 1'y = 1; objective -b'y = -(0 - 1)/2 = 1/2
        let mut vals = vec![0.0; encoded.prog.n_vars()];
        for (i, v) in encoded.prog.vars.iter().enumerate() {
            if v.lo.is_finite() {
                vals[i] = if v.lo <= 0.0 && 0.0 <= v.hi { 0.0 } else { v.lo };
            }
        }
        for &yid in &encoded.meta.farkas_y {
            vals[yid.0] = 0.5;
        }
        for p in &encoded.prog.products {
            vals[p.w.0] = vals[p.a.0] * vals[p.b.0];
        }
        let violations = encoded.prog.check_assignment(&vals, 1e-9);
        assert!(violations.is_empty(), "{}", violations.join("\n"));
        approx::assert_relative_eq!(encoded.prog.objective_value(&vals), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn farkas_zero_certificate_always_feasible() {
        // trace assignment with y^K = 0 gives gamma = 0 for any program
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let problem = crate::model::tests::box_qp(p);
        let schedule = AlgorithmSchedule::new(
            vec![
                StepSpec::TrustRegion { rho_k: 0.5 },
                StepSpec::TrustRegion { rho_k: 0.5 },
            ],
            InitialSet::Cold(DVector::zeros(2)),
        );
        let pset = ParameterSet::box_set(dvec(&[2.0, 2.0]), dvec(&[4.0, 4.0]));
        let opts = EncodeOptions::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let encoded = build_farkas(&problem, &schedule, &pset, &opts).unwrap();
        // forward trace of the prefix (K-1 steps) extends to feasibility
        let prefix = schedule.prefix(1);
        let x = dvec(&[3.0, 2.5]);
        let trace = run_schedule(&problem, &prefix, &x).unwrap();
        let vals = assignment_from_trace(&encoded, &x, &trace, None);
        let violations = encoded.prog.check_assignment(&vals, SOUND_TOL);
        assert!(violations.is_empty(), "{}", violations.join("\n"));
        approx::assert_relative_eq!(encoded.prog.objective_value(&vals), 0.0);
    }
}
