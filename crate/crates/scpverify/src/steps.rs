//! Symbolic construction of the per-iteration convex subproblems.
//!
//! Every QP-valued SCP step (trust-region, penalized convex-concave,
//! prox-linear, relax, polish) is built here as a [`SymQp`]: a standard-form
//! QP whose data is affine (rows) or quadratic (right-hand sides, costs) in
//! the *atoms* `x` (problem parameter) and `z^k` (previous iterate). The
//! forward runner instantiates a `SymQp` at concrete atom values and solves
//! it with `qpcore`; the encoder maps atoms to decision variables of the
//! verification program and writes the KKT conditions. Both paths share one
//! construction, so a forward trace is a feasible point of the compiled
//! verification program by construction.
//!
//! Non-convex quadratics are DC-split through an eigendecomposition
//! `P = P_plus - P_minus` (both PSD); the concave part is linearized at
//! `z^k`. Constraints whose convex quadratic part is nonzero cannot be
//! written in the linear-constraint standard form and are rejected.

use crate::interval::Interval;
use crate::model::{
    CompositeTerm, DiscreteConstraint, ParametricProblem, QuadraticForm, RoundTarget,
};
use crate::qpcore::StandardQp;
use nalgebra::{DMatrix, DVector};

/// Tolerance below which an eigenvalue is treated as zero in DC splits.
const EIG_TOL: f64 = 1e-10;

/// Symbol appearing in step data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    /// Parameter coordinate `x_j`.
    X(usize),
    /// Previous-iterate coordinate `z^k_i`.
    Prev(usize),
    /// Auxiliary output of the previous step (sparsity-round selection mask).
    PrevAux(usize),
}

/// Affine expression in atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Aff {
    pub constant: f64,
    pub terms: Vec<(Atom, f64)>,
}

impl Aff {
    pub fn zero() -> Self {
        Aff { constant: 0.0, terms: vec![] }
    }

    pub fn constant(v: f64) -> Self {
        Aff { constant: v, terms: vec![] }
    }

    pub fn term(atom: Atom, coeff: f64) -> Self {
        Aff { constant: 0.0, terms: vec![(atom, coeff)] }
    }

    pub fn push(&mut self, atom: Atom, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((atom, coeff));
        }
    }

    pub fn add(&mut self, other: &Aff) {
        self.constant += other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn scaled(&self, a: f64) -> Aff {
        Aff {
            constant: a * self.constant,
            terms: self.terms.iter().map(|(at, c)| (*at, a * c)).collect(),
        }
    }

    /// Merge duplicate atoms and drop zero coefficients.
    pub fn simplify(&mut self) {
        self.terms.sort_by_key(|(a, _)| *a);
        let mut merged: Vec<(Atom, f64)> = Vec::with_capacity(self.terms.len());
        for &(a, c) in &self.terms {
            match merged.last_mut() {
                Some((la, lc)) if *la == a => *lc += c,
                _ => merged.push((a, c)),
            }
        }
        merged.retain(|(_, c)| c.abs() > 0.0);
        self.terms = merged;
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, vals: &AtomValues) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|(a, c)| c * vals.get(*a))
                .sum::<f64>()
    }

    pub fn interval(&self, boxes: &AtomBoxes) -> Interval {
        let mut acc = Interval::point(self.constant);
        for (a, c) in &self.terms {
            acc = acc + boxes.get(*a).scale(*c);
        }
        acc
    }
}

/// Affine-plus-quadratic expression in atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct QAff {
    pub lin: Aff,
    pub quad: Vec<(Atom, Atom, f64)>,
}

impl QAff {
    pub fn zero() -> Self {
        QAff { lin: Aff::zero(), quad: vec![] }
    }

    pub fn from_aff(lin: Aff) -> Self {
        QAff { lin, quad: vec![] }
    }

    pub fn push_quad(&mut self, a: Atom, b: Atom, coeff: f64) {
        if coeff != 0.0 {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            self.quad.push((a, b, coeff));
        }
    }

    pub fn simplify(&mut self) {
        self.lin.simplify();
        self.quad.sort_by_key(|(a, b, _)| (*a, *b));
        let mut merged: Vec<(Atom, Atom, f64)> = Vec::with_capacity(self.quad.len());
        for &(a, b, c) in &self.quad {
            match merged.last_mut() {
                Some((la, lb, lc)) if *la == a && *lb == b => *lc += c,
                _ => merged.push((a, b, c)),
            }
        }
        merged.retain(|(_, _, c)| c.abs() > 0.0);
        self.quad = merged;
    }

    pub fn is_affine(&self) -> bool {
        self.quad.is_empty()
    }

    pub fn eval(&self, vals: &AtomValues) -> f64 {
        self.lin.eval(vals)
            + self
                .quad
                .iter()
                .map(|(a, b, c)| c * vals.get(*a) * vals.get(*b))
                .sum::<f64>()
    }

    pub fn interval(&self, boxes: &AtomBoxes) -> Interval {
        let mut acc = self.lin.interval(boxes);
        for (a, b, c) in &self.quad {
            let prod = if a == b {
                boxes.get(*a).square()
            } else {
                boxes.get(*a) * boxes.get(*b)
            };
            acc = acc + prod.scale(*c);
        }
        acc
    }
}

/// Concrete atom values for forward instantiation.
pub struct AtomValues<'a> {
    pub x: &'a DVector<f64>,
    pub prev: Option<&'a DVector<f64>>,
    pub aux: &'a [f64],
}

impl AtomValues<'_> {
    pub fn get(&self, atom: Atom) -> f64 {
        match atom {
            Atom::X(j) => self.x[j],
            Atom::Prev(i) => self.prev.expect("step has no previous iterate")[i],
            Atom::PrevAux(i) => self.aux[i],
        }
    }
}

/// Interval boxes for the atoms, used for bound derivation.
pub struct AtomBoxes {
    pub x: Vec<Interval>,
    pub prev: Vec<Interval>,
    pub aux: Vec<Interval>,
}

impl AtomBoxes {
    pub fn get(&self, atom: Atom) -> Interval {
        match atom {
            Atom::X(j) => self.x[j],
            Atom::Prev(i) => self.prev[i],
            Atom::PrevAux(i) => self.aux[i],
        }
    }
}

/// One inequality row `sum_j coeffs[j] * u_j <= rhs`.
#[derive(Debug, Clone)]
pub struct SymRow {
    pub coeffs: Vec<Aff>,
    pub rhs: QAff,
}

/// Where coordinate `i` of the next iterate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZSource {
    /// Subproblem variable `u_j`.
    U(usize),
    /// Passed through from the previous iterate.
    Prev(usize),
}

/// A convex QP step in symbolic standard form.
#[derive(Debug, Clone)]
pub struct SymQp {
    pub n_u: usize,
    /// Constant PSD quadratic cost block.
    pub p: DMatrix<f64>,
    /// Linear cost coefficient per subproblem variable.
    pub cost: Vec<QAff>,
    pub rows: Vec<SymRow>,
    /// Conservative bounds per subproblem variable.
    pub u_bounds: Vec<Interval>,
    /// Map from iterate coordinates to subproblem variables.
    pub z_next: Vec<ZSource>,
    /// Subproblem variables carrying `|z_i|` per iterate coordinate
    /// (sparsity relax only); feeds the sparsity-round encoding.
    pub abs_block: Option<Vec<usize>>,
}

impl SymQp {
    /// Instantiate at concrete atom values.
    pub fn instantiate(&self, vals: &AtomValues) -> StandardQp {
        let n = self.n_u;
        let m = self.rows.len();
        let c = DVector::from_fn(n, |j, _| self.cost[j].eval(vals));
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, coeff) in row.coeffs.iter().enumerate() {
                a[(i, j)] = coeff.eval(vals);
            }
            b[i] = row.rhs.eval(vals);
        }
        StandardQp::new(self.p.clone(), c, a, b)
    }

    /// Read the next iterate out of a subproblem solution.
    pub fn extract_next(&self, u: &DVector<f64>, prev: Option<&DVector<f64>>) -> DVector<f64> {
        DVector::from_fn(self.z_next.len(), |i, _| match self.z_next[i] {
            ZSource::U(j) => u[j],
            ZSource::Prev(p) => prev.expect("passthrough step has no previous iterate")[p],
        })
    }
}

/// A rounding step: projection onto the discrete target set.
#[derive(Debug, Clone)]
pub struct SymRound {
    pub target: RoundTarget,
}

/// One schedule step in symbolic form.
#[derive(Debug, Clone)]
pub enum SymStep {
    Qp(SymQp),
    Round(SymRound),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StepError {
    #[error("constraint {index} has a nonzero convex quadratic part; only linear or concave-quadratic constraints fit the QP standard form")]
    ConvexQuadraticConstraint { index: usize },
    #[error("objective quadratic part is not positive semidefinite for this step kind")]
    NonPsdObjective,
    #[error("prox-linear step requires a composite objective term")]
    CompositeMissing,
    #[error("relax step requires a discrete constraint on the problem")]
    DiscreteMissing,
    #[error("polish step requires a discrete constraint on the problem")]
    PolishWithoutDiscrete,
    #[error("sparsity level {k} exceeds dimension {n}")]
    BadSparsity { k: usize, n: usize },
}

/// DC split `P = P_plus - P_minus` with both parts PSD, via the symmetric
/// eigendecomposition. Eigenvalues in `[-EIG_TOL, EIG_TOL]` are dropped.
pub fn dc_split(p: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p.nrows();
    if p.amax() <= EIG_TOL {
        return (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
    }
    let sym = 0.5 * (p + p.transpose());
    let eig = sym.symmetric_eigen();
    let mut pos = DMatrix::zeros(n, n);
    let mut neg = DMatrix::zeros(n, n);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let outer = &v * v.transpose();
        if lambda > EIG_TOL {
            pos += outer * lambda;
        } else if lambda < -EIG_TOL {
            neg += outer * (-lambda);
        }
    }
    (pos, neg)
}

/// `(K x + c)' z` as per-coordinate affine atom expressions.
fn linear_coeff(form: &QuadraticForm, zi: usize) -> Aff {
    let mut a = Aff::constant(form.c[zi]);
    for j in 0..form.d() {
        a.push(Atom::X(j), form.k[(zi, j)]);
    }
    a
}

/// Constant-in-`z` offset `lin_x' x + constant` of a form.
fn offset_aff(form: &QuadraticForm) -> Aff {
    let mut a = Aff::constant(form.constant);
    for j in 0..form.d() {
        a.push(Atom::X(j), form.lin_x[j]);
    }
    a
}

/// Linearization pieces of a concave quadratic `1/2 z' P z` at `z^k`:
/// the row contribution `(P z^k)' z` and the rhs payback `1/2 z^k' P z^k`.
struct ConcaveLin {
    /// Coefficient on `z_i`: `(P z^k)_i` as an atom expression.
    grad: Vec<Aff>,
    /// `1/2 z^k' P z^k` as a quadratic atom expression.
    half_quad: QAff,
}

fn linearize_concave(p: &DMatrix<f64>) -> ConcaveLin {
    let n = p.nrows();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let mut g = Aff::zero();
        for j in 0..n {
            g.push(Atom::Prev(j), p[(i, j)]);
        }
        grad.push(g);
    }
    let mut half_quad = QAff::zero();
    for i in 0..n {
        for j in 0..n {
            half_quad.push_quad(Atom::Prev(i), Atom::Prev(j), 0.5 * p[(i, j)]);
        }
    }
    half_quad.simplify();
    ConcaveLin { grad, half_quad }
}

fn append_equality_pair(rows: &mut Vec<SymRow>, coeffs: Vec<Aff>, rhs: QAff) {
    let neg_coeffs: Vec<Aff> = coeffs.iter().map(|a| a.scaled(-1.0)).collect();
    let mut neg_rhs = QAff {
        lin: rhs.lin.scaled(-1.0),
        quad: rhs.quad.iter().map(|(a, b, c)| (*a, *b, -c)).collect(),
    };
    neg_rhs.simplify();
    rows.push(SymRow { coeffs, rhs });
    rows.push(SymRow { coeffs: neg_coeffs, rhs: neg_rhs });
}

/// Problem equality rows as paired inequalities over the `z` block.
fn problem_equalities(problem: &ParametricProblem, n_u: usize, rows: &mut Vec<SymRow>) {
    for h in &problem.eq {
        let mut coeffs = vec![Aff::zero(); n_u];
        for (i, c) in coeffs.iter_mut().enumerate().take(problem.n) {
            *c = Aff::constant(h.a_z[i]);
        }
        let mut rhs = Aff::constant(-h.b);
        for j in 0..problem.d {
            rhs.push(Atom::X(j), -h.a_x[j]);
        }
        append_equality_pair(rows, coeffs, QAff::from_aff(rhs));
    }
}

/// Derive a bound for a slack-type variable that equals the positive part
/// of a row expression at any optimal solution.
fn slack_cap(row_expr: Interval) -> Interval {
    Interval::new(0.0, row_expr.hi.max(0.0))
}

/// Trust-region step: DC-split convexification of objective and
/// constraints, plus the infinity-norm trust region `|z - z^k| <= rho`.
pub fn build_trust_region(
    problem: &ParametricProblem,
    rho: f64,
    boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<SymQp, StepError> {
    let n = problem.n;
    let (p_pos, p_neg) = dc_split(&problem.objective.p);
    let obj_lin = linearize_concave(&p_neg);

    let mut cost = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = linear_coeff(&problem.objective, i);
        // minus the gradient of the linearized concave part
        c.add(&obj_lin.grad[i].scaled(-1.0));
        c.simplify();
        cost.push(QAff::from_aff(c));
    }

    let mut rows = Vec::new();
    for (gi, g) in problem.ineq.iter().enumerate() {
        let (g_pos, g_neg) = dc_split(&g.p);
        if g_pos.amax() > EIG_TOL {
            return Err(StepError::ConvexQuadraticConstraint { index: gi });
        }
        let mut coeffs = vec![Aff::zero(); n];
        let mut rhs = QAff::from_aff(offset_aff(g).scaled(-1.0));
        if g_neg.amax() > EIG_TOL {
            let lin = linearize_concave(&g_neg);
            for i in 0..n {
                let mut c = linear_coeff(g, i);
                c.add(&lin.grad[i].scaled(-1.0));
                c.simplify();
                coeffs[i] = c;
            }
            // +1/2 z^k' P_neg z^k moves to the rhs
            for &(a, b, v) in &lin.half_quad.quad {
                rhs.push_quad(a, b, -v);
            }
            rhs.lin.add(&lin.half_quad.lin.scaled(-1.0));
        } else {
            for (i, c) in coeffs.iter_mut().enumerate() {
                let mut cc = linear_coeff(g, i);
                cc.simplify();
                *c = cc;
            }
        }
        rhs.simplify();
        rows.push(SymRow { coeffs, rhs });
    }
    problem_equalities(problem, n, &mut rows);

    // Trust region rows: z_i - z^k_i <= rho and z^k_i - z_i <= rho.
    for i in 0..n {
        let mut co = vec![Aff::zero(); n];
        co[i] = Aff::constant(1.0);
        let mut rhs = Aff::constant(rho);
        rhs.push(Atom::Prev(i), 1.0);
        rows.push(SymRow { coeffs: co, rhs: QAff::from_aff(rhs) });

        let mut co = vec![Aff::zero(); n];
        co[i] = Aff::constant(-1.0);
        let mut rhs = Aff::constant(rho);
        rhs.push(Atom::Prev(i), -1.0);
        rows.push(SymRow { coeffs: co, rhs: QAff::from_aff(rhs) });
    }

    let u_bounds: Vec<Interval> = (0..n)
        .map(|i| {
            let tr = boxes.prev[i] + Interval::new(-rho, rho);
            tr.intersect(&iterate_box[i])
        })
        .collect();

    Ok(SymQp {
        n_u: n,
        p: p_pos,
        cost,
        rows,
        u_bounds,
        z_next: (0..n).map(ZSource::U).collect(),
        abs_block: None,
    })
}

/// Penalized convex-concave step. Rows with a concave quadratic part are
/// linearized and slacked with penalty weight `tau`; purely linear rows
/// stay hard so the subproblem is bounded.
pub fn build_ccp(
    problem: &ParametricProblem,
    tau: f64,
    boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<SymQp, StepError> {
    let n = problem.n;
    let (p_pos, p_neg) = dc_split(&problem.objective.p);
    let obj_lin = linearize_concave(&p_neg);

    struct DcRow {
        coeffs: Vec<Aff>,
        rhs: QAff,
    }
    let mut hard = Vec::new();
    let mut slacked: Vec<DcRow> = Vec::new();
    for (gi, g) in problem.ineq.iter().enumerate() {
        let (g_pos, g_neg) = dc_split(&g.p);
        if g_pos.amax() > EIG_TOL {
            return Err(StepError::ConvexQuadraticConstraint { index: gi });
        }
        if g_neg.amax() > EIG_TOL {
            let lin = linearize_concave(&g_neg);
            let mut coeffs = Vec::with_capacity(n);
            for i in 0..n {
                let mut c = linear_coeff(g, i);
                c.add(&lin.grad[i].scaled(-1.0));
                c.simplify();
                coeffs.push(c);
            }
            let mut rhs = QAff::from_aff(offset_aff(g).scaled(-1.0));
            for &(a, b, v) in &lin.half_quad.quad {
                rhs.push_quad(a, b, -v);
            }
            rhs.lin.add(&lin.half_quad.lin.scaled(-1.0));
            rhs.simplify();
            slacked.push(DcRow { coeffs, rhs });
        } else {
            let mut coeffs = Vec::with_capacity(n);
            for i in 0..n {
                let mut c = linear_coeff(g, i);
                c.simplify();
                coeffs.push(c);
            }
            let mut rhs = QAff::from_aff(offset_aff(g).scaled(-1.0));
            rhs.simplify();
            hard.push(SymRow { coeffs, rhs });
        }
    }

    let n_s = slacked.len();
    let n_u = n + n_s;
    let mut p = DMatrix::zeros(n_u, n_u);
    p.view_mut((0, 0), (n, n)).copy_from(&p_pos);

    let mut cost = Vec::with_capacity(n_u);
    for i in 0..n {
        let mut c = linear_coeff(&problem.objective, i);
        c.add(&obj_lin.grad[i].scaled(-1.0));
        c.simplify();
        cost.push(QAff::from_aff(c));
    }
    for _ in 0..n_s {
        cost.push(QAff::from_aff(Aff::constant(tau)));
    }

    let mut rows = Vec::new();
    let mut slack_caps = Vec::with_capacity(n_s);
    for (si, dc) in slacked.into_iter().enumerate() {
        let mut coeffs = dc.coeffs;
        coeffs.resize(n_u, Aff::zero());
        coeffs[n + si] = Aff::constant(-1.0);
        // slack cap: at optimality s = (g-hat)_+, bounded through intervals
        let mut expr = -dc.rhs.interval(boxes);
        for (i, c) in coeffs.iter().enumerate().take(n) {
            let ub = iterate_box[i];
            expr = expr + c.interval(boxes) * ub;
        }
        slack_caps.push(slack_cap(expr));
        rows.push(SymRow { coeffs, rhs: dc.rhs });
    }
    for mut row in hard {
        row.coeffs.resize(n_u, Aff::zero());
        rows.push(row);
    }
    problem_equalities(problem, n_u, &mut rows);
    // s >= 0
    for si in 0..n_s {
        let mut co = vec![Aff::zero(); n_u];
        co[n + si] = Aff::constant(-1.0);
        rows.push(SymRow { coeffs: co, rhs: QAff::zero() });
    }

    let mut u_bounds: Vec<Interval> = iterate_box.to_vec();
    u_bounds.extend(slack_caps);

    Ok(SymQp {
        n_u,
        p,
        cost,
        rows,
        u_bounds,
        z_next: (0..n).map(ZSource::U).collect(),
        abs_block: None,
    })
}

/// Prox-linear step for a composite objective: the inner quadratics are
/// linearized at `z^k`, the outer absolute value is split into slack pairs,
/// and a proximal term `(rho/2) |z - z^k|^2` regularizes the iterate.
pub fn build_prox_linear(
    problem: &ParametricProblem,
    rho: f64,
    boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<SymQp, StepError> {
    let n = problem.n;
    let comp: &CompositeTerm = problem.composite.as_ref().ok_or(StepError::CompositeMissing)?;
    let (base_pos, base_neg) = dc_split(&problem.objective.p);
    if base_neg.amax() > EIG_TOL {
        return Err(StepError::NonPsdObjective);
    }
    let np = comp.pieces.len();
    let n_u = n + 2 * np;

    let mut p = DMatrix::zeros(n_u, n_u);
    p.view_mut((0, 0), (n, n)).copy_from(&base_pos);
    for i in 0..n {
        p[(i, i)] += rho;
    }

    let mut cost = Vec::with_capacity(n_u);
    for i in 0..n {
        let mut c = linear_coeff(&problem.objective, i);
        c.push(Atom::Prev(i), -rho);
        c.simplify();
        cost.push(QAff::from_aff(c));
    }
    for _ in 0..2 * np {
        cost.push(QAff::from_aff(Aff::constant(comp.weight)));
    }

    let mut rows = Vec::new();
    let mut pair_caps = Vec::with_capacity(np);
    for (pi, piece) in comp.pieces.iter().enumerate() {
        // grad = Q z^k + K x + c; residual = val + grad'(z - z^k) = t+ - t-
        // written as grad' z - t+ + t- = 1/2 z^k' Q z^k - lin_x' x - constant
        let lin = linearize_concave(&(-piece.p.clone()));
        let mut coeffs = vec![Aff::zero(); n_u];
        let mut residual_box = Interval::point(0.0);
        for i in 0..n {
            let mut c = linear_coeff(piece, i);
            c.add(&lin.grad[i].scaled(-1.0)); // -(-Q z^k) = +Q z^k
            c.simplify();
            residual_box = residual_box + c.interval(boxes) * iterate_box[i];
            coeffs[i] = c;
        }
        coeffs[n + 2 * pi] = Aff::constant(-1.0);
        coeffs[n + 2 * pi + 1] = Aff::constant(1.0);
        let mut rhs = QAff::from_aff(offset_aff(piece).scaled(-1.0));
        // +1/2 z^k' Q z^k (lin.half_quad holds 1/2 z^k' (-(-Q)) z^k)
        for &(a, b, v) in &lin.half_quad.quad {
            rhs.push_quad(a, b, -v);
        }
        rhs.lin.add(&lin.half_quad.lin.scaled(-1.0));
        rhs.simplify();
        residual_box = residual_box - rhs.interval(boxes);
        let cap = residual_box.hi.abs().max(residual_box.lo.abs());
        pair_caps.push(Interval::new(0.0, cap.max(0.0)));
        append_equality_pair(&mut rows, coeffs, rhs);
    }

    // Base constraints must be linear for the QP form.
    for (gi, g) in problem.ineq.iter().enumerate() {
        if g.p.amax() > EIG_TOL {
            return Err(StepError::ConvexQuadraticConstraint { index: gi });
        }
        let mut coeffs = vec![Aff::zero(); n_u];
        for (i, c) in coeffs.iter_mut().enumerate().take(n) {
            *c = linear_coeff(g, i);
        }
        rows.push(SymRow { coeffs, rhs: QAff::from_aff(offset_aff(g).scaled(-1.0)) });
    }
    problem_equalities(problem, n_u, &mut rows);
    // t+, t- >= 0
    for t in 0..2 * np {
        let mut co = vec![Aff::zero(); n_u];
        co[n + t] = Aff::constant(-1.0);
        rows.push(SymRow { coeffs: co, rhs: QAff::zero() });
    }

    let mut u_bounds: Vec<Interval> = iterate_box.to_vec();
    for cap in pair_caps {
        u_bounds.push(cap);
        u_bounds.push(cap);
    }

    Ok(SymQp {
        n_u,
        p,
        cost,
        rows,
        u_bounds,
        z_next: (0..n).map(ZSource::U).collect(),
        abs_block: None,
    })
}

/// Relax step of relax-round-polish. Binary and plus-minus-one targets
/// become box relaxations; sparsity drops the cardinality constraint and
/// adds an l1 penalty through epigraph variables, which also provide the
/// `|z|` block the downstream rounding encoder consumes.
pub fn build_relax(
    problem: &ParametricProblem,
    lambda: f64,
    _boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<SymQp, StepError> {
    let n = problem.n;
    let discrete = problem.discrete.as_ref().ok_or(StepError::DiscreteMissing)?;
    let (obj_pos, obj_neg) = dc_split(&problem.objective.p);
    if obj_neg.amax() > EIG_TOL {
        return Err(StepError::NonPsdObjective);
    }

    let sparsity = matches!(discrete, DiscreteConstraint::Sparsity(_));
    let n_t = if sparsity { n } else { 0 };
    let n_u = n + n_t;

    let mut p = DMatrix::zeros(n_u, n_u);
    p.view_mut((0, 0), (n, n)).copy_from(&obj_pos);

    let mut cost = Vec::with_capacity(n_u);
    for i in 0..n {
        let mut c = linear_coeff(&problem.objective, i);
        c.simplify();
        cost.push(QAff::from_aff(c));
    }
    for _ in 0..n_t {
        cost.push(QAff::from_aff(Aff::constant(lambda)));
    }

    let mut rows = Vec::new();
    for (gi, g) in problem.ineq.iter().enumerate() {
        if g.p.amax() > EIG_TOL {
            return Err(StepError::ConvexQuadraticConstraint { index: gi });
        }
        let mut coeffs = vec![Aff::zero(); n_u];
        for (i, c) in coeffs.iter_mut().enumerate().take(n) {
            *c = linear_coeff(g, i);
        }
        rows.push(SymRow { coeffs, rhs: QAff::from_aff(offset_aff(g).scaled(-1.0)) });
    }
    problem_equalities(problem, n_u, &mut rows);

    let mut u_bounds: Vec<Interval> = iterate_box.to_vec();
    match discrete {
        DiscreteConstraint::Binary(idx) => {
            for &i in idx {
                push_box_rows(&mut rows, n_u, i, 0.0, 1.0);
                u_bounds[i] = u_bounds[i].intersect(&Interval::new(0.0, 1.0));
            }
        }
        DiscreteConstraint::PlusMinusOne(idx) => {
            for &i in idx {
                push_box_rows(&mut rows, n_u, i, -1.0, 1.0);
                u_bounds[i] = u_bounds[i].intersect(&Interval::new(-1.0, 1.0));
            }
        }
        DiscreteConstraint::Sparsity(k) => {
            if *k > n {
                return Err(StepError::BadSparsity { k: *k, n });
            }
            // -t_i <= z_i <= t_i, t_i >= 0
            for i in 0..n {
                let mut co = vec![Aff::zero(); n_u];
                co[i] = Aff::constant(1.0);
                co[n + i] = Aff::constant(-1.0);
                rows.push(SymRow { coeffs: co, rhs: QAff::zero() });
                let mut co = vec![Aff::zero(); n_u];
                co[i] = Aff::constant(-1.0);
                co[n + i] = Aff::constant(-1.0);
                rows.push(SymRow { coeffs: co, rhs: QAff::zero() });
                let mut co = vec![Aff::zero(); n_u];
                co[n + i] = Aff::constant(-1.0);
                rows.push(SymRow { coeffs: co, rhs: QAff::zero() });
                let cap = iterate_box[i].hi.abs().max(iterate_box[i].lo.abs());
                u_bounds.push(Interval::new(0.0, cap));
            }
        }
    }

    Ok(SymQp {
        n_u,
        p,
        cost,
        rows,
        u_bounds,
        z_next: (0..n).map(ZSource::U).collect(),
        abs_block: if sparsity { Some((n..2 * n).collect()) } else { None },
    })
}

fn push_box_rows(rows: &mut Vec<SymRow>, n_u: usize, i: usize, lo: f64, hi: f64) {
    let mut co = vec![Aff::zero(); n_u];
    co[i] = Aff::constant(1.0);
    rows.push(SymRow { coeffs: co, rhs: QAff::from_aff(Aff::constant(hi)) });
    let mut co = vec![Aff::zero(); n_u];
    co[i] = Aff::constant(-1.0);
    rows.push(SymRow { coeffs: co, rhs: QAff::from_aff(Aff::constant(-lo)) });
}

/// Polish step: the discrete block is pinned and the remaining convex QP is
/// re-solved. Binary and plus-minus-one blocks pin to the previous iterate
/// through equality pairs; the sparsity case gates each coordinate with the
/// rounding selection mask through `(1 - alpha_i) z_i = 0` rows.
pub fn build_polish(
    problem: &ParametricProblem,
    _boxes: &AtomBoxes,
    iterate_box: &[Interval],
) -> Result<SymQp, StepError> {
    let n = problem.n;
    let discrete = problem.discrete.as_ref().ok_or(StepError::PolishWithoutDiscrete)?;
    let (obj_pos, obj_neg) = dc_split(&problem.objective.p);
    if obj_neg.amax() > EIG_TOL {
        return Err(StepError::NonPsdObjective);
    }

    let n_u = n;
    let mut cost = Vec::with_capacity(n_u);
    for i in 0..n {
        let mut c = linear_coeff(&problem.objective, i);
        c.simplify();
        cost.push(QAff::from_aff(c));
    }

    let mut rows = Vec::new();
    for (gi, g) in problem.ineq.iter().enumerate() {
        if g.p.amax() > EIG_TOL {
            return Err(StepError::ConvexQuadraticConstraint { index: gi });
        }
        let coeffs: Vec<Aff> = (0..n).map(|i| linear_coeff(g, i)).collect();
        rows.push(SymRow { coeffs, rhs: QAff::from_aff(offset_aff(g).scaled(-1.0)) });
    }
    problem_equalities(problem, n_u, &mut rows);

    let mut u_bounds: Vec<Interval> = iterate_box.to_vec();
    match discrete {
        DiscreteConstraint::Binary(idx) | DiscreteConstraint::PlusMinusOne(idx) => {
            for &i in idx {
                let mut co = vec![Aff::zero(); n_u];
                co[i] = Aff::constant(1.0);
                append_equality_pair(&mut rows, co, QAff::from_aff(Aff::term(Atom::Prev(i), 1.0)));
            }
        }
        DiscreteConstraint::Sparsity(_) => {
            for i in 0..n {
                // (1 - alpha_i) z_i = 0: pins z_i when the rounding step
                // dropped coordinate i, vanishes when it was kept; no
                // big-M constant needed
                let mut co = vec![Aff::zero(); n_u];
                let mut a = Aff::constant(1.0);
                a.push(Atom::PrevAux(i), -1.0);
                co[i] = a;
                append_equality_pair(&mut rows, co, QAff::zero());
            }
        }
    }
    // Passthrough for the discrete block keeps rounding outputs exact in
    // the trace; the QP carries matching pins so both views agree.
    let z_next: Vec<ZSource> = match discrete {
        DiscreteConstraint::Binary(idx) | DiscreteConstraint::PlusMinusOne(idx) => (0..n)
            .map(|i| {
                if idx.contains(&i) {
                    ZSource::Prev(i)
                } else {
                    ZSource::U(i)
                }
            })
            .collect(),
        DiscreteConstraint::Sparsity(_) => (0..n).map(ZSource::U).collect(),
    };
    for i in 0..n {
        u_bounds[i] = iterate_box[i];
    }

    Ok(SymQp {
        n_u,
        p: obj_pos,
        cost,
        rows,
        u_bounds,
        z_next,
        abs_block: None,
    })
}

/// Forward rounding projection with deterministic tie-breaking: binary ties
/// at 1/2 round to 1, sign ties at 0 round to +1, sparsity magnitude ties
/// keep the lower index. Returns the rounded iterate and the selection mask
/// (sparsity only; empty otherwise).
pub fn round_forward(target: &RoundTarget, z: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
    let mut out = z.clone();
    match target {
        RoundTarget::Binary(idx) => {
            for &i in idx {
                out[i] = if z[i] >= 0.5 { 1.0 } else { 0.0 };
            }
            (out, vec![])
        }
        RoundTarget::PlusMinusOne(idx) => {
            for &i in idx {
                out[i] = if z[i] >= 0.0 { 1.0 } else { -1.0 };
            }
            (out, vec![])
        }
        RoundTarget::Sparsity(k) => {
            let n = z.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                z[b].abs()
                    .partial_cmp(&z[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut mask = vec![0.0; n];
            for &i in order.iter().take(*k) {
                mask[i] = 1.0;
            }
            for i in 0..n {
                if mask[i] == 0.0 {
                    out[i] = 0.0;
                }
            }
            (out, mask)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dc_split_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let (pos, neg) = dc_split(&p);
        assert!((pos.clone() - neg.clone() - p).amax() < 1e-10);
        // both parts PSD
        for m in [pos, neg] {
            let eig = m.symmetric_eigen();
            assert!(eig.eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn trust_region_concave_1d() {
        // min -z^2 + x z over [-1, 1]; z_k = 0, x = 3, rho = 0.2.
        // Convexified cost is 3 z (concave part linearized at 0), so the
        // LP over [-0.2, 0.2] lands at -0.2.
        let n = 1;
        let mut ineq = Vec::new();
        let mut c = DVector::zeros(n);
        c[0] = 1.0;
        ineq.push(
            QuadraticForm::linear(n, DMatrix::zeros(n, 1), c.clone())
                .with_offset(DVector::zeros(1), -1.0),
        );
        c[0] = -1.0;
        ineq.push(
            QuadraticForm::linear(n, DMatrix::zeros(n, 1), c)
                .with_offset(DVector::zeros(1), -1.0),
        );
        let problem = ParametricProblem {
            n,
            d: 1,
            objective: QuadraticForm::new(
                DMatrix::from_row_slice(1, 1, &[-2.0]),
                DMatrix::identity(1, 1),
                DVector::zeros(1),
            ),
            ineq,
            eq: vec![],
            discrete: None,
            composite: None,
        };
        let boxes = AtomBoxes {
            x: vec![Interval::new(3.0, 3.0)],
            prev: vec![Interval::new(-1.0, 1.0)],
            aux: vec![],
        };
        let iterate_box = [Interval::new(-1.0, 1.0)];
        let sym = build_trust_region(&problem, 0.2, &boxes, &iterate_box).unwrap();
        let x = DVector::from_row_slice(&[3.0]);
        let zk = DVector::zeros(1);
        let qp = sym.instantiate(&AtomValues { x: &x, prev: Some(&zk), aux: &[] });
        let sol = crate::qpcore::solve_qp(&qp, 1e-9, 50_000).unwrap();
        assert_eq!(sol.status, crate::qpcore::QpStatus::Optimal);
        let z1 = sym.extract_next(&sol.u, Some(&zk));
        assert_relative_eq!(z1[0], -0.2, epsilon = 1e-7);
    }

    #[test]
    fn rounding_projections() {
        let (v, _) = round_forward(
            &RoundTarget::Binary(vec![0, 1]),
            &DVector::from_row_slice(&[0.3, 0.7]),
        );
        assert_eq!(v.as_slice(), &[0.0, 1.0]);
        // tie rounds up
        let (v, _) = round_forward(&RoundTarget::Binary(vec![0]), &DVector::from_row_slice(&[0.5]));
        assert_eq!(v[0], 1.0);
        let (v, mask) = round_forward(
            &RoundTarget::Sparsity(2),
            &DVector::from_row_slice(&[3.0, -5.0, 1.0, 0.5]),
        );
        assert_eq!(v.as_slice(), &[3.0, -5.0, 0.0, 0.0]);
        assert_eq!(mask, vec![1.0, 1.0, 0.0, 0.0]);
        // magnitude tie keeps the lower index
        let (v, _) = round_forward(
            &RoundTarget::Sparsity(1),
            &DVector::from_row_slice(&[2.0, 2.0, 0.0]),
        );
        assert_eq!(v.as_slice(), &[2.0, 0.0, 0.0]);
        let (v, _) = round_forward(
            &RoundTarget::PlusMinusOne(vec![0, 1]),
            &DVector::from_row_slice(&[-0.1, 0.0]),
        );
        assert_eq!(v.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn round_idempotent() {
        for target in [
            RoundTarget::Binary(vec![0, 1, 2]),
            RoundTarget::Sparsity(2),
            RoundTarget::PlusMinusOne(vec![0, 1, 2]),
        ] {
            let z = DVector::from_row_slice(&[0.3, -0.9, 0.6]);
            let (once, _) = round_forward(&target, &z);
            let (twice, _) = round_forward(&target, &once);
            assert_eq!(once, twice);
        }
    }
}
