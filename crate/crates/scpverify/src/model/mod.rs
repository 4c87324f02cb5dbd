//! Canonical representation of parametric non-convex problems, parameter
//! sets, initial-point sets, and algorithm schedules.
//!
//! The problem form is
//!
//! ```text
//!     minimize    f(z, x) = 1/2 z' P0 z + (K0 x + c0)' z + r0(x)
//!     subject to  g_i(z, x) <= 0            (quadratic in z, affine in x)
//!                 h_j(z, x)  = 0            (affine in z and x)
//!                 z in Z                     (optional discrete constraint)
//! ```
//!
//! with decision variable `z` of dimension `n` and parameter `x` of
//! dimension `d`. Problem data depends affinely on `x`. An optional
//! composite term adds a weighted l1 penalty of inner quadratics to the
//! objective, which covers phase-retrieval style objectives.
//!
//! All types are immutable after construction and safe to share across
//! threads.

pub mod json;

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;

const SYM_TOL: f64 = 1e-12;

/// A scalar quadratic-in-`z`, affine-in-`x` function
/// `q(z, x) = 1/2 z' P z + (K x + c)' z + lin_x' x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub c: DVector<f64>,
    pub lin_x: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn new(p: DMatrix<f64>, k: DMatrix<f64>, c: DVector<f64>) -> Self {
        let d = k.ncols();
        QuadraticForm {
            p,
            k,
            c,
            lin_x: DVector::zeros(d),
            constant: 0.0,
        }
    }

    /// Purely linear form `(K x + c)' z`.
    pub fn linear(n: usize, k: DMatrix<f64>, c: DVector<f64>) -> Self {
        let d = k.ncols();
        QuadraticForm {
            p: DMatrix::zeros(n, n),
            k,
            c,
            lin_x: DVector::zeros(d),
            constant: 0.0,
        }
    }

    pub fn with_offset(mut self, lin_x: DVector<f64>, constant: f64) -> Self {
        self.lin_x = lin_x;
        self.constant = constant;
        self
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn d(&self) -> usize {
        self.k.ncols()
    }

    pub fn eval(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.p * z)[(0, 0)]
            + (&self.k * x + &self.c).dot(z)
            + self.lin_x.dot(x)
            + self.constant
    }

    /// Gradient with respect to `z`.
    pub fn grad_z(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.p * z + &self.k * x + &self.c
    }

    fn is_symmetric(&self) -> bool {
        let p = &self.p;
        for i in 0..p.nrows() {
            for j in (i + 1)..p.ncols() {
                if (p[(i, j)] - p[(j, i)]).abs() > SYM_TOL {
                    return false;
                }
            }
        }
        true
    }
}

/// Affine row `a_z' z + a_x' x + b`, used for equality constraints (`= 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub a_z: DVector<f64>,
    pub a_x: DVector<f64>,
    pub b: f64,
}

impl AffineRow {
    pub fn eval(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        self.a_z.dot(z) + self.a_x.dot(x) + self.b
    }
}

/// Discrete constraint on the iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscreteConstraint {
    /// `z_i in {0, 1}` for the listed indices.
    Binary(Vec<usize>),
    /// `||z||_0 <= k`.
    Sparsity(usize),
    /// `z_i in {-1, 1}` for the listed indices.
    PlusMinusOne(Vec<usize>),
}

/// Optional composite objective term `weight * sum_i |piece_i(z, x)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTerm {
    pub weight: f64,
    pub pieces: Vec<QuadraticForm>,
}

/// The parametric non-convex problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricProblem {
    pub n: usize,
    pub d: usize,
    pub objective: QuadraticForm,
    pub ineq: Vec<QuadraticForm>,
    pub eq: Vec<AffineRow>,
    pub discrete: Option<DiscreteConstraint>,
    pub composite: Option<CompositeTerm>,
}

/// Axis-aligned box parameter set with optional binary coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Coordinates restricted to the two endpoint values.
    pub discrete_coords: BTreeSet<usize>,
}

impl ParameterSet {
    pub fn box_set(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        ParameterSet {
            lower,
            upper,
            discrete_coords: BTreeSet::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        0.5 * (&self.lower + &self.upper)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.d() {
            return false;
        }
        for j in 0..self.d() {
            if x[j] < self.lower[j] - tol || x[j] > self.upper[j] + tol {
                return false;
            }
            if self.discrete_coords.contains(&j) {
                let at_lo = (x[j] - self.lower[j]).abs() <= tol;
                let at_hi = (x[j] - self.upper[j]).abs() <= tol;
                if !at_lo && !at_hi {
                    return false;
                }
            }
        }
        true
    }
}

/// Initial-point set for an algorithm schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSet {
    Cold(DVector<f64>),
    Warm(DVector<f64>),
    /// No initial point (relax-round-polish).
    Omitted,
}

impl InitialSet {
    pub fn point(&self) -> Option<&DVector<f64>> {
        match self {
            InitialSet::Cold(p) | InitialSet::Warm(p) => Some(p),
            InitialSet::Omitted => None,
        }
    }
}

/// Target of a rounding step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundTarget {
    Binary(Vec<usize>),
    Sparsity(usize),
    PlusMinusOne(Vec<usize>),
}

/// One step of an SCP schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSpec {
    TrustRegion { rho_k: f64 },
    PenalizedCcp { tau_k: f64 },
    ProxLinear { rho: f64 },
    Relax { lambda: f64 },
    Round { target: RoundTarget },
    Polish,
}

impl StepSpec {
    /// Whether the step produces a continuous-valued iterate (a QP solve).
    pub fn is_continuous(&self) -> bool {
        !matches!(self, StepSpec::Round { .. })
    }
}

/// Ordered list of steps with an initialization set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSchedule {
    pub steps: Vec<StepSpec>,
    pub init: InitialSet,
}

impl AlgorithmSchedule {
    pub fn new(steps: Vec<StepSpec>, init: InitialSet) -> Self {
        AlgorithmSchedule { steps, init }
    }

    /// Number of steps `K`.
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    /// Truncated schedule containing the first `k` steps.
    pub fn prefix(&self, k: usize) -> AlgorithmSchedule {
        AlgorithmSchedule {
            steps: self.steps[..k].to_vec(),
            init: self.init.clone(),
        }
    }
}

/// Performance metric to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerformanceMetric {
    Suboptimality,
    ViolationSquaredL2,
    SubproblemFeasibility,
}

/// One structural finding from [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    AsymmetricMatrix { location: String },
    DimensionMismatch { location: String, expected: usize, got: usize },
    SparsityOutOfRange { k: usize, n: usize },
    ParameterBoundViolation { coord: usize, lower: f64, upper: f64 },
    StepOrdering { index: usize, message: String },
    InitDimension { expected: usize, got: usize },
    NonPositiveHyperparameter { index: usize, name: &'static str, value: f64 },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::AsymmetricMatrix { location } => {
                write!(f, "matrix at {location} is not symmetric")
            }
            Finding::DimensionMismatch { location, expected, got } => {
                write!(f, "dimension mismatch at {location}: expected {expected}, got {got}")
            }
            Finding::SparsityOutOfRange { k, n } => {
                write!(f, "sparsity level {k} outside 0..={n}")
            }
            Finding::ParameterBoundViolation { coord, lower, upper } => {
                write!(f, "parameter coordinate {coord}: lower {lower} > upper {upper}")
            }
            Finding::StepOrdering { index, message } => {
                write!(f, "step {index}: {message}")
            }
            Finding::InitDimension { expected, got } => {
                write!(f, "initial point dimension {got} != n = {expected}")
            }
            Finding::NonPositiveHyperparameter { index, name, value } => {
                write!(f, "step {index}: {name} = {value} must be positive")
            }
        }
    }
}

/// Result of structural validation. Empty means admissible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Error for evaluation entry points.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

fn check_dims(problem: &ParametricProblem, z: &DVector<f64>, x: &DVector<f64>) -> Result<(), ModelError> {
    if z.len() != problem.n {
        return Err(ModelError::Dimension(format!(
            "z has length {}, expected {}",
            z.len(),
            problem.n
        )));
    }
    if x.len() != problem.d {
        return Err(ModelError::Dimension(format!(
            "x has length {}, expected {}",
            x.len(),
            problem.d
        )));
    }
    Ok(())
}

/// Structural validation of a (problem, schedule, parameter set) triple.
/// Never aborts; all findings land in the report.
pub fn validate(
    problem: &ParametricProblem,
    schedule: &AlgorithmSchedule,
    pset: &ParameterSet,
) -> ValidationReport {
    let mut findings = Vec::new();
    let n = problem.n;
    let d = problem.d;

    let mut check_form = |form: &QuadraticForm, loc: String| {
        if form.n() != n || form.c.len() != n {
            findings.push(Finding::DimensionMismatch {
                location: loc.clone(),
                expected: n,
                got: form.n(),
            });
        } else if !form.is_symmetric() {
            findings.push(Finding::AsymmetricMatrix { location: loc.clone() });
        }
        if form.d() != d || form.lin_x.len() != d {
            findings.push(Finding::DimensionMismatch {
                location: loc,
                expected: d,
                got: form.d(),
            });
        }
    };
    check_form(&problem.objective, "objective".into());
    for (i, g) in problem.ineq.iter().enumerate() {
        check_form(g, format!("ineq[{i}]"));
    }
    if let Some(comp) = &problem.composite {
        for (i, piece) in comp.pieces.iter().enumerate() {
            check_form(piece, format!("composite[{i}]"));
        }
    }
    for (j, h) in problem.eq.iter().enumerate() {
        if h.a_z.len() != n {
            findings.push(Finding::DimensionMismatch {
                location: format!("eq[{j}].a_z"),
                expected: n,
                got: h.a_z.len(),
            });
        }
        if h.a_x.len() != d {
            findings.push(Finding::DimensionMismatch {
                location: format!("eq[{j}].a_x"),
                expected: d,
                got: h.a_x.len(),
            });
        }
    }
    if let Some(DiscreteConstraint::Sparsity(k)) = &problem.discrete {
        if *k > n {
            findings.push(Finding::SparsityOutOfRange { k: *k, n });
        }
    }

    if pset.d() != d || pset.upper.len() != d {
        findings.push(Finding::DimensionMismatch {
            location: "parameter_set".into(),
            expected: d,
            got: pset.d(),
        });
    } else {
        for j in 0..d {
            if pset.lower[j] > pset.upper[j] {
                findings.push(Finding::ParameterBoundViolation {
                    coord: j,
                    lower: pset.lower[j],
                    upper: pset.upper[j],
                });
            }
        }
    }

    if let Some(p) = schedule.init.point() {
        if p.len() != n {
            findings.push(Finding::InitDimension { expected: n, got: p.len() });
        }
    }
    for (i, step) in schedule.steps.iter().enumerate() {
        match step {
            StepSpec::TrustRegion { rho_k } if *rho_k <= 0.0 => {
                findings.push(Finding::NonPositiveHyperparameter {
                    index: i,
                    name: "rho_k",
                    value: *rho_k,
                });
            }
            StepSpec::PenalizedCcp { tau_k } if *tau_k <= 0.0 => {
                findings.push(Finding::NonPositiveHyperparameter {
                    index: i,
                    name: "tau_k",
                    value: *tau_k,
                });
            }
            StepSpec::ProxLinear { rho } if *rho <= 0.0 => {
                findings.push(Finding::NonPositiveHyperparameter {
                    index: i,
                    name: "rho",
                    value: *rho,
                });
            }
            StepSpec::Relax { lambda } if *lambda < 0.0 => {
                findings.push(Finding::NonPositiveHyperparameter {
                    index: i,
                    name: "lambda",
                    value: *lambda,
                });
            }
            StepSpec::Round { .. } => {
                let ok = i > 0 && schedule.steps[i - 1].is_continuous();
                if !ok {
                    findings.push(Finding::StepOrdering {
                        index: i,
                        message: "Round must follow a continuous-valued step".into(),
                    });
                }
            }
            StepSpec::Polish => {
                let ok = i > 0 && matches!(schedule.steps[i - 1], StepSpec::Round { .. });
                if !ok {
                    findings.push(Finding::StepOrdering {
                        index: i,
                        message: "Polish must follow Round".into(),
                    });
                }
            }
            _ => {}
        }
    }

    ValidationReport { findings }
}

/// Objective value `f(z, x)`, including the composite term when present.
pub fn eval_objective(
    problem: &ParametricProblem,
    z: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64, ModelError> {
    check_dims(problem, z, x)?;
    let mut val = problem.objective.eval(z, x);
    if let Some(comp) = &problem.composite {
        let abs_sum: f64 = comp.pieces.iter().map(|p| p.eval(z, x).abs()).sum();
        val += comp.weight * abs_sum;
    }
    Ok(val)
}

/// Squared l2 violation: positive parts of inequalities squared, plus
/// squared equality residuals.
pub fn eval_violation(
    problem: &ParametricProblem,
    z: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64, ModelError> {
    check_dims(problem, z, x)?;
    let mut total = 0.0;
    for g in &problem.ineq {
        let v = g.eval(z, x).max(0.0);
        total += v * v;
    }
    for h in &problem.eq {
        let v = h.eval(z, x);
        total += v * v;
    }
    Ok(total)
}

/// Quadratic function of `z` alone: `1/2 z' P z + c' z + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedQuadratic {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub r: f64,
}

impl FixedQuadratic {
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.p * z)[(0, 0)] + self.c.dot(z) + self.r
    }
}

/// A non-parametric instance: all affine-in-`x` data folded into constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedProblem {
    pub n: usize,
    pub objective: FixedQuadratic,
    pub ineq: Vec<FixedQuadratic>,
    /// Rows `a' z + b = 0`.
    pub eq: Vec<(DVector<f64>, f64)>,
    pub discrete: Option<DiscreteConstraint>,
    pub composite: Option<(f64, Vec<FixedQuadratic>)>,
}

impl FixedProblem {
    pub fn eval_objective(&self, z: &DVector<f64>) -> f64 {
        let mut val = self.objective.eval(z);
        if let Some((w, pieces)) = &self.composite {
            val += w * pieces.iter().map(|p| p.eval(z).abs()).sum::<f64>();
        }
        val
    }

    pub fn eval_violation(&self, z: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for g in &self.ineq {
            let v = g.eval(z).max(0.0);
            total += v * v;
        }
        for (a, b) in &self.eq {
            let v = a.dot(z) + b;
            total += v * v;
        }
        total
    }
}

fn fold(form: &QuadraticForm, x: &DVector<f64>) -> FixedQuadratic {
    FixedQuadratic {
        p: form.p.clone(),
        c: &form.k * x + &form.c,
        r: form.lin_x.dot(x) + form.constant,
    }
}

/// Fold a parameter value into the problem data. Warns on `x` outside its
/// declared set (callers pass the set when they have one); never fails for
/// out-of-set values.
pub fn substitute_parameter(
    problem: &ParametricProblem,
    x: &DVector<f64>,
) -> Result<FixedProblem, ModelError> {
    if x.len() != problem.d {
        return Err(ModelError::Dimension(format!(
            "x has length {}, expected {}",
            x.len(),
            problem.d
        )));
    }
    Ok(FixedProblem {
        n: problem.n,
        objective: fold(&problem.objective, x),
        ineq: problem.ineq.iter().map(|g| fold(g, x)).collect(),
        eq: problem
            .eq
            .iter()
            .map(|h| (h.a_z.clone(), h.a_x.dot(x) + h.b))
            .collect(),
        discrete: problem.discrete.clone(),
        composite: problem
            .composite
            .as_ref()
            .map(|c| (c.weight, c.pieces.iter().map(|p| fold(p, x)).collect())),
    })
}
