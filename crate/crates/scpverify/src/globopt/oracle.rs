//! Brute-force reference optimum for desk-scale instances.
//!
//! Ground truth for tests and for z*(x) in suboptimality runs. Strategy by
//! problem shape: a convex instance is solved directly as one QP; a
//! discrete block (binary, plus-minus-one, or sparsity support) is
//! enumerated exhaustively with a convex continuation per assignment; what
//! remains is a dense grid over the continuous coordinates. Scale guards
//! reject anything the strategy cannot exhaust.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    substitute_parameter, DiscreteConstraint, FixedProblem, ModelError, ParametricProblem,
};
use crate::qpcore::{solve_qp, QpError, QpStatus, StandardQp};

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Grid points per continuous dimension.
    pub grid: usize,
    /// Total grid size guard.
    pub max_points: usize,
    /// Feasibility tolerance for accepting a grid point.
    pub feas_tol: f64,
    /// Box for coordinates whose bounds cannot be read off the constraint
    /// rows.
    pub box_lo: Option<DVector<f64>>,
    pub box_hi: Option<DVector<f64>>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            grid: 41,
            max_points: 2_000_000,
            feas_tol: 1e-9,
            box_lo: None,
            box_hi: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("scale guard: {0}")]
    ScaleGuard(String),
    #[error("coordinate {0} has no derivable bounds; pass a box")]
    NoBox(usize),
    #[error("no feasible point found")]
    Infeasible,
    #[error("continuation is not a convex QP")]
    NonConvexContinuation,
    #[error("continuation QP stalled")]
    SolverStall,
    #[error("continuation QP is unbounded below")]
    Unbounded,
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const EIG_TOL: f64 = 1e-8;

/// Global minimum of `f(., x)` over `Omega(x)` by exhaustive search.
/// Returns the optimal value and a minimizer.
pub fn reference_oracle(
    problem: &ParametricProblem,
    x: &DVector<f64>,
    opts: &OracleOptions,
) -> Result<(f64, DVector<f64>), OracleError> {
    let fixed = substitute_parameter(problem, x)?;
    fixed_oracle(&fixed, opts)
}

/// Same search over an already-substituted problem.
pub fn fixed_oracle(
    fixed: &FixedProblem,
    opts: &OracleOptions,
) -> Result<(f64, DVector<f64>), OracleError> {
    match fixed.discrete.clone() {
        None => {
            // convex instances collapse to one QP solve
            match continuation(fixed, &vec![None; fixed.n]) {
                Ok(Some(best)) => return Ok(best),
                Ok(None) => return Err(OracleError::Infeasible),
                Err(OracleError::NonConvexContinuation) => {}
                Err(e) => return Err(e),
            }
            grid_min(fixed, &vec![None; fixed.n], opts)
        }
        Some(DiscreteConstraint::Binary(idx)) => {
            enumerate_levels(fixed, &idx, &[0.0, 1.0], opts)
        }
        Some(DiscreteConstraint::PlusMinusOne(idx)) => {
            enumerate_levels(fixed, &idx, &[-1.0, 1.0], opts)
        }
        Some(DiscreteConstraint::Sparsity(k)) => enumerate_supports(fixed, k, opts),
    }
}

fn enumerate_levels(
    fixed: &FixedProblem,
    idx: &[usize],
    levels: &[f64; 2],
    opts: &OracleOptions,
) -> Result<(f64, DVector<f64>), OracleError> {
    if idx.len() > 20 {
        return Err(OracleError::ScaleGuard(format!(
            "2^{} discrete assignments",
            idx.len()
        )));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u64..(1u64 << idx.len()) {
        let mut assign: Vec<Option<f64>> = vec![None; fixed.n];
        for (bit, &i) in idx.iter().enumerate() {
            assign[i] = Some(levels[usize::from(mask >> bit & 1 == 1)]);
        }
        let cand = solve_assignment(fixed, &assign, opts)?;
        if let Some((v, z)) = cand {
            if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                best = Some((v, z));
            }
        }
    }
    best.ok_or(OracleError::Infeasible)
}

fn enumerate_supports(
    fixed: &FixedProblem,
    k: usize,
    opts: &OracleOptions,
) -> Result<(f64, DVector<f64>), OracleError> {
    let n = fixed.n;
    if n > 20 {
        return Err(OracleError::ScaleGuard(format!("{n} choose {k} supports")));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut support = Vec::with_capacity(k);
    enumerate_supports_rec(fixed, k, 0, &mut support, opts, &mut best)?;
    best.ok_or(OracleError::Infeasible)
}

fn enumerate_supports_rec(
    fixed: &FixedProblem,
    k: usize,
    start: usize,
    support: &mut Vec<usize>,
    opts: &OracleOptions,
    best: &mut Option<(f64, DVector<f64>)>,
) -> Result<(), OracleError> {
    if support.len() == k || start == fixed.n {
        let mut assign: Vec<Option<f64>> = vec![Some(0.0); fixed.n];
        for &i in support.iter() {
            assign[i] = None;
        }
        if let Some((v, z)) = solve_assignment(fixed, &assign, opts)? {
            if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                *best = Some((v, z));
            }
        }
        return Ok(());
    }
    for i in start..fixed.n {
        support.push(i);
        enumerate_supports_rec(fixed, k, i + 1, support, opts, best)?;
        support.pop();
    }
    Ok(())
}

/// Minimize over the free coordinates of one discrete assignment: convex
/// continuation when the data allows it, grid otherwise. `Ok(None)` means
/// the assignment is infeasible.
fn solve_assignment(
    fixed: &FixedProblem,
    assign: &[Option<f64>],
    opts: &OracleOptions,
) -> Result<Option<(f64, DVector<f64>)>, OracleError> {
    if assign.iter().all(|a| a.is_some()) {
        let z = DVector::from_iterator(fixed.n, assign.iter().map(|a| a.unwrap()));
        let viol = max_violation(fixed, &z);
        return Ok(if viol <= opts.feas_tol {
            Some((fixed.eval_objective(&z), z))
        } else {
            None
        });
    }
    match continuation(fixed, assign) {
        Ok(r) => Ok(r),
        Err(OracleError::NonConvexContinuation) => match grid_min(fixed, assign, opts) {
            Ok(best) => Ok(Some(best)),
            Err(OracleError::Infeasible) => Ok(None),
            Err(e) => Err(e),
        },
        Err(e) => Err(e),
    }
}

fn max_violation(fixed: &FixedProblem, z: &DVector<f64>) -> f64 {
    let mut v = 0.0_f64;
    for g in &fixed.ineq {
        v = v.max(g.eval(z));
    }
    for (a, b) in &fixed.eq {
        v = v.max((a.dot(z) + b).abs());
    }
    v
}

/// Convex QP over the free coordinates with the rest pinned. Fails with
/// `NonConvexContinuation` when the restricted objective is not PSD, a
/// constraint stays quadratic in a free coordinate, or a composite term is
/// present.
fn continuation(
    fixed: &FixedProblem,
    assign: &[Option<f64>],
) -> Result<Option<(f64, DVector<f64>)>, OracleError> {
    if fixed.composite.is_some() {
        return Err(OracleError::NonConvexContinuation);
    }
    let free: Vec<usize> = (0..fixed.n).filter(|&i| assign[i].is_none()).collect();
    let nf = free.len();
    let zfix: Vec<f64> = assign.iter().map(|a| a.unwrap_or(0.0)).collect();

    // restricted objective 1/2 zf' Pff zf + (cf + Pfd zd)' zf + const
    let obj = &fixed.objective;
    let mut pff = DMatrix::zeros(nf, nf);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            pff[(r, c)] = obj.p[(i, j)];
        }
    }
    let eig = pff.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -EIG_TOL) {
        return Err(OracleError::NonConvexContinuation);
    }
    let mut cf = DVector::zeros(nf);
    for (r, &i) in free.iter().enumerate() {
        cf[r] = obj.c[i];
        for j in 0..fixed.n {
            if assign[j].is_some() {
                cf[r] += obj.p[(i, j)] * zfix[j];
            }
        }
    }
    let mut constant = obj.r;
    for i in 0..fixed.n {
        if assign[i].is_some() {
            constant += obj.c[i] * zfix[i];
            for j in 0..fixed.n {
                if assign[j].is_some() {
                    constant += 0.5 * obj.p[(i, j)] * zfix[i] * zfix[j];
                }
            }
        }
    }

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for g in &fixed.ineq {
        // rows must be affine in the free block
        for (r, &i) in free.iter().enumerate() {
            let _ = r;
            if (0..fixed.n).any(|j| g.p[(i, j)].abs() > 1e-14) {
                return Err(OracleError::NonConvexContinuation);
            }
        }
        let mut a = DVector::zeros(nf);
        for (r, &i) in free.iter().enumerate() {
            a[r] = g.c[i];
        }
        let mut rhs = -g.r;
        for i in 0..fixed.n {
            if assign[i].is_some() {
                rhs -= g.c[i] * zfix[i];
                for j in 0..fixed.n {
                    if assign[j].is_some() {
                        rhs -= 0.5 * g.p[(i, j)] * zfix[i] * zfix[j];
                    }
                }
            }
        }
        rows.push((a, rhs));
    }
    for (a_full, b) in &fixed.eq {
        let mut a = DVector::zeros(nf);
        for (r, &i) in free.iter().enumerate() {
            a[r] = a_full[i];
        }
        let mut rhs = -b;
        for i in 0..fixed.n {
            if assign[i].is_some() {
                rhs -= a_full[i] * zfix[i];
            }
        }
        rows.push((a.clone(), rhs));
        rows.push((-a, -rhs));
    }

    let m = rows.len();
    let mut amat = DMatrix::zeros(m, nf);
    let mut bvec = DVector::zeros(m);
    for (i, (a, rhs)) in rows.iter().enumerate() {
        amat.set_row(i, &a.transpose());
        bvec[i] = *rhs;
    }
    let qp = StandardQp::new(pff, cf, amat, bvec);
    let sol = solve_qp(&qp, 1e-9, 200_000)?;
    match sol.status {
        QpStatus::Optimal => {
            let mut z = DVector::from_vec(zfix);
            for (r, &i) in free.iter().enumerate() {
                z[i] = sol.u[r];
            }
            Ok(Some((qp.primal_objective(&sol.u) + constant, z)))
        }
        QpStatus::PrimalInfeasible => Ok(None),
        QpStatus::DualInfeasible => Err(OracleError::Unbounded),
        QpStatus::MaxIter => Err(OracleError::SolverStall),
    }
}

/// Per-coordinate bounds readable from single-coordinate affine rows.
fn derive_box(
    fixed: &FixedProblem,
    free: &[usize],
    opts: &OracleOptions,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let mut lo = vec![f64::NEG_INFINITY; fixed.n];
    let mut hi = vec![f64::INFINITY; fixed.n];
    if let (Some(bl), Some(bh)) = (&opts.box_lo, &opts.box_hi) {
        for i in 0..fixed.n {
            lo[i] = bl[i];
            hi[i] = bh[i];
        }
    }
    for g in &fixed.ineq {
        if g.p.amax() > 1e-14 {
            continue;
        }
        let nz: Vec<usize> = (0..fixed.n).filter(|&i| g.c[i].abs() > 1e-14).collect();
        if nz.len() != 1 {
            continue;
        }
        let i = nz[0];
        let bound = -g.r / g.c[i];
        if g.c[i] > 0.0 {
            hi[i] = hi[i].min(bound);
        } else {
            lo[i] = lo[i].max(bound);
        }
    }
    free.iter()
        .map(|&i| {
            if lo[i].is_finite() && hi[i].is_finite() {
                Ok((lo[i], hi[i]))
            } else {
                Err(OracleError::NoBox(i))
            }
        })
        .collect()
}

fn grid_min(
    fixed: &FixedProblem,
    assign: &[Option<f64>],
    opts: &OracleOptions,
) -> Result<(f64, DVector<f64>), OracleError> {
    let free: Vec<usize> = (0..fixed.n).filter(|&i| assign[i].is_none()).collect();
    if free.len() > 6 {
        return Err(OracleError::ScaleGuard(format!(
            "{} continuous dimensions on the grid path",
            free.len()
        )));
    }
    let g = opts.grid.max(2);
    let total = (g as f64).powi(free.len() as i32);
    if total > opts.max_points as f64 {
        return Err(OracleError::ScaleGuard(format!("{total} grid points")));
    }
    let boxes = derive_box(fixed, &free, opts)?;

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut idx = vec![0usize; free.len()];
    let mut z = DVector::from_iterator(fixed.n, assign.iter().map(|a| a.unwrap_or(0.0)));
    loop {
        for (pos, &i) in free.iter().enumerate() {
            let (l, h) = boxes[pos];
            let t = idx[pos] as f64 / (g - 1) as f64;
            z[i] = l + t * (h - l);
        }
        if max_violation(fixed, &z) <= opts.feas_tol {
            let v = fixed.eval_objective(&z);
            if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                best = Some((v, z.clone()));
            }
        }
        let mut pos = 0;
        loop {
            if pos == free.len() {
                return best.ok_or(OracleError::Infeasible);
            }
            idx[pos] += 1;
            if idx[pos] < g {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticForm;
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn knapsack(n: usize, cap: f64) -> ParametricProblem {
        // max x'z s.t. 1'z <= cap, z binary; stated as min -x'z
        let mut ineq = vec![QuadraticForm::linear(
            n,
            DMatrix::zeros(n, n),
            DVector::from_element(n, 1.0),
        )
        .with_offset(DVector::zeros(n), -cap)];
        for i in 0..n {
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
        ParametricProblem {
            n,
            d: n,
            objective: QuadraticForm::linear(n, -DMatrix::identity(n, n), DVector::zeros(n)),
            ineq,
            eq: vec![],
            discrete: Some(DiscreteConstraint::Binary((0..n).collect())),
            composite: None,
        }
    }

    #[test]
    fn knapsack_enumeration_exact() {
        let problem = knapsack(4, 2.0);
        let x = dvec(&[3.0, 5.0, 2.0, 4.0]);
        let (v, z) = reference_oracle(&problem, &x, &OracleOptions::default()).unwrap();
        // best two rewards under capacity 2: items 1 and 3
        assert_relative_eq!(v, -9.0, epsilon = 1e-9);
        assert_relative_eq!(z[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(z[3], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn box_qp_grid_hits_a_corner() {
        // min 2 z1 z2 + x'z over [-1,1]^2: the optimum sits at a corner
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let problem = crate::model::tests::box_qp(p);
        let x = dvec(&[3.0, 2.5]);
        let (v, z) = reference_oracle(&problem, &x, &OracleOptions::default()).unwrap();
        let mut expected = f64::INFINITY;
        for z1 in [-1.0, 1.0] {
            for z2 in [-1.0_f64, 1.0] {
                expected = expected.min(2.0 * z1 * z2 + x[0] * z1 + x[1] * z2);
            }
        }
        assert_relative_eq!(v, expected, epsilon = 1e-9);
        assert!(z.amax() <= 1.0 + 1e-9);
    }

    #[test]
    fn convex_instance_matches_qp() {
        // min 1/2 |z|^2 + x'z over [-1,1]^2: convex, solved as one QP
        let problem = crate::model::tests::box_qp(DMatrix::identity(2, 2));
        let x = dvec(&[0.3, -0.7]);
        let (v, z) = reference_oracle(&problem, &x, &OracleOptions::default()).unwrap();
        assert_relative_eq!(z[0], -0.3, epsilon = 1e-6);
        assert_relative_eq!(z[1], 0.7, epsilon = 1e-6);
        assert_relative_eq!(v, -0.5 * (0.09 + 0.49), epsilon = 1e-6);
    }

    #[test]
    fn sparsity_support_enumeration() {
        // min 1/2 |z - x|^2 with at most one nonzero: keep the largest |x_i|
        let n = 3;
        let problem = ParametricProblem {
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
        };
        let x = dvec(&[0.5, -2.0, 1.0]);
        let (v, z) = reference_oracle(&problem, &x, &OracleOptions::default()).unwrap();
        assert_relative_eq!(z[1], -2.0, epsilon = 1e-7);
        assert_relative_eq!(z[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(z[2], 0.0, epsilon = 1e-9);
        // value relative to the constant |x|^2/2 term left out of f
        assert_relative_eq!(v, -0.5 * 4.0, epsilon = 1e-6);
    }

    #[test]
    fn scale_guard_rejects_wide_grids() {
        let problem = crate::model::tests::box_qp(DMatrix::from_row_slice(
            1,
            1,
            &[-1.0],
        ));
        let x = dvec(&[0.0]);
        let opts = OracleOptions { grid: 100, max_points: 10, ..OracleOptions::default() };
        assert!(matches!(
            reference_oracle(&problem, &x, &opts),
            Err(OracleError::ScaleGuard(_))
        ));
    }
}
