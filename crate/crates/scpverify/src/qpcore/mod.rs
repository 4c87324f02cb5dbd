//! Embedded convex QP/LP solver in the standard form
//!
//! ```text
//!     minimize    1/2 u' P u + c' u          maximize  -1/2 u' P u - b' y
//!     subject to  A u + s = b                subject to  P u + A' y + c = 0
//!                 s >= 0                                  y >= 0
//! ```
//!
//! The solver is an operator-splitting (ADMM) primal-dual iteration with
//! over-relaxation, Ruiz equilibration, and an active-set polish step that
//! pushes residuals toward machine precision after convergence. One
//! algorithm serves QPs and LPs and produces Farkas infeasibility
//! certificates from the divergence of the dual iterates.

mod admm;
mod simplex;

pub use admm::{solve_qp, solve_qp_warm};
pub use simplex::{solve_bounded_lp, Basis, BoundedLp, SimplexResult, SimplexStatus};

use nalgebra::{DMatrix, DVector};

/// Default solve tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Convex QP data in standard form.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardQp {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl StandardQp {
    pub fn new(p: DMatrix<f64>, c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        StandardQp { p, c, a, b }
    }

    /// LP data (P = 0).
    pub fn lp(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = c.len();
        StandardQp {
            p: DMatrix::zeros(n, n),
            c,
            a,
            b,
        }
    }

    pub fn n_u(&self) -> usize {
        self.c.len()
    }

    pub fn n_y(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_u();
        let m = self.n_y();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(QpError::Dimension("P".into()));
        }
        if self.a.nrows() != m || (m > 0 && self.a.ncols() != n) {
            return Err(QpError::Dimension("A".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > 1e-10 {
                    return Err(QpError::NotSymmetric);
                }
            }
        }
        Ok(())
    }

    pub fn primal_objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u.transpose() * &self.p * u)[(0, 0)] + self.c.dot(u)
    }

    pub fn dual_objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        -0.5 * (u.transpose() * &self.p * u)[(0, 0)] - self.b.dot(y)
    }
}

/// Infinity-norm KKT residuals of a candidate primal-dual triple.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KktResiduals {
    /// `||A u + s - b||_inf`
    pub primal: f64,
    /// `||P u + A' y + c||_inf`
    pub dual: f64,
    /// `|s' y|`
    pub comp: f64,
    /// `max(||min(s, 0)||_inf, ||min(y, 0)||_inf)`
    pub sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.comp).max(self.sign)
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

/// Result of a solve. On `PrimalInfeasible`, `y` carries the Farkas
/// certificate (`A' y ~ 0`, `y >= 0`, `b' y < 0`).
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub s: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
    /// Final ADMM step size; feed it back as a warm start for a nearby
    /// problem.
    pub rho: f64,
}

impl QpSolution {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "u": self.u.iter().cloned().collect::<Vec<f64>>(),
            "s": self.s.iter().cloned().collect::<Vec<f64>>(),
            "y": self.y.iter().cloned().collect::<Vec<f64>>(),
            "residuals": self.residuals,
            "iterations": self.iterations,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch in {0}")]
    Dimension(String),
    #[error("P is not symmetric")]
    NotSymmetric,
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// The four KKT residual norms of `(u, s, y)` for `qp`, exactly as defined.
pub fn kkt_residuals(qp: &StandardQp, u: &DVector<f64>, s: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let primal = if qp.n_y() > 0 {
        (&qp.a * u + s - &qp.b).amax()
    } else {
        0.0
    };
    let dual = if qp.n_y() > 0 {
        (&qp.p * u + qp.a.transpose() * y + &qp.c).amax()
    } else {
        (&qp.p * u + &qp.c).amax()
    };
    let comp = s.dot(y).abs();
    let sign_s = s.iter().cloned().fold(0.0_f64, |acc, v| acc.max((-v).max(0.0)));
    let sign_y = y.iter().cloned().fold(0.0_f64, |acc, v| acc.max((-v).max(0.0)));
    KktResiduals {
        primal,
        dual,
        comp,
        sign: sign_s.max(sign_y),
    }
}

/// Variable bound for [`solve_lp`].
#[derive(Debug, Clone, Copy)]
pub struct VarBound {
    pub lower: f64,
    pub upper: f64,
}

/// Solve an LP `minimize c' u` subject to `A u <= b` and explicit variable
/// bounds. Bounds are kept out of the caller's `A`; internally they join
/// the constraint block so one solve covers everything.
pub fn solve_lp(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    bounds: &[VarBound],
    tol: f64,
) -> Result<QpSolution, QpError> {
    let n = c.len();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..a.nrows() {
        rows.push(a.row(i).transpose());
        rhs.push(b[i]);
    }
    for (j, bd) in bounds.iter().enumerate() {
        if bd.upper.is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = 1.0;
            rows.push(r);
            rhs.push(bd.upper);
        }
        if bd.lower.is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = -1.0;
            rows.push(r);
            rhs.push(-bd.lower);
        }
    }
    let m = rows.len();
    let mut a_full = DMatrix::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        a_full.set_row(i, &r.transpose());
    }
    let qp = StandardQp::lp(c.clone(), a_full, DVector::from_vec(rhs));
    let mut sol = solve_qp(&qp, tol, DEFAULT_MAX_ITER)?;
    // Trim the bound block so the returned s, y match the caller's rows.
    let keep = a.nrows();
    sol.s = DVector::from_iterator(keep, sol.s.iter().take(keep).cloned());
    let y_full = sol.y.clone();
    sol.y = DVector::from_iterator(keep, y_full.iter().take(keep).cloned());
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = StandardQp::new(
            DMatrix::identity(2, 2),
            dvec(&[-1.0, -1.0]),
            DMatrix::zeros(0, 2),
            dvec(&[]),
        );
        let sol = solve_qp(&qp, 1e-9, 10_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.u[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn lp_active_bound() {
        // minimize u subject to -u <= -2: u = 2, y = 1 by stationarity.
        let qp = StandardQp::lp(
            dvec(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            dvec(&[-2.0]),
        );
        let sol = solve_qp(&qp, 1e-9, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(sol.y[0], 1.0, epsilon = 1e-7);
        assert!(sol.residuals.max() <= 1e-9);
    }

    #[test]
    fn contradictory_bounds_certificate() {
        // u <= 0 and -u <= -1 is infeasible; Farkas: y = (t, t), b' y = -t.
        let qp = StandardQp::lp(
            dvec(&[0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            dvec(&[0.0, -1.0]),
        );
        let sol = solve_qp(&qp, 1e-9, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
        let y = &sol.y;
        let ynorm = y.amax();
        assert!(ynorm > 0.0);
        assert!((qp.a.transpose() * y).amax() <= 1e-6 * ynorm);
        assert!(y.min() >= -1e-9 * ynorm);
        assert!(qp.b.dot(y) < -1e-6 * ynorm);
    }

    #[test]
    fn residuals_at_exact_optimum() {
        let qp = StandardQp::new(
            DMatrix::identity(2, 2),
            dvec(&[-1.0, -1.0]),
            DMatrix::zeros(0, 2),
            dvec(&[]),
        );
        let r = kkt_residuals(&qp, &dvec(&[1.0, 1.0]), &dvec(&[]), &dvec(&[]));
        assert!(r.max() <= 1e-12);
    }

    #[test]
    fn residuals_perturbed_primal() {
        // LP from lp_active_bound; perturb u by 0.1 with s unchanged.
        let qp = StandardQp::lp(
            dvec(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            dvec(&[-2.0]),
        );
        let r = kkt_residuals(&qp, &dvec(&[2.1]), &dvec(&[0.0]), &dvec(&[1.0]));
        assert_relative_eq!(r.primal, 0.1, epsilon = 1e-12);
        assert_relative_eq!(r.dual, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residuals_comp_definition() {
        let qp = StandardQp::lp(
            dvec(&[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            dvec(&[1.0]),
        );
        let r = kkt_residuals(&qp, &dvec(&[0.0]), &dvec(&[1.0]), &dvec(&[1.0]));
        assert_relative_eq!(r.comp, 1.0);
    }

    #[test]
    fn lp_simplex_corner() {
        // minimize -u1 - u2 s.t. u1 + u2 <= 1, u >= 0: value -1.
        let c = dvec(&[-1.0, -1.0]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = dvec(&[1.0]);
        let bounds = [
            VarBound { lower: 0.0, upper: f64::INFINITY },
            VarBound { lower: 0.0, upper: f64::INFINITY },
        ];
        let sol = solve_lp(&c, &a, &b, &bounds, 1e-9).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(c.dot(&sol.u), -1.0, epsilon = 1e-7);
    }

    #[test]
    fn mccormick_box_lp() {
        // Relaxation of w = u*v on [0,1]^2, minimize -w.
        // Rows: w >= u + v - 1, w <= u, w <= v, w >= 0 with vars (u, v, w).
        // Expected: maximize w gives w = 1 at (1, 1); derived by vertex
        // enumeration of the 4-inequality envelope.
        let c = dvec(&[0.0, 0.0, -1.0]);
        let a = DMatrix::from_row_slice(
            2,
            3,
            &[
                -1.0, 0.0, 1.0, // w - u <= 0
                0.0, -1.0, 1.0, // w - v <= 0
            ],
        );
        let b = dvec(&[0.0, 0.0]);
        let bounds = [
            VarBound { lower: 0.0, upper: 1.0 },
            VarBound { lower: 0.0, upper: 1.0 },
            VarBound { lower: 0.0, upper: 1.0 },
        ];
        let sol = solve_lp(&c, &a, &b, &bounds, 1e-9).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[2], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn random_strictly_convex_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(1..=8);
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let p = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let qp = StandardQp::new(p.clone(), c.clone(), DMatrix::zeros(0, n), dvec(&[]));
            let sol = solve_qp(&qp, 1e-9, 50_000).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            let expected = p.clone().lu().solve(&(-&c)).unwrap();
            assert!((sol.u - expected).amax() <= 1e-6);
        }
    }

    #[test]
    fn self_duality_gap() {
        // Box-constrained strictly convex QP: primal and dual objectives agree.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 3;
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let p = &m * m.transpose() + DMatrix::identity(n, n);
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let mut a = DMatrix::zeros(2 * n, n);
            let mut b = DVector::zeros(2 * n);
            for j in 0..n {
                a[(2 * j, j)] = 1.0;
                b[2 * j] = 0.5;
                a[(2 * j + 1, j)] = -1.0;
                b[2 * j + 1] = 0.5;
            }
            let qp = StandardQp::new(p, c, a, b);
            let tol = 1e-9;
            let sol = solve_qp(&qp, tol, 100_000).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            let gap = (qp.primal_objective(&sol.u) - qp.dual_objective(&sol.u, &sol.y)).abs();
            assert!(gap <= 10.0 * tol.max(1e-8), "gap {gap}");
        }
    }
}
