//! Bounded-variable dual simplex for the node relaxations.
//!
//! Solves min c'x subject to A x <= b and box bounds l <= x <= u with all
//! structural bounds finite. Slacks turn the rows into A x + s = b with
//! s >= 0; the all-slack basis with each structural resting at the bound
//! matching the sign of its cost is dual feasible, so the dual simplex
//! starts immediately and, more importantly, restarts from a parent basis
//! after a bound change in a handful of pivots.
//!
//! The basis inverse is kept explicitly and updated by the standard
//! elementary transformation per pivot, with periodic refactorization from
//! scratch. The caller treats the returned duals as untrusted input to a
//! weak-duality bound, so occasional numerical trouble degrades bound
//! quality rather than correctness.

use nalgebra::{DMatrix, DVector};

/// An LP in the solver's native shape.
#[derive(Debug, Clone)]
pub struct BoundedLp {
    /// Cost, length n.
    pub c: DVector<f64>,
    /// Row-major constraint matrix, m x n.
    pub a: DMatrix<f64>,
    /// Right-hand side of `A x <= b`.
    pub b: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    /// A row proves the box and the rows incompatible; `y` holds the ray.
    Infeasible,
    IterLimit,
}

/// Basis snapshot for warm starting; opaque to callers.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    /// Basic column per row (columns n..n+m are slacks).
    basic: Vec<usize>,
    /// Resting bound per column: false = lower, true = upper. Entries for
    /// basic columns are ignored.
    at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: DVector<f64>,
    /// Row multipliers, >= 0 at an optimum of the `<=` system. On
    /// `Infeasible` this is the certificate ray instead.
    pub y: DVector<f64>,
    pub status: SimplexStatus,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Basis,
}

const FEAS_TOL: f64 = 1e-9;
/// Residual bound violation accepted as feasible when no pivot can repair
/// it. Node boxes tightened to widths near `FEAS_TOL` produce systems that
/// are infeasible at 1e-9 but feasible at 1e-6; declaring those infeasible
/// would be wrong at the caller's tolerance.
const RELAXED_FEAS: f64 = 1e-6;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 120;

struct Tableau<'p> {
    lp: &'p BoundedLp,
    n: usize,
    m: usize,
    basic: Vec<usize>,
    /// Row index of each basic column, usize::MAX when nonbasic.
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    /// Working bounds per column (structurals then slacks); see `col_lo`.
    lo_ext: Vec<f64>,
    hi_ext: Vec<f64>,
}

impl<'p> Tableau<'p> {
    /// Bound value a nonbasic column rests at.
    fn rest(&self, j: usize) -> f64 {
        if j >= self.n {
            0.0 // slack lower bound; slacks never rest at the (infinite) top
        } else if self.at_upper[j] {
            self.lp.hi[j]
        } else {
            self.lp.lo[j]
        }
    }

    /// Feasibility bounds used by the pivoting loop. These start as the
    /// problem bounds and get shifted outward by tiny amounts when a
    /// degenerate row cannot be repaired; resting values always use the
    /// original bounds, so shifted bounds never move the solution, they
    /// only stop the dual simplex from stalling on sub-tolerance conflicts.
    fn col_lo(&self, j: usize) -> f64 {
        self.lo_ext[j]
    }

    fn col_hi(&self, j: usize) -> f64 {
        self.hi_ext[j]
    }

    fn cost(&self, j: usize) -> f64 {
        if j >= self.n {
            0.0
        } else {
            self.lp.c[j]
        }
    }

    /// Column j of [A | I].
    fn column(&self, j: usize, out: &mut DVector<f64>) {
        if j >= self.n {
            out.fill(0.0);
            out[j - self.n] = 1.0;
        } else {
            out.copy_from(&self.lp.a.column(j));
        }
    }

    /// Rebuild the basis inverse and basic values from scratch.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut bmat = DMatrix::zeros(m, m);
        let mut col = DVector::zeros(m);
        for (r, &j) in self.basic.iter().enumerate() {
            self.column(j, &mut col);
            bmat.set_column(r, &col);
        }
        let lu = bmat.lu();
        match lu.try_inverse() {
            Some(inv) => {
                self.binv = inv;
                self.recompute_xb();
                true
            }
            None => false,
        }
    }

    fn recompute_xb(&mut self) {
        // x_B = B^-1 (b - sum over nonbasic of column * resting value)
        let mut rhs = self.lp.b.clone();
        for j in 0..self.n {
            if self.row_of[j] == usize::MAX {
                let v = self.rest(j);
                if v != 0.0 {
                    rhs.axpy(-v, &self.lp.a.column(j).clone_owned(), 1.0);
                }
            }
        }
        // nonbasic slacks rest at zero: no contribution
        self.xb = &self.binv * rhs;
    }

    /// Equality multipliers pi' = c_B' B^-1.
    fn multipliers(&self) -> DVector<f64> {
        let mut cb = DVector::zeros(self.m);
        for (r, &j) in self.basic.iter().enumerate() {
            cb[r] = self.cost(j);
        }
        self.binv.tr_mul(&cb)
    }
}

/// Solve, optionally restarting from a previous basis of a problem with the
/// same shape (typically the parent node's).
pub fn solve_bounded_lp(
    lp: &BoundedLp,
    warm: Option<&Basis>,
    max_iter: usize,
) -> SimplexResult {
    let n = lp.c.len();
    let m = lp.b.len();
    let ncols = n + m;

    let fail = |status: SimplexStatus, basis: Basis| SimplexResult {
        x: DVector::zeros(n),
        y: DVector::zeros(m),
        status,
        objective: f64::NAN,
        iterations: 0,
        basis,
    };

    // Fresh start: all-slack basis, structurals at the dual-feasible bound.
    let cold = || Basis {
        basic: (n..ncols).collect(),
        at_upper: (0..ncols).map(|j| j < n && lp.c[j] < 0.0).collect(),
    };
    let mut basis = match warm {
        Some(w) if w.basic.len() == m && w.at_upper.len() == ncols => w.clone(),
        _ => cold(),
    };

    let mut t = Tableau {
        lp,
        n,
        m,
        basic: basis.basic.clone(),
        row_of: vec![usize::MAX; ncols],
        at_upper: basis.at_upper.clone(),
        binv: DMatrix::identity(m, m),
        xb: DVector::zeros(m),
        lo_ext: (0..ncols)
            .map(|j| if j < n { lp.lo[j] } else { 0.0 })
            .collect(),
        hi_ext: (0..ncols)
            .map(|j| if j < n { lp.hi[j] } else { f64::INFINITY })
            .collect(),
    };
    for (r, &j) in t.basic.iter().enumerate() {
        t.row_of[j] = r;
    }
    if !t.refactor() {
        // singular warm basis: drop back to the slack basis
        basis = cold();
        t.basic = basis.basic.clone();
        t.at_upper = basis.at_upper.clone();
        t.row_of = vec![usize::MAX; ncols];
        for (r, &j) in t.basic.iter().enumerate() {
            t.row_of[j] = r;
        }
        if !t.refactor() {
            return fail(SimplexStatus::IterLimit, basis);
        }
    }

    // A warm basis solved a neighboring problem, so it can be dual
    // infeasible here. Structurals are repaired by flipping their resting
    // side; a nonbasic slack with a positive row multiplier has no upper
    // bound to flip to, so that basis is discarded for the cold one (which
    // is dual feasible by construction). Skipping this check would let the
    // dual simplex stop at a primal feasible, suboptimal point and call it
    // optimal.
    {
        let pi = t.multipliers();
        let mut slack_bad = false;
        for i in 0..m {
            let j = n + i;
            if t.row_of[j] == usize::MAX && pi[i] > DUAL_TOL {
                slack_bad = true;
                break;
            }
        }
        if slack_bad {
            basis = cold();
            t.basic = basis.basic.clone();
            t.at_upper = basis.at_upper.clone();
            t.row_of = vec![usize::MAX; ncols];
            for (r, &j) in t.basic.iter().enumerate() {
                t.row_of[j] = r;
            }
            if !t.refactor() {
                return fail(SimplexStatus::IterLimit, basis);
            }
        } else {
            let mut col = DVector::zeros(m);
            for j in 0..n {
                if t.row_of[j] != usize::MAX {
                    continue;
                }
                t.column(j, &mut col);
                let d = t.cost(j) - pi.dot(&col);
                if t.at_upper[j] && d > DUAL_TOL {
                    t.at_upper[j] = false;
                } else if !t.at_upper[j] && d < -DUAL_TOL {
                    t.at_upper[j] = true;
                }
            }
            t.recompute_xb();
        }
    }

    let mut col = DVector::zeros(m);
    let mut since_refactor = 0usize;
    let mut iters = 0usize;
    let mut shifts = 0usize;
    let bland_after = max_iter / 2;

    loop {
        if iters >= max_iter {
            break;
        }
        // leaving row: worst bound violation among basic variables
        let mut leave: Option<(f64, usize)> = None;
        for r in 0..m {
            let j = t.basic[r];
            let below = t.col_lo(j) - t.xb[r];
            let above = t.xb[r] - t.col_hi(j);
            let v = below.max(above);
            if v > FEAS_TOL && leave.as_ref().map_or(true, |&(best, _)| v > best) {
                leave = Some((v, r));
            }
        }
        let Some((_, r)) = leave else {
            // Primal feasible and the pivoting kept dual feasibility. The
            // explicit inverse drifts over pivots, so check the multipliers
            // against the basic columns (their reduced costs must vanish)
            // and refactorize once if they do not.
            let mut pi = t.multipliers();
            {
                let mut colv = DVector::zeros(m);
                let mut drift = 0.0f64;
                for &j in &t.basic {
                    t.column(j, &mut colv);
                    drift = drift.max((t.cost(j) - pi.dot(&colv)).abs());
                }
                if drift > 1e-8 && t.refactor() {
                    pi = t.multipliers();
                }
            }
            let pi = pi;
            let mut x = DVector::zeros(n);
            for j in 0..n {
                let v = if t.row_of[j] == usize::MAX {
                    t.rest(j)
                } else {
                    t.xb[t.row_of[j]]
                };
                // basic values can sit a shifted hair outside the box
                x[j] = v.clamp(lp.lo[j], lp.hi[j]);
            }
            if std::env::var("SCPVERIFY_SIMPLEX_AUDIT").is_ok() {
                let mut colv = DVector::zeros(m);
                let mut worst = 0.0f64;
                let mut worst_j = usize::MAX;
                for j in 0..ncols {
                    if t.row_of[j] != usize::MAX {
                        continue;
                    }
                    if j < n && lp.hi[j] - lp.lo[j] < 1e-12 {
                        continue;
                    }
                    t.column(j, &mut colv);
                    let d = t.cost(j) - pi.dot(&colv);
                    let bad = if j < n && t.at_upper[j] { d } else { -d };
                    if bad > worst {
                        worst = bad;
                        worst_j = j;
                    }
                }
                if worst > 1e-7 {
                    eprintln!(
                        "simplex audit: wrong-sign reduced cost {} at col {} (n={}, iters={}, shifts={})",
                        worst, worst_j, n, iters, shifts
                    );
                }
            }
            let y = DVector::from_fn(m, |i, _| (-pi[i]).max(0.0));
            let objective = lp.c.dot(&x);
            return SimplexResult {
                x,
                y,
                status: SimplexStatus::Optimal,
                objective,
                iterations: iters,
                basis: Basis { basic: t.basic.clone(), at_upper: t.at_upper.clone() },
            };
        };
        iters += 1;

        let jl = t.basic[r];
        // sigma = +1 when the basic value must increase (below its lower
        // bound), -1 when it must decrease
        let sigma = if t.xb[r] < t.col_lo(jl) { 1.0 } else { -1.0 };
        let rho = t.binv.row(r).transpose();
        let pi = t.multipliers();

        // dual ratio test over nonbasic columns
        let mut enter: Option<(f64, usize, f64)> = None; // (ratio, column, alpha)
        for j in 0..ncols {
            if t.row_of[j] != usize::MAX {
                continue;
            }
            t.column(j, &mut col);
            let alpha = rho.dot(&col);
            if alpha.abs() <= PIVOT_TOL {
                continue;
            }
            // moving z_j off its resting bound must push x_B[r] toward
            // feasibility: dx_B[r] = -alpha * dz_j
            let at_up = j < n && t.at_upper[j];
            let pushes = if at_up {
                // z_j can only decrease
                sigma * alpha > 0.0
            } else {
                // z_j can only increase
                sigma * alpha < 0.0
            };
            if !pushes {
                continue;
            }
            let d = t.cost(j) - pi.dot(&col);
            let ratio = (d / alpha).abs();
            let better = match enter {
                None => true,
                Some((best, bj, _)) => {
                    if iters > bland_after {
                        // Bland-flavored anti-cycling: smallest index wins
                        j < bj && ratio <= best + DUAL_TOL
                    } else {
                        ratio < best - 1e-12
                            || (ratio < best + 1e-12 && alpha.abs() > PIVOT_TOL * 10.0)
                    }
                }
            };
            if better {
                enter = Some((ratio, j, alpha));
            }
        }
        let Some((_, je, alpha)) = enter else {
            // No column can repair the row. A sub-tolerance conflict here
            // is an artifact of box widths near machine precision, not real
            // infeasibility; shift the working bound past the violation and
            // keep pivoting so the dual still reaches its optimum. The
            // shifted bound never enters the returned solution or the
            // caller's Lagrangian, so it costs nothing in rigor.
            let jl2 = t.basic[r];
            let viol = (t.col_lo(jl2) - t.xb[r]).max(t.xb[r] - t.col_hi(jl2));
            if viol <= RELAXED_FEAS * (1.0 + t.xb[r].abs()) && shifts < m + n {
                if t.xb[r] < t.col_lo(jl2) {
                    t.lo_ext[jl2] = t.xb[r] - FEAS_TOL;
                } else {
                    t.hi_ext[jl2] = t.xb[r] + FEAS_TOL;
                }
                shifts += 1;
                continue;
            }
            if viol <= RELAXED_FEAS * (1.0 + t.xb[r].abs()) {
                // shift budget exhausted: stop honestly on the cap
                break;
            }
            // the constraint system and the box are incompatible;
            // sigma * rho is the certificate ray
            let y = DVector::from_fn(m, |i, _| (sigma * rho[i]).max(0.0));
            return SimplexResult {
                x: DVector::zeros(n),
                y,
                status: SimplexStatus::Infeasible,
                objective: f64::INFINITY,
                iterations: iters,
                basis: Basis { basic: t.basic.clone(), at_upper: t.at_upper.clone() },
            };
        };

        // pivot: je enters at row r, jl leaves to its violated bound
        t.column(je, &mut col);
        let w = &t.binv * &col;
        let wr = w[r];
        if wr.abs() <= PIVOT_TOL {
            break; // numerically unusable pivot; bail to the iteration cap
        }
        debug_assert!((wr - alpha).abs() <= 1e-6 * (1.0 + alpha.abs()));
        // elementary row transformation of the inverse
        let pivot_row = t.binv.row(r).clone_owned();
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = w[i] / wr;
            if f != 0.0 {
                for k in 0..m {
                    t.binv[(i, k)] -= f * pivot_row[k];
                }
            }
        }
        for k in 0..m {
            t.binv[(r, k)] /= wr;
        }
        t.at_upper[jl] = t.xb[r] > t.col_hi(jl);
        t.row_of[jl] = usize::MAX;
        t.row_of[je] = r;
        t.basic[r] = je;

        since_refactor += 1;
        if since_refactor >= REFACTOR_EVERY {
            since_refactor = 0;
            if !t.refactor() {
                break;
            }
        } else {
            t.recompute_xb();
        }
    }

    // Iteration cap or numerical trouble: return the current multipliers;
    // the caller's weak-duality functional stays valid with any y >= 0.
    let pi = t.multipliers();
    let mut x = DVector::zeros(n);
    for j in 0..n {
        let v = if t.row_of[j] == usize::MAX {
            t.rest(j)
        } else {
            t.xb[t.row_of[j]]
        };
        x[j] = v.clamp(lp.lo[j], lp.hi[j]);
    }
    let y = DVector::from_fn(m, |i, _| (-pi[i]).max(0.0));
    let objective = lp.c.dot(&x);
    SimplexResult {
        x,
        y,
        status: SimplexStatus::IterLimit,
        objective,
        iterations: iters,
        basis: Basis { basic: t.basic.clone(), at_upper: t.at_upper.clone() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qpcore::{solve_qp, StandardQp};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn box_only_minimum_sits_at_bounds() {
        let lp = BoundedLp {
            c: dvec(&[1.0, -2.0, 0.0]),
            a: DMatrix::zeros(0, 3),
            b: dvec(&[]),
            lo: dvec(&[-1.0, -1.0, 2.0]),
            hi: dvec(&[3.0, 5.0, 4.0]),
        };
        let r = solve_bounded_lp(&lp, None, 100);
        assert_eq!(r.status, SimplexStatus::Optimal);
        assert_relative_eq!(r.x[0], -1.0, epsilon = 1e-9);
        assert_relative_eq!(r.x[1], 5.0, epsilon = 1e-9);
        assert_relative_eq!(r.objective, -11.0, epsilon = 1e-9);
    }

    #[test]
    fn single_row_binds() {
        // min -x - y, x + y <= 1, box [0, 1]^2
        let lp = BoundedLp {
            c: dvec(&[-1.0, -1.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: dvec(&[1.0]),
            lo: dvec(&[0.0, 0.0]),
            hi: dvec(&[1.0, 1.0]),
        };
        let r = solve_bounded_lp(&lp, None, 100);
        assert_eq!(r.status, SimplexStatus::Optimal);
        assert_relative_eq!(r.objective, -1.0, epsilon = 1e-9);
        assert_relative_eq!(r.x[0] + r.x[1], 1.0, epsilon = 1e-9);
        // dual of the binding row is 1
        assert_relative_eq!(r.y[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn detects_infeasible_rows() {
        // x <= -1 with x in [0, 1]
        let lp = BoundedLp {
            c: dvec(&[1.0]),
            a: DMatrix::from_row_slice(1, 1, &[1.0]),
            b: dvec(&[-1.0]),
            lo: dvec(&[0.0]),
            hi: dvec(&[1.0]),
        };
        let r = solve_bounded_lp(&lp, None, 100);
        assert_eq!(r.status, SimplexStatus::Infeasible);
        // certificate: y >= 0 with A'y supported on the box giving b'y < 0
        assert!(r.y[0] > 0.0);
    }

    #[test]
    fn matches_admm_on_random_lps() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut solved = 0;
        for trial in 0..200 {
            let n = rng.gen_range(2..7);
            let m = rng.gen_range(1..10);
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let lo = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..0.0));
            let hi = DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0));
            // rhs chosen so the box center is feasible: every LP is feasible
            let center = (&lo + &hi) * 0.5;
            let b = &a * &center + DVector::from_fn(m, |_, _| rng.gen_range(0.05..1.0));
            let lp = BoundedLp { c: c.clone(), a: a.clone(), b: b.clone(), lo: lo.clone(), hi: hi.clone() };
            let r = solve_bounded_lp(&lp, None, 2000);
            assert_eq!(r.status, SimplexStatus::Optimal, "trial {trial}");
            // feasibility of the reported point
            let ax = &a * &r.x;
            for i in 0..m {
                assert!(ax[i] <= b[i] + 1e-7, "trial {trial} row {i}");
            }
            for j in 0..n {
                assert!(r.x[j] >= lo[j] - 1e-9 && r.x[j] <= hi[j] + 1e-9);
            }
            // cross-check the optimal value against the ADMM solver on the
            // stacked system (rows + box as inequalities)
            let mt = m + 2 * n;
            let mut aa = DMatrix::zeros(mt, n);
            let mut bb = DVector::zeros(mt);
            aa.view_mut((0, 0), (m, n)).copy_from(&a);
            bb.rows_mut(0, m).copy_from(&b);
            for j in 0..n {
                aa[(m + j, j)] = 1.0;
                bb[m + j] = hi[j];
                aa[(m + n + j, j)] = -1.0;
                bb[m + n + j] = -lo[j];
            }
            let qp = StandardQp::lp(c.clone(), aa, bb);
            let sol = solve_qp(&qp, 1e-9, 200_000).unwrap();
            if sol.status == crate::qpcore::QpStatus::Optimal {
                assert_relative_eq!(r.objective, c.dot(&sol.u), epsilon = 1e-5);
                solved += 1;
            }
            // weak duality of the returned multipliers: for any y >= 0,
            // -b'y + min over box of (c + A'y)'x lower-bounds the optimum
            let mut lbv = -b.dot(&r.y);
            let red = &c + a.tr_mul(&r.y);
            for j in 0..n {
                lbv += (red[j] * lo[j]).min(red[j] * hi[j]);
            }
            assert!(lbv <= r.objective + 1e-6, "trial {trial}: {lbv} > {}", r.objective);
            assert_relative_eq!(lbv, r.objective, epsilon = 1e-5);
        }
        assert!(solved > 150, "cross-checked {solved} of 200");
    }

    #[test]
    fn warm_start_after_bound_change_is_cheap() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 8;
        let m = 12;
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let lo = DVector::from_element(n, -1.0);
        let hi = DVector::from_element(n, 1.0);
        let b = DVector::from_fn(m, |_, _| rng.gen_range(0.5..2.0));
        let lp = BoundedLp { c, a, b, lo, hi };
        let cold = solve_bounded_lp(&lp, None, 2000);
        assert_eq!(cold.status, SimplexStatus::Optimal);

        let mut child = lp.clone();
        child.hi[3] = 0.25; // a branching step
        let warm = solve_bounded_lp(&child, Some(&cold.basis), 2000);
        let scratch = solve_bounded_lp(&child, None, 2000);
        assert_eq!(warm.status, SimplexStatus::Optimal);
        assert_relative_eq!(warm.objective, scratch.objective, epsilon = 1e-8);
        assert!(
            warm.iterations <= scratch.iterations,
            "warm {} vs cold {}",
            warm.iterations,
            scratch.iterations
        );
    }

    #[test]
    fn degenerate_equal_rows_terminate() {
        // duplicated binding rows force degenerate pivots
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        let lp = BoundedLp {
            c: dvec(&[-1.0, -1.0]),
            a,
            b: dvec(&[1.0, 1.0, 1.0, 0.0]),
            lo: dvec(&[0.0, 0.0]),
            hi: dvec(&[2.0, 2.0]),
        };
        let r = solve_bounded_lp(&lp, None, 1000);
        assert_eq!(r.status, SimplexStatus::Optimal);
        assert_relative_eq!(r.objective, -1.0, epsilon = 1e-8);
    }
}
