//! ADMM iteration with over-relaxation, Ruiz equilibration, active-set
//! polish, and divergence-based infeasibility certificates.

use super::{kkt_residuals, QpError, QpSolution, QpStatus, StandardQp};
use nalgebra::{DMatrix, DVector};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const CHECK_EVERY: usize = 25;
const ADAPT_EVERY: usize = 100;
const RUIZ_ITERS: usize = 10;
const EPS_INFEAS: f64 = 1e-7;
const POLISH_REG: f64 = 1e-9;

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
}

/// Modified Ruiz equilibration of the stacked KKT matrix.
fn ruiz(qp: &StandardQp) -> (StandardQp, Scaling) {
    let n = qp.n_u();
    let m = qp.n_y();
    let mut p = qp.p.clone();
    let mut a = qp.a.clone();
    let mut c = qp.c.clone();
    let mut b = qp.b.clone();
    let mut d_cum = DVector::from_element(n, 1.0);
    let mut e_cum = DVector::from_element(m, 1.0);

    for _ in 0..RUIZ_ITERS {
        let mut d = DVector::from_element(n, 1.0);
        for j in 0..n {
            let mut norm: f64 = 0.0;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(a[(i, j)].abs());
            }
            if norm > 1e-12 {
                d[j] = 1.0 / norm.sqrt();
            }
        }
        let mut e = DVector::from_element(m, 1.0);
        for i in 0..m {
            let norm = a.row(i).amax();
            if norm > 1e-12 {
                e[i] = 1.0 / norm.sqrt();
            }
        }
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] *= d[i] * d[j];
            }
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= e[i] * d[j];
            }
        }
        for j in 0..n {
            c[j] *= d[j];
            d_cum[j] *= d[j];
        }
        for i in 0..m {
            b[i] *= e[i];
            e_cum[i] *= e[i];
        }
    }
    (
        StandardQp { p, c, a, b },
        Scaling { d: d_cum, e: e_cum },
    )
}

fn factor_kkt(qp: &StandardQp, rho: f64) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let n = qp.n_u();
    let m = qp.n_y();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = qp.p[(i, j)];
        }
        kkt[(i, i)] += SIGMA;
    }
    for i in 0..m {
        for j in 0..n {
            kkt[(n + i, j)] = qp.a[(i, j)];
            kkt[(j, n + i)] = qp.a[(i, j)];
        }
        kkt[(n + i, n + i)] = -1.0 / rho;
    }
    kkt.lu()
}

/// Unconstrained case: stationarity `P u + c = 0` solved directly.
fn solve_unconstrained(qp: &StandardQp) -> QpSolution {
    let n = qp.n_u();
    let empty = DVector::zeros(0);
    let svd = qp.p.clone().svd(true, true);
    let u = svd
        .solve(&(-&qp.c), 1e-12)
        .unwrap_or_else(|_| DVector::zeros(n));
    let res = kkt_residuals(qp, &u, &empty, &empty);
    if res.dual <= 1e-10 * (1.0 + qp.c.amax()) {
        QpSolution {
            u,
            s: empty.clone(),
            y: empty,
            status: QpStatus::Optimal,
            residuals: res,
            iterations: 0,
            rho: RHO_INIT,
        }
    } else {
        // c has a component outside range(P): objective unbounded below.
        QpSolution {
            u,
            s: empty.clone(),
            y: empty,
            status: QpStatus::DualInfeasible,
            residuals: res,
            iterations: 0,
            rho: RHO_INIT,
        }
    }
}

/// Active-set refinement. Solves the equality-constrained KKT system on the
/// detected active set with a regularized factorization plus iterative
/// refinement, then re-checks the full residuals.
fn polish(qp: &StandardQp, u0: &DVector<f64>, s0: &DVector<f64>, y0: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = qp.n_u();
    let m = qp.n_y();
    let active: Vec<usize> = (0..m).filter(|&i| y0[i] > s0[i]).collect();
    let na = active.len();
    let dim = n + na;

    let mut k_reg = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            k_reg[(i, j)] = qp.p[(i, j)];
        }
        k_reg[(i, i)] += POLISH_REG;
    }
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            k_reg[(n + r, j)] = qp.a[(i, j)];
            k_reg[(j, n + r)] = qp.a[(i, j)];
        }
        k_reg[(n + r, n + r)] = -POLISH_REG;
    }
    let lu = k_reg.lu();

    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -qp.c[i];
    }
    for (r, &i) in active.iter().enumerate() {
        rhs[n + r] = qp.b[i];
    }

    let mut x = DVector::zeros(dim);
    x.rows_mut(0, n).copy_from(u0);
    for (r, &i) in active.iter().enumerate() {
        x[n + r] = y0[i];
    }
    // Refine against the unregularized system.
    for _ in 0..4 {
        let mut resid = rhs.clone();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += qp.p[(i, j)] * x[j];
            }
            for (r, &row) in active.iter().enumerate() {
                acc += qp.a[(row, i)] * x[n + r];
            }
            resid[i] -= acc;
        }
        for (r, &row) in active.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += qp.a[(row, j)] * x[j];
            }
            resid[n + r] -= acc;
        }
        let dx = lu.solve(&resid)?;
        x += dx;
    }

    let u = DVector::from_iterator(n, x.iter().take(n).cloned());
    let mut y = DVector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        y[i] = x[n + r].max(0.0);
    }
    let au = &qp.a * &u;
    let mut s = DVector::zeros(m);
    for i in 0..m {
        if !active.contains(&i) {
            s[i] = (qp.b[i] - au[i]).max(0.0);
        }
    }
    Some((u, s, y))
}

pub fn solve_qp(qp: &StandardQp, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_qp_warm(qp, tol, max_iter, None)
}

/// Solve with an optional warm start `(u, y, rho)`; `rho` is the step size
/// a previous solve of a nearby problem ended with.
pub fn solve_qp_warm(
    qp: &StandardQp,
    tol: f64,
    max_iter: usize,
    warm: Option<(&DVector<f64>, &DVector<f64>, f64)>,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    if tol <= 0.0 {
        return Err(QpError::BadTolerance);
    }
    let n = qp.n_u();
    let m = qp.n_y();
    if m == 0 {
        return Ok(solve_unconstrained(qp));
    }

    // Trivially infeasible constant rows.
    for i in 0..m {
        if qp.a.row(i).amax() <= 1e-14 && qp.b[i] < -1e-12 {
            let mut y = DVector::zeros(m);
            y[i] = 1.0;
            let s = DVector::zeros(m);
            let residuals = kkt_residuals(qp, &DVector::zeros(n), &s, &y);
            return Ok(QpSolution {
                u: DVector::zeros(n),
                s,
                y,
                status: QpStatus::PrimalInfeasible,
                residuals,
                iterations: 0,
                rho: RHO_INIT,
            });
        }
    }

    let (sqp, scaling) = ruiz(qp);
    let mut rho = match warm {
        Some((_, _, r)) if r.is_finite() => r.clamp(RHO_MIN, RHO_MAX),
        _ => RHO_INIT,
    };
    let mut lu = factor_kkt(&sqp, rho);

    // Scaled iterates: u-bar, zeta-bar (constraint values), y-bar.
    let mut ub = match warm {
        Some((u, _, _)) => DVector::from_fn(n, |j, _| u[j] / scaling.d[j]),
        None => DVector::zeros(n),
    };
    let mut yb = match warm {
        Some((_, y, _)) => DVector::from_fn(m, |i, _| y[i] / scaling.e[i]),
        None => DVector::zeros(m),
    };
    let mut zb = &sqp.a * &ub;
    for i in 0..m {
        zb[i] = zb[i].min(sqp.b[i]);
    }

    let mut y_prev_check = yb.clone();
    let mut u_prev_check = ub.clone();
    let mut best: Option<(QpSolution, f64)> = None;
    let mut polish_gate = (1e3 * tol).max(1e-6);

    let unscale = |ub: &DVector<f64>, zb: &DVector<f64>, yb: &DVector<f64>| {
        let u = DVector::from_fn(n, |j, _| ub[j] * scaling.d[j]);
        let y = DVector::from_fn(m, |i, _| yb[i] * scaling.e[i]);
        let s = DVector::from_fn(m, |i, _| ((sqp.b[i] - zb[i]) / scaling.e[i]).max(0.0));
        (u, s, y)
    };

    let mut iter = 0;
    while iter < max_iter {
        iter += 1;

        // KKT solve for (u-tilde, nu).
        let mut rhs = DVector::zeros(n + m);
        for j in 0..n {
            rhs[j] = SIGMA * ub[j] - sqp.c[j];
        }
        for i in 0..m {
            rhs[n + i] = zb[i] - yb[i] / rho;
        }
        let sol = lu.solve(&rhs).expect("KKT factorization is nonsingular");
        let ut = DVector::from_iterator(n, sol.iter().take(n).cloned());
        let nu = DVector::from_iterator(m, sol.iter().skip(n).cloned());
        let zt = DVector::from_fn(m, |i, _| zb[i] + (nu[i] - yb[i]) / rho);

        // Over-relaxed updates with projection onto {zeta <= b}.
        let u_next = DVector::from_fn(n, |j, _| ALPHA * ut[j] + (1.0 - ALPHA) * ub[j]);
        let mut z_next = DVector::zeros(m);
        let mut y_next = DVector::zeros(m);
        for i in 0..m {
            let v = ALPHA * zt[i] + (1.0 - ALPHA) * zb[i] + yb[i] / rho;
            let proj = v.min(sqp.b[i]);
            z_next[i] = proj;
            y_next[i] = rho * (v - proj);
        }
        ub = u_next;
        zb = z_next;
        yb = y_next;

        if iter % CHECK_EVERY == 0 || iter == max_iter {
            let (u, s, y) = unscale(&ub, &zb, &yb);
            let res = kkt_residuals(qp, &u, &s, &y);
            let score = res.primal.max(res.dual);

            if score <= tol {
                return Ok(QpSolution {
                    u,
                    s,
                    y,
                    status: QpStatus::Optimal,
                    residuals: res,
                    iterations: iter,
                    rho,
                });
            }
            // Try the active-set polish once the residual gate opens, and
            // periodically regardless: on LPs the active set settles long
            // before the first-order iteration meets the tolerance.
            if score <= polish_gate || iter % 200 == 0 {
                if let Some((pu, ps, py)) = polish(qp, &u, &s, &y) {
                    let pres = kkt_residuals(qp, &pu, &ps, &py);
                    if pres.max() <= tol {
                        return Ok(QpSolution {
                            u: pu,
                            s: ps,
                            y: py,
                            status: QpStatus::Optimal,
                            residuals: pres,
                            iterations: iter,
                            rho,
                        });
                    }
                }
                if score <= polish_gate {
                    polish_gate *= 0.25;
                }
            }
            if best.as_ref().map_or(true, |(_, b)| score < *b) {
                best = Some((
                    QpSolution {
                        u,
                        s,
                        y,
                        status: QpStatus::MaxIter,
                        residuals: res,
                        iterations: iter,
                        rho,
                    },
                    score,
                ));
            }

            // Primal infeasibility: divergence direction of the duals.
            let dy = DVector::from_fn(m, |i, _| (yb[i] - y_prev_check[i]).max(0.0) * scaling.e[i]);
            let dn = dy.amax();
            if dn > 1e-10 {
                let cert = dy.scale(1.0 / dn);
                let aty = (qp.a.transpose() * &cert).amax();
                let bty = qp.b.dot(&cert);
                if aty <= EPS_INFEAS && bty < -EPS_INFEAS {
                    let s = DVector::zeros(m);
                    let u = DVector::zeros(n);
                    let residuals = kkt_residuals(qp, &u, &s, &cert);
                    return Ok(QpSolution {
                        u,
                        s,
                        y: cert,
                        status: QpStatus::PrimalInfeasible,
                        residuals,
                        iterations: iter,
                        rho,
                    });
                }
            }
            // Dual infeasibility: divergence direction of the primals.
            let du = DVector::from_fn(n, |j, _| (ub[j] - u_prev_check[j]) * scaling.d[j]);
            let un = du.amax();
            if un > 1e-10 {
                let ray = du.scale(1.0 / un);
                let pdx = (&qp.p * &ray).amax();
                let cdx = qp.c.dot(&ray);
                let adx = (&qp.a * &ray).max();
                if pdx <= EPS_INFEAS && cdx < -EPS_INFEAS && adx <= EPS_INFEAS {
                    let s = DVector::zeros(m);
                    let y = DVector::zeros(m);
                    let residuals = kkt_residuals(qp, &ray, &s, &y);
                    return Ok(QpSolution {
                        u: ray,
                        s,
                        y,
                        status: QpStatus::DualInfeasible,
                        residuals,
                        iterations: iter,
                        rho,
                    });
                }
            }
            y_prev_check = yb.clone();
            u_prev_check = ub.clone();
        }

        if iter % ADAPT_EVERY == 0 {
            // Scaled-space residual balance drives the step-size update.
            let au = &sqp.a * &ub;
            let rp = (&au - &zb).amax();
            let rd = (&sqp.p * &ub + sqp.a.transpose() * &yb + &sqp.c).amax();
            let np = rp / au.amax().max(zb.amax()).max(1e-10);
            let nd = rd / (&sqp.p * &ub)
                .amax()
                .max((sqp.a.transpose() * &yb).amax())
                .max(sqp.c.amax())
                .max(1e-10);
            let ratio = (np.max(1e-14) / nd.max(1e-14)).sqrt();
            let rho_new = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
            if rho_new > 5.0 * rho || rho_new < rho / 5.0 {
                rho = rho_new;
                lu = factor_kkt(&sqp, rho);
            }
        }
    }

    let (fallback, _) = best.unwrap_or_else(|| {
        let (u, s, y) = unscale(&ub, &zb, &yb);
        let residuals = kkt_residuals(qp, &u, &s, &y);
        (
            QpSolution {
                u,
                s,
                y,
                status: QpStatus::MaxIter,
                residuals,
                iterations: max_iter,
                rho,
            },
            f64::INFINITY,
        )
    });
    Ok(fallback)
}
