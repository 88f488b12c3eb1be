//! Small dense primal active-set solver for convex quadratic programs
//!
//! ```text
//! minimize  ½ xᵀ H x + cᵀ x   subject to   A x ≤ b
//! ```
//!
//! `H` only needs to be positive semidefinite. When the reduced Hessian has
//! a zero-curvature direction with a nonzero gradient component, the solver
//! moves along that ray until a constraint blocks it, so linear programs
//! (λ = 0 allocations) are handled without regularization. Ties are broken
//! by constraint index, which makes the iteration path deterministic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.c
    }

    /// Max of stationarity, primal infeasibility, dual infeasibility and
    /// complementarity violations.
    pub fn kkt_residual(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        let stationarity = (&g + self.a.tr_mul(mu)).amax();
        let slack = &self.a * x - &self.b;
        let primal = slack.iter().fold(0.0f64, |m, s| m.max(*s));
        let dual = mu.iter().fold(0.0f64, |m, v| m.max(-v));
        let comp = slack
            .iter()
            .zip(mu.iter())
            .fold(0.0f64, |m, (s, v)| m.max((s * v).abs()));
        stationarity.max(primal).max(dual).max(comp)
    }
}

/// Orthonormal basis of the null space of the working-set rows.
fn null_space(rows: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = rows * rows.transpose();
    let Some(inv) = gram.try_inverse() else {
        return DMatrix::zeros(n, 0);
    };
    let proj = DMatrix::identity(n, n) - rows.transpose() * inv * rows;
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn working_rows(a: &DMatrix<f64>, working: &[usize]) -> DMatrix<f64> {
    let n = a.ncols();
    DMatrix::from_fn(working.len(), n, |r, c| a[(working[r], c)])
}

/// Whether row `i` is linearly independent of the working set.
fn independent(a: &DMatrix<f64>, working: &[usize], i: usize) -> bool {
    let row = a.row(i).transpose();
    if working.is_empty() {
        return row.amax() > 1e-12;
    }
    let z = null_space(&working_rows(a, working), a.ncols());
    (z.tr_mul(&row)).amax() > 1e-10 * row.amax().max(1.0)
}

/// Solves the QP from the feasible starting point `x0`.
pub fn solve_qp(p: &QpProblem, x0: DVector<f64>) -> Result<QpSolution> {
    let (n, m) = (p.n(), p.m());
    if p.h.shape() != (n, n) || p.a.shape() != (m, n) {
        return Err(Error::Solver("inconsistent problem dimensions".into()));
    }
    let scale_b = p.b.amax().max(1.0);
    let feas_tol = 1e-12 * scale_b;
    let slack0 = &p.a * &x0 - &p.b;
    if slack0.iter().any(|s| *s > feas_tol) {
        return Err(Error::Solver("starting point is infeasible".into()));
    }

    let h_scale = p.h.amax().max(1e-300);
    let curvature_tol = 1e-12 * h_scale;
    let grad_scale = p.c.amax().max(h_scale).max(1e-300);
    let grad_tol = 1e-14 * grad_scale;

    let mut x = x0;
    let mut working: Vec<usize> = Vec::new();
    for i in 0..m {
        if slack0[i].abs() <= feas_tol && independent(&p.a, &working, i) {
            working.push(i);
        }
    }

    let max_iter = 50 * (n + m).max(1);
    // Set after an unblocked Newton step: x already minimizes over the
    // current working set, and recomputing the step would only return
    // rounding noise that can ping-pong forever.
    let mut at_subspace_min = false;
    for iter in 0..max_iter {
        let g = p.gradient(&x);
        let rows = working_rows(&p.a, &working);
        let z = null_space(&rows, n);

        let mut step = DVector::zeros(n);
        let mut ray = false;
        if z.ncols() > 0 && !at_subspace_min {
            let hr = z.tr_mul(&p.h) * &z;
            let gr = z.tr_mul(&g);
            let eig = SymmetricEigen::new(hr);
            let mut pr = DVector::zeros(z.ncols());
            for i in 0..z.ncols() {
                let v = eig.eigenvectors.column(i);
                let coef = v.dot(&gr);
                if eig.eigenvalues[i] <= curvature_tol && coef.abs() > grad_tol {
                    pr -= v * coef;
                    ray = true;
                }
            }
            if !ray {
                for i in 0..z.ncols() {
                    if eig.eigenvalues[i] > curvature_tol {
                        let v = eig.eigenvectors.column(i);
                        pr -= v * (v.dot(&gr) / eig.eigenvalues[i]);
                    }
                }
            }
            step = &z * pr;
        }

        if step.amax() <= 1e-15 * (1.0 + x.amax()) {
            let mut mu = DVector::zeros(m);
            if working.is_empty() {
                let kkt = p.kkt_residual(&x, &mu);
                return Ok(QpSolution {
                    x,
                    multipliers: mu,
                    iterations: iter,
                    kkt_residual: kkt,
                });
            }
            // A_W^T μ = −g in the least-squares sense
            let gram = &rows * rows.transpose();
            let rhs = -(&rows * &g);
            let mu_w = gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("singular working set".into()))?;
            let (worst, value) =
                mu_w.iter().enumerate().fold(
                    (usize::MAX, 0.0f64),
                    |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
                );
            if worst == usize::MAX || value >= -1e-13 * grad_scale {
                for (k, &i) in working.iter().enumerate() {
                    mu[i] = mu_w[k].max(0.0);
                }
                let kkt = p.kkt_residual(&x, &mu);
                return Ok(QpSolution {
                    x,
                    multipliers: mu,
                    iterations: iter,
                    kkt_residual: kkt,
                });
            }
            working.remove(worst);
            at_subspace_min = false;
            continue;
        }

        let mut alpha = if ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        let ax = &p.a * &x;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let ap = p.a.row(i).dot(&step.transpose());
            if ap > 1e-14 * step.amax() {
                let t = ((p.b[i] - ax[i]) / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        if !alpha.is_finite() {
            return Err(Error::Solver("objective is unbounded below".into()));
        }
        x += step * alpha;
        match blocking {
            Some(i) => working.push(i),
            None => at_subspace_min = !ray,
        }
    }
    Err(Error::Solver(format!("no convergence after {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(h: Vec<f64>, c: Vec<f64>, lo: f64, hi: f64) -> QpProblem {
        let n = c.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(i, i)] = 1.0;
            b[i] = hi;
            a[(n + i, i)] = -1.0;
            b[n + i] = -lo;
        }
        QpProblem {
            h: DMatrix::from_row_slice(n, n, &h),
            c: DVector::from_vec(c),
            a,
            b,
        }
    }

    #[test]
    fn interior_minimum() {
        let p = boxed(vec![2.0, 0.0, 0.0, 2.0], vec![-1.0, -0.5], 0.0, 1.0);
        let s = solve_qp(&p, DVector::zeros(2)).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12);
        assert!((s.x[1] - 0.25).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn linear_program_hits_vertex() {
        let p = boxed(vec![0.0; 4], vec![-1.0, 2.0], 0.0, 1.0);
        let s = solve_qp(&p, DVector::zeros(2)).unwrap();
        assert_eq!(s.x.as_slice(), &[1.0, 0.0]);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn coupled_budget() {
        // max x + y with x + y <= 1.5, boxes [0, 1], mild curvature
        let mut p = boxed(vec![0.2, 0.0, 0.0, 0.2], vec![-1.0, -1.0], 0.0, 1.0);
        p.a = p.a.insert_row(4, 0.0);
        p.a[(4, 0)] = 1.0;
        p.a[(4, 1)] = 1.0;
        p.b = p.b.insert_row(4, 1.5);
        let s = solve_qp(&p, DVector::zeros(2)).unwrap();
        assert!((s.x[0] - 0.75).abs() < 1e-12 && (s.x[1] - 0.75).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn degenerate_budget_vertex_terminates() {
        // Three pairs sharing one budget row; the optimum sits on an edge
        // where rounding used to make the Newton step oscillate.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.932e-5, 2.5948e-5, 3.1885e-5]));
        let c = DVector::from_vec(vec![-1.0448e-3, -1.0271e-3, -8.1925e-4]);
        let kappa = [0.70207, 0.60175, 0.79262];
        let mut a = DMatrix::zeros(13, 3);
        let mut b = DVector::from_element(13, 1.0);
        for v in 0..3 {
            a[(3 * v, v)] = 1.0;
            a[(3 * v + 1, v)] = kappa[v];
            a[(3 * v + 2, v)] = -1.0;
            b[3 * v + 2] = 0.0;
            a[(9, v)] = 1.0;
            a[(10 + v, v)] = kappa[v];
        }
        let p = QpProblem { h, c, a, b };
        let s = solve_qp(&p, DVector::zeros(3)).unwrap();
        assert!((s.x.sum() - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }
}
