//! Primal active-set solver for small dense convex quadratic programs.
//!
//! Solves `min ½xᵀHx + gᵀx  s.t.  A_eq x = b_eq,  A_in x ≤ b_in`.
//!
//! With `H ≻ 0` the classical primal active-set iteration is used directly,
//! starting from a feasible point (supplied, or found by a phase-1 LP). When
//! `H` is only semidefinite the same core is wrapped in proximal-point outer
//! iterations `x⁺ = argmin f(x) + ρ/2‖x − x_k‖²`, each of which is strictly
//! convex.
//!
//! Multiplier convention: `Hx + g + A_eqᵀν + A_inᵀλ = 0` with `λ ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::lp::find_feasible_point;

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub in_multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Inequality rows in the final working set.
    pub working_set: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible,
}

impl QpOutcome {
    pub fn solution(&self) -> Option<&QpSolution> {
        match self {
            QpOutcome::Optimal(s) => Some(s),
            QpOutcome::Infeasible => None,
        }
    }
}

impl QuadraticProgram {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_in(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x - &self.b_eq)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let ineq = (&self.a_in * x - &self.b_in)
            .iter()
            .fold(0.0_f64, |m, v| m.max(*v));
        eq.max(ineq)
    }

    /// ∞-norm of the KKT residual (stationarity, sign, complementarity and
    /// primal feasibility) of a candidate primal-dual triple.
    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        let stat = &self.h * &sol.x
            + &self.g
            + self.a_eq.transpose() * &sol.eq_multipliers
            + self.a_in.transpose() * &sol.in_multipliers;
        let mut r = stat.amax();
        let slack = &self.b_in - &self.a_in * &sol.x;
        for (l, s) in sol.in_multipliers.iter().zip(slack.iter()) {
            r = r.max(-l).max((l * s).abs());
        }
        r.max(self.max_violation(&sol.x))
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_dim("H rows", n, self.h.nrows())?;
        check_dim("H columns", n, self.h.ncols())?;
        check_dim("A_eq columns", n, self.a_eq.ncols())?;
        check_dim("b_eq", self.a_eq.nrows(), self.b_eq.len())?;
        check_dim("A_in columns", n, self.a_in.ncols())?;
        check_dim("b_in", self.a_in.nrows(), self.b_in.len())?;
        Ok(())
    }

    fn feasibility_scale(&self) -> f64 {
        self.b_eq
            .iter()
            .chain(self.b_in.iter())
            .fold(1.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Greedy row selection: indices of a maximal linearly independent subset of
/// `rows`, scanned in order, given an already accepted orthonormal basis.
struct RowBasis {
    q: Vec<DVector<f64>>,
}

impl RowBasis {
    fn new() -> Self {
        Self { q: Vec::new() }
    }

    /// Adds `row` when it is independent of the current span.
    fn try_add(&mut self, row: DVector<f64>) -> bool {
        let norm0 = row.norm();
        if norm0 == 0.0 {
            return false;
        }
        let mut v = row;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &self.q {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * norm0 {
            return false;
        }
        self.q.push(v / norm);
        true
    }
}

fn is_positive_definite(h: &DMatrix<f64>) -> bool {
    let n = h.nrows();
    if n == 0 {
        return true;
    }
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(h[(i, i)].abs()));
    if max_diag == 0.0 {
        return false;
    }
    match h.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let min_pivot = (0..n).fold(f64::INFINITY, |m, i| m.min(l[(i, i)] * l[(i, i)]));
            min_pivot > 1e-9 * max_diag
        }
        None => false,
    }
}

/// Solves a convex QP. `start`, when given, must be feasible; otherwise a
/// feasible point is obtained from a phase-1 LP.
pub fn solve_qp(qp: &QuadraticProgram, start: Option<&DVector<f64>>) -> Result<QpOutcome> {
    qp.validate()?;
    let tol = 1e-8 * qp.feasibility_scale();
    let x0 = match start {
        Some(x) if qp.max_violation(x) <= tol => x.clone(),
        _ => match find_feasible_point(&qp.a_in, &qp.b_in, &qp.a_eq, &qp.b_eq)? {
            Some(x) => x,
            None => return Ok(QpOutcome::Infeasible),
        },
    };

    if is_positive_definite(&qp.h) {
        let sol = active_set(qp, &qp.h, &qp.g, x0, &[])?;
        return Ok(QpOutcome::Optimal(sol));
    }

    // Proximal-point outer loop for semidefinite Hessians.
    let n = qp.dim();
    let max_diag = (0..n).fold(1.0_f64, |m, i| m.max(qp.h[(i, i)].abs()));
    let rho = 1e-3 * max_diag;
    let mut h_reg = qp.h.clone();
    for i in 0..n {
        h_reg[(i, i)] += rho;
    }
    let mut x = x0;
    let mut working: Vec<usize> = Vec::new();
    let mut total_iters = 0;
    let mut last = None;
    for _ in 0..2000 {
        let g = &qp.g - &x * rho;
        let sol = active_set(qp, &h_reg, &g, x.clone(), &working)?;
        total_iters += sol.iterations;
        let step = (&sol.x - &x).amax();
        x = sol.x.clone();
        working = sol.working_set.clone();
        last = Some(sol);
        if step <= 1e-12 * (1.0 + x.amax()) {
            break;
        }
    }
    let mut sol = last.expect("at least one proximal iteration");
    // Multipliers of the regularised subproblem coincide with the original
    // ones once the proximal term vanishes (x⁺ = x_k).
    sol.objective = qp.objective(&sol.x);
    sol.iterations = total_iters;
    Ok(QpOutcome::Optimal(sol))
}

/// Primal active-set iteration for `½xᵀHx + gᵀx` with `h ≻ 0`, starting from
/// the feasible point `x` and the tentative working set `warm`.
fn active_set(
    qp: &QuadraticProgram,
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    mut x: DVector<f64>,
    warm: &[usize],
) -> Result<QpSolution> {
    let n = qp.dim();
    let m_eq = qp.a_eq.nrows();
    let m_in = qp.a_in.nrows();
    let scale = qp.feasibility_scale();

    let mut basis = RowBasis::new();
    let eq_rows: Vec<usize> = (0..m_eq)
        .filter(|&r| basis.try_add(qp.a_eq.row(r).transpose()))
        .collect();
    let mut working: Vec<usize> = Vec::new();
    for &r in warm {
        let slack = qp.b_in[r] - qp.a_in.row(r).dot(&x.transpose());
        if slack.abs() <= 1e-9 * scale && basis.try_add(qp.a_in.row(r).transpose()) {
            working.push(r);
        }
    }
    let row_norms: Vec<f64> = (0..m_in).map(|r| qp.a_in.row(r).norm()).collect();

    let max_iter = 20 * (n + m_in) + 200;
    // Set after an unblocked full step: `x` already minimises over the
    // current working set and any remaining `p` is rounding noise.
    let mut on_subspace_min = false;
    for iter in 0..max_iter {
        let k = eq_rows.len() + working.len();
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (slot, row) in eq_rows
            .iter()
            .map(|&r| qp.a_eq.row(r))
            .chain(working.iter().map(|&r| qp.a_in.row(r)))
            .enumerate()
        {
            for j in 0..n {
                kkt[(n + slot, j)] = row[j];
                kkt[(j, n + slot)] = row[j];
            }
        }
        let grad = h * &x + g;
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("active-set KKT matrix".into()))?;
        let p = sol.rows(0, n).into_owned();
        let mult = sol.rows(n, k).into_owned();

        if on_subspace_min || p.amax() <= 1e-11 * (1.0 + x.amax()) {
            on_subspace_min = false;
            let grad_scale = 1.0 + grad.amax();
            let worst = working
                .iter()
                .enumerate()
                .map(|(i, _)| (i, mult[eq_rows.len() + i]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, v)) if v < -1e-10 * grad_scale => {
                    working.remove(i);
                    continue;
                }
                _ => {
                    let mut eq_multipliers = DVector::zeros(m_eq);
                    for (slot, &r) in eq_rows.iter().enumerate() {
                        eq_multipliers[r] = mult[slot];
                    }
                    let mut in_multipliers = DVector::zeros(m_in);
                    for (slot, &r) in working.iter().enumerate() {
                        in_multipliers[r] = mult[eq_rows.len() + slot].max(0.0);
                    }
                    let objective = qp.objective(&x);
                    return Ok(QpSolution {
                        x,
                        eq_multipliers,
                        in_multipliers,
                        objective,
                        iterations: iter,
                        working_set: working,
                    });
                }
            }
        }

        let p_norm = p.norm();
        let mut alpha = 1.0;
        let mut blocking = None;
        for r in 0..m_in {
            if working.contains(&r) {
                continue;
            }
            let ap = qp.a_in.row(r).dot(&p.transpose());
            if ap > 1e-13 * row_norms[r] * p_norm {
                let slack = (qp.b_in[r] - qp.a_in.row(r).dot(&x.transpose())).max(0.0);
                let ratio = slack / ap;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(r);
                }
            }
        }
        x.axpy(alpha, &p, 1.0);
        match blocking {
            Some(r) => working.push(r),
            None => on_subspace_min = true,
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: f64::NAN,
        best: x.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_projection(y: &[f64], total: f64) -> QuadraticProgram {
        let n = y.len();
        let h = DMatrix::identity(n, n);
        let g = -DVector::from_column_slice(y);
        let a_eq = DMatrix::from_element(1, n, 1.0);
        let b_eq = DVector::from_element(1, total);
        let a_in = -DMatrix::identity(n, n);
        let b_in = DVector::zeros(n);
        QuadraticProgram::new(h, g)
            .with_eq(a_eq, b_eq)
            .with_in(a_in, b_in)
    }

    #[test]
    fn projects_onto_simplex() {
        let qp = simplex_projection(&[2.0, -1.0], 1.0);
        let sol = solve_qp(&qp, None).unwrap();
        let s = sol.solution().unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
        assert!(qp.kkt_residual(s) < 1e-10);
    }

    #[test]
    fn semidefinite_least_squares() {
        // min (x1 + x2 - 3)^2 subject to x1 <= 1, x2 <= 1: optimum value 1.
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        let g = DVector::from_vec(vec![-6.0, -6.0]);
        let qp = QuadraticProgram::new(h, g)
            .with_in(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]));
        let s = solve_qp(&qp, None).unwrap();
        let s = s.solution().unwrap();
        // objective without the constant 9
        assert!((s.objective + 9.0 - 1.0).abs() < 1e-9, "{}", s.objective);
        assert!(qp.kkt_residual(s) < 1e-7);
    }

    #[test]
    fn infeasible_program() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1)).with_in(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        );
        assert!(matches!(solve_qp(&qp, None).unwrap(), QpOutcome::Infeasible));
    }

    #[test]
    fn degenerate_constraints_at_solution() {
        // Three constraints active at the optimum in 2-D.
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-2.0, -2.0]),
        )
        .with_in(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0, 2.0]),
        );
        let s = solve_qp(&qp, Some(&DVector::zeros(2))).unwrap();
        let s = s.solution().unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!(qp.kkt_residual(s) < 1e-10);
    }
}
