//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq` with every variable
//! free. Free variables are split as `x = u − v` with `u, v ≥ 0`, inequality
//! rows receive slacks, and rows whose slack cannot start basic receive an
//! artificial. Pivoting follows Bland's rule in both phases, which rules out
//! cycling on degenerate vertices.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

const COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl LinearProgram {
    /// Program with objective `c` and no constraints yet.
    pub fn new(c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            a_ub: DMatrix::zeros(0, n),
            b_ub: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_ub(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ub = a;
        self.b_ub = b;
        self
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ub = (&self.a_ub * x - &self.b_ub)
            .iter()
            .fold(0.0_f64, |m, v| m.max(*v));
        let eq = (&self.a_eq * x - &self.b_eq)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        ub.max(eq)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_dim("A_ub columns", n, self.a_ub.ncols())?;
        check_dim("b_ub", self.a_ub.nrows(), self.b_ub.len())?;
        check_dim("A_eq columns", n, self.a_eq.ncols())?;
        check_dim("b_eq", self.a_eq.nrows(), self.b_eq.len())?;
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.a_ub.iter().all(|v| v.is_finite())
            && self.b_ub.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("linear program data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn point(&self) -> Option<&DVector<f64>> {
        match self {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }
}

/// Row-major simplex tableau. Row `rows` holds reduced costs, column
/// `width - 1` holds the right-hand side (objective row: minus the value).
struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[r * w..(r + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Runs Bland-rule pivots over columns `< allowed`. Returns `false` when
    /// the objective is unbounded below.
    fn optimize(&mut self, allowed: usize, pivots: &mut usize) -> Result<bool> {
        loop {
            let obj = self.rows;
            let entering = (0..allowed).find(|&j| self.at(obj, j) < -COST_TOL);
            let Some(pc) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                            if ratio < bratio && !tie
                                || tie && self.basis[r] < self.basis[br]
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = best else {
                return Ok(false);
            };
            self.pivot(pr, pc);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::NotConverged {
                    iterations: *pivots,
                    residual: f64::NAN,
                    best: Vec::new(),
                });
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Solves the linear program with the two-phase simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;
    let n = lp.num_vars();
    let m_ub = lp.a_ub.nrows();
    let m_eq = lp.a_eq.nrows();
    let rows = m_ub + m_eq;

    // Columns: u (n) | v (n) | slacks (m_ub) | artificials | rhs
    let n_struct = 2 * n + m_ub;
    let needs_art: Vec<bool> = (0..rows)
        .map(|r| if r < m_ub { lp.b_ub[r] < 0.0 } else { true })
        .collect();
    let n_art = needs_art.iter().filter(|b| **b).count();
    let width = n_struct + n_art + 1;
    let mut t = Tableau {
        rows,
        width,
        data: vec![0.0; (rows + 1) * width],
        basis: vec![0; rows],
    };

    let mut art_col = n_struct;
    for r in 0..rows {
        let (coeffs, b) = if r < m_ub {
            (lp.a_ub.row(r), lp.b_ub[r])
        } else {
            (lp.a_eq.row(r - m_ub), lp.b_eq[r - m_ub])
        };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let base = r * width;
        for j in 0..n {
            t.data[base + j] = sign * coeffs[j];
            t.data[base + n + j] = -sign * coeffs[j];
        }
        if r < m_ub {
            t.data[base + 2 * n + r] = sign;
        }
        t.data[base + width - 1] = sign * b;
        if needs_art[r] {
            t.data[base + art_col] = 1.0;
            t.basis[r] = art_col;
            art_col += 1;
        } else {
            t.basis[r] = 2 * n + r;
        }
    }

    let scale = lp
        .b_ub
        .iter()
        .chain(lp.b_eq.iter())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut pivots = 0;

    if n_art > 0 {
        // Phase 1: minimise the sum of artificials.
        let obj = rows * width;
        for r in 0..rows {
            if t.basis[r] >= n_struct {
                for j in 0..width {
                    if j < n_struct || j == width - 1 {
                        t.data[obj + j] -= t.data[r * width + j];
                    }
                }
            }
        }
        t.optimize(n_struct + n_art, &mut pivots)?;
        let infeasibility = -t.rhs(rows);
        if infeasibility > 1e-9 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis or drop redundant rows.
        let mut r = 0;
        while r < t.rows {
            if t.basis[r] >= n_struct {
                let col = (0..n_struct)
                    .filter(|&j| t.at(r, j).abs() > 1e-9)
                    .max_by(|&a, &b| t.at(r, a).abs().total_cmp(&t.at(r, b).abs()));
                match col {
                    Some(j) => {
                        t.pivot(r, j);
                        r += 1;
                    }
                    None => t.remove_row(r),
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2 objective row.
    let cost = |j: usize| -> f64 {
        if j < n {
            lp.c[j]
        } else if j < 2 * n {
            -lp.c[j - n]
        } else {
            0.0
        }
    };
    let obj = t.rows * width;
    for j in 0..width {
        t.data[obj + j] = 0.0;
    }
    for j in 0..n_struct {
        t.data[obj + j] = cost(j);
    }
    for r in 0..t.rows {
        let cb = cost(t.basis[r]);
        if cb != 0.0 {
            for j in 0..width {
                t.data[obj + j] -= cb * t.data[r * width + j];
            }
        }
    }
    if !t.optimize(n_struct, &mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = DVector::zeros(n);
    for r in 0..t.rows {
        let b = t.basis[r];
        let v = t.rhs(r);
        if b < n {
            x[b] += v;
        } else if b < 2 * n {
            x[b - n] -= v;
        }
    }
    let objective = lp.c.dot(&x);
    Ok(LpOutcome::Optimal { x, objective })
}

/// Any point satisfying the constraints, or `None` when infeasible.
pub fn find_feasible_point(
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let n = a_ub.ncols().max(a_eq.ncols());
    let lp = LinearProgram::new(DVector::zeros(n))
        .with_ub(a_ub.clone(), b_ub.clone())
        .with_eq(a_eq.clone(), b_eq.clone());
    match solve_lp(&lp)? {
        LpOutcome::Optimal { x, .. } => Ok(Some(x)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => unreachable!("zero objective cannot be unbounded"),
    }
}
